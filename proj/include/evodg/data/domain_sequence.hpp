#pragma once

#include "evodg/nn/tensor.hpp"
#include "evodg/util/text.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace evodg::data {

using nn::Matrix;

/// One labeled domain at time index `time`.
struct Domain {
    int time = 0;
    Matrix x;            ///< n_t x d
    std::vector<int> y;  ///< n_t labels in [0, classes)

    [[nodiscard]] std::size_t size() const { return y.size(); }
};

/// Per-feature min-max constants used to map raw features into [0, 1].
struct Normalization {
    std::vector<double> lo;
    std::vector<double> hi;

    [[nodiscard]] bool empty() const { return lo.empty(); }
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Time-ordered sequence of labeled domains sharing feature dimension and class count.
struct DomainSequence {
    std::vector<Domain> domains;
    int dim = 0;
    int classes = 0;
    Normalization normalization;

    [[nodiscard]] std::size_t size() const { return domains.size(); }
    [[nodiscard]] bool empty() const { return domains.empty(); }
    [[nodiscard]] const Domain& operator[](std::size_t i) const { return domains[i]; }
    [[nodiscard]] Domain& operator[](std::size_t i) { return domains[i]; }

    [[nodiscard]] std::size_t total_samples() const {
        std::size_t n = 0;
        for (const auto& d : domains) n += d.size();
        return n;
    }

    [[nodiscard]] int first_time() const { return domains.empty() ? 0 : domains.front().time; }

    /// Throws DataError naming the first broken invariant.
    void validate() const {
        if (dim < 1) throw DataError("feature dimension must be >= 1");
        if (classes < 1) throw DataError("class count must be >= 1");
        for (std::size_t i = 0; i < domains.size(); ++i) {
            const Domain& d = domains[i];
            const std::string tag = "domain " + std::to_string(d.time);
            if (i > 0 && d.time != domains[i - 1].time + 1) {
                throw DataError("domain indices not contiguous: " + std::to_string(domains[i - 1].time) +
                                " followed by " + std::to_string(d.time));
            }
            if (d.y.empty()) throw DataError(tag + " is empty");
            if (d.x.rows() != static_cast<Eigen::Index>(d.y.size())) {
                throw DataError(tag + ": " + std::to_string(d.x.rows()) + " rows but " +
                                std::to_string(d.y.size()) + " labels");
            }
            if (d.x.cols() != dim) {
                throw DataError(tag + ": feature width " + std::to_string(d.x.cols()) + " != " +
                                std::to_string(dim));
            }
            for (int label : d.y) {
                if (label < 0 || label >= classes) {
                    throw DataError(tag + ": label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(classes) + ")");
                }
            }
        }
    }
};

/// Explicit source / intermediate / target domain counts.
struct SplitSpec {
    int n_source = 0;
    int n_intermediate = 0;
    int n_target = 0;

    [[nodiscard]] int total() const { return n_source + n_intermediate + n_target; }
};

struct SplitSequences {
    DomainSequence source;
    DomainSequence intermediate;
    DomainSequence target;
};

inline DomainSequence slice(const DomainSequence& seq, std::size_t first, std::size_t count) {
    DomainSequence out;
    out.dim = seq.dim;
    out.classes = seq.classes;
    out.normalization = seq.normalization;
    out.domains.assign(seq.domains.begin() + static_cast<std::ptrdiff_t>(first),
                       seq.domains.begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
}

/// Contiguous prefix / middle / suffix split preserving time indices.
inline SplitSequences split_domains(const DomainSequence& seq, const SplitSpec& spec) {
    if (spec.n_source < 1 || spec.n_intermediate < 1 || spec.n_target < 1) {
        throw DataError("split counts must be positive");
    }
    if (static_cast<std::size_t>(spec.total()) != seq.size()) {
        throw DataError("split " + std::to_string(spec.n_source) + "/" + std::to_string(spec.n_intermediate) +
                        "/" + std::to_string(spec.n_target) + " sums to " + std::to_string(spec.total()) +
                        " but the sequence has " + std::to_string(seq.size()) + " domains");
    }
    const auto s = static_cast<std::size_t>(spec.n_source);
    const auto m = static_cast<std::size_t>(spec.n_intermediate);
    const auto t = static_cast<std::size_t>(spec.n_target);
    return {slice(seq, 0, s), slice(seq, s, m), slice(seq, s + m, t)};
}

/// Fixed counts for the 30- and 24-domain benchmarks; other lengths fall
/// back to the 1/2 : 1/6 : 1/3 ratio.
inline SplitSpec default_split(int n_domains) {
    switch (n_domains) {
        case 30: return {15, 5, 10};
        case 24: return {12, 4, 8};
        case 19: return {10, 3, 6};
        case 34: return {19, 5, 10};
        default: break;
    }
    if (n_domains < 3) throw DataError("need at least 3 domains to split, got " + std::to_string(n_domains));
    const int source = std::max(1, n_domains / 2);
    const int inter = std::max(1, (n_domains + 3) / 6);
    const int target = n_domains - source - inter;
    if (target < 1) throw DataError("cannot split " + std::to_string(n_domains) + " domains");
    return {source, inter, target};
}

/// Parses "S,I,T".
inline SplitSpec parse_split(const std::string& text) {
    const auto parts = util::split(text, ',');
    try {
        if (parts.size() != 3) throw std::invalid_argument("");
        return {static_cast<int>(util::parse_int(parts[0])), static_cast<int>(util::parse_int(parts[1])),
                static_cast<int>(util::parse_int(parts[2]))};
    } catch (const std::invalid_argument&) {
        throw DataError("split must look like 'S,I,T', got '" + text + "'");
    }
}

}  // namespace evodg::data
