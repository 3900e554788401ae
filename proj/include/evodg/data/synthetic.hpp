#pragma once

#include "evodg/data/domain_sequence.hpp"
#include "evodg/nn/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace evodg::data {

/// Circle decision rule: label 1 iff (x - x0)^2 + (y - y0)^2 <= r^2.
struct CircleRule {
    double x0 = 0.0;
    double y0 = 0.0;
    double r = 1.0;

    [[nodiscard]] int label(double x, double y) const {
        const double dx = x - x0;
        const double dy = y - y0;
        return dx * dx + dy * dy <= r * r ? 1 : 0;
    }
};

/// Sine decision rule: label 1 iff y <= sin(x).
inline int sine_label(double x, double y) { return y <= std::sin(x) ? 1 : 0; }

inline constexpr double kCircleArcRadius = 1.0;
inline constexpr double kCircleSpread = 0.15;
inline constexpr double kSineStep = 0.3;
inline constexpr double kSineWidth = 1.0;
inline constexpr double kSineYRange = 1.5;

/// Maps every feature into [0, 1] using min/max over the whole sequence and
/// records the constants.
inline void normalize_min_max(DomainSequence& seq) {
    std::vector<double> lo(static_cast<std::size_t>(seq.dim), std::numeric_limits<double>::infinity());
    std::vector<double> hi(static_cast<std::size_t>(seq.dim), -std::numeric_limits<double>::infinity());
    for (const auto& d : seq.domains) {
        for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
            const auto k = static_cast<std::size_t>(j);
            lo[k] = std::min(lo[k], d.x.col(j).minCoeff());
            hi[k] = std::max(hi[k], d.x.col(j).maxCoeff());
        }
    }
    for (auto& d : seq.domains) {
        for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
            const auto k = static_cast<std::size_t>(j);
            const double span = hi[k] > lo[k] ? hi[k] - lo[k] : 1.0;
            d.x.col(j) = (d.x.col(j).array() - lo[k]) / span;
        }
    }
    seq.normalization = {std::move(lo), std::move(hi)};
}

/// Inverse of the stored min-max normalization for one domain's features.
inline Matrix denormalize(const DomainSequence& seq, const Matrix& x) {
    if (seq.normalization.empty()) return x;
    Matrix out = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        const double lo = seq.normalization.lo[k];
        const double hi = seq.normalization.hi[k];
        const double span = hi > lo ? hi - lo : 1.0;
        out.col(j) = x.col(j).array() * span + lo;
    }
    return out;
}

namespace detail {

/// Raw (unnormalized) Circle covariates: domain t is a Gaussian blob centred
/// on the unit half-circle at angle t * pi / (n - 1).
inline std::vector<Matrix> circle_covariates(int n_domains, int n_per_domain, std::uint64_t seed) {
    const nn::Rng root(seed);
    std::vector<Matrix> out;
    for (int t = 0; t < n_domains; ++t) {
        nn::Rng rng = root.fork(static_cast<std::uint64_t>(t));
        const double theta = n_domains > 1 ? t * std::numbers::pi / (n_domains - 1) : 0.0;
        const double cx = kCircleArcRadius * std::cos(theta);
        const double cy = kCircleArcRadius * std::sin(theta);
        Matrix x(n_per_domain, 2);
        for (int i = 0; i < n_per_domain; ++i) {
            x(i, 0) = cx + kCircleSpread * rng.normal();
            x(i, 1) = cy + kCircleSpread * rng.normal();
        }
        out.push_back(std::move(x));
    }
    return out;
}

inline void check_sizes(int n_domains, int n_per_domain) {
    if (n_domains < 1) throw DataError("n_domains must be >= 1");
    if (n_per_domain < 1) throw DataError("n_per_domain must be >= 1");
}

}  // namespace detail

/// Circle with a per-domain boundary schedule (concept shift when it varies).
inline DomainSequence gen_circle_c(int n_domains, int n_per_domain, std::uint64_t seed,
                                   std::span<const CircleRule> schedule) {
    detail::check_sizes(n_domains, n_per_domain);
    if (schedule.size() != static_cast<std::size_t>(n_domains)) {
        throw DataError("schedule has " + std::to_string(schedule.size()) + " entries for " +
                        std::to_string(n_domains) + " domains");
    }
    DomainSequence seq;
    seq.dim = 2;
    seq.classes = 2;
    auto covariates = detail::circle_covariates(n_domains, n_per_domain, seed);
    for (int t = 0; t < n_domains; ++t) {
        Domain d;
        d.time = t;
        d.x = std::move(covariates[static_cast<std::size_t>(t)]);
        const CircleRule& rule = schedule[static_cast<std::size_t>(t)];
        for (int i = 0; i < n_per_domain; ++i) d.y.push_back(rule.label(d.x(i, 0), d.x(i, 1)));
        seq.domains.push_back(std::move(d));
    }
    normalize_min_max(seq);
    return seq;
}

inline DomainSequence gen_circle(int n_domains = 30, int n_per_domain = 100, std::uint64_t seed = 0) {
    const std::vector<CircleRule> fixed(static_cast<std::size_t>(std::max(n_domains, 0)), CircleRule{});
    return gen_circle_c(n_domains, n_per_domain, seed, fixed);
}

/// Default drift: centre x0 moves linearly 0 -> 0.4 and radius 1.0 -> 0.8.
inline std::vector<CircleRule> default_circle_c_schedule(int n_domains) {
    std::vector<CircleRule> out;
    for (int t = 0; t < n_domains; ++t) {
        const double s = n_domains > 1 ? static_cast<double>(t) / (n_domains - 1) : 0.0;
        out.push_back({0.4 * s, 0.0, 1.0 - 0.2 * s});
    }
    return out;
}

inline DomainSequence gen_sine(int n_domains = 24, int n_per_domain = 95, std::uint64_t seed = 0) {
    detail::check_sizes(n_domains, n_per_domain);
    DomainSequence seq;
    seq.dim = 2;
    seq.classes = 2;
    const nn::Rng root(seed);
    for (int t = 0; t < n_domains; ++t) {
        nn::Rng rng = root.fork(static_cast<std::uint64_t>(t));
        Domain d;
        d.time = t;
        d.x.resize(n_per_domain, 2);
        const double left = t * kSineStep;
        for (int i = 0; i < n_per_domain; ++i) {
            d.x(i, 0) = left + kSineWidth * rng.uniform();
            d.x(i, 1) = -kSineYRange + 2.0 * kSineYRange * rng.uniform();
            d.y.push_back(sine_label(d.x(i, 0), d.x(i, 1)));
        }
        seq.domains.push_back(std::move(d));
    }
    normalize_min_max(seq);
    return seq;
}

/// Flips binary labels of every domain at 1-based position >= reversal_start.
inline void reverse_labels(DomainSequence& seq, int reversal_start) {
    if (reversal_start < 1 || reversal_start > static_cast<int>(seq.size())) {
        throw DataError("reversal_start " + std::to_string(reversal_start) + " outside [1, " +
                        std::to_string(seq.size()) + "]");
    }
    if (seq.classes != 2) throw DataError("label reversal needs binary labels");
    for (std::size_t i = static_cast<std::size_t>(reversal_start - 1); i < seq.size(); ++i) {
        for (int& y : seq.domains[i].y) y = 1 - y;
    }
}

inline DomainSequence gen_sine_c(int n_domains = 24, int n_per_domain = 95, std::uint64_t seed = 0,
                                 int reversal_start = 6) {
    if (reversal_start < 1 || reversal_start > n_domains) {
        throw DataError("reversal_start " + std::to_string(reversal_start) + " outside [1, " +
                        std::to_string(n_domains) + "]");
    }
    DomainSequence seq = gen_sine(n_domains, n_per_domain, seed);
    reverse_labels(seq, reversal_start);
    return seq;
}

/// Named benchmark generator with the default sizes.
inline DomainSequence generate_benchmark(const std::string& name, std::uint64_t seed) {
    if (name == "circle") return gen_circle(30, 100, seed);
    if (name == "circle-c") {
        const auto schedule = default_circle_c_schedule(30);
        return gen_circle_c(30, 100, seed, schedule);
    }
    if (name == "sine") return gen_sine(24, 95, seed);
    if (name == "sine-c") return gen_sine_c(24, 95, seed, 6);
    throw DataError("unknown dataset '" + name + "' (expected circle, circle-c, sine or sine-c)");
}

}  // namespace evodg::data
