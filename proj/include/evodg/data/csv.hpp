#pragma once

#include "evodg/data/domain_sequence.hpp"
#include "evodg/util/text.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace evodg::data {

/// CSV layout: header `domain,label,f0,...,f{d-1}`, one row per sample,
/// rows grouped by ascending contiguous domain index.
inline void write_csv_domains(const DomainSequence& seq, std::ostream& out) {
    out << "domain,label";
    for (int j = 0; j < seq.dim; ++j) out << ",f" << j;
    out << '\n';
    for (const auto& d : seq.domains) {
        for (std::size_t i = 0; i < d.size(); ++i) {
            out << d.time << ',' << d.y[i];
            for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
                out << ',' << util::format_double(d.x(static_cast<Eigen::Index>(i), j));
            }
            out << '\n';
        }
    }
}

inline void save_csv_domains(const DomainSequence& seq, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    write_csv_domains(seq, out);
    if (!out) throw DataError("write failed for " + path);
}

/// Parses the CSV layout above. `classes`, when given, bounds the labels;
/// otherwise the class count is max(label) + 1. Errors carry line numbers.
inline DomainSequence read_csv_domains(std::istream& in, std::optional<int> classes = std::nullopt) {
    std::string line;
    int line_no = 0;
    auto fail = [&line_no](const std::string& msg) -> DataError {
        return DataError("line " + std::to_string(line_no) + ": " + msg);
    };

    if (!std::getline(in, line)) {
        line_no = 1;
        throw fail("empty file, expected header 'domain,label,f0,...'");
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = util::split(line, ',');
    if (header.size() < 3 || util::trim(header[0]) != "domain" || util::trim(header[1]) != "label") {
        throw fail("header must start with 'domain,label' and name at least one feature column");
    }
    for (std::size_t j = 2; j < header.size(); ++j) {
        if (util::trim(header[j]) != "f" + std::to_string(j - 2)) {
            throw fail("expected column 'f" + std::to_string(j - 2) + "', got '" + header[j] + "'");
        }
    }
    const auto dim = static_cast<Eigen::Index>(header.size() - 2);

    DomainSequence seq;
    seq.dim = static_cast<int>(dim);
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    int current = 0;
    bool have_domain = false;
    int max_label = -1;

    auto flush = [&]() {
        Domain d;
        d.time = current;
        d.x.resize(static_cast<Eigen::Index>(rows.size()), dim);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (Eigen::Index j = 0; j < dim; ++j) d.x(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        }
        d.y = labels;
        seq.domains.push_back(std::move(d));
        rows.clear();
        labels.clear();
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (util::trim(line).empty()) continue;
        const auto cells = util::split(line, ',');
        if (cells.size() != header.size()) {
            throw fail("expected " + std::to_string(header.size()) + " columns, found " +
                       std::to_string(cells.size()));
        }
        long long domain = 0;
        long long label = 0;
        std::vector<double> features(static_cast<std::size_t>(dim));
        try {
            domain = util::parse_int(cells[0]);
            label = util::parse_int(cells[1]);
            for (Eigen::Index j = 0; j < dim; ++j) {
                features[static_cast<std::size_t>(j)] = util::parse_double(cells[static_cast<std::size_t>(j) + 2]);
            }
        } catch (const std::invalid_argument& e) {
            throw fail(e.what());
        }
        for (Eigen::Index j = 0; j < dim; ++j) {
            if (!std::isfinite(features[static_cast<std::size_t>(j)])) {
                throw fail("non-finite value in column f" + std::to_string(j));
            }
        }
        if (domain < 0) throw fail("negative domain index " + std::to_string(domain));
        if (label < 0 || (classes && label >= *classes)) {
            throw fail("label " + std::to_string(label) + " out of range" +
                       (classes ? " [0, " + std::to_string(*classes) + ")" : std::string()));
        }
        if (!have_domain) {
            current = static_cast<int>(domain);
            have_domain = true;
        } else if (domain != current) {
            if (domain != current + 1) {
                throw fail("domain indices not contiguous: " + std::to_string(current) + " followed by " +
                           std::to_string(domain));
            }
            flush();
            current = static_cast<int>(domain);
        }
        rows.push_back(std::move(features));
        labels.push_back(static_cast<int>(label));
        max_label = std::max(max_label, static_cast<int>(label));
    }
    if (!have_domain) throw fail("no data rows");
    flush();
    seq.classes = classes ? *classes : max_label + 1;
    seq.validate();
    return seq;
}

inline DomainSequence load_csv_domains(const std::string& path, std::optional<int> classes = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    try {
        return read_csv_domains(in, classes);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace evodg::data
