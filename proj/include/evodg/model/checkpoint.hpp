#pragma once

#include "evodg/model/config.hpp"
#include "evodg/model/erm.hpp"
#include "evodg/model/lssae.hpp"
#include "evodg/util/text.hpp"

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace evodg::model {

enum class Algorithm { lssae, erm };

inline std::string to_string(Algorithm a) { return a == Algorithm::lssae ? "lssae" : "erm"; }

inline Algorithm parse_algorithm(const std::string& s) {
    if (s == "lssae") return Algorithm::lssae;
    if (s == "erm") return Algorithm::erm;
    throw std::invalid_argument("unknown algorithm '" + s + "' (expected lssae or erm)");
}

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// What a trained model needs besides its weights: data shape and the source
/// stamps the prior rollout is anchored to.
struct CheckpointMeta {
    Algorithm algorithm = Algorithm::lssae;
    int data_dim = 0;
    int classes = 0;
    int source_first = 0;
    int source_domains = 0;
    int epoch = 0;  ///< epoch the weights were taken from
    TrainConfig config;
};

inline constexpr const char* kCheckpointMagic = "evodg-checkpoint 1";
inline constexpr const char* kInitScheme = "uniform_fan_in zero_bias";

/// Text layout: header lines, the config echo between `config` / `end_config`,
/// then one `param <name> <rows> <cols>` block per tensor with one row per line.
/// Values use the shortest round-trip decimal form, so reload is bit-exact.
inline void write_checkpoint(std::ostream& out, const CheckpointMeta& meta, const nn::ParamSet& params) {
    out << kCheckpointMagic << '\n';
    out << "algorithm " << to_string(meta.algorithm) << '\n';
    out << "data_dim " << meta.data_dim << '\n';
    out << "classes " << meta.classes << '\n';
    out << "source_first " << meta.source_first << '\n';
    out << "source_domains " << meta.source_domains << '\n';
    out << "epoch " << meta.epoch << '\n';
    out << "init " << kInitScheme << '\n';
    out << "config\n" << config_to_text(meta.config) << "end_config\n";
    for (const auto& p : params) {
        out << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                if (j > 0) out << ' ';
                out << util::format_shortest(p->value(i, j));
            }
            out << '\n';
        }
    }
    out << "end\n";
}

struct CheckpointData {
    CheckpointMeta meta;
    std::vector<std::pair<std::string, nn::Matrix>> tensors;
};

inline CheckpointData read_checkpoint(std::istream& in) {
    CheckpointData data;
    std::string line;
    int line_no = 0;
    auto fail = [&line_no](const std::string& m) { return CheckpointError("line " + std::to_string(line_no) + ": " + m); };
    auto next = [&]() -> std::string {
        if (!std::getline(in, line)) throw fail("unexpected end of checkpoint");
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };
    auto field = [&](const std::string& key) -> std::string {
        const std::string l = next();
        if (l.rfind(key + " ", 0) != 0) throw fail("expected '" + key + "'");
        return l.substr(key.size() + 1);
    };
    auto int_field = [&](const std::string& key) -> int {
        const std::string v = field(key);
        try {
            return static_cast<int>(util::parse_int(v));
        } catch (const std::invalid_argument& e) {
            throw fail(key + ": " + e.what());
        }
    };

    if (next() != kCheckpointMagic) throw fail("not an evodg checkpoint");
    try {
        data.meta.algorithm = parse_algorithm(field("algorithm"));
    } catch (const std::invalid_argument& e) {
        throw fail(e.what());
    }
    data.meta.data_dim = int_field("data_dim");
    data.meta.classes = int_field("classes");
    data.meta.source_first = int_field("source_first");
    data.meta.source_domains = int_field("source_domains");
    data.meta.epoch = int_field("epoch");
    field("init");
    if (next() != "config") throw fail("expected 'config'");
    std::string cfg_text;
    const int cfg_start = line_no;
    while (next() != "end_config") cfg_text += line + '\n';
    try {
        data.meta.config = parse_config_string(cfg_text).config;
    } catch (const ConfigError& e) {
        throw CheckpointError("config block starting at line " + std::to_string(cfg_start + 1) + ": " + e.what());
    }

    while (true) {
        const std::string header = next();
        if (header == "end") break;
        const auto parts = util::split(header, ' ');
        if (parts.size() != 4 || parts[0] != "param") throw fail("expected 'param <name> <rows> <cols>'");
        long long rows = 0;
        long long cols = 0;
        try {
            rows = util::parse_int(parts[2]);
            cols = util::parse_int(parts[3]);
        } catch (const std::invalid_argument& e) {
            throw fail(e.what());
        }
        if (rows < 0 || cols < 0) throw fail("negative tensor shape");
        nn::Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const auto cells = util::split(next(), ' ');
            if (static_cast<long long>(cells.size()) != cols) throw fail("expected " + std::to_string(cols) + " values");
            for (Eigen::Index j = 0; j < cols; ++j) {
                try {
                    m(i, j) = util::parse_double(cells[static_cast<std::size_t>(j)]);
                } catch (const std::invalid_argument& e) {
                    throw fail(e.what());
                }
            }
        }
        data.tensors.emplace_back(parts[1], std::move(m));
    }
    return data;
}

/// Copies tensors into `params`, requiring identical names, order and shapes.
inline void assign_tensors(const CheckpointData& data, nn::ParamSet& params) {
    if (data.tensors.size() != params.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(data.tensors.size()) + " tensors, model expects " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, value] = data.tensors[i];
        nn::Parameter& p = params[i];
        if (name != p.name) throw CheckpointError("tensor " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
        if (value.rows() != p.value.rows() || value.cols() != p.value.cols()) {
            throw CheckpointError("tensor '" + name + "' has shape " + nn::shape_str(value) + ", expected " +
                                  nn::shape_str(p.value));
        }
        p.value = value;
    }
}

/// A trained model of either kind plus its metadata.
struct LoadedModel {
    CheckpointMeta meta;
    std::optional<LssaeModel> lssae;
    std::optional<ErmModel> erm;
};

inline LoadedModel build_model(const CheckpointData& data) {
    LoadedModel m{data.meta, std::nullopt, std::nullopt};
    if (data.meta.algorithm == Algorithm::lssae) {
        m.lssae.emplace(data.meta.data_dim, data.meta.classes, data.meta.config);
        assign_tensors(data, m.lssae->params());
    } else {
        m.erm.emplace(data.meta.data_dim, data.meta.classes, data.meta.config);
        assign_tensors(data, m.erm->params());
    }
    return m;
}

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const nn::ParamSet& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path);
    write_checkpoint(out, meta, params);
    if (!out) throw CheckpointError("write failed for " + path);
}

inline LoadedModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    try {
        return build_model(read_checkpoint(in));
    } catch (const CheckpointError& e) {
        throw CheckpointError(path + ": " + e.what());
    }
}

}  // namespace evodg::model
