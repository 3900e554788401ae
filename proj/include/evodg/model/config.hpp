#pragma once

#include "evodg/util/text.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evodg {

enum class PriorType { categorical, gaussian, uniform, none };

inline std::string to_string(PriorType p) {
    switch (p) {
        case PriorType::categorical: return "categorical";
        case PriorType::gaussian: return "gaussian";
        case PriorType::uniform: return "uniform";
        case PriorType::none: return "none";
    }
    return "?";
}

inline PriorType parse_prior_type(const std::string& s) {
    if (s == "categorical") return PriorType::categorical;
    if (s == "gaussian") return PriorType::gaussian;
    if (s == "uniform") return PriorType::uniform;
    if (s == "none") return PriorType::none;
    throw std::invalid_argument("unknown prior type '" + s + "' (expected categorical, gaussian, uniform or none)");
}

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& msg, int line)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    [[nodiscard]] int line() const { return line_; }

private:
    int line_;
};

/// Hyperparameters for one training run. Defaults are the Circle settings;
/// widths are those of the small dense encoder / decoder used for the 2-D
/// benchmarks.
struct TrainConfig {
    double lambda1 = 1.0;  ///< weight of KL on the static latent
    double lambda2 = 1.0;  ///< weight of KL on the covariate-shift track
    double lambda3 = 1.0;  ///< weight of KL on the concept-shift track
    double alpha = 0.05;   ///< Lipschitz bound of the temporal smoothness hinge
    double lambda_ts = 1.0;
    double lr_main = 5e-5;  ///< static encoder, decoder, classifier
    double lr_dyn = 5e-6;   ///< dynamic encoders and prior networks
    int batch_size = 24;    ///< per domain
    int epochs = 200;
    int d_c = 20;
    int d_w = 20;
    int k_v = 0;  ///< 0 selects the class count
    int rnn_hidden = 64;
    int feature_width = 512;
    int feature_depth = 4;  ///< affine layers in each feature extractor
    double gumbel_temperature = 1.0;
    PriorType prior_type = PriorType::categorical;
    double grad_clip = 10.0;  ///< global-norm clip; 0 disables
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError(m, 0); };
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda_ts < 0) fail("loss weights must be >= 0");
        if (!(alpha > 0)) fail("alpha must be > 0");
        if (!(lr_main > 0) || !(lr_dyn > 0)) fail("learning rates must be > 0");
        if (batch_size < 1) fail("batch_size must be >= 1");
        if (epochs < 0) fail("epochs must be >= 0");
        if (d_c < 1 || d_w < 1 || k_v < 0 || rnn_hidden < 1) fail("latent/hidden sizes must be positive");
        if (feature_width < 1 || feature_depth < 1) fail("feature extractor sizes must be positive");
        if (!(gumbel_temperature > 0)) fail("gumbel_temperature must be > 0");
        if (grad_clip < 0) fail("grad_clip must be >= 0");
    }

    [[nodiscard]] int categories(int classes) const { return k_v > 0 ? k_v : classes; }
};

namespace config_detail {

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
    bool lssae_only;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
    using util::format_shortest;
    using util::parse_double;
    using util::parse_int;
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> t;
        auto dbl = [&t](const char* key, double TrainConfig::*m, bool lssae_only) {
            t.push_back({key, Field{[m](TrainConfig& c, const std::string& v) { c.*m = parse_double(v); },
                                    [m](const TrainConfig& c) { return format_shortest(c.*m); }, lssae_only}});
        };
        auto integer = [&t](const char* key, int TrainConfig::*m, bool lssae_only) {
            t.push_back({key, Field{[m](TrainConfig& c, const std::string& v) {
                                        c.*m = static_cast<int>(parse_int(v));
                                    },
                                    [m](const TrainConfig& c) { return std::to_string(c.*m); }, lssae_only}});
        };
        dbl("lambda1", &TrainConfig::lambda1, true);
        dbl("lambda2", &TrainConfig::lambda2, true);
        dbl("lambda3", &TrainConfig::lambda3, true);
        dbl("alpha", &TrainConfig::alpha, true);
        dbl("lambda_ts", &TrainConfig::lambda_ts, true);
        dbl("lr_main", &TrainConfig::lr_main, false);
        dbl("lr_dyn", &TrainConfig::lr_dyn, true);
        integer("batch_size", &TrainConfig::batch_size, false);
        integer("epochs", &TrainConfig::epochs, false);
        integer("d_c", &TrainConfig::d_c, true);
        integer("d_w", &TrainConfig::d_w, true);
        integer("k_v", &TrainConfig::k_v, true);
        integer("rnn_hidden", &TrainConfig::rnn_hidden, true);
        integer("feature_width", &TrainConfig::feature_width, false);
        integer("feature_depth", &TrainConfig::feature_depth, false);
        dbl("gumbel_temperature", &TrainConfig::gumbel_temperature, true);
        t.push_back({"prior_type",
                     Field{[](TrainConfig& c, const std::string& v) { c.prior_type = parse_prior_type(v); },
                           [](const TrainConfig& c) { return to_string(c.prior_type); }, true}});
        dbl("grad_clip", &TrainConfig::grad_clip, false);
        t.push_back({"seed", Field{[](TrainConfig& c, const std::string& v) {
                                       const long long s = parse_int(v);
                                       if (s < 0) throw std::invalid_argument("seed must be >= 0");
                                       c.seed = static_cast<std::uint64_t>(s);
                                   },
                                   [](const TrainConfig& c) { return std::to_string(c.seed); }, false}});
        return t;
    }();
    return table;
}

inline const Field* find(const std::string& key) {
    for (const auto& [k, f] : fields()) {
        if (k == key) return &f;
    }
    return nullptr;
}

}  // namespace config_detail

/// Applies one `key = value` assignment. Throws ConfigError on unknown keys or bad values.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value, int line = 0) {
    const auto* field = config_detail::find(key);
    if (field == nullptr) throw ConfigError("unknown config key '" + key + "'", line);
    try {
        field->set(cfg, value);
    } catch (const std::exception& e) {
        throw ConfigError("bad value for '" + key + "': " + e.what(), line);
    }
}

[[nodiscard]] inline bool is_lssae_only_key(const std::string& key) {
    const auto* field = config_detail::find(key);
    return field != nullptr && field->lssae_only;
}

struct ParsedConfig {
    TrainConfig config;
    std::vector<std::string> keys;  ///< keys present in the source, in order
};

/// Parses flat `key = value` text; `#` starts a comment. Starts from `base`.
inline ParsedConfig parse_config(std::istream& in, TrainConfig base = {}) {
    ParsedConfig out{std::move(base), {}};
    std::set<std::string> seen;
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw.substr(0, raw.find('#'));
        line = util::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
        const std::string key = util::trim(line.substr(0, eq));
        const std::string value = util::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("missing key", line_no);
        if (value.empty()) throw ConfigError("missing value for '" + key + "'", line_no);
        if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'", line_no);
        set_config_value(out.config, key, value, line_no);
        out.keys.push_back(key);
    }
    try {
        out.config.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(e.what(), 0);
    }
    return out;
}

inline ParsedConfig parse_config_string(const std::string& text, TrainConfig base = {}) {
    std::istringstream in(text);
    return parse_config(in, std::move(base));
}

inline ParsedConfig load_config(const std::string& path, TrainConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path, 0);
    return parse_config(in, std::move(base));
}

/// Canonical `key = value` text for every field (round-trips through parse_config).
inline std::string config_to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : config_detail::fields()) {
        out += key + " = " + field.get(cfg) + "\n";
    }
    return out;
}

}  // namespace evodg
