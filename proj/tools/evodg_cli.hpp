#pragma once

#include "evodg/data/csv.hpp"
#include "evodg/data/synthetic.hpp"
#include "evodg/eval/evaluation.hpp"
#include "evodg/train/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace evodg::cli {

namespace fs = std::filesystem;
using nn::Matrix;

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3 };

/// Bad flags, unreadable inputs or incompatible files.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& part : util::split(text, ',')) {
        long long v = 0;
        try {
            v = util::parse_int(part);
        } catch (const std::invalid_argument&) {
            throw UsageError("seeds must be a comma-separated list of integers, got '" + text + "'");
        }
        if (v < 0) throw UsageError("seeds must be non-negative, got " + std::to_string(v));
        out.push_back(static_cast<std::uint64_t>(v));
    }
    if (out.empty()) throw UsageError("no seeds given");
    return out;
}

inline model::RolloutMode parse_mode(const std::string& s) {
    if (s == "mean") return model::RolloutMode::mean;
    if (s == "sample") return model::RolloutMode::sample;
    throw UsageError("mode must be 'mean' or 'sample', got '" + s + "'");
}

inline void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

inline void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir);
}

template <class Writer>
void write_file(const fs::path& path, Writer w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path.string());
    w(out);
    if (!out) throw UsageError("write failed for " + path.string());
}

inline data::DomainSequence load_data(const std::string& path) {
    require_file(path, "data file");
    try {
        return data::load_csv_domains(path);
    } catch (const data::DataError& e) {
        throw UsageError(e.what());
    }
}

inline data::SplitSequences split_data(const data::DomainSequence& seq, const std::string& spec) {
    try {
        const data::SplitSpec s = spec.empty() ? data::default_split(static_cast<int>(seq.size())) : data::parse_split(spec);
        return data::split_domains(seq, s);
    } catch (const data::DataError& e) {
        throw UsageError(e.what());
    }
}

inline ParsedConfig load_train_config(const std::string& path) {
    if (path.empty()) return {TrainConfig{}, {}};
    require_file(path, "config file");
    try {
        return load_config(path);
    } catch (const ConfigError& e) {
        throw UsageError(path + ": " + e.what());
    }
}

inline model::LoadedModel load_model(const std::string& path) {
    require_file(path, "checkpoint");
    try {
        return model::load_checkpoint(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

inline void check_compatible(const model::LoadedModel& m, const data::DomainSequence& seq) {
    if (m.meta.data_dim != seq.dim || m.meta.classes < seq.classes) {
        throw UsageError("checkpoint expects feature dim " + std::to_string(m.meta.data_dim) + " and " +
                         std::to_string(m.meta.classes) + " classes, data has feature dim " + std::to_string(seq.dim) +
                         " and " + std::to_string(seq.classes) + " classes");
    }
}

// -- gen-data -------------------------------------------------------------------

inline void write_metadata(const std::string& dataset, std::uint64_t seed, const data::DomainSequence& seq,
                           std::ostream& out) {
    out << "dataset = " << dataset << '\n';
    out << "seed = " << seed << '\n';
    out << "n_domains = " << seq.size() << '\n';
    out << "n_per_domain = " << (seq.empty() ? 0 : seq[0].size()) << '\n';
    out << "dim = " << seq.dim << '\n';
    out << "classes = " << seq.classes << '\n';
    const auto split = data::default_split(static_cast<int>(seq.size()));
    out << "split = " << split.n_source << ',' << split.n_intermediate << ',' << split.n_target << '\n';
    if (dataset == "circle" || dataset == "circle-c") {
        const auto schedule = dataset == "circle" ? std::vector<data::CircleRule>(seq.size(), data::CircleRule{})
                                                  : data::default_circle_c_schedule(static_cast<int>(seq.size()));
        out << "arc_radius = " << util::format_shortest(data::kCircleArcRadius) << '\n';
        out << "spread = " << util::format_shortest(data::kCircleSpread) << '\n';
        for (std::size_t t = 0; t < schedule.size(); ++t) {
            out << "boundary." << t << " = " << util::format_shortest(schedule[t].x0) << ','
                << util::format_shortest(schedule[t].y0) << ',' << util::format_shortest(schedule[t].r) << '\n';
        }
    } else {
        out << "x_step = " << util::format_shortest(data::kSineStep) << '\n';
        out << "x_width = " << util::format_shortest(data::kSineWidth) << '\n';
        out << "y_range = " << util::format_shortest(data::kSineYRange) << '\n';
        if (dataset == "sine-c") out << "reversal_start = 6\n";
    }
    for (int j = 0; j < seq.dim; ++j) {
        const auto k = static_cast<std::size_t>(j);
        out << "normalization.f" << j << " = " << util::format_double(seq.normalization.lo[k]) << ','
            << util::format_double(seq.normalization.hi[k]) << '\n';
    }
}

inline int cmd_gen_data(const std::string& dataset, std::uint64_t seed, const std::string& out_path, std::ostream& log) {
    data::DomainSequence seq;
    try {
        seq = data::generate_benchmark(dataset, seed);
    } catch (const data::DataError& e) {
        throw UsageError(e.what());
    }
    const fs::path path(out_path);
    if (path.has_parent_path()) make_dir(path.parent_path().string());
    write_file(path, [&](std::ostream& o) { data::write_csv_domains(seq, o); });
    write_file(path.string() + ".meta", [&](std::ostream& o) { write_metadata(dataset, seed, seq, o); });
    log << "wrote " << seq.total_samples() << " rows over " << seq.size() << " domains to " << out_path << '\n';
    return kOk;
}

// -- train ----------------------------------------------------------------------

struct TrainOutputs {
    double best_val = 0;
    int best_epoch = 0;
};

template <class Result>
void write_train_outputs(const fs::path& dir, const Result& r, const model::CheckpointMeta& best_meta,
                         const model::CheckpointMeta& final_meta) {
    write_file(dir / "checkpoint_best.txt", [&](std::ostream& o) { model::write_checkpoint(o, best_meta, r.best_model.params()); });
    write_file(dir / "checkpoint_final.txt", [&](std::ostream& o) { model::write_checkpoint(o, final_meta, r.final_model.params()); });
    write_file(dir / "run_record.csv", [&](std::ostream& o) { train::write_run_record_csv(r.record, o); });
    write_file(dir / "config_echo.cfg", [&](std::ostream& o) { o << r.record.config_echo; });
}

inline int cmd_train(const std::string& algo_name, const std::string& data_path, const std::string& config_path,
                     const std::string& out_dir, const std::string& split_spec, std::optional<int> epochs,
                     std::optional<std::uint64_t> seed, std::ostream& log) {
    model::Algorithm algo{};
    try {
        algo = model::parse_algorithm(algo_name);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    ParsedConfig parsed = load_train_config(config_path);
    TrainConfig& cfg = parsed.config;
    if (epochs) cfg.epochs = *epochs;
    if (seed) cfg.seed = *seed;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const auto seq = load_data(data_path);
    const auto split = split_data(seq, split_spec);
    if (algo == model::Algorithm::lssae && split.source.size() < 2) throw UsageError("LSSAE needs at least 2 source domains");
    make_dir(out_dir);
    if (algo == model::Algorithm::erm) {
        for (const auto& key : parsed.keys) {
            if (is_lssae_only_key(key)) log << "warning: '" << key << "' has no effect on erm\n";
        }
    }
    auto progress = [&log](const train::EpochRecord& e) {
        log << "epoch " << e.epoch << " total " << util::format_shortest(e.total) << " val_acc "
            << util::format_shortest(e.val_acc) << '\n';
    };
    const fs::path dir(out_dir);
    if (algo == model::Algorithm::lssae) {
        const auto r = train::train_lssae(split.source, split.intermediate, cfg, progress);
        write_train_outputs(dir, r, train::lssae_meta(split.source, cfg, r.best_epoch),
                            train::lssae_meta(split.source, cfg, cfg.epochs));
        log << "best epoch " << r.best_epoch << ", " << util::format_shortest(r.record.wall_seconds) << " s\n";
    } else {
        const auto r = train::train_erm(split.source, split.intermediate, cfg, progress);
        write_train_outputs(dir, r, train::erm_meta(split.source, cfg, r.best_epoch),
                            train::erm_meta(split.source, cfg, cfg.epochs));
        log << "best epoch " << r.best_epoch << ", " << util::format_shortest(r.record.wall_seconds) << " s\n";
    }
    return kOk;
}

// -- eval -----------------------------------------------------------------------

inline int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& split_spec,
                    const std::string& seeds_text, const std::string& mode_text, const std::string& out_dir,
                    std::ostream& log) {
    const auto seeds = parse_seeds(seeds_text);
    const auto mode = parse_mode(mode_text);
    const auto m = load_model(ckpt);
    const auto seq = load_data(data_path);
    check_compatible(m, seq);
    const auto split = split_data(seq, split_spec);
    make_dir(out_dir);
    eval::AccuracyTable table;
    try {
        table = eval::evaluate_targets(m, split.target, seeds, mode);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const fs::path dir(out_dir);
    write_file(dir / "accuracy.csv", [&](std::ostream& o) { eval::write_accuracy_csv(table, o); });
    write_file(dir / "summary.csv", [&](std::ostream& o) { eval::write_accuracy_summary(table, o); });
    log << table.algorithm << " mean target accuracy " << util::format_shortest(table.mean) << " (mode "
        << table.mode << ")\n";
    return kOk;
}

// -- boundary -------------------------------------------------------------------

inline eval::RasterBounds parse_bounds(const std::string& text) {
    const auto parts = util::split(text, ',');
    try {
        if (parts.size() != 4) throw std::invalid_argument("");
        eval::RasterBounds b{util::parse_double(parts[0]), util::parse_double(parts[1]), util::parse_double(parts[2]),
                             util::parse_double(parts[3])};
        if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) throw std::invalid_argument("");
        return b;
    } catch (const std::invalid_argument&) {
        throw UsageError("bounds must look like 'xmin,xmax,ymin,ymax' with min < max, got '" + text + "'");
    }
}

inline int cmd_boundary(const std::string& ckpt, const std::string& data_path, const std::string& split_spec,
                        const std::string& bounds_text, int resolution, const std::string& out_dir, std::ostream& log) {
    if (resolution < 1) throw UsageError("resolution must be >= 1");
    const auto bounds = parse_bounds(bounds_text);
    const auto m = load_model(ckpt);
    if (m.meta.data_dim != 2) {
        throw UsageError("boundary export needs 2-D features, checkpoint has " + std::to_string(m.meta.data_dim));
    }
    const auto seq = load_data(data_path);
    check_compatible(m, seq);
    const auto split = split_data(seq, split_spec);
    make_dir(out_dir);
    const fs::path dir(out_dir);
    for (const auto& d : split.target.domains) {
        eval::BoundaryRaster r;
        try {
            r = eval::boundary_raster(m, d.time, bounds, resolution, resolution);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        const std::string stem = "boundary_t" + std::to_string(d.time);
        write_file(dir / (stem + ".csv"), [&](std::ostream& o) { eval::write_raster_csv(r, o); });
        write_file(dir / (stem + ".pgm"), [&](std::ostream& o) { eval::write_raster_pgm(r, m.meta.classes, o); });
    }
    log << "wrote " << split.target.size() << " rasters to " << out_dir << '\n';
    return kOk;
}

// -- generate -------------------------------------------------------------------

inline int cmd_generate(const std::string& ckpt, const std::string& data_path, const std::string& split_spec,
                        int extra_steps, const std::string& mode_text, std::uint64_t seed, int variations,
                        const std::string& out_dir, std::ostream& log) {
    const auto mode = parse_mode(mode_text);
    if (extra_steps < 0) throw UsageError("extra steps must be >= 0");
    if (variations < 1) throw UsageError("variations must be >= 1");
    const auto m = load_model(ckpt);
    if (!m.lssae) throw UsageError("generate needs an lssae checkpoint");
    const auto seq = load_data(data_path);
    check_compatible(m, seq);
    const auto split = split_data(seq, split_spec);
    make_dir(out_dir);
    const fs::path dir(out_dir);
    const auto& model = *m.lssae;
    nn::Rng rng = nn::Rng(seed).fork(0x6e);

    const auto recon = eval::reconstruct_sequence(model, split.source);
    write_file(dir / "reconstruction.csv", [&](std::ostream& o) { eval::write_sequence_csv(recon, split.source.first_time(), o); });

    const Matrix held = eval::static_codes(model, split.source[0].x.topRows(1));
    const int steps = static_cast<int>(split.source.size()) + extra_steps;
    nn::Rng gen_rng = rng.fork(1);
    const auto generated = eval::generate_sequence(model, held, steps, mode, gen_rng);
    write_file(dir / "generated.csv", [&](std::ostream& o) { eval::write_sequence_csv(generated, m.meta.source_first, o); });

    nn::Rng code_rng = rng.fork(2);
    nn::Rng vary_rng = rng.fork(3);
    const Matrix varied = eval::vary_static(model, eval::draw_static_codes(model, variations, code_rng), mode, vary_rng);
    write_file(dir / "vary_static.csv", [&](std::ostream& o) {
        eval::write_sequence_csv(std::vector<Matrix>{varied}, m.meta.source_first, o);
    });
    const auto mse = eval::feature_mse(recon, split.source);
    const auto var = eval::feature_variance(split.source);
    for (std::size_t j = 0; j < mse.size(); ++j) {
        log << "f" << j << " reconstruction mse " << util::format_shortest(mse[j]) << " (feature variance "
            << util::format_shortest(var[j]) << ")\n";
    }
    return kOk;
}

// -- ablate ---------------------------------------------------------------------

/// Trains LSSAE with `cfg` and returns its best-validation model's mean target
/// accuracy plus the run record.
inline std::pair<double, train::RunRecord> run_lssae(const data::SplitSequences& split, const TrainConfig& cfg) {
    auto r = train::train_lssae(split.source, split.intermediate, cfg);
    model::LoadedModel m{train::lssae_meta(split.source, cfg, r.best_epoch), std::move(r.best_model), std::nullopt};
    const auto table = eval::evaluate_targets(m, split.target, {0}, model::RolloutMode::mean);
    return {table.mean, std::move(r.record)};
}

inline int cmd_ablate(const std::string& which, const std::string& data_path, const std::string& config_path,
                      const std::string& split_spec, const std::string& seeds_text, std::optional<int> epochs,
                      const std::string& out_dir, std::ostream& log) {
    if (which != "prior" && which != "ts") throw UsageError("ablate target must be 'prior' or 'ts', got '" + which + "'");
    const auto seeds = parse_seeds(seeds_text);
    TrainConfig base = load_train_config(config_path).config;
    if (epochs) base.epochs = *epochs;
    try {
        base.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const auto seq = load_data(data_path);
    const auto split = split_data(seq, split_spec);
    if (split.source.size() < 2) throw UsageError("LSSAE needs at least 2 source domains");
    make_dir(out_dir);
    const fs::path dir(out_dir);

    std::ostringstream runs;
    if (which == "prior") {
        runs << "prior_type,seed,accuracy\n";
        std::ostringstream table;
        table << "prior_type,accuracy,std_error\n";
        for (PriorType p : {PriorType::categorical, PriorType::gaussian, PriorType::uniform, PriorType::none}) {
            std::vector<double> accs;
            for (std::uint64_t s : seeds) {
                TrainConfig cfg = base;
                cfg.prior_type = p;
                cfg.seed = s;
                const double acc = run_lssae(split, cfg).first;
                accs.push_back(acc);
                runs << to_string(p) << ',' << s << ',' << util::format_double(acc) << '\n';
                log << to_string(p) << " seed " << s << " accuracy " << util::format_shortest(acc) << '\n';
            }
            double mean = 0;
            for (double a : accs) mean += a / static_cast<double>(accs.size());
            table << to_string(p) << ',' << util::format_double(mean) << ',' << util::format_double(eval::standard_error(accs))
                  << '\n';
        }
        write_file(dir / "ablate_prior.csv", [&](std::ostream& o) { o << table.str(); });
        write_file(dir / "ablate_prior_runs.csv", [&](std::ostream& o) { o << runs.str(); });
    } else {
        runs << "setting,seed,Var,Acc\n";
        std::ostringstream table;
        table << "setting,Var,Acc\n";
        for (const bool with_ts : {true, false}) {
            const char* name = with_ts ? "with_ts" : "without_ts";
            double var_sum = 0;
            double acc_sum = 0;
            for (std::uint64_t s : seeds) {
                TrainConfig cfg = base;
                cfg.seed = s;
                if (!with_ts) cfg.lambda_ts = 0.0;
                else if (cfg.lambda_ts == 0.0) cfg.lambda_ts = 1.0;
                const auto [acc, record] = run_lssae(split, cfg);
                const double var = record.tail_val_variance(5);
                var_sum += var;
                acc_sum += acc;
                runs << name << ',' << s << ',' << util::format_double(var) << ',' << util::format_double(acc) << '\n';
                log << name << " seed " << s << " Var " << util::format_shortest(var) << " Acc "
                    << util::format_shortest(acc) << '\n';
            }
            const auto n = static_cast<double>(seeds.size());
            table << name << ',' << util::format_double(var_sum / n) << ',' << util::format_double(acc_sum / n) << '\n';
        }
        write_file(dir / "ablate_ts.csv", [&](std::ostream& o) { o << table.str(); });
        write_file(dir / "ablate_ts_runs.csv", [&](std::ostream& o) { o << runs.str(); });
    }
    return kOk;
}

// -- entry point ----------------------------------------------------------------

/// Parses `argv` and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Evolving-domain generalization with sequential latent variables"};
    app.require_subcommand(1);

    std::string dataset;
    std::uint64_t seed = 0;
    std::string out_path;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic domain sequence as CSV");
    gen->add_option("--dataset", dataset, "circle, circle-c, sine or sine-c")->required();
    gen->add_option("--seed", seed, "Generator seed");
    gen->add_option("--out", out_path, "Output CSV path")->required();

    std::string algo;
    std::string data_path;
    std::string config_path;
    std::string out_dir;
    std::string split_spec;
    std::optional<int> epochs;
    std::optional<std::uint64_t> train_seed;
    auto* tr = app.add_subcommand("train", "Train an LSSAE or ERM model");
    tr->add_option("--algo", algo, "lssae or erm")->required();
    tr->add_option("--data", data_path, "Domain CSV")->required();
    tr->add_option("--config", config_path, "key = value config file");
    tr->add_option("--out", out_dir, "Output directory")->required();
    tr->add_option("--split", split_spec, "Source,intermediate,target domain counts");
    tr->add_option("--epochs", epochs, "Override the configured epoch count");
    tr->add_option("--seed", train_seed, "Override the configured seed");

    std::string ckpt;
    std::string seeds_text = "0,1,2";
    std::string mode_text = "mean";
    auto* ev = app.add_subcommand("eval", "Per-target-domain accuracy of a checkpoint");
    ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    ev->add_option("--data", data_path, "Domain CSV")->required();
    ev->add_option("--split", split_spec, "Source,intermediate,target domain counts");
    ev->add_option("--seeds", seeds_text, "Comma-separated evaluation seeds");
    ev->add_option("--mode", mode_text, "mean or sample");
    ev->add_option("--out", out_dir, "Output directory")->required();

    std::string bounds_text = "0,1,0,1";
    int resolution = 200;
    auto* bd = app.add_subcommand("boundary", "Decision-boundary rasters for each target stamp");
    bd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    bd->add_option("--data", data_path, "Domain CSV")->required();
    bd->add_option("--split", split_spec, "Source,intermediate,target domain counts");
    bd->add_option("--bounds", bounds_text, "xmin,xmax,ymin,ymax");
    bd->add_option("--resolution", resolution, "Cells per axis");
    bd->add_option("--out", out_dir, "Output directory")->required();

    int extra_steps = 0;
    int variations = 16;
    std::uint64_t gen_seed = 0;
    auto* ge = app.add_subcommand("generate", "Reconstructed and generated sequences");
    ge->add_option("--checkpoint", ckpt, "LSSAE checkpoint")->required();
    ge->add_option("--data", data_path, "Domain CSV")->required();
    ge->add_option("--split", split_spec, "Source,intermediate,target domain counts");
    ge->add_option("--extra-steps", extra_steps, "Stamps generated past the source horizon");
    ge->add_option("--mode", mode_text, "mean or sample");
    ge->add_option("--seed", gen_seed, "Sampling seed");
    ge->add_option("--variations", variations, "Static codes drawn for the vary-static output");
    ge->add_option("--out", out_dir, "Output directory")->required();

    std::string which;
    auto* ab = app.add_subcommand("ablate", "Prior-type or smoothness-penalty ablation");
    ab->add_option("which", which, "prior or ts")->required();
    ab->add_option("--data", data_path, "Domain CSV")->required();
    ab->add_option("--config", config_path, "key = value config file");
    ab->add_option("--split", split_spec, "Source,intermediate,target domain counts");
    ab->add_option("--seeds", seeds_text, "Comma-separated training seeds");
    ab->add_option("--epochs", epochs, "Override the configured epoch count");
    ab->add_option("--out", out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(dataset, seed, out_path, out);
        if (tr->parsed()) return cmd_train(algo, data_path, config_path, out_dir, split_spec, epochs, train_seed, out);
        if (ev->parsed()) return cmd_eval(ckpt, data_path, split_spec, seeds_text, mode_text, out_dir, out);
        if (bd->parsed()) return cmd_boundary(ckpt, data_path, split_spec, bounds_text, resolution, out_dir, out);
        if (ge->parsed()) {
            return cmd_generate(ckpt, data_path, split_spec, extra_steps, mode_text, gen_seed, variations, out_dir, out);
        }
        if (ab->parsed()) return cmd_ablate(which, data_path, config_path, split_spec, seeds_text, epochs, out_dir, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const train::NumericalFailure& e) {
        err << "error: " << e.what() << '\n';
        return kNumerical;
    } catch (const nn::NonFiniteError& e) {
        err << "error: " << e.what() << '\n';
        return kNumerical;
    }
    return kUsage;
}

}  // namespace evodg::cli
