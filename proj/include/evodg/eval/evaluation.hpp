#pragma once

#include "evodg/data/domain_sequence.hpp"
#include "evodg/eval/inference.hpp"
#include "evodg/model/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evodg::eval {

// -- accuracy tables ----------------------------------------------------------

/// Per-target-domain accuracy (%) for several evaluation seeds.
struct AccuracyTable {
    std::string algorithm;
    std::string mode;
    std::vector<std::uint64_t> seeds;
    std::vector<int> domains;
    std::vector<std::vector<double>> per_seed;  ///< [seed][domain]
    std::vector<double> domain_mean;            ///< across seeds
    std::vector<double> domain_se;              ///< standard error across seeds
    std::vector<double> seed_mean;              ///< mean over domains, per seed
    double mean = 0;                            ///< mean of domain_mean
    double mean_se = 0;                         ///< standard error of seed_mean
};

inline double standard_error(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

/// `predictions[s][t]` holds seed s's predicted classes for domain t.
inline AccuracyTable accuracy_table(const std::string& algorithm, const std::vector<std::uint64_t>& seeds,
                                    const std::vector<int>& domains,
                                    const std::vector<std::vector<std::vector<int>>>& predictions,
                                    const std::vector<std::vector<int>>& labels) {
    if (predictions.size() != seeds.size()) throw std::invalid_argument("accuracy_table: one prediction set per seed required");
    if (labels.size() != domains.size()) throw std::invalid_argument("accuracy_table: one label list per domain required");
    if (domains.empty()) throw std::invalid_argument("accuracy_table: no domains");
    AccuracyTable t;
    t.algorithm = algorithm;
    t.seeds = seeds;
    t.domains = domains;
    for (const auto& per_domain : predictions) {
        if (per_domain.size() != domains.size()) {
            throw std::invalid_argument("accuracy_table: " + std::to_string(per_domain.size()) + " prediction lists for " +
                                        std::to_string(domains.size()) + " domains");
        }
        std::vector<double> row;
        for (std::size_t d = 0; d < domains.size(); ++d) row.push_back(accuracy_percent(per_domain[d], labels[d]));
        double m = 0;
        for (double a : row) m += a;
        t.seed_mean.push_back(m / static_cast<double>(row.size()));
        t.per_seed.push_back(std::move(row));
    }
    for (std::size_t d = 0; d < domains.size(); ++d) {
        std::vector<double> col;
        for (const auto& row : t.per_seed) col.push_back(row[d]);
        double m = 0;
        for (double a : col) m += a;
        t.domain_mean.push_back(col.empty() ? 0.0 : m / static_cast<double>(col.size()));
        t.domain_se.push_back(standard_error(col));
    }
    double m = 0;
    for (double a : t.domain_mean) m += a;
    t.mean = m / static_cast<double>(t.domain_mean.size());
    t.mean_se = standard_error(t.seed_mean);
    return t;
}

/// One row per (seed, domain): `algorithm,seed,domain_t,accuracy`.
inline void write_accuracy_csv(const AccuracyTable& t, std::ostream& out) {
    out << "algorithm,seed,domain_t,accuracy\n";
    for (std::size_t s = 0; s < t.seeds.size(); ++s) {
        for (std::size_t d = 0; d < t.domains.size(); ++d) {
            out << t.algorithm << ',' << t.seeds[s] << ',' << t.domains[d] << ','
                << util::format_double(t.per_seed[s][d]) << '\n';
        }
    }
}

/// Per-domain mean and standard error across seeds, then an `all` row.
inline void write_accuracy_summary(const AccuracyTable& t, std::ostream& out) {
    out << "algorithm,mode,domain_t,mean,std_error\n";
    for (std::size_t d = 0; d < t.domains.size(); ++d) {
        out << t.algorithm << ',' << t.mode << ',' << t.domains[d] << ',' << util::format_double(t.domain_mean[d]) << ','
            << util::format_double(t.domain_se[d]) << '\n';
    }
    out << t.algorithm << ',' << t.mode << ",all," << util::format_double(t.mean) << ','
        << util::format_double(t.mean_se) << '\n';
}

/// Evaluates a model on `target` for every seed. Labels are only read after
/// prediction, to score.
inline AccuracyTable evaluate_targets(const model::LoadedModel& m, const data::DomainSequence& target,
                                      const std::vector<std::uint64_t>& seeds, RolloutMode mode) {
    const auto features = strip_labels(target);
    std::vector<std::vector<std::vector<int>>> predictions;
    for (std::uint64_t s : seeds) {
        nn::Rng rng = nn::Rng(s).fork(0xe7a1);
        predictions.push_back(predict_target(m, features, mode, rng));
    }
    std::vector<int> stamps;
    std::vector<std::vector<int>> labels;
    for (const auto& d : target.domains) {
        stamps.push_back(d.time);
        labels.push_back(d.y);
    }
    AccuracyTable t = accuracy_table(model::to_string(m.meta.algorithm), seeds, stamps, predictions, labels);
    t.mode = m.lssae ? (mode == RolloutMode::mean ? "mean" : "sample") : "none";
    return t;
}

// -- decision-boundary rasters -------------------------------------------------

struct RasterBounds {
    double x_min = 0.0;
    double x_max = 1.0;
    double y_min = 0.0;
    double y_max = 1.0;
};

/// Predicted class at every cell centre; cell (i, j) is column i, row j with
/// j counting upward from y_min. Stored row-major by j.
struct BoundaryRaster {
    RasterBounds bounds;
    int nx = 0;
    int ny = 0;
    int stamp = 0;
    std::vector<int> cls;

    [[nodiscard]] double cell_x(int i) const { return bounds.x_min + (i + 0.5) * (bounds.x_max - bounds.x_min) / nx; }
    [[nodiscard]] double cell_y(int j) const { return bounds.y_min + (j + 0.5) * (bounds.y_max - bounds.y_min) / ny; }
    [[nodiscard]] int at(int i, int j) const { return cls[static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i)]; }
    [[nodiscard]] std::size_t size() const { return cls.size(); }
};

inline Matrix raster_points(const RasterBounds& b, int nx, int ny) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("raster resolution must be positive");
    if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) throw std::invalid_argument("raster bounds must be non-empty");
    BoundaryRaster r{b, nx, ny, 0, {}};
    Matrix pts(static_cast<Eigen::Index>(nx) * ny, 2);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const Eigen::Index row = static_cast<Eigen::Index>(j) * nx + i;
            pts(row, 0) = r.cell_x(i);
            pts(row, 1) = r.cell_y(j);
        }
    }
    return pts;
}

/// Mean-mode predictions over the grid for time stamp `stamp`.
inline BoundaryRaster boundary_raster(const model::LoadedModel& m, int stamp, const RasterBounds& bounds = {},
                                      int nx = 200, int ny = 200) {
    if (m.meta.data_dim != 2) {
        throw std::invalid_argument("boundary raster needs 2-D features, model has " + std::to_string(m.meta.data_dim));
    }
    const std::vector<StampedFeatures> grid{{stamp, raster_points(bounds, nx, ny)}};
    nn::Rng unused(0);
    BoundaryRaster r{bounds, nx, ny, stamp, {}};
    r.cls = predict_target(m, grid, RolloutMode::mean, unused).front();
    return r;
}

inline void write_raster_csv(const BoundaryRaster& r, std::ostream& out) {
    out << "x,y,class\n";
    for (int j = 0; j < r.ny; ++j) {
        for (int i = 0; i < r.nx; ++i) {
            out << util::format_double(r.cell_x(i)) << ',' << util::format_double(r.cell_y(j)) << ',' << r.at(i, j) << '\n';
        }
    }
}

/// Binary 8-bit PGM, top row = largest y; gray = class * 255 / (classes - 1).
inline void write_raster_pgm(const BoundaryRaster& r, int classes, std::ostream& out) {
    out << "P5\n" << r.nx << ' ' << r.ny << "\n255\n";
    for (int j = r.ny - 1; j >= 0; --j) {
        for (int i = 0; i < r.nx; ++i) {
            const int c = r.at(i, j);
            const int gray = classes > 1 ? c * 255 / (classes - 1) : 0;
            out.put(static_cast<char>(static_cast<unsigned char>(gray)));
        }
    }
}

// -- reconstruction and generation ---------------------------------------------

/// Posterior-mean reconstruction of every domain. The covariate-track state is
/// carried row-wise across domains; shorter domains reuse rows cyclically.
inline std::vector<Matrix> reconstruct_sequence(const model::LssaeModel& m, const data::DomainSequence& seq) {
    std::vector<Matrix> out;
    if (seq.empty()) return out;
    Eigen::Index rows = 0;
    for (const auto& d : seq.domains) rows = std::max(rows, d.x.rows());
    nn::Tape tape(false);
    nn::StateVars state = nn::StateVars::from(tape, m.zero_state(rows));
    for (const auto& d : seq.domains) {
        Matrix x(rows, d.x.cols());
        for (Eigen::Index i = 0; i < rows; ++i) x.row(i) = d.x.row(i % d.x.rows());
        const nn::Var xv = tape.constant(x);
        const auto q_c = m.encode_static(tape, xv);
        auto [q_w, next] = m.encode_dynamic_w(tape, xv, state);
        state = next;
        out.push_back(m.decode(tape, q_c.mean, q_w.mean).value().topRows(d.x.rows()));
    }
    return out;
}

inline double mean_squared_error(const std::vector<Matrix>& a, const data::DomainSequence& seq) {
    double ss = 0;
    double n = 0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        ss += (a[t] - seq[t].x).squaredNorm();
        n += static_cast<double>(seq[t].x.size());
    }
    return ss / n;
}

/// Variance of each feature over all samples of the sequence.
inline std::vector<double> feature_variance(const data::DomainSequence& seq) {
    std::vector<double> mean(static_cast<std::size_t>(seq.dim), 0.0);
    std::vector<double> var(static_cast<std::size_t>(seq.dim), 0.0);
    const auto n = static_cast<double>(seq.total_samples());
    for (const auto& d : seq.domains) {
        for (Eigen::Index j = 0; j < d.x.cols(); ++j) mean[static_cast<std::size_t>(j)] += d.x.col(j).sum() / n;
    }
    for (const auto& d : seq.domains) {
        for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
            var[static_cast<std::size_t>(j)] += (d.x.col(j).array() - mean[static_cast<std::size_t>(j)]).square().sum() / n;
        }
    }
    return var;
}

/// Per-feature reconstruction MSE over the sequence.
inline std::vector<double> feature_mse(const std::vector<Matrix>& recon, const data::DomainSequence& seq) {
    std::vector<double> mse(static_cast<std::size_t>(seq.dim), 0.0);
    const auto n = static_cast<double>(seq.total_samples());
    for (std::size_t t = 0; t < seq.size(); ++t) {
        for (Eigen::Index j = 0; j < seq.dim; ++j) {
            mse[static_cast<std::size_t>(j)] += (recon[t].col(j) - seq[t].x.col(j)).squaredNorm() / n;
        }
    }
    return mse;
}

/// Posterior means of the static latent for `x`.
inline Matrix static_codes(const model::LssaeModel& m, const Matrix& x) {
    nn::Tape tape(false);
    return m.encode_static(tape, tape.constant(x)).mean.value();
}

/// Draws from the standard-normal static prior.
inline Matrix draw_static_codes(const model::LssaeModel& m, Eigen::Index n, nn::Rng& rng) {
    return rng.normal_matrix(n, m.config().d_c);
}

/// Covariate-track codes for steps 1..steps from the prior.
inline std::vector<Matrix> covariate_codes(const model::LssaeModel& m, int steps, RolloutMode mode, nn::Rng& rng) {
    nn::Tape tape(false);
    const auto rollout = m.prior_rollout_w(tape, steps, mode, rng);
    std::vector<Matrix> out;
    for (const auto& z : rollout.samples) out.push_back(z.value());
    return out;
}

inline Matrix decode_values(const model::LssaeModel& m, const Matrix& z_c, const Matrix& z_w) {
    nn::Tape tape(false);
    Matrix w = z_w;
    if (w.rows() == 1 && z_c.rows() != 1) w = w.replicate(z_c.rows(), 1);
    return m.decode(tape, tape.constant(z_c), tape.constant(w)).value();
}

/// Holds the static codes fixed and decodes a covariate-prior rollout of
/// `steps` stamps (which may extend past the source horizon).
inline std::vector<Matrix> generate_sequence(const model::LssaeModel& m, const Matrix& z_c, int steps,
                                             RolloutMode mode, nn::Rng& rng) {
    std::vector<Matrix> out;
    for (const auto& z_w : covariate_codes(m, steps, mode, rng)) out.push_back(decode_values(m, z_c, z_w));
    return out;
}

/// Dual mode: the covariate code is held at its first rollout step and each
/// static code in `z_c` produces one output row.
inline Matrix vary_static(const model::LssaeModel& m, const Matrix& z_c, RolloutMode mode, nn::Rng& rng) {
    return decode_values(m, z_c, covariate_codes(m, 1, mode, rng).front());
}

inline void write_sequence_csv(const std::vector<Matrix>& seq, int first_time, std::ostream& out) {
    if (seq.empty()) {
        out << "domain\n";
        return;
    }
    out << "domain";
    for (Eigen::Index j = 0; j < seq.front().cols(); ++j) out << ",f" << j;
    out << '\n';
    for (std::size_t t = 0; t < seq.size(); ++t) {
        for (Eigen::Index i = 0; i < seq[t].rows(); ++i) {
            out << first_time + static_cast<int>(t);
            for (Eigen::Index j = 0; j < seq[t].cols(); ++j) out << ',' << util::format_double(seq[t](i, j));
            out << '\n';
        }
    }
}

}  // namespace evodg::eval
