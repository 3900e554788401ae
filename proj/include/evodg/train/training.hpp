#pragma once

#include "evodg/data/domain_sequence.hpp"
#include "evodg/eval/inference.hpp"
#include "evodg/model/checkpoint.hpp"
#include "evodg/model/erm.hpp"
#include "evodg/model/lssae.hpp"
#include "evodg/model/objective.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace evodg::train {

using data::DomainSequence;
using evodg::TrainConfig;
using nn::Matrix;

/// A training run hit NaN/Inf or a negative KL; `component()` names the culprit.
class NumericalFailure : public std::runtime_error {
public:
    NumericalFailure(std::string component, const std::string& detail)
        : std::runtime_error("numerical failure in " + component + ": " + detail), component_(std::move(component)) {}
    [[nodiscard]] const std::string& component() const { return component_; }

private:
    std::string component_;
};

/// Draws `batch_size` indices per domain each step. Domains at least as large
/// as the batch are walked through a reshuffled permutation; smaller ones are
/// sampled with replacement.
class AlignedBatchSampler {
public:
    AlignedBatchSampler(const DomainSequence& source, int batch_size, nn::Rng rng)
        : source_(&source), batch_(batch_size), rng_(rng) {
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (source.empty()) throw data::DataError("aligned sampler: no source domains");
        for (const auto& d : source.domains) {
            if (d.size() == 0) throw data::DataError("aligned sampler: domain " + std::to_string(d.time) + " is empty");
            std::vector<std::size_t> perm(d.size());
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            rng_.shuffle(perm);
            order_.push_back(std::move(perm));
            cursor_.push_back(0);
        }
    }

    /// Row indices for the next step, one list per domain in time order.
    std::vector<std::vector<std::size_t>> next_indices() {
        std::vector<std::vector<std::size_t>> out;
        const auto b = static_cast<std::size_t>(batch_);
        for (std::size_t t = 0; t < order_.size(); ++t) {
            auto& perm = order_[t];
            std::vector<std::size_t> idx;
            if (perm.size() < b) {
                for (std::size_t i = 0; i < b; ++i) idx.push_back(rng_.below(perm.size()));
            } else {
                for (std::size_t i = 0; i < b; ++i) {
                    if (cursor_[t] == perm.size()) {
                        rng_.shuffle(perm);
                        cursor_[t] = 0;
                    }
                    idx.push_back(perm[cursor_[t]++]);
                }
            }
            out.push_back(std::move(idx));
        }
        return out;
    }

    model::AlignedBatch next() {
        const auto idx = next_indices();
        model::AlignedBatch batch;
        for (std::size_t t = 0; t < idx.size(); ++t) {
            const auto& d = source_->domains[t];
            Matrix x(static_cast<Eigen::Index>(idx[t].size()), d.x.cols());
            std::vector<int> y;
            for (std::size_t i = 0; i < idx[t].size(); ++i) {
                x.row(static_cast<Eigen::Index>(i)) = d.x.row(static_cast<Eigen::Index>(idx[t][i]));
                y.push_back(d.y[idx[t][i]]);
            }
            batch.x.push_back(std::move(x));
            batch.y.push_back(std::move(y));
        }
        return batch;
    }

private:
    const DomainSequence* source_;
    int batch_;
    nn::Rng rng_;
    std::vector<std::vector<std::size_t>> order_;
    std::vector<std::size_t> cursor_;
};

inline int steps_per_epoch(const DomainSequence& source, int batch_size) {
    std::size_t largest = 0;
    for (const auto& d : source.domains) largest = std::max(largest, d.size());
    const auto b = static_cast<std::size_t>(batch_size);
    return static_cast<int>((largest + b - 1) / b);
}

/// Per-epoch means of the loss components over that epoch's steps.
struct EpochRecord {
    int epoch = 0;
    double recon = 0;
    double kl_c = 0;
    double kl_w = 0;
    double kl_v = 0;
    double ce = 0;
    double ts = 0;
    double total = 0;
    double val_acc = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0;
};

struct RunRecord {
    std::string algorithm;
    std::uint64_t seed = 0;
    std::string config_echo;
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0;

    /// Variance of validation accuracy over the last `n` epochs (population form).
    [[nodiscard]] double tail_val_variance(std::size_t n) const {
        if (epochs.empty()) return 0.0;
        const std::size_t k = std::min(n, epochs.size());
        double mean = 0;
        for (std::size_t i = epochs.size() - k; i < epochs.size(); ++i) mean += epochs[i].val_acc;
        mean /= static_cast<double>(k);
        double var = 0;
        for (std::size_t i = epochs.size() - k; i < epochs.size(); ++i) {
            var += (epochs[i].val_acc - mean) * (epochs[i].val_acc - mean);
        }
        return var / static_cast<double>(k);
    }
};

inline void write_run_record_csv(const RunRecord& r, std::ostream& out) {
    out << "epoch,recon,kl_c,kl_w,kl_v,ce,ts,total,val_acc\n";
    for (const auto& e : r.epochs) {
        out << e.epoch << ',' << util::format_double(e.recon) << ',' << util::format_double(e.kl_c) << ','
            << util::format_double(e.kl_w) << ',' << util::format_double(e.kl_v) << ',' << util::format_double(e.ce)
            << ',' << util::format_double(e.ts) << ',' << util::format_double(e.total) << ','
            << (std::isnan(e.val_acc) ? std::string("nan") : util::format_double(e.val_acc)) << '\n';
    }
}

/// Optional per-epoch observer (progress output in the CLI).
using EpochCallback = std::function<void(const EpochRecord&)>;

template <class Model>
struct TrainResult {
    Model final_model;
    Model best_model;
    int best_epoch = 0;  ///< 0 means the initialization
    RunRecord record;
};

namespace detail {

inline nn::AdamOptions adam_for(const TrainConfig& cfg) {
    nn::AdamOptions opt;
    opt.group_lr = {cfg.lr_main, cfg.lr_dyn};
    return opt;
}

inline void require_time_order(const DomainSequence& seq, const char* what) {
    seq.validate();
    if (seq.empty()) throw data::DataError(std::string(what) + ": no domains");
}

/// Evaluates one loss component, relabeling numerical failures with its name.
template <class Fn>
nn::Var labeled(const char* component, Fn fn) {
    try {
        return fn();
    } catch (const nn::NonFiniteError& e) {
        throw NumericalFailure(component, e.what());
    }
}

inline void check_kl(const char* name, double v) {
    if (!(v >= -1e-9)) throw NumericalFailure(name, "negative KL " + util::format_double(v));
}

}  // namespace detail

/// Validation accuracy through the deployment path: concept prior rollout,
/// posterior-mean static code, no label encoder.
inline double validation_accuracy(const model::LssaeModel& m, const DomainSequence& validation, int source_first) {
    nn::Rng unused(0);
    const auto features = eval::strip_labels(validation);
    const auto pred = eval::predict_target(m, features, source_first, model::RolloutMode::mean, unused);
    return eval::pooled_accuracy(pred, validation);
}

inline double validation_accuracy(const model::ErmModel& m, const DomainSequence& validation) {
    const auto features = eval::strip_labels(validation);
    return eval::pooled_accuracy(eval::predict_target(m, features), validation);
}

/// One optimization step on an aligned batch; returns the unweighted terms.
inline EpochRecord lssae_step(model::LssaeModel& m, const model::AlignedBatch& batch, const nn::Rng& rng,
                              const nn::AdamOptions& opt) {
    const TrainConfig& cfg = m.config();
    nn::Tape tape;
    const model::LatentBundle b = [&] {
        try {
            return m.forward(tape, batch, rng);
        } catch (const nn::NonFiniteError& e) {
            throw NumericalFailure("forward pass", e.what());
        }
    }();
    model::LossTerms t;
    t.recon = detail::labeled("recon", [&] { return model::reconstruction_term(b); });
    t.kl_c = detail::labeled("kl_c", [&] { return model::static_kl_term(b); });
    t.kl_w = detail::labeled("kl_w", [&] { return model::covariate_kl_term(b); });
    t.kl_v = detail::labeled("kl_v", [&] { return model::concept_kl_term(b); });
    t.ce = detail::labeled("ce", [&] { return model::classification_term(b); });
    t.ts = detail::labeled("ts", [&] { return model::ts_penalty(b, cfg.alpha); });
    detail::check_kl("kl_c", t.kl_c.scalar());
    detail::check_kl("kl_w", t.kl_w.scalar());
    detail::check_kl("kl_v", t.kl_v.scalar());
    const nn::Var total = detail::labeled("total", [&] {
        return t.recon + cfg.lambda1 * t.kl_c + cfg.lambda2 * t.kl_w + t.ce + cfg.lambda3 * t.kl_v +
               cfg.lambda_ts * t.ts;
    });
    tape.backward(total);
    if (cfg.grad_clip > 0) m.params().clip_grad_norm(cfg.grad_clip);
    try {
        nn::adam_step(m.params(), opt);
    } catch (const nn::NonFiniteError& e) {
        throw NumericalFailure(e.where(), e.what());
    }
    EpochRecord r;
    r.recon = t.recon.scalar();
    r.kl_c = t.kl_c.scalar();
    r.kl_w = t.kl_w.scalar();
    r.kl_v = t.kl_v.scalar();
    r.ce = t.ce.scalar();
    r.ts = t.ts.scalar();
    r.total = total.scalar();
    return r;
}

/// Weighted sum of an epoch's components, matching the optimized objective.
inline double weighted_total(const EpochRecord& e, const TrainConfig& cfg) {
    return e.recon + cfg.lambda1 * e.kl_c + cfg.lambda2 * e.kl_w + e.ce + cfg.lambda3 * e.kl_v + cfg.lambda_ts * e.ts;
}

/// Trains on the aligned source sequence. When `validation` is non-empty the
/// best-validation weights are kept alongside the final ones.
inline TrainResult<model::LssaeModel> train_lssae(const DomainSequence& source, const DomainSequence& validation,
                                                  const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    detail::require_time_order(source, "train_lssae");
    if (source.size() < 2) throw data::DataError("train_lssae: need at least 2 source domains, got " + std::to_string(source.size()));
    const auto start = std::chrono::steady_clock::now();
    const int source_first = source.first_time();

    model::LssaeModel m(source.dim, source.classes, cfg);
    const nn::Rng root(cfg.seed);
    AlignedBatchSampler sampler(source, cfg.batch_size, root.fork(1));
    const nn::Rng step_root = root.fork(2);
    const auto opt = detail::adam_for(cfg);
    const int steps = steps_per_epoch(source, cfg.batch_size);

    RunRecord record{"lssae", cfg.seed, config_to_text(cfg), {}, 0};
    std::vector<Matrix> best = m.values();
    int best_epoch = 0;
    double best_acc = -1;
    std::uint64_t step_id = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord sum;
        for (int s = 0; s < steps; ++s) {
            const EpochRecord r = lssae_step(m, sampler.next(), step_root.fork(step_id++), opt);
            sum.recon += r.recon;
            sum.kl_c += r.kl_c;
            sum.kl_w += r.kl_w;
            sum.kl_v += r.kl_v;
            sum.ce += r.ce;
            sum.ts += r.ts;
        }
        const double n = steps;
        EpochRecord e{epoch, sum.recon / n, sum.kl_c / n, sum.kl_w / n, sum.kl_v / n, sum.ce / n, sum.ts / n, 0,
                      std::numeric_limits<double>::quiet_NaN(), 0};
        e.total = weighted_total(e, cfg);
        if (!validation.empty()) {
            e.val_acc = validation_accuracy(m, validation, source_first);
            if (e.val_acc > best_acc) {
                best_acc = e.val_acc;
                best = m.values();
                best_epoch = epoch;
            }
        }
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record.epochs.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    if (validation.empty() && cfg.epochs > 0) {
        best = m.values();
        best_epoch = cfg.epochs;
    }
    model::LssaeModel best_model(source.dim, source.classes, cfg);
    best_model.load_values(best);
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(m), std::move(best_model), best_epoch, std::move(record)};
}

/// Cycling permutation over pooled rows.
class PooledSampler {
public:
    PooledSampler(std::size_t rows, std::size_t batch, nn::Rng rng) : batch_(batch), rng_(rng), perm_(rows) {
        if (rows == 0) throw data::DataError("pooled sampler: no rows");
        std::iota(perm_.begin(), perm_.end(), std::size_t{0});
        rng_.shuffle(perm_);
    }
    std::vector<std::size_t> next() {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < batch_; ++i) {
            if (cursor_ == perm_.size()) {
                rng_.shuffle(perm_);
                cursor_ = 0;
            }
            idx.push_back(perm_[cursor_++]);
        }
        return idx;
    }

private:
    std::size_t batch_;
    nn::Rng rng_;
    std::vector<std::size_t> perm_;
    std::size_t cursor_ = 0;
};

/// Pooled cross-entropy baseline on explicit rows. Batch is batch_size times
/// `domains_per_step` so one step sees as many samples as an aligned step.
inline TrainResult<model::ErmModel> train_erm_pooled(const Matrix& x, const std::vector<int>& y, int classes,
                                                     int domains_per_step, const DomainSequence& validation,
                                                     const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (x.rows() != static_cast<Eigen::Index>(y.size()) || y.empty()) throw data::DataError("train_erm: bad pooled data");
    const auto start = std::chrono::steady_clock::now();
    model::ErmModel m(static_cast<int>(x.cols()), classes, cfg);
    const nn::Rng root(cfg.seed);
    const auto batch = static_cast<std::size_t>(cfg.batch_size) * static_cast<std::size_t>(std::max(1, domains_per_step));
    PooledSampler sampler(y.size(), batch, root.fork(1));
    const int steps = static_cast<int>((y.size() + batch - 1) / batch);
    nn::AdamOptions opt;
    opt.group_lr = {cfg.lr_main};

    RunRecord record{"erm", cfg.seed, config_to_text(cfg), {}, 0};
    std::vector<Matrix> best = m.values();
    int best_epoch = 0;
    double best_acc = -1;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double ce_sum = 0;
        for (int s = 0; s < steps; ++s) {
            const auto idx = sampler.next();
            Matrix xb(static_cast<Eigen::Index>(idx.size()), x.cols());
            std::vector<int> yb;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
                yb.push_back(y[idx[i]]);
            }
            nn::Tape tape;
            const nn::Var ce = detail::labeled("ce", [&] {
                return dist::cross_entropy(m.logits(tape, tape.constant(xb)), yb);
            });
            tape.backward(ce);
            if (cfg.grad_clip > 0) m.params().clip_grad_norm(cfg.grad_clip);
            try {
                nn::adam_step(m.params(), opt);
            } catch (const nn::NonFiniteError& e) {
                throw NumericalFailure(e.where(), e.what());
            }
            ce_sum += ce.scalar();
        }
        EpochRecord e;
        e.epoch = epoch;
        e.ce = ce_sum / steps;
        e.total = e.ce;
        if (!validation.empty()) {
            e.val_acc = validation_accuracy(m, validation);
            if (e.val_acc > best_acc) {
                best_acc = e.val_acc;
                best = m.values();
                best_epoch = epoch;
            }
        }
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record.epochs.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    if (validation.empty() && cfg.epochs > 0) {
        best = m.values();
        best_epoch = cfg.epochs;
    }
    model::ErmModel best_model(static_cast<int>(x.cols()), classes, cfg);
    best_model.load_values(best);
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(m), std::move(best_model), best_epoch, std::move(record)};
}

/// Pools every source domain (time stamps play no role) and trains the baseline.
inline TrainResult<model::ErmModel> train_erm(const DomainSequence& source, const DomainSequence& validation,
                                              const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    detail::require_time_order(source, "train_erm");
    Matrix x(static_cast<Eigen::Index>(source.total_samples()), source.dim);
    std::vector<int> y;
    Eigen::Index row = 0;
    for (const auto& d : source.domains) {
        x.middleRows(row, d.x.rows()) = d.x;
        row += d.x.rows();
        y.insert(y.end(), d.y.begin(), d.y.end());
    }
    return train_erm_pooled(x, y, source.classes, static_cast<int>(source.size()), validation, cfg, on_epoch);
}

inline model::CheckpointMeta lssae_meta(const DomainSequence& source, const TrainConfig& cfg, int epoch) {
    return {model::Algorithm::lssae, source.dim, source.classes, source.first_time(), static_cast<int>(source.size()),
            epoch, cfg};
}

inline model::CheckpointMeta erm_meta(const DomainSequence& source, const TrainConfig& cfg, int epoch) {
    return {model::Algorithm::erm, source.dim, source.classes, source.first_time(), static_cast<int>(source.size()),
            epoch, cfg};
}

}  // namespace evodg::train
