#pragma once

#include "evodg/dist/distributions.hpp"
#include "evodg/model/config.hpp"
#include "evodg/nn/layers.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace evodg::model {

using dist::CategoricalDist;
using dist::DiagGaussian;
using nn::Matrix;
using nn::Tape;
using nn::Var;

/// Posterior/prior of the concept-shift latent: categorical by default, Gaussian
/// for the Gaussian-prior ablation.
using ConceptDist = std::variant<CategoricalDist, DiagGaussian>;

enum class RolloutMode {
    sample,  ///< feed back reparameterized draws
    mean,    ///< feed back the mean (Gaussian) or probability vector (categorical)
};

/// One mini-batch per source domain, all of the same size, in time order.
struct AlignedBatch {
    std::vector<Matrix> x;
    std::vector<std::vector<int>> y;

    [[nodiscard]] std::size_t steps() const { return x.size(); }
};

template <class D>
struct Rollout {
    std::vector<D> dists;
    std::vector<Var> samples;
};

/// Everything sampled in one forward pass over an aligned batch, per time stamp.
struct LatentBundle {
    std::vector<Var> x;
    std::vector<std::vector<int>> y;
    std::vector<DiagGaussian> q_c;
    std::vector<Var> z_c;
    std::vector<DiagGaussian> q_w;
    std::vector<DiagGaussian> p_w;
    std::vector<Var> z_w;
    std::vector<ConceptDist> q_v;  ///< empty when the concept track is disabled
    std::vector<ConceptDist> p_v;
    std::vector<Var> z_v;
    std::vector<Var> x_hat;
    std::vector<Var> logits;

    [[nodiscard]] std::size_t steps() const { return x.size(); }
};

inline DiagGaussian gaussian_head(Tape& tape, const nn::Affine& mean, const nn::Affine& log_var,
                                  const Var& h) {
    return {mean(tape, h), nn::clamp(log_var(tape, h), dist::kLogVarMin, dist::kLogVarMax)};
}

/// The full network family: static encoder E^c, dynamic encoders E^w / E^v,
/// prior networks F^w / F^v, decoder D and linear classifier C.
class LssaeModel {
public:
    static constexpr int kMainGroup = 0;     ///< E^c, D, C
    static constexpr int kDynamicGroup = 1;  ///< E^w, F^w, E^v, F^v

    LssaeModel(int data_dim, int classes, const TrainConfig& cfg)
        : data_dim_(data_dim), classes_(classes), cfg_(cfg) {
        if (data_dim < 1 || classes < 1) throw std::invalid_argument("LssaeModel: bad data shape");
        cfg_.validate();
        k_v_ = cfg.categories(classes);
        nn::Rng rng = nn::Rng(cfg.seed).fork(0x1417);
        const auto width = static_cast<Eigen::Index>(cfg.feature_width);
        const auto hidden = static_cast<Eigen::Index>(cfg.rnn_hidden);
        const auto dc = static_cast<Eigen::Index>(cfg.d_c);
        const auto dw = static_cast<Eigen::Index>(cfg.d_w);
        std::vector<Eigen::Index> extractor{data_dim};
        for (int i = 0; i < cfg.feature_depth; ++i) extractor.push_back(width);

        static_features_ = nn::Mlp(params_, "enc_c.features", extractor, nn::Activation::relu, kMainGroup, rng);
        static_mean_ = nn::Affine(params_, "enc_c.mean", width, dc, kMainGroup, rng);
        static_log_var_ = nn::Affine(params_, "enc_c.log_var", width, dc, kMainGroup, rng);

        dynamic_features_ =
            nn::Mlp(params_, "enc_w.features", extractor, nn::Activation::relu, kDynamicGroup, rng);
        w_cell_ = nn::LstmCell(params_, "enc_w.lstm", width, hidden, kDynamicGroup, rng);
        w_mean_ = nn::Affine(params_, "enc_w.mean", hidden, dw, kDynamicGroup, rng);
        w_log_var_ = nn::Affine(params_, "enc_w.log_var", hidden, dw, kDynamicGroup, rng);

        prior_w_cell_ = nn::LstmCell(params_, "prior_w.lstm", dw, hidden, kDynamicGroup, rng);
        prior_w_mean_ = nn::Affine(params_, "prior_w.mean", hidden, dw, kDynamicGroup, rng);
        prior_w_log_var_ = nn::Affine(params_, "prior_w.log_var", hidden, dw, kDynamicGroup, rng);

        const auto kv = static_cast<Eigen::Index>(k_v_);
        if (has_concept_track()) {
            v_cell_ = nn::LstmCell(params_, "enc_v.lstm", classes, hidden, kDynamicGroup, rng);
            v_head_ = nn::Affine(params_, "enc_v.head", hidden, kv, kDynamicGroup, rng);
            if (gaussian_concept()) {
                v_log_var_ = nn::Affine(params_, "enc_v.log_var", hidden, kv, kDynamicGroup, rng);
            }
        }
        if (learned_concept_prior()) {
            prior_v_cell_ = nn::LstmCell(params_, "prior_v.lstm", kv, hidden, kDynamicGroup, rng);
            prior_v_head_ = nn::Affine(params_, "prior_v.head", hidden, kv, kDynamicGroup, rng);
            if (gaussian_concept()) {
                prior_v_log_var_ = nn::Affine(params_, "prior_v.log_var", hidden, kv, kDynamicGroup, rng);
            }
        }

        decoder_ = nn::Mlp(params_, "decoder", {dc + dw, 16, 64, 128, data_dim}, nn::Activation::leaky_relu,
                           kMainGroup, rng, 0.2);
        classifier_ = nn::Affine(params_, "classifier", dc + (has_concept_track() ? kv : 0), classes,
                                 kMainGroup, rng);
    }

    LssaeModel(const LssaeModel&) = delete;
    LssaeModel& operator=(const LssaeModel&) = delete;
    LssaeModel(LssaeModel&&) = default;
    LssaeModel& operator=(LssaeModel&&) = default;

    /// Same structure and parameter values (optimizer moments are not copied).
    [[nodiscard]] LssaeModel clone() const {
        LssaeModel out(data_dim_, classes_, cfg_);
        out.load_values(values());
        return out;
    }

    [[nodiscard]] std::vector<Matrix> values() const {
        std::vector<Matrix> v;
        for (const auto& p : params_) v.push_back(p->value);
        return v;
    }
    void load_values(const std::vector<Matrix>& v) {
        if (v.size() != params_.size()) throw std::invalid_argument("load_values: parameter count mismatch");
        for (std::size_t i = 0; i < v.size(); ++i) {
            nn::require_same_shape(params_[i].value, v[i], "load_values");
            params_[i].value = v[i];
        }
    }

    [[nodiscard]] nn::ParamSet& params() { return params_; }
    [[nodiscard]] const nn::ParamSet& params() const { return params_; }
    [[nodiscard]] const TrainConfig& config() const { return cfg_; }
    [[nodiscard]] int data_dim() const { return data_dim_; }
    [[nodiscard]] int classes() const { return classes_; }
    [[nodiscard]] int concept_categories() const { return k_v_; }
    [[nodiscard]] PriorType prior_type() const { return cfg_.prior_type; }
    [[nodiscard]] bool has_concept_track() const { return cfg_.prior_type != PriorType::none; }
    [[nodiscard]] bool gaussian_concept() const { return cfg_.prior_type == PriorType::gaussian; }
    [[nodiscard]] bool learned_concept_prior() const {
        return cfg_.prior_type == PriorType::categorical || cfg_.prior_type == PriorType::gaussian;
    }
    [[nodiscard]] Eigen::Index classifier_inputs() const { return classifier_.in_features(); }

    [[nodiscard]] nn::RecurrentState zero_state(Eigen::Index batch) const {
        return nn::RecurrentState::zeros(batch, cfg_.rnn_hidden);
    }

    // -- encoders ---------------------------------------------------------

    /// q(z^c | x) per sample.
    DiagGaussian encode_static(Tape& tape, const Var& x) const {
        check_width(x, data_dim_, "encode_static");
        const Var h = static_features_(tape, x);
        return gaussian_head(tape, static_mean_, static_log_var_, h);
    }

    /// Feature extractor of E^w (split out so callers can batch it across time).
    Var dynamic_features(Tape& tape, const Var& x) const {
        check_width(x, data_dim_, "encode_dynamic_w");
        return dynamic_features_(tape, x);
    }

    /// Recurrent part of E^w applied to precomputed features.
    std::pair<DiagGaussian, nn::StateVars> dynamic_w_step(Tape& tape, const Var& features,
                                                          const nn::StateVars& state) const {
        const nn::StateVars next = w_cell_.step(tape, features, state);
        return {gaussian_head(tape, w_mean_, w_log_var_, next.hidden), next};
    }

    /// q(z_t^w | z_<t^w, x_t); history is carried by the recurrent state.
    std::pair<DiagGaussian, nn::StateVars> encode_dynamic_w(Tape& tape, const Var& x_t,
                                                            const nn::StateVars& state) const {
        return dynamic_w_step(tape, dynamic_features(tape, x_t), state);
    }

    /// q(z_t^v | z_<t^v, y_t) from one-hot label rows.
    std::pair<ConceptDist, nn::StateVars> encode_dynamic_v(Tape& tape, const Var& y_onehot,
                                                           const nn::StateVars& state) const {
        if (!has_concept_track()) throw std::logic_error("encode_dynamic_v: concept track disabled");
        check_width(y_onehot, classes_, "encode_dynamic_v");
        check_one_hot(y_onehot.value());
        const nn::StateVars next = v_cell_.step(tape, y_onehot, state);
        if (gaussian_concept()) {
            return {gaussian_head(tape, v_head_, v_log_var_, next.hidden), next};
        }
        return {CategoricalDist{v_head_(tape, next.hidden)}, next};
    }

    // -- priors -----------------------------------------------------------

    /// p(z_1^w), p(z_2^w | z_1^w), ... from z_0^w = 0, feeding back each latent.
    Rollout<DiagGaussian> prior_rollout_w(Tape& tape, int steps, RolloutMode mode, nn::Rng& rng) const {
        if (steps < 1) throw std::invalid_argument("prior_rollout_w: need at least one step");
        Rollout<DiagGaussian> out;
        nn::StateVars state = nn::StateVars::from(tape, prior_w_cell_.zero_state(1));
        Var z = tape.constant(Matrix::Zero(1, cfg_.d_w));
        for (int t = 0; t < steps; ++t) {
            state = prior_w_cell_.step(tape, z, state);
            DiagGaussian p = gaussian_head(tape, prior_w_mean_, prior_w_log_var_, state.hidden);
            z = mode == RolloutMode::sample ? dist::gaussian_sample(p, rng) : p.mean;
            out.dists.push_back(p);
            out.samples.push_back(z);
        }
        return out;
    }

    /// Concept-track prior rollout. For the uniform ablation every step is the
    /// fixed uniform categorical.
    Rollout<ConceptDist> prior_rollout_v(Tape& tape, int steps, RolloutMode mode, nn::Rng& rng) const {
        if (steps < 1) throw std::invalid_argument("prior_rollout_v: need at least one step");
        if (!has_concept_track()) throw std::logic_error("prior_rollout_v: concept track disabled");
        Rollout<ConceptDist> out;
        const double tau = cfg_.gumbel_temperature;
        if (!learned_concept_prior()) {
            const Var logits = tape.constant(Matrix::Zero(1, k_v_));
            for (int t = 0; t < steps; ++t) {
                const CategoricalDist p{logits};
                out.dists.emplace_back(p);
                out.samples.push_back(mode == RolloutMode::sample ? dist::gumbel_softmax_sample(p, tau, rng)
                                                                  : nn::softmax_rows(p.logits));
            }
            return out;
        }
        nn::StateVars state = nn::StateVars::from(tape, prior_v_cell_.zero_state(1));
        Var z = tape.constant(Matrix::Zero(1, k_v_));
        for (int t = 0; t < steps; ++t) {
            state = prior_v_cell_.step(tape, z, state);
            if (gaussian_concept()) {
                DiagGaussian p = gaussian_head(tape, prior_v_head_, prior_v_log_var_, state.hidden);
                z = mode == RolloutMode::sample ? dist::gaussian_sample(p, rng) : p.mean;
                out.dists.emplace_back(p);
            } else {
                CategoricalDist p{prior_v_head_(tape, state.hidden)};
                z = mode == RolloutMode::sample ? dist::gumbel_softmax_sample(p, tau, rng)
                                                : nn::softmax_rows(p.logits);
                out.dists.emplace_back(p);
            }
            out.samples.push_back(z);
        }
        return out;
    }

    // -- decoder / classifier ----------------------------------------------

    /// Reconstruction mean of p(x_t | z^c, z_t^w).
    Var decode(Tape& tape, const Var& z_c, const Var& z_w) const {
        check_width(z_c, cfg_.d_c, "decode z_c");
        check_width(z_w, cfg_.d_w, "decode z_w");
        return decoder_(tape, nn::concat_cols(z_c, z_w));
    }

    /// Class logits of p(y_t | z^c, z_t^v); z_v is ignored when the concept
    /// track is disabled.
    Var classify(Tape& tape, const Var& z_c, const std::optional<Var>& z_v) const {
        check_width(z_c, cfg_.d_c, "classify z_c");
        if (!has_concept_track()) return classifier_(tape, z_c);
        if (!z_v) throw nn::ShapeError("classify: concept latent required");
        check_width(*z_v, k_v_, "classify z_v");
        Var zv = *z_v;
        if (zv.rows() == 1 && z_c.rows() != 1) {
            zv = nn::add(tape.constant(Matrix::Zero(z_c.rows(), k_v_)), zv);
        }
        return classifier_(tape, nn::concat_cols(z_c, zv));
    }

    // -- full pass ---------------------------------------------------------

    /// Training-time pass: one prior rollout per track, posteriors for every
    /// time stamp, reparameterized latents, reconstructions and class logits.
    LatentBundle forward(Tape& tape, const AlignedBatch& batch, const nn::Rng& rng) const {
        const std::size_t steps = batch.steps();
        if (steps == 0 || batch.y.size() != steps) throw nn::ShapeError("forward: empty or misaligned batch");
        const Eigen::Index rows = batch.x.front().rows();
        for (std::size_t t = 0; t < steps; ++t) {
            if (batch.x[t].rows() != rows || batch.y[t].size() != static_cast<std::size_t>(rows)) {
                throw nn::ShapeError("forward: per-domain batches must share one size");
            }
        }
        nn::Rng prior_w_rng = rng.fork(1);
        nn::Rng prior_v_rng = rng.fork(2);
        nn::Rng static_rng = rng.fork(3);
        nn::Rng dynamic_w_rng = rng.fork(4);
        nn::Rng dynamic_v_rng = rng.fork(5);

        LatentBundle b;
        const int T = static_cast<int>(steps);
        auto prior_w = prior_rollout_w(tape, T, RolloutMode::sample, prior_w_rng);
        b.p_w = std::move(prior_w.dists);

        for (std::size_t t = 0; t < steps; ++t) {
            b.x.push_back(tape.constant(batch.x[t]));
            b.y.push_back(batch.y[t]);
        }
        const Var stacked = nn::concat_rows(b.x);

        const DiagGaussian q_c_all = encode_static(tape, stacked);
        const Var z_c_all = dist::gaussian_sample(q_c_all, static_rng);
        const Var feat_all = dynamic_features(tape, stacked);

        nn::StateVars w_state = nn::StateVars::from(tape, zero_state(rows));
        std::vector<Var> z_w_parts;
        for (std::size_t t = 0; t < steps; ++t) {
            const auto off = static_cast<Eigen::Index>(t) * rows;
            b.q_c.push_back({nn::slice_rows(q_c_all.mean, off, rows), nn::slice_rows(q_c_all.log_var, off, rows)});
            b.z_c.push_back(nn::slice_rows(z_c_all, off, rows));
            auto [q_w, next] = dynamic_w_step(tape, nn::slice_rows(feat_all, off, rows), w_state);
            w_state = next;
            const Var z_w = dist::gaussian_sample(q_w, dynamic_w_rng);
            b.q_w.push_back(q_w);
            b.z_w.push_back(z_w);
            z_w_parts.push_back(z_w);
        }
        const Var x_hat_all = decode(tape, z_c_all, nn::concat_rows(z_w_parts));

        std::optional<Var> z_v_all;
        if (has_concept_track()) {
            auto prior_v = prior_rollout_v(tape, T, RolloutMode::sample, prior_v_rng);
            b.p_v = std::move(prior_v.dists);
            nn::StateVars v_state = nn::StateVars::from(tape, zero_state(rows));
            for (std::size_t t = 0; t < steps; ++t) {
                const Var onehot = tape.constant(dist::one_hot(batch.y[t], classes_));
                auto [q_v, next] = encode_dynamic_v(tape, onehot, v_state);
                v_state = next;
                b.z_v.push_back(sample_concept(q_v, dynamic_v_rng));
                b.q_v.push_back(std::move(q_v));
            }
            z_v_all = nn::concat_rows(b.z_v);
        }
        const Var logits_all = classify(tape, z_c_all, z_v_all);
        for (std::size_t t = 0; t < steps; ++t) {
            const auto off = static_cast<Eigen::Index>(t) * rows;
            b.x_hat.push_back(nn::slice_rows(x_hat_all, off, rows));
            b.logits.push_back(nn::slice_rows(logits_all, off, rows));
        }
        return b;
    }

    /// Draw from a concept-track distribution (Gumbel-Softmax or Gaussian).
    Var sample_concept(const ConceptDist& d, nn::Rng& rng) const {
        if (const auto* c = std::get_if<CategoricalDist>(&d)) {
            return dist::gumbel_softmax_sample(*c, cfg_.gumbel_temperature, rng);
        }
        return dist::gaussian_sample(std::get<DiagGaussian>(d), rng);
    }

    /// Deterministic representative of a concept-track distribution.
    static Var concept_mean(const ConceptDist& d) {
        if (const auto* c = std::get_if<CategoricalDist>(&d)) return nn::softmax_rows(c->logits);
        return std::get<DiagGaussian>(d).mean;
    }

private:
    static void check_width(const Var& v, int expected, const char* what) {
        if (v.cols() != expected) {
            throw nn::ShapeError(std::string(what) + ": expected width " + std::to_string(expected) + ", got " +
                                 std::to_string(v.cols()));
        }
    }

    static void check_one_hot(const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            int ones = 0;
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const double v = m(i, j);
                if (v == 1.0) {
                    ++ones;
                } else if (v != 0.0) {
                    ones = -1;
                    break;
                }
            }
            if (ones != 1) throw std::invalid_argument("encode_dynamic_v: row " + std::to_string(i) + " is not one-hot");
        }
    }

    int data_dim_;
    int classes_;
    int k_v_ = 0;
    TrainConfig cfg_;
    nn::ParamSet params_;

    nn::Mlp static_features_;
    nn::Affine static_mean_, static_log_var_;
    nn::Mlp dynamic_features_;
    nn::LstmCell w_cell_;
    nn::Affine w_mean_, w_log_var_;
    nn::LstmCell prior_w_cell_;
    nn::Affine prior_w_mean_, prior_w_log_var_;
    nn::LstmCell v_cell_;
    nn::Affine v_head_, v_log_var_;
    nn::LstmCell prior_v_cell_;
    nn::Affine prior_v_head_, prior_v_log_var_;
    nn::Mlp decoder_;
    nn::Affine classifier_;
};

}  // namespace evodg::model
