#pragma once

#include "evodg/model/lssae.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evodg::model {

/// Per-row KL between two concept-track distributions of the same family.
inline Var concept_kl(const ConceptDist& q, const ConceptDist& p) {
    if (q.index() != p.index()) throw std::invalid_argument("concept_kl: mixed distribution families");
    if (const auto* c = std::get_if<CategoricalDist>(&q)) return dist::categorical_kl(*c, std::get<CategoricalDist>(p));
    return dist::gaussian_kl(std::get<DiagGaussian>(q), std::get<DiagGaussian>(p));
}

inline Var concept_symmetric_kl(const ConceptDist& a, const ConceptDist& b) {
    return concept_kl(a, b) + concept_kl(b, a);
}

/// Standard-normal prior of the static latent, one row broadcast over the batch.
inline DiagGaussian standard_normal(Tape& tape, Eigen::Index dim) {
    return {tape.constant(Matrix::Zero(1, dim)), tape.constant(Matrix::Zero(1, dim))};
}

/// Unweighted pieces of the objective. Every entry is a 1x1 node on the tape.
struct LossTerms {
    Var recon;  ///< -sum_t E[log p(x_t | z^c, z_t^w)]
    Var kl_c;   ///< KL(q(z^c|x) || N(0, I)) averaged over all samples of all stamps
    Var kl_w;   ///< sum_t batch-mean KL on the covariate track
    Var kl_v;   ///< sum_t batch-mean KL on the concept track (0 when disabled)
    Var ce;     ///< sum_t cross-entropy
    Var ts;     ///< temporal smoothness hinge (unweighted)
    Var domain;
    Var category;
    Var total;
};

namespace objective_detail {

inline void check_steps(const LatentBundle& b) {
    const std::size_t T = b.steps();
    if (T == 0) throw std::invalid_argument("objective: empty latent bundle");
    if (b.q_c.size() != T || b.q_w.size() != T || b.x_hat.size() != T || b.logits.size() != T ||
        b.y.size() != T) {
        throw std::invalid_argument("objective: per-stamp records do not cover all " + std::to_string(T) + " stamps");
    }
    if (b.p_w.size() != T) {
        throw std::invalid_argument("objective: covariate prior rollout has " + std::to_string(b.p_w.size()) +
                                    " steps for " + std::to_string(T) + " batches");
    }
    if (!b.q_v.empty() && (b.q_v.size() != T || b.p_v.size() != T)) {
        throw std::invalid_argument("objective: concept records do not cover all " + std::to_string(T) + " stamps");
    }
}

inline Var zero(Tape& tape) { return tape.constant(Matrix::Zero(1, 1)); }

inline Var sum_all(std::span<const Var> parts) {
    Var acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = acc + parts[i];
    return acc;
}

}  // namespace objective_detail

inline Var reconstruction_term(const LatentBundle& b) {
    std::vector<Var> parts;
    for (std::size_t t = 0; t < b.steps(); ++t) parts.push_back(dist::gaussian_recon_loglik(b.x[t], b.x_hat[t]));
    return -objective_detail::sum_all(parts);
}

inline Var static_kl_term(const LatentBundle& b) {
    Tape& tape = b.x.front().tape();
    std::vector<Var> parts;
    double rows = 0;
    for (const auto& q : b.q_c) {
        parts.push_back(nn::sum(dist::gaussian_kl(q, standard_normal(tape, q.dim()))));
        rows += static_cast<double>(q.batch());
    }
    return nn::scale(objective_detail::sum_all(parts), 1.0 / rows);
}

inline Var covariate_kl_term(const LatentBundle& b) {
    std::vector<Var> parts;
    for (std::size_t t = 0; t < b.steps(); ++t) parts.push_back(nn::mean(dist::gaussian_kl(b.q_w[t], b.p_w[t])));
    return objective_detail::sum_all(parts);
}

inline Var concept_kl_term(const LatentBundle& b) {
    if (b.q_v.empty()) return objective_detail::zero(b.x.front().tape());
    std::vector<Var> parts;
    for (std::size_t t = 0; t < b.steps(); ++t) parts.push_back(nn::mean(concept_kl(b.q_v[t], b.p_v[t])));
    return objective_detail::sum_all(parts);
}

inline Var classification_term(const LatentBundle& b) {
    std::vector<Var> parts;
    for (std::size_t t = 0; t < b.steps(); ++t) parts.push_back(dist::cross_entropy(b.logits[t], b.y[t]));
    return objective_detail::sum_all(parts);
}

/// sum_t max(0, d_t - alpha) where d_t are consecutive-posterior distances.
inline Var hinge_sum(Tape& tape, std::span<const Var> distances, double alpha) {
    Var acc = objective_detail::zero(tape);
    for (const Var& d : distances) acc = acc + nn::relu(nn::add_scalar(d, -alpha));
    return acc;
}

/// Batch-mean symmetric KL between each pair of consecutive posteriors; rows
/// are paired by batch position.
inline std::vector<Var> consecutive_distances(std::span<const DiagGaussian> track) {
    std::vector<Var> out;
    for (std::size_t t = 1; t < track.size(); ++t) out.push_back(nn::mean(dist::symmetric_kl(track[t], track[t - 1])));
    return out;
}
inline std::vector<Var> consecutive_distances(std::span<const ConceptDist> track) {
    std::vector<Var> out;
    for (std::size_t t = 1; t < track.size(); ++t) out.push_back(nn::mean(concept_symmetric_kl(track[t], track[t - 1])));
    return out;
}

/// Temporal smoothness hinge over both latent tracks; 0 for fewer than two stamps.
inline Var ts_penalty(Tape& tape, std::span<const DiagGaussian> w_track, std::span<const ConceptDist> v_track,
                      double alpha) {
    if (!(alpha > 0)) throw std::invalid_argument("ts_penalty: alpha must be > 0");
    const auto dw = consecutive_distances(w_track);
    const auto dv = consecutive_distances(v_track);
    return hinge_sum(tape, dw, alpha) + hinge_sum(tape, dv, alpha);
}

inline Var ts_penalty(const LatentBundle& b, double alpha) {
    return ts_penalty(b.x.front().tape(), b.q_w, b.q_v, alpha);
}

inline LossTerms loss_terms(const LatentBundle& b, const TrainConfig& cfg) {
    objective_detail::check_steps(b);
    LossTerms t{reconstruction_term(b), static_kl_term(b), covariate_kl_term(b), concept_kl_term(b),
                classification_term(b), ts_penalty(b, cfg.alpha), {}, {}, {}};
    t.domain = t.recon + cfg.lambda1 * t.kl_c + cfg.lambda2 * t.kl_w;
    t.category = t.ce + cfg.lambda3 * t.kl_v;
    t.total = t.domain + t.category + cfg.lambda_ts * t.ts;
    return t;
}

/// Negated domain bound: reconstruction plus weighted KL on z^c and z^w.
inline Var loss_domain(const LatentBundle& b, const TrainConfig& cfg) {
    objective_detail::check_steps(b);
    return reconstruction_term(b) + cfg.lambda1 * static_kl_term(b) + cfg.lambda2 * covariate_kl_term(b);
}

/// Negated category bound: cross-entropy plus weighted KL on z^v.
inline Var loss_category(const LatentBundle& b, const TrainConfig& cfg) {
    objective_detail::check_steps(b);
    return classification_term(b) + cfg.lambda3 * concept_kl_term(b);
}

inline Var total_loss(const LatentBundle& b, const TrainConfig& cfg) { return loss_terms(b, cfg).total; }

}  // namespace evodg::model
