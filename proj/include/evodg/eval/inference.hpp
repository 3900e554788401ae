#pragma once

#include "evodg/data/domain_sequence.hpp"
#include "evodg/model/checkpoint.hpp"
#include "evodg/model/erm.hpp"
#include "evodg/model/lssae.hpp"

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace evodg::eval {

using model::RolloutMode;
using nn::Matrix;

/// Row-wise argmax; ties go to the lowest class index.
inline std::vector<int> argmax_rows(const Matrix& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < logits.cols(); ++j) {
            if (logits(i, j) > logits(i, best)) best = j;
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

/// Worker count for data-parallel evaluation: EVODG_THREADS if set, else 1.
inline unsigned eval_threads() {
    if (const char* env = std::getenv("EVODG_THREADS")) {
        try {
            const long long n = util::parse_int(env);
            if (n >= 1) return static_cast<unsigned>(n);
        } catch (const std::invalid_argument&) {
        }
    }
    return 1;
}

/// Applies `fn(first, count)` over row chunks, optionally on several threads.
template <class Fn>
void for_row_chunks(Eigen::Index rows, Eigen::Index chunk, unsigned threads, Fn fn) {
    const Eigen::Index chunks = (rows + chunk - 1) / chunk;
    if (threads <= 1 || chunks <= 1) {
        for (Eigen::Index c = 0; c < chunks; ++c) fn(c * chunk, std::min(chunk, rows - c * chunk));
        return;
    }
    std::vector<std::thread> pool;
    const auto workers = static_cast<Eigen::Index>(std::min<unsigned>(threads, static_cast<unsigned>(chunks)));
    for (Eigen::Index w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (Eigen::Index c = w; c < chunks; c += workers) fn(c * chunk, std::min(chunk, rows - c * chunk));
        });
    }
    for (auto& t : pool) t.join();
}

inline constexpr Eigen::Index kEvalChunk = 2048;

/// Concept codes for rollout steps 1..steps from the concept prior, never the
/// label encoder. `mean` uses probability vectors (or Gaussian means).
inline std::vector<Matrix> concept_codes(const model::LssaeModel& m, int steps, RolloutMode mode, nn::Rng& rng) {
    if (!m.has_concept_track()) return std::vector<Matrix>(static_cast<std::size_t>(steps));
    nn::Tape tape(false);
    const auto rollout = m.prior_rollout_v(tape, steps, mode, rng);
    std::vector<Matrix> out;
    for (const auto& z : rollout.samples) out.push_back(z.value());
    return out;
}

/// Class logits for inputs `x` given a concept code (ignored without a concept
/// track); the static latent is the posterior mean.
inline Matrix lssae_logits(const model::LssaeModel& m, const Matrix& x, const Matrix& code) {
    Matrix out(x.rows(), m.classes());
    for_row_chunks(x.rows(), kEvalChunk, eval_threads(), [&](Eigen::Index first, Eigen::Index count) {
        nn::Tape tape(false);
        const auto q_c = m.encode_static(tape, tape.constant(x.middleRows(first, count)));
        std::optional<nn::Var> z_v;
        if (m.has_concept_track()) z_v = tape.constant(code);
        out.middleRows(first, count) = m.classify(tape, q_c.mean, z_v).value();
    });
    return out;
}

inline Matrix erm_logits(const model::ErmModel& m, const Matrix& x) {
    Matrix out(x.rows(), m.classes());
    for_row_chunks(x.rows(), kEvalChunk, eval_threads(), [&](Eigen::Index first, Eigen::Index count) {
        nn::Tape tape(false);
        out.middleRows(first, count) = m.logits(tape, tape.constant(x.middleRows(first, count))).value();
    });
    return out;
}

/// Unlabeled inputs at one time stamp; the target path carries no labels.
struct StampedFeatures {
    int time = 0;
    Matrix x;
};

inline std::vector<StampedFeatures> strip_labels(const data::DomainSequence& seq) {
    std::vector<StampedFeatures> out;
    for (const auto& d : seq.domains) out.push_back({d.time, d.x});
    return out;
}

/// Predictions per domain. One concept-prior rollout from the first source
/// stamp covers every requested stamp.
inline std::vector<std::vector<int>> predict_target(const model::LssaeModel& m,
                                                    std::span<const StampedFeatures> target, int source_first,
                                                    RolloutMode mode, nn::Rng& rng) {
    int last = source_first;
    for (const auto& d : target) {
        if (d.time < source_first) {
            throw std::invalid_argument("target stamp " + std::to_string(d.time) + " precedes the source range starting at " +
                                        std::to_string(source_first));
        }
        last = std::max(last, d.time);
    }
    std::vector<std::vector<int>> out;
    if (target.empty()) return out;
    const auto codes = concept_codes(m, last - source_first + 1, mode, rng);
    for (const auto& d : target) {
        out.push_back(argmax_rows(lssae_logits(m, d.x, codes[static_cast<std::size_t>(d.time - source_first)])));
    }
    return out;
}

inline std::vector<std::vector<int>> predict_target(const model::ErmModel& m, std::span<const StampedFeatures> target) {
    std::vector<std::vector<int>> out;
    for (const auto& d : target) out.push_back(argmax_rows(erm_logits(m, d.x)));
    return out;
}

/// Dispatch on the checkpoint kind; ERM ignores stamps and mode.
inline std::vector<std::vector<int>> predict_target(const model::LoadedModel& m,
                                                    std::span<const StampedFeatures> target, RolloutMode mode,
                                                    nn::Rng& rng) {
    if (m.lssae) return predict_target(*m.lssae, target, m.meta.source_first, mode, rng);
    return predict_target(*m.erm, target);
}

inline double accuracy_percent(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) {
        throw std::invalid_argument("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw std::invalid_argument("accuracy: empty domain");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Accuracy over all samples of `seq` pooled together.
inline double pooled_accuracy(const std::vector<std::vector<int>>& predictions, const data::DomainSequence& seq) {
    std::size_t hits = 0;
    std::size_t total = 0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        const auto& y = seq[t].y;
        for (std::size_t i = 0; i < y.size(); ++i) hits += predictions[t][i] == y[i] ? 1 : 0;
        total += y.size();
    }
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace evodg::eval
