#pragma once

#include "evodg/data/domain_sequence.hpp"
#include "evodg/model/config.hpp"
#include "evodg/model/lssae.hpp"
#include "evodg/nn/rng.hpp"

#include <vector>

namespace evodg::oracle {

/// Small network sizes so exhaustive finite differences stay fast.
inline TrainConfig miniature_config(std::uint64_t seed = 7) {
    TrainConfig cfg;
    cfg.d_c = 3;
    cfg.d_w = 3;
    cfg.k_v = 2;
    cfg.rnn_hidden = 4;
    cfg.feature_width = 6;
    cfg.feature_depth = 2;
    cfg.batch_size = 4;
    cfg.seed = seed;
    return cfg;
}

inline model::AlignedBatch random_batch(int steps, int rows, int dim, int classes, nn::Rng& rng) {
    model::AlignedBatch b;
    for (int t = 0; t < steps; ++t) {
        b.x.push_back(rng.uniform_matrix(rows, dim, 0.0, 1.0));
        std::vector<int> y;
        for (int i = 0; i < rows; ++i) y.push_back(static_cast<int>(rng.below(static_cast<std::size_t>(classes))));
        b.y.push_back(std::move(y));
    }
    return b;
}

/// `steps` domains of `rows` uniform points in [0,1]^dim, label = x0 > 0.5.
inline data::DomainSequence toy_sequence(int steps, int rows, int dim, std::uint64_t seed, int first_time = 0) {
    nn::Rng rng(seed);
    data::DomainSequence seq;
    seq.dim = dim;
    seq.classes = 2;
    for (int t = 0; t < steps; ++t) {
        data::Domain d;
        d.time = first_time + t;
        d.x = rng.uniform_matrix(rows, dim, 0.0, 1.0);
        for (int i = 0; i < rows; ++i) d.y.push_back(d.x(i, 0) > 0.5 ? 1 : 0);
        seq.domains.push_back(std::move(d));
    }
    return seq;
}

/// Sets every parameter whose name starts with `prefix` to `value`.
inline void fill_params(nn::ParamSet& params, const std::string& prefix, double value) {
    for (auto& p : params) {
        if (p->name.rfind(prefix, 0) == 0) p->value.setConstant(value);
    }
}

}  // namespace evodg::oracle
