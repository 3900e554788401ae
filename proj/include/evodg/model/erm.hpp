#pragma once

#include "evodg/model/config.hpp"
#include "evodg/nn/layers.hpp"

#include <stdexcept>
#include <vector>

namespace evodg::model {

/// Pooled baseline: the static encoder's feature extractor followed by one
/// affine layer, trained with plain cross-entropy.
class ErmModel {
public:
    ErmModel(int data_dim, int classes, const TrainConfig& cfg)
        : data_dim_(data_dim), classes_(classes), cfg_(cfg) {
        if (data_dim < 1 || classes < 1) throw std::invalid_argument("ErmModel: bad data shape");
        cfg_.validate();
        nn::Rng rng = nn::Rng(cfg.seed).fork(0x1417);
        std::vector<Eigen::Index> widths{data_dim};
        for (int i = 0; i < cfg.feature_depth; ++i) widths.push_back(cfg.feature_width);
        features_ = nn::Mlp(params_, "features", widths, nn::Activation::relu, 0, rng);
        head_ = nn::Affine(params_, "head", cfg.feature_width, classes, 0, rng);
    }

    ErmModel(const ErmModel&) = delete;
    ErmModel& operator=(const ErmModel&) = delete;
    ErmModel(ErmModel&&) = default;
    ErmModel& operator=(ErmModel&&) = default;

    nn::Var logits(nn::Tape& tape, const nn::Var& x) const {
        if (x.cols() != data_dim_) {
            throw nn::ShapeError("ErmModel: expected width " + std::to_string(data_dim_) + ", got " +
                                 std::to_string(x.cols()));
        }
        return head_(tape, features_(tape, x));
    }

    [[nodiscard]] std::vector<nn::Matrix> values() const {
        std::vector<nn::Matrix> v;
        for (const auto& p : params_) v.push_back(p->value);
        return v;
    }
    void load_values(const std::vector<nn::Matrix>& v) {
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

private:
    int data_dim_;
    int classes_;
    TrainConfig cfg_;
    nn::ParamSet params_;
    nn::Mlp features_;
    nn::Affine head_;
};

}  // namespace evodg::model
