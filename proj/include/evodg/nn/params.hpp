#pragma once

#include "evodg/nn/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace evodg::nn {

/// A learnable tensor with its gradient accumulator and Adam moments.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix first_moment;
    Matrix second_moment;
    int group = 0;

    Parameter(std::string n, Matrix init, int g)
        : name(std::move(n)),
          value(std::move(init)),
          grad(Matrix::Zero(value.rows(), value.cols())),
          first_moment(Matrix::Zero(value.rows(), value.cols())),
          second_moment(Matrix::Zero(value.rows(), value.cols())),
          group(g) {}
};

/// Ordered, name-addressable collection of parameters. Addresses are stable
/// for the lifetime of the set, so layers hold raw `Parameter*` handles.
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet&) = delete;
    ParamSet& operator=(const ParamSet&) = delete;
    ParamSet(ParamSet&&) = default;
    ParamSet& operator=(ParamSet&&) = default;

    Parameter& add(std::string name, Matrix init, int group = 0) {
        if (find(name) != nullptr) {
            throw std::invalid_argument("duplicate parameter name: " + name);
        }
        params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init), group));
        return *params_.back();
    }

    [[nodiscard]] Parameter* find(const std::string& name) {
        for (auto& p : params_) {
            if (p->name == name) return p.get();
        }
        return nullptr;
    }
    [[nodiscard]] const Parameter* find(const std::string& name) const {
        for (const auto& p : params_) {
            if (p->name == name) return p.get();
        }
        return nullptr;
    }

    [[nodiscard]] std::size_t size() const { return params_.size(); }
    [[nodiscard]] Parameter& operator[](std::size_t i) { return *params_[i]; }
    [[nodiscard]] const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    [[nodiscard]] auto begin() const { return params_.begin(); }
    [[nodiscard]] auto end() const { return params_.end(); }

    [[nodiscard]] std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->grad.setZero();
    }

    [[nodiscard]] double grad_norm() const {
        double s = 0.0;
        for (const auto& p : params_) s += p->grad.squaredNorm();
        return std::sqrt(s);
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    double clip_grad_norm(double max_norm) {
        const double norm = grad_norm();
        if (norm > max_norm && norm > 0.0) {
            const double scale = max_norm / norm;
            for (auto& p : params_) p->grad *= scale;
        }
        return norm;
    }

    [[nodiscard]] std::int64_t step_count() const { return steps_; }
    void set_step_count(std::int64_t s) { steps_ = s; }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::int64_t steps_ = 0;
};

struct AdamOptions {
    /// Learning rate per parameter group, indexed by `Parameter::group`.
    std::vector<double> group_lr{1e-3};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with bias correction. Gradients are validated before any
/// parameter is touched; on success the gradient buffers are cleared.
inline void adam_step(ParamSet& params, const AdamOptions& opt) {
    for (const auto& p : params) {
        if (!p->grad.allFinite()) {
            throw NonFiniteError("gradient of " + p->name);
        }
        if (p->group < 0 || static_cast<std::size_t>(p->group) >= opt.group_lr.size()) {
            throw std::invalid_argument("no learning rate for group of " + p->name);
        }
    }
    const std::int64_t step = params.step_count() + 1;
    params.set_step_count(step);
    const double corr1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double corr2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    for (auto& p : params) {
        const double lr = opt.group_lr[static_cast<std::size_t>(p->group)];
        p->first_moment = opt.beta1 * p->first_moment + (1.0 - opt.beta1) * p->grad;
        p->second_moment =
            opt.beta2 * p->second_moment + (1.0 - opt.beta2) * p->grad.cwiseProduct(p->grad);
        const auto m_hat = p->first_moment.array() / corr1;
        const auto v_hat = p->second_moment.array() / corr2;
        p->value.array() -= lr * m_hat / (v_hat.sqrt() + opt.eps);
        p->grad.setZero();
    }
}

}  // namespace evodg::nn
