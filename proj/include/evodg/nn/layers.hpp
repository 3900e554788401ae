#pragma once

#include "evodg/nn/params.hpp"
#include "evodg/nn/rng.hpp"
#include "evodg/nn/tape.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace evodg::nn {

/// y = x W + b with W stored (in x out) and b (1 x out).
class Affine {
public:
    Affine() = default;

    /// Uniform fan-in initialization U(-1/sqrt(in), 1/sqrt(in)), zero bias.
    Affine(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out, int group,
           Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(in, 1)));
        weight_ = &params.add(name + ".weight", rng.uniform_matrix(in, out, -bound, bound), group);
        bias_ = &params.add(name + ".bias", Matrix::Zero(1, out), group);
    }

    [[nodiscard]] Eigen::Index in_features() const { return weight_->value.rows(); }
    [[nodiscard]] Eigen::Index out_features() const { return weight_->value.cols(); }
    [[nodiscard]] Parameter& weight() const { return *weight_; }
    [[nodiscard]] Parameter& bias() const { return *bias_; }

    Var operator()(Tape& tape, const Var& x) const {
        if (x.cols() != in_features()) {
            throw ShapeError("affine " + weight_->name + ": input width " + std::to_string(x.cols()) +
                             " != " + std::to_string(in_features()));
        }
        return add(matmul(x, tape.param(*weight_)), tape.param(*bias_));
    }

private:
    Parameter* weight_ = nullptr;
    Parameter* bias_ = nullptr;
};

/// Stack of affine layers with an activation between consecutive layers
/// (none after the last one).
class Mlp {
public:
    Mlp() = default;
    Mlp(ParamSet& params, const std::string& name, const std::vector<Eigen::Index>& widths,
        Activation act, int group, Rng& rng, double slope = 0.2)
        : act_(act), slope_(slope) {
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            layers_.emplace_back(params, name + ".fc" + std::to_string(i), widths[i], widths[i + 1],
                                 group, rng);
        }
    }

    [[nodiscard]] Eigen::Index in_features() const { return layers_.front().in_features(); }
    [[nodiscard]] Eigen::Index out_features() const { return layers_.back().out_features(); }
    [[nodiscard]] const std::vector<Affine>& layers() const { return layers_; }

    Var operator()(Tape& tape, Var x) const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            x = layers_[i](tape, x);
            if (i + 1 < layers_.size()) x = activation(x, act_, slope_);
        }
        return x;
    }

private:
    std::vector<Affine> layers_;
    Activation act_ = Activation::relu;
    double slope_ = 0.2;
};

/// Hidden and cell vectors of an LSTM (one row per sequence in the batch).
struct RecurrentState {
    Matrix hidden;
    Matrix cell;

    static RecurrentState zeros(Eigen::Index batch, Eigen::Index width) {
        return {Matrix::Zero(batch, width), Matrix::Zero(batch, width)};
    }
};

/// Recurrent state living on a tape.
struct StateVars {
    Var hidden;
    Var cell;

    static StateVars from(Tape& tape, const RecurrentState& s) {
        if (s.hidden.rows() != s.cell.rows() || s.hidden.cols() != s.cell.cols()) {
            throw ShapeError("recurrent state: hidden " + shape_str(s.hidden) + " vs cell " +
                             shape_str(s.cell));
        }
        return {tape.constant(s.hidden), tape.constant(s.cell)};
    }
    [[nodiscard]] RecurrentState snapshot() const { return {hidden.value(), cell.value()}; }
};

/// Standard LSTM cell, gate blocks ordered (input, forget, candidate, output):
///   i = sig(.), f = sig(.), g = tanh(.), o = sig(.)
///   c' = f*c + i*g,  h' = o*tanh(c')
class LstmCell {
public:
    LstmCell() = default;
    LstmCell(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index hidden, int group,
             Rng& rng)
        : hidden_(hidden) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
        w_input_ = &params.add(name + ".w_input", rng.uniform_matrix(in, 4 * hidden, -bound, bound), group);
        w_hidden_ =
            &params.add(name + ".w_hidden", rng.uniform_matrix(hidden, 4 * hidden, -bound, bound), group);
        bias_ = &params.add(name + ".bias", Matrix::Zero(1, 4 * hidden), group);
    }

    [[nodiscard]] Eigen::Index in_features() const { return w_input_->value.rows(); }
    [[nodiscard]] Eigen::Index hidden_size() const { return hidden_; }

    [[nodiscard]] RecurrentState zero_state(Eigen::Index batch) const {
        return RecurrentState::zeros(batch, hidden_);
    }

    StateVars step(Tape& tape, const Var& x, const StateVars& state) const {
        if (x.cols() != in_features()) {
            throw ShapeError("lstm " + w_input_->name + ": input width " + std::to_string(x.cols()) +
                             " != " + std::to_string(in_features()));
        }
        if (state.hidden.cols() != hidden_ || state.cell.cols() != hidden_ ||
            state.hidden.rows() != x.rows() || state.cell.rows() != x.rows()) {
            throw ShapeError("lstm: state " + shape_str(state.hidden.value()) + " does not match batch " +
                             std::to_string(x.rows()) + " x hidden " + std::to_string(hidden_));
        }
        const Var gates = add(add(matmul(x, tape.param(*w_input_)),
                                  matmul(state.hidden, tape.param(*w_hidden_))),
                              tape.param(*bias_));
        const Var i = sigmoid(slice_cols(gates, 0, hidden_));
        const Var f = sigmoid(slice_cols(gates, hidden_, hidden_));
        const Var g = tanh(slice_cols(gates, 2 * hidden_, hidden_));
        const Var o = sigmoid(slice_cols(gates, 3 * hidden_, hidden_));
        const Var c = add(mul(f, state.cell), mul(i, g));
        const Var h = mul(o, tanh(c));
        return {h, c};
    }

    Parameter& w_input() const { return *w_input_; }
    Parameter& w_hidden() const { return *w_hidden_; }
    Parameter& bias() const { return *bias_; }

private:
    Parameter* w_input_ = nullptr;
    Parameter* w_hidden_ = nullptr;
    Parameter* bias_ = nullptr;
    Eigen::Index hidden_ = 0;
};

}  // namespace evodg::nn
