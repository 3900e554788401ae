#pragma once

#include "evodg/nn/params.hpp"
#include "evodg/nn/tensor.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace evodg::nn {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
    [[nodiscard]] double scalar() const { return value()(0, 0); }
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::size_t id() const { return id_; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Dynamic reverse-mode trace. Each forward op appends a node holding its
/// value and a closure that pushes the node's gradient to its inputs. A tape
/// built with `record = false` keeps values only (inference mode).
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] bool recording() const { return record_; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    Var constant(Matrix value) {
        require_finite(value, "constant");
        return emplace(std::move(value), false, nullptr, nullptr);
    }

    /// Leaf bound to a parameter. Repeated calls for the same parameter return
    /// the same node, so gradients from every use are summed on one leaf.
    Var param(Parameter& p) {
        if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
            return Var(this, it->second);
        }
        Var v = emplace(p.value, record_, nullptr, &p);
        param_nodes_.emplace(&p, v.id());
        return v;
    }
    Var param(const Parameter& p) {
        // Read-only use (inference on a shared snapshot). Never records.
        if (record_) return param(const_cast<Parameter&>(p));
        return emplace(p.value, false, nullptr, nullptr);
    }

    /// Appends an op result. `inputs` decides whether the node needs a gradient.
    Var push(Matrix value, std::initializer_list<Var> inputs, Backward fn, const char* op) {
        require_finite(value, op);
        bool needs = false;
        if (record_) {
            for (const Var& in : inputs) needs = needs || requires_grad(in);
        }
        return emplace(std::move(value), needs, needs ? std::move(fn) : Backward{}, nullptr);
    }
    Var push(Matrix value, std::span<const Var> inputs, Backward fn, const char* op) {
        require_finite(value, op);
        bool needs = false;
        if (record_) {
            for (const Var& in : inputs) needs = needs || requires_grad(in);
        }
        return emplace(std::move(value), needs, needs ? std::move(fn) : Backward{}, nullptr);
    }

    [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient of node `id` (only meaningful during/after backward).
    [[nodiscard]] const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

    template <class Expr>
    void accumulate(std::size_t id, const Expr& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Reverse sweep from a scalar node; adds d(loss)/d(param) into each bound
    /// Parameter's grad buffer. May be called repeatedly on the same tape.
    void backward(const Var& loss) {
        if (loss.rows() != 1 || loss.cols() != 1) {
            throw ShapeError("backward: loss must be 1x1, got " + shape_str(loss.value()));
        }
        for (auto& n : nodes_) n.grad.resize(0, 0);
        if (!requires_grad(loss)) return;
        nodes_[loss.id()].grad = Matrix::Ones(1, 1);
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.size() == 0) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param != nullptr) {
                n.param->grad += n.grad;
            }
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };

    Var emplace(Matrix value, bool needs, Backward fn, Parameter* p) {
        nodes_.push_back(Node{std::move(value), Matrix(), needs, std::move(fn), p});
        return Var(this, nodes_.size() - 1);
    }

    bool record_;
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Ops

namespace detail {

inline Matrix expand_rows(const Matrix& m, Eigen::Index rows) {
    if (m.rows() == rows) return m;
    return m.replicate(rows, 1);
}

inline Matrix reduce_to(const Matrix& g, Eigen::Index rows) {
    if (g.rows() == rows) return g;
    return g.colwise().sum();
}

inline Eigen::Index broadcast_rows(const Matrix& a, const Matrix& b, const char* op) {
    if (a.cols() != b.cols() ||
        (a.rows() != b.rows() && a.rows() != 1 && b.rows() != 1)) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                         shape_str(b));
    }
    if (a.rows() == 1 && b.rows() != 1) return b.rows();
    return a.rows();
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(av) + " * " + shape_str(bv));
    }
    Matrix out(av.rows(), bv.cols());
    out.noalias() = av * bv;
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), {a, b},
        [ia, ib](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
            if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
        },
        "matmul");
}

inline Var add(const Var& a, const Var& b) {
    const Eigen::Index rows = detail::broadcast_rows(a.value(), b.value(), "add");
    Matrix out = detail::expand_rows(a.value(), rows) + detail::expand_rows(b.value(), rows);
    const std::size_t ia = a.id(), ib = b.id();
    const Eigen::Index ra = a.rows(), rb = b.rows();
    return a.tape().push(std::move(out), {a, b},
        [ia, ib, ra, rb](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            if (t.requires_grad(ia)) t.accumulate(ia, detail::reduce_to(g, ra));
            if (t.requires_grad(ib)) t.accumulate(ib, detail::reduce_to(g, rb));
        },
        "add");
}

inline Var sub(const Var& a, const Var& b) {
    const Eigen::Index rows = detail::broadcast_rows(a.value(), b.value(), "sub");
    Matrix out = detail::expand_rows(a.value(), rows) - detail::expand_rows(b.value(), rows);
    const std::size_t ia = a.id(), ib = b.id();
    const Eigen::Index ra = a.rows(), rb = b.rows();
    return a.tape().push(std::move(out), {a, b},
        [ia, ib, ra, rb](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            if (t.requires_grad(ia)) t.accumulate(ia, detail::reduce_to(g, ra));
            if (t.requires_grad(ib)) t.accumulate(ib, -detail::reduce_to(g, rb));
        },
        "sub");
}

/// Elementwise (Hadamard) product with row broadcasting.
inline Var mul(const Var& a, const Var& b) {
    const Eigen::Index rows = detail::broadcast_rows(a.value(), b.value(), "mul");
    Matrix out = detail::expand_rows(a.value(), rows).cwiseProduct(detail::expand_rows(b.value(), rows));
    const std::size_t ia = a.id(), ib = b.id();
    const Eigen::Index ra = a.rows(), rb = b.rows();
    return a.tape().push(std::move(out), {a, b},
        [ia, ib, ra, rb, rows](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            if (t.requires_grad(ia)) {
                Matrix ga = g.cwiseProduct(detail::expand_rows(t.value(ib), rows));
                t.accumulate(ia, detail::reduce_to(ga, ra));
            }
            if (t.requires_grad(ib)) {
                Matrix gb = g.cwiseProduct(detail::expand_rows(t.value(ia), rows));
                t.accumulate(ib, detail::reduce_to(gb, rb));
            }
        },
        "mul");
}

inline Var scale(const Var& a, double s) {
    const std::size_t ia = a.id();
    return a.tape().push(a.value() * s, {a},
        [ia, s](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self) * s); }, "scale");
}

inline Var add_scalar(const Var& a, double s) {
    const std::size_t ia = a.id();
    Matrix out = a.value().array() + s;
    return a.tape().push(std::move(out), {a},
        [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self)); }, "add_scalar");
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// Elementwise map with derivative expressed through input x and output y.
template <class F, class DF>
Var unary(const Var& a, F f, DF df, const char* op) {
    Matrix out = a.value().unaryExpr(f);
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), {a},
        [ia, df](Tape& t, std::size_t self) {
            const Matrix& x = t.value(ia);
            const Matrix& y = t.value(self);
            const Matrix& g = t.grad(self);
            Matrix d(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                d.data()[i] = g.data()[i] * df(x.data()[i], y.data()[i]);
            }
            t.accumulate(ia, d);
        },
        op);
}

inline Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

inline Var log(const Var& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; },
                 "log");
}

inline Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; },
                 "square");
}

inline Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

inline Var leaky_relu(const Var& a, double slope) {
    return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                 [slope](double x, double) { return x > 0.0 ? 1.0 : slope; }, "leaky_relu");
}

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
    return unary(a, [](double x) { return sigmoid_value(x); },
                 [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; }, "tanh");
}

/// Clamp to [lo, hi]; gradient is zero where the bound is active.
inline Var clamp(const Var& a, double lo, double hi) {
    return unary(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                 [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; }, "clamp");
}

enum class Activation { relu, leaky_relu, sigmoid, tanh, identity };

inline Var activation(const Var& a, Activation kind, double slope = 0.2) {
    switch (kind) {
        case Activation::relu: return relu(a);
        case Activation::leaky_relu: return leaky_relu(a, slope);
        case Activation::sigmoid: return sigmoid(a);
        case Activation::tanh: return tanh(a);
        case Activation::identity: return a;
    }
    return a;
}

inline Var sum(const Var& a) {
    const std::size_t ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape().push(scalar_matrix(a.value().sum()), {a},
        [ia, r, c](Tape& t, std::size_t self) {
            t.accumulate(ia, Matrix::Constant(r, c, t.grad(self)(0, 0)));
        },
        "sum");
}

inline Var mean(const Var& a) {
    if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Per-row sum: (n x k) -> (n x 1).
inline Var row_sum(const Var& a) {
    const std::size_t ia = a.id();
    const Eigen::Index c = a.cols();
    Matrix out = a.value().rowwise().sum();
    return a.tape().push(std::move(out), {a},
        [ia, c](Tape& t, std::size_t self) {
            t.accumulate(ia, t.grad(self).replicate(1, c));
        },
        "row_sum");
}

inline Var concat_cols(const Var& a, const Var& b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows()) {
        throw ShapeError("concat_cols: row counts differ " + shape_str(av) + ", " + shape_str(bv));
    }
    Matrix out(av.rows(), av.cols() + bv.cols());
    out << av, bv;
    const std::size_t ia = a.id(), ib = b.id();
    const Eigen::Index ca = av.cols(), cb = bv.cols();
    return a.tape().push(std::move(out), {a, b},
        [ia, ib, ca, cb](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
            if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
        },
        "concat_cols");
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
    Matrix out = a.value().middleCols(start, count);
    const std::size_t ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape().push(std::move(out), {a},
        [ia, r, c, start, count](Tape& t, std::size_t self) {
            Matrix g = Matrix::Zero(r, c);
            g.middleCols(start, count) = t.grad(self);
            t.accumulate(ia, g);
        },
        "slice_cols");
}

inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<std::pair<std::size_t, Eigen::Index>> spans;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        spans.emplace_back(p.id(), p.rows());
        at += p.rows();
    }
    return parts.front().tape().push(std::move(out), parts,
        [spans = std::move(spans)](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            Eigen::Index off = 0;
            for (const auto& [id, n] : spans) {
                if (t.requires_grad(id)) t.accumulate(id, g.middleRows(off, n));
                off += n;
            }
        },
        "concat_rows");
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
    Matrix out = a.value().middleRows(start, count);
    const std::size_t ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape().push(std::move(out), {a},
        [ia, r, c, start, count](Tape& t, std::size_t self) {
            Matrix g = Matrix::Zero(r, c);
            g.middleRows(start, count) = t.grad(self);
            t.accumulate(ia, g);
        },
        "slice_rows");
}

/// Row-wise log-softmax, stabilized by subtracting the row max.
inline Var log_softmax_rows(const Var& a) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        const double lse = m + std::log((x.row(i).array() - m).exp().sum());
        out.row(i) = x.row(i).array() - lse;
    }
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), {a},
        [ia](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            const Matrix p = t.value(self).array().exp();
            Matrix d = g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
            t.accumulate(ia, d);
        },
        "log_softmax");
}

inline Var softmax_rows(const Var& a) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        auto e = (x.row(i).array() - m).exp();
        out.row(i) = e / e.sum();
    }
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), {a},
        [ia](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            const Matrix& y = t.value(self);
            const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
            Matrix d = (y.array() * (g.array().colwise() - dot.array())).matrix();
            t.accumulate(ia, d);
        },
        "softmax");
}

}  // namespace evodg::nn
