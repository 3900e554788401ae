#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace evodg::nn {

/// Dense 64-bit tensor. Everything in this library is rank 2 (batch x features);
/// scalars are 1x1 and vectors are single rows.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces NaN/Inf. `where()` names the op or parameter.
class NonFiniteError : public std::runtime_error {
public:
    explicit NonFiniteError(std::string where)
        : std::runtime_error("non-finite value in " + where), where_(std::move(where)) {}

    [[nodiscard]] const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_finite(const Matrix& m, const char* where) {
    if (!m.allFinite()) {
        throw NonFiniteError(where);
    }
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

inline Matrix scalar_matrix(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return m;
}

}  // namespace evodg::nn
