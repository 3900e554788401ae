#pragma once

#include "evodg/nn/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace evodg::nn {

/// Splittable SplitMix64 generator. `fork(id)` derives an independent child
/// stream keyed by the parent seed and `id`, so each draw site can own its
/// stream without consuming state from the parent.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : seed_(mix(seed ^ 0x9E3779B97F4A7C15ULL)), state_(seed_) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    [[nodiscard]] Rng fork(std::uint64_t stream) const {
        Rng child(0);
        child.seed_ = mix(seed_ ^ mix(stream + 0xD1B54A32D192ED03ULL));
        child.state_ = child.seed_;
        return child;
    }

    /// Uniform in the open interval (0, 1).
    double uniform() {
        // 53 random mantissa bits, offset by half an ulp to exclude both ends.
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gumbel() { return -std::log(-std::log(uniform())); }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) {
        // Lemire's multiply-shift with rejection.
        const std::uint64_t range = n;
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * range;
        auto low = static_cast<std::uint64_t>(m);
        if (low < range) {
            const std::uint64_t threshold = (0 - range) % range;
            while (low < threshold) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * range;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::size_t>(m >> 64);
    }

    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
        return m;
    }

    Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * uniform();
        return m;
    }

    Matrix gumbel_matrix(Eigen::Index rows, Eigen::Index cols) {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gumbel();
        return m;
    }

    template <class Container>
    void shuffle(Container& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            std::swap(c[i - 1], c[below(i)]);
        }
    }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace evodg::nn
