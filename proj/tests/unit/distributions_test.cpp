#include "evodg/dist/distributions.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace evodg;
using nn::Matrix;

namespace {

Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index j = 0;
    for (double x : v) m(0, j++) = x;
    return m;
}

Matrix log_probs(std::initializer_list<double> p) {
    Matrix m = row(p);
    return m.array().log().matrix();
}

dist::GaussianValues gauss(const Matrix& mean, const Matrix& log_var) { return {mean, log_var}; }

}  // namespace

// -- Gaussian KL ---------------------------------------------------------------

TEST(GaussianKl, IdenticalStandardNormalsGiveZero) {
    EXPECT_EQ(dist::gaussian_kl(gauss(Matrix::Zero(1, 4), Matrix::Zero(1, 4)),
                                gauss(Matrix::Zero(1, 4), Matrix::Zero(1, 4))),
              0.0);
}

TEST(GaussianKl, ShiftedMeanAgreesWithMonteCarlo) {
    const Matrix mq = row({1}), lq = row({0}), mp = row({0}), lp = row({0});
    const double closed = dist::gaussian_kl(gauss(mq, lq), gauss(mp, lp));
    EXPECT_NEAR(closed, 0.5, 1e-15);
    nn::Rng rng(101);
    const auto [mc, se] = oracle::gaussian_kl_monte_carlo(mq, lq, mp, lp, 1'000'000, rng);
    EXPECT_LE(std::abs(closed - mc), 3 * se);
}

TEST(GaussianKl, WiderVarianceAgreesWithMonteCarlo) {
    const Matrix mq = row({0}), lq = row({1}), mp = row({0}), lp = row({0});
    const double closed = dist::gaussian_kl(gauss(mq, lq), gauss(mp, lp));
    EXPECT_NEAR(closed, (std::exp(1.0) - 2) / 2, 1e-12);
    EXPECT_NEAR(closed, 0.359141, 1e-6);
    nn::Rng rng(102);
    const auto [mc, se] = oracle::gaussian_kl_monte_carlo(mq, lq, mp, lp, 1'000'000, rng);
    EXPECT_LE(std::abs(closed - mc), 3 * se);
}

TEST(GaussianKl, RandomPairsAgreeWithMonteCarlo) {
    nn::Rng rng(103);
    int outside = 0;
    for (int pair = 0; pair < 50; ++pair) {
        const Matrix mq = rng.normal_matrix(1, 3), mp = rng.normal_matrix(1, 3);
        const Matrix lq = rng.uniform_matrix(1, 3, -1, 1), lp = rng.uniform_matrix(1, 3, -1, 1);
        const double closed = dist::gaussian_kl(gauss(mq, lq), gauss(mp, lp));
        EXPECT_NEAR(closed, oracle::gaussian_kl_row(mq, lq, mp, lp, 0, 0), 1e-12);
        const auto [mc, se] = oracle::gaussian_kl_monte_carlo(mq, lq, mp, lp, 200'000, rng);
        if (std::abs(closed - mc) > 3 * se) ++outside;
    }
    // three standard errors leave a 0.27% chance per pair; allow one stray pair
    EXPECT_LE(outside, 1);
}

TEST(GaussianKl, NonNegativeAndZeroOnlyForEqualPairs) {
    nn::Rng rng(104);
    for (int i = 0; i < 200; ++i) {
        const Matrix mq = rng.normal_matrix(1, 4), lq = rng.uniform_matrix(1, 4, -3, 3);
        const Matrix mp = rng.normal_matrix(1, 4), lp = rng.uniform_matrix(1, 4, -3, 3);
        EXPECT_GT(dist::gaussian_kl(gauss(mq, lq), gauss(mp, lp)), 0.0);
        EXPECT_NEAR(dist::gaussian_kl(gauss(mq, lq), gauss(mq, lq)), 0.0, 1e-12);
    }
}

TEST(GaussianKl, BroadcastsSingleRowPrior) {
    nn::Tape tape(false);
    nn::Rng rng(105);
    const Matrix mq = rng.normal_matrix(3, 2), lq = rng.normal_matrix(3, 2);
    const Matrix mp = rng.normal_matrix(1, 2), lp = rng.normal_matrix(1, 2);
    const auto kl = dist::gaussian_kl(dist::on_tape(tape, {mq, lq}), dist::on_tape(tape, {mp, lp}));
    ASSERT_EQ(kl.rows(), 3);
    for (Eigen::Index i = 0; i < 3; ++i) {
        EXPECT_NEAR(kl.value()(i, 0), oracle::gaussian_kl_row(mq, lq, mp, lp, i, 0), 1e-12);
    }
}

TEST(GaussianKl, DimensionMismatchThrows) {
    EXPECT_THROW(dist::gaussian_kl(gauss(Matrix::Zero(1, 2), Matrix::Zero(1, 2)),
                                   gauss(Matrix::Zero(1, 3), Matrix::Zero(1, 3))),
                 nn::ShapeError);
    EXPECT_THROW(dist::gaussian_kl(gauss(Matrix::Zero(1, 2), Matrix::Zero(1, 3)),
                                   gauss(Matrix::Zero(1, 2), Matrix::Zero(1, 2))),
                 nn::ShapeError);
}

// -- categorical KL -----------------------------------------------------------

TEST(CategoricalKl, UniformAgainstUniformIsZero) {
    EXPECT_NEAR(dist::categorical_kl(Matrix::Zero(1, 5), Matrix::Zero(1, 5)), 0.0, 1e-15);
}

TEST(CategoricalKl, HandExampleAndAsymmetry) {
    const Matrix q = log_probs({0.5, 0.5});
    const Matrix p = log_probs({0.25, 0.75});
    const double forward = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    const double backward = 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
    EXPECT_NEAR(dist::categorical_kl(q, p), forward, 1e-12);
    EXPECT_NEAR(dist::categorical_kl(q, p), 0.143841, 1e-6);
    EXPECT_NEAR(dist::categorical_kl(p, q), backward, 1e-12);
    EXPECT_NEAR(dist::categorical_kl(p, q), 0.130812, 1e-6);
    EXPECT_NEAR(oracle::categorical_kl_row(q, p, 0, 0), forward, 1e-12);
}

TEST(CategoricalKl, RandomPairsMatchDirectSumAndMonteCarlo) {
    nn::Rng rng(106);
    for (int i = 0; i < 50; ++i) {
        const Matrix q = rng.normal_matrix(1, 4), p = rng.normal_matrix(1, 4);
        const double closed = dist::categorical_kl(q, p);
        EXPECT_GT(closed, 0.0);
        EXPECT_NEAR(closed, oracle::categorical_kl_row(q, p, 0, 0), 1e-12);
        EXPECT_NEAR(dist::categorical_kl(q, q), 0.0, 1e-12);
        // a constant logit shift does not change the distribution
        EXPECT_NEAR(dist::categorical_kl(q, (q.array() + 3.0).matrix()), 0.0, 1e-12);
    }
    const Matrix q = rng.normal_matrix(1, 4), p = rng.normal_matrix(1, 4);
    const auto [mc, se] = oracle::categorical_kl_monte_carlo(q, p, 500'000, rng);
    EXPECT_LE(std::abs(dist::categorical_kl(q, p) - mc), 3 * se);
}

TEST(CategoricalKl, DimensionMismatchThrows) {
    EXPECT_THROW(dist::categorical_kl(Matrix::Zero(1, 2), Matrix::Zero(1, 3)), nn::ShapeError);
}

TEST(Categorical, SoftmaxIsOnTheSimplex) {
    nn::Rng rng(107);
    for (int i = 0; i < 100; ++i) {
        const Matrix p = dist::softmax(rng.normal_matrix(1, 6) * 5.0);
        EXPECT_NEAR(p.sum(), 1.0, 1e-9);
        EXPECT_GT(p.minCoeff(), 0.0);
        EXPECT_LT(p.maxCoeff(), 1.0);
    }
}

// -- samplers -----------------------------------------------------------------

TEST(GaussianSample, VanishingVarianceReturnsMean) {
    nn::Tape tape(false);
    const Matrix mean = row({0.3, -1.2});
    nn::Rng rng(1);
    const auto z = dist::gaussian_sample(dist::on_tape(tape, {mean, row({-800, -800})}), rng);
    EXPECT_EQ(z.value(), mean);
}

TEST(GaussianSample, MomentsMatch) {
    const int n = 100'000;
    nn::Tape tape(false);
    const auto d = dist::on_tape(tape, {Matrix::Constant(n, 1, 2.0), Matrix::Constant(n, 1, std::log(4.0))});
    nn::Rng rng(2);
    const Matrix z = dist::gaussian_sample(d, rng).value();
    const double mean = z.mean();
    const double var = (z.array() - mean).square().sum() / (n - 1);
    EXPECT_NEAR(mean, 2.0, 0.1);
    EXPECT_NEAR(var, 4.0, 0.2);
}

TEST(GaussianSample, SameSeedSameDraw) {
    nn::Tape tape(false);
    const auto d = dist::on_tape(tape, {row({1, 2, 3}), row({0, 0.5, -0.5})});
    nn::Rng a(9), b(9);
    EXPECT_EQ(dist::gaussian_sample(d, a).value(), dist::gaussian_sample(d, b).value());
}

TEST(GaussianSample, GradientReachesMeanAndLogVar) {
    nn::ParamSet params;
    auto& mean = params.add("mean", row({0.5, -0.5}));
    auto& log_var = params.add("log_var", row({0.2, -0.3}));
    nn::Rng rng(3);
    const Matrix noise = rng.normal_matrix(1, 2);
    auto build = [&](nn::Tape& t) {
        return nn::sum(nn::square(dist::gaussian_sample({t.param(mean), t.param(log_var)}, noise)));
    };
    const auto res = oracle::finite_difference_check(
        params, [&] { nn::Tape t(false); return build(t).scalar(); },
        [&] { nn::Tape t; t.backward(build(t)); });
    EXPECT_LT(res.max_rel_error, 1e-4);
    EXPECT_GT(log_var.grad.cwiseAbs().minCoeff(), 0.0);
}

TEST(GumbelSoftmax, SharpLogitsConcentrateAtLowTemperature) {
    nn::Rng rng(4);
    nn::Tape tape(false);
    const auto d = dist::CategoricalDist{tape.constant(row({10, 0, 0}))};
    int hits = 0;
    for (int i = 0; i < 10'000; ++i) {
        nn::Tape draw(false);
        const Matrix z = dist::gumbel_softmax_sample({draw.constant(d.logits.value())}, 0.1, rng).value();
        ASSERT_NEAR(z.sum(), 1.0, 1e-9);
        if (z(0, 0) > 0.99) ++hits;
    }
    EXPECT_GE(hits, 9900);
}

TEST(GumbelSoftmax, HighTemperatureFlattens) {
    nn::Rng rng(5);
    int flat = 0;
    for (int i = 0; i < 10'000; ++i) {
        nn::Tape tape(false);
        const Matrix z = dist::gumbel_softmax_sample({tape.constant(Matrix::Zero(1, 3))}, 100.0, rng).value();
        ASSERT_NEAR(z.sum(), 1.0, 1e-9);
        ASSERT_GT(z.minCoeff(), 0.0);
        if (z.maxCoeff() < 0.5) ++flat;
    }
    EXPECT_GE(flat, 9900);
}

TEST(GumbelSoftmax, GradientWithFixedNoise) {
    nn::ParamSet params;
    auto& logits = params.add("logits", row({0.4, -0.2, 1.1}));
    nn::Rng rng(6);
    const Matrix noise = rng.gumbel_matrix(1, 3);
    const Matrix weights = row({1.0, -2.0, 0.5});
    auto build = [&](nn::Tape& t) {
        return nn::sum(nn::mul(dist::gumbel_softmax_sample({t.param(logits)}, 0.7, noise), t.constant(weights)));
    };
    const auto res = oracle::finite_difference_check(
        params, [&] { nn::Tape t(false); return build(t).scalar(); },
        [&] { nn::Tape t; t.backward(build(t)); });
    EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GumbelSoftmax, NonPositiveTemperatureThrows) {
    nn::Tape tape(false);
    nn::Rng rng(7);
    const dist::CategoricalDist d{tape.constant(Matrix::Zero(1, 3))};
    EXPECT_THROW(dist::gumbel_softmax_sample(d, 0.0, rng), std::invalid_argument);
    EXPECT_THROW(dist::gumbel_softmax_sample(d, -1.0, rng), std::invalid_argument);
}

// -- likelihood terms ---------------------------------------------------------

TEST(ReconLoglik, Examples) {
    nn::Tape tape(false);
    const auto x = tape.constant(row({0, 0}));
    EXPECT_EQ(dist::gaussian_recon_loglik(x, x).scalar(), 0.0);
    EXPECT_DOUBLE_EQ(dist::gaussian_recon_loglik(x, tape.constant(row({1, 1}))).scalar(), -1.0);
    Matrix two(2, 2);
    two << 0, 0, 0, 0;
    Matrix two_hat(2, 2);
    two_hat << 1, 1, 1, 1;
    EXPECT_DOUBLE_EQ(dist::gaussian_recon_loglik(tape.constant(two), tape.constant(two_hat)).scalar(), -1.0);
}

TEST(ReconLoglik, ShapeMismatchThrows) {
    nn::Tape tape(false);
    EXPECT_THROW(dist::gaussian_recon_loglik(tape.constant(row({0, 0})), tape.constant(row({0, 0, 0}))),
                 nn::ShapeError);
}

TEST(CrossEntropy, Examples) {
    nn::Tape tape(false);
    const std::vector<int> zero{0};
    EXPECT_NEAR(dist::cross_entropy(tape.constant(row({0, 0})), zero).scalar(), std::log(2.0), 1e-15);
    EXPECT_NEAR(dist::cross_entropy(tape.constant(row({1, 0})), zero).scalar(), 0.313262, 1e-6);
    EXPECT_NEAR(dist::cross_entropy(tape.constant(row({1, 0})), zero).scalar(),
                -std::log(std::exp(1.0) / (std::exp(1.0) + 1)), 1e-15);
    EXPECT_EQ(dist::cross_entropy(tape.constant(row({800, 0})), zero).scalar(), 0.0);
}

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
    nn::Tape tape(false);
    for (int c : {2, 3, 7}) {
        const std::vector<int> labels{c - 1, 0};
        EXPECT_NEAR(dist::cross_entropy(tape.constant(Matrix::Zero(2, c)), labels).scalar(), std::log(c), 1e-12);
    }
}

TEST(CrossEntropy, ShiftInvariance) {
    nn::Rng rng(8);
    nn::Tape tape(false);
    for (int i = 0; i < 50; ++i) {
        const Matrix logits = rng.normal_matrix(5, 3) * 4.0;
        std::vector<int> labels;
        for (int r = 0; r < 5; ++r) labels.push_back(static_cast<int>(rng.below(3)));
        const double c = rng.uniform() * 200 - 100;
        EXPECT_NEAR(dist::cross_entropy(tape.constant(logits), labels).scalar(),
                    dist::cross_entropy(tape.constant((logits.array() + c).matrix()), labels).scalar(), 1e-9);
    }
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
    nn::Tape tape(false);
    const std::vector<int> bad{2};
    const std::vector<int> negative{-1};
    EXPECT_THROW(dist::cross_entropy(tape.constant(row({0, 0})), bad), std::out_of_range);
    EXPECT_THROW(dist::cross_entropy(tape.constant(row({0, 0})), negative), std::out_of_range);
}
