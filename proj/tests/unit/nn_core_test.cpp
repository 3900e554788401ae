#include "evodg/nn/layers.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace evodg;
using nn::Matrix;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

struct AffineFixture {
    nn::ParamSet params;
    nn::Rng rng{1};
    nn::Affine layer;
    AffineFixture(Eigen::Index in, Eigen::Index out) : layer(params, "fc", in, out, 0, rng) {}
};

}  // namespace

TEST(Affine, IdentityWeightsPassInputThrough) {
    AffineFixture f(2, 2);
    f.layer.weight().value = Matrix::Identity(2, 2);
    nn::Tape tape;
    EXPECT_EQ(f.layer(tape, tape.constant(mat({{1, 2}}))).value(), mat({{1, 2}}));
}

TEST(Affine, HandMultiply) {
    AffineFixture f(2, 2);
    f.layer.weight().value = mat({{2, 0}, {0, 3}});
    f.layer.bias().value = mat({{1, 1}});
    nn::Tape tape;
    EXPECT_EQ(f.layer(tape, tape.constant(mat({{1, 0}}))).value(), mat({{3, 1}}));
}

TEST(Affine, EmptyBatchGivesEmptyOutput) {
    AffineFixture f(2, 3);
    nn::Tape tape;
    const auto y = f.layer(tape, tape.constant(Matrix(0, 2)));
    EXPECT_EQ(y.rows(), 0);
    EXPECT_EQ(y.cols(), 3);
}

TEST(Affine, RejectsWrongInputWidth) {
    AffineFixture f(2, 3);
    nn::Tape tape;
    EXPECT_THROW(f.layer(tape, tape.constant(Matrix::Zero(1, 3))), nn::ShapeError);
}

TEST(Affine, InitializationIsFanInBoundedWithZeroBias) {
    AffineFixture f(16, 8);
    EXPECT_LE(f.layer.weight().value.cwiseAbs().maxCoeff(), 0.25);
    EXPECT_TRUE(f.layer.bias().value.isZero());
}

TEST(Activation, Definitions) {
    nn::Tape tape;
    const auto x = tape.constant(mat({{-1, 3, 0}}));
    EXPECT_EQ(nn::relu(x).value(), mat({{0, 3, 0}}));
    EXPECT_DOUBLE_EQ(nn::leaky_relu(x, 0.2).value()(0, 0), -0.2);
    EXPECT_DOUBLE_EQ(nn::leaky_relu(x, 0.2).value()(0, 1), 3.0);
    EXPECT_DOUBLE_EQ(nn::sigmoid(x).value()(0, 2), 0.5);
    EXPECT_DOUBLE_EQ(nn::tanh(x).value()(0, 2), 0.0);
}

TEST(Activation, SigmoidIsStableForLargeInputs) {
    nn::Tape tape;
    const auto y = nn::sigmoid(tape.constant(mat({{-800, 800}}))).value();
    EXPECT_EQ(y(0, 0), 0.0);
    EXPECT_EQ(y(0, 1), 1.0);
}

TEST(Lstm, ZeroWeightsGiveZeroOutput) {
    nn::ParamSet params;
    nn::Rng rng(3);
    nn::LstmCell cell(params, "lstm", 3, 4, 0, rng);
    for (auto& p : params) p->value.setZero();
    nn::Tape tape;
    const auto s = cell.step(tape, tape.constant(rng.normal_matrix(2, 3)), nn::StateVars::from(tape, cell.zero_state(2)));
    EXPECT_TRUE(s.hidden.value().isZero());
    EXPECT_TRUE(s.cell.value().isZero());
}

TEST(Lstm, MatchesScalarHandComputation) {
    nn::ParamSet params;
    nn::Rng rng(3);
    nn::LstmCell cell(params, "lstm", 1, 1, 0, rng);
    // gate order: input, forget, candidate, output
    params[0].value = mat({{0.5, -0.3, 0.8, 0.1}});
    params[1].value = mat({{0.2, 0.4, -0.6, 0.7}});
    params[2].value = mat({{0.05, 0.1, -0.2, 0.3}});
    const double x = 0.9, h = -0.4, c = 0.25;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double i = sig(0.5 * x + 0.2 * h + 0.05);
    const double f = sig(-0.3 * x + 0.4 * h + 0.1);
    const double g = std::tanh(0.8 * x - 0.6 * h - 0.2);
    const double o = sig(0.1 * x + 0.7 * h + 0.3);
    const double c_next = f * c + i * g;
    const double h_next = o * std::tanh(c_next);

    nn::Tape tape;
    const auto s = cell.step(tape, tape.constant(mat({{x}})), nn::StateVars::from(tape, {mat({{h}}), mat({{c}})}));
    EXPECT_NEAR(s.hidden.scalar(), h_next, 1e-12);
    EXPECT_NEAR(s.cell.scalar(), c_next, 1e-12);
}

TEST(Lstm, DeterministicAcrossRuns) {
    auto run = [] {
        nn::ParamSet params;
        nn::Rng rng(11);
        nn::LstmCell cell(params, "lstm", 3, 5, 0, rng);
        nn::Tape tape;
        auto s = nn::StateVars::from(tape, cell.zero_state(2));
        nn::Rng data(4);
        for (int t = 0; t < 4; ++t) s = cell.step(tape, tape.constant(data.normal_matrix(2, 3)), s);
        return s.snapshot();
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.hidden, b.hidden);
    EXPECT_EQ(a.cell, b.cell);
}

TEST(Lstm, RejectsMismatchedState) {
    nn::ParamSet params;
    nn::Rng rng(3);
    nn::LstmCell cell(params, "lstm", 3, 4, 0, rng);
    nn::Tape tape;
    EXPECT_THROW(cell.step(tape, tape.constant(Matrix::Zero(2, 3)), nn::StateVars::from(tape, cell.zero_state(3))),
                 nn::ShapeError);
    EXPECT_THROW(nn::StateVars::from(tape, {Matrix::Zero(1, 4), Matrix::Zero(1, 5)}), nn::ShapeError);
}

TEST(Backward, LinearGradientReplicatesInput) {
    nn::ParamSet params;
    auto& w = params.add("w", Matrix::Zero(3, 2));
    nn::Tape tape;
    const Matrix x = mat({{1, 2, 3}});
    tape.backward(nn::sum(nn::matmul(tape.constant(x), tape.param(w))));
    EXPECT_EQ(w.grad, mat({{1, 1}, {2, 2}, {3, 3}}));
}

TEST(Backward, DisconnectedParameterGetsZero) {
    nn::ParamSet params;
    auto& a = params.add("a", mat({{2}}));
    auto& b = params.add("b", mat({{5}}));
    nn::Tape tape;
    tape.param(b);
    tape.backward(nn::square(tape.param(a)));
    EXPECT_DOUBLE_EQ(a.grad(0, 0), 4.0);
    EXPECT_DOUBLE_EQ(b.grad(0, 0), 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
    nn::ParamSet params;
    auto& a = params.add("a", mat({{2, 3}}));
    nn::Tape tape;
    EXPECT_THROW(tape.backward(tape.param(a)), nn::ShapeError);
}

TEST(Backward, AccumulationIsLinear) {
    nn::ParamSet params;
    nn::Rng rng(5);
    nn::Mlp net(params, "net", {3, 4, 1}, nn::Activation::tanh, 0, rng);
    const Matrix x = rng.normal_matrix(5, 3);
    auto loss_a = [&](nn::Tape& t) { return nn::sum(nn::square(net(t, t.constant(x)))); };
    auto loss_b = [&](nn::Tape& t) { return nn::mean(net(t, t.constant(x))); };
    {
        nn::Tape t1;
        t1.backward(loss_a(t1));
        nn::Tape t2;
        t2.backward(loss_b(t2));
    }
    std::vector<Matrix> separate;
    for (auto& p : params) separate.push_back(p->grad);
    params.zero_grad();
    nn::Tape t3;
    t3.backward(loss_a(t3) + loss_b(t3));
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_LT((params[i].grad - separate[i]).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Backward, TwoLayerNetMatchesFiniteDifferences) {
    nn::ParamSet params;
    nn::Rng rng(9);
    nn::Mlp net(params, "net", {2, 3, 2}, nn::Activation::tanh, 0, rng);
    EXPECT_EQ(params.scalar_count(), 17u);
    params.add("extra", rng.normal_matrix(1, 3));
    const Matrix x = rng.normal_matrix(4, 2);
    auto build = [&](nn::Tape& t) {
        return nn::sum(nn::square(net(t, t.constant(x)))) + nn::sum(nn::mul(t.param(*params.find("extra")),
                                                                             t.param(*params.find("extra"))));
    };
    const auto res = oracle::finite_difference_check(
        params, [&] { nn::Tape t(false); return build(t).scalar(); },
        [&] { nn::Tape t; t.backward(build(t)); });
    EXPECT_EQ(res.checked, 20u);
    EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Tape, NonFiniteResultIsAnError) {
    nn::Tape tape;
    EXPECT_THROW(nn::log(tape.constant(mat({{-1.0}}))), nn::NonFiniteError);
    EXPECT_THROW(tape.constant(mat({{NAN}})), nn::NonFiniteError);
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
    nn::ParamSet params;
    auto& p = params.add("p", mat({{1.5, -2}}));
    nn::adam_step(params, {{1e-2}});
    EXPECT_EQ(p.value, mat({{1.5, -2}}));
    EXPECT_EQ(params.step_count(), 1);
}

TEST(Adam, FirstStepIsSignScaledLearningRate) {
    nn::ParamSet params;
    auto& p = params.add("p", mat({{0, 0}}));
    p.grad = mat({{1e3, -1e3}});
    const double lr = 0.01;
    nn::adam_step(params, {{lr}});
    // m_hat = g, v_hat = g^2 on the first step, so the update is -lr*g/(|g|+eps)
    EXPECT_NEAR(p.value(0, 0), -lr * 1e3 / (1e3 + 1e-8), 1e-15);
    EXPECT_NEAR(p.value(0, 1), lr * 1e3 / (1e3 + 1e-8), 1e-15);
    EXPECT_TRUE(p.grad.isZero());
}

TEST(Adam, GroupsUseTheirOwnLearningRate) {
    nn::ParamSet params;
    auto& a = params.add("a", mat({{0}}), 0);
    auto& b = params.add("b", mat({{0}}), 1);
    a.grad(0, 0) = 1;
    b.grad(0, 0) = 1;
    nn::adam_step(params, {{1e-3, 1e-1}});
    EXPECT_NEAR(a.value(0, 0), -1e-3, 1e-10);
    EXPECT_NEAR(b.value(0, 0), -1e-1, 1e-8);
}

TEST(Adam, NonFiniteGradientAbortsAndNamesParameter) {
    nn::ParamSet params;
    auto& a = params.add("a", mat({{1}}));
    auto& b = params.add("layer.weight", mat({{1}}));
    a.grad(0, 0) = 1;
    b.grad(0, 0) = NAN;
    try {
        nn::adam_step(params, {{0.1}});
        FAIL() << "expected NonFiniteError";
    } catch (const nn::NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
    }
    EXPECT_DOUBLE_EQ(a.value(0, 0), 1.0);
    EXPECT_EQ(params.step_count(), 0);
}

TEST(ParamSet, RejectsDuplicateNames) {
    nn::ParamSet params;
    params.add("w", mat({{1}}));
    EXPECT_THROW(params.add("w", mat({{1}})), std::invalid_argument);
}

TEST(ParamSet, ClipScalesToMaxNorm) {
    nn::ParamSet params;
    auto& p = params.add("p", mat({{0, 0}}));
    p.grad = mat({{30, 40}});
    EXPECT_DOUBLE_EQ(params.clip_grad_norm(10), 50.0);
    EXPECT_NEAR(params.grad_norm(), 10.0, 1e-12);
}

TEST(Rng, ForkedStreamsAreReproducibleAndDistinct) {
    const nn::Rng root(42);
    nn::Rng a = root.fork(1);
    nn::Rng b = root.fork(1);
    nn::Rng c = root.fork(2);
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
}

TEST(Rng, UniformStaysInsideOpenInterval) {
    nn::Rng rng(0);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Rng, NormalMomentsAreStandard) {
    nn::Rng rng(1);
    double s = 0, ss = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        ss += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(ss / n, 1.0, 0.01);
}

TEST(FiniteDifferenceOracle, WrongGradientIsNotMistakenForKink) {
    nn::ParamSet params;
    auto& p = params.add("p", mat({{0.3, -1.2, 2.0}}));
    const auto res = oracle::finite_difference_check(
        params, [&] { return p.value.squaredNorm(); }, [&] { p.grad = 3.0 * p.value; }, 1e-5, 1e-4);
    EXPECT_EQ(res.skipped, 0u);
    EXPECT_GT(res.max_rel_error, 0.3);
}

TEST(FiniteDifferenceOracle, KinkInsideStepIsSkipped) {
    nn::ParamSet params;
    auto& p = params.add("p", mat({{4e-6, 0.5}}));
    auto relu_sum = [&] { return p.value.cwiseMax(0.0).sum(); };
    const auto res = oracle::finite_difference_check(
        params, relu_sum, [&] { p.grad = (p.value.array() > 0).cast<double>().matrix(); }, 1e-5, 1e-4);
    EXPECT_EQ(res.skipped, 1u);
    EXPECT_LT(res.max_rel_error, 1e-8);
}
