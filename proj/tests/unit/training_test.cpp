#include "evodg/data/synthetic.hpp"
#include "evodg/train/training.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace evodg;
using nn::Matrix;

namespace {

TrainConfig small_config(std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.d_c = 4;
    cfg.d_w = 4;
    cfg.rnn_hidden = 8;
    cfg.feature_width = 16;
    cfg.feature_depth = 2;
    cfg.batch_size = 8;
    cfg.epochs = 3;
    cfg.lr_main = 1e-3;
    cfg.lr_dyn = 1e-4;
    cfg.seed = seed;
    return cfg;
}

bool same_values(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols() || a[i] != b[i]) return false;
    }
    return true;
}

data::DomainSequence uneven_sequence() {
    auto seq = oracle::toy_sequence(3, 10, 2, 4);
    seq.domains[1].x = seq.domains[1].x.topRows(3).eval();
    seq.domains[1].y.resize(3);
    return seq;
}

}  // namespace

// -- sampler ------------------------------------------------------------------------

TEST(AlignedSampler, OneEqualBatchPerDomainInTimeOrder) {
    const auto seq = uneven_sequence();
    train::AlignedBatchSampler sampler(seq, 5, nn::Rng(1));
    for (int step = 0; step < 4; ++step) {
        const auto idx = sampler.next_indices();
        ASSERT_EQ(idx.size(), 3u);
        for (std::size_t t = 0; t < 3; ++t) {
            EXPECT_EQ(idx[t].size(), 5u);
            for (std::size_t i : idx[t]) EXPECT_LT(i, seq[t].size());
        }
    }
    const auto batch = train::AlignedBatchSampler(seq, 5, nn::Rng(1)).next();
    EXPECT_EQ(batch.steps(), 3u);
    for (const auto& x : batch.x) EXPECT_EQ(x.rows(), 5);
}

TEST(AlignedSampler, FullBatchCoversEveryRowOnce) {
    const auto seq = oracle::toy_sequence(4, 12, 2, 5);
    train::AlignedBatchSampler sampler(seq, 12, nn::Rng(2));
    for (int epoch = 0; epoch < 3; ++epoch) {
        for (const auto& idx : sampler.next_indices()) {
            EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 12u);
        }
    }
}

TEST(AlignedSampler, RowsMatchTheDrawnIndices) {
    const auto seq = uneven_sequence();
    train::AlignedBatchSampler a(seq, 4, nn::Rng(3)), b(seq, 4, nn::Rng(3));
    const auto idx = a.next_indices();
    const auto batch = b.next();
    for (std::size_t t = 0; t < idx.size(); ++t) {
        for (std::size_t i = 0; i < idx[t].size(); ++i) {
            EXPECT_EQ(batch.x[t].row(static_cast<Eigen::Index>(i)), seq[t].x.row(static_cast<Eigen::Index>(idx[t][i])));
            EXPECT_EQ(batch.y[t][i], seq[t].y[idx[t][i]]);
        }
    }
}

TEST(AlignedSampler, SeedFixesTheStream) {
    const auto seq = uneven_sequence();
    train::AlignedBatchSampler a(seq, 4, nn::Rng(9)), b(seq, 4, nn::Rng(9)), c(seq, 4, nn::Rng(10));
    bool differs = false;
    for (int step = 0; step < 5; ++step) {
        const auto ia = a.next_indices();
        EXPECT_EQ(ia, b.next_indices());
        differs = differs || ia != c.next_indices();
    }
    EXPECT_TRUE(differs);
}

TEST(AlignedSampler, RejectsEmptyDomainsAndBatches) {
    auto seq = oracle::toy_sequence(2, 4, 2, 1);
    EXPECT_THROW(train::AlignedBatchSampler(seq, 0, nn::Rng(0)), std::invalid_argument);
    seq.domains[1].x.resize(0, 2);
    seq.domains[1].y.clear();
    EXPECT_THROW(train::AlignedBatchSampler(seq, 2, nn::Rng(0)), data::DataError);
}

TEST(AlignedSampler, EpochLengthFollowsLargestDomain) {
    EXPECT_EQ(train::steps_per_epoch(uneven_sequence(), 4), 3);
    EXPECT_EQ(train::steps_per_epoch(oracle::toy_sequence(2, 100, 2, 0), 24), 5);
}

// -- LSSAE training -----------------------------------------------------------------

TEST(TrainLssae, ZeroEpochsReturnsInitialization) {
    const auto seq = oracle::toy_sequence(4, 16, 2, 2);
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto res = train::train_lssae(seq, {}, cfg);
    const model::LssaeModel fresh(2, 2, cfg);
    EXPECT_TRUE(same_values(res.final_model.values(), fresh.values()));
    EXPECT_TRUE(same_values(res.best_model.values(), fresh.values()));
    EXPECT_TRUE(res.record.epochs.empty());
    EXPECT_EQ(res.best_epoch, 0);
}

TEST(TrainLssae, SameSeedSameWeights) {
    const auto seq = oracle::toy_sequence(4, 20, 2, 3);
    const auto val = oracle::toy_sequence(2, 20, 2, 4, 4);
    const auto a = train::train_lssae(seq, val, small_config(5));
    const auto b = train::train_lssae(seq, val, small_config(5));
    const auto c = train::train_lssae(seq, val, small_config(6));
    EXPECT_TRUE(same_values(a.final_model.values(), b.final_model.values()));
    EXPECT_TRUE(same_values(a.best_model.values(), b.best_model.values()));
    EXPECT_FALSE(same_values(a.final_model.values(), c.final_model.values()));
    std::ostringstream ra, rb;
    train::write_run_record_csv(a.record, ra);
    train::write_run_record_csv(b.record, rb);
    EXPECT_EQ(ra.str(), rb.str());
}

TEST(TrainLssae, RecordHasOneEntryPerEpochAndWeightedTotals) {
    const auto seq = oracle::toy_sequence(3, 20, 2, 7);
    const auto val = oracle::toy_sequence(1, 20, 2, 8, 3);
    auto cfg = small_config();
    cfg.epochs = 4;
    cfg.lambda1 = 0.5;
    cfg.lambda2 = 2;
    cfg.lambda3 = 3;
    cfg.lambda_ts = 7;
    cfg.alpha = 1e-3;
    const auto res = train::train_lssae(seq, val, cfg);
    ASSERT_EQ(res.record.epochs.size(), 4u);
    EXPECT_EQ(res.record.config_echo, config_to_text(cfg));
    EXPECT_EQ(res.record.seed, cfg.seed);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& e = res.record.epochs[i];
        EXPECT_EQ(e.epoch, static_cast<int>(i) + 1);
        const double sum = e.recon + 0.5 * e.kl_c + 2 * e.kl_w + e.ce + 3 * e.kl_v + 7 * e.ts;
        EXPECT_NEAR(e.total, sum, 1e-9);
        EXPECT_GE(e.kl_c, 0);
        EXPECT_GE(e.kl_w, 0);
        EXPECT_GE(e.kl_v, 0);
        EXPECT_GE(e.ts, 0);
        EXPECT_GE(e.val_acc, 0);
        EXPECT_LE(e.val_acc, 100);
    }
    std::ostringstream csv;
    train::write_run_record_csv(res.record, csv);
    const std::string text = csv.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,recon,kl_c,kl_w,kl_v,ce,ts,total,val_acc");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}

TEST(TrainLssae, BestModelMatchesBestValidationEpoch) {
    const auto seq = oracle::toy_sequence(3, 20, 2, 9);
    const auto val = oracle::toy_sequence(2, 20, 2, 10, 3);
    auto cfg = small_config();
    cfg.epochs = 5;
    const auto res = train::train_lssae(seq, val, cfg);
    ASSERT_GE(res.best_epoch, 1);
    double best = -1;
    for (const auto& e : res.record.epochs) best = std::max(best, e.val_acc);
    EXPECT_EQ(res.record.epochs[static_cast<std::size_t>(res.best_epoch - 1)].val_acc, best);
    EXPECT_EQ(train::validation_accuracy(res.best_model, val, 0), best);
}

TEST(TrainLssae, NeedsTwoSourceDomains) {
    EXPECT_THROW(train::train_lssae(oracle::toy_sequence(1, 8, 2, 0), {}, small_config()), data::DataError);
}

TEST(TrainLssae, ReconstructionImprovesOnCircle) {
    // Shortened Circle run with the shipped learning rates.
    const auto parts = data::split_domains(data::gen_circle(), data::default_split(30));
    TrainConfig cfg = load_config(std::string(EVODG_SOURCE_DIR) + "/configs/circle.cfg").config;
    cfg.epochs = 15;
    const auto res = train::train_lssae(parts.source, parts.intermediate, cfg);
    EXPECT_LT(res.record.epochs.back().recon, res.record.epochs.front().recon);
}

TEST(TrainLssae, AllPriorVariantsTrainOnCircleC) {
    const auto parts = data::split_domains(data::generate_benchmark("circle-c", 0), data::default_split(30));
    for (PriorType p : {PriorType::categorical, PriorType::gaussian, PriorType::uniform, PriorType::none}) {
        auto cfg = small_config();
        cfg.batch_size = 24;
        cfg.epochs = 2;
        cfg.prior_type = p;
        const auto res = train::train_lssae(parts.source, parts.intermediate, cfg);
        ASSERT_EQ(res.record.epochs.size(), 2u) << to_string(p);
        for (const auto& e : res.record.epochs) {
            EXPECT_TRUE(std::isfinite(e.total)) << to_string(p);
            if (p == PriorType::none) {
                EXPECT_EQ(e.kl_v, 0.0);
            }
        }
        nn::Rng rng(0);
        const auto pred = eval::predict_target(res.best_model, eval::strip_labels(parts.target), 0,
                                               model::RolloutMode::mean, rng);
        EXPECT_EQ(pred.size(), 10u) << to_string(p);
    }
}

TEST(TrainStep, UpdatesBothGroupsAndNothingElse) {
    const auto cfg = small_config();
    model::LssaeModel m(2, 2, cfg);
    nn::ParamSet outside;
    outside.add("bystander", Matrix::Constant(2, 2, 0.5));
    const auto before = m.values();
    const auto seq = oracle::toy_sequence(3, 8, 2, 11);
    train::AlignedBatchSampler sampler(seq, 8, nn::Rng(0));
    train::lssae_step(m, sampler.next(), nn::Rng(1), train::detail::adam_for(cfg));
    std::set<int> moved_groups;
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (m.params()[i].value != before[i]) moved_groups.insert(m.params()[i].group);
        EXPECT_EQ(m.params()[i].grad.squaredNorm(), 0.0) << m.params()[i].name;
    }
    EXPECT_EQ(m.params().step_count(), 1);
    EXPECT_EQ(moved_groups, (std::set<int>{model::LssaeModel::kMainGroup, model::LssaeModel::kDynamicGroup}));
    EXPECT_EQ(outside[0].value, Matrix::Constant(2, 2, 0.5));
    EXPECT_EQ(outside.step_count(), 0);
}

TEST(TrainStep, GroupLearningRatesScaleFirstUpdate) {
    auto cfg = small_config();
    cfg.lr_main = 1e-3;
    cfg.lr_dyn = 1e-5;
    cfg.grad_clip = 0;
    model::LssaeModel m(2, 2, cfg);
    const auto before = m.values();
    const auto seq = oracle::toy_sequence(3, 8, 2, 12);
    train::AlignedBatchSampler sampler(seq, 8, nn::Rng(0));
    train::lssae_step(m, sampler.next(), nn::Rng(1), train::detail::adam_for(cfg));
    // The first Adam step moves each coordinate by at most its learning rate.
    for (std::size_t i = 0; i < before.size(); ++i) {
        const double lr = m.params()[i].group == 0 ? 1e-3 : 1e-5;
        EXPECT_LE((m.params()[i].value - before[i]).cwiseAbs().maxCoeff(), lr * (1 + 1e-6)) << m.params()[i].name;
    }
}

TEST(TrainStep, NumericalFailureNamesTheComponent) {
    const auto cfg = small_config();
    model::LssaeModel m(2, 2, cfg);
    m.params().find("decoder.fc3.bias")->value.setConstant(1e200);
    const auto seq = oracle::toy_sequence(3, 8, 2, 13);
    train::AlignedBatchSampler sampler(seq, 8, nn::Rng(0));
    try {
        train::lssae_step(m, sampler.next(), nn::Rng(1), train::detail::adam_for(cfg));
        FAIL() << "expected a numerical failure";
    } catch (const train::NumericalFailure& e) {
        EXPECT_EQ(e.component(), "recon");
        EXPECT_NE(std::string(e.what()).find("recon"), std::string::npos);
    }
}

TEST(TrainStep, PoisonedInputAbortsInForwardPass) {
    const auto cfg = small_config();
    model::LssaeModel m(2, 2, cfg);
    auto seq = oracle::toy_sequence(3, 8, 2, 14);
    seq.domains[2].x(0, 0) = std::numeric_limits<double>::quiet_NaN();
    train::AlignedBatchSampler sampler(seq, 8, nn::Rng(0));
    EXPECT_THROW(train::lssae_step(m, sampler.next(), nn::Rng(1), train::detail::adam_for(cfg)),
                 train::NumericalFailure);
}

TEST(Validation, NeverUsesTheLabelEncoder) {
    const auto seq = oracle::toy_sequence(3, 20, 2, 15);
    const auto val = oracle::toy_sequence(2, 20, 2, 16, 3);
    auto res = train::train_lssae(seq, val, small_config());
    const double clean = train::validation_accuracy(res.final_model, val, 0);
    for (auto& p : res.final_model.params()) {
        if (p->name.rfind("enc_v.", 0) == 0) p->value.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    EXPECT_EQ(train::validation_accuracy(res.final_model, val, 0), clean);
}

// -- ERM ----------------------------------------------------------------------------

TEST(TrainErm, SeparablePooledDataIsLearned) {
    const auto seq = oracle::toy_sequence(4, 100, 2, 17);
    auto cfg = small_config();
    cfg.epochs = 60;
    cfg.lr_main = 1e-2;
    const auto res = train::train_erm(seq, {}, cfg);
    EXPECT_GT(train::validation_accuracy(res.final_model, seq), 99.0);
}

TEST(TrainErm, DomainStampsPlayNoRole) {
    const auto seq = oracle::toy_sequence(3, 30, 2, 18);
    auto shifted = seq;
    for (auto& d : shifted.domains) d.time += 7;
    const auto cfg = small_config();
    const auto a = train::train_erm(seq, {}, cfg);
    const auto b = train::train_erm(shifted, {}, cfg);
    EXPECT_TRUE(same_values(a.final_model.values(), b.final_model.values()));
}

TEST(TrainErm, ZeroEpochsAndDeterminism) {
    const auto seq = oracle::toy_sequence(3, 30, 2, 19);
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto zero = train::train_erm(seq, {}, cfg);
    EXPECT_TRUE(same_values(zero.final_model.values(), model::ErmModel(2, 2, cfg).values()));
    EXPECT_TRUE(zero.record.epochs.empty());
    cfg.epochs = 2;
    EXPECT_TRUE(same_values(train::train_erm(seq, {}, cfg).final_model.values(),
                            train::train_erm(seq, {}, cfg).final_model.values()));
}

TEST(TrainErm, StepSeesAsManySamplesAsAnAlignedStep) {
    // 3 domains x batch 8 = 24 rows per step over 90 pooled rows -> 4 steps.
    const auto seq = oracle::toy_sequence(3, 30, 2, 20);
    auto cfg = small_config();
    cfg.epochs = 1;
    const auto res = train::train_erm(seq, {}, cfg);
    EXPECT_EQ(res.final_model.params().step_count(), 4);
}
