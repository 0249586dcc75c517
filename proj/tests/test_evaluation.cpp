#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmm/evaluation.hpp"
#include "dmm/synthetic.hpp"
#include "oracles.hpp"

using namespace dmm;

namespace {

constexpr double kExact = 1e-9;

MotionSplit offset_copy(const MotionSplit& m, double pose_dx, double hip_dx)
{
    MotionSplit c = m;
    for (std::size_t t = 0; t < c.length(); ++t) {
        for (std::size_t j = 1; j < kJoints; ++j) {
            c.pose.at(t, 3 * j) += pose_dx;
        }
        c.hip.at(t, 0) += hip_dx;
    }
    return c;
}

std::vector<SamplePair> corpus(std::size_t scenarios, std::size_t modes = 3)
{
    SynthConfig sc;
    sc.scenarios = scenarios;
    sc.modes_per_observation = modes;
    return generate_synthetic_corpus(sc, 5);
}

} // namespace

TEST(EvalOracle, RandomInstancesMatchBruteForce)
{
    Rng rng(201);
    for (int i = 0; i < 150; ++i) {
        const std::size_t n = 2 + rng.below(6), z = 1 + rng.below(8);
        const auto set = oracle::random_set(rng, n, z);
        const auto gt = oracle::random_motion(rng, z);
        EXPECT_NEAR(apd(set), oracle::apd(oracle::poses_of(set)), kExact);
        const auto a = ade(set, gt);
        const auto oa = oracle::ade(set, gt);
        EXPECT_NEAR(a.pose, oa.pose, kExact) << "instance " << i;
        EXPECT_NEAR(a.hip, oa.hip, kExact) << "instance " << i;
        const auto f = fde(set, gt);
        const auto of = oracle::fde(set, gt);
        EXPECT_NEAR(f.pose, of.pose, kExact) << "instance " << i;
        EXPECT_NEAR(f.hip, of.hip, kExact) << "instance " << i;

        std::vector<MotionSplit> group{gt};
        for (std::size_t g = rng.below(3); g > 0; --g) {
            group.push_back(oracle::random_motion(rng, z));
        }
        const auto mm = made_mfde(set, group);
        const auto om = oracle::made_mfde(set, group);
        EXPECT_NEAR(mm.made_pose, om[0], kExact);
        EXPECT_NEAR(mm.made_hip, om[1], kExact);
        EXPECT_NEAR(mm.mfde_pose, om[2], kExact);
        EXPECT_NEAR(mm.mfde_hip, om[3], kExact);
    }
}

TEST(EvalTrivial, ApdOfIdenticalSamplesIsZero)
{
    Rng rng(1);
    const auto m = oracle::random_motion(rng, 6);
    PredictionSet set;
    set.samples.assign(4, m);
    EXPECT_EQ(apd(set), 0.0);
}

TEST(EvalTrivial, ApdOfConstantOffset)
{
    Rng rng(2);
    const auto a = oracle::random_motion(rng, 20);
    MotionSplit b = a;
    for (auto& v : b.pose.values()) {
        v += 0.1;
    }
    PredictionSet set;
    set.samples = {a, b};
    EXPECT_NEAR(apd(set), 0.1 * std::sqrt(20.0 * 51.0), kExact);
    EXPECT_NEAR(apd(set), 3.1937, 1e-4);
}

TEST(EvalTrivial, ApdIsPermutationInvariant)
{
    Rng rng(3);
    auto set = oracle::random_set(rng, 5, 4);
    const double before = apd(set);
    std::swap(set.samples[0], set.samples[3]);
    std::swap(set.samples[1], set.samples[4]);
    EXPECT_NEAR(apd(set), before, kExact);
}

TEST(EvalTrivial, ApdNeedsTwoSamples)
{
    Rng rng(4);
    EXPECT_THROW(apd(oracle::random_set(rng, 1, 3)), DataError);
}

TEST(EvalTrivial, SampleEqualToGroundTruth)
{
    Rng rng(5);
    auto set = oracle::random_set(rng, 4, 5);
    const MotionSplit gt = set.samples[2];
    const auto a = ade(set, gt);
    const auto f = fde(set, gt);
    EXPECT_EQ(a.pose, 0.0);
    EXPECT_EQ(a.hip, 0.0);
    EXPECT_EQ(f.pose, 0.0);
    EXPECT_EQ(f.hip, 0.0);
    EXPECT_EQ(a.index, 2u);
}

TEST(EvalTrivial, ConstantPoseOffset)
{
    Rng rng(6);
    const auto gt = oracle::random_motion(rng, 5);
    PredictionSet set;
    set.samples = {offset_copy(gt, 0.5, 0.5), offset_copy(gt, 0.1, 0.0)};
    const auto a = ade(set, gt);
    EXPECT_NEAR(a.pose, 0.1, kExact);
    EXPECT_NEAR(a.hip, 0.0, kExact);
}

TEST(EvalTrivial, FinalFrameOffsets)
{
    Rng rng(7);
    const auto gt = oracle::random_motion(rng, 5);
    PredictionSet set;
    set.samples = {offset_copy(gt, 0.2, 0.3)};
    set.samples[0].fps = gt.fps;
    // a single sample needs no selection; fde only reads the final frame
    const auto f = fde(set, gt);
    EXPECT_NEAR(f.pose, 0.2, kExact);
    EXPECT_NEAR(f.hip, 0.3, kExact);
}

TEST(EvalTrivial, FinalSelectionCanDifferFromAverageSelection)
{
    Rng rng(8);
    const auto gt = oracle::random_motion(rng, 4);
    // sample 1: small error everywhere; sample 2: large early error, exact at the end
    MotionSplit close_on_average = offset_copy(gt, 0.05, 0.0);
    MotionSplit close_at_end = gt;
    for (std::size_t t = 0; t + 1 < gt.length(); ++t) {
        for (std::size_t j = 1; j < kJoints; ++j) {
            close_at_end.pose.at(t, 3 * j + 1) += 1.0;
        }
    }
    PredictionSet set;
    set.samples = {close_on_average, close_at_end};
    const auto a = ade(set, gt);
    const auto f = fde(set, gt);
    EXPECT_EQ(a.index, 0u);
    EXPECT_EQ(f.index, 1u);
    EXPECT_NEAR(a.pose, 0.05, kExact);
    EXPECT_EQ(f.pose, 0.0);
    EXPECT_EQ(f.hip, 0.0);
}

TEST(EvalTrivial, HorizonMismatchThrows)
{
    Rng rng(9);
    const auto set = oracle::random_set(rng, 2, 4);
    EXPECT_THROW(ade(set, oracle::random_motion(rng, 5)), ShapeError);
    EXPECT_THROW(fde(set, oracle::random_motion(rng, 3)), ShapeError);
    EXPECT_THROW(made_mfde(set, {}), DataError);
}

TEST(EvalTrivial, MultiModalReductions)
{
    Rng rng(10);
    const auto set = oracle::random_set(rng, 3, 5);
    const auto gt = oracle::random_motion(rng, 5);
    const std::vector<MotionSplit> single{gt};
    const auto mm = made_mfde(set, single);
    EXPECT_EQ(mm.made_pose, ade(set, gt).pose);
    EXPECT_EQ(mm.made_hip, ade(set, gt).hip);
    EXPECT_EQ(mm.mfde_pose, fde(set, gt).pose);
    EXPECT_EQ(mm.mfde_hip, fde(set, gt).hip);

    const std::vector<MotionSplit> covered{set.samples[0], set.samples[2]};
    const auto both = made_mfde(set, covered);
    EXPECT_EQ(both.made_pose, 0.0);
    EXPECT_EQ(both.made_hip, 0.0);

    // made never exceeds the worst member's ade
    const std::vector<MotionSplit> group{gt, oracle::random_motion(rng, 5), oracle::random_motion(rng, 5)};
    double worst = 0;
    for (const auto& g : group) {
        worst = std::max(worst, ade(set, g).pose);
    }
    EXPECT_LE(made_mfde(set, group).made_pose, worst + kExact);
}

TEST(EvalTrivial, MetricsAreTranslationInvariant)
{
    Rng rng(11);
    auto set = oracle::random_set(rng, 3, 4);
    auto gt = oracle::random_motion(rng, 4);
    const auto a0 = ade(set, gt);
    const auto f0 = fde(set, gt);
    auto shift = [](MotionSplit& m) {
        for (std::size_t t = 0; t < m.length(); ++t) {
            m.hip.at(t, 0) += 4.0;
            m.hip.at(t, 2) -= 1.5;
        }
    };
    for (auto& s : set.samples) {
        shift(s);
    }
    shift(gt);
    EXPECT_NEAR(ade(set, gt).pose, a0.pose, kExact);
    EXPECT_NEAR(ade(set, gt).hip, a0.hip, kExact);
    EXPECT_NEAR(fde(set, gt).pose, f0.pose, kExact);
    EXPECT_NEAR(fde(set, gt).hip, f0.hip, kExact);
}

TEST(Grouping, ModeLabelsGroupSharedObservations)
{
    const auto data = corpus(4, 3);
    const auto groups = group_multimodal(data, EvalConfig{});
    ASSERT_EQ(groups.size(), data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(groups[i].size(), 3u) << "item " << i;
        for (const std::size_t j : groups[i]) {
            EXPECT_EQ(j / 3, i / 3);
        }
    }
}

TEST(Grouping, ZeroThresholdGroupsIdenticalPasts)
{
    auto data = corpus(3, 2);
    for (auto& p : data) {
        p.mode_label.reset();
    }
    EvalConfig c;
    c.use_mode_labels = false;
    c.tau = 0.0;
    const auto groups = group_multimodal(data, c);
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(groups[i].size(), 2u);
    }
}

TEST(Grouping, InfiniteThresholdMakesOneGroup)
{
    const auto data = corpus(3, 2);
    EvalConfig c;
    c.use_mode_labels = false;
    c.tau = std::numeric_limits<double>::infinity();
    for (const auto& g : group_multimodal(data, c)) {
        EXPECT_EQ(g.size(), data.size());
    }
}

TEST(Evaluate, OracleModelHasZeroError)
{
    const auto data = corpus(5);
    EvalConfig c;
    const auto r = evaluate(oracle_predictor(10), data, c, "oracle");
    EXPECT_LE(r.ade_pose, kExact);
    EXPECT_LE(r.ade_hip, kExact);
    EXPECT_LE(r.fde_pose, kExact);
    EXPECT_LE(r.fde_hip, kExact);
    EXPECT_GE(r.apd, 0.0);
    EXPECT_EQ(r.items, data.size());
}

TEST(Evaluate, ZeroVelocityHasZeroDiversity)
{
    const auto data = corpus(5);
    const auto r = evaluate(zero_velocity_predictor(10, 20), data, EvalConfig{}, "zero-velocity");
    EXPECT_EQ(r.apd, 0.0);
    EXPECT_GT(r.ade_pose, 0.0);
    EXPECT_GT(r.ade_hip, 0.0);
    EXPECT_GE(r.made_pose, r.ade_pose - 1.0);
}

TEST(Evaluate, DeterministicAcrossRunsAndThreads)
{
    const auto data = corpus(6);
    Forecaster<float> model(ModelConfig{}, 3);
    EvalConfig c;
    c.threads = 1;
    const auto a = evaluate_model(model, data, c);
    c.threads = 3;
    const auto b = evaluate_model(model, data, c);
    const auto d = evaluate_model(model, data, c);
    for (const auto* r : {&b, &d}) {
        EXPECT_EQ(a.apd, r->apd);
        EXPECT_EQ(a.ade_pose, r->ade_pose);
        EXPECT_EQ(a.ade_hip, r->ade_hip);
        EXPECT_EQ(a.fde_pose, r->fde_pose);
        EXPECT_EQ(a.fde_hip, r->fde_hip);
        EXPECT_EQ(a.made_pose, r->made_pose);
        EXPECT_EQ(a.mfde_hip, r->mfde_hip);
    }
}

TEST(Evaluate, WrongSampleCountRejected)
{
    const auto data = corpus(1);
    EvalConfig c;
    c.n_samples = 4;
    EXPECT_THROW(evaluate(zero_velocity_predictor(3, 20), data, c), ShapeError);
    EXPECT_THROW(evaluate(zero_velocity_predictor(4, 20), {}, c), DataError);
    c.n_samples = 1;
    EXPECT_THROW(evaluate(zero_velocity_predictor(1, 20), data, c), ConfigError);
}

TEST(Evaluate, TableHasOneRowPerMethod)
{
    MetricsReport a, b;
    a.name = "zero-velocity";
    b.name = "model";
    b.ade_pose = 0.25;
    const auto table = format_metrics_table({a, b});
    EXPECT_NE(table.find("MADE"), std::string::npos);
    EXPECT_NE(table.find("0.2500"), std::string::npos);
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
}
