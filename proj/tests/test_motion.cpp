#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "dmm/motion.hpp"
#include "dmm/motion_io.hpp"
#include "dmm/synthetic.hpp"

using namespace dmm;

namespace {

MotionSequence random_sequence(Rng& rng, std::size_t frames)
{
    MotionSequence s{10, PoseSequence(frames)};
    for (auto& v : s.frames.values()) {
        v = rng.uniform(-2.0, 2.0);
    }
    return s;
}

std::filesystem::path temp_path(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("dmm_test_" + name);
}

double bone_length(std::span<const double> f, std::size_t a, std::size_t b)
{
    const double dx = f[3 * a] - f[3 * b], dy = f[3 * a + 1] - f[3 * b + 1], dz = f[3 * a + 2] - f[3 * b + 2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

} // namespace

TEST(Skeleton, StandardGraphIsTree)
{
    const auto& g = SkeletonGraph::standard17();
    EXPECT_EQ(g.joint_names.size(), 17u);
    EXPECT_EQ(g.edges.size(), 16u);
    EXPECT_EQ(g.hip_index, 0u);
    EXPECT_NO_THROW(g.validate());
    SkeletonGraph bad = g;
    bad.edges[3] = {5, 5};
    EXPECT_THROW(bad.validate(), DataError);
}

TEST(Split, DegenerateSkeleton)
{
    MotionSequence s{10, PoseSequence(1)};
    for (std::size_t j = 0; j < kJoints; ++j) {
        s.frames.at(0, 3 * j) = 1.5;
        s.frames.at(0, 3 * j + 1) = -2;
        s.frames.at(0, 3 * j + 2) = 0.25;
    }
    const auto split = split_motion(s);
    EXPECT_EQ(split.hip.at(0, 0), 1.5);
    EXPECT_EQ(split.hip.at(0, 1), -2);
    EXPECT_EQ(split.hip.at(0, 2), 0.25);
    for (const double v : split.pose.values()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Split, DirectSubtraction)
{
    MotionSequence s{10, PoseSequence(1)};
    s.frames.at(0, 0) = 1;
    s.frames.at(0, 1) = 2;
    s.frames.at(0, 2) = 3;
    s.frames.at(0, 15) = 1;
    s.frames.at(0, 16) = 2;
    s.frames.at(0, 17) = 4;
    const auto split = split_motion(s);
    EXPECT_EQ(split.pose.at(0, 15), 0.0);
    EXPECT_EQ(split.pose.at(0, 16), 0.0);
    EXPECT_EQ(split.pose.at(0, 17), 1.0);
}

TEST(Split, RoundTripRandom)
{
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto seq = random_sequence(rng, 10);
        const auto split = split_motion(seq);
        for (std::size_t t = 0; t < 10; ++t) {
            for (std::size_t c = 0; c < 3; ++c) {
                EXPECT_EQ(split.pose.at(t, c), 0.0);
            }
        }
        const auto back = merge_motion(split);
        for (std::size_t i = 0; i < seq.frames.values().size(); ++i) {
            EXPECT_NEAR(back.frames.values()[i], seq.frames.values()[i], 1e-9);
        }
    }
}

TEST(Split, RejectsNonFinite)
{
    MotionSequence s{10, PoseSequence(2)};
    s.frames.at(1, 7) = std::nan("");
    EXPECT_THROW(split_motion(s), DataError);
}

TEST(Merge, ZeroPoseRidesOnHip)
{
    MotionSplit split{10, HipTrajectory(3), PoseSequence(3)};
    for (std::size_t t = 0; t < 3; ++t) {
        split.hip.at(t, 0) = static_cast<double>(t);
        split.hip.at(t, 2) = 0.9;
    }
    const auto seq = merge_motion(split);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t j = 0; j < kJoints; ++j) {
            EXPECT_EQ(seq.frames.at(t, 3 * j), static_cast<double>(t));
            EXPECT_EQ(seq.frames.at(t, 3 * j + 2), 0.9);
        }
    }
}

TEST(Merge, TranslationEquivariant)
{
    Rng rng(2);
    auto split = split_motion(random_sequence(rng, 4));
    const auto a = merge_motion(split);
    for (std::size_t t = 0; t < 4; ++t) {
        split.hip.at(t, 0) += 1.0;
    }
    const auto b = merge_motion(split);
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t j = 0; j < kJoints; ++j) {
            EXPECT_NEAR(b.frames.at(t, 3 * j) - a.frames.at(t, 3 * j), 1.0, 1e-12);
            EXPECT_EQ(b.frames.at(t, 3 * j + 1), a.frames.at(t, 3 * j + 1));
        }
    }
}

TEST(Rebase, ConstantHipGoesToZero)
{
    MotionSplit split{10, HipTrajectory(5), PoseSequence(5)};
    for (std::size_t t = 0; t < 5; ++t) {
        split.hip.at(t, 0) = 3.0;
    }
    const auto r = rebase_to_current_hip(split, 4);
    for (const double v : r.hip.values()) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_THROW(rebase_to_current_hip(split, 5), DataError);
}

TEST(Rebase, PreservesDisplacementsAndIsIdempotent)
{
    Rng rng(3);
    const auto split = split_motion(random_sequence(rng, 6));
    const auto once = rebase_to_current_hip(split, 5);
    const auto twice = rebase_to_current_hip(once, 5);
    EXPECT_EQ(once, twice);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(once.hip.at(5, c), 0.0);
        for (std::size_t t = 1; t < 6; ++t) {
            EXPECT_NEAR(once.hip.at(t, c) - once.hip.at(t - 1, c), split.hip.at(t, c) - split.hip.at(t - 1, c), 1e-12);
        }
    }
    EXPECT_EQ(once.pose, split.pose);
}

TEST(Normalization, IdenticalPosesGetFloor)
{
    PoseSequence p(3);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t k = 0; k < kFrameWidth; ++k) {
            p.at(t, k) = 0.01 * static_cast<double>(k);
        }
    }
    const std::vector<PoseSequence> poses{p, p};
    const auto stats = fit_normalization(poses);
    for (std::size_t k = 0; k < kFrameWidth; ++k) {
        EXPECT_NEAR(stats.mean[k], 0.01 * static_cast<double>(k), 1e-15);
        EXPECT_EQ(stats.std[k], kNormStdFloor);
    }
    EXPECT_THROW(fit_normalization(std::vector<PoseSequence>{}), DataError);
}

TEST(Normalization, SymmetricMeanIsZero)
{
    PoseSequence a(1), b(1);
    for (std::size_t k = 0; k < kFrameWidth; ++k) {
        a.at(0, k) = 0.5 + static_cast<double>(k);
        b.at(0, k) = -a.at(0, k);
    }
    const auto stats = fit_normalization(std::vector<PoseSequence>{a, b});
    for (const double m : stats.mean) {
        EXPECT_EQ(m, 0.0);
    }
}

TEST(Normalization, StandardizesSyntheticCorpus)
{
    SynthConfig cfg;
    cfg.scenarios = 10;
    const auto pairs = generate_synthetic_corpus(cfg, 5);
    std::vector<PoseSequence> poses;
    for (const auto& p : pairs) {
        poses.push_back(p.observed.pose);
        poses.push_back(p.future.pose);
    }
    std::size_t frames = 0;
    for (const auto& p : poses) {
        frames += p.frames();
    }
    ASSERT_GE(frames, 1000u);
    const auto stats = fit_normalization(poses);
    std::vector<double> mean(kFrameWidth), sq(kFrameWidth);
    for (const auto& p : poses) {
        const auto n = apply_normalization(p, stats);
        for (std::size_t t = 0; t < n.frames(); ++t) {
            for (std::size_t k = 0; k < kFrameWidth; ++k) {
                mean[k] += n.at(t, k);
                sq[k] += n.at(t, k) * n.at(t, k);
            }
        }
    }
    for (std::size_t k = 0; k < kFrameWidth; ++k) {
        const double m = mean[k] / static_cast<double>(frames);
        EXPECT_LT(std::abs(m), 1e-6);
        if (stats.std[k] > kNormStdFloor) {
            const double sd = std::sqrt(sq[k] / static_cast<double>(frames) - m * m);
            EXPECT_NEAR(sd, 1.0, 1e-6) << k;
        }
    }
}

TEST(Normalization, RoundTrip)
{
    Rng rng(4);
    NormalizationStats stats;
    for (std::size_t k = 0; k < kFrameWidth; ++k) {
        stats.mean[k] = rng.uniform(-1, 1);
        stats.std[k] = rng.uniform(0.1, 2);
    }
    PoseSequence mean_pose(1);
    std::copy(stats.mean.begin(), stats.mean.end(), mean_pose.values().begin());
    const auto normalized = apply_normalization(mean_pose, stats);
    for (const double v : normalized.values()) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_EQ(invert_normalization(PoseSequence(1), stats), mean_pose);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_sequence(rng, 3).frames;
        const auto back = invert_normalization(apply_normalization(p, stats), stats);
        for (std::size_t i = 0; i < p.values().size(); ++i) {
            EXPECT_NEAR(back.values()[i], p.values()[i], 1e-6);
        }
    }
}

TEST(Synthetic, Deterministic)
{
    SynthConfig cfg;
    cfg.scenarios = 5;
    EXPECT_EQ(generate_synthetic_records(cfg, 9), generate_synthetic_records(cfg, 9));
    EXPECT_NE(generate_synthetic_records(cfg, 9), generate_synthetic_records(cfg, 10));
}

TEST(Synthetic, BoneLengthsConstant)
{
    SynthConfig cfg;
    cfg.scenarios = 20;
    const auto& g = SkeletonGraph::standard17();
    for (const auto& r : generate_synthetic_records(cfg, 1)) {
        for (auto [a, b] : g.edges) {
            const std::size_t T = r.sequence.length();
            std::vector<double> len(T);
            for (std::size_t t = 0; t < T; ++t) {
                len[t] = bone_length(r.sequence.frames.frame(t), a, b);
            }
            const double m = std::accumulate(len.begin(), len.end(), 0.0) / static_cast<double>(T);
            double var = 0;
            for (const double l : len) {
                var += (l - m) * (l - m);
            }
            EXPECT_LT(std::sqrt(var / static_cast<double>(T)), 1e-9);
        }
    }
}

TEST(Synthetic, StopModeComesToRest)
{
    SynthConfig cfg;
    cfg.scenarios = 20;
    int stops = 0;
    for (const auto& r : generate_synthetic_records(cfg, 2)) {
        if (r.mode != static_cast<int>(MotionMode::stop)) {
            continue;
        }
        ++stops;
        const auto& f = r.sequence.frames;
        const std::size_t T = r.sequence.length();
        const double dx = f.at(T - 1, 0) - f.at(T - 2, 0);
        const double dy = f.at(T - 1, 1) - f.at(T - 2, 1);
        const double dz = f.at(T - 1, 2) - f.at(T - 2, 2);
        EXPECT_LT(std::sqrt(dx * dx + dy * dy + dz * dz) * cfg.fps, 0.01);
    }
    EXPECT_GT(stops, 0);
}

TEST(Synthetic, SharedObservationsHaveSeveralModes)
{
    SynthConfig cfg;
    cfg.scenarios = 10;
    cfg.modes_per_observation = 3;
    const auto pairs = generate_synthetic_corpus(cfg, 3);
    ASSERT_EQ(pairs.size(), 30u);
    for (std::size_t s = 0; s < 10; ++s) {
        std::set<int> modes;
        for (std::size_t m = 0; m < 3; ++m) {
            const auto& p = pairs[s * 3 + m];
            EXPECT_EQ(p.observed, pairs[s * 3].observed);
            modes.insert(*p.mode_label);
        }
        EXPECT_EQ(modes.size(), 3u);
    }
}

TEST(Synthetic, InvalidConfig)
{
    SynthConfig cfg;
    cfg.scenarios = 0;
    EXPECT_THROW(generate_synthetic_corpus(cfg, 1), ConfigError);
    cfg.scenarios = 1;
    cfg.fps = 0;
    EXPECT_THROW(generate_synthetic_corpus(cfg, 1), ConfigError);
}

TEST(MotionFile, TextRoundTrip)
{
    Rng rng(6);
    std::vector<MotionRecord> recs;
    for (int i = 0; i < 3; ++i) {
        recs.push_back({i, i == 1 ? std::nullopt : std::optional<int>(i), random_sequence(rng, 4 + i)});
    }
    const auto path = temp_path("text.motion");
    save_motion_file(path, recs, MotionFormat::text);
    const auto back = load_motion_file(path);
    ASSERT_EQ(back.size(), 3u);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].id, recs[i].id);
        EXPECT_EQ(back[i].mode, recs[i].mode);
        ASSERT_EQ(back[i].sequence.length(), recs[i].sequence.length());
        for (std::size_t k = 0; k < recs[i].sequence.frames.values().size(); ++k) {
            EXPECT_NEAR(back[i].sequence.frames.values()[k], recs[i].sequence.frames.values()[k], 1e-9);
        }
    }
    std::filesystem::remove(path);
}

TEST(MotionFile, BinaryRoundTripBitExact)
{
    Rng rng(7);
    std::vector<MotionRecord> recs;
    for (int i = 0; i < 3; ++i) {
        auto s = random_sequence(rng, 5);
        for (auto& v : s.frames.values()) {
            v = static_cast<double>(static_cast<float>(v));
        }
        recs.push_back({i, i, s});
    }
    const auto path = temp_path("bin.motion");
    save_motion_file(path, recs, MotionFormat::binary);
    EXPECT_EQ(load_motion_file(path), recs);
    std::filesystem::remove(path);
}

namespace {

MotionFileErrc parse_error(const std::string& text)
{
    try {
        parse_motion_data(text);
    } catch (const MotionFileError& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error for: " << text.substr(0, 60);
    return MotionFileErrc::open_failed;
}

std::string row(double v = 0.5)
{
    std::string s;
    for (std::size_t k = 0; k < kFrameWidth; ++k) {
        s += (k ? " " : "") + std::to_string(v);
    }
    return s + "\n";
}

} // namespace

TEST(MotionFile, DistinctErrors)
{
    EXPECT_EQ(parse_error("MOTION v1 fps=10 joints=16 frames=1 seqs=1\nSEQ 0 frames=1\n" + row()),
              MotionFileErrc::joint_count);
    EXPECT_EQ(parse_error("MOTION v1 fps=10 joints=17 frames=1 seqs=1\nSEQ 0 frames=1\n"), MotionFileErrc::truncated);
    EXPECT_EQ(parse_error("MOTION v1 fps=10 joints=17 frames=2 seqs=1\nSEQ 0 frames=2\n" + row()),
              MotionFileErrc::truncated);
    EXPECT_EQ(parse_error("MOTION v1 fps=10 joints=17 frames=1 seqs=1\nSEQ 0 frames=1\n" + row() + "x"),
              MotionFileErrc::malformed_header);
    EXPECT_EQ(parse_error("MOTON v1 fps=10 joints=17 frames=1 seqs=1\n"), MotionFileErrc::malformed_header);
    std::string bad = row();
    bad.replace(0, 8, "nan     ");
    EXPECT_EQ(parse_error("MOTION v1 fps=10 joints=17 frames=1 seqs=1\nSEQ 0 frames=1\n" + bad),
              MotionFileErrc::non_finite);
    try {
        load_motion_file("/nonexistent/dir/file.motion");
        FAIL();
    } catch (const MotionFileError& e) {
        EXPECT_EQ(e.code(), MotionFileErrc::open_failed);
    }
}
