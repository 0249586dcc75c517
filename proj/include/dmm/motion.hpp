#pragma once

// Motion containers, the hip/pose factorization and pose normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmm/errors.hpp"

namespace dmm {

inline constexpr std::size_t kJoints = 17;
inline constexpr std::size_t kFrameWidth = kJoints * 3;
inline constexpr std::size_t kHipIndex = 0;
inline constexpr double kNormStdFloor = 1e-4;

using Vec3 = std::array<double, 3>;

/// Row-major frames x Width buffer of doubles.
template <std::size_t Width>
class FrameBuffer {
public:
    static constexpr std::size_t width = Width;

    FrameBuffer() = default;
    explicit FrameBuffer(std::size_t frames) : values_(frames * Width, 0.0) {}
    explicit FrameBuffer(std::vector<double> values) : values_(std::move(values))
    {
        if (values_.size() % Width != 0) {
            throw ShapeError("frame buffer size " + std::to_string(values_.size()) +
                             " is not a multiple of " + std::to_string(Width));
        }
    }

    std::size_t frames() const noexcept { return values_.size() / Width; }
    bool empty() const noexcept { return values_.empty(); }

    double& at(std::size_t t, std::size_t k) { return values_[t * Width + k]; }
    double at(std::size_t t, std::size_t k) const { return values_[t * Width + k]; }

    std::span<double> frame(std::size_t t) { return {values_.data() + t * Width, Width}; }
    std::span<const double> frame(std::size_t t) const { return {values_.data() + t * Width, Width}; }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    FrameBuffer slice(std::size_t first, std::size_t count) const
    {
        if (first + count > frames()) {
            throw DataError("frame slice out of range");
        }
        return FrameBuffer(std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(first * Width),
                                               values_.begin() + static_cast<std::ptrdiff_t>((first + count) * Width)));
    }

    bool all_finite() const
    {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const FrameBuffer&, const FrameBuffer&) = default;

private:
    std::vector<double> values_;
};

/// Hip-relative joint positions, 51 numbers per frame (joint-major x,y,z).
using PoseSequence = FrameBuffer<kFrameWidth>;
/// Hip positions, 3 numbers per frame.
using HipTrajectory = FrameBuffer<3>;

inline Vec3 joint_of(std::span<const double> frame, std::size_t j)
{
    return {frame[3 * j], frame[3 * j + 1], frame[3 * j + 2]};
}

// ---------------------------------------------------------------------------
// Skeleton

struct SkeletonGraph {
    std::vector<std::string> joint_names;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child)
    std::size_t hip_index = kHipIndex;

    /// The 17-joint layout used throughout: pelvis first, then legs, spine, arms.
    static const SkeletonGraph& standard17()
    {
        static const SkeletonGraph graph = [] {
            SkeletonGraph g;
            g.joint_names = {"hip",        "r_hip",      "r_knee",  "r_ankle", "l_hip",      "l_knee",
                             "l_ankle",    "spine",      "thorax",  "neck",    "head",       "l_shoulder",
                             "l_elbow",    "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
            g.edges = {{0, 1},  {1, 2},  {2, 3},   {0, 4},   {4, 5},   {5, 6},   {0, 7},   {7, 8},
                       {8, 9},  {9, 10}, {8, 11},  {11, 12}, {12, 13}, {8, 14},  {14, 15}, {15, 16}};
            g.validate();
            return g;
        }();
        return graph;
    }

    /// Exactly 17 vertices and a 16-edge tree rooted at the hip.
    void validate() const
    {
        if (joint_names.size() != kJoints) {
            throw DataError("skeleton must have 17 joints");
        }
        if (edges.size() != kJoints - 1) {
            throw DataError("skeleton must have 16 edges");
        }
        std::vector<int> parent(kJoints, -1);
        for (auto [p, c] : edges) {
            if (p >= kJoints || c >= kJoints || p == c) {
                throw DataError("invalid skeleton edge");
            }
            if (c == hip_index || parent[c] != -1) {
                throw DataError("skeleton edges do not form a tree rooted at the hip");
            }
            parent[c] = static_cast<int>(p);
        }
        for (std::size_t j = 0; j < kJoints; ++j) {
            std::size_t cur = j;
            std::size_t hops = 0;
            while (cur != hip_index) {
                if (parent[cur] < 0 || ++hops > kJoints) {
                    throw DataError("skeleton joint " + std::to_string(j) + " is not connected to the hip");
                }
                cur = static_cast<std::size_t>(parent[cur]);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Sequences

struct MotionSequence {
    int fps = 10;
    FrameBuffer<kFrameWidth> frames;

    std::size_t length() const noexcept { return frames.frames(); }

    void validate() const
    {
        if (fps <= 0) {
            throw DataError("fps must be positive");
        }
        if (frames.empty()) {
            throw DataError("motion sequence has no frames");
        }
        if (!frames.all_finite()) {
            throw DataError("motion sequence contains non-finite coordinates");
        }
    }

    friend bool operator==(const MotionSequence&, const MotionSequence&) = default;
};

struct MotionSplit {
    int fps = 10;
    HipTrajectory hip;
    PoseSequence pose;

    std::size_t length() const noexcept { return pose.frames(); }

    void validate() const
    {
        if (fps <= 0) {
            throw DataError("fps must be positive");
        }
        if (hip.frames() != pose.frames() || pose.empty()) {
            throw DataError("hip/pose frame counts differ or are empty");
        }
        if (!hip.all_finite() || !pose.all_finite()) {
            throw DataError("motion split contains non-finite coordinates");
        }
    }

    MotionSplit slice(std::size_t first, std::size_t count) const
    {
        return {fps, hip.slice(first, count), pose.slice(first, count)};
    }

    friend bool operator==(const MotionSplit&, const MotionSplit&) = default;
};

inline MotionSplit split_motion(const MotionSequence& seq)
{
    seq.validate();
    const std::size_t frames = seq.length();
    MotionSplit out{seq.fps, HipTrajectory(frames), PoseSequence(frames)};
    for (std::size_t t = 0; t < frames; ++t) {
        auto src = seq.frames.frame(t);
        for (std::size_t c = 0; c < 3; ++c) {
            out.hip.at(t, c) = src[3 * kHipIndex + c];
        }
        for (std::size_t j = 0; j < kJoints; ++j) {
            for (std::size_t c = 0; c < 3; ++c) {
                out.pose.at(t, 3 * j + c) = j == kHipIndex ? 0.0 : src[3 * j + c] - out.hip.at(t, c);
            }
        }
    }
    return out;
}

inline MotionSequence merge_motion(const MotionSplit& split)
{
    split.validate();
    const std::size_t frames = split.length();
    MotionSequence out{split.fps, FrameBuffer<kFrameWidth>(frames)};
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t j = 0; j < kJoints; ++j) {
            for (std::size_t c = 0; c < 3; ++c) {
                out.frames.at(t, 3 * j + c) = split.pose.at(t, 3 * j + c) + split.hip.at(t, c);
            }
        }
    }
    return out;
}

/// Shifts the hip trajectory so that frame `t_index` sits at the origin.
inline MotionSplit rebase_to_current_hip(const MotionSplit& split, std::size_t t_index)
{
    if (t_index >= split.length()) {
        throw DataError("rebase index " + std::to_string(t_index) + " out of range");
    }
    MotionSplit out = split;
    const Vec3 origin{split.hip.at(t_index, 0), split.hip.at(t_index, 1), split.hip.at(t_index, 2)};
    for (std::size_t t = 0; t < out.length(); ++t) {
        for (std::size_t c = 0; c < 3; ++c) {
            out.hip.at(t, c) -= origin[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizationStats {
    std::array<double, kFrameWidth> mean{};
    std::array<double, kFrameWidth> std{};

    friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

inline NormalizationStats fit_normalization(std::span<const PoseSequence> train_poses)
{
    std::size_t count = 0;
    std::array<double, kFrameWidth> sum{};
    for (const auto& pose : train_poses) {
        for (std::size_t t = 0; t < pose.frames(); ++t) {
            for (std::size_t k = 0; k < kFrameWidth; ++k) {
                sum[k] += pose.at(t, k);
            }
        }
        count += pose.frames();
    }
    if (count == 0) {
        throw DataError("cannot fit normalization on an empty collection");
    }
    NormalizationStats stats;
    for (std::size_t k = 0; k < kFrameWidth; ++k) {
        stats.mean[k] = sum[k] / static_cast<double>(count);
    }
    std::array<double, kFrameWidth> sq{};
    for (const auto& pose : train_poses) {
        for (std::size_t t = 0; t < pose.frames(); ++t) {
            for (std::size_t k = 0; k < kFrameWidth; ++k) {
                const double d = pose.at(t, k) - stats.mean[k];
                sq[k] += d * d;
            }
        }
    }
    for (std::size_t k = 0; k < kFrameWidth; ++k) {
        stats.std[k] = std::max(std::sqrt(sq[k] / static_cast<double>(count)), kNormStdFloor);
    }
    return stats;
}

inline PoseSequence apply_normalization(const PoseSequence& pose, const NormalizationStats& stats)
{
    PoseSequence out = pose;
    for (std::size_t t = 0; t < out.frames(); ++t) {
        for (std::size_t k = 0; k < kFrameWidth; ++k) {
            out.at(t, k) = (out.at(t, k) - stats.mean[k]) / stats.std[k];
        }
    }
    return out;
}

inline PoseSequence invert_normalization(const PoseSequence& pose, const NormalizationStats& stats)
{
    PoseSequence out = pose;
    for (std::size_t t = 0; t < out.frames(); ++t) {
        for (std::size_t k = 0; k < kFrameWidth; ++k) {
            out.at(t, k) = out.at(t, k) * stats.std[k] + stats.mean[k];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training/evaluation pairs

struct SamplePair {
    MotionSplit observed;
    MotionSplit future;
    std::optional<int> mode_label;
};

/// Cuts a sequence of at least alpha+zeta frames into an observed window and its future.
inline SamplePair make_sample_pair(const MotionSequence& seq, std::size_t alpha, std::size_t zeta,
                                   std::optional<int> mode = std::nullopt)
{
    if (alpha == 0 || zeta == 0 || seq.length() < alpha + zeta) {
        throw DataError("sequence of " + std::to_string(seq.length()) + " frames is shorter than alpha+zeta=" +
                        std::to_string(alpha + zeta));
    }
    const MotionSplit split = split_motion(seq);
    return {split.slice(0, alpha), split.slice(alpha, zeta), mode};
}

/// Expresses observed and future hips relative to the last observed hip.
inline SamplePair rebase_pair(const SamplePair& pair)
{
    const std::size_t alpha = pair.observed.length();
    const Vec3 origin{pair.observed.hip.at(alpha - 1, 0), pair.observed.hip.at(alpha - 1, 1),
                      pair.observed.hip.at(alpha - 1, 2)};
    SamplePair out = pair;
    for (auto* hip : {&out.observed.hip, &out.future.hip}) {
        for (std::size_t t = 0; t < hip->frames(); ++t) {
            for (std::size_t c = 0; c < 3; ++c) {
                hip->at(t, c) -= origin[c];
            }
        }
    }
    return out;
}

} // namespace dmm
