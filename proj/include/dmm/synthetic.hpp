#pragma once

// Procedural multi-modal walking corpus. Every scenario shares one observed
// walking prefix across several futures, one per motion mode. Joints are built
// by forward kinematics from unit bone directions, so bone lengths stay fixed
// within a sequence.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "dmm/errors.hpp"
#include "dmm/motion.hpp"
#include "dmm/motion_io.hpp"
#include "dmm/random.hpp"

namespace dmm {

enum class MotionMode : int { straight = 0, turn_left = 1, turn_right = 2, stop = 3, sit = 4 };
inline constexpr int kModeCount = 5;

inline const char* mode_name(int mode)
{
    static constexpr std::array<const char*, kModeCount> names{"straight", "turn-left", "turn-right", "stop", "sit"};
    return mode >= 0 && mode < kModeCount ? names[static_cast<std::size_t>(mode)] : "unknown";
}

struct SynthConfig {
    int fps = 10;
    std::size_t alpha = 5;
    std::size_t zeta = 20;
    std::size_t scenarios = 200;
    std::size_t modes_per_observation = kModeCount;
    double heading_range = std::numbers::pi / 6;  // initial heading drawn from [-range, range]
    double min_speed = 0.9;
    double max_speed = 1.5;

    void validate() const
    {
        if (scenarios == 0) {
            throw ConfigError("synthetic corpus needs at least one scenario");
        }
        if (fps <= 0) {
            throw ConfigError("fps must be positive");
        }
        if (alpha == 0 || zeta == 0) {
            throw ConfigError("alpha and zeta must be positive");
        }
        if (modes_per_observation < 2 || modes_per_observation > static_cast<std::size_t>(kModeCount)) {
            throw ConfigError("modes_per_observation must be in [2, 5]");
        }
        if (!(min_speed > 0.0) || max_speed < min_speed) {
            throw ConfigError("invalid speed range");
        }
    }
};

namespace synth_detail {

struct Body {
    double scale = 1.0;
    double hip_height = 0.9;
};

struct GaitState {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    double phase = 0.0;
    double speed = 1.0;
    double amplitude = 1.0;  // 1 walking, 0 standing
    double sit = 0.0;        // 0 upright, 1 seated
};

inline Vec3 add_scaled(const Vec3& a, const Vec3& dir, double len)
{
    return {a[0] + dir[0] * len, a[1] + dir[1] * len, a[2] + dir[2] * len};
}

/// Unit vector at `angle` from straight down toward `fwd` (angle 0 = down).
inline Vec3 sagittal(double angle, const Vec3& fwd)
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {s * fwd[0], s * fwd[1], -c};
}

inline void emit_frame(const GaitState& g, const Body& body, std::span<double> out)
{
    const double k = body.scale;
    const Vec3 fwd{std::cos(g.heading), std::sin(g.heading), 0.0};
    const Vec3 left{-std::sin(g.heading), std::cos(g.heading), 0.0};
    const double walk = g.amplitude * (1.0 - g.sit);
    const double phi = g.phase;

    std::array<Vec3, kJoints> j{};
    const double bob = 0.02 * g.amplitude * std::cos(2.0 * phi);
    j[0] = {g.x, g.y, body.hip_height - 0.42 * k * g.sit + bob};

    // legs
    const Vec3 right{-left[0], -left[1], -left[2]};
    j[1] = add_scaled(j[0], right, 0.13 * k);
    j[4] = add_scaled(j[0], left, 0.13 * k);
    const double thigh_r = walk * 0.45 * std::sin(phi) + g.sit * 1.45;
    const double thigh_l = walk * 0.45 * std::sin(phi + std::numbers::pi) + g.sit * 1.45;
    const double knee_r = walk * 0.35 * (1.0 - std::cos(phi)) + g.sit * 1.5;
    const double knee_l = walk * 0.35 * (1.0 - std::cos(phi + std::numbers::pi)) + g.sit * 1.5;
    j[2] = add_scaled(j[1], sagittal(thigh_r, fwd), 0.45 * k);
    j[3] = add_scaled(j[2], sagittal(thigh_r - knee_r, fwd), 0.44 * k);
    j[5] = add_scaled(j[4], sagittal(thigh_l, fwd), 0.45 * k);
    j[6] = add_scaled(j[5], sagittal(thigh_l - knee_l, fwd), 0.44 * k);

    // torso, leaning forward while walking and strongly while seated
    const double lean = 0.06 * g.amplitude + 0.35 * g.sit;
    const Vec3 spine_dir{std::sin(lean) * fwd[0], std::sin(lean) * fwd[1], std::cos(lean)};
    j[7] = add_scaled(j[0], spine_dir, 0.25 * k);
    j[8] = add_scaled(j[7], spine_dir, 0.25 * k);
    j[9] = add_scaled(j[8], spine_dir, 0.15 * k);
    j[10] = add_scaled(j[9], spine_dir, 0.12 * k);

    // arms swing against the same-side leg
    j[11] = add_scaled(j[8], left, 0.17 * k);
    j[14] = add_scaled(j[8], right, 0.17 * k);
    const double arm_l = walk * 0.35 * std::sin(phi) + g.sit * 0.4;
    const double arm_r = walk * 0.35 * std::sin(phi + std::numbers::pi) + g.sit * 0.4;
    const double elbow = 0.25 + 0.2 * g.amplitude + 0.8 * g.sit;
    j[12] = add_scaled(j[11], sagittal(arm_l, fwd), 0.28 * k);
    j[13] = add_scaled(j[12], sagittal(arm_l + elbow, fwd), 0.26 * k);
    j[15] = add_scaled(j[14], sagittal(arm_r, fwd), 0.28 * k);
    j[16] = add_scaled(j[15], sagittal(arm_r + elbow, fwd), 0.26 * k);

    for (std::size_t i = 0; i < kJoints; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[3 * i + c] = j[i][c];
        }
    }
}

inline double smoothstep(double x)
{
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

struct ModeParams {
    double base_turn = 0.0;   // heading rate during the observed walk (rad/s)
    double turn_rate = 0.9;   // extra heading rate when turning
    double stop_time = 1.0;   // seconds to come to rest
    double sit_time = 1.0;    // seconds to go from upright to seated
};

/// Gait controls at time tau seconds after the end of the observation.
inline void apply_mode(int mode, double tau, double v0, const ModeParams& p, GaitState& g, double& turn)
{
    turn = p.base_turn;
    g.speed = v0;
    g.sit = 0.0;
    switch (static_cast<MotionMode>(mode)) {
    case MotionMode::straight:
        break;
    case MotionMode::turn_left:
        turn = p.base_turn + p.turn_rate * std::min(1.0, tau / 0.5);
        break;
    case MotionMode::turn_right:
        turn = p.base_turn - p.turn_rate * std::min(1.0, tau / 0.5);
        break;
    case MotionMode::stop: {
        const double f = std::max(0.0, 1.0 - tau / p.stop_time);
        g.speed = v0 * f;
        turn = p.base_turn * f;
        break;
    }
    case MotionMode::sit: {
        const double f = std::max(0.0, 1.0 - tau / 0.6);
        g.speed = v0 * f;
        turn = 0.0;
        g.sit = smoothstep((tau - 0.3) / p.sit_time);
        break;
    }
    }
    g.amplitude = g.speed / v0;
}

} // namespace synth_detail

/// One record per (scenario, mode), each alpha+zeta frames long; scenarios are
/// generated from sub-seeds of `seed` so the output depends on nothing else.
inline std::vector<MotionRecord> generate_synthetic_records(const SynthConfig& config, std::uint64_t seed)
{
    using namespace synth_detail;
    config.validate();
    const double dt = 1.0 / config.fps;
    const std::size_t total = config.alpha + config.zeta;
    std::vector<MotionRecord> records;
    records.reserve(config.scenarios * config.modes_per_observation);

    for (std::size_t s = 0; s < config.scenarios; ++s) {
        Rng rng(Rng::derive(seed, s));
        Body body;
        body.scale = rng.uniform(0.9, 1.1);
        body.hip_height = 0.87 * body.scale;
        GaitState start;
        start.x = rng.uniform(-3.0, 3.0);
        start.y = rng.uniform(-3.0, 3.0);
        start.heading = rng.uniform(-config.heading_range, config.heading_range);
        start.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double v0 = rng.uniform(config.min_speed, config.max_speed);
        const double stride = 1.3 * body.scale;
        ModeParams params;
        params.base_turn = rng.uniform(-0.1, 0.1);
        params.turn_rate = rng.uniform(0.7, 1.1);
        params.stop_time = rng.uniform(0.8, 1.2);
        params.sit_time = rng.uniform(0.8, 1.2);

        // distinct modes for this scenario
        std::array<int, kModeCount> modes{0, 1, 2, 3, 4};
        for (std::size_t i = kModeCount - 1; i > 0; --i) {
            std::swap(modes[i], modes[rng.below(i + 1)]);
        }
        std::sort(modes.begin(), modes.begin() + static_cast<std::ptrdiff_t>(config.modes_per_observation));

        for (std::size_t m = 0; m < config.modes_per_observation; ++m) {
            const int mode = modes[m];
            GaitState g = start;
            g.speed = v0;
            PoseSequence frames(total);
            for (std::size_t t = 0; t < total; ++t) {
                double turn = params.base_turn;
                if (t >= config.alpha) {
                    const double tau = static_cast<double>(t - config.alpha + 1) * dt;
                    apply_mode(mode, tau, v0, params, g, turn);
                }
                if (t > 0) {
                    g.heading += turn * dt;
                    g.x += g.speed * dt * std::cos(g.heading);
                    g.y += g.speed * dt * std::sin(g.heading);
                    g.phase += 2.0 * std::numbers::pi * g.speed / stride * dt;
                }
                emit_frame(g, body, frames.frame(t));
            }
            records.push_back({static_cast<int>(records.size()), mode, MotionSequence{config.fps, std::move(frames)}});
        }
    }
    return records;
}

inline std::vector<SamplePair> records_to_pairs(const std::vector<MotionRecord>& records, std::size_t alpha,
                                                std::size_t zeta)
{
    std::vector<SamplePair> pairs;
    pairs.reserve(records.size());
    for (const auto& r : records) {
        pairs.push_back(make_sample_pair(r.sequence, alpha, zeta, r.mode));
    }
    return pairs;
}

inline std::vector<SamplePair> generate_synthetic_corpus(const SynthConfig& config, std::uint64_t seed)
{
    return records_to_pairs(generate_synthetic_records(config, seed), config.alpha, config.zeta);
}

} // namespace dmm
