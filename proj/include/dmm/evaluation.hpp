#pragma once

// Diversity and accuracy metrics over prediction sets. Ground truth and
// predictions are compared with hips relative to the last observed hip.
// Pose errors average over the 16 non-hip joints (the hip row of a pose is
// identically zero).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "dmm/objectives.hpp"

namespace dmm {

inline double apd(std::span<const PoseSequence> samples)
{
    const std::size_t N = samples.size();
    if (N < 2) {
        throw DataError("APD needs at least two samples");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            if (i == j) {
                continue;
            }
            const auto& a = samples[i].values();
            const auto& b = samples[j].values();
            if (a.size() != b.size()) {
                throw ShapeError("APD samples differ in length");
            }
            double sq = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                sq += (a[k] - b[k]) * (a[k] - b[k]);
            }
            total += std::sqrt(sq);
        }
    }
    return total / static_cast<double>(N * (N - 1));
}

inline double apd(const PredictionSet& set)
{
    std::vector<PoseSequence> poses;
    for (const auto& s : set.samples) {
        poses.push_back(s.pose);
    }
    return apd(poses);
}

struct DisplacementError {
    double pose = 0.0;
    double hip = 0.0;
    std::size_t index = 0;  // selected sample
};

namespace eval_detail {

inline Vec3 hip_of(const MotionSplit& m, std::size_t t) { return {m.hip.at(t, 0), m.hip.at(t, 1), m.hip.at(t, 2)}; }

inline double frame_pose_error(const MotionSplit& a, const MotionSplit& b, std::size_t t)
{
    double d = 0.0;
    for (std::size_t j = 0; j < kJoints; ++j) {
        if (j != kHipIndex) {
            d += joint_distance(joint_of(a.pose.frame(t), j), joint_of(b.pose.frame(t), j));
        }
    }
    return d / static_cast<double>(kJoints - 1);
}

/// Sum over joints of merged (world-frame) joint distances at frame t.
inline double merged_frame_distance(const MotionSplit& a, const MotionSplit& b, std::size_t t)
{
    double d = 0.0;
    for (std::size_t j = 0; j < kJoints; ++j) {
        Vec3 pa = joint_of(a.pose.frame(t), j), pb = joint_of(b.pose.frame(t), j);
        for (std::size_t c = 0; c < 3; ++c) {
            pa[c] += a.hip.at(t, c);
            pb[c] += b.hip.at(t, c);
        }
        d += joint_distance(pa, pb);
    }
    return d;
}

inline void check(const PredictionSet& set, const MotionSplit& gt)
{
    set.validate();
    if (set.horizon() != gt.length()) {
        throw ShapeError("prediction horizon " + std::to_string(set.horizon()) + " vs ground truth " +
                         std::to_string(gt.length()));
    }
}

} // namespace eval_detail

/// Closest sample by pose distance, then its per-frame pose and hip errors.
inline DisplacementError ade(const PredictionSet& set, const MotionSplit& gt)
{
    eval_detail::check(set, gt);
    std::vector<PoseSequence> poses;
    for (const auto& s : set.samples) {
        poses.push_back(s.pose);
    }
    DisplacementError e;
    e.index = select_best(poses, gt.pose);
    const auto& s = set.samples[e.index];
    const std::size_t Z = gt.length();
    for (std::size_t t = 0; t < Z; ++t) {
        e.pose += eval_detail::frame_pose_error(s, gt, t);
        e.hip += joint_distance(eval_detail::hip_of(s, t), eval_detail::hip_of(gt, t));
    }
    e.pose /= static_cast<double>(Z);
    e.hip /= static_cast<double>(Z);
    return e;
}

/// Closest sample by full-motion distance at the final frame, then its
/// final-frame pose and hip errors.
inline DisplacementError fde(const PredictionSet& set, const MotionSplit& gt)
{
    eval_detail::check(set, gt);
    const std::size_t last = gt.length() - 1;
    DisplacementError e;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < set.size(); ++g) {
        const double d = eval_detail::merged_frame_distance(set.samples[g], gt, last);
        if (d < best) {
            best = d;
            e.index = g;
        }
    }
    const auto& s = set.samples[e.index];
    e.pose = eval_detail::frame_pose_error(s, gt, last);
    e.hip = joint_distance(eval_detail::hip_of(s, last), eval_detail::hip_of(gt, last));
    return e;
}

struct MultiModalError {
    double made_pose = 0, made_hip = 0, mfde_pose = 0, mfde_hip = 0;
};

inline MultiModalError made_mfde(const PredictionSet& set, std::span<const MotionSplit> group)
{
    if (group.empty()) {
        throw DataError("multi-modal group is empty");
    }
    MultiModalError m;
    for (const auto& gt : group) {
        const auto a = ade(set, gt);
        const auto f = fde(set, gt);
        m.made_pose += a.pose;
        m.made_hip += a.hip;
        m.mfde_pose += f.pose;
        m.mfde_hip += f.hip;
    }
    const auto n = static_cast<double>(group.size());
    m.made_pose /= n;
    m.made_hip /= n;
    m.mfde_pose /= n;
    m.mfde_hip /= n;
    return m;
}

struct EvalConfig {
    std::size_t n_samples = 10;
    std::size_t horizon = 20;
    double tau = 0.5;              // meters, observed-pose motion distance for label-free grouping
    bool use_mode_labels = true;
    int precision = 4;
    std::size_t threads = 0;       // 0 = DMM_THREADS or hardware concurrency

    void validate() const
    {
        if (n_samples < 2) {
            throw ConfigError("evaluation needs at least two samples for APD");
        }
        if (!use_mode_labels && !(tau >= 0.0)) {
            throw ConfigError("tau must be nonnegative");
        }
    }
};

/// For every item, the indices of the items whose futures form its
/// multi-modal ground truth (always including itself). With mode labels
/// present and enabled, items group when their observed windows are
/// identical; otherwise when observed poses are within motion distance tau.
inline std::vector<std::vector<std::size_t>> group_multimodal(const std::vector<SamplePair>& dataset,
                                                              const EvalConfig& config)
{
    if (dataset.empty()) {
        throw DataError("cannot group an empty dataset");
    }
    const bool labels = config.use_mode_labels &&
                        std::all_of(dataset.begin(), dataset.end(), [](const auto& p) { return p.mode_label.has_value(); });
    std::vector<std::vector<std::size_t>> groups(dataset.size());
    if (labels) {
        std::map<std::vector<double>, std::vector<std::size_t>> by_window;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            std::vector<double> key = dataset[i].observed.pose.values();
            key.insert(key.end(), dataset[i].observed.hip.values().begin(), dataset[i].observed.hip.values().end());
            by_window[std::move(key)].push_back(i);
        }
        for (const auto& [key, members] : by_window) {
            for (const std::size_t i : members) {
                groups[i] = members;
            }
        }
        return groups;
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (std::size_t j = 0; j < dataset.size(); ++j) {
            if (i == j || motion_distance(dataset[i].observed.pose, dataset[j].observed.pose) <= config.tau) {
                groups[i].push_back(j);
            }
        }
    }
    return groups;
}

using Predictor = std::function<PredictionSet(const SamplePair&)>;

/// Repeats the last observed frame over the horizon.
inline Predictor zero_velocity_predictor(std::size_t n_samples, std::size_t horizon)
{
    return [n_samples, horizon](const SamplePair& pair) {
        const auto& obs = pair.observed;
        const std::size_t last = obs.length() - 1;
        MotionSplit s{obs.fps, HipTrajectory(horizon), PoseSequence(horizon)};
        for (std::size_t t = 0; t < horizon; ++t) {
            std::copy_n(obs.pose.frame(last).begin(), kFrameWidth, s.pose.frame(t).begin());
            std::copy_n(obs.hip.frame(last).begin(), 3, s.hip.frame(t).begin());
        }
        PredictionSet set;
        set.model_version = "zero-velocity";
        set.samples.assign(n_samples, s);
        return set;
    };
}

/// Returns the ground truth as sample 0 and shifted copies as the rest.
inline Predictor oracle_predictor(std::size_t n_samples)
{
    return [n_samples](const SamplePair& pair) {
        PredictionSet set;
        set.model_version = "oracle";
        for (std::size_t g = 0; g < n_samples; ++g) {
            MotionSplit s = pair.future;
            for (std::size_t t = 0; t < s.length(); ++t) {
                for (std::size_t k = 3; k < kFrameWidth; ++k) {
                    s.pose.at(t, k) += 0.05 * static_cast<double>(g);
                }
            }
            set.samples.push_back(std::move(s));
        }
        return set;
    };
}

template <class T>
Predictor model_predictor(const Forecaster<T>& model, std::size_t n_samples = 0)
{
    return [&model, n_samples](const SamplePair& pair) { return model.forecast(pair.observed, n_samples); };
}

struct ItemMetrics {
    std::size_t item = 0;
    std::optional<int> mode;
    double apd = 0;
    DisplacementError ade, fde;
    MultiModalError mm;
    std::size_t group_size = 0;
};

struct MetricsReport {
    std::string name;
    double apd = 0;
    double ade_pose = 0, ade_hip = 0;
    double fde_pose = 0, fde_hip = 0;
    double made_pose = 0, made_hip = 0;
    double mfde_pose = 0, mfde_hip = 0;
    std::size_t items = 0;
    std::size_t samples = 0;
    std::vector<ItemMetrics> per_item;
};

inline std::size_t eval_threads(const EvalConfig& config)
{
    if (config.threads) {
        return config.threads;
    }
    if (const char* env = std::getenv("DMM_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) {
            return static_cast<std::size_t>(v);
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Metrics averaged over the dataset. Items are evaluated in parallel and
/// reduced in item order, so the result does not depend on thread count.
inline MetricsReport evaluate(const Predictor& predictor, const std::vector<SamplePair>& dataset,
                              const EvalConfig& config, const std::string& name = "model")
{
    config.validate();
    if (dataset.empty()) {
        throw DataError("cannot evaluate on an empty dataset");
    }
    std::vector<SamplePair> rebased;
    rebased.reserve(dataset.size());
    for (const auto& p : dataset) {
        rebased.push_back(rebase_pair(p));
    }
    const auto groups = group_multimodal(rebased, config);
    std::vector<ItemMetrics> items(rebased.size());
    std::vector<std::exception_ptr> errors(rebased.size());

    auto work = [&](std::size_t i) {
        try {
            const PredictionSet set = predictor(rebased[i]);
            if (set.horizon() != config.horizon || set.size() != config.n_samples) {
                throw ShapeError("predictor returned " + std::to_string(set.size()) + " samples of " +
                                 std::to_string(set.horizon()) + " frames, expected " +
                                 std::to_string(config.n_samples) + " of " + std::to_string(config.horizon));
            }
            ItemMetrics m;
            m.item = i;
            m.mode = rebased[i].mode_label;
            m.apd = apd(set);
            m.ade = ade(set, rebased[i].future);
            m.fde = fde(set, rebased[i].future);
            std::vector<MotionSplit> futures;
            for (const std::size_t j : groups[i]) {
                futures.push_back(rebased[j].future);
            }
            m.mm = made_mfde(set, futures);
            m.group_size = futures.size();
            items[i] = m;
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t threads = std::min(eval_threads(config), rebased.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < rebased.size(); ++i) {
            work(i);
        }
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < rebased.size(); i += threads) {
                    work(i);
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }

    MetricsReport r;
    r.name = name;
    r.items = items.size();
    r.samples = config.n_samples;
    for (const auto& m : items) {
        r.apd += m.apd;
        r.ade_pose += m.ade.pose;
        r.ade_hip += m.ade.hip;
        r.fde_pose += m.fde.pose;
        r.fde_hip += m.fde.hip;
        r.made_pose += m.mm.made_pose;
        r.made_hip += m.mm.made_hip;
        r.mfde_pose += m.mm.mfde_pose;
        r.mfde_hip += m.mm.mfde_hip;
    }
    const auto n = static_cast<double>(items.size());
    for (double* v : {&r.apd, &r.ade_pose, &r.ade_hip, &r.fde_pose, &r.fde_hip, &r.made_pose, &r.made_hip,
                      &r.mfde_pose, &r.mfde_hip}) {
        *v /= n;
    }
    r.per_item = std::move(items);
    return r;
}

template <class T>
MetricsReport evaluate_model(const Forecaster<T>& model, const std::vector<SamplePair>& dataset, EvalConfig config)
{
    config.n_samples = model.config().n_samples;
    config.horizon = model.config().zeta;
    return evaluate(model_predictor(model), dataset, config, model.version());
}

/// Aligned table: APD, then ADE/FDE/MADE/MFDE with pose and trajectory columns.
inline std::string format_metrics_table(const std::vector<MetricsReport>& rows, int precision = 4)
{
    std::size_t name_w = 6;
    for (const auto& r : rows) {
        name_w = std::max(name_w, r.name.size());
    }
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    const std::size_t col = static_cast<std::size_t>(precision) + 5;
    auto cell = [&](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%*.*f", static_cast<int>(col), precision, v);
        return std::string(buf);
    };
    auto head = [&](const char* s) {
        std::string h(s);
        return std::string(col > h.size() ? col - h.size() : 0, ' ') + h;
    };
    std::string out = pad("", name_w) + " " + head("") + " " + pad("      ADE", 2 * col + 1) + " " +
                      pad("      FDE", 2 * col + 1) + " " + pad("      MADE", 2 * col + 1) + " " +
                      pad("      MFDE", 2 * col + 1) + "\n";
    out += pad("method", name_w) + " " + head("APD");
    for (int k = 0; k < 4; ++k) {
        out += " " + head("Pose") + " " + head("Traj");
    }
    out += "\n";
    for (const auto& r : rows) {
        out += pad(r.name, name_w) + " " + cell(r.apd) + " " + cell(r.ade_pose) + " " + cell(r.ade_hip) + " " +
               cell(r.fde_pose) + " " + cell(r.fde_hip) + " " + cell(r.made_pose) + " " + cell(r.made_hip) + " " +
               cell(r.mfde_pose) + " " + cell(r.mfde_hip) + "\n";
    }
    return out;
}

inline void write_metrics_tsv(const std::filesystem::path& path, const MetricsReport& r)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "item\tmode\tapd\tade_pose\tade_traj\tfde_pose\tfde_traj\tmade_pose\tmade_traj\tmfde_pose\tmfde_traj"
           "\tgroup_size\tgamma\tfinal_gamma\n";
    char buf[512];
    for (const auto& m : r.per_item) {
        std::snprintf(buf, sizeof buf, "%zu\t%s\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%zu\t%zu\t%zu\n",
                      m.item, m.mode ? std::to_string(*m.mode).c_str() : "-", m.apd, m.ade.pose, m.ade.hip, m.fde.pose,
                      m.fde.hip, m.mm.made_pose, m.mm.made_hip, m.mm.mfde_pose, m.mm.mfde_hip, m.group_size,
                      m.ade.index + 1, m.fde.index + 1);
        out << buf;
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

} // namespace dmm
