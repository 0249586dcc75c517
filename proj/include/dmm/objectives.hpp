#pragma once

// Training losses. Distances are in meters. Batched losses take generator
// outputs shaped [N, B, zeta, 51] and ground truth [B, zeta, 51]; sample
// selection (closest sample, closest pair) is done on values and is not
// differentiated through.

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dmm/forecaster.hpp"

namespace dmm {

// ---------------------------------------------------------------------------
// Distances

inline double joint_distance(const Vec3& a, const Vec3& b)
{
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Sum over frames and all 17 joints of the joint distance.
inline double motion_distance(const PoseSequence& a, const PoseSequence& b)
{
    if (a.frames() != b.frames()) {
        throw ShapeError("motion_distance: horizons differ (" + std::to_string(a.frames()) + " vs " +
                         std::to_string(b.frames()) + ")");
    }
    double d = 0.0;
    for (std::size_t t = 0; t < a.frames(); ++t) {
        for (std::size_t j = 0; j < kJoints; ++j) {
            d += joint_distance(joint_of(a.frame(t), j), joint_of(b.frame(t), j));
        }
    }
    return d;
}

/// Index of the prediction closest to `gt`; ties go to the lowest index.
inline std::size_t select_best(std::span<const PoseSequence> predictions, const PoseSequence& gt)
{
    if (predictions.empty()) {
        throw DataError("select_best needs at least one prediction");
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < predictions.size(); ++g) {
        const double d = motion_distance(predictions[g], gt);
        if (d < best_d) {
            best_d = d;
            best = g;
        }
    }
    return best;
}

/// Closest pair (i < j) by motion distance; ties go to the lexicographically first pair.
inline std::pair<std::size_t, std::size_t> closest_pair(std::span<const PoseSequence> predictions)
{
    if (predictions.size() < 2) {
        throw DataError("closest_pair needs at least two predictions");
    }
    std::pair<std::size_t, std::size_t> best{0, 1};
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        for (std::size_t j = i + 1; j < predictions.size(); ++j) {
            const double d = motion_distance(predictions[i], predictions[j]);
            if (d < best_d) {
                best_d = d;
                best = {i, j};
            }
        }
    }
    return best;
}

namespace obj_detail {

/// Sample n, batch element b of a [N, B, Z, 51] tensor as a pose sequence.
template <class T>
PoseSequence pose_of(const Tensor<T>& x, std::size_t n, std::size_t b)
{
    const std::size_t B = x.dim(1), Z = x.dim(2);
    PoseSequence p(Z);
    const T* src = x.values().data() + (n * B + b) * Z * kFrameWidth;
    std::copy(src, src + Z * kFrameWidth, p.values().begin());
    return p;
}

template <class T>
PoseSequence gt_of(const Tensor<T>& x, std::size_t b)
{
    const std::size_t Z = x.dim(1);
    PoseSequence p(Z);
    const T* src = x.values().data() + b * Z * kFrameWidth;
    std::copy(src, src + Z * kFrameWidth, p.values().begin());
    return p;
}

template <class T>
void check_batch(const Tensor<T>& preds, const Tensor<T>& gt, const char* what)
{
    if (preds.rank() != 4 || gt.rank() != 3 || preds.dim(1) != gt.dim(0) || preds.dim(2) != gt.dim(1) ||
        preds.dim(3) != kFrameWidth || gt.dim(2) != kFrameWidth) {
        throw ShapeError(std::string(what) + ": predictions " + nn::shape_str(preds.shape()) + " vs ground truth " +
                         nn::shape_str(gt.shape()));
    }
}

/// Rows gamma[b] * B + b of a [N, B, ...] tensor -> [B, ...].
template <class T>
Tensor<T> gather_samples(const Tensor<T>& x, const std::vector<std::size_t>& gamma)
{
    const std::size_t N = x.dim(0), B = x.dim(1);
    Shape flat = x.shape();
    flat.erase(flat.begin());
    flat[0] = N * B;
    std::vector<std::size_t> rows(B);
    for (std::size_t b = 0; b < B; ++b) {
        rows[b] = gamma.at(b) * B + b;
    }
    Shape out = x.shape();
    out.erase(out.begin());
    return nn::reshape(nn::index_select0(nn::reshape(x, flat), rows), out);
}

} // namespace obj_detail

/// Best-sample index per batch element from pose distances.
template <class T>
std::vector<std::size_t> select_best(const Tensor<T>& pose, const Tensor<T>& gt_pose)
{
    obj_detail::check_batch(pose, gt_pose, "select_best");
    std::vector<std::size_t> gamma(pose.dim(1));
    for (std::size_t b = 0; b < gamma.size(); ++b) {
        std::vector<PoseSequence> preds;
        for (std::size_t n = 0; n < pose.dim(0); ++n) {
            preds.push_back(obj_detail::pose_of(pose, n, b));
        }
        gamma[b] = select_best(preds, obj_detail::gt_of(gt_pose, b));
    }
    return gamma;
}

// ---------------------------------------------------------------------------
// Weights and reports

enum class SimMode { printed, capped };

inline const char* sim_mode_name(SimMode m) { return m == SimMode::capped ? "capped" : "printed"; }

inline SimMode parse_sim_mode(const std::string& s)
{
    if (s == "printed") {
        return SimMode::printed;
    }
    if (s == "capped") {
        return SimMode::capped;
    }
    throw ConfigError("sim_mode must be 'printed' or 'capped', got '" + s + "'");
}

struct LossWeights {
    double w_adv = 0.005;
    double w_best = 1.0;
    double w_tf = 1.0;
    double w_sim = 0.1;
    double w_joint = 0.1;
    double gp_lambda = 10.0;
    double sim_epsilon = 2.0;            // meters, compared with time-summed joint distances
    std::size_t sim_active_steps = 0;    // M
    double tf_probability = 0.3;
    SimMode sim_mode = SimMode::printed;

    void validate() const
    {
        for (double w : {w_adv, w_best, w_tf, w_sim, w_joint, gp_lambda, sim_epsilon}) {
            if (!(w >= 0.0) || !std::isfinite(w)) {
                throw ConfigError("loss weights must be finite and nonnegative");
            }
        }
        if (!(tf_probability >= 0.0 && tf_probability <= 1.0)) {
            throw ConfigError("tf_probability must be in [0, 1]");
        }
    }

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
    std::size_t step = 0;
    double adv = 0, best = 0, tf = 0, sim = 0, joint = 0, critic = 0, gp = 0;
    double total = 0;
    std::vector<std::size_t> gamma;                                // per batch element, 0-based
    std::vector<std::pair<std::size_t, std::size_t>> closest_pairs; // per batch element, 0-based
    double generator_grad_norm = 0;
    double critic_grad_norm = 0;

    /// `step=... gamma=<1-based index of the first batch element>`.
    std::string line() const
    {
        char buf[256];
        std::snprintf(buf, sizeof buf, "step=%zu adv=%.6g best=%.6g tf=%.6g sim=%.6g joint=%.6g critic=%.6g gp=%.6g gamma=%zu",
                      step, adv, best, tf, sim, joint, critic, gp, gamma.empty() ? std::size_t{0} : gamma[0] + 1);
        return buf;
    }
};

// ---------------------------------------------------------------------------
// Supervised losses

/// MSE of the selected sample's merged motion against the merged ground
/// truth, averaged over B * zeta * 51 terms.
template <class T>
Tensor<T> best_loss(const Tensor<T>& merged, const Tensor<T>& gt_merged, const std::vector<std::size_t>& gamma)
{
    obj_detail::check_batch(merged, gt_merged, "best_loss");
    return nn::mean_all(nn::square(nn::sub(obj_detail::gather_samples(merged, gamma), gt_merged)));
}

/// Re-rolls generator gamma[b] with ground-truth inputs substituted per
/// step with probability p; pose MSE in meters.
template <class T>
Tensor<T> teacher_forcing_loss(const Forecaster<T>& model, const Batch<T>& batch, const ForwardPass<T>& forward,
                               const std::vector<std::size_t>& gamma, double p, Rng& rng)
{
    const std::size_t B = batch.size;
    const std::size_t Z = model.config().zeta;
    TeacherForcing<T> tf;
    tf.frames = nn::reshape(batch.gt_pose_n, {B, 1, Z, kFrameWidth});
    tf.use.assign(Z * B, 0);
    for (std::size_t i = 1; i < Z; ++i) {
        for (std::size_t b = 0; b < B; ++b) {
            tf.use[i * B + b] = rng.bernoulli(p) ? 1 : 0;
        }
    }
    const Tensor<T> pose_n = model.rollout_selected(forward.hidden0, model.last_frame(batch), gamma, Z, &tf);
    return nn::mean_all(nn::square(nn::sub(model.denormalize(pose_n), batch.gt_pose)));
}

/// Diversity term on the closest pair of samples per batch element:
/// -(1/16) sum_j pen_j^2 over the 16 non-hip joints, averaged over the batch.
/// pen_j is the time-summed joint distance when it reaches epsilon and 0
/// below it; the capped mode uses min(distance, epsilon) instead.
template <class T>
Tensor<T> similarity_loss(const Tensor<T>& pose, double epsilon, SimMode mode = SimMode::printed,
                          std::vector<std::pair<std::size_t, std::size_t>>* pairs_out = nullptr)
{
    if (pose.rank() != 4 || pose.dim(3) != kFrameWidth) {
        throw ShapeError("similarity_loss: predictions " + nn::shape_str(pose.shape()));
    }
    const std::size_t N = pose.dim(0), B = pose.dim(1), Z = pose.dim(2);
    if (N < 2) {
        throw DataError("similarity_loss needs at least two samples");
    }
    std::vector<std::size_t> first(B), second(B);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<PoseSequence> preds;
        for (std::size_t n = 0; n < N; ++n) {
            preds.push_back(obj_detail::pose_of(pose, n, b));
        }
        std::tie(first[b], second[b]) = closest_pair(preds);
    }
    if (pairs_out) {
        pairs_out->clear();
        for (std::size_t b = 0; b < B; ++b) {
            pairs_out->emplace_back(first[b], second[b]);
        }
    }
    const Tensor<T> diff = nn::sub(obj_detail::gather_samples(pose, first), obj_detail::gather_samples(pose, second));
    const Tensor<T> per_joint = nn::sum_axis(nn::l2_last(nn::reshape(diff, {B, Z, kJoints, 3})), 1);  // [B, 17]
    const Tensor<T> dist = nn::slice_axis(per_joint, 1, 1, kJoints - 1);                                // [B, 16]
    const std::size_t J = kJoints - 1;
    Tensor<T> pen;
    if (mode == SimMode::printed) {
        std::vector<T> mask(B * J);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = dist[i] < epsilon ? T(0) : T(1);
        }
        pen = nn::mul(dist, Tensor<T>::constant({B, J}, std::move(mask)));
    } else {
        std::vector<T> below(B * J), cap(B * J);
        for (std::size_t i = 0; i < below.size(); ++i) {
            const bool under = dist[i] < epsilon;
            below[i] = under ? T(1) : T(0);
            cap[i] = under ? T(0) : static_cast<T>(epsilon);
        }
        pen = nn::add(nn::mul(dist, Tensor<T>::constant({B, J}, std::move(below))),
                      Tensor<T>::constant({B, J}, std::move(cap)));
    }
    return nn::scale(nn::sum_all(nn::square(pen)), -1.0 / static_cast<double>(J * B));
}

/// [51, 48] map from a pose frame to its 16 bone vectors (child - parent).
template <class T>
Tensor<T> bone_matrix(const SkeletonGraph& skeleton)
{
    skeleton.validate();
    const std::size_t E = skeleton.edges.size();
    std::vector<T> m(kFrameWidth * 3 * E, T(0));
    for (std::size_t e = 0; e < E; ++e) {
        const auto [p, c] = skeleton.edges[e];
        for (std::size_t k = 0; k < 3; ++k) {
            m[(3 * c + k) * 3 * E + 3 * e + k] += T(1);
            m[(3 * p + k) * 3 * E + 3 * e + k] -= T(1);
        }
    }
    return Tensor<T>::constant({kFrameWidth, 3 * E}, std::move(m));
}

/// Time-averaged bone lengths [..., zeta, 51] -> [..., 16].
template <class T>
Tensor<T> mean_bone_lengths(const Tensor<T>& pose, const Tensor<T>& bones)
{
    const std::size_t E = bones.dim(1) / 3;
    Shape shape = pose.shape();
    shape.back() = E;
    shape.push_back(3);
    const Tensor<T> lengths = nn::l2_last(nn::reshape(nn::mm(pose, bones), shape));  // [..., zeta, E]
    return nn::mean_axis(lengths, lengths.rank() - 2);
}

/// Squared error of time-averaged bone lengths against the ground truth's,
/// summed over edges and samples, averaged over the batch.
template <class T>
Tensor<T> joint_loss(const Tensor<T>& pose, const Tensor<T>& gt_pose,
                     const SkeletonGraph& skeleton = SkeletonGraph::standard17())
{
    obj_detail::check_batch(pose, gt_pose, "joint_loss");
    const Tensor<T> bones = bone_matrix<T>(skeleton);
    const Tensor<T> pred = mean_bone_lengths(pose, bones);              // [N, B, E]
    const Tensor<T> real = mean_bone_lengths(gt_pose.detach(), bones);  // [B, E]
    return nn::scale(nn::sum_all(nn::square(nn::sub(pred, real))), 1.0 / static_cast<double>(pose.dim(1)));
}

// ---------------------------------------------------------------------------
// Adversarial losses

/// E[f(fake)] - E[f(real)] + gp_term.
template <class T>
Tensor<T> critic_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores, const Tensor<T>& gp_term)
{
    return nn::add(nn::sub(nn::mean_all(fake_scores), nn::mean_all(real_scores)), gp_term);
}

template <class T>
Tensor<T> generator_adv_loss(const Tensor<T>& fake_scores)
{
    return nn::neg(nn::mean_all(fake_scores));
}

/// lambda * E[(||grad f(x)||_2 - 1)^2] at x = u * real + (1 - u) * fake,
/// one u per row. `critic` maps [R, ...] motions to [R] scores; real and fake
/// are [R, ...] and are not differentiated.
template <class T, class Critic>
Tensor<T> gradient_penalty(Critic&& critic, const Tensor<T>& real, const Tensor<T>& fake, const std::vector<T>& u,
                           double lambda)
{
    if (real.shape() != fake.shape() || u.size() != real.dim(0)) {
        throw ShapeError("gradient_penalty: real " + nn::shape_str(real.shape()) + ", fake " +
                         nn::shape_str(fake.shape()) + ", " + std::to_string(u.size()) + " mixing weights");
    }
    const std::size_t R = real.dim(0);
    const std::size_t row = real.numel() / R;
    std::vector<T> mix(real.numel());
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t k = 0; k < row; ++k) {
            const std::size_t i = r * row + k;
            mix[i] = u[r] * real[i] + (T(1) - u[r]) * fake[i];
        }
    }
    const Tensor<T> x = Tensor<T>::parameter(real.shape(), std::move(mix));
    const Tensor<T> scores = critic(x);
    const Tensor<T> g = nn::gradients(nn::sum_all(scores), {x}, true)[0];
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t k = 0; k < row; ++k) {
            if (!std::isfinite(g[r * row + k])) {
                throw NumericError("non-finite critic input gradient at batch index " + std::to_string(r));
            }
        }
    }
    const Tensor<T> norms = nn::l2_last(nn::reshape(g, {R, row}));
    return nn::scale(nn::mean_all(nn::square(nn::add_scalar(norms, -1.0))), lambda);
}

// ---------------------------------------------------------------------------
// Combination

template <class T>
struct LossComponents {
    Tensor<T> adv, best, tf, sim, joint;
};

/// w_adv L_g + w_best L_best + w_tf L_tf + w_sim L_sim [step <= M] + w_joint L_joint.
/// Terms with zero weight (and the similarity term after step M) are left out
/// of the expression entirely, so they contribute exactly nothing.
template <class T>
Tensor<T> total_generator_loss(const LossComponents<T>& c, const LossWeights& w, std::size_t step)
{
    Tensor<T> total = Tensor<T>::scalar(T(0));
    auto term = [&](const Tensor<T>& x, double weight) {
        if (weight != 0.0 && x.defined()) {
            total = nn::add(total, nn::scale(x, weight));
        }
    };
    term(c.adv, w.w_adv);
    term(c.best, w.w_best);
    term(c.tf, w.w_tf);
    if (step <= w.sim_active_steps) {
        term(c.sim, w.w_sim);
    }
    term(c.joint, w.w_joint);
    return total;
}

/// All generator-side losses for one batch.
template <class T>
struct GeneratorObjective {
    ForwardPass<T> forward;
    LossComponents<T> components;
    Tensor<T> total;
    std::vector<std::size_t> gamma;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Components whose weight is zero (or the similarity term past M) are not
/// computed. The teacher-forcing coin flips are drawn from `rng`
/// only when that term is active.
template <class T>
GeneratorObjective<T> generator_objective(const Forecaster<T>& model, const Batch<T>& batch, ForwardPass<T> forward,
                                          const LossWeights& w, std::size_t step, Rng& rng)
{
    GeneratorObjective<T> o;
    o.forward = std::move(forward);
    const auto& f = o.forward;
    o.gamma = select_best(f.pose, batch.gt_pose);
    const Tensor<T> gt_merged = merge_tensor(batch.gt_pose, batch.gt_hip);
    if (w.w_adv != 0.0) {
        o.components.adv = generator_adv_loss(model.critic_score(f.merged));
    }
    if (w.w_best != 0.0) {
        o.components.best = best_loss(f.merged, gt_merged, o.gamma);
    }
    if (w.w_tf != 0.0) {
        o.components.tf = teacher_forcing_loss(model, batch, f, o.gamma, w.tf_probability, rng);
    }
    if (w.w_sim != 0.0 && step <= w.sim_active_steps && model.config().n_samples >= 2) {
        o.components.sim = similarity_loss(f.pose, w.sim_epsilon, w.sim_mode, &o.pairs);
    }
    if (w.w_joint != 0.0) {
        o.components.joint = joint_loss(f.pose, batch.gt_pose);
    }
    o.total = total_generator_loss(o.components, w, step);
    return o;
}

template <class T>
GeneratorObjective<T> generator_objective(const Forecaster<T>& model, const Batch<T>& batch, const LossWeights& w,
                                          std::size_t step, Rng& rng)
{
    return generator_objective(model, batch, model.forward(batch), w, step, rng);
}

// ---------------------------------------------------------------------------
// Single-observation forms over prediction sets

namespace obj_detail {

inline Tensor<double> stack_poses(const PredictionSet& set)
{
    set.validate();
    const std::size_t N = set.size(), Z = set.horizon();
    std::vector<double> v;
    v.reserve(N * Z * kFrameWidth);
    for (const auto& s : set.samples) {
        v.insert(v.end(), s.pose.values().begin(), s.pose.values().end());
    }
    return Tensor<double>::constant({N, 1, Z, kFrameWidth}, std::move(v));
}

inline Tensor<double> stack_hips(const PredictionSet& set)
{
    const std::size_t N = set.size(), Z = set.horizon();
    std::vector<double> v;
    for (const auto& s : set.samples) {
        v.insert(v.end(), s.hip.values().begin(), s.hip.values().end());
    }
    return Tensor<double>::constant({N, 1, Z, 3}, std::move(v));
}

inline void check_horizon(const PredictionSet& set, const MotionSplit& gt)
{
    if (set.horizon() != gt.length()) {
        throw ShapeError("prediction horizon " + std::to_string(set.horizon()) + " vs ground truth " +
                         std::to_string(gt.length()));
    }
}

} // namespace obj_detail

inline double best_loss(const PredictionSet& set, const MotionSplit& gt)
{
    obj_detail::check_horizon(set, gt);
    const std::size_t Z = gt.length();
    const auto pose = obj_detail::stack_poses(set);
    const auto merged = merge_tensor(pose, obj_detail::stack_hips(set));
    const auto gt_pose = Tensor<double>::constant({1, Z, kFrameWidth}, gt.pose.values());
    const auto gt_merged = merge_tensor(gt_pose, Tensor<double>::constant({1, Z, 3}, gt.hip.values()));
    return best_loss(merged, gt_merged, select_best(pose, gt_pose)).item();
}

inline double similarity_loss(const std::vector<PoseSequence>& samples, double epsilon, SimMode mode = SimMode::printed)
{
    if (samples.size() < 2) {
        throw DataError("similarity_loss needs at least two samples");
    }
    PredictionSet set;
    for (const auto& s : samples) {
        set.samples.push_back({10, HipTrajectory(s.frames()), s});
    }
    return similarity_loss(obj_detail::stack_poses(set), epsilon, mode).item();
}

inline double joint_loss(const std::vector<PoseSequence>& samples, const PoseSequence& gt,
                         const SkeletonGraph& skeleton = SkeletonGraph::standard17())
{
    PredictionSet set;
    for (const auto& s : samples) {
        set.samples.push_back({10, HipTrajectory(s.frames()), s});
    }
    const auto gt_t = Tensor<double>::constant({1, gt.frames(), kFrameWidth}, gt.values());
    return joint_loss(obj_detail::stack_poses(set), gt_t, skeleton).item();
}

} // namespace dmm
