#pragma once

// Pose module (history encoder, N prior heads, N GRU generators), hip
// module (hip-history encoder, predicted-pose encoder, hip GRU) and critic.
//
// Everything runs batched. Generator tensors carry a leading sample axis:
// poses are [N, B, frames, 51] in normalized units, hips [N, B, frames, 3]
// in meters relative to the last observed hip.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "dmm/motion.hpp"
#include "dmm/nn/layers.hpp"
#include "dmm/prediction.hpp"

namespace dmm {

using nn::EncoderConfig;
using nn::Shape;
using nn::Tensor;

struct ModelConfig {
    std::size_t n_samples = 10;
    std::size_t alpha = 5;
    std::size_t zeta = 20;
    EncoderConfig pose_encoder{kFrameWidth, 64, 4, 2, 128, 64, true};
    std::size_t gru_hidden = 128;
    EncoderConfig hip_encoder{3, 32, 2, 1, 64, 64, true};
    EncoderConfig hip_pose_encoder{kFrameWidth, 32, 2, 1, 64, 64, true};
    std::size_t hip_hidden = 64;
    EncoderConfig critic_encoder{kFrameWidth, 32, 2, 1, 64, 64, true};
    bool hip_residual = true;
    /// Per-frame pose displacement bound in normalized units (b * tanh(d / b)); 0 leaves it unbounded.
    double max_pose_step = 0.5;
    /// Init gain of the per-generator pose output heads.
    double pose_head_gain = 1.0;

    void validate() const
    {
        if (n_samples < 1 || alpha < 1 || zeta < 1 || gru_hidden < 1 || hip_hidden < 1) {
            throw ConfigError("model sizes must be positive");
        }
        if (!(max_pose_step >= 0.0)) {
            throw ConfigError("max_pose_step must be nonnegative");
        }
        if (!(pose_head_gain >= 0.0)) {
            throw ConfigError("pose_head_gain must be nonnegative");
        }
        pose_encoder.validate();
        hip_encoder.validate();
        hip_pose_encoder.validate();
        critic_encoder.validate();
        if (pose_encoder.input_dim != kFrameWidth || hip_pose_encoder.input_dim != kFrameWidth ||
            critic_encoder.input_dim != kFrameWidth || hip_encoder.input_dim != 3) {
            throw ConfigError("encoder input widths must be 51 (pose, critic) and 3 (hip)");
        }
        if (alpha > pose_encoder.max_sequence_len || alpha > hip_encoder.max_sequence_len ||
            zeta > hip_pose_encoder.max_sequence_len || zeta > critic_encoder.max_sequence_len) {
            throw ConfigError("alpha/zeta exceed an encoder's max_sequence_len");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Sample pairs turned into tensors. Pairs must already be rebased to the
/// last observed hip.
template <class T>
struct Batch {
    std::size_t size = 0;
    Tensor<T> obs_pose;  // [B, alpha, 51] normalized
    Tensor<T> obs_hip;   // [B, alpha, 3]
    Tensor<T> gt_pose_n; // [B, zeta, 51] normalized
    Tensor<T> gt_pose;   // [B, zeta, 51] meters
    Tensor<T> gt_hip;    // [B, zeta, 3]
};

template <class T>
Batch<T> make_batch(const std::vector<SamplePair>& rebased, const std::vector<std::size_t>& index,
                    const NormalizationStats& stats)
{
    if (index.empty()) {
        throw DataError("empty batch");
    }
    const std::size_t B = index.size();
    const std::size_t alpha = rebased[index[0]].observed.length();
    const std::size_t zeta = rebased[index[0]].future.length();
    std::vector<T> op, oh, gn, gp, gh;
    op.reserve(B * alpha * kFrameWidth);
    gp.reserve(B * zeta * kFrameWidth);
    gn.reserve(B * zeta * kFrameWidth);
    for (const std::size_t i : index) {
        const auto& p = rebased.at(i);
        if (p.observed.length() != alpha || p.future.length() != zeta) {
            throw DataError("batch pairs disagree on alpha/zeta");
        }
        const PoseSequence observed_n = apply_normalization(p.observed.pose, stats);
        for (const double v : observed_n.values()) {
            op.push_back(static_cast<T>(v));
        }
        for (const double v : p.observed.hip.values()) {
            oh.push_back(static_cast<T>(v));
        }
        const PoseSequence future_n = apply_normalization(p.future.pose, stats);
        for (const double v : future_n.values()) {
            gn.push_back(static_cast<T>(v));
        }
        for (const double v : p.future.pose.values()) {
            gp.push_back(static_cast<T>(v));
        }
        for (const double v : p.future.hip.values()) {
            gh.push_back(static_cast<T>(v));
        }
    }
    Batch<T> b;
    b.size = B;
    b.obs_pose = Tensor<T>::constant({B, alpha, kFrameWidth}, std::move(op));
    b.obs_hip = Tensor<T>::constant({B, alpha, 3}, std::move(oh));
    b.gt_pose_n = Tensor<T>::constant({B, zeta, kFrameWidth}, std::move(gn));
    b.gt_pose = Tensor<T>::constant({B, zeta, kFrameWidth}, std::move(gp));
    b.gt_hip = Tensor<T>::constant({B, zeta, 3}, std::move(gh));
    return b;
}

/// pose [..., F, 51] + hip [..., F, 3] -> merged [..., F, 51].
template <class T>
Tensor<T> merge_tensor(const Tensor<T>& pose, const Tensor<T>& hip)
{
    Shape joints = pose.shape();
    joints.back() = kJoints;
    joints.push_back(3);
    const Tensor<T> p = nn::reshape(pose, joints);
    return nn::reshape(nn::add(p, nn::expand_axis(hip, hip.rank() - 1, kJoints)), pose.shape());
}

/// Per-step ground-truth substitution for the autoregressive inputs.
template <class T>
struct TeacherForcing {
    Tensor<T> frames;               // [G, M, zeta, 51] normalized ground truth
    std::vector<std::uint8_t> use;  // [zeta][G*M]: 1 = step input is the GT frame of the previous step
};

template <class T>
struct ForwardPass {
    Tensor<T> latent;   // l_E, [B, sigma]
    Tensor<T> hidden0;  // priors, [N, B, H]
    Tensor<T> pose_n;   // [N, B, zeta, 51]
    Tensor<T> pose;     // meters
    Tensor<T> hip;      // [N, B, zeta, 3]
    Tensor<T> merged;   // [N, B, zeta, 51]
};

template <class T>
class Forecaster {
public:
    Forecaster(const ModelConfig& config, std::uint64_t seed) : config_(config)
    {
        config.validate();
        constexpr std::size_t F = kFrameWidth;
        const std::size_t N = config.n_samples;
        const std::size_t H = config.gru_hidden;
        Rng rng(seed);
        using nn::GruParams;
        using nn::LinearParams;
        pose_encoder_ = nn::Encoder<T>(gen_, "pose.encoder", config.pose_encoder, rng);
        prior_ = LinearParams<T>::create(gen_, "pose.prior", config.pose_encoder.embed_dim, H, rng, N);
        gru_ = GruParams<T>::create(gen_, "pose.gru", F, H, rng, N);
        out_ = LinearParams<T>::create(gen_, "pose.out", H, F, rng, N, config.pose_head_gain);
        hip_encoder_ = nn::Encoder<T>(gen_, "hip.history", config.hip_encoder, rng);
        hip_pose_encoder_ = nn::Encoder<T>(gen_, "hip.pose", config.hip_pose_encoder, rng);
        const std::size_t hip_in = config.hip_pose_encoder.embed_dim + config.hip_encoder.embed_dim + 3;
        hip_gru_ = GruParams<T>::create(gen_, "hip.gru", hip_in, config.hip_hidden, rng);
        hip_out_ = LinearParams<T>::create(gen_, "hip.out", config.hip_hidden, 3, rng);
        Rng critic_rng(Rng::derive(seed, 1));
        critic_encoder_ = nn::Encoder<T>(critic_, "critic.encoder", config.critic_encoder, critic_rng);
        critic_head_ = LinearParams<T>::create(critic_, "critic.head", config.critic_encoder.embed_dim, 1, critic_rng);

        std::vector<T> mask(F, T(1));
        for (std::size_t c = 0; c < 3; ++c) {
            mask[3 * kHipIndex + c] = T(0);
        }
        hip_mask_ = Tensor<T>::constant({F}, mask);
        set_normalization(identity_stats());
    }

    Forecaster(const Forecaster&) = delete;
    Forecaster& operator=(const Forecaster&) = delete;
    Forecaster(Forecaster&&) = default;
    Forecaster& operator=(Forecaster&&) = default;

    const ModelConfig& config() const noexcept { return config_; }
    nn::ParameterStore<T>& generator_params() noexcept { return gen_; }
    const nn::ParameterStore<T>& generator_params() const noexcept { return gen_; }
    nn::ParameterStore<T>& critic_params() noexcept { return critic_; }
    const nn::ParameterStore<T>& critic_params() const noexcept { return critic_; }
    const NormalizationStats& normalization() const noexcept { return stats_; }

    void set_normalization(const NormalizationStats& stats)
    {
        stats_ = stats;
        std::vector<T> m(kFrameWidth), s(kFrameWidth);
        for (std::size_t k = 0; k < kFrameWidth; ++k) {
            m[k] = static_cast<T>(stats.mean[k]);
            s[k] = static_cast<T>(stats.std[k]);
        }
        mean_ = Tensor<T>::constant({kFrameWidth}, m);
        std_ = Tensor<T>::constant({kFrameWidth}, s);
    }

    static NormalizationStats identity_stats()
    {
        NormalizationStats s;
        s.std.fill(1.0);
        return s;
    }

    /// Short identifier of the generator weights.
    std::string version() const
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "dmm-%016llx", static_cast<unsigned long long>(gen_.fingerprint()));
        return buf;
    }

    // -- pose module ---------------------------------------------------------

    /// [B, alpha, 51] normalized -> l_E [B, sigma].
    Tensor<T> encode_pose_history(const Tensor<T>& obs_pose) const
    {
        if (obs_pose.rank() != 3 || obs_pose.dim(1) != config_.alpha) {
            throw ShapeError("pose history " + nn::shape_str(obs_pose.shape()) + ", expected alpha=" +
                             std::to_string(config_.alpha) + " frames");
        }
        return pose_encoder_.pooled(obs_pose);
    }

    /// z_n = f_n(l_E) for every sample head: [N, B, H].
    Tensor<T> priors(const Tensor<T>& latent) const
    {
        return prior_(nn::expand_axis(latent, 0, config_.n_samples));
    }

    /// Autoregressive rollout of all N generators from their priors.
    /// `last_frame` is the last observed normalized frame, [B, 51].
    Tensor<T> generate_pose_samples(const Tensor<T>& hidden0, const Tensor<T>& last_frame, std::size_t horizon,
                                    const TeacherForcing<T>* teacher = nullptr) const
    {
        const std::size_t N = config_.n_samples;
        return rollout(hidden0, nn::expand_axis(last_frame, 0, N), gru_, out_, horizon, teacher);
    }

    /// Re-rolls one generator per batch element (generator `gamma[b]` for
    /// element b): [B, horizon, 51].
    Tensor<T> rollout_selected(const Tensor<T>& hidden0, const Tensor<T>& last_frame,
                               const std::vector<std::size_t>& gamma, std::size_t horizon,
                               const TeacherForcing<T>* teacher = nullptr) const
    {
        const std::size_t N = config_.n_samples;
        const std::size_t B = last_frame.dim(0);
        const std::size_t H = config_.gru_hidden;
        if (gamma.size() != B) {
            throw ShapeError("rollout_selected: one generator index per batch element required");
        }
        std::vector<std::size_t> rows(B);
        for (std::size_t b = 0; b < B; ++b) {
            if (gamma[b] >= N) {
                throw ShapeError("generator index out of range");
            }
            rows[b] = gamma[b] * B + b;
        }
        const Tensor<T> h0 = nn::reshape(nn::index_select0(nn::reshape(hidden0, {N * B, H}), rows), {B, 1, H});
        const nn::LinearParams<T> out{nn::index_select0(out_.w, gamma), nn::index_select0(out_.b, gamma)};
        const Tensor<T> first = nn::reshape(last_frame, {B, 1, kFrameWidth});
        const Tensor<T> pose = rollout(h0, first, gru_.select(gamma), out, horizon, teacher);
        return nn::reshape(pose, {B, horizon, kFrameWidth});
    }

    /// Normalized -> meters.
    Tensor<T> denormalize(const Tensor<T>& pose_n) const { return nn::add(nn::mul(pose_n, std_), mean_); }

    // -- hip module ----------------------------------------------------------

    /// obs_hip [B, alpha, 3], pose_n [N, B, zeta, 51] -> hip [N, B, zeta, 3].
    Tensor<T> predict_hip(const Tensor<T>& obs_hip, const Tensor<T>& pose_n) const
    {
        if (pose_n.rank() != 4 || obs_hip.rank() != 3 || pose_n.dim(1) != obs_hip.dim(0)) {
            throw ShapeError("predict_hip: hip " + nn::shape_str(obs_hip.shape()) + " vs pose " +
                             nn::shape_str(pose_n.shape()));
        }
        const std::size_t N = pose_n.dim(0);
        const std::size_t B = pose_n.dim(1);
        const std::size_t Z = pose_n.dim(2);
        const std::size_t NB = N * B;
        const std::size_t dh = config_.hip_encoder.embed_dim;
        const std::size_t dp = config_.hip_pose_encoder.embed_dim;
        const Tensor<T> l_h = nn::reshape(nn::expand_axis(hip_encoder_.pooled(obs_hip), 0, N), {NB, dh});
        const Tensor<T> l_p = hip_pose_encoder_(nn::reshape(pose_n, {NB, Z, kFrameWidth}));

        Tensor<T> h = Tensor<T>::zeros({NB, config_.hip_hidden});
        Tensor<T> prev = Tensor<T>::zeros({NB, 3});
        std::vector<Tensor<T>> steps;
        steps.reserve(Z);
        for (std::size_t i = 0; i < Z; ++i) {
            const Tensor<T> l_pi = nn::reshape(nn::slice_axis(l_p, 1, i, 1), {NB, dp});
            h = nn::gru_step(h, nn::concat_axis<T>({l_pi, l_h, prev}, 1), hip_gru_);
            const Tensor<T> step = hip_out_(h);
            prev = config_.hip_residual ? nn::add(prev, step) : step;
            steps.push_back(nn::reshape(prev, {NB, 1, 3}));
        }
        return nn::reshape(nn::concat_axis(steps, 1), {N, B, Z, 3});
    }

    // -- critic --------------------------------------------------------------

    /// Merged motions [..., zeta, 51] (meters) -> one score per motion.
    Tensor<T> critic_score(const Tensor<T>& motion) const
    {
        if (motion.rank() < 2 || motion.dim(motion.rank() - 2) != config_.zeta) {
            throw ShapeError("critic input " + nn::shape_str(motion.shape()) + ", expected zeta=" +
                             std::to_string(config_.zeta) + " frames");
        }
        const std::size_t count = motion.numel() / (config_.zeta * kFrameWidth);
        const Tensor<T> x = nn::reshape(motion, {count, config_.zeta, kFrameWidth});
        return nn::reshape(critic_head_(critic_encoder_.pooled(x)), {count});
    }

    // -- composition ---------------------------------------------------------

    ForwardPass<T> forward(const Batch<T>& batch, const TeacherForcing<T>* teacher = nullptr) const
    {
        ForwardPass<T> f;
        f.latent = encode_pose_history(batch.obs_pose);
        f.hidden0 = priors(f.latent);
        f.pose_n = generate_pose_samples(f.hidden0, last_frame(batch), config_.zeta, teacher);
        f.pose = denormalize(f.pose_n);
        f.hip = predict_hip(batch.obs_hip, f.pose_n);
        f.merged = merge_tensor(f.pose, f.hip);
        return f;
    }

    Tensor<T> last_frame(const Batch<T>& batch) const
    {
        const std::size_t B = batch.size;
        return nn::reshape(nn::slice_axis(batch.obs_pose, 1, config_.alpha - 1, 1), {B, kFrameWidth});
    }

    /// N futures for one observation, in meters and in the observation's
    /// world frame. `n` keeps the first n generators (0 = all).
    PredictionSet forecast(const MotionSplit& observed, std::size_t n = 0) const
    {
        observed.validate();
        if (observed.length() != config_.alpha) {
            throw DataError("observation has " + std::to_string(observed.length()) + " frames, model expects alpha=" +
                            std::to_string(config_.alpha));
        }
        if (n == 0) {
            n = config_.n_samples;
        }
        if (n > config_.n_samples) {
            throw ConfigError("requested " + std::to_string(n) + " samples from a model with " +
                              std::to_string(config_.n_samples) + " generators");
        }
        SamplePair pair{observed, observed, std::nullopt};
        pair = rebase_pair(pair);
        // the future slot is a placeholder of the right length
        pair.future = MotionSplit{observed.fps, HipTrajectory(config_.zeta), PoseSequence(config_.zeta)};
        nn::NoGrad no_grad;
        const Batch<T> batch = make_batch<T>({pair}, {0}, stats_);
        const ForwardPass<T> f = forward(batch);
        PredictionSet set;
        set.model_version = version();
        const std::size_t Z = config_.zeta;
        for (std::size_t g = 0; g < n; ++g) {
            MotionSplit s{observed.fps, HipTrajectory(Z), PoseSequence(Z)};
            for (std::size_t t = 0; t < Z; ++t) {
                for (std::size_t k = 0; k < kFrameWidth; ++k) {
                    s.pose.at(t, k) = static_cast<double>(f.pose[(g * Z + t) * kFrameWidth + k]);
                }
                for (std::size_t c = 0; c < 3; ++c) {
                    s.hip.at(t, c) = static_cast<double>(f.hip[(g * Z + t) * 3 + c]) +
                                     observed.hip.at(config_.alpha - 1, c);
                }
            }
            set.samples.push_back(std::move(s));
        }
        return set;
    }

private:
    /// h0 [G, M, H], first [G, M, 51] -> [G, M, horizon, 51]. Each step adds
    /// the output head's displacement (hip columns masked) to its input frame.
    Tensor<T> rollout(const Tensor<T>& h0, const Tensor<T>& first, const nn::GruParams<T>& gru,
                      const nn::LinearParams<T>& out, std::size_t horizon, const TeacherForcing<T>* teacher) const
    {
        if (horizon < 1) {
            throw ShapeError("rollout horizon must be at least 1");
        }
        const std::size_t G = h0.dim(0);
        const std::size_t M = h0.dim(1);
        const nn::GruParams<T> cell = gru.expanded(M);
        const nn::LinearParams<T> head{out.w, nn::expand_axis(out.b, 1, M)};
        if (teacher && (teacher->frames.dim(0) != G || teacher->frames.dim(1) != M ||
                        teacher->use.size() < horizon * G * M)) {
            throw ShapeError("teacher forcing tensors do not match the rollout");
        }
        Tensor<T> h = h0;
        Tensor<T> input = first;
        std::vector<Tensor<T>> frames;
        frames.reserve(horizon);
        for (std::size_t i = 0; i < horizon; ++i) {
            if (i > 0 && teacher) {
                input = substitute(input, *teacher, i);
            }
            h = nn::gru_step(h, input, cell);
            Tensor<T> step = head(h);
            if (const double b = config_.max_pose_step; b > 0.0) {
                step = nn::scale(nn::tanh(nn::scale(step, 1.0 / b)), b);
            }
            const Tensor<T> frame = nn::add(input, nn::mul(step, hip_mask_));
            frames.push_back(nn::reshape(frame, {G, M, 1, kFrameWidth}));
            input = frame;
        }
        return nn::concat_axis(frames, 2);
    }

    static Tensor<T> substitute(const Tensor<T>& predicted, const TeacherForcing<T>& teacher, std::size_t step)
    {
        const std::size_t G = predicted.dim(0);
        const std::size_t M = predicted.dim(1);
        const std::uint8_t* use = teacher.use.data() + step * G * M;
        if (std::none_of(use, use + G * M, [](std::uint8_t u) { return u != 0; })) {
            return predicted;
        }
        std::vector<T> keep(G * M * kFrameWidth), take(G * M * kFrameWidth);
        for (std::size_t r = 0; r < G * M; ++r) {
            std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(r * kFrameWidth), kFrameWidth, use[r] ? T(0) : T(1));
            std::fill_n(take.begin() + static_cast<std::ptrdiff_t>(r * kFrameWidth), kFrameWidth, use[r] ? T(1) : T(0));
        }
        const Shape shape{G, M, kFrameWidth};
        const Tensor<T> gt = nn::reshape(nn::slice_axis(teacher.frames, 2, step - 1, 1), shape);
        return nn::add(nn::mul(predicted, Tensor<T>::constant(shape, std::move(keep))),
                       nn::mul(gt, Tensor<T>::constant(shape, std::move(take))));
    }

    ModelConfig config_;
    NormalizationStats stats_;
    nn::ParameterStore<T> gen_;
    nn::ParameterStore<T> critic_;
    nn::Encoder<T> pose_encoder_;
    nn::LinearParams<T> prior_;
    nn::GruParams<T> gru_;
    nn::LinearParams<T> out_;
    nn::Encoder<T> hip_encoder_;
    nn::Encoder<T> hip_pose_encoder_;
    nn::GruParams<T> hip_gru_;
    nn::LinearParams<T> hip_out_;
    nn::Encoder<T> critic_encoder_;
    nn::LinearParams<T> critic_head_;
    Tensor<T> hip_mask_;
    Tensor<T> mean_;
    Tensor<T> std_;
};

} // namespace dmm
