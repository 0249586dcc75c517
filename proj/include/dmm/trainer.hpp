#pragma once

// Adversarial training loop: k critic updates, then one generator update per step.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "dmm/checkpoint.hpp"
#include "dmm/objectives.hpp"

namespace dmm {

/// Hip-relative copies of the pairs, the form the model trains on.
inline std::vector<SamplePair> rebase_pairs(const std::vector<SamplePair>& pairs)
{
    std::vector<SamplePair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back(rebase_pair(p));
    }
    return out;
}

inline NormalizationStats fit_pair_normalization(const std::vector<SamplePair>& pairs)
{
    std::vector<PoseSequence> poses;
    poses.reserve(2 * pairs.size());
    for (const auto& p : pairs) {
        poses.push_back(p.observed.pose);
        poses.push_back(p.future.pose);
    }
    return fit_normalization(poses);
}

/// Fresh state with normalization fitted on the training pairs.
inline TrainState init_train_state(const TrainConfig& config, const std::vector<SamplePair>& train)
{
    config.validate();
    if (train.empty()) {
        throw DataError("training set is empty");
    }
    for (const auto& p : train) {
        if (p.observed.length() != config.model.alpha || p.future.length() != config.model.zeta) {
            throw DataError("training pair has " + std::to_string(p.observed.length()) + "+" +
                            std::to_string(p.future.length()) + " frames, model expects alpha=" +
                            std::to_string(config.model.alpha) + " zeta=" + std::to_string(config.model.zeta));
        }
    }
    TrainState s(config);
    s.model.set_normalization(fit_pair_normalization(train));
    return s;
}

namespace train_detail {

inline std::string batch_text(const std::vector<std::size_t>& index)
{
    std::string out;
    for (std::size_t i = 0; i < index.size(); ++i) {
        out += (i ? "," : "") + std::to_string(index[i] + 1);
    }
    return out;
}

/// Keeps the lines of an existing log up to and including `step`, so a
/// resumed run continues it without repeating steps.
inline void truncate_log(const std::filesystem::path& path, std::size_t step)
{
    std::ifstream in(path);
    if (!in) {
        return;
    }
    std::string kept, line;
    while (std::getline(in, line)) {
        std::size_t k = 0;
        if (std::sscanf(line.c_str(), "step=%zu", &k) == 1 && k > step) {
            break;
        }
        kept += line + "\n";
    }
    in.close();
    std::ofstream(path, std::ios::trunc) << kept;
}

} // namespace train_detail

/// Throws NumericError naming the loss, step and batch for non-finite or
/// oversized values.
struct LossGuard {
    double threshold;
    std::size_t step;
    const std::vector<std::size_t>* index;

    double operator()(const char* name, double v) const
    {
        if (!std::isfinite(v) || std::abs(v) > threshold) {
            throw NumericError("loss " + std::string(name) + " = " + std::to_string(v) + " at step " +
                               std::to_string(step) + " (batch " + train_detail::batch_text(*index) + ")");
        }
        return v;
    }
};

/// k critic updates against one rollout. Each update scores one generator
/// per batch element, drawn from the N * B pool. Touches only the critic store.
inline void update_critic(TrainState& s, const Batch<float>& batch, const Tensor<float>& merged,
                          const LossWeights& w, Rng& rng, const LossGuard& guard, LossReport& report)
{
    using T = float;
    const std::size_t B = batch.size, N = s.config.model.n_samples, Z = s.config.model.zeta;
    const Tensor<T> pool = nn::reshape(merged.detach(), {N * B, Z * kFrameWidth});
    const Tensor<T> real = merge_tensor(batch.gt_pose, batch.gt_hip);
    const auto critic = [&](const Tensor<T>& x) { return s.model.critic_score(x); };
    auto& store = s.model.critic_params();
    for (std::size_t k = 0; k < s.config.critic_updates; ++k) {
        std::vector<std::size_t> rows(B);
        for (std::size_t b = 0; b < B; ++b) {
            rows[b] = static_cast<std::size_t>(rng.below(N)) * B + b;
        }
        const Tensor<T> fake = nn::reshape(nn::index_select0(pool, rows), {B, Z, kFrameWidth});
        std::vector<T> u(B);
        for (auto& x : u) {
            x = static_cast<T>(rng.uniform());
        }
        const auto gp = gradient_penalty<T>(critic, real, fake, u, w.gp_lambda);
        const auto loss = critic_loss(critic(real), critic(fake), gp);
        report.gp = guard("gp", gp.item());
        report.critic = guard("critic", loss.item());
        store.accumulate(loss);
        nn::optimizer_step(store, s.critic_opt);
    }
    report.critic_grad_norm = s.critic_opt.last_grad_norm;
}

/// One generator update on the total loss. Touches only the generator store.
inline void update_generator(TrainState& s, const Batch<float>& batch, ForwardPass<float> forward,
                             const LossWeights& w, std::size_t step, Rng& rng, const LossGuard& guard,
                             LossReport& report)
{
    using T = float;
    const auto obj = generator_objective(s.model, batch, std::move(forward), w, step, rng);
    auto value = [&](const char* name, const Tensor<T>& t) { return t.defined() ? guard(name, t.item()) : 0.0; };
    report.adv = value("adv", obj.components.adv);
    report.best = value("best", obj.components.best);
    report.tf = value("tf", obj.components.tf);
    report.sim = value("sim", obj.components.sim);
    report.joint = value("joint", obj.components.joint);
    report.total = guard("total", obj.total.item());
    report.gamma = obj.gamma;
    report.closest_pairs = obj.pairs;

    auto& gen = s.model.generator_params();
    if (s.config.freeze_pose_path) {
        gen.accumulate(obj.total, [](const std::string& name) { return name.rfind("pose.", 0) != 0; });
    } else {
        gen.accumulate(obj.total);
    }
    nn::optimizer_step(gen, s.gen_opt);
    report.generator_grad_norm = s.gen_opt.last_grad_norm;
}

/// Batch indices, the first draws of a step's rng.
inline std::vector<std::size_t> draw_batch(std::size_t batch_size, std::size_t corpus, Rng& rng)
{
    std::vector<std::size_t> index(batch_size);
    for (auto& i : index) {
        i = static_cast<std::size_t>(rng.below(corpus));
    }
    return index;
}

/// One training step on hip-relative pairs: k critic updates, then one
/// generator update, all randomness drawn from a generator seeded by
/// (seed, step).
inline LossReport train_step(TrainState& s, const std::vector<SamplePair>& rebased)
{
    const TrainConfig& c = s.config;
    const LossWeights w = c.resolved_weights();
    const std::size_t step = s.step + 1;
    Rng rng(Rng::derive(c.seed, step));
    const std::vector<std::size_t> index = draw_batch(c.batch_size, rebased.size(), rng);
    const LossGuard guard{c.abort_threshold, step, &index};
    LossReport report;
    report.step = step;
    try {
        const Batch<float> batch = make_batch<float>(rebased, index, s.model.normalization());
        ForwardPass<float> forward = s.model.forward(batch);
        if (c.critic_updates > 0 && w.w_adv != 0.0) {
            update_critic(s, batch, forward.merged, w, rng, guard, report);
        }
        update_generator(s, batch, std::move(forward), w, step, rng, guard, report);
    } catch (const NumericError& e) {
        const std::string what = e.what();
        if (what.rfind("loss ", 0) == 0) {
            throw;
        }
        throw NumericError(what + " at step " + std::to_string(step) + " (batch " + train_detail::batch_text(index) +
                           ")");
    }
    s.step = step;
    s.ema_total = step == 1 ? report.total : 0.98 * s.ema_total + 0.02 * report.total;
    return report;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t step)
{
    return dir / ("ckpt_" + std::to_string(step) + ".dmm");
}

struct TrainOptions {
    std::filesystem::path out_dir;
    std::ostream* echo = nullptr;  // receives every log line as well
    std::function<void(const LossReport&)> on_step;
};

/// Runs from s.step to config.total_steps, appending one line per step to
/// train.log and writing ckpt_<step>.dmm every checkpoint_interval steps and
/// at the end. Returns the last checkpoint written.
inline std::filesystem::path train(TrainState& s, const std::vector<SamplePair>& rebased, const TrainOptions& opt)
{
    std::filesystem::create_directories(opt.out_dir);
    const auto log_path = opt.out_dir / "train.log";
    if (s.step > 0) {
        train_detail::truncate_log(log_path, s.step);
    }
    std::ofstream log(log_path, s.step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) {
        throw IoError("cannot write " + (opt.out_dir / "train.log").string());
    }
    std::filesystem::path last;
    if (s.step == 0) {
        last = checkpoint_path(opt.out_dir, 0);
        save_checkpoint(last, s);
    }
    while (s.step < s.config.total_steps) {
        const LossReport r = train_step(s, rebased);
        const std::string line = r.line();
        log << line << '\n';
        log.flush();
        if (opt.echo) {
            *opt.echo << line << '\n';
        }
        if (opt.on_step) {
            opt.on_step(r);
        }
        if (s.step % s.config.checkpoint_interval == 0 || s.step == s.config.total_steps) {
            last = checkpoint_path(opt.out_dir, s.step);
            save_checkpoint(last, s);
        }
    }
    return last;
}

} // namespace dmm
