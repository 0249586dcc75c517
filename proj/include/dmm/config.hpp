#pragma once

// Training configuration as flat key=value text. One key table drives
// parsing, printing and checkpoint manifests.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmm/objectives.hpp"
#include "dmm/synthetic.hpp"

namespace dmm {

struct TrainConfig {
    std::size_t total_steps = 1500;
    std::size_t batch_size = 16;
    std::size_t critic_updates = 5;
    std::uint64_t seed = 1;
    double learning_rate = 1e-3;
    double critic_learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double critic_beta1 = 0.5, critic_beta2 = 0.9;
    double clip_norm = 1.0;
    std::size_t checkpoint_interval = 500;
    bool freeze_pose_path = false;
    double abort_threshold = 1e6;
    std::string train_data;
    std::string test_data;

    ModelConfig model;
    LossWeights weights;
    std::optional<double> sim_epsilon;          // unset: 0.1 m per forecast frame
    std::optional<std::size_t> sim_active_steps;  // unset: total_steps / 2

    /// Weights with the defaults that depend on other settings filled in.
    LossWeights resolved_weights() const
    {
        LossWeights w = weights;
        w.sim_epsilon = sim_epsilon.value_or(0.1 * static_cast<double>(model.zeta));
        w.sim_active_steps = sim_active_steps.value_or(total_steps / 2);
        return w;
    }

    void validate() const
    {
        if (batch_size == 0) {
            throw ConfigError("batch_size must be positive");
        }
        if (checkpoint_interval == 0) {
            throw ConfigError("checkpoint_interval must be positive");
        }
        if (!(learning_rate > 0) || !(critic_learning_rate > 0)) {
            throw ConfigError("learning rates must be positive");
        }
        for (double b : {beta1, beta2, critic_beta1, critic_beta2}) {
            if (!(b >= 0.0 && b < 1.0)) {
                throw ConfigError("optimizer betas must be in [0, 1)");
            }
        }
        if (!(abort_threshold > 0)) {
            throw ConfigError("abort_threshold must be positive");
        }
        model.validate();
        resolved_weights().validate();
    }
};

namespace config_detail {

/// Shortest text that reads back to the same double.
inline std::string fmt_double(double v)
{
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double to_double(const std::string& key, const std::string& s)
{
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
    }
    return v;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& s)
{
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ConfigError("config key '" + key + "' expects a nonnegative integer, got '" + s + "'");
    }
    return v;
}

inline bool to_bool(const std::string& key, const std::string& s)
{
    if (s == "1" || s == "true") {
        return true;
    }
    if (s == "0" || s == "false") {
        return false;
    }
    throw ConfigError("config key '" + key + "' expects true/false, got '" + s + "'");
}

struct Key {
    std::string name;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

template <class M>
Key size_key(std::string name, M member)
{
    return {name, [member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); },
            [member, name](TrainConfig& c, const std::string& v) { member(c) = static_cast<std::size_t>(to_u64(name, v)); }};
}

template <class M>
Key double_key(std::string name, M member)
{
    return {name, [member](const TrainConfig& c) { return fmt_double(member(const_cast<TrainConfig&>(c))); },
            [member, name](TrainConfig& c, const std::string& v) { member(c) = to_double(name, v); }};
}

template <class M>
Key bool_key(std::string name, M member)
{
    return {name, [member](const TrainConfig& c) { return std::string(member(const_cast<TrainConfig&>(c)) ? "true" : "false"); },
            [member, name](TrainConfig& c, const std::string& v) { member(c) = to_bool(name, v); }};
}

inline void encoder_keys(std::vector<Key>& keys, const std::string& prefix, EncoderConfig ModelConfig::*enc)
{
    keys.push_back(size_key(prefix + "_embed", [enc](TrainConfig& c) -> std::size_t& { return (c.model.*enc).embed_dim; }));
    keys.push_back(size_key(prefix + "_heads", [enc](TrainConfig& c) -> std::size_t& { return (c.model.*enc).num_heads; }));
    keys.push_back(size_key(prefix + "_layers", [enc](TrainConfig& c) -> std::size_t& { return (c.model.*enc).num_layers; }));
    keys.push_back(size_key(prefix + "_ffn", [enc](TrainConfig& c) -> std::size_t& { return (c.model.*enc).ffn_dim; }));
}

inline const std::vector<Key>& keys()
{
    static const std::vector<Key> table = [] {
        std::vector<Key> k;
        k.push_back(size_key("steps", [](TrainConfig& c) -> std::size_t& { return c.total_steps; }));
        k.push_back(size_key("batch_size", [](TrainConfig& c) -> std::size_t& { return c.batch_size; }));
        k.push_back(size_key("critic_updates", [](TrainConfig& c) -> std::size_t& { return c.critic_updates; }));
        k.push_back({"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                     [](TrainConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }});
        k.push_back(double_key("lr", [](TrainConfig& c) -> double& { return c.learning_rate; }));
        k.push_back(double_key("critic_lr", [](TrainConfig& c) -> double& { return c.critic_learning_rate; }));
        k.push_back(double_key("beta1", [](TrainConfig& c) -> double& { return c.beta1; }));
        k.push_back(double_key("beta2", [](TrainConfig& c) -> double& { return c.beta2; }));
        k.push_back(double_key("critic_beta1", [](TrainConfig& c) -> double& { return c.critic_beta1; }));
        k.push_back(double_key("critic_beta2", [](TrainConfig& c) -> double& { return c.critic_beta2; }));
        k.push_back(double_key("clip_norm", [](TrainConfig& c) -> double& { return c.clip_norm; }));
        k.push_back(size_key("checkpoint_interval", [](TrainConfig& c) -> std::size_t& { return c.checkpoint_interval; }));
        k.push_back(bool_key("freeze_pose_path", [](TrainConfig& c) -> bool& { return c.freeze_pose_path; }));
        k.push_back(double_key("abort_threshold", [](TrainConfig& c) -> double& { return c.abort_threshold; }));
        k.push_back({"train_data", [](const TrainConfig& c) { return c.train_data; },
                     [](TrainConfig& c, const std::string& v) { c.train_data = v; }});
        k.push_back({"test_data", [](const TrainConfig& c) { return c.test_data; },
                     [](TrainConfig& c, const std::string& v) { c.test_data = v; }});

        k.push_back(double_key("w_adv", [](TrainConfig& c) -> double& { return c.weights.w_adv; }));
        k.push_back(double_key("w_best", [](TrainConfig& c) -> double& { return c.weights.w_best; }));
        k.push_back(double_key("w_tf", [](TrainConfig& c) -> double& { return c.weights.w_tf; }));
        k.push_back(double_key("w_sim", [](TrainConfig& c) -> double& { return c.weights.w_sim; }));
        k.push_back(double_key("w_joint", [](TrainConfig& c) -> double& { return c.weights.w_joint; }));
        k.push_back(double_key("gp_lambda", [](TrainConfig& c) -> double& { return c.weights.gp_lambda; }));
        k.push_back(double_key("tf_probability", [](TrainConfig& c) -> double& { return c.weights.tf_probability; }));
        k.push_back({"sim_mode", [](const TrainConfig& c) { return std::string(sim_mode_name(c.weights.sim_mode)); },
                     [](TrainConfig& c, const std::string& v) { c.weights.sim_mode = parse_sim_mode(v); }});
        k.push_back({"sim_epsilon",
                     [](const TrainConfig& c) { return c.sim_epsilon ? fmt_double(*c.sim_epsilon) : std::string("auto"); },
                     [](TrainConfig& c, const std::string& v) {
                         c.sim_epsilon = v == "auto" ? std::nullopt : std::optional<double>(to_double("sim_epsilon", v));
                     }});
        k.push_back({"sim_active_steps",
                     [](const TrainConfig& c) {
                         return c.sim_active_steps ? std::to_string(*c.sim_active_steps) : std::string("auto");
                     },
                     [](TrainConfig& c, const std::string& v) {
                         c.sim_active_steps = v == "auto" ? std::nullopt
                                                          : std::optional<std::size_t>(to_u64("sim_active_steps", v));
                     }});

        k.push_back(size_key("model.n_samples", [](TrainConfig& c) -> std::size_t& { return c.model.n_samples; }));
        k.push_back(size_key("model.alpha", [](TrainConfig& c) -> std::size_t& { return c.model.alpha; }));
        k.push_back(size_key("model.zeta", [](TrainConfig& c) -> std::size_t& { return c.model.zeta; }));
        k.push_back(size_key("model.gru_hidden", [](TrainConfig& c) -> std::size_t& { return c.model.gru_hidden; }));
        k.push_back(size_key("model.hip_hidden", [](TrainConfig& c) -> std::size_t& { return c.model.hip_hidden; }));
        k.push_back(bool_key("model.hip_residual", [](TrainConfig& c) -> bool& { return c.model.hip_residual; }));
        k.push_back(double_key("model.max_pose_step", [](TrainConfig& c) -> double& { return c.model.max_pose_step; }));
        k.push_back(double_key("model.pose_head_gain", [](TrainConfig& c) -> double& { return c.model.pose_head_gain; }));
        k.push_back({"model.positional_encoding",
                     [](const TrainConfig& c) { return std::string(c.model.pose_encoder.positional_encoding ? "true" : "false"); },
                     [](TrainConfig& c, const std::string& v) {
                         const bool on = to_bool("model.positional_encoding", v);
                         for (auto* e : {&c.model.pose_encoder, &c.model.hip_encoder, &c.model.hip_pose_encoder,
                                         &c.model.critic_encoder}) {
                             e->positional_encoding = on;
                         }
                     }});
        k.push_back({"model.max_sequence_len",
                     [](const TrainConfig& c) { return std::to_string(c.model.pose_encoder.max_sequence_len); },
                     [](TrainConfig& c, const std::string& v) {
                         const auto n = static_cast<std::size_t>(to_u64("model.max_sequence_len", v));
                         for (auto* e : {&c.model.pose_encoder, &c.model.hip_encoder, &c.model.hip_pose_encoder,
                                         &c.model.critic_encoder}) {
                             e->max_sequence_len = n;
                         }
                     }});
        encoder_keys(k, "model.pose", &ModelConfig::pose_encoder);
        encoder_keys(k, "model.hip", &ModelConfig::hip_encoder);
        encoder_keys(k, "model.hip_pose", &ModelConfig::hip_pose_encoder);
        encoder_keys(k, "model.critic", &ModelConfig::critic_encoder);
        return k;
    }();
    return table;
}

} // namespace config_detail

/// Applies one key=value setting; unknown keys are rejected.
inline void set_config_value(TrainConfig& config, const std::string& key, const std::string& value)
{
    for (const auto& k : config_detail::keys()) {
        if (k.name == key) {
            k.set(config, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

/// All keys with their current values, in table order.
inline std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& config)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : config_detail::keys()) {
        out.emplace_back(k.name, k.get(config));
    }
    return out;
}

inline std::string format_config(const TrainConfig& config)
{
    std::string out;
    for (const auto& [k, v] : config_items(config)) {
        out += k + "=" + v + "\n";
    }
    return out;
}

/// key=value lines; '#' starts a comment, blank lines are ignored.
inline TrainConfig parse_config(const std::string& text, TrainConfig config = {})
{
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        }
        set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return config;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig config = {})
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(config));
}

} // namespace dmm
