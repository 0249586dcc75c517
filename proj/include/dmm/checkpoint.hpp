#pragma once

// Checkpoints:
//
//   DMMCKPT1
//   manifest_bytes=<n>
//   <n bytes of key=value lines and "param <section>/<name> <shape> <offset> <count>" lines>
//   <float32 little-endian blob; offsets are bytes from the blob start>
//
// Sections: gen, critic (weights) and gen.m, gen.v, critic.m, critic.v (Adam
// moments). Everything needed to continue training is stored, so resuming
// reproduces an uninterrupted run bit for bit.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dmm/config.hpp"
#include "dmm/forecaster.hpp"
#include "dmm/nn/optimizer.hpp"

namespace dmm {

inline constexpr int kCheckpointVersion = 1;

/// Model, optimizer moments and step counter of a training run.
struct TrainState {
    TrainConfig config;
    Forecaster<float> model;
    nn::OptimizerState<float> gen_opt;
    nn::OptimizerState<float> critic_opt;
    std::size_t step = 0;
    double ema_total = 0.0;  // exponential average of the generator loss

    explicit TrainState(const TrainConfig& c) : config(c), model(c.model, Rng::derive(c.seed, 0x6d6f64656cull))
    {
        gen_opt.config = {c.learning_rate, c.beta1, c.beta2, 1e-8, c.clip_norm};
        critic_opt.config = {c.critic_learning_rate, c.critic_beta1, c.critic_beta2, 1e-8, c.clip_norm};
    }
};

namespace ckpt_detail {

inline std::string shape_text(const nn::Shape& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "x" : "") + std::to_string(s[i]);
    }
    return out;
}

inline std::string join_doubles(std::span<const double> v)
{
    std::string out;
    char buf[40];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        out += (i ? " " : "") + std::string(buf);
    }
    return out;
}

inline void put_floats(std::string& blob, std::span<const float> v)
{
    const std::size_t at = blob.size();
    blob.resize(at + 4 * v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
        if constexpr (std::endian::native == std::endian::big) {
            u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
        }
        std::memcpy(blob.data() + at + 4 * i, &u, 4);
    }
}

inline float get_float(const char* p)
{
    std::uint32_t u;
    std::memcpy(&u, p, 4);
    if constexpr (std::endian::native == std::endian::big) {
        u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
    }
    return std::bit_cast<float>(u);
}

struct ParamEntry {
    std::string shape;
    std::size_t offset = 0;
    std::size_t count = 0;
};

struct Manifest {
    std::map<std::string, std::string> values;
    std::map<std::string, ParamEntry> params;  // "<section>/<name>"

    const std::string& require(const std::string& key) const
    {
        auto it = values.find(key);
        if (it == values.end()) {
            throw CheckpointError(CheckpointErrc::missing_field, "checkpoint is missing field '" + key + "'");
        }
        return it->second;
    }
};

inline std::uint64_t to_u64(const std::string& key, const std::string& s)
{
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw CheckpointError(CheckpointErrc::missing_field, "checkpoint field '" + key + "' is not an integer");
    }
    return v;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& s, std::size_t n)
{
    std::vector<double> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) {
        double v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || p != tok.data() + tok.size()) {
            throw CheckpointError(CheckpointErrc::missing_field, "checkpoint field '" + key + "' has a bad number");
        }
        out.push_back(v);
    }
    if (out.size() != n) {
        throw CheckpointError(CheckpointErrc::shape, "checkpoint field '" + key + "' has " +
                                                         std::to_string(out.size()) + " values, expected " +
                                                         std::to_string(n));
    }
    return out;
}

inline Manifest parse_manifest(const std::string& text)
{
    Manifest m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        if (line.rfind("param ", 0) == 0) {
            std::istringstream ls(line.substr(6));
            std::string name;
            ParamEntry e;
            if (!(ls >> name >> e.shape >> e.offset >> e.count)) {
                throw CheckpointError(CheckpointErrc::missing_field, "malformed param line '" + line + "'");
            }
            m.params[name] = e;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw CheckpointError(CheckpointErrc::missing_field, "malformed manifest line '" + line + "'");
        }
        m.values[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return m;
}

} // namespace ckpt_detail

/// Serialized checkpoint bytes; identical states give identical bytes.
inline std::string serialize_checkpoint(const TrainState& s)
{
    using namespace ckpt_detail;
    std::string manifest;
    std::string blob;
    auto kv = [&manifest](const std::string& k, const std::string& v) { manifest += k + "=" + v + "\n"; };
    kv("format_version", std::to_string(kCheckpointVersion));
    kv("step", std::to_string(s.step));
    kv("model_version", s.model.version());
    {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", s.ema_total);
        kv("ema_total", buf);
    }
    for (const auto& [k, v] : config_items(s.config)) {
        kv("config." + k, v);
    }
    kv("norm.mean", join_doubles(s.model.normalization().mean));
    kv("norm.std", join_doubles(s.model.normalization().std));

    auto params = [&](const std::string& section, const nn::ParameterStore<float>& store,
                      const nn::OptimizerState<float>& opt) {
        kv("opt." + section + ".step", std::to_string(opt.step));
        for (const auto& [name, n] : opt.updates) {
            kv("opt." + section + ".updates." + name, std::to_string(n));
        }
        for (const auto& [name, e] : store.entries()) {
            const auto& shape = e.value.shape();
            manifest += "param " + section + "/" + name + " " + shape_text(shape) + " " + std::to_string(blob.size()) +
                        " " + std::to_string(e.value.numel()) + "\n";
            put_floats(blob, e.value.values());
            for (const char* which : {"m", "v"}) {
                const auto& moments = which[0] == 'm' ? opt.first_moment : opt.second_moment;
                auto it = moments.find(name);
                if (it == moments.end()) {
                    continue;
                }
                manifest += "param " + section + "." + which + "/" + name + " " + shape_text(shape) + " " +
                            std::to_string(blob.size()) + " " + std::to_string(it->second.size()) + "\n";
                put_floats(blob, it->second);
            }
        }
    };
    params("gen", s.model.generator_params(), s.gen_opt);
    params("critic", s.model.critic_params(), s.critic_opt);

    return "DMMCKPT1\nmanifest_bytes=" + std::to_string(manifest.size()) + "\n" + manifest + blob;
}

inline TrainState deserialize_checkpoint(const std::string& bytes)
{
    using namespace ckpt_detail;
    const auto nl = bytes.find('\n');
    const std::string magic = bytes.substr(0, nl);
    if (magic != "DMMCKPT1") {
        throw CheckpointError(CheckpointErrc::version,
                              magic.rfind("DMMCKPT", 0) == 0 ? "unsupported checkpoint version '" + magic + "'"
                                                             : std::string("not a checkpoint file"));
    }
    const auto nl2 = bytes.find('\n', nl + 1);
    const std::string size_line = bytes.substr(nl + 1, nl2 == std::string::npos ? std::string::npos : nl2 - nl - 1);
    if (nl2 == std::string::npos || size_line.rfind("manifest_bytes=", 0) != 0) {
        throw CheckpointError(CheckpointErrc::missing_field, "checkpoint is missing field 'manifest_bytes'");
    }
    const std::size_t manifest_size = to_u64("manifest_bytes", size_line.substr(15));
    const std::size_t manifest_at = nl2 + 1;
    if (bytes.size() < manifest_at + manifest_size) {
        throw CheckpointError(CheckpointErrc::truncated, "checkpoint ends inside the manifest");
    }
    const Manifest m = parse_manifest(bytes.substr(manifest_at, manifest_size));
    const std::size_t blob_at = manifest_at + manifest_size;
    const std::size_t blob_size = bytes.size() - blob_at;

    const std::string& version = m.require("format_version");
    if (version != std::to_string(kCheckpointVersion)) {
        throw CheckpointError(CheckpointErrc::version, "unsupported checkpoint format_version " + version);
    }

    TrainConfig config;
    for (const auto& [k, v] : config_items(config)) {
        try {
            set_config_value(config, k, m.require("config." + k));
        } catch (const ConfigError& e) {
            throw CheckpointError(CheckpointErrc::missing_field, std::string("checkpoint config: ") + e.what());
        }
    }
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointErrc::missing_field, std::string("checkpoint config: ") + e.what());
    }

    TrainState s(config);
    s.step = to_u64("step", m.require("step"));
    {
        const std::string& ema = m.require("ema_total");
        s.ema_total = to_doubles("ema_total", ema, 1)[0];
    }
    NormalizationStats stats;
    const auto mean = to_doubles("norm.mean", m.require("norm.mean"), kFrameWidth);
    const auto std_ = to_doubles("norm.std", m.require("norm.std"), kFrameWidth);
    std::copy(mean.begin(), mean.end(), stats.mean.begin());
    std::copy(std_.begin(), std_.end(), stats.std.begin());
    s.model.set_normalization(stats);

    std::size_t consumed = 0;
    auto read = [&](const std::string& key, const nn::Shape& shape, bool required) -> std::optional<std::vector<float>> {
        auto it = m.params.find(key);
        if (it == m.params.end()) {
            if (required) {
                throw CheckpointError(CheckpointErrc::missing_field, "checkpoint is missing parameter " + key);
            }
            return std::nullopt;
        }
        const ParamEntry& e = it->second;
        if (e.shape != shape_text(shape) || e.count != nn::numel_of(shape)) {
            throw CheckpointError(CheckpointErrc::shape, "shape mismatch for parameter " + key + ": checkpoint " +
                                                             e.shape + ", model " + shape_text(shape));
        }
        if (e.offset + 4 * e.count > blob_size) {
            throw CheckpointError(CheckpointErrc::truncated, "checkpoint data for parameter " + key + " is truncated");
        }
        std::vector<float> v(e.count);
        for (std::size_t i = 0; i < e.count; ++i) {
            v[i] = get_float(bytes.data() + blob_at + e.offset + 4 * i);
        }
        ++consumed;
        return v;
    };
    auto load = [&](const std::string& section, nn::ParameterStore<float>& store, nn::OptimizerState<float>& opt) {
        opt.step = to_u64("opt." + section + ".step", m.require("opt." + section + ".step"));
        const std::string prefix = "opt." + section + ".updates.";
        for (const auto& [k, v] : m.values) {
            if (k.rfind(prefix, 0) == 0) {
                opt.updates[k.substr(prefix.size())] = to_u64(k, v);
            }
        }
        for (auto& [name, e] : store.entries()) {
            const auto shape = e.value.shape();
            e.value.mutable_values() = *read(section + "/" + name, shape, true);
            if (auto mv = read(section + ".m/" + name, shape, false)) {
                opt.first_moment[name] = std::move(*mv);
            }
            if (auto vv = read(section + ".v/" + name, shape, false)) {
                opt.second_moment[name] = std::move(*vv);
            }
        }
    };
    load("gen", s.model.generator_params(), s.gen_opt);
    load("critic", s.model.critic_params(), s.critic_opt);
    if (consumed != m.params.size()) {
        for (const auto& [key, e] : m.params) {
            const auto slash = key.find('/');
            const std::string section = key.substr(0, slash), name = key.substr(slash + 1);
            const auto& store = section.rfind("critic", 0) == 0 ? s.model.critic_params() : s.model.generator_params();
            if (!store.contains(name)) {
                throw CheckpointError(CheckpointErrc::shape, "checkpoint parameter " + key + " does not exist in the model");
            }
        }
    }
    return s;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& s)
{
    const std::string bytes = serialize_checkpoint(s);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write checkpoint " + tmp);
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("failed writing checkpoint " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

inline TrainState load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError(CheckpointErrc::open_failed, "cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace dmm
