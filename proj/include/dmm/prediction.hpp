#pragma once

// Forecast containers and the prediction file:
//
//   PRED v1 fps=<int> horizon=<frames> samples=<n>
//   SAMPLE <index, 1-based>
//   <horizon lines of 51 floats: merged motion, meters, in the observation's world frame>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dmm/motion.hpp"
#include "dmm/motion_io.hpp"

namespace dmm {

struct PredictionSet {
    std::vector<MotionSplit> samples;
    int observation_id = -1;
    std::string model_version;

    std::size_t size() const noexcept { return samples.size(); }
    std::size_t horizon() const { return samples.empty() ? 0 : samples.front().length(); }
    int fps() const { return samples.empty() ? 0 : samples.front().fps; }

    void validate() const
    {
        if (samples.empty()) {
            throw DataError("prediction set is empty");
        }
        for (const auto& s : samples) {
            s.validate();
            if (s.length() != horizon() || s.fps != fps()) {
                throw DataError("prediction samples disagree on horizon or fps");
            }
        }
    }
};

/// Contents of a prediction file: merged world-frame motions, one per sample.
struct PredictionFile {
    int fps = 10;
    std::size_t horizon = 0;
    std::vector<MotionSequence> samples;

    friend bool operator==(const PredictionFile&, const PredictionFile&) = default;
};

inline PredictionFile to_prediction_file(const PredictionSet& set)
{
    set.validate();
    PredictionFile f{set.fps(), set.horizon(), {}};
    for (const auto& s : set.samples) {
        f.samples.push_back(merge_motion(s));
    }
    return f;
}

inline std::string format_prediction_file(const PredictionFile& f)
{
    std::string out = "PRED v1 fps=" + std::to_string(f.fps) + " horizon=" + std::to_string(f.horizon) +
                      " samples=" + std::to_string(f.samples.size()) + "\n";
    for (std::size_t g = 0; g < f.samples.size(); ++g) {
        out += "SAMPLE " + std::to_string(g + 1) + "\n";
        const auto& frames = f.samples[g].frames;
        for (std::size_t t = 0; t < frames.frames(); ++t) {
            for (std::size_t k = 0; k < kFrameWidth; ++k) {
                if (k) {
                    out += ' ';
                }
                io_detail::append_double(out, frames.at(t, k));
            }
            out += '\n';
        }
    }
    return out;
}

inline PredictionFile parse_prediction_file(std::string_view data)
{
    using namespace io_detail;
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < data.size()) {
        auto nl = data.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = data.size();
        }
        auto line = data.substr(pos, nl - pos);
        if (!split_ws(line).empty()) {
            lines.push_back(line);
        }
        pos = nl + 1;
    }
    if (lines.empty()) {
        throw DataError("empty prediction file");
    }
    auto head = split_ws(lines[0]);
    if (head.size() < 2 || head[0] != "PRED" || head[1] != "v1") {
        throw DataError("missing 'PRED v1' header");
    }
    std::map<std::string, long long, std::less<>> kv;
    try {
        kv = parse_kv(std::span(head).subspan(2), "header");
    } catch (const MotionFileError& e) {
        throw DataError(e.what());
    }
    auto field = [&](std::string_view key) {
        auto it = kv.find(key);
        if (it == kv.end() || it->second <= 0) {
            throw DataError("prediction header lacks a positive " + std::string(key));
        }
        return it->second;
    };
    PredictionFile f;
    f.fps = static_cast<int>(field("fps"));
    f.horizon = static_cast<std::size_t>(field("horizon"));
    const auto n = static_cast<std::size_t>(field("samples"));
    if (lines.size() != 1 + n * (1 + f.horizon)) {
        throw DataError("prediction file has " + std::to_string(lines.size() - 1) + " body lines, expected " +
                        std::to_string(n * (1 + f.horizon)));
    }
    std::size_t li = 1;
    for (std::size_t g = 0; g < n; ++g) {
        auto tag = split_ws(lines[li++]);
        if (tag.size() != 2 || tag[0] != "SAMPLE" || parse_int(tag[1]) != static_cast<long long>(g + 1)) {
            throw DataError("expected 'SAMPLE " + std::to_string(g + 1) + "'");
        }
        PoseSequence frames(f.horizon);
        for (std::size_t t = 0; t < f.horizon; ++t) {
            auto tokens = split_ws(lines[li++]);
            if (tokens.size() != kFrameWidth) {
                throw DataError("prediction frame has " + std::to_string(tokens.size()) + " values, expected 51");
            }
            for (std::size_t k = 0; k < kFrameWidth; ++k) {
                double v = 0.0;
                auto [ptr, ec] = std::from_chars(tokens[k].data(), tokens[k].data() + tokens[k].size(), v);
                if (ec != std::errc{} || ptr != tokens[k].data() + tokens[k].size() || !std::isfinite(v)) {
                    throw DataError("bad prediction value '" + std::string(tokens[k]) + "'");
                }
                frames.at(t, k) = v;
            }
        }
        f.samples.push_back({f.fps, std::move(frames)});
    }
    return f;
}

inline void save_prediction_file(const std::filesystem::path& path, const PredictionFile& f)
{
    io_detail::write_all(path, format_prediction_file(f));
}

inline PredictionFile load_prediction_file(const std::filesystem::path& path)
{
    std::string data;
    try {
        data = io_detail::read_all(path);
    } catch (const MotionFileError& e) {
        throw IoError(e.what());
    }
    return parse_prediction_file(data);
}

} // namespace dmm
