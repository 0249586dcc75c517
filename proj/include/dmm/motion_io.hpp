#pragma once

// Motion files. Text form:
//
//   MOTION v1 fps=<int> joints=17 frames=<total> seqs=<n>
//   SEQ <id> frames=<T> [mode=<int>]
//   <T lines of 51 floats, joint-major>
//
// Binary form uses the same header and SEQ lines, each NUL-padded to 64 bytes
// (byte 63 is '\n'), followed by little-endian float32 coordinates.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dmm/errors.hpp"
#include "dmm/motion.hpp"

namespace dmm {

struct MotionRecord {
    int id = 0;
    std::optional<int> mode;
    MotionSequence sequence;

    friend bool operator==(const MotionRecord&, const MotionRecord&) = default;
};

enum class MotionFormat { text, binary };

namespace io_detail {

inline constexpr std::size_t kBinaryLine = 64;

inline std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') {
            ++j;
        }
        if (j > i) {
            out.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

inline std::optional<long long> parse_int(std::string_view s)
{
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

/// Parses `key=<int>` tokens into a map; anything else is a malformed token.
inline std::map<std::string, long long, std::less<>> parse_kv(std::span<const std::string_view> tokens,
                                                              const std::string& context)
{
    std::map<std::string, long long, std::less<>> kv;
    for (auto tok : tokens) {
        auto eq = tok.find('=');
        if (eq == std::string_view::npos) {
            throw MotionFileError(MotionFileErrc::malformed_header, context + ": bad token '" + std::string(tok) + "'");
        }
        auto v = parse_int(tok.substr(eq + 1));
        if (!v) {
            throw MotionFileError(MotionFileErrc::malformed_header, context + ": bad value in '" + std::string(tok) + "'");
        }
        kv.emplace(std::string(tok.substr(0, eq)), *v);
    }
    return kv;
}

inline long long require(const std::map<std::string, long long, std::less<>>& kv, std::string_view key,
                         const std::string& context)
{
    auto it = kv.find(key);
    if (it == kv.end()) {
        throw MotionFileError(MotionFileErrc::malformed_header, context + ": missing " + std::string(key));
    }
    return it->second;
}

struct Header {
    int fps = 0;
    long long frames = 0;
    long long seqs = 0;
};

inline Header parse_header(std::string_view line)
{
    auto tokens = split_ws(line);
    if (tokens.size() < 2 || tokens[0] != "MOTION" || tokens[1] != "v1") {
        throw MotionFileError(MotionFileErrc::malformed_header, "missing 'MOTION v1' header");
    }
    auto kv = parse_kv(std::span(tokens).subspan(2), "header");
    const long long joints = require(kv, "joints", "header");
    if (joints != static_cast<long long>(kJoints)) {
        throw MotionFileError(MotionFileErrc::joint_count,
                              "file declares " + std::to_string(joints) + " joints, expected 17");
    }
    Header h;
    h.fps = static_cast<int>(require(kv, "fps", "header"));
    h.frames = require(kv, "frames", "header");
    h.seqs = require(kv, "seqs", "header");
    if (h.fps <= 0 || h.frames < 0 || h.seqs < 0) {
        throw MotionFileError(MotionFileErrc::malformed_header, "header values out of range");
    }
    return h;
}

struct SeqLine {
    int id = 0;
    long long frames = 0;
    std::optional<int> mode;
};

inline SeqLine parse_seq_line(std::string_view line)
{
    auto tokens = split_ws(line);
    if (tokens.size() < 3 || tokens[0] != "SEQ") {
        throw MotionFileError(MotionFileErrc::truncated, "expected SEQ line, got '" + std::string(line.substr(0, 40)) + "'");
    }
    auto id = parse_int(tokens[1]);
    if (!id) {
        throw MotionFileError(MotionFileErrc::malformed_header, "bad sequence id");
    }
    auto kv = parse_kv(std::span(tokens).subspan(2), "SEQ");
    SeqLine s;
    s.id = static_cast<int>(*id);
    s.frames = require(kv, "frames", "SEQ");
    if (s.frames <= 0) {
        throw MotionFileError(MotionFileErrc::truncated, "sequence " + std::to_string(s.id) + " has no frames");
    }
    if (auto it = kv.find("mode"); it != kv.end()) {
        s.mode = static_cast<int>(it->second);
    }
    return s;
}

inline std::string header_text(const std::vector<MotionRecord>& records, int fps)
{
    std::size_t total = 0;
    for (const auto& r : records) {
        total += r.sequence.length();
    }
    return "MOTION v1 fps=" + std::to_string(fps) + " joints=17 frames=" + std::to_string(total) +
           " seqs=" + std::to_string(records.size());
}

inline std::string seq_text(const MotionRecord& r)
{
    std::string s = "SEQ " + std::to_string(r.id) + " frames=" + std::to_string(r.sequence.length());
    if (r.mode) {
        s += " mode=" + std::to_string(*r.mode);
    }
    return s;
}

inline std::string padded(const std::string& text)
{
    if (text.size() >= kBinaryLine - 1) {
        throw IoError("binary header line too long: " + text);
    }
    std::string out(kBinaryLine, '\0');
    std::memcpy(out.data(), text.data(), text.size());
    out[kBinaryLine - 1] = '\n';
    return out;
}

inline void append_double(std::string& out, double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

inline std::string read_all(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MotionFileError(MotionFileErrc::open_failed, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_all(const std::filesystem::path& path, const std::string& data)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

inline void check_fps(const std::vector<MotionRecord>& records, int& fps)
{
    for (const auto& r : records) {
        r.sequence.validate();
        if (fps == 0) {
            fps = r.sequence.fps;
        }
        if (r.sequence.fps != fps) {
            throw DataError("all sequences in one motion file must share fps");
        }
    }
    if (fps == 0) {
        fps = 10;
    }
}

} // namespace io_detail

inline void save_motion_file(const std::filesystem::path& path, const std::vector<MotionRecord>& records,
                             MotionFormat format = MotionFormat::text)
{
    int fps = 0;
    io_detail::check_fps(records, fps);
    std::string out;
    if (format == MotionFormat::text) {
        out += io_detail::header_text(records, fps);
        out += '\n';
        for (const auto& r : records) {
            out += io_detail::seq_text(r);
            out += '\n';
            const auto& f = r.sequence.frames;
            for (std::size_t t = 0; t < f.frames(); ++t) {
                for (std::size_t k = 0; k < kFrameWidth; ++k) {
                    if (k) {
                        out += ' ';
                    }
                    io_detail::append_double(out, f.at(t, k));
                }
                out += '\n';
            }
        }
    } else {
        out += io_detail::padded(io_detail::header_text(records, fps));
        for (const auto& r : records) {
            out += io_detail::padded(io_detail::seq_text(r));
            for (double v : r.sequence.frames.values()) {
                const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
                for (int b = 0; b < 4; ++b) {
                    out += static_cast<char>((bits >> (8 * b)) & 0xFFu);
                }
            }
        }
    }
    io_detail::write_all(path, out);
}

/// Parses either format; the binary form is recognized by NUL padding in its first line.
inline std::vector<MotionRecord> parse_motion_data(std::string_view data)
{
    using namespace io_detail;
    const auto first_nl = data.find('\n');
    if (first_nl == std::string_view::npos) {
        throw MotionFileError(MotionFileErrc::malformed_header, "missing header line");
    }
    const std::string_view first_line = data.substr(0, first_nl);
    const bool binary = first_line.find('\0') != std::string_view::npos;

    std::vector<MotionRecord> records;
    if (binary) {
        auto text_of = [](std::string_view line) { return line.substr(0, line.find('\0')); };
        if (data.size() < kBinaryLine || data[kBinaryLine - 1] != '\n') {
            throw MotionFileError(MotionFileErrc::malformed_header, "binary header is not 64 bytes");
        }
        const Header h = parse_header(text_of(data.substr(0, kBinaryLine)));
        std::size_t pos = kBinaryLine;
        long long frames_seen = 0;
        for (long long s = 0; s < h.seqs; ++s) {
            if (pos + kBinaryLine > data.size()) {
                throw MotionFileError(MotionFileErrc::truncated, "missing SEQ line " + std::to_string(s));
            }
            const SeqLine sl = parse_seq_line(text_of(data.substr(pos, kBinaryLine)));
            pos += kBinaryLine;
            const std::size_t count = static_cast<std::size_t>(sl.frames) * kFrameWidth;
            if (pos + 4 * count > data.size()) {
                throw MotionFileError(MotionFileErrc::truncated, "sequence " + std::to_string(sl.id) + " is truncated");
            }
            std::vector<double> values(count);
            for (std::size_t i = 0; i < count; ++i) {
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b) {
                    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + 4 * i + b])) << (8 * b);
                }
                values[i] = std::bit_cast<float>(bits);
                if (!std::isfinite(values[i])) {
                    throw MotionFileError(MotionFileErrc::non_finite, "non-finite value in sequence " + std::to_string(sl.id));
                }
            }
            pos += 4 * count;
            frames_seen += sl.frames;
            records.push_back({sl.id, sl.mode, MotionSequence{h.fps, PoseSequence(std::move(values))}});
        }
        if (frames_seen != h.frames) {
            throw MotionFileError(MotionFileErrc::truncated, "frame total does not match header");
        }
        return records;
    }

    const Header h = parse_header(first_line);
    std::size_t pos = first_nl + 1;
    auto next_line = [&]() -> std::optional<std::string_view> {
        while (pos < data.size()) {
            auto nl = data.find('\n', pos);
            if (nl == std::string_view::npos) {
                nl = data.size();
            }
            std::string_view line = data.substr(pos, nl - pos);
            pos = nl + 1;
            if (!split_ws(line).empty()) {
                return line;
            }
        }
        return std::nullopt;
    };

    long long frames_seen = 0;
    for (long long s = 0; s < h.seqs; ++s) {
        auto line = next_line();
        if (!line) {
            throw MotionFileError(MotionFileErrc::truncated, "missing SEQ line " + std::to_string(s));
        }
        const SeqLine sl = parse_seq_line(*line);
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(sl.frames) * kFrameWidth);
        for (long long t = 0; t < sl.frames; ++t) {
            auto row = next_line();
            if (!row || row->starts_with("SEQ")) {
                throw MotionFileError(MotionFileErrc::truncated, "sequence " + std::to_string(sl.id) + " is truncated at frame " +
                                                                     std::to_string(t));
            }
            auto tokens = split_ws(*row);
            if (tokens.size() != kFrameWidth) {
                throw MotionFileError(MotionFileErrc::joint_count, "frame has " + std::to_string(tokens.size()) +
                                                                       " values, expected 51");
            }
            for (auto tok : tokens) {
                double v = 0.0;
                auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
                    throw MotionFileError(MotionFileErrc::malformed_header, "bad number '" + std::string(tok) + "'");
                }
                if (!std::isfinite(v)) {
                    throw MotionFileError(MotionFileErrc::non_finite, "non-finite value in sequence " + std::to_string(sl.id));
                }
                values.push_back(v);
            }
        }
        frames_seen += sl.frames;
        records.push_back({sl.id, sl.mode, MotionSequence{h.fps, PoseSequence(std::move(values))}});
    }
    if (frames_seen != h.frames) {
        throw MotionFileError(MotionFileErrc::truncated, "frame total does not match header");
    }
    if (next_line()) {
        throw MotionFileError(MotionFileErrc::malformed_header, "content after the last declared sequence");
    }
    return records;
}

inline std::vector<MotionRecord> load_motion_file(const std::filesystem::path& path)
{
    return parse_motion_data(io_detail::read_all(path));
}

} // namespace dmm
