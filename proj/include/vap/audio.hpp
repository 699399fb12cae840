#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vap/common.hpp"

namespace vap {

/// Stereo dialogue audio, one channel per speaker. Samples are normalized to
/// [-1, 1).
struct DialogueRecording {
    int sample_rate = 0;
    std::array<std::vector<float>, 2> channels;

    DialogueRecording() = default;
    DialogueRecording(int rate, std::vector<float> c0, std::vector<float> c1)
        : sample_rate(rate), channels{std::move(c0), std::move(c1)} {
        validate();
    }

    void validate() const {
        if (channels[0].size() != channels[1].size())
            throw DomainError("dialogue channels differ in length");
        if (sample_rate < 8000)
            throw DomainError("sample rate must be at least 8000 Hz, got " +
                              std::to_string(sample_rate));
    }

    std::size_t n_samples() const { return channels[0].size(); }
    double duration_s() const {
        return static_cast<double>(n_samples()) / sample_rate;
    }
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
           std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline std::uint16_t read_u16le(const unsigned char* p) {
    return std::uint16_t(p[0] | p[1] << 8);
}

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xFF));
    out.push_back(char((v >> 8) & 0xFF));
    out.push_back(char((v >> 16) & 0xFF));
    out.push_back(char((v >> 24) & 0xFF));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
    out.push_back(char(v & 0xFF));
    out.push_back(char((v >> 8) & 0xFF));
}

} // namespace detail

/// Parse a RIFF WAV file. Only 16-bit signed little-endian PCM with exactly
/// two channels is accepted; channel 0 is speaker 0.
inline DialogueRecording read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open WAV file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();

    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw FormatError("not a RIFF/WAVE file: " + path);

    bool have_fmt = false;
    std::uint16_t channels = 0, bits = 0, format = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t at = 12;
    while (at + 8 <= n) {
        const unsigned char* id = p + at;
        std::uint32_t size = detail::read_u32le(p + at + 4);
        at += 8;
        if (at + size > n) throw FormatError("truncated chunk in WAV file: " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) throw FormatError("fmt chunk too small: " + path);
            format = detail::read_u16le(p + at);
            channels = detail::read_u16le(p + at + 2);
            rate = detail::read_u32le(p + at + 4);
            bits = detail::read_u16le(p + at + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = p + at;
            data_len = size;
        }
        at += size + (size & 1); // chunks are word aligned
    }

    if (!have_fmt || data == nullptr)
        throw FormatError("WAV file missing fmt or data chunk: " + path);
    if (format != 1) throw FormatError("only PCM WAV is supported: " + path);
    if (bits != 16) throw FormatError("only 16-bit WAV is supported: " + path);
    if (channels != 2)
        throw FormatError("expected exactly 2 channels, got " +
                          std::to_string(channels) + ": " + path);

    const std::size_t frames = data_len / 4; // 2 channels x 2 bytes
    std::vector<float> c0(frames), c1(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        auto s0 = static_cast<std::int16_t>(detail::read_u16le(data + 4 * i));
        auto s1 = static_cast<std::int16_t>(detail::read_u16le(data + 4 * i + 2));
        c0[i] = static_cast<float>(s0) / 32768.0f;
        c1[i] = static_cast<float>(s1) / 32768.0f;
    }
    return DialogueRecording(static_cast<int>(rate), std::move(c0), std::move(c1));
}

/// Write a canonical 16-bit stereo PCM WAV file.
inline void write_wav(const std::string& path, const DialogueRecording& rec) {
    rec.validate();
    const std::size_t frames = rec.n_samples();
    const std::uint32_t data_len = static_cast<std::uint32_t>(frames * 4);

    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    detail::put_u32le(out, 36 + data_len);
    out += "WAVEfmt ";
    detail::put_u32le(out, 16);
    detail::put_u16le(out, 1); // PCM
    detail::put_u16le(out, 2);
    detail::put_u32le(out, static_cast<std::uint32_t>(rec.sample_rate));
    detail::put_u32le(out, static_cast<std::uint32_t>(rec.sample_rate * 4));
    detail::put_u16le(out, 4);
    detail::put_u16le(out, 16);
    out += "data";
    detail::put_u32le(out, data_len);

    auto to_i16 = [](float v) {
        double scaled = double(v) * 32768.0;
        if (scaled > 32767.0) scaled = 32767.0;
        if (scaled < -32768.0) scaled = -32768.0;
        return static_cast<std::int16_t>(std::llround(scaled));
    };
    for (std::size_t i = 0; i < frames; ++i) {
        detail::put_u16le(out, static_cast<std::uint16_t>(to_i16(rec.channels[0][i])));
        detail::put_u16le(out, static_cast<std::uint16_t>(to_i16(rec.channels[1][i])));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write WAV file: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to WAV file: " + path);
}

/// A voiced time span in seconds.
struct Interval {
    double start_s = 0.0;
    double end_s = 0.0;

    bool operator==(const Interval&) const = default;
};

/// Per-speaker ground-truth voiced intervals; sorted and non-overlapping.
struct VadIntervals {
    std::array<std::vector<Interval>, 2> speaker;

    void validate() const {
        for (int s = 0; s < 2; ++s) {
            double prev_end = -1.0;
            for (const auto& iv : speaker[s]) {
                if (!(iv.start_s >= 0.0) || !(iv.start_s < iv.end_s))
                    throw DomainError("invalid interval [" + std::to_string(iv.start_s) +
                                      ", " + std::to_string(iv.end_s) + ")");
                if (iv.start_s < prev_end)
                    throw DomainError("intervals overlap or are unsorted for speaker " +
                                      std::to_string(s));
                prev_end = iv.end_s;
            }
        }
    }
};

inline constexpr const char* kVadCsvHeader = "speaker,start_s,end_s";

namespace detail {

inline double parse_double(std::string_view sv, const std::string& context) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
    if (ec != std::errc() || ptr != sv.data() + sv.size())
        throw FormatError("bad number '" + std::string(sv) + "' in " + context);
    return v;
}

} // namespace detail

inline VadIntervals read_vad_csv(std::istream& in, const std::string& context = "vad csv") {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty VAD file: " + context);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kVadCsvHeader)
        throw FormatError("expected header '" + std::string(kVadCsvHeader) +
                          "', got '" + line + "' in " + context);
    VadIntervals vi;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string_view sv(line);
        auto c1 = sv.find(',');
        auto c2 = sv.find(',', c1 == std::string_view::npos ? c1 : c1 + 1);
        if (c1 == std::string_view::npos || c2 == std::string_view::npos)
            throw FormatError("expected 3 columns at line " + std::to_string(lineno) +
                              " in " + context);
        std::string where = context + ":" + std::to_string(lineno);
        double spk = detail::parse_double(sv.substr(0, c1), where);
        if (spk != 0.0 && spk != 1.0)
            throw FormatError("speaker must be 0 or 1 at " + where);
        Interval iv{detail::parse_double(sv.substr(c1 + 1, c2 - c1 - 1), where),
                    detail::parse_double(sv.substr(c2 + 1), where)};
        vi.speaker[static_cast<int>(spk)].push_back(iv);
    }
    for (auto& list : vi.speaker)
        std::sort(list.begin(), list.end(), [](const Interval& a, const Interval& b) {
            return a.start_s < b.start_s;
        });
    vi.validate();
    return vi;
}

inline VadIntervals read_vad_csv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open VAD file: " + path);
    return read_vad_csv(f, path);
}

inline void write_vad_csv(std::ostream& out, const VadIntervals& vi) {
    vi.validate();
    out << kVadCsvHeader << "\n";
    char buf[96];
    for (int s = 0; s < 2; ++s)
        for (const auto& iv : vi.speaker[s]) {
            std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", s, iv.start_s, iv.end_s);
            out << buf;
        }
}

inline void write_vad_csv_file(const std::string& path, const VadIntervals& vi) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write VAD file: " + path);
    write_vad_csv(f, vi);
}

} // namespace vap
