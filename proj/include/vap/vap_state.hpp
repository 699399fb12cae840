#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vap/common.hpp"

namespace vap {

inline constexpr int kNumSpeakers = 2;
inline constexpr int kNumBins = 4;
inline constexpr int kNumStates = 256;

/// Joint future-activity pattern: one voiced/unvoiced flag per speaker per
/// projection bin. bins[s][b-1] holds bin b of speaker s.
struct BinPattern {
    std::array<std::array<std::uint8_t, kNumBins>, kNumSpeakers> bins{};

    bool operator==(const BinPattern&) const = default;
};

/// Bit layout: speaker 0 occupies the high nibble and bin 1 is the most
/// significant bit within each nibble. `bin` is 1-based.
inline constexpr int bit_position(int speaker, int bin) {
    return (1 - speaker) * 4 + (4 - bin);
}

/// One of the 256 joint activity classes. Valid by construction.
class VapState {
public:
    explicit VapState(int index) : index_(index) {
        if (index < 0 || index >= kNumStates)
            throw DomainError("VapState index out of range [0,255]: " +
                              std::to_string(index));
    }
    int index() const { return index_; }

    bool operator==(const VapState&) const = default;

private:
    int index_;
};

inline VapState state_from_pattern(const BinPattern& pattern) {
    int index = 0;
    for (int s = 0; s < kNumSpeakers; ++s)
        for (int b = 1; b <= kNumBins; ++b)
            if (pattern.bins[s][b - 1]) index |= 1 << bit_position(s, b);
    return VapState(index);
}

inline BinPattern pattern_from_state(VapState state) {
    BinPattern p;
    for (int s = 0; s < kNumSpeakers; ++s)
        for (int b = 1; b <= kNumBins; ++b)
            p.bins[s][b - 1] =
                static_cast<std::uint8_t>((state.index() >> bit_position(s, b)) & 1);
    return p;
}

/// Projection-window discretization grid: bin edges in milliseconds over the
/// 2 s horizon, tied to a frame rate so every edge lands on a frame boundary.
struct BinBoundaries {
    std::vector<int> edges_ms{0, 200, 600, 1200, 2000};
    int frame_rate_hz = 50;

    BinBoundaries() = default;
    BinBoundaries(std::vector<int> edges, int rate_hz)
        : edges_ms(std::move(edges)), frame_rate_hz(rate_hz) {
        validate();
    }

    void validate() const {
        if (frame_rate_hz <= 0 || 1000 % frame_rate_hz != 0)
            throw DomainError("frame rate must divide 1000 ms evenly");
        if (edges_ms.size() != static_cast<std::size_t>(kNumBins + 1))
            throw DomainError("expected exactly 5 bin edges");
        if (edges_ms.front() != 0 || edges_ms.back() != 2000)
            throw DomainError("bin edges must start at 0 and end at 2000 ms");
        const int period = frame_period_ms();
        for (std::size_t i = 0; i < edges_ms.size(); ++i) {
            if (i > 0 && edges_ms[i] <= edges_ms[i - 1])
                throw DomainError("bin edges must be strictly increasing");
            if (edges_ms[i] % period != 0)
                throw DomainError("bin edge " + std::to_string(edges_ms[i]) +
                                  " ms is not a multiple of the frame period");
        }
    }

    int frame_period_ms() const { return 1000 / frame_rate_hz; }

    /// Total projection window length in frames (100 at the defaults).
    int window_frames() const { return edges_ms.back() / frame_period_ms(); }

    /// Frame-index span [lo, hi) of 1-based bin b within the window.
    std::pair<int, int> span(int bin) const {
        return {edges_ms[bin - 1] / frame_period_ms(),
                edges_ms[bin] / frame_period_ms()};
    }
};

/// Per-speaker binary voiced flags, one per frame.
struct VadFrameTrack {
    std::array<std::vector<std::uint8_t>, kNumSpeakers> speaker;

    VadFrameTrack() = default;
    VadFrameTrack(std::vector<std::uint8_t> s0, std::vector<std::uint8_t> s1)
        : speaker{std::move(s0), std::move(s1)} {
        check_lengths();
    }

    void check_lengths() const {
        if (speaker[0].size() != speaker[1].size())
            throw DomainError("speaker tracks differ in length");
    }

    std::size_t frames() const {
        check_lengths();
        return speaker[0].size();
    }
};

/// Discretize a full projection window (window_frames() frames) into a
/// BinPattern: a bin is voiced iff its voiced-frame ratio reaches `threshold`.
inline BinPattern discretize_window(const VadFrameTrack& window,
                                    const BinBoundaries& boundaries = {},
                                    double threshold = 0.5) {
    boundaries.validate();
    const int n = boundaries.window_frames();
    if (window.frames() != static_cast<std::size_t>(n))
        throw DomainError("window length " + std::to_string(window.frames()) +
                          " != required " + std::to_string(n) + " frames");
    BinPattern p;
    for (int s = 0; s < kNumSpeakers; ++s) {
        for (int b = 1; b <= kNumBins; ++b) {
            auto [lo, hi] = boundaries.span(b);
            int voiced = 0;
            for (int t = lo; t < hi; ++t) voiced += window.speaker[s][t] ? 1 : 0;
            double ratio = static_cast<double>(voiced) / (hi - lo);
            p.bins[s][b - 1] = ratio >= threshold ? 1 : 0;
        }
    }
    return p;
}

/// Per-frame prediction targets: label[t] discretizes the strictly-future
/// window of frames t+1 .. t+W. Frames with fewer than W future frames carry
/// no label, so the result has max(0, T-W) entries.
inline std::vector<VapState> label_sequence(const VadFrameTrack& track,
                                            const BinBoundaries& boundaries = {},
                                            double threshold = 0.5,
                                            std::vector<std::string>* warnings = nullptr) {
    boundaries.validate();
    const std::size_t T = track.frames();
    const int W = boundaries.window_frames();
    if (T < static_cast<std::size_t>(W)) {
        if (warnings)
            warnings->push_back("track of " + std::to_string(T) +
                                " frames is shorter than the " + std::to_string(W) +
                                "-frame projection window; no labels produced");
        return {};
    }

    // Prefix sums of voiced counts so each bin query is O(1).
    std::array<std::vector<std::uint32_t>, kNumSpeakers> prefix;
    for (int s = 0; s < kNumSpeakers; ++s) {
        prefix[s].assign(T + 1, 0);
        for (std::size_t t = 0; t < T; ++t)
            prefix[s][t + 1] = prefix[s][t] + (track.speaker[s][t] ? 1 : 0);
    }

    std::vector<VapState> labels;
    labels.reserve(T - W);
    for (std::size_t t = 0; t + W < T; ++t) {
        int index = 0;
        for (int s = 0; s < kNumSpeakers; ++s) {
            for (int b = 1; b <= kNumBins; ++b) {
                auto [lo, hi] = boundaries.span(b);
                const std::size_t a = t + 1 + lo;
                const std::size_t z = t + 1 + hi;
                const int voiced = static_cast<int>(prefix[s][z] - prefix[s][a]);
                const double ratio = static_cast<double>(voiced) / (hi - lo);
                if (ratio >= threshold) index |= 1 << bit_position(s, b);
            }
        }
        labels.push_back(VapState(index));
    }
    return labels;
}

} // namespace vap
