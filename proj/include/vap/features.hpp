#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "vap/audio.hpp"
#include "vap/common.hpp"
#include "vap/vap_state.hpp"

namespace vap {

inline constexpr int kFrameRateHz = 50;
inline constexpr int kFrameMs = 20;
inline constexpr int kWindowMs = 40;
inline constexpr int kDefaultBands = 8;
inline constexpr double kLogFloor = 1e-10;

namespace detail {

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

/// In-place iterative radix-2 FFT.
inline void fft_inplace(std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                auto u = x[i + k];
                auto v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

} // namespace detail

/// Per-channel per-frame feature vectors: n_bands triangular band
/// log-energies plus the zero-crossing rate, at 50 frames per second.
struct FrameFeatures {
    int n_bands = kDefaultBands;
    std::size_t n_frames = 0;
    std::array<std::vector<double>, 2> data; // frame-major, n_frames * dim()

    int dim() const { return n_bands + 1; }
    const double* at(int channel, std::size_t frame) const {
        return data[channel].data() + frame * static_cast<std::size_t>(dim());
    }
    double* at(int channel, std::size_t frame) {
        return data[channel].data() + frame * static_cast<std::size_t>(dim());
    }
};

/// Scratch state for one feature computation; reusable across frames so the
/// streaming path does not allocate per frame.
class FeatureExtractor {
public:
    FeatureExtractor(int sample_rate, int n_bands = kDefaultBands)
        : rate_(sample_rate), n_bands_(n_bands) {
        if (sample_rate < 8000) throw DomainError("sample rate must be >= 8000 Hz");
        if (n_bands < 1) throw DomainError("need at least one band");
        window_len_ = static_cast<std::size_t>(
            detail::floor_div(static_cast<std::int64_t>(kWindowMs) * rate_, 1000));
        fft_len_ = detail::next_pow2(window_len_);
        fft_buf_.resize(fft_len_);
        band_weights_.assign(static_cast<std::size_t>(n_bands) * (fft_len_ / 2 + 1), 0.0);
        const double nyquist = rate_ / 2.0;
        for (int b = 1; b <= n_bands; ++b) {
            const double lo = nyquist * (b - 1) / (n_bands + 1);
            const double mid = nyquist * b / (n_bands + 1);
            const double hi = nyquist * (b + 1) / (n_bands + 1);
            for (std::size_t k = 0; k <= fft_len_ / 2; ++k) {
                const double f = static_cast<double>(k) * rate_ / static_cast<double>(fft_len_);
                double w = 0.0;
                if (f >= lo && f <= mid)
                    w = (f - lo) / (mid - lo);
                else if (f > mid && f <= hi)
                    w = (hi - f) / (hi - mid);
                band_weights_[(b - 1) * (fft_len_ / 2 + 1) + k] = w;
            }
        }
    }

    int dim() const { return n_bands_ + 1; }
    int n_bands() const { return n_bands_; }
    int sample_rate() const { return rate_; }
    std::size_t window_len() const { return window_len_; }

    /// First sample of frame t's analysis window; 10 ms before the frame span.
    std::int64_t window_start(std::int64_t frame) const {
        return detail::floor_div((20 * frame - 10) * rate_, 1000);
    }

    /// Feature vector for one materialized window (window_len() samples,
    /// zero-padded by the caller where it extends past the signal).
    void compute(const float* window, double* out) {
        for (std::size_t i = 0; i < window_len_; ++i)
            fft_buf_[i] = std::complex<double>(window[i], 0.0);
        for (std::size_t i = window_len_; i < fft_len_; ++i)
            fft_buf_[i] = std::complex<double>(0.0, 0.0);
        detail::fft_inplace(fft_buf_);

        for (int b = 0; b < n_bands_; ++b) {
            const double* w = band_weights_.data() + b * (fft_len_ / 2 + 1);
            double energy = 0.0;
            for (std::size_t k = 0; k <= fft_len_ / 2; ++k) {
                const double re = fft_buf_[k].real();
                const double im = fft_buf_[k].imag();
                energy += w[k] * (re * re + im * im);
            }
            out[b] = std::log(energy > kLogFloor ? energy : kLogFloor);
        }

        int crossings = 0;
        for (std::size_t i = 1; i < window_len_; ++i)
            if (double(window[i - 1]) * double(window[i]) < 0.0) ++crossings;
        out[n_bands_] = static_cast<double>(crossings) /
                        static_cast<double>(window_len_ - 1);
    }

    /// Materialize frame t's window from a full channel buffer, zero-padding
    /// at both signal edges, then compute its features.
    void compute_frame(const float* channel, std::size_t n_samples,
                       std::int64_t frame, double* out) {
        window_scratch_.assign(window_len_, 0.0f);
        const std::int64_t start = window_start(frame);
        for (std::size_t i = 0; i < window_len_; ++i) {
            const std::int64_t s = start + static_cast<std::int64_t>(i);
            if (s >= 0 && s < static_cast<std::int64_t>(n_samples))
                window_scratch_[i] = channel[s];
        }
        compute(window_scratch_.data(), out);
    }

private:
    int rate_;
    int n_bands_;
    std::size_t window_len_;
    std::size_t fft_len_;
    std::vector<std::complex<double>> fft_buf_;
    std::vector<double> band_weights_;
    std::vector<float> window_scratch_;
};

/// Number of 20 ms frames a signal of n_samples at `rate` yields:
/// floor(duration_s * 50), computed exactly in integers.
inline std::size_t frame_count(std::size_t n_samples, int rate) {
    return static_cast<std::size_t>(
        (static_cast<std::uint64_t>(n_samples) * kFrameRateHz) /
        static_cast<std::uint64_t>(rate));
}

/// Whole-recording feature extraction: 20 ms hop, 40 ms analysis window
/// centered on each frame span and zero-padded at the signal edges.
inline FrameFeatures frame_audio(const DialogueRecording& rec,
                                 int n_bands = kDefaultBands) {
    rec.validate();
    if (rec.n_samples() == 0) throw DomainError("cannot frame zero-length audio");

    FeatureExtractor fx(rec.sample_rate, n_bands);
    FrameFeatures out;
    out.n_bands = n_bands;
    out.n_frames = frame_count(rec.n_samples(), rec.sample_rate);
    const auto dim = static_cast<std::size_t>(out.dim());
    for (int c = 0; c < 2; ++c) {
        out.data[c].resize(out.n_frames * dim);
        for (std::size_t t = 0; t < out.n_frames; ++t)
            fx.compute_frame(rec.channels[c].data(), rec.n_samples(),
                             static_cast<std::int64_t>(t), out.at(c, t));
    }
    return out;
}

/// Incremental framer: push samples as they arrive, pop per-frame features.
/// Produces bit-identical output to frame_audio on the same sample stream.
class FrameCursor {
public:
    FrameCursor(int sample_rate, int n_bands = kDefaultBands)
        : fx_(sample_rate, n_bands), rate_(sample_rate) {}

    int dim() const { return fx_.dim(); }

    void push(const float* c0, const float* c1, std::size_t n) {
        buf_[0].insert(buf_[0].end(), c0, c0 + n);
        buf_[1].insert(buf_[1].end(), c1, c1 + n);
        received_ += n;
    }

    void finish() { finished_ = true; }
    bool finished() const { return finished_; }

    std::int64_t frames_emitted() const { return next_frame_; }
    std::int64_t received_samples() const { return static_cast<std::int64_t>(received_); }

    /// Total frames in the stream; valid once finish() has been called.
    std::int64_t total_frames() const {
        return static_cast<std::int64_t>(frame_count(received_, rate_));
    }

    /// Whether the next frame's features can be computed now.
    bool frame_ready() const {
        const std::int64_t t = next_frame_;
        // Frame t only exists if at least (t+1) full frame spans of audio exist.
        const bool frame_exists =
            static_cast<std::int64_t>(received_) * kFrameRateHz >= (t + 1) * rate_;
        if (finished_) return frame_exists;
        if (!frame_exists) return false;
        const std::int64_t need = fx_.window_start(t) +
                                  static_cast<std::int64_t>(fx_.window_len());
        return static_cast<std::int64_t>(received_) >= need;
    }

    /// Compute the next frame's features into out0/out1; returns its index.
    std::int64_t pop_frame(double* out0, double* out1) {
        if (!frame_ready()) throw DomainError("no frame ready");
        const std::int64_t t = next_frame_++;
        compute_from_buffer(0, t, out0);
        compute_from_buffer(1, t, out1);
        // Drop samples no later window can touch.
        const std::int64_t keep_from = fx_.window_start(next_frame_);
        if (keep_from > base_) {
            const auto drop = static_cast<std::size_t>(keep_from - base_);
            for (auto& b : buf_) b.erase(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(drop));
            base_ = keep_from;
        }
        return t;
    }

    /// Samples currently retained; stays bounded by one analysis window plus
    /// whatever has been pushed ahead of the consumed frame.
    std::size_t retained_samples() const { return buf_[0].size(); }

private:
    void compute_from_buffer(int c, std::int64_t frame, double* out) {
        window_.assign(fx_.window_len(), 0.0f);
        const std::int64_t start = fx_.window_start(frame);
        for (std::size_t i = 0; i < fx_.window_len(); ++i) {
            const std::int64_t s = start + static_cast<std::int64_t>(i);
            if (s >= 0 && s < static_cast<std::int64_t>(received_)) {
                window_[i] = buf_[c][static_cast<std::size_t>(s - base_)];
            }
        }
        fx_.compute(window_.data(), out);
    }

    FeatureExtractor fx_;
    int rate_;
    std::array<std::vector<float>, 2> buf_;
    std::int64_t base_ = 0; // absolute index of buf_[...][0]
    std::size_t received_ = 0;
    std::int64_t next_frame_ = 0;
    bool finished_ = false;
    std::vector<float> window_;
};

/// Rasterize voiced intervals onto the 50 Hz frame grid: a frame is voiced
/// iff at least half of it (10 ms) overlaps a voiced interval. Intervals
/// beyond the track end are clipped with a warning.
inline VadFrameTrack vad_frames(const VadIntervals& intervals, std::size_t n_frames,
                                std::vector<std::string>* warnings = nullptr) {
    intervals.validate();
    VadFrameTrack track;
    for (auto& t : track.speaker) t.assign(n_frames, 0);

    const std::int64_t frame_us = 20000;
    const std::int64_t track_end_us = static_cast<std::int64_t>(n_frames) * frame_us;
    int clipped = 0;
    std::vector<std::int64_t> overlap_us;
    for (int s = 0; s < 2; ++s) {
        overlap_us.assign(n_frames, 0);
        for (const auto& iv : intervals.speaker[s]) {
            std::int64_t a = std::llround(iv.start_s * 1e6);
            std::int64_t b = std::llround(iv.end_s * 1e6);
            if (b > track_end_us) {
                ++clipped;
                b = track_end_us;
            }
            if (a >= b) continue;
            const std::int64_t first = detail::floor_div(a, frame_us);
            const std::int64_t last = detail::floor_div(b - 1, frame_us);
            for (std::int64_t t = first; t <= last; ++t) {
                const std::int64_t fs = t * frame_us;
                overlap_us[static_cast<std::size_t>(t)] +=
                    std::min(b, fs + frame_us) - std::max(a, fs);
            }
        }
        for (std::size_t t = 0; t < n_frames; ++t)
            if (overlap_us[t] >= frame_us / 2) track.speaker[s][t] = 1;
    }
    if (clipped > 0 && warnings)
        warnings->push_back(std::to_string(clipped) +
                            " interval(s) extended past the track end and were clipped");
    return track;
}

} // namespace vap
