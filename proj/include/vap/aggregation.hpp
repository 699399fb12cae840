#pragma once

#include <array>
#include <cmath>
#include <string>

#include "vap/common.hpp"
#include "vap/vap_state.hpp"

namespace vap {

/// Per-frame output of the projection head: a probability for each of the
/// 256 joint activity states.
struct StateDistribution {
    std::array<double, kNumStates> probs{};

    double sum() const {
        double s = 0.0;
        for (double p : probs) s += p;
        return s;
    }

    void check_normalized(double tol = 1e-4) const {
        for (double p : probs)
            if (p < 0.0 || !std::isfinite(p))
                throw DomainError("state distribution has a negative or non-finite entry");
        const double s = sum();
        if (std::abs(s - 1.0) > tol)
            throw DomainError("state distribution sums to " + std::to_string(s) +
                              ", not 1");
    }
};

/// Interpretable next-speaker probabilities. p_now covers the 0-600 ms bins,
/// p_future the 600-2000 ms bins; each is a softmax over the two speakers.
struct TurnProbs {
    std::array<double, kNumSpeakers> p_now{};
    std::array<double, kNumSpeakers> p_future{};
};

/// Expected bin activity: marginal[s][b-1] is the total probability of states
/// in which speaker s is voiced during bin b.
///
/// Summation goes through per-nibble partial sums so that relabeling the
/// speakers (swapping the two nibbles of every index) permutes the result
/// bit-exactly, not just within rounding.
inline std::array<std::array<double, kNumBins>, kNumSpeakers>
bin_marginals(const StateDistribution& dist) {
    dist.check_normalized();
    std::array<double, 16> high_sum{}; // high_sum[h] = sum over states with high nibble h
    std::array<double, 16> low_sum{};  // low_sum[l]  = sum over states with low nibble l
    for (int h = 0; h < 16; ++h)
        for (int l = 0; l < 16; ++l) high_sum[h] += dist.probs[h * 16 + l];
    for (int l = 0; l < 16; ++l)
        for (int h = 0; h < 16; ++h) low_sum[l] += dist.probs[h * 16 + l];

    std::array<std::array<double, kNumBins>, kNumSpeakers> marginal{};
    for (int b = 1; b <= kNumBins; ++b) {
        const int bit = 1 << (kNumBins - b); // bin bit inside a nibble
        for (int n = 0; n < 16; ++n) {
            if (n & bit) {
                marginal[0][b - 1] += high_sum[n];
                marginal[1][b - 1] += low_sum[n];
            }
        }
    }
    return marginal;
}

inline std::array<double, 2> softmax2(double a, double b) {
    const double m = a > b ? a : b;
    const double ea = std::exp(a - m);
    const double eb = std::exp(b - m);
    const double z = ea + eb;
    return {ea / z, eb / z};
}

/// Collapse a state distribution into p_now / p_future. Region scores are
/// plain sums of the two bin marginals; `duration_weighted` switches to sums
/// weighted by bin length (200/600 and 400/600 for the near region, 600/1400
/// and 800/1400 for the far region).
inline TurnProbs turn_probs(const StateDistribution& dist,
                            bool duration_weighted = false) {
    const auto m = bin_marginals(dist);
    std::array<double, kNumSpeakers> now_score{};
    std::array<double, kNumSpeakers> future_score{};
    for (int s = 0; s < kNumSpeakers; ++s) {
        if (duration_weighted) {
            now_score[s] = (200.0 * m[s][0] + 400.0 * m[s][1]) / 600.0;
            future_score[s] = (600.0 * m[s][2] + 800.0 * m[s][3]) / 1400.0;
        } else {
            now_score[s] = m[s][0] + m[s][1];
            future_score[s] = m[s][2] + m[s][3];
        }
    }
    TurnProbs tp;
    tp.p_now = softmax2(now_score[0], now_score[1]);
    tp.p_future = softmax2(future_score[0], future_score[1]);
    return tp;
}

/// Remap a state index so the two speakers' nibbles swap places. Applying
/// this permutation to a distribution's index space relabels the speakers.
inline int swap_speakers(int state_index) {
    return ((state_index & 0x0F) << 4) | ((state_index >> 4) & 0x0F);
}

} // namespace vap
