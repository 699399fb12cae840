#include <catch2/catch_amalgamated.hpp>

#include "vap/common.hpp"
#include "vap/vap_state.hpp"

using namespace vap;

namespace {

BinPattern constant_pattern(std::uint8_t v) {
    BinPattern p;
    for (auto& row : p.bins) row.fill(v);
    return p;
}

VadFrameTrack random_window(Rng& rng, std::size_t frames, double p_voiced = 0.5) {
    std::vector<std::uint8_t> a(frames), b(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        a[i] = rng.bernoulli(p_voiced) ? 1 : 0;
        b[i] = rng.bernoulli(p_voiced) ? 1 : 0;
    }
    return VadFrameTrack(std::move(a), std::move(b));
}

// Independent oracle: recount voiced frames per hardcoded span.
BinPattern counting_oracle(const VadFrameTrack& window, double threshold) {
    static const int spans[4][2] = {{0, 10}, {10, 30}, {30, 60}, {60, 100}};
    BinPattern p;
    for (int s = 0; s < 2; ++s) {
        for (int b = 0; b < 4; ++b) {
            int voiced = 0;
            for (int t = spans[b][0]; t < spans[b][1]; ++t)
                if (window.speaker[s][t]) ++voiced;
            p.bins[s][b] =
                (double(voiced) / (spans[b][1] - spans[b][0]) >= threshold) ? 1 : 0;
        }
    }
    return p;
}

} // namespace

TEST_CASE("codec trivial anchors") {
    REQUIRE(state_from_pattern(constant_pattern(0)).index() == 0);
    REQUIRE(state_from_pattern(constant_pattern(1)).index() == 255);

    BinPattern spk0;
    spk0.bins[0].fill(1);
    spk0.bins[1].fill(0);
    REQUIRE(state_from_pattern(spk0).index() == 240); // 0b11110000

    REQUIRE(pattern_from_state(VapState(0)) == constant_pattern(0));
    REQUIRE(pattern_from_state(VapState(255)) == constant_pattern(1));
}

TEST_CASE("codec is bijective over all 256 states") {
    for (int i = 0; i < kNumStates; ++i)
        REQUIRE(state_from_pattern(pattern_from_state(VapState(i))).index() == i);

    // And the other direction across all 2^8 patterns.
    for (int mask = 0; mask < 256; ++mask) {
        BinPattern p;
        int k = 0;
        for (int s = 0; s < 2; ++s)
            for (int b = 0; b < 4; ++b) p.bins[s][b] = (mask >> k++) & 1;
        REQUIRE(pattern_from_state(state_from_pattern(p)) == p);
    }
}

TEST_CASE("state index is range checked") {
    REQUIRE_THROWS_AS(VapState(-1), DomainError);
    REQUIRE_THROWS_AS(VapState(256), DomainError);
}

TEST_CASE("bin boundaries validate their grid") {
    REQUIRE(BinBoundaries{}.window_frames() == 100);
    REQUIRE_THROWS_AS(BinBoundaries({0, 200, 600, 1200, 2001}, 50), DomainError);
    REQUIRE_THROWS_AS(BinBoundaries({0, 600, 200, 1200, 2000}, 50), DomainError);
    REQUIRE_THROWS_AS(BinBoundaries({0, 210, 600, 1200, 2000}, 50), DomainError);
    REQUIRE_THROWS_AS(BinBoundaries({0, 200, 600, 2000}, 50), DomainError);
    // 30 Hz does not divide 1000 ms evenly.
    REQUIRE_THROWS_AS(BinBoundaries({0, 200, 600, 1200, 2000}, 30), DomainError);
}

TEST_CASE("bin spans partition the projection window") {
    BinBoundaries b;
    int expected_lo = 0;
    static const int spans[4][2] = {{0, 10}, {10, 30}, {30, 60}, {60, 100}};
    for (int bin = 1; bin <= 4; ++bin) {
        auto [lo, hi] = b.span(bin);
        REQUIRE(lo == spans[bin - 1][0]);
        REQUIRE(hi == spans[bin - 1][1]);
        REQUIRE(lo == expected_lo);
        expected_lo = hi;
    }
    REQUIRE(expected_lo == 100);
}

TEST_CASE("discretize: one speaker fully voiced") {
    std::vector<std::uint8_t> on(100, 1), off(100, 0);
    auto p = discretize_window(VadFrameTrack(on, off));
    for (int b = 0; b < 4; ++b) {
        REQUIRE(p.bins[0][b] == 1);
        REQUIRE(p.bins[1][b] == 1 - 1);
    }
}

TEST_CASE("discretize: ratio exactly at threshold counts as voiced") {
    std::vector<std::uint8_t> a(100, 0), b(100, 0);
    for (int i = 0; i < 5; ++i) a[i] = 1; // 5 of 10 frames in bin 1
    auto p = discretize_window(VadFrameTrack(a, b), BinBoundaries{}, 0.5);
    REQUIRE(p.bins[0][0] == 1);
    // Just below the threshold is unvoiced.
    a[4] = 0;
    p = discretize_window(VadFrameTrack(a, b), BinBoundaries{}, 0.5);
    REQUIRE(p.bins[0][0] == 0);
}

TEST_CASE("discretize matches the counting oracle on random windows") {
    Rng rng(1234);
    for (int rep = 0; rep < 300; ++rep) {
        auto w = random_window(rng, 100, rng.uniform(0.1, 0.9));
        double thr = rng.uniform(0.1, 0.9);
        REQUIRE(discretize_window(w, BinBoundaries{}, thr) == counting_oracle(w, thr));
    }
}

TEST_CASE("discretize rejects wrong window lengths") {
    std::vector<std::uint8_t> v(99, 0);
    REQUIRE_THROWS_AS(discretize_window(VadFrameTrack(v, v)), DomainError);
    std::vector<std::uint8_t> w(101, 0);
    REQUIRE_THROWS_AS(discretize_window(VadFrameTrack(w, w)), DomainError);
}

TEST_CASE("discretization is monotone in added voiced frames") {
    Rng rng(99);
    for (int rep = 0; rep < 200; ++rep) {
        auto w = random_window(rng, 100, 0.4);
        auto before = discretize_window(w);
        int s = int(rng.below(2));
        int t = int(rng.below(100));
        w.speaker[s][t] = 1;
        auto after = discretize_window(w);
        for (int b = 0; b < 4; ++b) {
            if (before.bins[s][b] == 1) REQUIRE(after.bins[s][b] == 1);
            // The untouched speaker may not change at all.
            REQUIRE(after.bins[1 - s][b] == before.bins[1 - s][b]);
        }
    }
}

TEST_CASE("labels: silent track maps to state 0 everywhere") {
    std::vector<std::uint8_t> z(150, 0);
    auto labels = label_sequence(VadFrameTrack(z, z));
    REQUIRE(labels.size() == 50);
    for (auto& l : labels) REQUIRE(l.index() == 0);
}

TEST_CASE("labels: speaker 1 fully voiced maps to state 15") {
    std::vector<std::uint8_t> z(130, 0), on(130, 1);
    auto labels = label_sequence(VadFrameTrack(z, on));
    REQUIRE(labels.size() == 30);
    for (auto& l : labels) REQUIRE(l.index() == 15); // 0b00001111
}

TEST_CASE("labels match re-running discretize_window at every offset") {
    // Track with one turn transition: speaker 0 talks, a gap, then speaker 1.
    const std::size_t T = 260;
    std::vector<std::uint8_t> a(T, 0), b(T, 0);
    for (std::size_t i = 0; i < 110; ++i) a[i] = 1;
    for (std::size_t i = 140; i < T; ++i) b[i] = 1;
    VadFrameTrack track(a, b);

    auto labels = label_sequence(track);
    REQUIRE(labels.size() == T - 100);
    for (std::size_t t = 0; t + 100 < T; ++t) {
        VadFrameTrack window(
            {track.speaker[0].begin() + t + 1, track.speaker[0].begin() + t + 101},
            {track.speaker[1].begin() + t + 1, track.speaker[1].begin() + t + 101});
        REQUIRE(labels[t] == state_from_pattern(discretize_window(window)));
    }
}

TEST_CASE("labels are causal: past frames do not matter") {
    Rng rng(5);
    auto track = random_window(rng, 200, 0.5);
    auto labels = label_sequence(track);

    for (std::size_t t : {std::size_t(0), std::size_t(37), std::size_t(99)}) {
        auto mutated = track;
        for (std::size_t i = 0; i <= t; ++i) {
            mutated.speaker[0][i] ^= 1;
            mutated.speaker[1][i] = rng.bernoulli(0.5) ? 1 : 0;
        }
        auto relabels = label_sequence(mutated);
        REQUIRE(relabels[t] == labels[t]);
    }
}

TEST_CASE("short tracks yield no labels and a warning") {
    std::vector<std::uint8_t> v(99, 1);
    std::vector<std::string> warnings;
    auto labels = label_sequence(VadFrameTrack(v, v), BinBoundaries{}, 0.5, &warnings);
    REQUIRE(labels.empty());
    REQUIRE(warnings.size() == 1);

    // Exactly window-sized tracks have no labelable frame but are not an error.
    std::vector<std::uint8_t> w(100, 1);
    warnings.clear();
    labels = label_sequence(VadFrameTrack(w, w), BinBoundaries{}, 0.5, &warnings);
    REQUIRE(labels.empty());
    REQUIRE(warnings.empty());
}

TEST_CASE("mismatched speaker track lengths are rejected") {
    std::vector<std::uint8_t> a(100, 0), b(101, 0);
    REQUIRE_THROWS_AS(VadFrameTrack(a, b), DomainError);
}
