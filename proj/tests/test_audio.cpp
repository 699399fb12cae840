#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vap/audio.hpp"
#include "vap/common.hpp"

using namespace vap;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "vap_test_audio";
    std::filesystem::create_directories(dir);
    return dir;
}

DialogueRecording tone_recording(int rate, double seconds) {
    std::size_t n = static_cast<std::size_t>(rate * seconds);
    std::vector<float> c0(n), c1(n);
    for (std::size_t i = 0; i < n; ++i) {
        c0[i] = 0.25f * std::sin(2.0 * 3.14159265358979 * 440.0 * i / rate);
        c1[i] = 0.25f * std::cos(2.0 * 3.14159265358979 * 880.0 * i / rate);
    }
    return DialogueRecording(rate, std::move(c0), std::move(c1));
}

} // namespace

TEST_CASE("wav roundtrip preserves quantized samples exactly") {
    auto rec = tone_recording(8000, 0.5);
    auto path = (temp_dir() / "roundtrip.wav").string();
    write_wav(path, rec);
    auto back = read_wav(path);

    REQUIRE(back.sample_rate == 8000);
    REQUIRE(back.n_samples() == rec.n_samples());
    // Write quantizes to 16 bits; a second roundtrip must be bit-exact.
    auto path2 = (temp_dir() / "roundtrip2.wav").string();
    write_wav(path2, back);
    auto again = read_wav(path2);
    for (int c = 0; c < 2; ++c)
        REQUIRE(again.channels[c] == back.channels[c]);
}

TEST_CASE("wav reader skips unknown chunks") {
    auto rec = tone_recording(8000, 0.1);
    auto path = (temp_dir() / "chunky.wav").string();
    write_wav(path, rec);

    // Splice a LIST chunk between fmt and data.
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::string extra = "LIST";
    extra += std::string(1, 4) + std::string(3, 0); // size 4
    extra += "INFO";
    std::string patched = bytes.substr(0, 36) + extra + bytes.substr(36);
    // Fix the RIFF size field.
    std::uint32_t riff = static_cast<std::uint32_t>(patched.size() - 8);
    for (int i = 0; i < 4; ++i) patched[4 + i] = char((riff >> (8 * i)) & 0xFF);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(patched.data(), std::streamsize(patched.size()));
    out.close();

    auto back = read_wav(path);
    REQUIRE(back.n_samples() == rec.n_samples());
}

TEST_CASE("wav reader rejects what it cannot represent") {
    auto dir = temp_dir();

    auto write_bytes = [&](const std::string& name, const std::string& bytes) {
        std::ofstream f((dir / name).string(), std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), std::streamsize(bytes.size()));
        return (dir / name).string();
    };

    REQUIRE_THROWS_AS(read_wav((dir / "missing.wav").string()), IoError);
    REQUIRE_THROWS_AS(read_wav(write_bytes("junk.wav", "not a wav at all")), FormatError);

    // A mono file must be rejected: build one by hand.
    std::string mono;
    mono += "RIFF";
    std::uint32_t sz = 36 + 4;
    for (int i = 0; i < 4; ++i) mono.push_back(char((sz >> (8 * i)) & 0xFF));
    mono += "WAVEfmt ";
    std::uint32_t fmtlen = 16;
    for (int i = 0; i < 4; ++i) mono.push_back(char((fmtlen >> (8 * i)) & 0xFF));
    auto push16 = [&](std::uint16_t v) {
        mono.push_back(char(v & 0xFF));
        mono.push_back(char(v >> 8));
    };
    auto push32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) mono.push_back(char((v >> (8 * i)) & 0xFF));
    };
    push16(1);
    push16(1); // one channel
    push32(16000);
    push32(32000);
    push16(2);
    push16(16);
    mono += "data";
    push32(4);
    mono += std::string(4, 0);
    REQUIRE_THROWS_AS(read_wav(write_bytes("mono.wav", mono)), FormatError);

    // Truncated data chunk.
    auto rec = tone_recording(8000, 0.05);
    auto good = (dir / "short.wav").string();
    write_wav(good, rec);
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    REQUIRE_THROWS_AS(read_wav(write_bytes("short.wav", bytes.substr(0, bytes.size() - 10))),
                      FormatError);
}

TEST_CASE("recordings below 8 kHz are rejected") {
    std::vector<float> c(100, 0.0f);
    REQUIRE_THROWS_AS(DialogueRecording(4000, c, c), DomainError);
    std::vector<float> longer(101, 0.0f);
    REQUIRE_THROWS_AS(DialogueRecording(8000, c, longer), DomainError);
}

TEST_CASE("vad csv roundtrip") {
    VadIntervals vi;
    vi.speaker[0] = {{0.0, 1.0}, {2.5, 3.14}};
    vi.speaker[1] = {{1.2, 2.2}};

    std::ostringstream out;
    write_vad_csv(out, vi);
    std::istringstream in(out.str());
    auto back = read_vad_csv(in);

    REQUIRE(back.speaker[0].size() == 2);
    REQUIRE(back.speaker[1].size() == 1);
    REQUIRE(back.speaker[0][1].start_s == Catch::Approx(2.5));
    REQUIRE(back.speaker[1][0].end_s == Catch::Approx(2.2));
}

TEST_CASE("vad csv validates header and rows") {
    std::istringstream bad_header("spk,a,b\n0,0,1\n");
    REQUIRE_THROWS_AS(read_vad_csv(bad_header), FormatError);

    std::istringstream bad_speaker("speaker,start_s,end_s\n2,0.0,1.0\n");
    REQUIRE_THROWS_AS(read_vad_csv(bad_speaker), FormatError);

    std::istringstream bad_number("speaker,start_s,end_s\n0,zero,1.0\n");
    REQUIRE_THROWS_AS(read_vad_csv(bad_number), FormatError);

    std::istringstream backwards("speaker,start_s,end_s\n0,1.0,0.5\n");
    REQUIRE_THROWS_AS(read_vad_csv(backwards), DomainError);

    std::istringstream overlapping("speaker,start_s,end_s\n0,0.0,1.0\n0,0.5,2.0\n");
    REQUIRE_THROWS_AS(read_vad_csv(overlapping), DomainError);

    // Unsorted input is sorted on read rather than rejected.
    std::istringstream unsorted("speaker,start_s,end_s\n0,2.0,3.0\n0,0.0,1.0\n");
    auto vi = read_vad_csv(unsorted);
    REQUIRE(vi.speaker[0][0].start_s == Catch::Approx(0.0));
}
