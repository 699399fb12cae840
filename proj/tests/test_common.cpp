#include <catch2/catch_amalgamated.hpp>

#include "vap/common.hpp"

using namespace vap;

TEST_CASE("crc32 matches the standard check value") {
    const char* msg = "123456789";
    REQUIRE(crc32(msg, 9) == 0xCBF43926u);
    REQUIRE(crc32("", 0) == 0u);
}

TEST_CASE("crc32 can be chained over split buffers") {
    const char* msg = "123456789";
    std::uint32_t partial = crc32(msg, 4);
    REQUIRE(crc32(msg + 4, 5, partial) == 0xCBF43926u);
}

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.uniform01() == b.uniform01());
    Rng c(43);
    bool any_diff = false;
    Rng a2(42);
    for (int i = 0; i < 10; ++i) any_diff |= (a2.uniform01() != c.uniform01());
    REQUIRE(any_diff);
}

TEST_CASE("rng variates stay in range") {
    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform(2.0, 3.0);
        REQUIRE(u >= 2.0);
        REQUIRE(u < 3.0);
        double g = r.log_uniform(0.1, 0.6);
        REQUIRE(g >= 0.1 - 1e-12);
        REQUIRE(g <= 0.6 + 1e-12);
        REQUIRE(std::isfinite(r.normal()));
    }
}

TEST_CASE("error carries its code") {
    try {
        throw DomainError("bad thing");
    } catch (const Error& e) {
        REQUIRE(e.code() == "domain");
        REQUIRE(std::string(e.what()) == "bad thing");
    }
}
