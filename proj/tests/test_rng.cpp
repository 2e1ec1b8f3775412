#include <catch_amalgamated.hpp>

#include <bridgekit/rng.hpp>

#include <vector>

#include "oracles.hpp"

using bridgekit::Stream;

TEST_CASE("streams are pure functions of seed and stream id", "[rng]") {
    Stream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        CHECK(va == b.next_u64());
        CHECK(va != c.next_u64());
        CHECK(va != d.next_u64());
    }
}

TEST_CASE("split streams are reproducible and distinct", "[rng]") {
    const Stream parent(9);
    Stream x = parent.split(3), y = parent.split(3), z = parent.split(4);
    CHECK(x.normal() == y.normal());
    CHECK(x.uniform() != z.uniform());
}

TEST_CASE("uniform and normal moments", "[rng]") {
    Stream rng(123);
    const std::size_t n = 200000;
    std::vector<double> u(n), g(n);
    for (auto& v : u) v = rng.uniform();
    for (auto& v : g) v = rng.normal();
    for (double v : u) REQUIRE((v >= 0.0 && v < 1.0));
    CHECK(std::abs(oracle::mean(u) - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
    CHECK(std::abs(oracle::mean_z(oracle::mean(g), 0.0, 1.0, n)) < 4.0);
    CHECK(std::abs(oracle::var_z(oracle::variance(g), 1.0, n)) < 4.0);
}
