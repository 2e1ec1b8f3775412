#include <catch_amalgamated.hpp>

#include <bridgekit/bridge.hpp>

#include <cmath>

#include "oracles.hpp"

using namespace bridgekit;
using Catch::Approx;

TEST_CASE("sample_bridge_point", "[bridge]") {
    const auto brownian = ScheduleSpec::from_id("brownian");
    CHECK(sample_bridge_point(brownian, 0.0, {{2.0}, {5.0}}, Vec{0.7}) == Vec{2.0});
    CHECK(sample_bridge_point(brownian, 0.5, {{0.0}, {1.0}}, Vec{1.0})[0] == Approx(1.0).epsilon(1e-15));
    const auto ve = ScheduleSpec::from_id("ddbm-ve");
    // b - a = 0.75 - 0.25
    CHECK(sample_bridge_point(ve, 40.0, {{1.0}, {-1.0}}, Vec{0.0})[0] == Approx(0.5).epsilon(1e-14));
    CHECK_THROWS_AS(sample_bridge_point(brownian, 0.5, {{0.0, 1.0}, {1.0}}, Vec{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(sample_bridge_point(brownian, 0.5, {{0.0}, {1.0}}, Vec{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("forward simulation rejects too few steps", "[bridge]") {
    Stream rng(1);
    CHECK_THROWS_AS(simulate_forward_sde(ScheduleSpec::from_id("brownian"), {{0.0}, {0.0}}, 1, rng),
                    std::invalid_argument);
}

TEST_CASE("forward simulation stops short of the pinned endpoint", "[bridge]") {
    Stream rng(3);
    const auto path = simulate_forward_sde(ScheduleSpec::from_id("brownian"), {{0.0}, {1.0}}, 100, rng);
    REQUIRE(path.times.size() == 101);
    CHECK(path.times.front() == 0.0);
    CHECK(path.times.back() == Approx(0.999).epsilon(1e-15));
    CHECK(path.states.front() == Vec{0.0});
}

namespace {

void check_forward_moments(const ScheduleSpec& spec, const Coupling& pair, std::size_t n_steps,
                           std::size_t probe, std::uint64_t seed) {
    const std::size_t n_paths = 10000;
    const auto rows = forward_sde_moments(spec, pair, n_steps, n_paths, seed, {probe});
    const auto& row = rows.front();
    const auto k = spec.coeffs(row.t);
    const double mean = k.a * pair.y[0] + k.b * pair.x[0];
    const double var = k.c * k.c;
    INFO(spec.id() << " t=" << row.t << " mean=" << row.mean[0] << " var=" << row.var[0]);
    CHECK(std::abs(oracle::mean_z(row.mean[0], mean, var, n_paths)) < 3.0);
    CHECK(std::abs(oracle::var_z(row.var[0], var, n_paths)) < 3.0);
}

}  // namespace

TEST_CASE("forward simulation marginals: brownian bridge between zeros", "[bridge][mc]") {
    // grid time for step 500 of 1000 is 0.4995
    check_forward_moments(ScheduleSpec::from_id("brownian"), {{0.0}, {0.0}}, 1000, 500, 11);
}

TEST_CASE("forward simulation marginals: ddbm-vp", "[bridge][mc]") {
    check_forward_moments(ScheduleSpec::from_id("ddbm-vp"), {{1.0}, {1.0}}, 4000, 2000, 12);
}

TEST_CASE("score and data prediction transforms", "[bridge]") {
    const auto brownian = ScheduleSpec::from_id("brownian");
    SECTION("hand substitution") {
        const Vec s = score_from_data_pred(brownian, 0.5, Vec{0.6}, Vec{1.0}, Vec{0.0});
        CHECK(s[0] == Approx(-0.4).epsilon(1e-14));
    }
    SECTION("zero at the conditional mean") {
        const Vec x{0.3}, y{-1.2};
        const auto k = brownian.coeffs(0.5);
        const Vec s = score_from_data_pred(brownian, 0.5, Vec{k.a * y[0] + k.b * x[0]}, y, x);
        CHECK(s[0] == Approx(0.0).margin(1e-15));
    }
    SECTION("pinned endpoints are rejected") {
        CHECK_THROWS_AS(score_from_data_pred(brownian, 0.0, Vec{0.0}, Vec{0.0}, Vec{0.0}), std::domain_error);
        CHECK_THROWS_AS(score_from_data_pred(brownian, 1.0, Vec{0.0}, Vec{0.0}, Vec{0.0}), std::domain_error);
    }
    SECTION("round trip on random inputs") {
        Stream rng(5);
        for (const auto& id : preset_ids()) {
            const auto spec = ScheduleSpec::from_id(id);
            const double T = spec.horizon();
            for (int i = 0; i < 200; ++i) {
                const double t = rng.uniform(0.01 * T, 0.99 * T);
                const Vec x_t{rng.normal(), rng.normal()}, y{rng.normal(), rng.normal()};
                const Vec v{rng.normal(), rng.normal()};
                const Vec back = data_pred_from_score(spec, t, x_t, y, score_from_data_pred(spec, t, x_t, y, v));
                INFO(id << " t=" << t);
                REQUIRE(std::abs(back[0] - v[0]) < 1e-9);
                REQUIRE(std::abs(back[1] - v[1]) < 1e-9);
            }
        }
    }
}

TEST_CASE("oracle posterior score", "[bridge]") {
    const auto brownian = ScheduleSpec::from_id("brownian");
    const GaussianCouplingOracle oracle(Vec{0.0}, 1.0);
    SECTION("Gaussian convolution example") {
        CHECK(oracle_posterior_score(oracle, brownian, 0.5, Vec{1.0}, Vec{0.0})[0] == Approx(-2.0).epsilon(1e-14));
    }
    SECTION("zero at the marginal mean") {
        const GaussianCouplingOracle shifted(Vec{0.7}, 0.4);
        const auto k = brownian.coeffs(0.3);
        const Vec y{2.0};
        const Vec mean{k.a * y[0] + k.b * 0.7};
        CHECK(oracle_posterior_score(shifted, brownian, 0.3, mean, y)[0] == Approx(0.0).margin(1e-14));
    }
    SECTION("marginal moments by Monte Carlo") {
        // x_t = a y + b x0 + c z with x0 ~ N(0, 1): the closed form assumes N(a y, b^2 + c^2).
        const std::size_t n = 1000000;
        Stream rng(77);
        std::vector<double> xs(n);
        const auto k = brownian.coeffs(0.5);
        for (auto& v : xs) v = k.b * rng.normal() + k.c * rng.normal();
        CHECK(std::abs(oracle::mean_z(oracle::mean(xs), 0.0, 0.5, n)) < 4.0);
        CHECK(std::abs(oracle::var_z(oracle::variance(xs), 0.5, n)) < 4.0);
    }
    SECTION("agrees with central differences of the log density") {
        const auto spec = ScheduleSpec::from_id("bridge-tts-vp");
        const GaussianCouplingOracle o(Vec{0.4}, 0.8);
        const Vec y{-0.5};
        for (double t : {0.1, 0.4, 0.8}) {
            const auto k = spec.coeffs(t);
            const double m = k.a * y[0] + k.b * 0.4;
            const double v = k.b * k.b * 0.64 + k.c * k.c;
            auto log_density = [&](double x) { return -0.5 * (x - m) * (x - m) / v - 0.5 * std::log(2 * M_PI * v); };
            for (double x : {-1.0, 0.2, 1.5}) {
                const double fd = oracle::central_diff(log_density, x, 1e-5);
                CHECK(std::abs(oracle_posterior_score(o, spec, t, Vec{x}, y)[0] - fd) < 1e-6);
            }
        }
    }
    SECTION("degenerate prior recovers the conditional score") {
        const GaussianCouplingOracle tight(Vec{0.3}, 1e-9);
        const Vec x_t{0.9}, y{1.1};
        const double want = score_from_data_pred(brownian, 0.4, x_t, y, Vec{0.3})[0];
        CHECK(oracle_posterior_score(tight, brownian, 0.4, x_t, y)[0] == Approx(want).epsilon(1e-12));
    }
    SECTION("posterior mean is the data-prediction form of the score") {
        const GaussianCouplingOracle o(Vec{0.2}, 0.5);
        const Vec x_t{0.9}, y{1.1};
        const Vec via_score = data_pred_from_score(brownian, 0.6, x_t, y, oracle_posterior_score(o, brownian, 0.6, x_t, y));
        CHECK(oracle_data_pred(o, brownian, 0.6, x_t, y)[0] == Approx(via_score[0]).epsilon(1e-12));
    }
    SECTION("range checks") {
        CHECK_THROWS_AS(oracle_posterior_score(oracle, brownian, 1.0, Vec{0.0}, Vec{0.0}), std::out_of_range);
        CHECK_THROWS_AS(GaussianCouplingOracle(Vec{0.0}, 0.0), std::invalid_argument);
    }
}
