#include <catch_amalgamated.hpp>

#include <bridgekit/rng.hpp>
#include <bridgekit/schedule.hpp>

#include <cmath>
#include <functional>
#include <limits>

#include "oracles.hpp"

using namespace bridgekit;
using Catch::Approx;

namespace {

// f and g^2 written straight from the published table, independent of the library.
struct RawRates {
    std::function<double(double)> f;
    std::function<double(double)> g2;
};

RawRates raw_rates(const std::string& id) {
    if (id == "brownian") return {[](double) { return 0.0; }, [](double) { return 1.0; }};
    if (id == "i2sb") {
        const double eta0 = (std::sqrt(0.3) - std::sqrt(0.1)) / 2, eta1 = (std::sqrt(0.3) + std::sqrt(0.1)) / 2;
        return {[](double) { return 0.0; },
                [=](double t) { const double g = eta1 - eta0 * std::abs(2 * t - 1); return g * g; }};
    }
    if (id == "ddbm-vp") return {[](double) { return -0.05; }, [](double) { return 0.1; }};
    if (id == "ddbm-ve") return {[](double) { return 0.0; }, [](double t) { return 2 * t; }};
    if (id == "bridge-tts-gmax") return {[](double) { return 0.0; }, [](double t) { return 0.01 + 49.99 * t; }};
    return {[](double t) { return -0.5 * 0.01 - 0.5 * 19.99 * t; },
            [](double t) { return 0.01 + 19.99 * t; }};
}

double quad_rho2(const RawRates& r, double t) {
    auto log_alpha = [&](double u) { return oracle::trapezoid_richardson(r.f, 0.0, u, 256); };
    auto integrand = [&](double u) { return r.g2(u) * std::exp(-2.0 * log_alpha(u)); };
    return oracle::trapezoid_richardson(integrand, 0.0, t, 4096);
}

}  // namespace

TEST_CASE("brownian bridge closed form at the midpoint", "[schedule]") {
    const auto e = eval_schedule(ScheduleSpec(BrownianBridge{1.0}), 0.5);
    CHECK(e.alpha == 1.0);
    CHECK(e.alpha_bar == 1.0);
    CHECK(e.rho2 == Approx(0.5).margin(1e-15));
    CHECK(e.rho_bar2 == Approx(0.5).margin(1e-15));
}

TEST_CASE("ddbm-ve at t = 0", "[schedule]") {
    const auto e = eval_schedule(ScheduleSpec::from_id("ddbm-ve"), 0.0);
    CHECK(e.alpha == 1.0);
    CHECK(e.rho2 == 0.0);
    CHECK(e.rho_bar2 == 6400.0);
}

TEST_CASE("i2sb eta parameters and rho^2 against trapezoid quadrature", "[schedule]") {
    const I2sb p{0.1, 0.3};
    CHECK(p.eta0() == Approx((std::sqrt(0.3) - std::sqrt(0.1)) / 2).epsilon(1e-15));
    CHECK(p.eta1() == Approx((std::sqrt(0.3) + std::sqrt(0.1)) / 2).epsilon(1e-15));
    const ScheduleSpec spec(p);
    const RawRates raw = raw_rates("i2sb");
    for (double t : {0.05, 0.25, 0.5, 0.6, 0.77, 0.95, 1.0}) {
        // 2^16 intervals keep the plain trapezoid error near 1e-11; the kink at 1/2 lies on a node.
        const double want = oracle::trapezoid(raw.g2, 0.0, t, 1 << 16);
        CHECK(std::abs(spec.eval(t).rho2 - want) < 1e-8);
    }
}

TEST_CASE("i2sb accepts the alternative beta1 = 1.0", "[schedule]") {
    const auto spec = ScheduleSpec::from_id("i2sb", {{"beta1", 1.0}});
    const auto e = spec.eval(0.3);
    CHECK(e.rho2 + e.rho_bar2 == Approx(e.rho_T2).epsilon(1e-12));
}

TEST_CASE("bridge coefficients", "[schedule]") {
    SECTION("brownian midpoint") {
        const auto k = bridge_coeffs(ScheduleSpec(BrownianBridge{1.0}), 0.5);
        CHECK(k.a == Approx(0.5).epsilon(1e-15));
        CHECK(k.b == Approx(0.5).epsilon(1e-15));
        CHECK(k.c == Approx(0.5).epsilon(1e-15));
    }
    SECTION("ddbm-ve T = 80 at t = 40, by hand") {
        const auto k = bridge_coeffs(ScheduleSpec::from_id("ddbm-ve"), 40.0);
        CHECK(k.a == Approx(0.25).epsilon(1e-15));
        CHECK(k.b == Approx(0.75).epsilon(1e-15));
        CHECK(k.c * k.c == Approx(1200.0).epsilon(1e-13));
    }
    SECTION("pinned at both endpoints for every preset") {
        for (const auto& id : preset_ids()) {
            const auto spec = ScheduleSpec::from_id(id);
            const auto k0 = spec.coeffs(0.0);
            const auto kT = spec.coeffs(spec.horizon());
            INFO(id);
            CHECK(k0.a == Approx(0.0).margin(1e-10));
            CHECK(k0.b == Approx(1.0).margin(1e-10));
            CHECK(k0.c == Approx(0.0).margin(1e-10));
            CHECK(kT.a == Approx(1.0).margin(1e-10));
            CHECK(kT.b == Approx(0.0).margin(1e-10));
            CHECK(kT.c == Approx(0.0).margin(1e-10));
        }
    }
}

TEST_CASE("rho^2 + rho_bar^2 = rho_T^2 on random times", "[schedule][property]") {
    Stream rng(2024);
    for (const auto& id : preset_ids()) {
        const auto spec = ScheduleSpec::from_id(id);
        const double T = spec.horizon();
        for (int i = 0; i < 1000; ++i) {
            const double t = rng.uniform(0.0, T);
            const auto e = spec.eval(t);
            INFO(id << " t=" << t);
            REQUIRE(oracle::rel_err(e.rho2 + e.rho_bar2, e.rho_T2) < 1e-9);
            REQUIRE(oracle::rel_err(e.alpha_bar, e.alpha / e.alpha_T) < 1e-12);
        }
    }
}

TEST_CASE("closed forms match quadrature of g^2 / alpha^2", "[schedule]") {
    for (const auto& id : preset_ids()) {
        const auto spec = ScheduleSpec::from_id(id);
        const double T = spec.horizon();
        const RawRates raw = raw_rates(id);
        for (int k = 1; k <= 9; ++k) {
            const double t = 0.1 * k * T;
            INFO(id << " t=" << t);
            CHECK(oracle::rel_err(spec.eval(t).rho2, quad_rho2(raw, t)) < 1e-7);
            CHECK(oracle::rel_err(spec.eval(t).alpha,
                                  std::exp(oracle::trapezoid_richardson(raw.f, 0.0, t, 256))) < 1e-10);
        }
    }
}

TEST_CASE("monotone coefficients on a dense grid", "[schedule][property]") {
    for (const auto& id : preset_ids()) {
        const auto spec = ScheduleSpec::from_id(id);
        const double T = spec.horizon();
        BridgeCoeffs prev = spec.coeffs(0.0);
        double prev_rho2 = 0.0;
        for (int i = 1; i <= 10000; ++i) {
            const double t = T * i / 10000.0;
            const auto k = spec.coeffs(t);
            const double rho2 = spec.eval(t).rho2;
            INFO(id << " t=" << t);
            REQUIRE(k.a >= prev.a);
            REQUIRE(k.b <= prev.b);
            REQUIRE(rho2 > prev_rho2);
            prev = k;
            prev_rho2 = rho2;
        }
    }
}

TEST_CASE("positive diffusion rate on the open interval", "[schedule]") {
    for (const auto& id : preset_ids()) {
        const auto spec = ScheduleSpec::from_id(id);
        for (int i = 1; i < 100; ++i) CHECK(spec.eval(spec.horizon() * i / 100.0).diffusion2 > 0.0);
    }
}

TEST_CASE("time range handling", "[schedule]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    CHECK_THROWS_AS(spec.eval(-0.1), std::out_of_range);
    CHECK_THROWS_AS(spec.eval(1.0 + 1e-9), std::out_of_range);
    CHECK(spec.eval(-1e-14).t == 0.0);
    CHECK(spec.eval(1.0 + 1e-14).t == 1.0);
    CHECK(spec.eval(1.0 - 1e-14).rho_bar2 == 0.0);
}

TEST_CASE("parameter validation", "[schedule]") {
    CHECK_THROWS_AS(ScheduleSpec::from_id("vp"), std::invalid_argument);
    CHECK_THROWS_AS(ScheduleSpec::from_id("brownian", {{"beta0", 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(ScheduleSpec(BrownianBridge{0.0}), std::invalid_argument);
    CHECK_THROWS_AS(ScheduleSpec(DdbmVe{-1.0}), std::invalid_argument);
    const auto spec = ScheduleSpec::from_id("bridge-tts-vp", {{"beta_d", 2.0}, {"beta0", 0.1}});
    CHECK(spec.params().at("beta_d") == 2.0);
    CHECK(spec.id() == "bridge-tts-vp");
}

TEST_CASE("custom schedule tables reproduce preset closed forms", "[schedule]") {
    const ScheduleSpec vp(BridgeTtsVp{});
    CustomSchedule c;
    c.drift = [](double t) { return -0.5 * 0.01 - 0.5 * 19.99 * t; };
    c.diffusion2 = [](double t) { return 0.01 + 19.99 * t; };
    c.horizon = 1.0;
    const ScheduleSpec custom(c);
    CHECK(custom.id() == "custom");
    for (double t : {0.0, 1e-4, 0.013, 0.25, 0.5, 0.777, 0.999, 1.0}) {
        const auto a = vp.eval(t);
        const auto b = custom.eval(t);
        INFO("t=" << t);
        CHECK(oracle::rel_err(b.alpha, a.alpha) < 1e-10);
        CHECK(std::abs(b.rho2 - a.rho2) < 1e-10 * a.rho_T2);
        CHECK(std::abs(b.rho_bar2 - a.rho_bar2) < 1e-10 * a.rho_T2);
        CHECK(oracle::rel_err(b.alpha_bar, a.alpha_bar) < 1e-10);
    }
}

TEST_CASE("custom schedule rejects non-finite integrands", "[schedule]") {
    CustomSchedule c;
    c.drift = [](double) { return 0.0; };
    c.diffusion2 = [](double t) { return t > 0.5 ? std::numeric_limits<double>::infinity() : 1.0; };
    CHECK_THROWS_AS(ScheduleSpec(c), std::domain_error);
}
