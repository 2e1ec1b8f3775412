#include <catch_amalgamated.hpp>

#include <bridgekit/dataset.hpp>
#include <bridgekit/train.hpp>

#include <cmath>
#include <cstdlib>

#include "oracles.hpp"

using namespace bridgekit;
using Catch::Approx;

namespace {

BridgeNet tiny_net(const ScheduleSpec& spec, PrecondScheme scheme, std::uint64_t seed) {
    BridgeNet net(spec, Precondition::make(spec, scheme, EndpointStats{0.9, 1.1, 0.3}), 1, {16, 16});
    Stream rng(seed);
    net.init(rng);
    return net;
}

std::vector<TrainingDraw> random_draws(const TrainingSchedule& schedule, std::size_t n, std::uint64_t seed) {
    Stream rng(seed);
    auto pairs = [](Stream& s) { return Coupling{{0.5 + 0.8 * s.normal()}, {s.normal()}}; };
    return draw_batch(schedule, pairs, n, rng, 0);
}

template <class Loss>
double fd_gradient_error(Vec& params, const Vec& grad, Loss&& loss, double h = 1e-6) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = loss();
        params[i] = saved - h;
        const double down = loss();
        params[i] = saved;
        const double fd = (up - down) / (2 * h);
        num += (grad[i] - fd) * (grad[i] - fd);
        den += fd * fd;
    }
    return std::sqrt(num / den);
}

// Consistency function for a single draw, built on a predictor that returns the draw's true x.
struct PerfectUniversal {
    const ScheduleSpec* spec;
    const Vec* x;
    double eps;
    std::size_t n_params() const { return 0; }
    Vec consistency(std::span<const double> x_t, double t, std::span<const double> y) const {
        return ei_ode_step(*spec, t, eps, x_t, y, *x);
    }
    template <class G>
    Vec consistency_backward(std::span<const double> x_t, double t, std::span<const double> y, G&&,
                             std::span<double>) const {
        return consistency(x_t, t, y);
    }
};

struct ConstantPredictor {
    Vec value;
    std::size_t n_params() const { return 0; }
    Vec data_pred(std::span<const double>, double, std::span<const double>) const { return value; }
    template <class G>
    Vec data_pred_backward(std::span<const double>, double, std::span<const double>, G&&, std::span<double>) const {
        return value;
    }
};

struct IdentityInX {
    std::size_t n_params() const { return 0; }
    Vec consistency(std::span<const double> x_t, double, std::span<const double>) const {
        return {x_t.begin(), x_t.end()};
    }
    template <class G>
    Vec consistency_backward(std::span<const double> x_t, double t, std::span<const double> y, G&&,
                             std::span<double>) const {
        return consistency(x_t, t, y);
    }
};

}  // namespace

TEST_CASE("constant-gap schedule", "[train][schedule]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    const TrainingSchedule s(ConstantGap{0.1}, spec, 1e-4, 1e-3);
    Stream rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double t = s.sample_t(rng);
        const double r = s.r(t, 0);
        REQUIRE(t > 1e-4);
        REQUIRE(t <= 1.0 - 1e-3);
        REQUIRE(r >= 1e-4);
        REQUIRE(r < t);
        REQUIRE(t - r == Approx(std::min(0.1, t - 1e-4)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(s.r(1e-4, 0), std::invalid_argument);
    CHECK_THROWS_AS(TrainingSchedule(ConstantGap{0.0}, spec, 1e-4, 1e-3), std::invalid_argument);
}

TEST_CASE("constant gap scales with the horizon", "[train][schedule]") {
    const auto ve = ScheduleSpec::from_id("ddbm-ve");
    const TrainingSchedule s(ConstantGap{0.1}, ve, 1e-4 * 80, 1e-3 * 80);
    CHECK(s.r(40.0, 0) == Approx(32.0).epsilon(1e-14));
}

TEST_CASE("sigmoid schedule", "[train][schedule]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    const SigmoidGap g{2.0, 100.0, 8.0, 10.0, 0.1, 0.01};
    const TrainingSchedule s(g, spec, 1e-4, 1e-3);
    SECTION("first stage clamps to the largest gap") {
        CHECK(s.gap_factor(99) == 0.0);
        CHECK(s.r(0.5, 0) == Approx(0.4).epsilon(1e-14));
        CHECK(s.r(0.05, 50) == 1e-4);
    }
    SECTION("later stages follow the sigmoid inside the clamp") {
        CHECK(s.gap_factor(100) == 0.5);
        const double t = 0.9;
        const double raw = t * (1.0 - 1.0 / 16.0) * (1.0 + 8.0 / (1.0 + std::exp(10.0 * t)));
        CHECK(s.r(t, 400) == Approx(raw).epsilon(1e-14));
        CHECK(t - raw > 0.01);
        CHECK(t - raw < 0.1);
        // late stages shrink the gap to its minimum
        CHECK(s.r(t, 100000) == Approx(t - 0.01).epsilon(1e-14));
    }
    SECTION("eps <= r < t everywhere") {
        Stream rng(2);
        for (int i = 0; i < 10000; ++i) {
            const double t = s.sample_t(rng);
            const auto iters = static_cast<std::size_t>(rng.uniform(0.0, 2000.0));
            const double r = s.r(t, iters);
            REQUIRE(r >= 1e-4);
            REQUIRE(r < t);
            REQUIRE(t - r <= 0.1 + 1e-15);
        }
    }
    SECTION("invalid parameters") {
        CHECK_THROWS_AS(TrainingSchedule(SigmoidGap{1.0, 100, 8, 10, 0.1, 0.01}, spec, 1e-4, 1e-3),
                        std::invalid_argument);
        CHECK_THROWS_AS(TrainingSchedule(SigmoidGap{2.0, 100, 8, 10, 0.01, 0.1}, spec, 1e-4, 1e-3),
                        std::invalid_argument);
    }
}

TEST_CASE("metrics", "[train]") {
    const Vec u{0.3, -1.2}, v{1.0, 0.4};
    for (const Metric m : {Metric::squared_l2(), Metric::pseudo_huber(2)}) {
        CHECK(m.value(u, u) == 0.0);
        CHECK(m.value(u, v) > 0.0);
        const Vec g = m.grad(u, v);
        for (std::size_t i = 0; i < 2; ++i) {
            auto f = [&](double s) {
                Vec w = u;
                w[i] = s;
                return m.value(w, v);
            };
            CHECK(g[i] == Approx(oracle::central_diff(f, u[i], 1e-6)).epsilon(1e-7));
        }
    }
    CHECK(Metric::pseudo_huber(4).c == Approx(0.06).epsilon(1e-15));
}

TEST_CASE("perfect predictor has zero pretraining loss", "[train]") {
    const auto spec = ScheduleSpec::from_id("ddbm-vp");
    const TrainingSchedule s(ConstantGap{}, spec, 1e-4, 1e-3);
    Stream rng(3);
    auto fixed = [](Stream&) { return Coupling{{0.7}, {-0.2}}; };
    const auto batch = draw_batch(s, fixed, 64, rng, 0);
    const ConstantPredictor perfect{{0.7}};
    CHECK(dbsm_loss(spec, perfect, DbsmWeighting::Unit, batch, false).loss == 0.0);
    CHECK(dbsm_loss(spec, perfect, DbsmWeighting::SignalToNoise, batch, false).loss == 0.0);
}

TEST_CASE("distillation with a perfect predictor has zero loss on the brownian bridge", "[train]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    const double eps = 1e-4;
    for (double dt : {0.2, 0.05, 0.01}) {
        const TrainingSchedule s(ConstantGap{dt}, spec, eps, 1e-3);
        for (const auto& d : random_draws(s, 200, 4)) {
            const PerfectUniversal h{&spec, &d.x, eps};
            auto target = [&](std::span<const double> x, double t, std::span<const double> y) {
                return h.consistency(x, t, y);
            };
            auto teacher = [&](std::span<const double>, double, std::span<const double>) { return d.x; };
            const std::vector<TrainingDraw> one{d};
            const double cbd = cbd_loss(spec, h, target, teacher, LossWeighting::Unit, Metric::squared_l2(), one).loss;
            const double cbt = cbt_loss(spec, h, target, LossWeighting::Unit, Metric::squared_l2(), one).loss;
            REQUIRE(cbd < 1e-24);
            REQUIRE(cbt < 1e-24);
        }
    }
}

TEST_CASE("training loss with the identity map measures the bridge displacement", "[train]") {
    const auto spec = ScheduleSpec::from_id("ddbm-vp");
    const TrainingSchedule s(ConstantGap{1.0 / 120}, spec, 1e-4, 1e-3);
    const auto batch = random_draws(s, 50, 5);
    const IdentityInX h;
    auto target = [&](std::span<const double> x, double t, std::span<const double> y) { return h.consistency(x, t, y); };
    double want = 0.0;
    for (const auto& d : batch) {
        const double dx = sample_bridge_point(spec, d.t, {d.x, d.y}, d.z)[0] -
                          sample_bridge_point(spec, d.r, {d.x, d.y}, d.z)[0];
        want += dx * dx / (d.t - d.r);
    }
    want /= 50.0;
    const double got = cbt_loss(spec, h, target, LossWeighting::InverseGap, Metric::squared_l2(), batch).loss;
    CHECK(got == Approx(want).epsilon(1e-12));
    CHECK(got > 0.0);

    auto bad = batch;
    bad[3].r = bad[3].t;
    CHECK_THROWS_AS(cbt_loss(spec, h, target, LossWeighting::Unit, Metric::squared_l2(), bad), std::logic_error);
}

TEST_CASE("loss gradients match central differences", "[train][gradient]") {
    const auto spec = ScheduleSpec::from_id("bridge-tts-vp");
    for (const auto scheme : {PrecondScheme::Edm, PrecondScheme::I2sb, PrecondScheme::Universal}) {
        auto net = tiny_net(spec, scheme, 6);
        const BridgeNet frozen = net;  // stopgrad copy
        const BridgeNet teacher = tiny_net(spec, scheme, 7);
        const TrainingSchedule s(ConstantGap{0.1}, spec, net.t_min(), net.precondition().gamma);
        const auto batch = random_draws(s, 24, 8);
        auto target = [&](std::span<const double> x, double t, std::span<const double> y) {
            return frozen.consistency(x, t, y);
        };
        auto teach = [&](std::span<const double> x, double t, std::span<const double> y) {
            return teacher.data_pred(x, t, y);
        };
        INFO(to_string(scheme));
        SECTION("pretraining " + to_string(scheme)) {
            const auto lv = dbsm_loss(spec, net, DbsmWeighting::Unit, batch);
            CHECK(fd_gradient_error(net.params(), lv.grad, [&] {
                      return dbsm_loss(spec, net, DbsmWeighting::Unit, batch, false).loss;
                  }) < 1e-3);
        }
        SECTION("distillation " + to_string(scheme)) {
            const Metric m = Metric::pseudo_huber(1);
            const auto lv = cbd_loss(spec, net, target, teach, LossWeighting::InverseGap, m, batch);
            CHECK(fd_gradient_error(net.params(), lv.grad, [&] {
                      return cbd_loss(spec, net, target, teach, LossWeighting::InverseGap, m, batch, false).loss;
                  }) < 1e-3);
        }
        SECTION("consistency training " + to_string(scheme)) {
            const auto lv = cbt_loss(spec, net, target, LossWeighting::Unit, Metric::squared_l2(), batch);
            CHECK(fd_gradient_error(net.params(), lv.grad, [&] {
                      return cbt_loss(spec, net, target, LossWeighting::Unit, Metric::squared_l2(), batch, false).loss;
                  }) < 1e-3);
        }
    }
}

TEST_CASE("adam with zero learning rate leaves parameters bit-identical", "[train]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    auto net = tiny_net(spec, PrecondScheme::Edm, 9);
    const Vec before = net.params();
    const auto data = Dataset::from_id("gauss1d", {{"y_noise", 0.5}});
    TrainSettings st;
    st.steps = 20;
    st.batch = 16;
    st.lr = 0.0;
    const auto res = train(net, [&](Stream& r) { return data.sample(r); }, st);
    CHECK(res.steps_done == 20);
    CHECK(net.params() == before);
}

TEST_CASE("training is deterministic across thread counts", "[train]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    const auto data = Dataset::from_id("gauss1d", {{"y_noise", 0.5}});
    TrainSettings st;
    st.objective = Objective::Cbt;
    st.steps = 30;
    st.batch = 100;
    st.seed = 4;
    auto run = [&](const char* threads) {
        setenv("BRIDGEKIT_THREADS", threads, 1);
        auto net = tiny_net(spec, PrecondScheme::Universal, 10);
        std::vector<double> losses;
        train(net, [&](Stream& r) { return data.sample(r); }, st, nullptr,
              [&](const LogRecord& rec) { losses.push_back(rec.loss); });
        return std::pair{net.params(), losses};
    };
    const auto a = run("1");
    const auto b = run("3");
    unsetenv("BRIDGEKIT_THREADS");
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("divergence restores the last good parameters", "[train]") {
    const auto spec = ScheduleSpec::from_id("ddbm-ve");
    auto net = tiny_net(spec, PrecondScheme::I2sb, 11);
    const auto data = Dataset::from_id("gauss1d", {{"s0", 20.0}, {"y_noise", 10.0}});
    TrainSettings st;
    st.steps = 200;
    st.batch = 16;
    st.lr = 1e3;
    st.divergence_threshold = 1e4;
    const auto res = train(net, [&](Stream& r) { return data.sample(r); }, st);
    CHECK(res.diverged);
    CHECK(res.steps_done < 200);
    CHECK(all_finite(net.params()));
    CHECK(res.message.find("diverged at step") == 0);
}

TEST_CASE("distillation requires a teacher", "[train]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    auto net = tiny_net(spec, PrecondScheme::Edm, 12);
    TrainSettings st;
    st.objective = Objective::Cbd;
    auto pairs = [](Stream& r) { return Coupling{{r.normal()}, {0.0}}; };
    CHECK_THROWS_AS(train(net, pairs, st), std::invalid_argument);
}

TEST_CASE("pretraining on gaussian data recovers the oracle score", "[train][slow]") {
    const auto spec = ScheduleSpec::from_id("brownian");
    const auto data = Dataset::from_id("gauss1d", {{"mu0", 0.5}, {"s0", 0.8}, {"y0", 0.0}});
    const auto pairs = data.sample_n(2000, 13);
    BridgeNet net(spec, Precondition::make(spec, PrecondScheme::Edm, estimate_endpoint_stats(pairs)), 1, {32, 32});
    Stream init(14);
    net.init(init);
    TrainSettings st;
    st.steps = 5000;
    st.batch = 512;
    st.lr_schedule = LrSchedule::Cosine;
    st.seed = 15;
    const auto res = train(net, [&](Stream& r) { return data.sample(r); }, st);
    REQUIRE_FALSE(res.diverged);

    const auto oracle = *data.oracle_given(0.0);
    const double t = 0.5;
    const auto k = spec.coeffs(t);
    const double sd = std::sqrt(k.b * k.b * 0.64 + k.c * k.c);
    const double mean = k.b * 0.5;
    double worst = 0.0;
    for (int i = 0; i <= 60; ++i) {
        const Vec x{mean - 3 * sd + sd * i / 10.0};
        const Vec y{0.0};
        const double learned = score_from_data_pred(spec, t, x, y, net.data_pred(x, t, y))[0];
        worst = std::max(worst, std::abs(learned - oracle_posterior_score(oracle, spec, t, x, y)[0]));
    }
    INFO("max abs score error " << worst);
    CHECK(worst <= 0.05);
}
