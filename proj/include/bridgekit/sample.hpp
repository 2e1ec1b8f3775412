#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "solver.hpp"
#include "vec.hpp"

namespace bridgekit {

/**
 * Sampling times [T, t_2, ..., t_N, eps]. The consistency function is evaluated
 * at every entry but the last, so NFE = size - 1; the first evaluation uses
 * x_T = y at the clamped time T - gamma.
 */
struct TimestepPlan {
    std::vector<double> times;

    std::size_t nfe() const { return times.empty() ? 0 : times.size() - 1; }

    /// t_2 = T - gamma and the remaining evaluation times uniform down towards eps.
    static TimestepPlan uniform(const BridgeNet& net, std::size_t nfe) {
        return pinned_second(net, nfe, net.t_max());
    }

    /// t_2 fixed, the remaining evaluation times uniform on (eps, t_2).
    static TimestepPlan pinned_second(const BridgeNet& net, std::size_t nfe, double t2) {
        if (nfe < 2) throw std::invalid_argument("sampling plan needs at least 2 function evaluations");
        if (!(t2 > net.t_min() && t2 <= net.t_max()))
            throw std::invalid_argument("second timestep must lie in (eps, T - gamma]");
        TimestepPlan p;
        p.times.push_back(net.schedule().horizon());
        const std::size_t rest = nfe - 1;  // evaluations after the first
        for (std::size_t i = 0; i < rest; ++i)
            p.times.push_back(t2 - (t2 - net.t_min()) * static_cast<double>(i) / static_cast<double>(rest));
        p.times.push_back(net.t_min());
        p.validate(net);
        return p;
    }

    void validate(const BridgeNet& net) const {
        if (times.size() < 3) throw std::invalid_argument("sampling plan needs at least 2 function evaluations");
        if (times.front() != net.schedule().horizon()) throw std::invalid_argument("sampling plan must start at T");
        if (times.back() != net.t_min()) throw std::invalid_argument("sampling plan must end at eps");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] < times[i - 1])) throw std::invalid_argument("sampling plan must be strictly decreasing");
        if (times[1] > net.t_max()) throw std::invalid_argument("sampling plan: second time exceeds T - gamma");
    }

    bool operator==(const TimestepPlan&) const = default;
};

/// The noise drawn at each re-noising time; enough to regenerate a sample exactly.
struct TrajectoryTape {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    TimestepPlan plan;
    Vec y;
    struct Record {
        double t = 0.0;
        Vec z;
        bool operator==(const Record&) const = default;
    };
    std::vector<Record> records;

    bool operator==(const TrajectoryTape&) const = default;
};

struct SampleResult {
    Vec x;
    TrajectoryTape tape;
};

namespace detail {

template <class ConsistencyFn, class NoiseFn>
Vec run_plan(const ScheduleSpec& spec, ConsistencyFn&& h, double t_first, std::span<const double> y,
             const TimestepPlan& plan, NoiseFn&& noise, std::vector<TrajectoryTape::Record>* records) {
    if (!all_finite(y)) throw std::invalid_argument("sampling needs a finite y");
    Vec x0 = h(y, t_first, y);
    for (std::size_t i = 1; i + 1 < plan.times.size(); ++i) {
        const double t = plan.times[i];
        const Vec z = noise(i - 1, t);
        const Vec x_t = posterior_sde_step(spec, plan.times[i - 1], t, x0, y, z);
        x0 = h(x_t, t, y);
        if (!all_finite(x0))
            throw std::runtime_error("non-finite state after consistency step at t=" + std::to_string(t));
        if (records) records->push_back({t, z});
    }
    return x0;
}

template <class NoiseFn>
Vec run_plan(const BridgeNet& net, std::span<const double> y, const TimestepPlan& plan, NoiseFn&& noise,
             std::vector<TrajectoryTape::Record>* records) {
    plan.validate(net);
    require_same_dim(y.size(), net.dim(), "cdbm sample y");
    auto h = [&](std::span<const double> x, double t, std::span<const double> yy) { return net.consistency(x, t, yy); };
    return run_plan(net.schedule(), h, net.t_max(), y, plan, std::forward<NoiseFn>(noise), records);
}

}  // namespace detail

/// Alternating re-noising / consistency sampler. Noise comes from Stream(seed, stream).
inline SampleResult cdbm_sample(const BridgeNet& net, std::span<const double> y, const TimestepPlan& plan,
                                std::uint64_t seed, std::uint64_t stream = 0) {
    Stream rng(seed, stream);
    SampleResult out;
    out.tape.seed = seed;
    out.tape.stream = stream;
    out.tape.plan = plan;
    out.tape.y.assign(y.begin(), y.end());
    out.x = detail::run_plan(
        net, y, plan,
        [&](std::size_t, double) {
            Vec z(net.dim());
            rng.fill_normal(z);
            return z;
        },
        &out.tape.records);
    return out;
}

/**
 * The same alternating sampler around any consistency function `h(x, t, y)`,
 * for example an exact oracle. The first evaluation sees x_T = y at `t_first`.
 */
template <class ConsistencyFn>
Vec cdbm_sample_with(const ScheduleSpec& spec, ConsistencyFn&& h, double t_first, std::span<const double> y,
                     const TimestepPlan& plan, Stream& rng) {
    return detail::run_plan(
        spec, std::forward<ConsistencyFn>(h), t_first, y, plan,
        [&](std::size_t, double) {
            Vec z(y.size());
            rng.fill_normal(z);
            return z;
        },
        nullptr);
}

/// Regenerates a sample from its tape without touching any RNG.
inline Vec replay(const BridgeNet& net, const TrajectoryTape& tape) {
    if (tape.records.size() + 2 != tape.plan.times.size())
        throw std::invalid_argument("tape has " + std::to_string(tape.records.size()) + " records for a plan of " +
                                    std::to_string(tape.plan.times.size()) + " times");
    return detail::run_plan(
        net, tape.y, tape.plan,
        [&](std::size_t i, double t) {
            if (tape.records[i].t != t) throw std::invalid_argument("tape record time does not match plan");
            require_same_dim(tape.records[i].z.size(), net.dim(), "tape noise");
            return tape.records[i].z;
        },
        nullptr);
}

/**
 * Spherical interpolation of directions with the norm interpolated linearly.
 * Exact at w = 0 and w = 1, and bounded by the larger norm even when a and b
 * are nearly antiparallel with different lengths.
 */
inline Vec slerp(std::span<const double> a, std::span<const double> b, double w) {
    require_same_dim(a.size(), b.size(), "slerp");
    if (w == 0.0) return {a.begin(), a.end()};
    if (w == 1.0) return {b.begin(), b.end()};
    const double na = std::sqrt(squared_norm(a)), nb = std::sqrt(squared_norm(b));
    if (na == 0.0 || nb == 0.0) return combine(1.0 - w, a, w, b, 0.0, a);
    const Vec diff = combine(1.0 / na, a, -1.0 / nb, b, 0.0, a), sum = combine(1.0 / na, a, 1.0 / nb, b, 0.0, a);
    const double theta = 2.0 * std::atan2(std::sqrt(squared_norm(diff)), std::sqrt(squared_norm(sum)));
    const double s = std::sin(theta);
    const double norm = (1.0 - w) * na + w * nb;
    Vec dir;
    if (s > 1e-12) {
        dir = combine(std::sin((1.0 - w) * theta) / (s * na), a, std::sin(w * theta) / (s * nb), b, 0.0, a);
    } else if (theta < 1.0) {
        dir = combine(1.0 / na, a, 0.0, b, 0.0, a);
    } else if (a.size() == 1) {
        return combine(1.0 - w, a, w, b, 0.0, a);
    } else {
        // Antiparallel: rotate towards the coordinate axis least aligned with a.
        std::size_t k = 0;
        for (std::size_t i = 1; i < a.size(); ++i)
            if (std::abs(a[i]) < std::abs(a[k])) k = i;
        Vec perp(a.size(), 0.0);
        perp[k] = 1.0;
        const double proj = a[k] / (na * na);
        for (std::size_t i = 0; i < a.size(); ++i) perp[i] -= proj * a[i];
        const double np = std::sqrt(squared_norm(perp));
        const double phi = w * std::numbers::pi;
        dir = combine(std::cos(phi) / na, a, std::sin(phi) / np, perp, 0.0, a);
    }
    const double scale = norm / std::sqrt(squared_norm(dir));
    for (double& v : dir) v *= scale;
    return dir;
}

/// Samples along the slerp path between the noises of two tapes.
inline std::vector<Vec> interpolate(const BridgeNet& net, const TrajectoryTape& a, const TrajectoryTape& b,
                                    std::span<const double> weights) {
    if (!(a.plan == b.plan)) throw std::invalid_argument("interpolate: tapes use different plans");
    if (a.y != b.y) throw std::invalid_argument("interpolate: tapes use different y");
    if (a.records.size() != b.records.size()) throw std::invalid_argument("interpolate: tape lengths differ");
    std::vector<Vec> out;
    out.reserve(weights.size());
    for (double w : weights) {
        if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("interpolation weight outside [0, 1]");
        TrajectoryTape mixed = a;
        for (std::size_t i = 0; i < mixed.records.size(); ++i)
            mixed.records[i].z = slerp(a.records[i].z, b.records[i].z, w);
        out.push_back(replay(net, mixed));
    }
    return out;
}

enum class OdeSolver { Ei, Euler };

inline std::string to_string(OdeSolver s) { return s == OdeSolver::Ei ? "ei" : "euler"; }

/**
 * Integrates the bridge probability-flow ODE from t_start down to t_end in
 * n_steps uniform steps. `pred(x, t, y)` is the data predictor.
 */
template <class Pred>
Vec ode_integrate(const ScheduleSpec& spec, Pred&& pred, std::span<const double> x_start,
                  std::span<const double> y, double t_start, double t_end, std::size_t n_steps, OdeSolver solver) {
    if (n_steps == 0) throw std::invalid_argument("ode_integrate needs at least one step");
    if (!(t_end < t_start)) throw std::invalid_argument("ode_integrate runs backwards in time (t_end < t_start)");
    Vec x(x_start.begin(), x_start.end());
    const double h = (t_start - t_end) / static_cast<double>(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) {
        const double t = i == 0 ? t_start : t_start - h * static_cast<double>(i);
        const double r = i + 1 == n_steps ? t_end : t_start - h * static_cast<double>(i + 1);
        const Vec x_pred = pred(x, t, y);
        x = solver == OdeSolver::Ei ? ei_ode_step(spec, t, r, x, y, x_pred) : euler_ode_step(spec, t, r, x, y, x_pred);
        if (!all_finite(x)) throw std::runtime_error("non-finite ODE state at t=" + std::to_string(r));
    }
    return x;
}

/**
 * Baseline sampler: one posterior step from T to T - gamma around the data
 * prediction at x_T = y, then n_steps ODE steps to eps. NFE = n_steps + 1.
 */
inline Vec ode_sample(const BridgeNet& net, std::span<const double> y, std::size_t n_steps, OdeSolver solver,
                      std::span<const double> init_noise) {
    require_same_dim(init_noise.size(), net.dim(), "ode_sample noise");
    const ScheduleSpec& spec = net.schedule();
    const Vec x0 = net.data_pred(y, net.t_max(), y);
    const Vec x_start = posterior_sde_step(spec, spec.horizon(), net.t_max(), x0, y, init_noise);
    auto pred = [&](std::span<const double> x, double t, std::span<const double> yy) { return net.data_pred(x, t, yy); };
    return ode_integrate(spec, pred, x_start, y, net.t_max(), net.t_min(), n_steps, solver);
}

/// Which sampler to run over a batch of conditions.
struct SamplerChoice {
    enum class Kind { Consistency, Ode };
    Kind kind = Kind::Consistency;
    std::size_t nfe = 2;       // consistency sampler
    double second_time = -1;   // consistency sampler; negative means T - gamma
    std::size_t ode_steps = 100;
    OdeSolver solver = OdeSolver::Ei;
};

/// Samples one output per condition; condition j uses stream j of `seed`.
inline std::vector<Vec> sample_batch(const BridgeNet& net, const std::vector<Vec>& ys, const SamplerChoice& choice,
                                     std::uint64_t seed, std::vector<TrajectoryTape>* tapes = nullptr) {
    std::vector<Vec> out(ys.size());
    if (tapes) tapes->assign(ys.size(), {});
    TimestepPlan plan;
    if (choice.kind == SamplerChoice::Kind::Consistency)
        plan = choice.second_time < 0 ? TimestepPlan::uniform(net, choice.nfe)
                                      : TimestepPlan::pinned_second(net, choice.nfe, choice.second_time);
    parallel_for(ys.size(), [&](std::size_t j) {
        if (choice.kind == SamplerChoice::Kind::Consistency) {
            auto res = cdbm_sample(net, ys[j], plan, seed, j);
            out[j] = std::move(res.x);
            if (tapes) (*tapes)[j] = std::move(res.tape);
        } else {
            Stream rng(seed, j);
            Vec z(net.dim());
            rng.fill_normal(z);
            out[j] = ode_sample(net, ys[j], choice.ode_steps, choice.solver, z);
        }
    });
    return out;
}

}  // namespace bridgekit
