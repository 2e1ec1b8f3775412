#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bridge.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sample.hpp"
#include "schedule.hpp"
#include "solver.hpp"
#include "train.hpp"
#include "vec.hpp"

namespace bridgekit {

using Cloud = std::vector<Vec>;

struct MetricReport {
    std::string metric;
    double value = 0.0;
    std::size_t n_samples = 0;
    std::size_t n_projections = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::size_t cloud_dim(const Cloud& a, const Cloud& b, const char* what) {
    if (a.empty() || b.empty()) throw std::invalid_argument(std::string(what) + ": empty cloud");
    const std::size_t d = a.front().size();
    for (const auto* c : {&a, &b})
        for (const Vec& p : *c) require_same_dim(p.size(), d, what);
    return d;
}

/// Exact W2 between two empirical 1D distributions via their quantile functions.
inline double w2_sorted(std::span<const double> u, std::span<const double> v) {
    const double nu = static_cast<double>(u.size()), nv = static_cast<double>(v.size());
    std::size_t i = 0, j = 0;
    double level = 0.0, acc = 0.0;
    while (i < u.size() && j < v.size()) {
        const double next_u = static_cast<double>(i + 1) / nu, next_v = static_cast<double>(j + 1) / nv;
        const double next = std::min(next_u, next_v);
        const double diff = u[i] - v[j];
        acc += (next - level) * diff * diff;
        level = next;
        if (next_u <= next) ++i;
        if (next_v <= next) ++j;
    }
    return std::sqrt(std::max(acc, 0.0));
}

/// Gram-Schmidt on a Gaussian matrix: a Haar-random orthonormal frame.
inline std::vector<Vec> random_frame(std::size_t d, Stream& rng) {
    std::vector<Vec> frame;
    while (frame.size() < d) {
        Vec v(d);
        rng.fill_normal(v);
        for (const Vec& u : frame) {
            const double p = dot(v, u);
            for (std::size_t i = 0; i < d; ++i) v[i] -= p * u[i];
        }
        const double norm = std::sqrt(squared_norm(v));
        if (norm < 1e-12) continue;
        for (double& x : v) x /= norm;
        frame.push_back(std::move(v));
    }
    return frame;
}

}  // namespace detail

/**
 * Mean over random unit directions of the 1D W2 distance between the
 * projected clouds. Directions come in random orthonormal frames of `dim`
 * vectors (each uniform on the sphere); frame f is drawn from Stream(seed, f).
 */
inline double sliced_wasserstein2(const Cloud& a, const Cloud& b, std::size_t n_projections = 256,
                                  std::uint64_t seed = 0) {
    const std::size_t d = detail::cloud_dim(a, b, "sliced_wasserstein2");
    if (n_projections == 0) throw std::invalid_argument("sliced_wasserstein2 needs at least one projection");
    const std::size_t frames = (n_projections + d - 1) / d;
    std::vector<double> per(frames * d, 0.0);
    parallel_for(frames, [&](std::size_t f) {
        Stream rng(seed, f);
        const auto frame = detail::random_frame(d, rng);
        std::vector<double> pa(a.size()), pb(b.size());
        for (std::size_t k = 0; k < d && f * d + k < n_projections; ++k) {
            for (std::size_t i = 0; i < a.size(); ++i) pa[i] = dot(a[i], frame[k]);
            for (std::size_t i = 0; i < b.size(); ++i) pb[i] = dot(b[i], frame[k]);
            std::sort(pa.begin(), pa.end());
            std::sort(pb.begin(), pb.end());
            per[f * d + k] = detail::w2_sorted(pa, pb);
        }
    });
    double s = 0.0;
    for (double v : per) s += v;
    return s / static_cast<double>(n_projections);
}

/// V-statistic energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|; zero for identical clouds.
inline double energy_distance(const Cloud& a, const Cloud& b) {
    detail::cloud_dim(a, b, "energy_distance");
    auto mean_dist = [](const Cloud& p, const Cloud& q) {
        std::vector<double> rows(p.size());
        parallel_for(p.size(), [&](std::size_t i) {
            double s = 0.0;
            for (const Vec& v : q) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < v.size(); ++k) d2 += (p[i][k] - v[k]) * (p[i][k] - v[k]);
                s += std::sqrt(d2);
            }
            rows[i] = s;
        });
        double s = 0.0;
        for (double r : rows) s += r;
        return s / (static_cast<double>(p.size()) * static_cast<double>(q.size()));
    };
    return std::max(0.0, 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b));
}

inline MetricReport sliced_w2_report(const Cloud& a, const Cloud& b, std::size_t n_projections, std::uint64_t seed) {
    return {"sliced_w2", sliced_wasserstein2(a, b, n_projections, seed), std::min(a.size(), b.size()), n_projections,
            seed};
}

inline MetricReport energy_report(const Cloud& a, const Cloud& b) {
    return {"energy", energy_distance(a, b), std::min(a.size(), b.size()), 0, 0};
}

// Solver convergence order on the Gaussian-coupling problem.

/**
 * 1D bridge with x_0 ~ N(mu0, s0^2) and y pinned. With the posterior-mean data
 * prediction the probability-flow ODE is affine and carries the marginal
 * N(m_t, v_t), m_t = a_t y + b_t mu0, v_t = b_t^2 s0^2 + c_t^2, to N(m_s, v_s).
 */
struct ConvergenceProblem {
    ScheduleSpec spec = ScheduleSpec::from_id("brownian");
    double mu0 = 0.5;
    double s0 = 0.8;
    double y = 1.0;
    double t_start = 0.9;
    double t_end = 0.1;
    std::vector<double> start_z{-2.0, -1.0, 0.0, 1.0, 2.0};  // starts at m_t + z sqrt(v_t)

    double marginal_mean(double t) const {
        const auto k = spec.coeffs(t);
        return k.a * y + k.b * mu0;
    }
    double marginal_sd(double t) const {
        const auto k = spec.coeffs(t);
        return std::sqrt(k.b * k.b * s0 * s0 + k.c * k.c);
    }
    double exact_flow(double x) const {
        return marginal_mean(t_end) + marginal_sd(t_end) / marginal_sd(t_start) * (x - marginal_mean(t_start));
    }
    double integrate(double x, std::size_t n_steps, OdeSolver solver) const;
};

inline double ConvergenceProblem::integrate(double x, std::size_t n_steps, OdeSolver solver) const {
    const GaussianCouplingOracle oracle(Vec{mu0}, s0);
    const Vec yy{y};
    Vec state{x};
    const double h = (t_start - t_end) / static_cast<double>(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) {
        const double t = t_start - h * static_cast<double>(i);
        const double r = i + 1 == n_steps ? t_end : t_start - h * static_cast<double>(i + 1);
        const Vec pred = oracle_data_pred(oracle, spec, t, state, yy);
        state = solver == OdeSolver::Ei ? ei_ode_step(spec, t, r, state, yy, pred)
                                        : euler_ode_step(spec, t, r, state, yy, pred);
    }
    return state[0];
}

struct ConvergenceReport {
    std::vector<std::size_t> steps;
    std::vector<double> errors;   // mean absolute endpoint error against the exact flow
    double slope = 0.0;           // least-squares slope of log error against log(1/N)
    double reference_gap = 0.0;   // |fine-grid EI - exact flow|, worst start
    bool floor_reached = false;   // some error is within 10x of the reference gap
};

inline constexpr std::size_t kReferenceSubsteps = std::size_t{1} << 14;

inline ConvergenceReport convergence_order(const ConvergenceProblem& problem, OdeSolver solver,
                                           std::span<const std::size_t> steps) {
    if (steps.size() < 2) throw std::invalid_argument("convergence_order needs at least two step counts");
    if (!(problem.t_end < problem.t_start)) throw std::invalid_argument("convergence problem must run backwards");
    std::vector<double> starts;
    for (double z : problem.start_z)
        starts.push_back(problem.marginal_mean(problem.t_start) + z * problem.marginal_sd(problem.t_start));
    if (starts.empty()) throw std::invalid_argument("convergence problem has no start points");

    ConvergenceReport rep;
    for (double x : starts)
        rep.reference_gap = std::max(rep.reference_gap, std::abs(problem.integrate(x, kReferenceSubsteps, OdeSolver::Ei) -
                                                                 problem.exact_flow(x)));
    rep.steps.assign(steps.begin(), steps.end());
    rep.errors.resize(steps.size());
    parallel_for(steps.size(), [&](std::size_t i) {
        if (steps[i] == 0) throw std::invalid_argument("convergence_order: step count must be positive");
        double e = 0.0;
        for (double x : starts) e += std::abs(problem.integrate(x, steps[i], solver) - problem.exact_flow(x));
        rep.errors[i] = e / static_cast<double>(starts.size());
    });

    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!(rep.errors[i] > 0.0)) throw std::runtime_error("convergence_order: zero error, slope undefined");
        rep.floor_reached = rep.floor_reached || rep.errors[i] < 10.0 * rep.reference_gap;
        const double lx = -std::log(static_cast<double>(steps[i])), ly = std::log(rep.errors[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    rep.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return rep;
}

// Loss gap between distillation and training at a fixed parameter.

struct GapRow {
    double dt = 0.0;
    double cbd = 0.0;
    double cbt = 0.0;
    double gap = 0.0;
    double ratio = 0.0;  // gap / dt
};

/**
 * Evaluates L_CBD and L_CBT at fixed parameters on one common batch: every
 * rung reuses the same (x, y, z, t) and only r = max(t - dt T, eps) changes.
 * `teacher(x, t, y)` is the data prediction used for the distillation step.
 */
template <class Model, class Teacher, class Sampler>
std::vector<GapRow> prop3_gap_ladder(const ScheduleSpec& spec, const Model& model, const Teacher& teacher,
                                     Sampler&& sample_pair, std::span<const double> dts, std::size_t n,
                                     std::uint64_t seed, double eps, double gamma,
                                     const Metric& metric = Metric::squared_l2()) {
    if (dts.empty()) throw std::invalid_argument("prop3_gap_ladder needs at least one gap");
    TrainingSchedule base(ConstantGap{dts.front()}, spec, eps, gamma);
    Stream rng(seed, 3);
    const auto common = draw_batch(base, sample_pair, n, rng, 0);
    auto target = [&](std::span<const double> x, double t, std::span<const double> y) {
        return model.consistency(x, t, y);
    };
    std::vector<GapRow> rows;
    for (double dt : dts) {
        const TrainingSchedule sched(ConstantGap{dt}, spec, eps, gamma);
        auto batch = common;
        for (auto& d : batch) d.r = sched.r(d.t, 0);
        GapRow row;
        row.dt = dt;
        row.cbd = cbd_loss(spec, model, target, teacher, LossWeighting::Unit, metric, batch, false).loss;
        row.cbt = cbt_loss(spec, model, target, LossWeighting::Unit, metric, batch, false).loss;
        row.gap = std::abs(row.cbd - row.cbt);
        row.ratio = row.gap / dt;
        rows.push_back(row);
    }
    return rows;
}

inline bool strictly_decreasing_ratios(std::span<const GapRow> rows) {
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (!(rows[i].ratio < rows[i - 1].ratio)) return false;
    return true;
}

// Marginal preservation of the reverse-SDE-then-ODE hybrid on the unit Brownian bridge.

struct MarginalRow {
    double s = 0.0;
    double mean = 0.0;
    double var = 0.0;
    double mean_z = 0.0;
    double var_z = 0.0;
};

enum class HybridStart {
    SdeSkip,     // exact reverse SDE from 1 down to 1 - gamma, then the ODE
    PinnedOde,   // ODE straight from the pinned point at t = 1
};

/**
 * Simulates n paths with x_1 = x1 and data endpoint x0. Grid times at or above
 * 1 - gamma are reached by exact reverse-SDE transitions, the rest by
 * exponential-integrator steps with the data prediction fixed at x0 (exact for
 * this problem). Scores compare each grid marginal with N((1-s)x0 + s x1, s(1-s)).
 */
inline std::vector<MarginalRow> marginal_preservation_test(double x0, double x1, double gamma,
                                                           std::vector<double> s_grid, std::size_t n,
                                                           std::uint64_t seed,
                                                           HybridStart start = HybridStart::SdeSkip) {
    const ScheduleSpec spec = ScheduleSpec::from_id("brownian");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("marginal test: gamma must lie in (0, 1]");
    if (n < 2) throw std::invalid_argument("marginal test needs at least two paths");
    std::sort(s_grid.begin(), s_grid.end(), std::greater<>());
    for (double s : s_grid)
        if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("marginal test: grid times must lie in (0, 1)");
    const double switch_t = 1.0 - gamma;
    // The pinned control starts a hair below 1, where the ODE coefficients are finite.
    const double pinned_t = 1.0 - 1e-9;

    std::vector<std::vector<double>> xs(s_grid.size(), std::vector<double>(n));
    parallel_for(n, [&](std::size_t p) {
        Stream rng(seed, p);
        const Vec y{x1}, pred{x0};
        double t = start == HybridStart::SdeSkip ? 1.0 : pinned_t;
        double x = x1;
        for (std::size_t g = 0; g < s_grid.size(); ++g) {
            const double s = s_grid[g];
            if (start == HybridStart::SdeSkip && s >= switch_t) {
                x = brownian_oracle_reverse_sde(spec, t, s, x, x0, rng);
            } else {
                if (start == HybridStart::SdeSkip && t > switch_t) {
                    if (switch_t > 0.0) x = brownian_oracle_reverse_sde(spec, t, switch_t, x, x0, rng);
                    t = switch_t;
                }
                x = ei_ode_step(spec, t, s, Vec{x}, y, pred)[0];
            }
            t = s;
            xs[g][p] = x;
        }
    });

    std::vector<MarginalRow> rows;
    const double nn = static_cast<double>(n);
    for (std::size_t g = 0; g < s_grid.size(); ++g) {
        MarginalRow row;
        row.s = s_grid[g];
        const double mu = (1.0 - row.s) * x0 + row.s * x1, var = row.s * (1.0 - row.s);
        double m = 0.0;
        for (double v : xs[g]) m += v;
        m /= nn;
        double ss = 0.0;
        for (double v : xs[g]) ss += (v - m) * (v - m);
        row.mean = m;
        row.var = ss / (nn - 1.0);
        row.mean_z = (m - mu) / std::sqrt(var / nn);
        row.var_z = (row.var - var) / (var * std::sqrt(2.0 / (nn - 1.0)));
        rows.push_back(row);
    }
    return rows;
}

inline bool marginals_pass(std::span<const MarginalRow> rows, double z_max = 4.0) {
    for (const auto& r : rows)
        if (!(std::abs(r.mean_z) < z_max && std::abs(r.var_z) < z_max)) return false;
    return true;
}

}  // namespace bridgekit
