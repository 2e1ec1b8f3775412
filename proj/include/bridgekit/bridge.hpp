#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "vec.hpp"

namespace bridgekit {

/// A coupled pair (x_0, x_T) = (x, y).
struct Coupling {
    Vec x;
    Vec y;
};

/**
 * Ground truth for a componentwise Gaussian posterior x_0 | y ~ N(mu0, s0^2 I).
 * Under it the bridge marginal given y is N(a y + b mu0, (b^2 s0^2 + c^2) I),
 * which gives closed-form scores and posterior means.
 */
struct GaussianCouplingOracle {
    Vec mu0;
    double s0 = 1.0;

    GaussianCouplingOracle() = default;
    GaussianCouplingOracle(Vec mean, double stddev) : mu0(std::move(mean)), s0(stddev) {
        if (!(s0 > 0.0)) throw std::invalid_argument("oracle s0 must be positive");
    }
    std::size_t dim() const { return mu0.size(); }
};

inline Vec sample_bridge_point(const ScheduleSpec& spec, double t, const Coupling& pair,
                               std::span<const double> z) {
    require_same_dim(pair.x.size(), pair.y.size(), "sample_bridge_point");
    require_same_dim(pair.x.size(), z.size(), "sample_bridge_point");
    const BridgeCoeffs k = spec.coeffs(t);
    return combine(k.a, pair.y, k.b, pair.x, k.c, z);
}

/// Score of q_{t|0T} with x_0 replaced by a data prediction.
inline Vec score_from_data_pred(const ScheduleSpec& spec, double t, std::span<const double> x_t,
                                std::span<const double> y, std::span<const double> x_pred) {
    require_same_dim(x_t.size(), y.size(), "score_from_data_pred");
    require_same_dim(x_t.size(), x_pred.size(), "score_from_data_pred");
    const BridgeCoeffs k = spec.coeffs(t);
    if (!(k.c > 0.0)) throw std::domain_error("score undefined at a pinned endpoint (c_t = 0)");
    const double var = k.c * k.c;
    Vec s(x_t.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = -(x_t[i] - k.a * y[i] - k.b * x_pred[i]) / var;
    return s;
}

inline Vec data_pred_from_score(const ScheduleSpec& spec, double t, std::span<const double> x_t,
                                std::span<const double> y, std::span<const double> score) {
    require_same_dim(x_t.size(), y.size(), "data_pred_from_score");
    require_same_dim(x_t.size(), score.size(), "data_pred_from_score");
    const BridgeCoeffs k = spec.coeffs(t);
    if (!(k.c > 0.0)) throw std::domain_error("score undefined at a pinned endpoint (c_t = 0)");
    const double var = k.c * k.c;
    Vec x(x_t.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x_t[i] - k.a * y[i] + var * score[i]) / k.b;
    return x;
}

inline Vec oracle_posterior_score(const GaussianCouplingOracle& oracle, const ScheduleSpec& spec,
                                  double t, std::span<const double> x_t, std::span<const double> y) {
    require_same_dim(x_t.size(), y.size(), "oracle_posterior_score");
    require_same_dim(x_t.size(), oracle.dim(), "oracle_posterior_score");
    const double T = spec.horizon();
    if (!(t > 0.0 && t < T)) throw std::out_of_range("oracle score needs 0 < t < T");
    const BridgeCoeffs k = spec.coeffs(t);
    const double var = k.b * k.b * oracle.s0 * oracle.s0 + k.c * k.c;
    Vec s(x_t.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = -(x_t[i] - k.a * y[i] - k.b * oracle.mu0[i]) / var;
    return s;
}

/// Posterior mean E[x_0 | x_t, y] under the oracle; the data-prediction form of its score.
inline Vec oracle_data_pred(const GaussianCouplingOracle& oracle, const ScheduleSpec& spec, double t,
                            std::span<const double> x_t, std::span<const double> y) {
    require_same_dim(x_t.size(), y.size(), "oracle_data_pred");
    require_same_dim(x_t.size(), oracle.dim(), "oracle_data_pred");
    const BridgeCoeffs k = spec.coeffs(t);
    const double prior = oracle.s0 * oracle.s0;
    const double var = k.b * k.b * prior + k.c * k.c;
    Vec x(x_t.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double resid = x_t[i] - k.a * y[i] - k.b * oracle.mu0[i];
        x[i] = oracle.mu0[i] + k.b * prior / var * resid;
    }
    return x;
}

struct ForwardPath {
    std::vector<double> times;
    std::vector<Vec> states;
};

/// Default stopping distance from the pinned endpoint for forward simulation.
inline double default_gamma_sim(const ScheduleSpec& spec) { return 1e-3 * spec.horizon(); }

/**
 * Euler-Maruyama for the h-transformed forward process
 *   dx = [f x - g^2 (x - abar y) / (alpha^2 rho_bar^2)] dt + g dW
 * on a uniform grid over [0, T - gamma_sim].
 */
inline ForwardPath simulate_forward_sde(const ScheduleSpec& spec, const Coupling& pair,
                                        std::size_t n_steps, Stream& rng, double gamma_sim = -1.0) {
    require_same_dim(pair.x.size(), pair.y.size(), "simulate_forward_sde");
    if (n_steps < 2) throw std::invalid_argument("simulate_forward_sde: too few steps (need >= 2)");
    if (gamma_sim < 0.0) gamma_sim = default_gamma_sim(spec);
    const double T = spec.horizon();
    if (!(gamma_sim > 0.0 && gamma_sim < T)) throw std::invalid_argument("gamma_sim must be in (0, T)");
    const double t_end = T - gamma_sim;
    const double dt = t_end / static_cast<double>(n_steps);
    const std::size_t d = pair.x.size();

    ForwardPath path;
    path.times.reserve(n_steps + 1);
    path.states.reserve(n_steps + 1);
    Vec x = pair.x;
    path.times.push_back(0.0);
    path.states.push_back(x);
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = dt * static_cast<double>(k);
        const ScheduleEval e = spec.eval(t);
        const double pull = e.diffusion2 / (e.alpha * e.alpha * e.rho_bar2);
        const double noise_scale = std::sqrt(e.diffusion2 * dt);
        for (std::size_t i = 0; i < d; ++i) {
            const double drift = e.drift * x[i] - pull * (x[i] - e.alpha_bar * pair.y[i]);
            x[i] += drift * dt + noise_scale * rng.normal();
        }
        if (!all_finite(x)) {
            throw std::runtime_error("simulate_forward_sde: non-finite state at step " + std::to_string(k + 1));
        }
        path.times.push_back(k + 1 == n_steps ? t_end : dt * static_cast<double>(k + 1));
        path.states.push_back(x);
    }
    return path;
}

/// Per-time sample moments of a batch of forward paths.
struct MomentRow {
    double t = 0.0;
    Vec mean;
    Vec var;  // unbiased
    std::size_t n = 0;
};

/**
 * Simulates n_paths forward paths (path i uses Stream(seed, i)) and returns
 * moments at the grid indices in `probe_steps`.
 */
inline std::vector<MomentRow> forward_sde_moments(const ScheduleSpec& spec, const Coupling& pair,
                                                  std::size_t n_steps, std::size_t n_paths,
                                                  std::uint64_t seed,
                                                  const std::vector<std::size_t>& probe_steps,
                                                  double gamma_sim = -1.0) {
    if (n_paths < 2) throw std::invalid_argument("forward_sde_moments: need >= 2 paths");
    for (std::size_t s : probe_steps)
        if (s > n_steps) throw std::out_of_range("probe step beyond grid");
    const std::size_t d = pair.x.size();
    const std::size_t probes = probe_steps.size();
    std::vector<double> values(n_paths * probes * d);
    std::vector<double> times(probes);
    parallel_for(n_paths, [&](std::size_t p) {
        Stream rng(seed, p);
        const ForwardPath path = simulate_forward_sde(spec, pair, n_steps, rng, gamma_sim);
        for (std::size_t j = 0; j < probes; ++j) {
            const Vec& x = path.states[probe_steps[j]];
            for (std::size_t i = 0; i < d; ++i) values[(p * probes + j) * d + i] = x[i];
            if (p == 0) times[j] = path.times[probe_steps[j]];
        }
    });
    std::vector<MomentRow> rows(probes);
    for (std::size_t j = 0; j < probes; ++j) {
        MomentRow& row = rows[j];
        row.t = times[j];
        row.n = n_paths;
        row.mean.assign(d, 0.0);
        row.var.assign(d, 0.0);
        for (std::size_t p = 0; p < n_paths; ++p)
            for (std::size_t i = 0; i < d; ++i) row.mean[i] += values[(p * probes + j) * d + i];
        for (double& m : row.mean) m /= static_cast<double>(n_paths);
        for (std::size_t p = 0; p < n_paths; ++p)
            for (std::size_t i = 0; i < d; ++i) {
                const double dev = values[(p * probes + j) * d + i] - row.mean[i];
                row.var[i] += dev * dev;
            }
        for (double& v : row.var) v /= static_cast<double>(n_paths - 1);
    }
    return rows;
}

}  // namespace bridgekit
