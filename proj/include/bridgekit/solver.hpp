#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>

#include "rng.hpp"
#include "schedule.hpp"
#include "vec.hpp"

namespace bridgekit {

/// Coefficients of the first-order exponential-integrator step x_r = k1 x_t + k2 x_theta + k3 y.
struct OdeStepCoeffs {
    double k1 = 1.0;
    double k2 = 0.0;
    double k3 = 0.0;
};

/**
 * Step coefficients from t down to r. The factored forms below make r == t
 * return exactly (1, 0, 0), and nothing divides by rho_r or rho_bar_r, so r
 * may reach 0 on schedules where rho_0 = 0.
 */
inline OdeStepCoeffs ode_step_coeffs(const ScheduleSpec& spec, double t, double r) {
    if (r > t) {
        throw std::invalid_argument("ode step needs r <= t (got t=" + std::to_string(t) +
                                    ", r=" + std::to_string(r) + ")");
    }
    const ScheduleEval et = spec.eval(t);
    const ScheduleEval er = spec.eval(r);
    const double rho_t = et.rho(), rho_bar_t = et.rho_bar();
    const double rho_r = er.rho(), rho_bar_r = er.rho_bar();
    if (!(rho_t > 0.0 && rho_bar_t > 0.0)) {
        throw std::domain_error("ode step undefined from a pinned endpoint (t=" + std::to_string(t) + ")");
    }
    const double rho_ratio = rho_r / rho_t;
    const double rho_bar_ratio = rho_bar_r / rho_bar_t;
    OdeStepCoeffs k;
    k.k1 = (er.alpha / et.alpha) * rho_ratio * rho_bar_ratio;
    k.k2 = (er.alpha / er.rho_T2) * rho_bar_r * (rho_bar_r - rho_bar_t * rho_ratio);
    k.k3 = (er.alpha / (er.alpha_T * er.rho_T2)) * rho_r * (rho_r - rho_t * rho_bar_ratio);
    return k;
}

/// One first-order exponential-integrator step of the bridge probability-flow ODE.
inline Vec ei_ode_step(const ScheduleSpec& spec, double t, double r, std::span<const double> x_t,
                       std::span<const double> y, std::span<const double> x_pred) {
    require_same_dim(x_t.size(), y.size(), "ei_ode_step");
    require_same_dim(x_t.size(), x_pred.size(), "ei_ode_step");
    if (r == t) return Vec(x_t.begin(), x_t.end());
    const OdeStepCoeffs k = ode_step_coeffs(spec, t, r);
    return combine(k.k1, x_t, k.k2, x_pred, k.k3, y);
}

/**
 * Velocity of the probability-flow ODE in data-prediction form:
 *   f x - g^2 (x - abar y) / (2 alpha^2 rho_bar^2) + g^2 (x - alpha x_theta) / (2 alpha^2 rho^2).
 * Terms multiplied by g^2 vanish identically when g^2(t) = 0.
 */
inline Vec bridge_ode_velocity(const ScheduleEval& e, std::span<const double> x,
                               std::span<const double> y, std::span<const double> x_pred) {
    Vec v(x.size());
    const double a2 = e.alpha * e.alpha;
    const bool diffusive = e.diffusion2 != 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double vi = e.drift * x[i];
        if (diffusive) {
            vi -= 0.5 * e.diffusion2 * (x[i] - e.alpha_bar * y[i]) / (a2 * e.rho_bar2);
            vi += 0.5 * e.diffusion2 * (x[i] - e.alpha * x_pred[i]) / (a2 * e.rho2);
        }
        v[i] = vi;
    }
    return v;
}

/// Explicit Euler step of the same ODE; the baseline the exponential integrator is compared with.
inline Vec euler_ode_step(const ScheduleSpec& spec, double t, double r, std::span<const double> x_t,
                          std::span<const double> y, std::span<const double> x_pred) {
    require_same_dim(x_t.size(), y.size(), "euler_ode_step");
    require_same_dim(x_t.size(), x_pred.size(), "euler_ode_step");
    if (r > t) throw std::invalid_argument("ode step needs r <= t");
    if (r == t) return Vec(x_t.begin(), x_t.end());
    const Vec v = bridge_ode_velocity(spec.eval(t), x_t, y, x_pred);
    Vec out(x_t.begin(), x_t.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (r - t) * v[i];
    return out;
}

/// First-order stochastic step: draw x_r from q_{r|0T}(. | x_0 = x0_hat, x_T = y).
inline Vec posterior_sde_step(const ScheduleSpec& spec, double t, double r,
                              std::span<const double> x0_hat, std::span<const double> y,
                              std::span<const double> z) {
    require_same_dim(x0_hat.size(), y.size(), "posterior_sde_step");
    require_same_dim(x0_hat.size(), z.size(), "posterior_sde_step");
    if (!(r < t)) throw std::invalid_argument("posterior_sde_step needs r < t");
    BridgeCoeffs k = spec.coeffs(r);
    if (k.c < 1e-15) k.c = 0.0;
    return combine(k.a, y, k.b, x0_hat, k.c, z);
}

// Closed-form transitions of the unit Brownian bridge between fixed endpoints (x0, x1).

inline void require_unit_brownian(const ScheduleSpec& spec) {
    const auto* bb = std::get_if<BrownianBridge>(&spec.preset());
    if (bb == nullptr || bb->sigma != 1.0) {
        throw std::invalid_argument("closed-form oracle requires the brownian schedule with sigma = 1");
    }
}

/// Exact reverse-SDE transition from t to s < t given the data endpoint x0 and a standard normal draw.
inline double brownian_oracle_reverse_sde(const ScheduleSpec& spec, double t, double s, double x_t,
                                          double x0, double noise) {
    require_unit_brownian(spec);
    if (!(s > 0.0 && s < t && t <= 1.0)) throw std::out_of_range("reverse SDE oracle needs 0 < s < t <= 1");
    const double gap = 1.0 / s - 1.0 / t;
    return s * (x_t / t + gap * x0 + std::sqrt(gap) * noise);
}

inline double brownian_oracle_reverse_sde(const ScheduleSpec& spec, double t, double s, double x_t,
                                          double x0, Stream& rng) {
    return brownian_oracle_reverse_sde(spec, t, s, x_t, x0, rng.normal());
}

/// Exact probability-flow ODE flow from t to s <= t.
inline double brownian_oracle_ode(const ScheduleSpec& spec, double t, double s, double x_t, double x0,
                                  double x1) {
    require_unit_brownian(spec);
    if (!(t > 0.0 && t < 1.0 && s >= 0.0 && s <= t)) {
        throw std::out_of_range("ODE oracle needs 0 <= s <= t, 0 < t < 1");
    }
    const double ratio = std::sqrt(s * (1.0 - s)) / std::sqrt(t * (1.0 - t));
    return ratio * x_t + (s - ratio * t) * x1 + (1.0 - s - ratio * (1.0 - t)) * x0;
}

}  // namespace bridgekit
