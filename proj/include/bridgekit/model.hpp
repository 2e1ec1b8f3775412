#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "bridge.hpp"
#include "mlp.hpp"
#include "schedule.hpp"
#include "solver.hpp"
#include "vec.hpp"

namespace bridgekit {

enum class PrecondScheme { Edm, I2sb, Universal };

inline std::string to_string(PrecondScheme s) {
    switch (s) {
        case PrecondScheme::Edm: return "edm";
        case PrecondScheme::I2sb: return "i2sb";
        case PrecondScheme::Universal: return "universal";
    }
    return "?";
}

inline PrecondScheme parse_precond_scheme(const std::string& s) {
    if (s == "edm") return PrecondScheme::Edm;
    if (s == "i2sb") return PrecondScheme::I2sb;
    if (s == "universal") return PrecondScheme::Universal;
    throw std::invalid_argument("unknown precondition scheme '" + s + "' (expected edm, i2sb or universal)");
}

/// Endpoint moments pooled over dimensions.
struct EndpointStats {
    double var0 = 1.0;
    double varT = 1.0;
    double cov0T = 0.0;
    bool degenerate = false;  // a variance was zero and has been floored
};

inline constexpr double kVarianceFloor = 1e-8;

/// Unbiased sample variances and covariance, per-dimension means, pooled over dimensions.
inline EndpointStats estimate_endpoint_stats(std::span<const Coupling> data) {
    if (data.size() < 2) throw std::invalid_argument("endpoint stats need at least 2 samples");
    const std::size_t d = data.front().x.size();
    Vec mx(d, 0.0), my(d, 0.0);
    for (const auto& p : data) {
        require_same_dim(p.x.size(), d, "estimate_endpoint_stats");
        require_same_dim(p.y.size(), d, "estimate_endpoint_stats");
        for (std::size_t i = 0; i < d; ++i) {
            mx[i] += p.x[i];
            my[i] += p.y[i];
        }
    }
    const double n = static_cast<double>(data.size());
    for (std::size_t i = 0; i < d; ++i) {
        mx[i] /= n;
        my[i] /= n;
    }
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& p : data)
        for (std::size_t i = 0; i < d; ++i) {
            const double dx = p.x[i] - mx[i], dy = p.y[i] - my[i];
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    const double norm = (n - 1.0) * static_cast<double>(d);
    EndpointStats s{sxx / norm, syy / norm, sxy / norm, false};
    if (s.var0 < kVarianceFloor || s.varT < kVarianceFloor) {
        s.degenerate = true;
        s.var0 = std::max(s.var0, kVarianceFloor);
        s.varT = std::max(s.varT, kVarianceFloor);
        const double bound = std::sqrt(s.var0 * s.varT);
        s.cov0T = std::clamp(s.cov0T, -bound, bound);
    }
    return s;
}

struct EdmCoeffs {
    double c_in = 1.0;
    double c_out = 0.0;
    double c_skip = 1.0;
    double c_noise = 0.0;
};

/**
 * EDM-style coefficients at clock value `time` with bridge coefficients k.
 * The radical uses c_t as the bridge variance (k.c squared).
 */
inline EdmCoeffs edm_coeffs(const BridgeCoeffs& k, double time, const EndpointStats& s) {
    const double var_c = k.c * k.c;
    const double denom = k.a * k.a * s.varT + k.b * k.b * s.var0 + 2.0 * k.a * k.b * s.cov0T + var_c;
    if (!(denom > 0.0)) throw std::domain_error("edm precondition: non-positive input variance");
    EdmCoeffs e;
    e.c_in = 1.0 / std::sqrt(denom);
    const double det = std::max(0.0, s.varT * s.var0 - s.cov0T * s.cov0T);
    e.c_out = std::sqrt(k.a * k.a * det + s.var0 * var_c) * e.c_in;
    e.c_skip = (k.b * s.var0 + k.a * s.cov0T) / denom;
    e.c_noise = time > 0.0 ? 0.25 * std::log(time) : -std::numeric_limits<double>::infinity();
    return e;
}

struct Precondition {
    PrecondScheme scheme = PrecondScheme::Edm;
    std::optional<EndpointStats> stats;
    double eps = 1e-4;
    double gamma = 1e-3;

    /// Defaults scale eps and gamma with the horizon.
    static Precondition make(const ScheduleSpec& spec, PrecondScheme scheme,
                             std::optional<EndpointStats> stats = std::nullopt) {
        return {scheme, stats, 1e-4 * spec.horizon(), 1e-3 * spec.horizon()};
    }
};

inline constexpr std::size_t kSinusoidFeatures = 16;

/**
 * Preconditioned network exposing the data predictor x_theta and the
 * consistency function h_theta. Input layout is [c_in x, time features, y].
 *
 * Edm and I2sb evaluate on the shifted clock t - eps, so h(x, eps, y) = x and
 * the data predictor and consistency function coincide. Universal uses an
 * EDM-style data predictor on the unshifted clock and wraps it in one
 * exponential-integrator step from t to eps.
 */
class BridgeNet {
public:
    BridgeNet(ScheduleSpec spec, Precondition pre, std::size_t dim, const std::vector<std::size_t>& hidden)
        : spec_(std::move(spec)), pre_(std::move(pre)), dim_(dim) {
        if (dim_ == 0) throw std::invalid_argument("BridgeNet: dim must be positive");
        const double T = spec_.horizon();
        if (!(pre_.eps > 0.0 && pre_.gamma > 0.0 && pre_.eps < T - pre_.gamma))
            throw std::invalid_argument("BridgeNet: need 0 < eps < T - gamma");
        if (pre_.scheme != PrecondScheme::I2sb && !pre_.stats)
            throw std::invalid_argument("BridgeNet: " + to_string(pre_.scheme) + " precondition needs endpoint stats");
        std::vector<std::size_t> widths{2 * dim_ + n_time_features()};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(dim_);
        mlp_ = Mlp(std::move(widths));
    }

    const ScheduleSpec& schedule() const { return spec_; }
    const Precondition& precondition() const { return pre_; }
    std::size_t dim() const { return dim_; }
    const Mlp& mlp() const { return mlp_; }
    std::size_t n_params() const { return mlp_.n_params(); }
    Vec& params() { return mlp_.params(); }
    const Vec& params() const { return mlp_.params(); }
    std::vector<std::size_t> hidden_widths() const {
        const auto& w = mlp_.widths();
        return {w.begin() + 1, w.end() - 1};
    }
    double t_min() const { return pre_.eps; }
    double t_max() const { return spec_.horizon() - pre_.gamma; }

    void init(Stream& rng) { mlp_.init(rng); }

    Vec data_pred(std::span<const double> x, double t, std::span<const double> y) const {
        return apply<std::nullptr_t>(head(t, false), x, y, nullptr, {});
    }
    Vec consistency(std::span<const double> x, double t, std::span<const double> y) const {
        return apply<std::nullptr_t>(head(t, true), x, y, nullptr, {});
    }

    /**
     * Returns x_theta and adds J^T g to grad_params, where g = grad_of_output(x_theta)
     * is the gradient of a scalar loss with respect to the output.
     */
    template <class GradFn>
    Vec data_pred_backward(std::span<const double> x, double t, std::span<const double> y, GradFn&& grad_of_output,
                           std::span<double> grad_params) const {
        return apply<std::remove_reference_t<GradFn>>(head(t, false), x, y, &grad_of_output, grad_params);
    }
    /// As data_pred_backward, for h_theta.
    template <class GradFn>
    Vec consistency_backward(std::span<const double> x, double t, std::span<const double> y, GradFn&& grad_of_output,
                             std::span<double> grad_params) const {
        return apply<std::remove_reference_t<GradFn>>(head(t, true), x, y, &grad_of_output, grad_params);
    }

    /// Snaps t to [eps, T - gamma] within rounding slack; throws outside.
    double clamp_time(double t) const {
        const double slack = 1e-12 * std::max(1.0, spec_.horizon());
        if (t >= t_min() - slack && t <= t_min()) return t_min();
        if (t <= t_max() + slack && t >= t_max()) return t_max();
        if (!(t > t_min() && t < t_max()))
            throw std::out_of_range("network time " + std::to_string(t) + " outside [eps, T - gamma] = [" +
                                    std::to_string(t_min()) + ", " + std::to_string(t_max()) + "]");
        return t;
    }

private:
    // out = skip x + y_coef y + out F(c_in x, features, y)
    struct Head {
        double skip = 1.0;
        double out = 0.0;
        double y_coef = 0.0;
        double c_in = 1.0;
        std::array<double, kSinusoidFeatures> features{};
    };

    std::size_t n_time_features() const { return pre_.scheme == PrecondScheme::I2sb ? kSinusoidFeatures : 1; }

    Head edm_head(double time) const {
        const EdmCoeffs e = edm_coeffs(spec_.coeffs(time), time, *pre_.stats);
        Head h;
        h.skip = e.c_skip;
        h.out = e.c_out;
        h.c_in = e.c_in;
        h.features[0] = e.c_noise;
        return h;
    }

    Head head(double t, bool consistency) const {
        t = clamp_time(t);
        const double shifted = std::max(0.0, t - pre_.eps);
        switch (pre_.scheme) {
            case PrecondScheme::Edm: return edm_head(shifted);
            case PrecondScheme::I2sb: {
                Head h;
                h.out = -spec_.eval(shifted).rho();
                const double u = shifted / spec_.horizon();
                for (std::size_t k = 0; k < kSinusoidFeatures / 2; ++k) {
                    const double w = std::pow(100.0, static_cast<double>(k) / (kSinusoidFeatures / 2 - 1));
                    h.features[2 * k] = std::sin(w * u);
                    h.features[2 * k + 1] = std::cos(w * u);
                }
                return h;
            }
            case PrecondScheme::Universal: {
                Head inner = edm_head(t);
                if (!consistency) return inner;
                const OdeStepCoeffs k = ode_step_coeffs(spec_, t, pre_.eps);
                Head h = inner;
                h.skip = k.k1 + k.k2 * inner.skip;
                h.out = k.k2 * inner.out;
                h.y_coef = k.k3;
                return h;
            }
        }
        throw std::logic_error("unreachable precondition scheme");
    }

    template <class GradFn>
    Vec apply(const Head& h, std::span<const double> x, std::span<const double> y, GradFn* grad_of_output,
              std::span<double> grad_params) const {
        require_same_dim(x.size(), dim_, "BridgeNet input x");
        require_same_dim(y.size(), dim_, "BridgeNet input y");
        if (grad_of_output && grad_params.size() != n_params())
            throw std::invalid_argument("BridgeNet backward: gradient buffer has wrong size");
        Vec result(dim_);
        for (std::size_t i = 0; i < dim_; ++i) result[i] = h.skip * x[i] + h.y_coef * y[i];
        if (h.out == 0.0) return result;

        thread_local Mlp::Workspace ws;
        thread_local Vec input, output, scaled;
        const std::size_t nf = n_time_features();
        input.resize(2 * dim_ + nf);
        for (std::size_t i = 0; i < dim_; ++i) input[i] = h.c_in * x[i];
        for (std::size_t k = 0; k < nf; ++k) input[dim_ + k] = h.features[k];
        for (std::size_t i = 0; i < dim_; ++i) input[dim_ + nf + i] = y[i];
        output.resize(dim_);
        mlp_.forward(input, output, ws);
        for (std::size_t i = 0; i < dim_; ++i) result[i] += h.out * output[i];
        if constexpr (!std::is_same_v<GradFn, std::nullptr_t>) {
            if (grad_of_output) {
                const Vec g = (*grad_of_output)(std::as_const(result));
                require_same_dim(g.size(), dim_, "BridgeNet output gradient");
                scaled.resize(dim_);
                for (std::size_t i = 0; i < dim_; ++i) scaled[i] = h.out * g[i];
                mlp_.backward(ws, scaled, grad_params);
            }
        }
        return result;
    }

    ScheduleSpec spec_;
    Precondition pre_;
    std::size_t dim_;
    Mlp mlp_;
};

}  // namespace bridgekit
