#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

namespace bridgekit {

// Preset parameterizations. Defaults are the published values for each family.

struct BrownianBridge {
    double sigma = 1.0;
};

/// Continuous-time form of the I2SB schedule on [0, 1].
struct I2sb {
    double beta0 = 0.1;
    double beta1 = 0.3;
    double eta0() const { return (std::sqrt(beta1) - std::sqrt(beta0)) / 2.0; }
    double eta1() const { return (std::sqrt(beta1) + std::sqrt(beta0)) / 2.0; }
};

struct DdbmVp {
    double beta0 = 0.1;
};

struct DdbmVe {
    double horizon = 80.0;
};

struct BridgeTtsGmax {
    double beta0 = 0.01;
    double beta_d = 49.99;
};

struct BridgeTtsVp {
    double beta0 = 0.01;
    double beta_d = 19.99;
};

/// User-supplied drift rate f(t) and diffusion rate g^2(t) on [0, horizon].
struct CustomSchedule {
    std::function<double(double)> drift;
    std::function<double(double)> diffusion2;
    double horizon = 1.0;
};

/// Noise-schedule quantities at one time.
struct ScheduleEval {
    double t = 0.0;
    double alpha = 1.0;      // exp(int_0^t f)
    double alpha_bar = 1.0;  // alpha_t / alpha_T
    double rho2 = 0.0;       // int_0^t g^2 / alpha^2
    double rho_bar2 = 0.0;   // int_t^T g^2 / alpha^2
    double sigma = 0.0;      // alpha_t * rho_t
    double drift = 0.0;      // f(t)
    double diffusion2 = 0.0; // g^2(t)
    double alpha_T = 1.0;
    double rho_T2 = 0.0;

    double rho() const { return std::sqrt(rho2); }
    double rho_bar() const { return std::sqrt(rho_bar2); }
    double rho_T() const { return std::sqrt(rho_T2); }
};

/// Pinned-bridge marginal N(a x_T + b x_0, c^2 I).
struct BridgeCoeffs {
    double a = 0.0;
    double b = 1.0;
    double c = 0.0;
};

namespace detail {

/// Cumulative integrals of f and g^2/alpha^2 on a fixed grid, with cubic Hermite
/// interpolation between nodes. Node slopes are the integrands themselves, limited
/// with Fritsch-Carlson so the interpolant stays monotone where the data is.
class CumulativeTable {
public:
    static constexpr std::size_t kIntervals = 4096;

    CumulativeTable(const CustomSchedule& s) : horizon_(s.horizon), h_(s.horizon / kIntervals) {
        using Quad = boost::math::quadrature::gauss<double, 10>;
        const std::size_t n = kIntervals + 1;
        nodes_.resize(n);
        drift_.resize(n);
        log_alpha_.assign(n, 0.0);
        rate_.resize(n);
        rho2_.assign(n, 0.0);
        rho_bar2_.assign(n, 0.0);

        auto checked = [](double v, const char* what, double t) {
            if (!std::isfinite(v)) {
                throw std::domain_error(std::string("custom schedule: non-finite ") + what +
                                        " at t=" + std::to_string(t));
            }
            return v;
        };

        for (std::size_t k = 0; k < n; ++k) {
            nodes_[k] = k == kIntervals ? horizon_ : h_ * static_cast<double>(k);
            drift_[k] = checked(s.drift(nodes_[k]), "drift", nodes_[k]);
        }
        for (std::size_t k = 0; k < kIntervals; ++k) {
            const double piece = Quad::integrate(
                [&](double tau) { return checked(s.drift(tau), "drift", tau); }, nodes_[k],
                nodes_[k + 1]);
            log_alpha_[k + 1] = log_alpha_[k] + piece;
        }
        limit_slopes(log_alpha_, drift_, fa_slope_);

        for (std::size_t k = 0; k < n; ++k) {
            const double g2 = checked(s.diffusion2(nodes_[k]), "diffusion", nodes_[k]);
            rate_[k] = g2 * std::exp(-2.0 * log_alpha_[k]);
        }
        std::vector<double> pieces(kIntervals);
        for (std::size_t k = 0; k < kIntervals; ++k) {
            pieces[k] = Quad::integrate(
                [&](double tau) {
                    const double g2 = checked(s.diffusion2(tau), "diffusion", tau);
                    return g2 * std::exp(-2.0 * interpolate(log_alpha_, fa_slope_, tau));
                },
                nodes_[k], nodes_[k + 1]);
            checked(pieces[k], "integrand", nodes_[k]);
        }
        for (std::size_t k = 0; k < kIntervals; ++k) rho2_[k + 1] = rho2_[k] + pieces[k];
        for (std::size_t k = kIntervals; k-- > 0;) rho_bar2_[k] = rho_bar2_[k + 1] + pieces[k];
        std::vector<double> neg_rate(n);
        for (std::size_t k = 0; k < n; ++k) neg_rate[k] = -rate_[k];
        limit_slopes(rho2_, rate_, rho_slope_);
        limit_slopes(rho_bar2_, neg_rate, rho_bar_slope_);
    }

    double log_alpha(double t) const { return interpolate(log_alpha_, fa_slope_, t); }
    double rho2(double t) const { return interpolate(rho2_, rho_slope_, t); }
    double rho_bar2(double t) const { return interpolate(rho_bar2_, rho_bar_slope_, t); }
    double log_alpha_T() const { return log_alpha_.back(); }
    double rho_T2() const { return rho2_.back(); }

private:
    void limit_slopes(const std::vector<double>& y, const std::vector<double>& exact,
                      std::vector<double>& out) const {
        out = exact;
        for (std::size_t k = 0; k < kIntervals; ++k) {
            const double secant = (y[k + 1] - y[k]) / h_;
            if (secant == 0.0) {
                out[k] = out[k + 1] = 0.0;
                continue;
            }
            double a = out[k] / secant;
            double b = out[k + 1] / secant;
            if (a < 0.0) out[k] = a = 0.0;
            if (b < 0.0) out[k + 1] = b = 0.0;
            const double r2 = a * a + b * b;
            if (r2 > 9.0) {
                const double tau = 3.0 / std::sqrt(r2);
                out[k] = tau * a * secant;
                out[k + 1] = tau * b * secant;
            }
        }
    }

    double interpolate(const std::vector<double>& y, const std::vector<double>& dy,
                       double t) const {
        if (t <= 0.0) return y.front();
        if (t >= horizon_) return y.back();
        auto k = static_cast<std::size_t>(t / h_);
        k = std::min(k, kIntervals - 1);
        const double s = (t - nodes_[k]) / h_;
        const double s2 = s * s;
        const double s3 = s2 * s;
        const double h00 = 2 * s3 - 3 * s2 + 1;
        const double h10 = s3 - 2 * s2 + s;
        const double h01 = -2 * s3 + 3 * s2;
        const double h11 = s3 - s2;
        return h00 * y[k] + h10 * h_ * dy[k] + h01 * y[k + 1] + h11 * h_ * dy[k + 1];
    }

    double horizon_;
    double h_;
    std::vector<double> nodes_, drift_, log_alpha_, rate_, rho2_, rho_bar2_;
    std::vector<double> fa_slope_, rho_slope_, rho_bar_slope_;
};

}  // namespace detail

/**
 * A linear-drift bridge schedule: one of the preset families or a custom
 * (f, g^2) pair. Immutable and cheap to copy; custom tables are shared.
 */
class ScheduleSpec {
public:
    using Preset = std::variant<BrownianBridge, I2sb, DdbmVp, DdbmVe, BridgeTtsGmax, BridgeTtsVp,
                                CustomSchedule>;

    ScheduleSpec() : ScheduleSpec(BrownianBridge{}) {}

    template <class P>
        requires std::is_constructible_v<Preset, P>
    ScheduleSpec(P preset) : preset_(std::move(preset)) {
        validate();
        if (auto* custom = std::get_if<CustomSchedule>(&preset_)) {
            table_ = std::make_shared<const detail::CumulativeTable>(*custom);
        }
    }

    /// Build a preset from its config id; unknown keys in `params` are rejected.
    static ScheduleSpec from_id(std::string_view id, const std::map<std::string, double>& params = {});

    const Preset& preset() const { return preset_; }

    double horizon() const {
        return std::visit(
            [](const auto& p) -> double {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, DdbmVe> || std::is_same_v<P, CustomSchedule>) {
                    return p.horizon;
                } else {
                    return 1.0;
                }
            },
            preset_);
    }

    std::string id() const {
        return std::visit(
            [](const auto& p) -> std::string {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, BrownianBridge>) return "brownian";
                else if constexpr (std::is_same_v<P, I2sb>) return "i2sb";
                else if constexpr (std::is_same_v<P, DdbmVp>) return "ddbm-vp";
                else if constexpr (std::is_same_v<P, DdbmVe>) return "ddbm-ve";
                else if constexpr (std::is_same_v<P, BridgeTtsGmax>) return "bridge-tts-gmax";
                else if constexpr (std::is_same_v<P, BridgeTtsVp>) return "bridge-tts-vp";
                else return "custom";
            },
            preset_);
    }

    /// Named numeric parameters, in the form accepted by from_id().
    std::map<std::string, double> params() const {
        return std::visit(
            [](const auto& p) -> std::map<std::string, double> {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, BrownianBridge>) return {{"sigma", p.sigma}};
                else if constexpr (std::is_same_v<P, I2sb>) return {{"beta0", p.beta0}, {"beta1", p.beta1}};
                else if constexpr (std::is_same_v<P, DdbmVp>) return {{"beta0", p.beta0}};
                else if constexpr (std::is_same_v<P, DdbmVe>) return {{"T", p.horizon}};
                else if constexpr (std::is_same_v<P, BridgeTtsGmax> || std::is_same_v<P, BridgeTtsVp>)
                    return {{"beta0", p.beta0}, {"beta_d", p.beta_d}};
                else return {{"T", p.horizon}};
            },
            preset_);
    }

    double drift(double t) const { return eval(t).drift; }
    double diffusion2(double t) const { return eval(t).diffusion2; }

    ScheduleEval eval(double t) const {
        t = clamp_time(t);
        ScheduleEval e = std::visit([&](const auto& p) { return closed_form(p, t); }, preset_);
        e.t = t;
        e.sigma = e.alpha * std::sqrt(e.rho2);
        return e;
    }

    BridgeCoeffs coeffs(double t) const { return coeffs_from(eval(t)); }

    static BridgeCoeffs coeffs_from(const ScheduleEval& e) {
        BridgeCoeffs c;
        c.a = e.alpha_bar * e.rho2 / e.rho_T2;
        c.b = e.alpha * e.rho_bar2 / e.rho_T2;
        c.c = e.alpha * std::sqrt(e.rho2) * std::sqrt(e.rho_bar2) / std::sqrt(e.rho_T2);
        return c;
    }

    /// Times within 1e-12 (scaled by T) of either boundary snap onto it; times outside throw.
    double clamp_time(double t) const {
        const double T = horizon();
        const double slack = 1e-12 * std::max(1.0, T);
        if (!(t >= -slack && t <= T + slack)) {
            throw std::out_of_range("schedule time " + std::to_string(t) + " outside [0, " +
                                    std::to_string(T) + "]");
        }
        if (t <= slack) return 0.0;
        if (t >= T - slack) return T;
        return t;
    }

private:
    void validate() const {
        std::visit(
            [](const auto& p) {
                using P = std::decay_t<decltype(p)>;
                auto positive = [](double v, const char* name) {
                    if (!(v > 0.0) || !std::isfinite(v)) {
                        throw std::invalid_argument(std::string("schedule parameter ") + name +
                                                    " must be positive and finite");
                    }
                };
                if constexpr (std::is_same_v<P, BrownianBridge>) {
                    positive(p.sigma, "sigma");
                } else if constexpr (std::is_same_v<P, I2sb>) {
                    positive(p.beta0, "beta0");
                    positive(p.beta1, "beta1");
                    if (p.beta1 < p.beta0) throw std::invalid_argument("i2sb requires beta1 >= beta0");
                } else if constexpr (std::is_same_v<P, DdbmVp>) {
                    positive(p.beta0, "beta0");
                } else if constexpr (std::is_same_v<P, DdbmVe>) {
                    positive(p.horizon, "T");
                } else if constexpr (std::is_same_v<P, BridgeTtsGmax> || std::is_same_v<P, BridgeTtsVp>) {
                    positive(p.beta0, "beta0");
                    if (!(p.beta_d >= 0.0)) throw std::invalid_argument("beta_d must be >= 0");
                } else {
                    positive(p.horizon, "T");
                    if (!p.drift || !p.diffusion2) {
                        throw std::invalid_argument("custom schedule needs drift and diffusion2");
                    }
                }
            },
            preset_);
    }

    // Endpoints are returned exactly: rho2(0) = 0, rho_bar2(0) = rho_T2, and symmetrically at T.
    static ScheduleEval pin_endpoints(ScheduleEval e, double t, double T) {
        if (t == 0.0) {
            e.rho2 = 0.0;
            e.rho_bar2 = e.rho_T2;
            e.alpha = 1.0;
            e.alpha_bar = 1.0 / e.alpha_T;
        } else if (t == T) {
            e.rho2 = e.rho_T2;
            e.rho_bar2 = 0.0;
            e.alpha = e.alpha_T;
            e.alpha_bar = 1.0;
        }
        return e;
    }

    static ScheduleEval closed_form(const BrownianBridge& p, double t) {
        const double s2 = p.sigma * p.sigma;
        ScheduleEval e;
        e.drift = 0.0;
        e.diffusion2 = s2;
        e.rho_T2 = s2;
        e.rho2 = s2 * t;
        e.rho_bar2 = s2 * (1.0 - t);
        return pin_endpoints(e, t, 1.0);
    }

    static ScheduleEval closed_form(const I2sb& p, double t) {
        const double eta0 = p.eta0();
        const double eta1 = p.eta1();
        // g(t) = eta1 - eta0 |2t - 1| is symmetric about 1/2, so rho_bar2(t) = rho2(1 - t).
        auto cumulative = [&](double u) {
            if (eta0 == 0.0) return eta1 * eta1 * u;
            const double lo = eta1 - eta0;
            if (u <= 0.5) {
                const double g = lo + 2.0 * eta0 * u;
                return (g * g * g - lo * lo * lo) / (6.0 * eta0);
            }
            const double half = (eta1 * eta1 * eta1 - lo * lo * lo) / (6.0 * eta0);
            const double g = eta1 + eta0 - 2.0 * eta0 * u;
            return half + (eta1 * eta1 * eta1 - g * g * g) / (6.0 * eta0);
        };
        const double g = eta1 - eta0 * std::abs(2.0 * t - 1.0);
        ScheduleEval e;
        e.diffusion2 = g * g;
        e.rho_T2 = cumulative(1.0);
        e.rho2 = cumulative(t);
        e.rho_bar2 = cumulative(1.0 - t);
        return pin_endpoints(e, t, 1.0);
    }

    static ScheduleEval closed_form(const DdbmVp& p, double t) {
        const double b = p.beta0;
        ScheduleEval e;
        e.drift = -0.5 * b;
        e.diffusion2 = b;
        e.alpha = std::exp(-0.5 * b * t);
        e.alpha_T = std::exp(-0.5 * b);
        e.alpha_bar = std::exp(0.5 * b * (1.0 - t));
        e.rho_T2 = std::expm1(b);
        e.rho2 = std::expm1(b * t);
        e.rho_bar2 = std::exp(b * t) * std::expm1(b * (1.0 - t));
        return pin_endpoints(e, t, 1.0);
    }

    static ScheduleEval closed_form(const DdbmVe& p, double t) {
        const double T = p.horizon;
        ScheduleEval e;
        e.diffusion2 = 2.0 * t;
        e.rho_T2 = T * T;
        e.rho2 = t * t;
        e.rho_bar2 = (T - t) * (T + t);
        return pin_endpoints(e, t, T);
    }

    static ScheduleEval closed_form(const BridgeTtsGmax& p, double t) {
        ScheduleEval e;
        e.diffusion2 = p.beta0 + p.beta_d * t;
        e.rho_T2 = p.beta0 + 0.5 * p.beta_d;
        e.rho2 = p.beta0 * t + 0.5 * p.beta_d * t * t;
        e.rho_bar2 = (1.0 - t) * (p.beta0 + 0.5 * p.beta_d * (1.0 + t));
        return pin_endpoints(e, t, 1.0);
    }

    static ScheduleEval closed_form(const BridgeTtsVp& p, double t) {
        auto exponent = [&](double u) { return p.beta0 * u + 0.5 * p.beta_d * u * u; };
        ScheduleEval e;
        e.drift = -0.5 * p.beta0 - 0.5 * p.beta_d * t;
        e.diffusion2 = p.beta0 + p.beta_d * t;
        e.alpha = std::exp(-0.5 * exponent(t));
        e.alpha_T = std::exp(-0.5 * exponent(1.0));
        e.alpha_bar = std::exp(0.5 * (exponent(1.0) - exponent(t)));
        e.rho_T2 = std::expm1(exponent(1.0));
        e.rho2 = std::expm1(exponent(t));
        e.rho_bar2 = std::exp(exponent(t)) * std::expm1(exponent(1.0) - exponent(t));
        return pin_endpoints(e, t, 1.0);
    }

    ScheduleEval closed_form(const CustomSchedule& p, double t) const {
        ScheduleEval e;
        e.drift = p.drift(t);
        e.diffusion2 = p.diffusion2(t);
        if (!std::isfinite(e.drift) || !std::isfinite(e.diffusion2)) {
            throw std::domain_error("custom schedule: non-finite f or g^2 at t=" + std::to_string(t));
        }
        const double log_alpha_T = table_->log_alpha_T();
        e.alpha = std::exp(table_->log_alpha(t));
        e.alpha_T = std::exp(log_alpha_T);
        e.alpha_bar = std::exp(table_->log_alpha(t) - log_alpha_T);
        e.rho_T2 = table_->rho_T2();
        e.rho2 = table_->rho2(t);
        e.rho_bar2 = table_->rho_bar2(t);
        return pin_endpoints(e, t, p.horizon);
    }

    Preset preset_;
    std::shared_ptr<const detail::CumulativeTable> table_;
};

inline ScheduleSpec ScheduleSpec::from_id(std::string_view id,
                                          const std::map<std::string, double>& params) {
    std::map<std::string, double> rest = params;
    auto take = [&](const char* key, double fallback) {
        auto it = rest.find(key);
        if (it == rest.end()) return fallback;
        const double v = it->second;
        rest.erase(it);
        return v;
    };
    auto finish = [&](ScheduleSpec spec) {
        if (!rest.empty()) {
            throw std::invalid_argument("unknown parameter '" + rest.begin()->first +
                                        "' for schedule " + std::string(id));
        }
        return spec;
    };
    if (id == "brownian") return finish(BrownianBridge{take("sigma", 1.0)});
    if (id == "i2sb") {
        I2sb p;
        p.beta0 = take("beta0", p.beta0);
        p.beta1 = take("beta1", p.beta1);
        return finish(p);
    }
    if (id == "ddbm-vp") return finish(DdbmVp{take("beta0", DdbmVp{}.beta0)});
    if (id == "ddbm-ve") return finish(DdbmVe{take("T", DdbmVe{}.horizon)});
    if (id == "bridge-tts-gmax") {
        BridgeTtsGmax p;
        p.beta0 = take("beta0", p.beta0);
        p.beta_d = take("beta_d", p.beta_d);
        return finish(p);
    }
    if (id == "bridge-tts-vp") {
        BridgeTtsVp p;
        p.beta0 = take("beta0", p.beta0);
        p.beta_d = take("beta_d", p.beta_d);
        return finish(p);
    }
    throw std::invalid_argument("unknown schedule id '" + std::string(id) + "'");
}

/// The six preset ids, in table order.
inline const std::vector<std::string>& preset_ids() {
    static const std::vector<std::string> ids = {"brownian",        "i2sb",          "ddbm-vp",
                                                 "ddbm-ve",         "bridge-tts-gmax", "bridge-tts-vp"};
    return ids;
}

inline ScheduleEval eval_schedule(const ScheduleSpec& spec, double t) { return spec.eval(t); }

inline BridgeCoeffs bridge_coeffs(const ScheduleSpec& spec, double t) { return spec.coeffs(t); }

}  // namespace bridgekit
