#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bridge.hpp"
#include "rng.hpp"

namespace bridgekit {

/**
 * x ~ N(mu0, s0^2). With y_noise = 0 the endpoint is pinned at y0; otherwise
 * y = x + y_noise * xi.
 */
struct Gauss1d {
    double mu0 = 0.0;
    double s0 = 1.0;
    double y0 = 0.0;
    double y_noise = 0.0;
};

/// Gaussian mixture on a ring; y is the mode translated by `shift` plus independent noise.
struct Mixture2dShifted {
    int modes = 8;
    double radius = 2.0;
    double x_std = 0.2;
    double y_std = 0.4;
    double shift_x = 1.5;
    double shift_y = 0.0;
};

/// The same ring mixture with the second coordinate of y masked to zero.
struct Masked2d {
    int modes = 8;
    double radius = 2.0;
    double x_std = 0.2;
};

class Dataset {
public:
    using Kind = std::variant<Gauss1d, Mixture2dShifted, Masked2d>;

    explicit Dataset(Kind kind) : kind_(kind) { validate(); }

    static std::vector<std::string> ids() { return {"gauss1d", "mixture2d", "masked2d"}; }

    static Dataset from_id(const std::string& id, const std::map<std::string, double>& params = {}) {
        auto take = [&](const std::set<std::string>& keys) {
            for (const auto& [k, v] : params)
                if (!keys.contains(k)) throw std::invalid_argument("dataset '" + id + "' has no parameter '" + k + "'");
        };
        auto get = [&](const char* k, double fallback) {
            const auto it = params.find(k);
            return it == params.end() ? fallback : it->second;
        };
        if (id == "gauss1d") {
            take({"mu0", "s0", "y0", "y_noise"});
            Gauss1d g;
            return Dataset(Gauss1d{get("mu0", g.mu0), get("s0", g.s0), get("y0", g.y0), get("y_noise", g.y_noise)});
        }
        if (id == "mixture2d") {
            take({"modes", "radius", "x_std", "y_std", "shift_x", "shift_y"});
            Mixture2dShifted m;
            return Dataset(Mixture2dShifted{static_cast<int>(get("modes", m.modes)), get("radius", m.radius),
                                            get("x_std", m.x_std), get("y_std", m.y_std), get("shift_x", m.shift_x),
                                            get("shift_y", m.shift_y)});
        }
        if (id == "masked2d") {
            take({"modes", "radius", "x_std"});
            Masked2d m;
            return Dataset(Masked2d{static_cast<int>(get("modes", m.modes)), get("radius", m.radius), get("x_std", m.x_std)});
        }
        throw std::invalid_argument("unknown dataset '" + id + "' (expected gauss1d, mixture2d or masked2d)");
    }

    std::string id() const {
        return std::visit(
            [](const auto& k) -> std::string {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, Gauss1d>) return "gauss1d";
                else if constexpr (std::is_same_v<K, Mixture2dShifted>) return "mixture2d";
                else return "masked2d";
            },
            kind_);
    }

    std::map<std::string, double> params() const {
        return std::visit(
            [](const auto& k) -> std::map<std::string, double> {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, Gauss1d>)
                    return {{"mu0", k.mu0}, {"s0", k.s0}, {"y0", k.y0}, {"y_noise", k.y_noise}};
                else if constexpr (std::is_same_v<K, Mixture2dShifted>)
                    return {{"modes", static_cast<double>(k.modes)},   {"radius", k.radius},   {"x_std", k.x_std},
                            {"y_std", k.y_std},   {"shift_x", k.shift_x}, {"shift_y", k.shift_y}};
                else
                    return {{"modes", static_cast<double>(k.modes)}, {"radius", k.radius}, {"x_std", k.x_std}};
            },
            kind_);
    }

    const Kind& kind() const { return kind_; }
    std::size_t dim() const { return std::holds_alternative<Gauss1d>(kind_) ? 1 : 2; }

    Coupling sample(Stream& rng) const {
        return std::visit(
            [&](const auto& k) -> Coupling {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, Gauss1d>) {
                    const double x = k.mu0 + k.s0 * rng.normal();
                    const double y = k.y_noise > 0.0 ? x + k.y_noise * rng.normal() : k.y0;
                    return {{x}, {y}};
                } else if constexpr (std::is_same_v<K, Mixture2dShifted>) {
                    const auto [mx, my] = mode(k.modes, k.radius, rng);
                    Vec x{mx + k.x_std * rng.normal(), my + k.x_std * rng.normal()};
                    Vec y{mx + k.shift_x + k.y_std * rng.normal(), my + k.shift_y + k.y_std * rng.normal()};
                    return {std::move(x), std::move(y)};
                } else {
                    const auto [mx, my] = mode(k.modes, k.radius, rng);
                    Vec x{mx + k.x_std * rng.normal(), my + k.x_std * rng.normal()};
                    return {x, {x[0], 0.0}};
                }
            },
            kind_);
    }

    /// n pairs; pair i is drawn from Stream(seed, i).
    std::vector<Coupling> sample_n(std::size_t n, std::uint64_t seed) const {
        std::vector<Coupling> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            Stream rng(seed, i);
            out[i] = sample(rng);
        }
        return out;
    }

    /// Exact Gaussian posterior of x given y, available for gauss1d only.
    std::optional<GaussianCouplingOracle> oracle_given(double y) const {
        const auto* g = std::get_if<Gauss1d>(&kind_);
        if (!g) return std::nullopt;
        if (g->y_noise == 0.0) return GaussianCouplingOracle(Vec{g->mu0}, g->s0);
        const double p = g->s0 * g->s0, q = g->y_noise * g->y_noise;
        return GaussianCouplingOracle(Vec{(g->mu0 * q + y * p) / (p + q)}, std::sqrt(p * q / (p + q)));
    }

private:
    static std::pair<double, double> mode(int modes, double radius, Stream& rng) {
        const int m = static_cast<int>(rng.uniform() * modes) % modes;
        const double angle = 2.0 * std::numbers::pi * m / modes;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }

    void validate() const {
        std::visit(
            [](const auto& k) {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, Gauss1d>) {
                    if (!(k.s0 > 0.0)) throw std::invalid_argument("gauss1d: s0 must be positive");
                    if (!(k.y_noise >= 0.0)) throw std::invalid_argument("gauss1d: y_noise must be >= 0");
                } else {
                    if (k.modes < 1) throw std::invalid_argument("mixture: modes must be >= 1");
                    if (!(k.x_std > 0.0)) throw std::invalid_argument("mixture: x_std must be positive");
                    if constexpr (std::is_same_v<K, Mixture2dShifted>)
                        if (!(k.y_std >= 0.0)) throw std::invalid_argument("mixture: y_std must be >= 0");
                }
            },
            kind_);
    }

    Kind kind_;
};

}  // namespace bridgekit
