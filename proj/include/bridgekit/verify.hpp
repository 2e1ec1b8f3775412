#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "io.hpp"

namespace bridgekit {

/// Thresholds and budgets of the acceptance suite.
namespace tolerance {
inline constexpr double kSumIdentity = 1e-9;       // rho^2 + rho_bar^2 = rho_T^2, relative
inline constexpr double kQuadrature = 1e-7;        // closed forms vs adaptive Gauss-Kronrod, relative
inline constexpr double kMomentSe = 3.0;           // forward-simulation moments, in standard errors
inline constexpr double kSolverExact = 1e-9;       // constant-predictor step and coefficient identity
inline constexpr double kSlopeLo = 0.8, kSlopeHi = 1.2;
inline constexpr double kMarginalZ = 4.0;
inline constexpr double kGradient = 1e-3;          // relative L2 error vs central differences
inline constexpr double kCbtRatio = 1.5, kCbdRatio = 2.0;
inline constexpr double kTrainBudget = 1800.0;     // seconds
inline constexpr double kNfeSlack = 1.1;           // allowed sliced-W2 growth per NFE increase

// Wallclock limits per criterion, seconds; 0 means unbounded.
inline const std::map<int, double> kRuntime{{1, 5}, {2, 60}, {3, 10}, {4, 30}, {5, 60}, {6, 120}};
}  // namespace tolerance

struct CriterionResult {
    int id = 0;
    std::string title;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

/// Training recipe for the mixture2d comparison.
struct ToyRecipe {
    std::vector<std::size_t> hidden{64, 64, 64};
    std::size_t stats_samples = 4096;
    std::size_t pretrain_steps = 4000;
    double pretrain_lr = 2e-3;
    std::size_t finetune_steps = 8000;
    double finetune_lr = 5e-4;
    TrainingSchedule::Kind gap = ConstantGap{1.0 / 36.0};
    LossWeighting weighting = LossWeighting::Unit;
    Metric metric = Metric::squared_l2();
    std::size_t batch = 256;
    std::size_t eval_samples = 10000;
    std::size_t projections = 256;
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    std::set<int> only;  // empty runs everything
    ToyRecipe recipe;
};

/// The four samplers compared on the toy task.
struct ToyComparison {
    double baseline = 0.0, cbt = 0.0, cbd = 0.0, ode2 = 0.0;
    double energy_baseline = 0.0, energy_cbt = 0.0, energy_cbd = 0.0, energy_ode2 = 0.0;
    double train_seconds = 0.0;
};

namespace detail {

inline std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

template <class Loss>
double fd_relative_error(Vec& params, const Vec& grad, Loss&& loss, double h = 1e-6) {
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

inline double integrate(const std::function<double(double)>& f, double a, double b) {
    if (b <= a) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 10, 1e-13);
}

/// Fixed 20-point Gauss-Legendre; exact for the polynomial drifts of every preset.
inline double integrate_smooth(const std::function<double(double)>& f, double a, double b) {
    if (b <= a) return 0.0;
    return boost::math::quadrature::gauss<double, 20>::integrate(f, a, b);
}

/// rho_t^2 by nested quadrature of the rates, split at T/2 where i2sb has a kink.
inline double quadrature_rho2(const ScheduleSpec& spec, double t) {
    const double mid = 0.5 * spec.horizon();
    auto drift = [&](double u) { return spec.eval(u).drift; };
    auto log_alpha = [&](double u) {
        return integrate_smooth(drift, 0.0, std::min(u, mid)) + integrate_smooth(drift, mid, u);
    };
    auto integrand = [&](double u) { return spec.eval(u).diffusion2 * std::exp(-2.0 * log_alpha(u)); };
    return integrate(integrand, 0.0, std::min(t, mid)) + integrate(integrand, mid, t);
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1e-300});
}

}  // namespace detail

class Verifier {
public:
    explicit Verifier(VerifyOptions opts) : opts_(std::move(opts)) {}

    CriterionResult run(int id) {
        const auto start = std::chrono::steady_clock::now();
        CriterionResult r;
        r.id = id;
        try {
            switch (id) {
                case 1: schedule_algebra(r); break;
                case 2: pinned_bridge(r); break;
                case 3: solver_exactness(r); break;
                case 4: solver_order(r); break;
                case 5: marginal_preservation(r); break;
                case 6: gap_ladder(r); break;
                case 7: boundary(r); break;
                case 8: gradients(r); break;
                case 9: toy_speedup(r); break;
                case 10: replay_and_interpolation(r); break;
                default: throw std::invalid_argument("no acceptance criterion " + std::to_string(id));
            }
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = std::string("error: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (const auto it = tolerance::kRuntime.find(id); it != tolerance::kRuntime.end() && r.seconds > it->second) {
            r.pass = false;
            r.detail += "; over the " + detail::fmt(it->second) + " s limit";
        }
        return r;
    }

    /// Properties of the trained toy models; empty unless criterion 9 has run.
    std::vector<CriterionResult> toy_invariants() const {
        std::vector<CriterionResult> out;
        if (!toy_ || !toy_models_) return out;
        out.push_back(energy_ranking());
        out.push_back(nfe_monotone());
        out.push_back(ei_beats_euler());
        out.push_back(midpoint_in_bounds());
        return out;
    }

    const std::optional<ToyComparison>& toy() const { return toy_; }

private:
    struct ToyModels {
        BridgeNet teacher, cbd, cbt;
        Cloud ys, truth;
    };

    VerifyOptions opts_;
    std::optional<ToyComparison> toy_;
    std::optional<ToyModels> toy_models_;
    std::optional<std::vector<BridgeNet>> trained_;

    static CriterionResult timed(const char* title, const std::function<void(CriterionResult&)>& body) {
        const auto start = std::chrono::steady_clock::now();
        CriterionResult r;
        r.title = title;
        body(r);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return r;
    }

    double toy_sw(const BridgeNet& net, const SamplerChoice& choice) const {
        return sliced_wasserstein2(sample_batch(net, toy_models_->ys, choice, seed(SeedPurpose::SampleNoise)),
                                   toy_models_->truth, opts_.recipe.projections, seed(SeedPurpose::Projections));
    }

    CriterionResult energy_ranking() const {
        return timed("energy distance ranks the toy samplers like sliced-W2", [&](CriterionResult& r) {
            const auto& c = *toy_;
            const std::vector<double> sw{c.baseline, c.cbt, c.cbd, c.ode2};
            const std::vector<double> en{c.energy_baseline, c.energy_cbt, c.energy_cbd, c.energy_ode2};
            r.pass = true;
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 4; ++j)
                    if (i != j && (sw[i] < sw[j]) != (en[i] < en[j])) r.pass = false;
            r.detail = "energy ode100=" + detail::fmt(en[0]) + " cbt2=" + detail::fmt(en[1]) +
                       " cbd2=" + detail::fmt(en[2]) + " ode-nfe2=" + detail::fmt(en[3]);
        });
    }

    CriterionResult nfe_monotone() const {
        return timed("more consistency steps do not hurt (NFE 2, 4, 10)", [&](CriterionResult& r) {
            r.pass = true;
            for (const auto* net : {&toy_models_->cbt, &toy_models_->cbd}) {
                SamplerChoice choice;
                std::vector<double> sw;
                for (std::size_t nfe : {2u, 4u, 10u}) {
                    choice.nfe = nfe;
                    sw.push_back(toy_sw(*net, choice));
                }
                for (std::size_t i = 1; i < sw.size(); ++i)
                    if (sw[i] > tolerance::kNfeSlack * sw[i - 1]) r.pass = false;
                r.detail += std::string(r.detail.empty() ? "" : "; ") + (net == &toy_models_->cbt ? "cbt" : "cbd") +
                            " sliced-W2 " + detail::fmt(sw[0]) + " / " + detail::fmt(sw[1]) + " / " + detail::fmt(sw[2]);
            }
        });
    }

    CriterionResult ei_beats_euler() const {
        return timed("EI beats Euler at 8 ODE steps", [&](CriterionResult& r) {
            SamplerChoice ode;
            ode.kind = SamplerChoice::Kind::Ode;
            ode.ode_steps = 8;
            const double ei = toy_sw(toy_models_->teacher, ode);
            ode.solver = OdeSolver::Euler;
            const double euler = toy_sw(toy_models_->teacher, ode);
            r.pass = ei <= euler;
            r.detail = "sliced-W2 EI " + detail::fmt(ei) + ", Euler " + detail::fmt(euler);
        });
    }

    CriterionResult midpoint_in_bounds() const {
        return timed("slerp midpoints stay finite and near the data", [&](CriterionResult& r) {
            const auto& m = *toy_models_;
            Vec lo = m.truth.front(), hi = m.truth.front();
            for (const auto& p : m.truth)
                for (std::size_t i = 0; i < p.size(); ++i) {
                    lo[i] = std::min(lo[i], p[i]);
                    hi[i] = std::max(hi[i], p[i]);
                }
            const Cloud ys(m.ys.begin(), m.ys.begin() + std::min<std::size_t>(200, m.ys.size()));
            std::vector<TrajectoryTape> a, b;
            SamplerChoice choice;
            choice.nfe = 4;
            sample_batch(m.cbt, ys, choice, seed(SeedPurpose::SampleNoise), &a);
            sample_batch(m.cbt, ys, choice, seed(SeedPurpose::SampleNoise) + 1, &b);
            std::size_t inside = 0;
            const std::vector<double> half{0.5};
            for (std::size_t j = 0; j < ys.size(); ++j) {
                const Vec mid = interpolate(m.cbt, a[j], b[j], half).front();
                bool ok = all_finite(mid);
                for (std::size_t i = 0; i < mid.size(); ++i) {
                    const double c = 0.5 * (lo[i] + hi[i]), w = 0.75 * (hi[i] - lo[i]);
                    ok = ok && std::abs(mid[i] - c) <= w;
                }
                inside += ok;
            }
            r.pass = inside == ys.size();
            r.detail = std::to_string(inside) + "/" + std::to_string(ys.size()) + " inside 1.5x the data box";
        });
    }


    std::uint64_t seed(SeedPurpose p) const { return derive_seed(opts_.seed, p); }

    void schedule_algebra(CriterionResult& r) {
        r.title = "schedule algebra";
        Stream rng(seed(SeedPurpose::EvalData), 1);
        double worst_sum = 0.0, worst_quad = 0.0;
        for (const auto& id : preset_ids()) {
            const auto spec = ScheduleSpec::from_id(id);
            const double T = spec.horizon();
            for (int i = 0; i < 1000; ++i) {
                const auto e = spec.eval(rng.uniform(0.0, T));
                worst_sum = std::max(worst_sum, detail::rel_err(e.rho2 + e.rho_bar2, e.rho_T2));
            }
            for (int k = 1; k <= 9; ++k) {
                const double t = 0.1 * k * T;
                worst_quad = std::max(worst_quad, detail::rel_err(spec.eval(t).rho2, detail::quadrature_rho2(spec, t)));
            }
        }
        r.pass = worst_sum < tolerance::kSumIdentity && worst_quad < tolerance::kQuadrature;
        r.detail = "max rel err: sum identity " + detail::fmt(worst_sum) + ", quadrature " + detail::fmt(worst_quad);
    }

    void pinned_bridge(CriterionResult& r) {
        r.title = "pinned-bridge forward simulation moments";
        const std::size_t n_paths = 10000, n_steps = 2000;
        const std::vector<std::size_t> probes{200, 600, 1000, 1400, 1800};
        double worst = 0.0;
        std::uint64_t stream = 0;
        for (const char* id : {"brownian", "ddbm-ve"}) {
            const auto spec = ScheduleSpec::from_id(id);
            const Coupling pair{{0.7}, {-0.4}};
            const auto rows = forward_sde_moments(spec, pair, n_steps, n_paths,
                                                  Stream(seed(SeedPurpose::SampleNoise), ++stream).next_u64(), probes);
            for (const auto& row : rows) {
                const auto k = spec.coeffs(row.t);
                const double mean = k.a * pair.y[0] + k.b * pair.x[0], var = k.c * k.c;
                const double zm = (row.mean[0] - mean) / std::sqrt(var / n_paths);
                const double zv = (row.var[0] - var) / (var * std::sqrt(2.0 / (n_paths - 1)));
                worst = std::max({worst, std::abs(zm), std::abs(zv)});
            }
        }
        r.pass = worst < tolerance::kMomentSe;
        r.detail = "max |z| " + detail::fmt(worst) + " over 2 schedules x 5 times";
    }

    void solver_exactness(CriterionResult& r) {
        r.title = "solver exactness and coefficient identity";
        const auto spec = ScheduleSpec::from_id("brownian");
        const double x0 = -0.7, x1 = 1.3;
        double worst_step = 0.0;
        for (double t : {0.95, 0.7, 0.5, 0.3})
            for (double s : {0.6, 0.25, 0.01})
                for (double x_t : {-1.0, 0.25, 2.0}) {
                    if (!(s < t)) continue;
                    // Brownian bridge flow with x0 fixed: the residual scales by sqrt(s(1-s) / (t(1-t))).
                    const double want = (1 - s) * x0 + s * x1 +
                                        std::sqrt(s * (1 - s) / (t * (1 - t))) * (x_t - (1 - t) * x0 - t * x1);
                    const double got = ei_ode_step(spec, t, s, Vec{x_t}, Vec{x1}, Vec{x0})[0];
                    worst_step = std::max(worst_step, std::abs(got - want));
                }
        double worst_id = 0.0;
        for (const auto& id : preset_ids()) {
            const auto sp = ScheduleSpec::from_id(id);
            const double T = sp.horizon(), eps = 1e-4 * T, hi = T - 1e-3 * T;
            for (int i = 0; i < 100; ++i) {
                const double t = eps + (hi - eps) * i / 99.0;
                const auto bt = sp.coeffs(t);
                for (int j = 0; j <= i; ++j) {
                    const double rr = eps + (hi - eps) * j / 99.0;
                    const auto k = ode_step_coeffs(sp, t, rr);
                    const auto br = sp.coeffs(rr);
                    worst_id = std::max({worst_id, detail::rel_err(k.k1 * bt.a + k.k3, br.a),
                                         detail::rel_err(k.k1 * bt.b + k.k2, br.b), detail::rel_err(k.k1 * bt.c, br.c)});
                }
            }
        }
        r.pass = worst_step < tolerance::kSolverExact && worst_id < tolerance::kSolverExact;
        r.detail = "step abs err " + detail::fmt(worst_step) + ", identity rel err " + detail::fmt(worst_id);
    }

    void solver_order(CriterionResult& r) {
        r.title = "exponential-integrator convergence order";
        const std::vector<std::size_t> steps{8, 16, 32, 64, 128};
        const ConvergenceProblem p;
        const auto ei = convergence_order(p, OdeSolver::Ei, steps);
        const auto euler = convergence_order(p, OdeSolver::Euler, steps);
        r.pass = ei.slope >= tolerance::kSlopeLo && ei.slope <= tolerance::kSlopeHi && ei.errors[1] <= euler.errors[1];
        r.detail = "EI slope " + detail::fmt(ei.slope) + ", err@16 EI " + detail::fmt(ei.errors[1]) + " vs Euler " +
                   detail::fmt(euler.errors[1]);
    }

    void marginal_preservation(CriterionResult& r) {
        r.title = "reverse SDE then ODE preserves marginals";
        const std::vector<double> grid{0.8, 0.5, 0.2};
        const std::size_t n = 100000;
        const auto s = seed(SeedPurpose::SampleNoise);
        const auto hybrid = marginal_preservation_test(-0.4, 1.2, 0.1, grid, n, s);
        const auto pinned = marginal_preservation_test(-0.4, 1.2, 0.1, grid, n, s, HybridStart::PinnedOde);
        double worst = 0.0, control = 0.0;
        for (const auto& row : hybrid) worst = std::max({worst, std::abs(row.mean_z), std::abs(row.var_z)});
        bool control_fails = false;
        for (const auto& row : pinned) {
            control = std::max(control, std::abs(row.var_z));
            control_fails = control_fails || std::abs(row.var_z) >= tolerance::kMarginalZ;
        }
        r.pass = marginals_pass(hybrid, tolerance::kMarginalZ) && control_fails;
        r.detail = "hybrid max |z| " + detail::fmt(worst) + ", pinned control max |var z| " + detail::fmt(control);
    }

    void gap_ladder(CriterionResult& r) {
        r.title = "distillation/training gap shrinks faster than the step";
        const auto spec = ScheduleSpec::from_id("brownian");
        const double mu0 = 0.5, s0 = 0.8;
        const auto data = Dataset::from_id("gauss1d", {{"mu0", mu0}, {"s0", s0}, {"y0", 1.0}});
        const GaussianCouplingOracle oracle(Vec{mu0}, s0);
        auto teacher = [&](std::span<const double> x, double t, std::span<const double> y) {
            return oracle_data_pred(oracle, spec, t, x, y);
        };
        auto sampler = [&](Stream& rng) { return data.sample(rng); };
        const std::vector<double> ladder{0.2, 0.1, 0.05, 0.025};
        const auto stats = estimate_endpoint_stats(data.sample_n(2000, seed(SeedPurpose::Stats)));
        r.pass = true;
        for (auto scheme : {PrecondScheme::Edm, PrecondScheme::I2sb, PrecondScheme::Universal}) {
            BridgeNet net(spec, Precondition::make(spec, scheme, stats), 1, {16, 16});
            Stream rng(seed(SeedPurpose::Init));
            net.init(rng);
            const auto rows = prop3_gap_ladder(spec, net, teacher, sampler, ladder, 10000, seed(SeedPurpose::Train),
                                               net.t_min(), spec.horizon() - net.t_max());
            r.pass = r.pass && strictly_decreasing_ratios(rows);
            r.detail += (r.detail.empty() ? "" : "; ") + to_string(scheme) + " gap/dt";
            for (const auto& row : rows) r.detail += " " + detail::fmt(row.ratio);
        }
    }

    /// Short DBSM then CBT runs on gauss1d, one net per precondition scheme, passed through a checkpoint.
    const std::vector<BridgeNet>& trained_nets() {
        if (trained_) return *trained_;
        const auto spec = ScheduleSpec::from_id("ddbm-vp");
        const auto data = Dataset::from_id("gauss1d", {{"mu0", 0.5}, {"s0", 0.8}, {"y_noise", 0.5}});
        auto sampler = [&](Stream& rng) { return data.sample(rng); };
        const auto stats = estimate_endpoint_stats(data.sample_n(2000, seed(SeedPurpose::Stats)));
        std::vector<BridgeNet> nets;
        for (auto scheme : {PrecondScheme::Edm, PrecondScheme::I2sb, PrecondScheme::Universal}) {
            BridgeNet net(spec, Precondition::make(spec, scheme, stats), 1, {16, 16});
            Stream rng(seed(SeedPurpose::Init));
            net.init(rng);
            TrainSettings s;
            s.steps = 200;
            s.batch = 64;
            s.seed = seed(SeedPurpose::Train);
            train(net, sampler, s);
            s.objective = Objective::Cbt;
            s.steps = 100;
            s.lr = 2e-4;
            train(net, sampler, s);
            nets.push_back(checkpoint_from_json(Json::parse(checkpoint_to_json(net).dump())).net);
        }
        trained_ = std::move(nets);
        return *trained_;
    }

    void boundary(CriterionResult& r) {
        r.title = "boundary condition h(x, eps, y) = x";
        std::size_t checked = 0, exact = 0;
        Stream rng(seed(SeedPurpose::EvalData), 7);
        auto check = [&](const BridgeNet& net) {
            for (int i = 0; i < 50; ++i) {
                Vec x(net.dim()), y(net.dim());
                rng.fill_normal(x);
                rng.fill_normal(y);
                for (double& v : x) v *= 3.0;
                ++checked;
                if (net.consistency(x, net.t_min(), y) == x) ++exact;
            }
        };
        for (const auto& id : preset_ids()) {
            const auto spec = ScheduleSpec::from_id(id);
            for (auto scheme : {PrecondScheme::Edm, PrecondScheme::I2sb, PrecondScheme::Universal}) {
                BridgeNet net(spec, Precondition::make(spec, scheme, EndpointStats{0.9, 1.1, 0.3}), 2, {16, 16});
                Stream init(seed(SeedPurpose::Init));
                net.init(init);
                check(net);
            }
        }
        for (const auto& net : trained_nets()) check(net);
        r.pass = checked > 0 && exact == checked;
        r.detail = std::to_string(exact) + "/" + std::to_string(checked) +
                   " bit-exact (untrained on every preset, trained checkpoints for 3 schemes)";
    }

    void gradients(CriterionResult& r) {
        r.title = "loss gradients match central differences";
        const auto spec = ScheduleSpec::from_id("ddbm-vp");
        double worst = 0.0;
        for (auto scheme : {PrecondScheme::Edm, PrecondScheme::I2sb, PrecondScheme::Universal}) {
            auto make = [&](std::uint64_t s) {
                BridgeNet net(spec, Precondition::make(spec, scheme, EndpointStats{0.9, 1.1, 0.3}), 1, {16, 16});
                Stream rng(s);
                net.init(rng);
                return net;
            };
            BridgeNet net = make(seed(SeedPurpose::Init));
            const BridgeNet frozen = net;
            const BridgeNet teacher = make(seed(SeedPurpose::Init) + 1);
            const TrainingSchedule schedule(ConstantGap{0.1}, spec, net.t_min(), net.precondition().gamma);
            Stream rng(seed(SeedPurpose::Train));
            auto pairs = [](Stream& s) { return Coupling{{0.5 + 0.8 * s.normal()}, {s.normal()}}; };
            const auto batch = draw_batch(schedule, pairs, 24, rng, 0);
            auto target = [&](std::span<const double> x, double t, std::span<const double> y) {
                return frozen.consistency(x, t, y);
            };
            auto teach = [&](std::span<const double> x, double t, std::span<const double> y) {
                return teacher.data_pred(x, t, y);
            };
            const Metric m = Metric::squared_l2();
            const auto d = dbsm_loss(spec, net, DbsmWeighting::Unit, batch);
            worst = std::max(worst, detail::fd_relative_error(net.params(), d.grad, [&] {
                                 return dbsm_loss(spec, net, DbsmWeighting::Unit, batch, false).loss;
                             }));
            const auto c = cbd_loss(spec, net, target, teach, LossWeighting::Unit, m, batch);
            worst = std::max(worst, detail::fd_relative_error(net.params(), c.grad, [&] {
                                 return cbd_loss(spec, net, target, teach, LossWeighting::Unit, m, batch, false).loss;
                             }));
            const auto t = cbt_loss(spec, net, target, LossWeighting::Unit, m, batch);
            worst = std::max(worst, detail::fd_relative_error(net.params(), t.grad, [&] {
                                 return cbt_loss(spec, net, target, LossWeighting::Unit, m, batch, false).loss;
                             }));
        }
        r.pass = worst < tolerance::kGradient;
        r.detail = "max relative error " + detail::fmt(worst) + " over 3 losses x 3 schemes";
    }

    void toy_speedup(CriterionResult& r) {
        r.title = "two-step consistency sampling on mixture2d";
        const ToyRecipe& rc = opts_.recipe;
        const auto spec = ScheduleSpec::from_id("ddbm-vp");
        const auto data = Dataset::from_id("mixture2d");
        auto sampler = [&](Stream& rng) { return data.sample(rng); };
        const auto stats = estimate_endpoint_stats(data.sample_n(rc.stats_samples, seed(SeedPurpose::Stats)));
        BridgeNet teacher(spec, Precondition::make(spec, PrecondScheme::Edm, stats), 2, rc.hidden);
        Stream init(seed(SeedPurpose::Init));
        teacher.init(init);

        const auto start = std::chrono::steady_clock::now();
        TrainSettings pre;
        pre.steps = rc.pretrain_steps;
        pre.batch = rc.batch;
        pre.lr = rc.pretrain_lr;
        pre.lr_schedule = LrSchedule::Cosine;
        pre.seed = seed(SeedPurpose::Train);
        if (auto res = train(teacher, sampler, pre); res.diverged) throw std::runtime_error(res.message);

        TrainSettings ft = pre;
        ft.steps = rc.finetune_steps;
        ft.lr = rc.finetune_lr;
        ft.gap = rc.gap;
        ft.weighting = rc.weighting;
        ft.metric = rc.metric;
        ft.seed = seed(SeedPurpose::Train) + 1;
        BridgeNet cbd = teacher, cbt = teacher;
        ft.objective = Objective::Cbd;
        if (auto res = train(cbd, sampler, ft, &teacher); res.diverged) throw std::runtime_error(res.message);
        ft.objective = Objective::Cbt;
        if (auto res = train(cbt, sampler, ft); res.diverged) throw std::runtime_error(res.message);

        ToyComparison c;
        c.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const auto pairs = data.sample_n(rc.eval_samples, seed(SeedPurpose::EvalData));
        Cloud truth, ys;
        for (const auto& p : pairs) {
            truth.push_back(p.x);
            ys.push_back(p.y);
        }
        const auto noise = seed(SeedPurpose::SampleNoise), proj = seed(SeedPurpose::Projections);
        auto score = [&](const BridgeNet& net, const SamplerChoice& choice, double& energy) {
            const Cloud out = sample_batch(net, ys, choice, noise);
            energy = energy_distance(out, truth);
            return sliced_wasserstein2(out, truth, rc.projections, proj);
        };
        SamplerChoice ode;
        ode.kind = SamplerChoice::Kind::Ode;
        ode.ode_steps = 100;
        c.baseline = score(teacher, ode, c.energy_baseline);
        ode.ode_steps = 1;  // the gamma-skip evaluation plus one step: NFE 2
        c.ode2 = score(teacher, ode, c.energy_ode2);
        SamplerChoice two;
        two.nfe = 2;
        c.cbt = score(cbt, two, c.energy_cbt);
        c.cbd = score(cbd, two, c.energy_cbd);
        toy_ = c;
        toy_models_ = ToyModels{teacher, cbd, cbt, ys, truth};

        const bool b = c.cbt <= tolerance::kCbtRatio * c.baseline;
        const bool cc = c.cbd <= tolerance::kCbdRatio * c.baseline;
        const bool d = c.ode2 > c.cbt && c.ode2 > c.cbd;
        const bool budget = c.train_seconds <= tolerance::kTrainBudget;
        r.pass = b && cc && d && budget;
        r.detail = "sliced-W2 ode100=" + detail::fmt(c.baseline) + " cbt2=" + detail::fmt(c.cbt) + " (" +
                   detail::fmt(c.cbt / c.baseline) + "x) cbd2=" + detail::fmt(c.cbd) + " (" +
                   detail::fmt(c.cbd / c.baseline) + "x) ode-nfe2=" + detail::fmt(c.ode2) + "; training " +
                   detail::fmt(c.train_seconds) + " s";
    }

    void replay_and_interpolation(CriterionResult& r) {
        r.title = "tape replay and interpolation endpoints";
        std::size_t exact = 0, total = 0;
        for (const auto& net : trained_nets()) {
            Cloud ys(32, Vec{0.8});
            std::vector<TrajectoryTape> tapes;
            SamplerChoice choice;
            choice.nfe = 4;
            const auto out = sample_batch(net, ys, choice, seed(SeedPurpose::SampleNoise), &tapes);
            std::stringstream tape_text, first, second;
            write_tapes(tape_text, tapes);
            write_cloud_csv(first, out);
            Cloud again;
            for (const auto& tape : read_tapes(tape_text)) again.push_back(replay(net, tape));
            write_cloud_csv(second, again);
            ++total;
            if (first.str() == second.str()) ++exact;
            for (std::size_t j = 0; j + 1 < tapes.size(); j += 2) {
                const std::vector<double> w{0.0, 1.0};
                const auto ends = interpolate(net, tapes[j], tapes[j + 1], w);
                ++total;
                if (ends[0] == out[j] && ends[1] == out[j + 1]) ++exact;
            }
        }
        r.pass = total > 0 && exact == total;
        r.detail = std::to_string(exact) + "/" + std::to_string(total) + " replay and slerp-endpoint checks bit-exact";
    }
};

inline std::string format_result(const CriterionResult& r) {
    std::ostringstream os;
    os << (r.pass ? "PASS" : "FAIL") << "  ";
    if (r.id > 0) os << r.id << ". ";
    else os << "invariant: ";
    os << r.title << " [" << detail::fmt(r.seconds, 2) << " s] " << r.detail;
    return os.str();
}

/// Runs the selected criteria in order, reporting each as it finishes.
inline std::vector<CriterionResult> run_verify(const VerifyOptions& opts,
                                               const std::function<void(const CriterionResult&)>& on_result = {}) {
    Verifier v(opts);
    std::vector<CriterionResult> out;
    for (int id = 1; id <= 10; ++id) {
        if (!opts.only.empty() && !opts.only.contains(id)) continue;
        out.push_back(v.run(id));
        if (on_result) on_result(out.back());
    }
    for (auto& r : v.toy_invariants()) {
        out.push_back(std::move(r));
        if (on_result) on_result(out.back());
    }
    return out;
}

}  // namespace bridgekit
