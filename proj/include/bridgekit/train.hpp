#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bridge.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "solver.hpp"
#include "vec.hpp"

namespace bridgekit {

/// r(t) = max(t - dt, eps).
struct ConstantGap {
    double dt = 1.0 / 36.0;
};

/**
 * r(t) = t (1 - q^-floor(iters/s)) (1 + k / (1 + exp(b t / T))), clamped into
 * [t - dt_max, t - dt_min] and then to at least eps.
 */
struct SigmoidGap {
    double q = 2.0;
    double s = 5000.0;
    double k = 8.0;
    double b = 20.0;
    double dt_max = 1.0 / 9.0;
    double dt_min = 1.0 / 120.0;
};

class TrainingSchedule {
public:
    using Kind = std::variant<ConstantGap, SigmoidGap>;

    /// Gaps given for a unit horizon are scaled by T.
    TrainingSchedule(Kind kind, const ScheduleSpec& spec, double eps, double gamma)
        : kind_(kind), horizon_(spec.horizon()), eps_(eps), t_max_(spec.horizon() - gamma) {
        if (!(eps_ > 0.0 && eps_ < t_max_)) throw std::invalid_argument("training schedule: need 0 < eps < T - gamma");
        if (auto* c = std::get_if<ConstantGap>(&kind_)) {
            if (!(c->dt > 0.0)) throw std::invalid_argument("constant gap: dt must be positive");
            c->dt *= horizon_;
        } else {
            auto& s = std::get<SigmoidGap>(kind_);
            if (!(s.q > 1.0 && s.s >= 1.0 && s.dt_min > 0.0 && s.dt_max >= s.dt_min))
                throw std::invalid_argument("sigmoid gap: need q > 1, s >= 1, 0 < dt_min <= dt_max");
            s.dt_max *= horizon_;
            s.dt_min *= horizon_;
        }
    }

    const Kind& kind() const { return kind_; }
    double eps() const { return eps_; }
    double t_max() const { return t_max_; }

    /// Uniform on (eps, T - gamma].
    double sample_t(Stream& rng) const { return t_max_ - rng.uniform() * (t_max_ - eps_); }

    double r(double t, std::size_t iters) const {
        if (!(t > eps_)) throw std::invalid_argument("training schedule: t must exceed eps");
        double r = 0.0;
        if (const auto* c = std::get_if<ConstantGap>(&kind_)) {
            r = t - c->dt;
        } else {
            const auto& s = std::get<SigmoidGap>(kind_);
            r = t * gap_factor(iters) * (1.0 + s.k / (1.0 + std::exp(s.b * t / horizon_)));
            r = std::clamp(r, t - s.dt_max, t - s.dt_min);
        }
        return std::max(r, eps_);
    }

    /// The (1 - q^-floor(iters/s)) factor; 0 for constant gaps.
    double gap_factor(std::size_t iters) const {
        const auto* s = std::get_if<SigmoidGap>(&kind_);
        if (!s) return 0.0;
        const double stage = std::floor(static_cast<double>(iters) / s->s);
        return 1.0 - std::pow(s->q, -stage);
    }

private:
    Kind kind_;
    double horizon_;
    double eps_;
    double t_max_;
};

enum class LossWeighting { Unit, InverseGap };

/// Weighting of the x0-prediction pretraining loss: 1, or b_t^2 / c_t^2.
enum class DbsmWeighting { Unit, SignalToNoise };

struct Metric {
    enum class Kind { SquaredL2, PseudoHuber };
    Kind kind = Kind::SquaredL2;
    double c = 0.0;

    static Metric squared_l2() { return {}; }
    /// c defaults to 0.03 sqrt(dim).
    static Metric pseudo_huber(std::size_t dim, std::optional<double> c = std::nullopt) {
        return {Kind::PseudoHuber, c.value_or(0.03 * std::sqrt(static_cast<double>(dim)))};
    }

    double value(std::span<const double> u, std::span<const double> v) const {
        double s = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
        return kind == Kind::SquaredL2 ? s : std::sqrt(s + c * c) - c;
    }

    /// Gradient with respect to u.
    Vec grad(std::span<const double> u, std::span<const double> v) const {
        Vec g(u.size());
        double scale = 2.0;
        if (kind == Kind::PseudoHuber) {
            double s = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
            scale = 1.0 / std::sqrt(s + c * c);
        }
        for (std::size_t i = 0; i < u.size(); ++i) g[i] = scale * (u[i] - v[i]);
        return g;
    }
};

/// One training sample with the noise shared between times t and r.
struct TrainingDraw {
    Vec x;
    Vec y;
    Vec z;
    double t = 0.0;
    double r = 0.0;
};

template <class Sampler>
std::vector<TrainingDraw> draw_batch(const TrainingSchedule& schedule, Sampler&& sample_pair, std::size_t batch,
                                     Stream& rng, std::size_t iters) {
    std::vector<TrainingDraw> out(batch);
    for (auto& d : out) {
        Coupling pair = sample_pair(rng);
        d.x = std::move(pair.x);
        d.y = std::move(pair.y);
        d.z.resize(d.x.size());
        rng.fill_normal(d.z);
        d.t = schedule.sample_t(rng);
        d.r = schedule.r(d.t, iters);
    }
    return out;
}

struct LossValue {
    double loss = 0.0;
    Vec grad;  // empty when not requested
};

namespace detail {

inline constexpr std::size_t kLossChunk = 16;

/**
 * Mean of per-sample losses. `sample_loss(draw, grad_or_null)` returns one loss
 * and accumulates its gradient. Chunks are reduced in a fixed order, so the
 * result does not depend on the thread count.
 */
template <class SampleLoss>
LossValue batch_mean(std::span<const TrainingDraw> batch, std::size_t n_params, bool with_grad,
                     SampleLoss&& sample_loss) {
    if (batch.empty()) throw std::invalid_argument("loss needs a non-empty batch");
    const std::size_t chunks = (batch.size() + kLossChunk - 1) / kLossChunk;
    std::vector<double> losses(chunks, 0.0);
    std::vector<Vec> grads(with_grad ? chunks : 0);
    parallel_for(chunks, [&](std::size_t c) {
        Vec* g = nullptr;
        if (with_grad) {
            grads[c].assign(n_params, 0.0);
            g = &grads[c];
        }
        const std::size_t end = std::min(batch.size(), (c + 1) * kLossChunk);
        for (std::size_t i = c * kLossChunk; i < end; ++i) losses[c] += sample_loss(batch[i], g);
    });
    const double inv = 1.0 / static_cast<double>(batch.size());
    LossValue out;
    for (double l : losses) out.loss += l;
    out.loss *= inv;
    if (with_grad) {
        out.grad.assign(n_params, 0.0);
        for (const Vec& g : grads)
            for (std::size_t i = 0; i < n_params; ++i) out.grad[i] += g[i];
        for (double& g : out.grad) g *= inv;
    }
    return out;
}

inline double loss_weight(LossWeighting w, double t, double r) {
    if (w == LossWeighting::Unit) return 1.0;
    return 1.0 / (t - r);
}

inline void require_gap(const TrainingDraw& d) {
    if (!(d.r < d.t)) throw std::logic_error("consistency loss drawn with r >= t");
}

inline void require_finite_loss(double loss, double t) {
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss at t=" + std::to_string(t));
}

}  // namespace detail

/**
 * x0-prediction bridge score matching: w(t) |x_theta(x_t, t, y) - x|^2 with
 * x_t = a_t y + b_t x + c_t z. Model needs data_pred / data_pred_backward.
 */
template <class Model>
LossValue dbsm_loss(const ScheduleSpec& spec, const Model& model, DbsmWeighting weighting,
                    std::span<const TrainingDraw> batch, bool with_grad = true) {
    return detail::batch_mean(batch, model.n_params(), with_grad, [&](const TrainingDraw& d, Vec* grad) {
        const Vec x_t = sample_bridge_point(spec, d.t, {d.x, d.y}, d.z);
        double w = 1.0;
        if (weighting == DbsmWeighting::SignalToNoise) {
            const auto k = spec.coeffs(d.t);
            w = (k.b * k.b) / (k.c * k.c);
        }
        Vec pred;
        if (grad) {
            pred = model.data_pred_backward(
                x_t, d.t, d.y,
                [&](const Vec& out) {
                    Vec g(out.size());
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * w * (out[i] - d.x[i]);
                    return g;
                },
                *grad);
        } else {
            pred = model.data_pred(x_t, d.t, d.y);
        }
        double loss = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) loss += (pred[i] - d.x[i]) * (pred[i] - d.x[i]);
        loss *= w;
        detail::require_finite_loss(loss, d.t);
        return loss;
    });
}

namespace detail {

template <class Online>
double consistency_term(const Online& online, const Vec& x_t, const TrainingDraw& d, const Vec& target,
                        double lambda, const Metric& metric, Vec* grad) {
    Vec h;
    if (grad) {
        h = online.consistency_backward(
            x_t, d.t, d.y,
            [&](const Vec& out) {
                Vec g = metric.grad(out, target);
                for (double& v : g) v *= lambda;
                return g;
            },
            *grad);
    } else {
        h = online.consistency(x_t, d.t, d.y);
    }
    const double loss = lambda * metric.value(h, target);
    require_finite_loss(loss, d.t);
    return loss;
}

}  // namespace detail

/**
 * Consistency bridge distillation:
 *   lambda d(h_theta(x_t, t, y), h_target(xhat_r, r, y)),
 * with xhat_r one exponential-integrator step from t to r using the teacher's
 * data prediction. Only the first argument of d carries gradient.
 */
template <class Online, class Target, class Teacher>
LossValue cbd_loss(const ScheduleSpec& spec, const Online& online, const Target& target, const Teacher& teacher,
                   LossWeighting weighting, const Metric& metric, std::span<const TrainingDraw> batch,
                   bool with_grad = true) {
    return detail::batch_mean(batch, online.n_params(), with_grad, [&](const TrainingDraw& d, Vec* grad) {
        detail::require_gap(d);
        const Vec x_t = sample_bridge_point(spec, d.t, {d.x, d.y}, d.z);
        const Vec x_r = ei_ode_step(spec, d.t, d.r, x_t, d.y, teacher(x_t, d.t, d.y));
        const Vec goal = target(x_r, d.r, d.y);
        return detail::consistency_term(online, x_t, d, goal, detail::loss_weight(weighting, d.t, d.r), metric, grad);
    });
}

/// Consistency bridge training: the target input is a_r y + b_r x + c_r z with the same z as x_t.
template <class Online, class Target>
LossValue cbt_loss(const ScheduleSpec& spec, const Online& online, const Target& target, LossWeighting weighting,
                   const Metric& metric, std::span<const TrainingDraw> batch, bool with_grad = true) {
    return detail::batch_mean(batch, online.n_params(), with_grad, [&](const TrainingDraw& d, Vec* grad) {
        detail::require_gap(d);
        const Vec x_t = sample_bridge_point(spec, d.t, {d.x, d.y}, d.z);
        const Vec x_r = sample_bridge_point(spec, d.r, {d.x, d.y}, d.z);
        const Vec goal = target(x_r, d.r, d.y);
        return detail::consistency_term(online, x_t, d, goal, detail::loss_weight(weighting, d.t, d.r), metric, grad);
    });
}

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Vec m;
    Vec v;
    std::size_t steps = 0;

    void step(Vec& params, std::span<const double> grad) {
        require_same_dim(params.size(), grad.size(), "Adam::step");
        if (m.empty()) {
            m.assign(params.size(), 0.0);
            v.assign(params.size(), 0.0);
        }
        ++steps;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

enum class Objective { Dbsm, Cbd, Cbt };

enum class LrSchedule { Constant, Cosine };

inline std::string to_string(Objective o) {
    switch (o) {
        case Objective::Dbsm: return "dbsm";
        case Objective::Cbd: return "cbd";
        case Objective::Cbt: return "cbt";
    }
    return "?";
}

struct TrainSettings {
    Objective objective = Objective::Dbsm;
    std::size_t steps = 1000;
    std::size_t batch = 128;
    double lr = 1e-3;
    LrSchedule lr_schedule = LrSchedule::Constant;
    std::uint64_t seed = 0;
    TrainingSchedule::Kind gap = ConstantGap{};
    LossWeighting weighting = LossWeighting::Unit;
    Metric metric = Metric::squared_l2();
    DbsmWeighting dbsm_weighting = DbsmWeighting::Unit;
    std::size_t log_every = 100;
    double divergence_threshold = 1e6;
};

struct LogRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double gap_factor = 0.0;
    double mean_gap = 0.0;  // mean t - r over the batch; 0 for pretraining
    double lr = 0.0;
    double wallclock = 0.0;
};

/// Learning rate at `step`; the cosine schedule decays to zero at the last step.
inline double learning_rate(const TrainSettings& s, std::size_t step) {
    if (s.lr_schedule == LrSchedule::Constant || s.steps <= 1) return s.lr;
    const double progress = static_cast<double>(step) / static_cast<double>(s.steps - 1);
    return 0.5 * s.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

struct TrainResult {
    std::size_t steps_done = 0;
    bool diverged = false;
    std::string message;
    double last_loss = 0.0;
};

/// Stream used for the batch at a given step.
inline Stream training_stream(std::uint64_t seed, std::size_t step) { return Stream(seed, 1).split(step); }

/**
 * Runs `settings.steps` Adam steps on `net` in place. The target network is
 * the online parameters themselves (pure stopgrad). On divergence the
 * parameters are restored to the last step whose loss was acceptable.
 * `teacher` is required for distillation and ignored otherwise.
 */
template <class Sampler>
TrainResult train(BridgeNet& net, Sampler&& sample_pair, const TrainSettings& settings,
                  const BridgeNet* teacher = nullptr,
                  const std::function<void(const LogRecord&)>& on_log = {}) {
    if (settings.objective == Objective::Cbd && !teacher)
        throw std::invalid_argument("distillation needs a pretrained teacher");
    if (settings.batch == 0) throw std::invalid_argument("batch size must be positive");
    const ScheduleSpec& spec = net.schedule();
    const TrainingSchedule schedule(settings.gap, spec, net.t_min(), net.precondition().gamma);
    Adam adam;
    adam.lr = settings.lr;
    const auto start = std::chrono::steady_clock::now();
    auto target = [&](std::span<const double> x, double t, std::span<const double> y) {
        return net.consistency(x, t, y);
    };
    auto teacher_pred = [&](std::span<const double> x, double t, std::span<const double> y) {
        return teacher->data_pred(x, t, y);
    };

    TrainResult result;
    Vec last_good = net.params();
    for (std::size_t step = 0; step < settings.steps; ++step) {
        Stream rng = training_stream(settings.seed, step);
        const auto batch = draw_batch(schedule, sample_pair, settings.batch, rng, step);
        LossValue lv;
        try {
            switch (settings.objective) {
                case Objective::Dbsm: lv = dbsm_loss(spec, net, settings.dbsm_weighting, batch); break;
                case Objective::Cbd:
                    lv = cbd_loss(spec, net, target, teacher_pred, settings.weighting, settings.metric, batch);
                    break;
                case Objective::Cbt: lv = cbt_loss(spec, net, target, settings.weighting, settings.metric, batch); break;
            }
        } catch (const std::runtime_error& e) {
            lv.loss = std::numeric_limits<double>::quiet_NaN();
            result.message = e.what();
        }
        if (!std::isfinite(lv.loss) || lv.loss > settings.divergence_threshold || !all_finite(lv.grad)) {
            net.params() = last_good;
            result.diverged = true;
            if (result.message.empty())
                result.message = "loss " + std::to_string(lv.loss) + " exceeded divergence threshold";
            result.message = "diverged at step " + std::to_string(step) + ": " + result.message;
            return result;
        }
        last_good = net.params();
        result.last_loss = lv.loss;
        if (on_log && (step % std::max<std::size_t>(settings.log_every, 1) == 0 || step + 1 == settings.steps)) {
            LogRecord rec;
            rec.step = step;
            rec.loss = lv.loss;
            rec.gap_factor = schedule.gap_factor(step);
            rec.lr = learning_rate(settings, step);
            if (settings.objective != Objective::Dbsm) {
                for (const auto& d : batch) rec.mean_gap += d.t - d.r;
                rec.mean_gap /= static_cast<double>(batch.size());
            }
            rec.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            on_log(rec);
        }
        adam.lr = learning_rate(settings, step);
        adam.step(net.params(), lv.grad);
        result.steps_done = step + 1;
    }
    return result;
}

}  // namespace bridgekit
