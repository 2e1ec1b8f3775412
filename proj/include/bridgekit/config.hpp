#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <toml.hpp>

#include "dataset.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "sample.hpp"
#include "schedule.hpp"
#include "train.hpp"

namespace bridgekit {

/// Independent seeds for each consumer of randomness in a run.
enum class SeedPurpose : std::uint64_t { Init = 1, Train, Stats, EvalData, SampleNoise, Projections };

inline std::uint64_t derive_seed(std::uint64_t seed, SeedPurpose p) {
    return Stream(seed, 0xB000 + static_cast<std::uint64_t>(p)).next_u64();
}

struct ModelConfig {
    std::vector<std::size_t> hidden{64, 64, 64};
    PrecondScheme precondition = PrecondScheme::Edm;
    std::size_t stats_samples = 4096;
};

struct SampleConfig {
    SamplerChoice choice;
    std::size_t n = 2000;
};

struct EvalConfig {
    std::size_t projections = 256;
};

struct ExperimentConfig {
    std::string schedule = "brownian";
    std::map<std::string, double> schedule_params;
    std::string dataset = "gauss1d";
    std::map<std::string, double> dataset_params;
    ModelConfig model;
    TrainSettings pretrain{.objective = Objective::Dbsm};
    TrainSettings distill{.objective = Objective::Cbd};
    TrainSettings cbt{.objective = Objective::Cbt};
    SampleConfig sample;
    EvalConfig eval;
    std::uint64_t seed = 0;
    std::filesystem::path out = "runs/default";
    std::filesystem::path teacher;     // pretrained checkpoint for distill
    std::filesystem::path init;        // optional starting checkpoint for distill / cbt
    std::filesystem::path checkpoint;  // model used by sample / eval

    ScheduleSpec schedule_spec() const { return ScheduleSpec::from_id(schedule, schedule_params); }
    Dataset dataset_spec() const { return Dataset::from_id(dataset, dataset_params); }

    TrainSettings& stage(Objective o) { return o == Objective::Dbsm ? pretrain : o == Objective::Cbd ? distill : cbt; }
    const TrainSettings& stage(Objective o) const {
        return o == Objective::Dbsm ? pretrain : o == Objective::Cbd ? distill : cbt;
    }
};

namespace detail {

template <class E>
E parse_enum(const std::string& what, const std::string& s, std::initializer_list<std::pair<const char*, E>> opts) {
    std::string names;
    for (const auto& [name, v] : opts) {
        if (s == name) return v;
        names += (names.empty() ? "" : ", ") + std::string(name);
    }
    throw std::invalid_argument(what + ": unknown value '" + s + "' (expected " + names + ")");
}

inline void check_keys(const toml::table& t, const std::string& where, const std::set<std::string>& allowed) {
    for (const auto& [k, v] : t)
        if (!allowed.contains(std::string(k.str())))
            throw std::invalid_argument("config: unknown key '" + std::string(k.str()) + "' in [" + where + "]");
}

inline const toml::table* sub_table(const toml::table& t, const char* key, const std::string& where) {
    const toml::node* n = t.get(key);
    if (!n) return nullptr;
    if (!n->is_table()) throw std::invalid_argument("config: '" + where + "." + key + "' must be a table");
    return n->as_table();
}

template <class T>
void read(const toml::table& t, const char* key, const std::string& where, T& dst) {
    const toml::node* n = t.get(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
        const auto v = n->value<std::string>();
        if (!v) throw std::invalid_argument("config: '" + where + "." + key + "' must be a string");
        dst = *v;
    } else if constexpr (std::is_same_v<T, bool>) {
        const auto v = n->value<bool>();
        if (!v) throw std::invalid_argument("config: '" + where + "." + key + "' must be a boolean");
        dst = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
        const auto v = n->value<double>();
        if (!v) throw std::invalid_argument("config: '" + where + "." + key + "' must be a number");
        dst = *v;
    } else {
        const auto v = n->value<std::int64_t>();
        if (!v || *v < 0) throw std::invalid_argument("config: '" + where + "." + key + "' must be a non-negative integer");
        dst = static_cast<T>(*v);
    }
}

inline std::map<std::string, double> read_params(const toml::table& t, const std::string& where) {
    std::map<std::string, double> out;
    for (const auto& [k, v] : t) {
        const auto d = v.value<double>();
        if (!d) throw std::invalid_argument("config: '" + where + "." + std::string(k.str()) + "' must be a number");
        out[std::string(k.str())] = *d;
    }
    return out;
}

inline const std::set<std::string> kTrainKeys{"steps",      "batch",      "lr",         "lr_schedule", "gap",
                                              "dt",         "q",          "s",          "k",           "b",
                                              "dt_max",     "dt_min",     "weighting",  "metric",      "huber_c",
                                              "dbsm_weighting", "log_every", "divergence_threshold"};

inline void read_train(const toml::table& t, const std::string& where, TrainSettings& s, std::size_t dim) {
    check_keys(t, where, kTrainKeys);
    read(t, "steps", where, s.steps);
    read(t, "batch", where, s.batch);
    read(t, "lr", where, s.lr);
    read(t, "log_every", where, s.log_every);
    read(t, "divergence_threshold", where, s.divergence_threshold);
    std::string v;
    if (t.contains("lr_schedule")) {
        read(t, "lr_schedule", where, v);
        s.lr_schedule = parse_enum<LrSchedule>(where + ".lr_schedule", v,
                                               {{"constant", LrSchedule::Constant}, {"cosine", LrSchedule::Cosine}});
    }
    if (t.contains("gap")) {
        read(t, "gap", where, v);
        const bool sigmoid = parse_enum<bool>(where + ".gap", v, {{"constant", false}, {"sigmoid", true}});
        if (sigmoid != std::holds_alternative<SigmoidGap>(s.gap))
            s.gap = sigmoid ? TrainingSchedule::Kind{SigmoidGap{}} : TrainingSchedule::Kind{ConstantGap{}};
    }
    if (auto* c = std::get_if<ConstantGap>(&s.gap)) {
        read(t, "dt", where, c->dt);
        for (const char* k : {"q", "s", "k", "b", "dt_max", "dt_min"})
            if (t.contains(k)) throw std::invalid_argument("config: '" + where + "." + k + "' needs gap = \"sigmoid\"");
    } else {
        auto& g = std::get<SigmoidGap>(s.gap);
        if (t.contains("dt")) throw std::invalid_argument("config: '" + where + ".dt' needs gap = \"constant\"");
        read(t, "q", where, g.q);
        read(t, "s", where, g.s);
        read(t, "k", where, g.k);
        read(t, "b", where, g.b);
        read(t, "dt_max", where, g.dt_max);
        read(t, "dt_min", where, g.dt_min);
    }
    if (t.contains("weighting")) {
        read(t, "weighting", where, v);
        s.weighting = parse_enum<LossWeighting>(where + ".weighting", v,
                                                {{"unit", LossWeighting::Unit}, {"inverse-gap", LossWeighting::InverseGap}});
    }
    if (t.contains("dbsm_weighting")) {
        read(t, "dbsm_weighting", where, v);
        s.dbsm_weighting = parse_enum<DbsmWeighting>(
            where + ".dbsm_weighting", v, {{"unit", DbsmWeighting::Unit}, {"snr", DbsmWeighting::SignalToNoise}});
    }
    if (t.contains("metric")) {
        read(t, "metric", where, v);
        const bool huber = parse_enum<bool>(where + ".metric", v, {{"l2", false}, {"pseudo-huber", true}});
        s.metric = huber ? Metric::pseudo_huber(dim) : Metric::squared_l2();
    }
    if (t.contains("huber_c")) {
        if (s.metric.kind != Metric::Kind::PseudoHuber)
            throw std::invalid_argument("config: '" + where + ".huber_c' needs metric = \"pseudo-huber\"");
        read(t, "huber_c", where, s.metric.c);
    }
}

inline toml::table write_train(const TrainSettings& s) {
    toml::table t{{"steps", static_cast<std::int64_t>(s.steps)},
                  {"batch", static_cast<std::int64_t>(s.batch)},
                  {"lr", s.lr},
                  {"lr_schedule", s.lr_schedule == LrSchedule::Cosine ? "cosine" : "constant"},
                  {"weighting", s.weighting == LossWeighting::Unit ? "unit" : "inverse-gap"},
                  {"dbsm_weighting", s.dbsm_weighting == DbsmWeighting::Unit ? "unit" : "snr"},
                  {"metric", s.metric.kind == Metric::Kind::SquaredL2 ? "l2" : "pseudo-huber"},
                  {"log_every", static_cast<std::int64_t>(s.log_every)},
                  {"divergence_threshold", s.divergence_threshold}};
    if (s.metric.kind == Metric::Kind::PseudoHuber) t.insert("huber_c", s.metric.c);
    if (const auto* c = std::get_if<ConstantGap>(&s.gap)) {
        t.insert("gap", "constant");
        t.insert("dt", c->dt);
    } else {
        const auto& g = std::get<SigmoidGap>(s.gap);
        t.insert("gap", "sigmoid");
        t.insert("q", g.q);
        t.insert("s", g.s);
        t.insert("k", g.k);
        t.insert("b", g.b);
        t.insert("dt_max", g.dt_max);
        t.insert("dt_min", g.dt_min);
    }
    return t;
}

inline toml::table write_params(const std::map<std::string, double>& p) {
    toml::table t;
    for (const auto& [k, v] : p) t.insert(k, v);
    return t;
}

}  // namespace detail

/**
 * Settings under [train] apply to every stage; [train.pretrain], [train.distill]
 * and [train.cbt] override them per stage.
 */
inline ExperimentConfig parse_config(const toml::table& root) {
    using namespace detail;
    ExperimentConfig c;
    check_keys(root, "", {"run", "schedule", "dataset", "model", "train", "sample", "eval"});

    if (auto* t = sub_table(root, "run", "")) {
        check_keys(*t, "run", {"seed", "out", "teacher", "init", "checkpoint"});
        read(*t, "seed", "run", c.seed);
        read(*t, "out", "run", c.out);
        read(*t, "teacher", "run", c.teacher);
        read(*t, "init", "run", c.init);
        read(*t, "checkpoint", "run", c.checkpoint);
    }
    if (auto* t = sub_table(root, "schedule", "")) {
        check_keys(*t, "schedule", {"id", "params"});
        read(*t, "id", "schedule", c.schedule);
        if (auto* p = sub_table(*t, "params", "schedule")) c.schedule_params = read_params(*p, "schedule.params");
    }
    if (auto* t = sub_table(root, "dataset", "")) {
        check_keys(*t, "dataset", {"id", "params"});
        read(*t, "id", "dataset", c.dataset);
        if (auto* p = sub_table(*t, "params", "dataset")) c.dataset_params = read_params(*p, "dataset.params");
    }
    const std::size_t dim = c.dataset_spec().dim();
    c.schedule_spec();

    if (auto* t = sub_table(root, "model", "")) {
        check_keys(*t, "model", {"hidden", "precondition", "stats_samples"});
        if (const toml::node* n = t->get("hidden")) {
            const auto* arr = n->as_array();
            if (!arr || arr->empty()) throw std::invalid_argument("config: 'model.hidden' must be a non-empty array");
            c.model.hidden.clear();
            for (const auto& w : *arr) {
                const auto v = w.value<std::int64_t>();
                if (!v || *v <= 0) throw std::invalid_argument("config: 'model.hidden' entries must be positive integers");
                c.model.hidden.push_back(static_cast<std::size_t>(*v));
            }
        }
        std::string scheme;
        if (t->contains("precondition")) {
            read(*t, "precondition", "model", scheme);
            c.model.precondition = parse_precond_scheme(scheme);
        }
        read(*t, "stats_samples", "model", c.model.stats_samples);
    }
    if (auto* t = sub_table(root, "train", "")) {
        toml::table common = *t;
        for (const char* stage : {"pretrain", "distill", "cbt"}) common.erase(stage);
        for (Objective o : {Objective::Dbsm, Objective::Cbd, Objective::Cbt}) read_train(common, "train", c.stage(o), dim);
        for (auto [name, o] : {std::pair{"pretrain", Objective::Dbsm}, {"distill", Objective::Cbd}, {"cbt", Objective::Cbt}})
            if (auto* s = sub_table(*t, name, "train")) read_train(*s, std::string("train.") + name, c.stage(o), dim);
    }
    if (auto* t = sub_table(root, "sample", "")) {
        check_keys(*t, "sample", {"sampler", "nfe", "second_time", "ode_steps", "solver", "n"});
        auto& s = c.sample.choice;
        std::string v;
        if (t->contains("sampler")) {
            read(*t, "sampler", "sample", v);
            s.kind = parse_enum<SamplerChoice::Kind>(
                "sample.sampler", v, {{"consistency", SamplerChoice::Kind::Consistency}, {"ode", SamplerChoice::Kind::Ode}});
        }
        read(*t, "nfe", "sample", s.nfe);
        read(*t, "second_time", "sample", s.second_time);
        read(*t, "ode_steps", "sample", s.ode_steps);
        if (t->contains("solver")) {
            read(*t, "solver", "sample", v);
            s.solver = parse_enum<OdeSolver>("sample.solver", v, {{"ei", OdeSolver::Ei}, {"euler", OdeSolver::Euler}});
        }
        read(*t, "n", "sample", c.sample.n);
    }
    if (auto* t = sub_table(root, "eval", "")) {
        check_keys(*t, "eval", {"projections"});
        read(*t, "projections", "eval", c.eval.projections);
    }
    if (c.model.stats_samples < 2) throw std::invalid_argument("config: 'model.stats_samples' must be at least 2");
    if (c.sample.n == 0) throw std::invalid_argument("config: 'sample.n' must be positive");
    if (c.sample.choice.nfe < 2) throw std::invalid_argument("config: 'sample.nfe' must be at least 2");
    if (c.eval.projections == 0) throw std::invalid_argument("config: 'eval.projections' must be positive");
    return c;
}

inline ExperimentConfig parse_config_string(std::string_view text, std::string_view source = "config") {
    try {
        return parse_config(toml::parse(text, source));
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config: " << e.description() << " at " << e.source().begin;
        throw std::invalid_argument(msg.str());
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_string(ss.str(), path.string());
}

/// The fully resolved configuration; parse_config() of the result reproduces it.
inline std::string config_to_toml(const ExperimentConfig& c) {
    using namespace detail;
    toml::array hidden;
    for (auto w : c.model.hidden) hidden.push_back(static_cast<std::int64_t>(w));
    const auto& s = c.sample.choice;
    toml::table run{{"seed", static_cast<std::int64_t>(c.seed)}, {"out", c.out.string()}};
    if (!c.teacher.empty()) run.insert("teacher", c.teacher.string());
    if (!c.init.empty()) run.insert("init", c.init.string());
    if (!c.checkpoint.empty()) run.insert("checkpoint", c.checkpoint.string());
    toml::table train{{"pretrain", write_train(c.pretrain)}, {"distill", write_train(c.distill)},
                      {"cbt", write_train(c.cbt)}};
    toml::table root{
        {"run", run},
        {"schedule", toml::table{{"id", c.schedule}, {"params", write_params(c.schedule_params)}}},
        {"dataset", toml::table{{"id", c.dataset}, {"params", write_params(c.dataset_params)}}},
        {"model", toml::table{{"hidden", hidden},
                              {"precondition", to_string(c.model.precondition)},
                              {"stats_samples", static_cast<std::int64_t>(c.model.stats_samples)}}},
        {"train", train},
        {"sample", toml::table{{"sampler", s.kind == SamplerChoice::Kind::Ode ? "ode" : "consistency"},
                               {"nfe", static_cast<std::int64_t>(s.nfe)},
                               {"second_time", s.second_time},
                               {"ode_steps", static_cast<std::int64_t>(s.ode_steps)},
                               {"solver", to_string(s.solver)},
                               {"n", static_cast<std::int64_t>(c.sample.n)}}},
        {"eval", toml::table{{"projections", static_cast<std::int64_t>(c.eval.projections)}}},
    };
    std::ostringstream out;
    out << root << '\n';
    return out.str();
}

}  // namespace bridgekit
