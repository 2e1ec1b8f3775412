#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "io.hpp"
#include "verify.hpp"

namespace bridgekit {

/// Training stopped because the loss blew up; the last good parameters were kept.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A checkpoint named by the config does not exist.
struct MissingCheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per-invocation options that are not part of the experiment config.
struct CommandOptions {
    std::optional<std::filesystem::path> replay;   // sample: regenerate from a tape file
    std::optional<std::filesystem::path> samples;  // eval: score an existing samples.csv
    std::set<int> only;                            // verify: subset of criteria
};

namespace cli_detail {

inline Checkpoint load_required(const std::filesystem::path& path, const std::string& role) {
    if (path.empty()) throw std::invalid_argument("config: run." + role + " is required for this command");
    if (!std::filesystem::exists(path)) throw MissingCheckpointError("missing " + role + " checkpoint " + path.string());
    return load_checkpoint(path);
}

inline void prepare(const ExperimentConfig& c) {
    std::filesystem::create_directories(c.out);
    open_output(c.out / "config.toml") << config_to_toml(c);
}

inline std::vector<Coupling> eval_pairs(const ExperimentConfig& c) {
    return c.dataset_spec().sample_n(c.sample.n, derive_seed(c.seed, SeedPurpose::EvalData));
}

inline std::string sampler_label(const SamplerChoice& s) {
    if (s.kind == SamplerChoice::Kind::Ode) return "ode-" + to_string(s.solver) + "-" + std::to_string(s.ode_steps);
    return "consistency-nfe" + std::to_string(s.nfe);
}

/// Samples one output per evaluation condition and writes samples.csv, conditions.csv and tapes.
inline Cloud sample_and_write(const ExperimentConfig& c, const BridgeNet& net, const SamplerChoice& choice) {
    Cloud ys;
    for (const auto& p : eval_pairs(c)) ys.push_back(p.y);
    std::vector<TrajectoryTape> tapes;
    const bool stochastic = choice.kind == SamplerChoice::Kind::Consistency;
    const Cloud out = sample_batch(net, ys, choice, derive_seed(c.seed, SeedPurpose::SampleNoise),
                                   stochastic ? &tapes : nullptr);
    auto samples = open_output(c.out / "samples.csv");
    write_cloud_csv(samples, out);
    auto conditions = open_output(c.out / "conditions.csv");
    write_cloud_csv(conditions, ys);
    if (stochastic) {
        auto tape_file = open_output(c.out / "tapes.ndjson");
        write_tapes(tape_file, tapes);
    }
    return out;
}

inline void write_metrics(const ExperimentConfig& c, const std::string& label, const Cloud& samples) {
    const auto pairs = eval_pairs(c);
    if (samples.size() != pairs.size())
        throw std::invalid_argument("samples have " + std::to_string(samples.size()) + " rows, config expects " +
                                    std::to_string(pairs.size()));
    Cloud truth;
    for (const auto& p : pairs) truth.push_back(p.x);
    auto out = open_output(c.out / "metrics.csv");
    write_metrics_header(out);
    write_metric_row(out, label,
                     sliced_w2_report(samples, truth, c.eval.projections, derive_seed(c.seed, SeedPurpose::Projections)));
    write_metric_row(out, label, energy_report(samples, truth));
}

inline void finish_training(const ExperimentConfig& c, const BridgeNet& net, const TrainSettings& s,
                            const TrainResult& res) {
    save_checkpoint(c.out / "checkpoint.json", net,
                    {{"objective", to_string(s.objective)},
                     {"steps", std::to_string(res.steps_done)},
                     {"dataset", c.dataset},
                     {"seed", std::to_string(c.seed)}});
    if (res.diverged) throw DivergenceError(res.message);
    SamplerChoice choice = c.sample.choice;
    if (s.objective == Objective::Dbsm) choice.kind = SamplerChoice::Kind::Ode;
    write_metrics(c, sampler_label(choice), sample_and_write(c, net, choice));
}

inline TrainResult run_training(const ExperimentConfig& c, BridgeNet& net, Objective o, const BridgeNet* teacher) {
    TrainSettings s = c.stage(o);
    s.seed = derive_seed(c.seed, SeedPurpose::Train);
    auto log = open_output(c.out / "log.ndjson");
    return train(net, [data = c.dataset_spec()](Stream& rng) { return data.sample(rng); }, s, teacher,
                 [&](const LogRecord& r) { log << to_json(r).dump() << '\n'; });
}

}  // namespace cli_detail

/// The untrained network a run starts from; a pure function of the config.
inline BridgeNet initial_net(const ExperimentConfig& c) {
    const auto spec = c.schedule_spec();
    const auto data = c.dataset_spec();
    std::optional<EndpointStats> stats;
    if (c.model.precondition != PrecondScheme::I2sb)
        stats = estimate_endpoint_stats(data.sample_n(c.model.stats_samples, derive_seed(c.seed, SeedPurpose::Stats)));
    BridgeNet net(spec, Precondition::make(spec, c.model.precondition, stats), data.dim(), c.model.hidden);
    Stream rng(derive_seed(c.seed, SeedPurpose::Init));
    net.init(rng);
    return net;
}

inline void cmd_pretrain(const ExperimentConfig& c) {
    cli_detail::prepare(c);
    BridgeNet net = initial_net(c);
    const auto res = cli_detail::run_training(c, net, Objective::Dbsm, nullptr);
    cli_detail::finish_training(c, net, c.pretrain, res);
}

/// The student starts from run.init when given, otherwise from the teacher.
inline void cmd_distill(const ExperimentConfig& c) {
    const Checkpoint teacher = cli_detail::load_required(c.teacher, "teacher");
    BridgeNet net = c.init.empty() ? teacher.net : cli_detail::load_required(c.init, "init").net;
    cli_detail::prepare(c);
    const auto res = cli_detail::run_training(c, net, Objective::Cbd, &teacher.net);
    cli_detail::finish_training(c, net, c.distill, res);
}

/// Fine-tunes run.init when given, otherwise trains from scratch.
inline void cmd_cbt(const ExperimentConfig& c) {
    BridgeNet net = c.init.empty() ? initial_net(c) : cli_detail::load_required(c.init, "init").net;
    cli_detail::prepare(c);
    const auto res = cli_detail::run_training(c, net, Objective::Cbt, nullptr);
    cli_detail::finish_training(c, net, c.cbt, res);
}

/// Writes samples.csv; with a replay tape file the samples are regenerated from it instead.
inline void cmd_sample(const ExperimentConfig& c, const CommandOptions& o = {}) {
    const Checkpoint ck = cli_detail::load_required(c.checkpoint, "checkpoint");
    cli_detail::prepare(c);
    if (!o.replay) {
        cli_detail::sample_and_write(c, ck.net, c.sample.choice);
        return;
    }
    auto in = open_input(*o.replay);
    Cloud out;
    for (const auto& tape : read_tapes(in)) out.push_back(replay(ck.net, tape));
    auto samples = open_output(c.out / "samples.csv");
    write_cloud_csv(samples, out);
}

/// Scores samples (given, or drawn with the configured sampler) against held-out data.
inline void cmd_eval(const ExperimentConfig& c, const CommandOptions& o = {}) {
    if (o.samples) {
        cli_detail::prepare(c);
        auto in = open_input(*o.samples);
        cli_detail::write_metrics(c, o.samples->filename().string(), read_cloud_csv(in));
        return;
    }
    const Checkpoint ck = cli_detail::load_required(c.checkpoint, "checkpoint");
    cli_detail::prepare(c);
    cli_detail::write_metrics(c, cli_detail::sampler_label(c.sample.choice),
                              cli_detail::sample_and_write(c, ck.net, c.sample.choice));
}

/// Runs the acceptance suite, printing one line per criterion; true when every criterion passed.
inline bool cmd_verify(const ExperimentConfig& c, const CommandOptions& o = {}, std::ostream& log = std::cout) {
    cli_detail::prepare(c);
    VerifyOptions opts;
    opts.seed = c.seed;
    opts.only = o.only;
    auto out = open_output(c.out / "verify.csv");
    out << "id,title,pass,seconds,detail\n";
    bool ok = true;
    run_verify(opts, [&](const CriterionResult& r) {
        log << format_result(r) << std::endl;
        out << r.id << ",\"" << r.title << "\"," << (r.pass ? "true" : "false") << ',' << format_f64(r.seconds)
            << ",\"" << r.detail << "\"\n";
        if (r.id != 0) ok = ok && r.pass;
    });
    return ok;
}

/// Error kinds written to error.json, each with its own exit code.
inline std::pair<std::string, int> classify_error(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return {"divergence", 4};
    if (dynamic_cast<const MissingCheckpointError*>(&e)) return {"missing-checkpoint", 3};
    if (dynamic_cast<const std::invalid_argument*>(&e)) return {"invalid-input", 2};
    return {"runtime", 1};
}

}  // namespace bridgekit
