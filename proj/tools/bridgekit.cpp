#include <bridgekit/cli.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> dataset;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> nfe;
    std::optional<std::string> checkpoint;
    std::optional<std::string> teacher;
    std::optional<std::string> init;
    std::optional<std::string> replay;
    std::optional<std::string> samples;
    std::vector<int> only;
};

bridgekit::ExperimentConfig resolve(const std::string& command, const Args& a) {
    using namespace bridgekit;
    ExperimentConfig c = a.config.empty() ? parse_config_string("") : load_config(a.config);
    if (a.seed) c.seed = *a.seed;
    if (a.out) c.out = *a.out;
    if (a.dataset && *a.dataset != c.dataset) {
        c.dataset = *a.dataset;
        c.dataset_params.clear();
    }
    if (a.checkpoint) c.checkpoint = *a.checkpoint;
    if (a.teacher) c.teacher = *a.teacher;
    if (a.init) c.init = *a.init;
    if (a.nfe) c.sample.choice.nfe = *a.nfe;
    if (a.steps) {
        const Objective o = command == "pretrain" ? Objective::Dbsm
                            : command == "distill" ? Objective::Cbd
                                                   : Objective::Cbt;
        c.stage(o).steps = *a.steps;
    }
    // Round trip through the schema so overrides are validated like file values.
    return parse_config_string(config_to_toml(c), "resolved config");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Denoising diffusion bridge models with consistency distillation and training"};
    app.require_subcommand(1);
    Args a;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"pretrain", "Train the bridge score model (data prediction)"},
        {"distill", "Consistency bridge distillation from a pretrained teacher"},
        {"cbt", "Consistency bridge training, optionally from a pretrained init"},
        {"sample", "Draw samples from a checkpoint, or replay a tape file"},
        {"eval", "Sliced-Wasserstein and energy distance against held-out data"},
        {"verify", "Run the acceptance suite"}};
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", a.config, "TOML experiment config")->check(CLI::ExistingFile);
        sub->add_option("--seed", a.seed, "Root seed");
        sub->add_option("--out", a.out, "Run directory");
        sub->add_option("--dataset", a.dataset, "Dataset id (gauss1d, mixture2d, masked2d)");
        sub->add_option("--checkpoint", a.checkpoint, "Model checkpoint for sample / eval");
        if (name == "pretrain" || name == "distill" || name == "cbt")
            sub->add_option("--steps", a.steps, "Training steps for this stage");
        if (name == "distill") sub->add_option("--teacher", a.teacher, "Pretrained teacher checkpoint");
        if (name == "distill" || name == "cbt") sub->add_option("--init", a.init, "Starting checkpoint");
        if (name == "sample" || name == "eval") sub->add_option("--nfe", a.nfe, "Consistency sampler evaluations");
        if (name == "sample") sub->add_option("--replay", a.replay, "Regenerate samples from a tape file");
        if (name == "eval") sub->add_option("--samples", a.samples, "Score an existing samples.csv");
        if (name == "verify") sub->add_option("--only", a.only, "Run only these criteria");
    }
    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    std::filesystem::path out = a.out.value_or("runs/default");
    try {
        const bridgekit::ExperimentConfig c = resolve(command, a);
        out = c.out;
        bridgekit::CommandOptions o;
        if (a.replay) o.replay = *a.replay;
        if (a.samples) o.samples = *a.samples;
        o.only = {a.only.begin(), a.only.end()};
        if (command == "pretrain") bridgekit::cmd_pretrain(c);
        else if (command == "distill") bridgekit::cmd_distill(c);
        else if (command == "cbt") bridgekit::cmd_cbt(c);
        else if (command == "sample") bridgekit::cmd_sample(c, o);
        else if (command == "eval") bridgekit::cmd_eval(c, o);
        else return bridgekit::cmd_verify(c, o) ? 0 : 1;
        return 0;
    } catch (const std::exception& e) {
        const auto [kind, code] = bridgekit::classify_error(e);
        std::cerr << "bridgekit " << command << ": " << kind << ": " << e.what() << '\n';
        std::error_code ec;
        std::filesystem::create_directories(out, ec);
        bridgekit::write_error_record(out / "error.json", command, kind, e.what());
        return code;
    }
}
