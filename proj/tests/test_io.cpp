#include <catch_amalgamated.hpp>

#include <bridgekit/checkpoint.hpp>
#include <bridgekit/config.hpp>
#include <bridgekit/io.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

using namespace bridgekit;

namespace {

bool same_bits(const Vec& a, const Vec& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

BridgeNet trained_looking_net(PrecondScheme scheme) {
    const auto spec = ScheduleSpec::from_id("ddbm-vp", {{"beta0", 0.25}});
    std::optional<EndpointStats> stats;
    if (scheme != PrecondScheme::I2sb) stats = EndpointStats{0.7, 1.3, 0.2, false};
    BridgeNet net(spec, Precondition::make(spec, scheme, stats), 2, {8, 8});
    Stream rng(3);
    net.init(rng);
    return net;
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "bridgekit_test_io";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("f64 base64 round trip is bit exact", "[io]") {
    const Vec v{0.0,
                -0.0,
                1.0 / 3.0,
                -2.5e-310,
                std::numeric_limits<double>::max(),
                std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::quiet_NaN(),
                6.02214076e23};
    for (std::size_t n = 0; n <= v.size(); ++n) {
        const Vec part(v.begin(), v.begin() + n);
        CHECK(same_bits(decode_f64(encode_f64(part), n), part));
    }
    CHECK(encode_f64(Vec{1.0}) == "AAAAAAAA8D8=");  // 0x3ff0000000000000, little endian
    CHECK_THROWS_AS(decode_f64(encode_f64(v), v.size() + 1), std::invalid_argument);
    CHECK_THROWS_AS(decode_f64("@@@@", 3), std::invalid_argument);
}

TEST_CASE("checkpoints reproduce the network exactly", "[io]") {
    for (auto scheme : {PrecondScheme::Edm, PrecondScheme::I2sb, PrecondScheme::Universal}) {
        const auto net = trained_looking_net(scheme);
        const auto path = scratch("ckpt_" + to_string(scheme) + ".json");
        save_checkpoint(path, net, {{"objective", "cbt"}, {"steps", "12"}});
        const auto back = load_checkpoint(path);
        CHECK(same_bits(back.net.params(), net.params()));
        CHECK(back.net.schedule().id() == "ddbm-vp");
        CHECK(back.net.schedule().params() == net.schedule().params());
        CHECK(back.net.precondition().scheme == scheme);
        CHECK(back.net.precondition().eps == net.precondition().eps);
        CHECK(back.net.precondition().gamma == net.precondition().gamma);
        CHECK(back.net.precondition().stats.has_value() == net.precondition().stats.has_value());
        CHECK(back.net.hidden_widths() == net.hidden_widths());
        CHECK(back.meta.at("objective") == "cbt");
        const Vec x{0.3, -0.7}, y{1.0, 0.5};
        CHECK(back.net.consistency(x, 0.4, y) == net.consistency(x, 0.4, y));
        CHECK(back.net.data_pred(x, 0.9, y) == net.data_pred(x, 0.9, y));
    }
}

TEST_CASE("malformed checkpoints are rejected", "[io]") {
    const auto net = trained_looking_net(PrecondScheme::Edm);
    auto j = checkpoint_to_json(net);
    SECTION("wrong format tag") {
        j["format"] = "something-else";
        CHECK_THROWS_AS(checkpoint_from_json(j), std::invalid_argument);
    }
    SECTION("parameter count mismatch") {
        j["hidden"] = {8, 9};
        CHECK_THROWS_AS(checkpoint_from_json(j), std::invalid_argument);
    }
    SECTION("missing field") {
        j.erase("precondition");
        CHECK_THROWS_AS(checkpoint_from_json(j), std::invalid_argument);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_checkpoint(scratch("does_not_exist.json")), std::runtime_error);
    }
}

TEST_CASE("point clouds round trip through csv", "[io]") {
    Stream rng(8);
    Cloud cloud(50, Vec(3));
    for (auto& p : cloud) rng.fill_normal(p);
    cloud[0] = {1e-300, -0.0, 123456789.123456789};
    std::stringstream ss;
    write_cloud_csv(ss, cloud);
    CHECK(ss.str().rfind("x1,x2,x3\n", 0) == 0);
    const Cloud back = read_cloud_csv(ss);
    REQUIRE(back.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(same_bits(back[i], cloud[i]));

    std::stringstream bad("x1,x2\n1,2\n3\n");
    CHECK_THROWS_AS(read_cloud_csv(bad), std::invalid_argument);
    std::stringstream junk("x1\nabc\n");
    CHECK_THROWS_AS(read_cloud_csv(junk), std::invalid_argument);
}

TEST_CASE("tapes round trip through ndjson and still replay", "[io]") {
    const auto net = trained_looking_net(PrecondScheme::Universal);
    std::vector<TrajectoryTape> tapes;
    std::vector<Vec> xs;
    for (std::uint64_t j = 0; j < 4; ++j) {
        auto res = cdbm_sample(net, Vec{0.2, -1.1}, TimestepPlan::uniform(net, 4), 77, j);
        xs.push_back(res.x);
        tapes.push_back(std::move(res.tape));
    }
    std::stringstream ss;
    write_tapes(ss, tapes);
    const auto back = read_tapes(ss);
    REQUIRE(back.size() == tapes.size());
    for (std::size_t j = 0; j < tapes.size(); ++j) {
        CHECK(back[j] == tapes[j]);
        CHECK(same_bits(replay(net, back[j]), xs[j]));
    }
    std::stringstream bad("{\"seed\": 1}\n");
    CHECK_THROWS_AS(read_tapes(bad), std::invalid_argument);
}

TEST_CASE("experiment config parsing", "[io][config]") {
    SECTION("defaults") {
        const auto c = parse_config_string("");
        CHECK(c.schedule == "brownian");
        CHECK(c.dataset == "gauss1d");
        CHECK(c.model.hidden == std::vector<std::size_t>{64, 64, 64});
        CHECK(c.pretrain.objective == Objective::Dbsm);
        CHECK(c.distill.objective == Objective::Cbd);
        CHECK(c.cbt.objective == Objective::Cbt);
        CHECK(c.sample.choice.nfe == 2);
    }
    SECTION("stage overrides") {
        const auto c = parse_config_string(R"(
[schedule]
id = "ddbm-vp"
params = { beta0 = 0.1 }
[dataset]
id = "mixture2d"
params = { modes = 4, shift_x = 2.0 }
[model]
hidden = [32, 32]
precondition = "universal"
[train]
steps = 500
lr = 2e-3
[train.cbt]
gap = "sigmoid"
dt_min = 0.01
metric = "pseudo-huber"
[train.distill]
steps = 50
[sample]
nfe = 4
solver = "euler"
)");
        CHECK(c.schedule_spec().params().at("beta0") == 0.1);
        CHECK(c.dataset_spec().dim() == 2);
        CHECK(c.model.precondition == PrecondScheme::Universal);
        CHECK(c.pretrain.steps == 500);
        CHECK(c.distill.steps == 50);
        CHECK(c.cbt.steps == 500);
        CHECK(c.cbt.lr == 2e-3);
        REQUIRE(std::holds_alternative<SigmoidGap>(c.cbt.gap));
        CHECK(std::get<SigmoidGap>(c.cbt.gap).dt_min == 0.01);
        CHECK(std::holds_alternative<ConstantGap>(c.distill.gap));
        CHECK(c.cbt.metric.kind == Metric::Kind::PseudoHuber);
        CHECK(c.cbt.metric.c == Catch::Approx(0.03 * std::sqrt(2.0)));
        CHECK(c.sample.choice.solver == OdeSolver::Euler);
    }
    SECTION("schema violations") {
        CHECK_THROWS_AS(parse_config_string("[train]\nstepz = 3\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[train]\nsteps = -3\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[train]\nsteps = \"many\"\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[train]\ndt_min = 0.1\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[schedule]\nid = \"vp\"\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[dataset]\nid = \"gauss1d\"\nparams = { mu = 1.0 }\n"),
                        std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[sample]\nnfe = 1\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[model]\nprecondition = \"karras\"\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("this is not toml"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config_string("[bogus]\n"), std::invalid_argument);
    }
    SECTION("the resolved config reproduces itself") {
        auto c = parse_config_string("[train.cbt]\ngap = \"sigmoid\"\n[run]\nseed = 42\nteacher = \"a/b.json\"\n");
        c.pretrain.lr = 0.1 + 1e-17 * 3;  // a value with a long shortest representation
        c.distill.divergence_threshold = 1.0 / 3.0;
        const std::string text = config_to_toml(c);
        const auto back = parse_config_string(text);
        CHECK(config_to_toml(back) == text);
        CHECK(back.pretrain.lr == c.pretrain.lr);
        CHECK(back.distill.divergence_threshold == c.distill.divergence_threshold);
        CHECK(back.seed == 42);
        CHECK(back.teacher == "a/b.json");
    }
}

TEST_CASE("derived seeds differ by purpose", "[io][config]") {
    std::set<std::uint64_t> seen;
    for (auto p : {SeedPurpose::Init, SeedPurpose::Train, SeedPurpose::Stats, SeedPurpose::EvalData,
                   SeedPurpose::SampleNoise, SeedPurpose::Projections})
        seen.insert(derive_seed(5, p));
    CHECK(seen.size() == 6);
    CHECK(derive_seed(5, SeedPurpose::Train) == derive_seed(5, SeedPurpose::Train));
    CHECK(derive_seed(5, SeedPurpose::Train) != derive_seed(6, SeedPurpose::Train));
}

TEST_CASE("shortest f64 formatting round trips", "[io]") {
    Stream rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-300, 300));
        CHECK(parse_f64(format_f64(v)) == v);
    }
    CHECK_THROWS_AS(parse_f64("1.0x"), std::invalid_argument);
}
