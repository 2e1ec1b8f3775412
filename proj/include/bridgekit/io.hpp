#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "eval.hpp"
#include "sample.hpp"
#include "train.hpp"

namespace bridgekit {

/// Shortest decimal that parses back to the same double.
inline std::string format_f64(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline double parse_f64(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

/// One row per point, header x1..xd.
inline void write_cloud_csv(std::ostream& out, const Cloud& cloud) {
    const std::size_t d = cloud.empty() ? 0 : cloud.front().size();
    for (std::size_t k = 0; k < d; ++k) out << (k ? "," : "") << 'x' << k + 1;
    out << '\n';
    for (const Vec& p : cloud) {
        require_same_dim(p.size(), d, "write_cloud_csv");
        for (std::size_t k = 0; k < d; ++k) out << (k ? "," : "") << format_f64(p[k]);
        out << '\n';
    }
}

inline Cloud read_cloud_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("cloud csv: missing header");
    const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    Cloud cloud;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Vec p;
        std::string_view rest(line);
        for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
            p.push_back(parse_f64(rest.substr(0, pos)));
        p.push_back(parse_f64(rest));
        require_same_dim(p.size(), d, "read_cloud_csv row");
        cloud.push_back(std::move(p));
    }
    return cloud;
}

inline nlohmann::json to_json(const LogRecord& r) {
    return {{"step", r.step}, {"loss", r.loss},         {"gap_factor", r.gap_factor},
            {"mean_gap", r.mean_gap}, {"lr", r.lr}, {"wallclock", r.wallclock}};
}

inline nlohmann::json to_json(const TrajectoryTape& tape) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : tape.records) records.push_back({{"t", r.t}, {"z", r.z}});
    return {{"seed", tape.seed}, {"stream", tape.stream}, {"plan", tape.plan.times}, {"y", tape.y},
            {"records", records}};
}

inline TrajectoryTape tape_from_json(const nlohmann::json& j) {
    try {
        TrajectoryTape tape;
        tape.seed = j.at("seed").get<std::uint64_t>();
        tape.stream = j.at("stream").get<std::uint64_t>();
        tape.plan.times = j.at("plan").get<std::vector<double>>();
        tape.y = j.at("y").get<Vec>();
        for (const auto& r : j.at("records")) tape.records.push_back({r.at("t").get<double>(), r.at("z").get<Vec>()});
        return tape;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed tape: ") + e.what());
    }
}

/// One tape per line.
inline void write_tapes(std::ostream& out, const std::vector<TrajectoryTape>& tapes) {
    for (const auto& t : tapes) out << to_json(t).dump() << '\n';
}

inline std::vector<TrajectoryTape> read_tapes(std::istream& in) {
    std::vector<TrajectoryTape> tapes;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        try {
            tapes.push_back(tape_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("tape line " + std::to_string(n) + ": " + e.what());
        }
    }
    return tapes;
}

inline void write_metrics_header(std::ostream& out) { out << "label,metric,value,n_samples,n_projections,seed\n"; }

inline void write_metric_row(std::ostream& out, const std::string& label, const MetricReport& m) {
    out << label << ',' << m.metric << ',' << format_f64(m.value) << ',' << m.n_samples << ',' << m.n_projections
        << ',' << m.seed << '\n';
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return in;
}

/// Machine-readable failure record written next to a failed run's outputs.
inline void write_error_record(const std::filesystem::path& path, const std::string& command, const std::string& kind,
                               const std::string& message) {
    std::ofstream out(path);
    out << nlohmann::json{{"command", command}, {"kind", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace bridgekit
