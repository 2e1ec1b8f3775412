#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/beast/core/detail/base64.hpp>
#include <json.hpp>

#include "model.hpp"

namespace bridgekit {

using Json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "bridgekit-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Doubles as little-endian IEEE-754 bytes, base64 encoded.
inline std::string encode_f64(std::span<const double> values) {
    std::string bytes(values.size() * 8, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) bytes[8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    namespace b64 = boost::beast::detail::base64;
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

inline Vec decode_f64(const std::string& text, std::size_t expected) {
    namespace b64 = boost::beast::detail::base64;
    std::string bytes(b64::decoded_size(text.size()), '\0');
    const auto [written, read] = b64::decode(bytes.data(), text.data(), text.size());
    std::size_t body = text.size();
    for (int pad = 0; pad < 2 && body > 0 && text[body - 1] == '='; ++pad) --body;
    if (read != body) throw std::invalid_argument("checkpoint params: invalid base64");
    if (written != expected * 8)
        throw std::invalid_argument("checkpoint params: expected " + std::to_string(expected) + " values, got " +
                                    std::to_string(written) + " bytes");
    Vec out(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{static_cast<unsigned char>(bytes[8 * i + b])} << (8 * b);
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

/// A network plus free-form provenance (objective, step count, dataset, ...).
struct Checkpoint {
    BridgeNet net;
    std::map<std::string, std::string> meta;
};

inline Json checkpoint_to_json(const BridgeNet& net, const std::map<std::string, std::string>& meta = {}) {
    const auto& pre = net.precondition();
    Json stats = nullptr;
    if (pre.stats)
        stats = {{"var0", pre.stats->var0},
                 {"varT", pre.stats->varT},
                 {"cov0T", pre.stats->cov0T},
                 {"degenerate", pre.stats->degenerate}};
    return {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"schedule", {{"id", net.schedule().id()}, {"params", net.schedule().params()}}},
        {"precondition", {{"scheme", to_string(pre.scheme)}, {"eps", pre.eps}, {"gamma", pre.gamma}, {"stats", stats}}},
        {"dim", net.dim()},
        {"hidden", net.hidden_widths()},
        {"meta", meta},
        {"params", {{"encoding", "base64-f64le"}, {"count", net.n_params()}, {"data", encode_f64(net.params())}}},
    };
}

inline Checkpoint checkpoint_from_json(const Json& j) {
    try {
        if (j.at("format") != kCheckpointFormat) throw std::invalid_argument("not a bridgekit checkpoint");
        if (j.at("version") != kCheckpointVersion)
            throw std::invalid_argument("unsupported checkpoint version " + j.at("version").dump());
        const auto spec = ScheduleSpec::from_id(j.at("schedule").at("id").get<std::string>(),
                                                j.at("schedule").at("params").get<std::map<std::string, double>>());
        const Json& p = j.at("precondition");
        Precondition pre;
        pre.scheme = parse_precond_scheme(p.at("scheme").get<std::string>());
        pre.eps = p.at("eps").get<double>();
        pre.gamma = p.at("gamma").get<double>();
        if (!p.at("stats").is_null()) {
            const Json& s = p.at("stats");
            pre.stats = EndpointStats{s.at("var0").get<double>(), s.at("varT").get<double>(),
                                      s.at("cov0T").get<double>(), s.at("degenerate").get<bool>()};
        }
        BridgeNet net(spec, pre, j.at("dim").get<std::size_t>(), j.at("hidden").get<std::vector<std::size_t>>());
        const Json& params = j.at("params");
        if (params.at("encoding") != "base64-f64le") throw std::invalid_argument("unknown params encoding");
        const auto count = params.at("count").get<std::size_t>();
        if (count != net.n_params())
            throw std::invalid_argument("checkpoint has " + std::to_string(count) + " params, architecture needs " +
                                        std::to_string(net.n_params()));
        net.params() = decode_f64(params.at("data").get<std::string>(), count);
        return {std::move(net), j.value("meta", std::map<std::string, std::string>{})};
    } catch (const Json::exception& e) {
        throw std::invalid_argument(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const BridgeNet& net,
                            const std::map<std::string, std::string>& meta = {}) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(net, meta).dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing checkpoint " + path.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw std::invalid_argument("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace bridgekit
