#pragma once

// Checkpoint file: one line of JSON (config, gate config, seed, parameter
// shapes) followed by the raw little-endian float64 parameter blocks in
// declared ParamId order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "model.hpp"

namespace l0sign {

inline const char* to_string(Aggregation a) {
    return a == Aggregation::soft_degree ? "soft_degree" : "neighbor_count";
}

inline Aggregation parse_aggregation(const std::string& s) {
    if (s == "soft_degree") return Aggregation::soft_degree;
    if (s == "neighbor_count") return Aggregation::neighbor_count;
    throw Error("unknown aggregation '" + s + "'");
}

inline nlohmann::json config_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"edge_dim", c.edge_dim},
            {"embed_dim", c.embed_dim},
            {"hidden", c.hidden},
            {"aggregation", to_string(c.aggregation)},
            {"activation", c.activation == Activation::relu ? "relu" : "identity"},
            {"combine", c.combine == PairCombine::product ? "product" : "sum"},
            {"edge_bias_init", c.edge_bias_init},
            {"gate", {{"beta", c.gate.beta}, {"gamma", c.gate.gamma}, {"delta", c.gate.delta}, {"binary_eval", c.gate.binary_eval}}}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.edge_dim = j.at("edge_dim").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.aggregation = parse_aggregation(j.value("aggregation", "soft_degree"));
    c.activation = j.value("activation", "relu") == "relu" ? Activation::relu : Activation::identity;
    c.combine = j.value("combine", "product") == "product" ? PairCombine::product : PairCombine::sum;
    c.edge_bias_init = j.value("edge_bias_init", 1.0);
    const auto& g = j.at("gate");
    c.gate = {g.at("beta").get<double>(), g.at("gamma").get<double>(), g.at("delta").get<double>(),
              g.value("binary_eval", false)};
    c.validate();
    return c;
}

struct Checkpoint {
    ModelParams params;
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();  // free-form metadata (mode, epoch, ...)
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
    const auto& store = ck.params.store();
    nlohmann::json blocks = nlohmann::json::array();
    for (std::size_t i = 0; i < store.count(); ++i) {
        const auto& t = store.param(i);
        blocks.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
    }
    const nlohmann::json header = {{"format", "l0sign-checkpoint-v1"},
                                   {"config", config_json(ck.params.config())},
                                   {"seed", ck.seed},
                                   {"blocks", blocks},
                                   {"extra", ck.extra}};
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < store.count(); ++i) {
        const auto v = store.value(i).values();
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw Error("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("checkpoint: missing header");
    const auto header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object()) throw Error("checkpoint: header is not JSON");
    if (header.value("format", "") != "l0sign-checkpoint-v1") throw Error("checkpoint: unknown format");
    Checkpoint ck;
    ck.params = ModelParams(config_from_json(header.at("config")));
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.extra = header.value("extra", nlohmann::json::object());
    auto& store = ck.params.store();
    const auto& blocks = header.at("blocks");
    if (blocks.size() != store.count()) throw Error("checkpoint: block count mismatch");
    for (std::size_t i = 0; i < store.count(); ++i) {
        const auto& b = blocks[i];
        auto& m = store.value(i);
        if (b.at("name").get<std::string>() != store.param(i).name ||
            b.at("rows").get<std::size_t>() != m.rows() || b.at("cols").get<std::size_t>() != m.cols()) {
            throw Error("checkpoint: block " + std::to_string(i) + " does not match the config");
        }
        auto v = m.values();
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in) throw Error("checkpoint: truncated parameter block '" + store.param(i).name + "'");
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in);
}

} // namespace l0sign
