#pragma once

// Instances in libfm-style text ("label idx:value ..."), datasets, seeded
// splits and a synthetic generator with planted pairwise interactions.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "numcore.hpp"

namespace l0sign {

using FeatureId = std::uint32_t;

struct Instance {
    std::vector<FeatureId> nodes;  // strictly increasing
    std::vector<double> values;    // x_k per node
    int label = 0;                 // 0 or 1

    std::size_t size() const noexcept { return nodes.size(); }
    double signed_label() const noexcept { return label == 1 ? 1.0 : -1.0; }

    void validate(std::size_t vocab_size) const {
        if (nodes.empty()) throw Error("Instance: no features");
        if (nodes.size() != values.size()) throw Error("Instance: nodes/values length mismatch");
        if (label != 0 && label != 1) throw Error("Instance: label must be 0 or 1");
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i] >= vocab_size) {
                throw Error("Instance: feature " + std::to_string(nodes[i]) +
                            " outside vocabulary of size " + std::to_string(vocab_size));
            }
            if (i > 0 && nodes[i] <= nodes[i - 1]) throw Error("Instance: nodes not strictly increasing");
        }
    }

    bool operator==(const Instance&) const = default;
};

/// Builds an instance from unsorted (index, value) entries; duplicate indices are rejected.
inline Instance make_instance(std::vector<std::pair<FeatureId, double>> entries, int label) {
    if (entries.empty()) throw Error("Instance: no features");
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    Instance inst;
    inst.label = label;
    for (const auto& [idx, val] : entries) {
        if (!inst.nodes.empty() && inst.nodes.back() == idx) {
            throw Error("duplicate feature index " + std::to_string(idx));
        }
        inst.nodes.push_back(idx);
        inst.values.push_back(val);
    }
    return inst;
}

struct PlantedPair {
    FeatureId i = 0;
    FeatureId j = 0;
    double weight = 0.0;
};

struct Dataset {
    std::vector<Instance> instances;
    std::size_t vocab_size = 0;
    std::vector<PlantedPair> planted;  // synthetic ground truth only

    std::size_t size() const noexcept { return instances.size(); }

    void validate() const {
        for (const auto& inst : instances) inst.validate(vocab_size);
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset out;
        out.vocab_size = vocab_size;
        out.planted = planted;
        out.instances.reserve(idx.size());
        for (auto i : idx) out.instances.push_back(instances.at(i));
        return out;
    }
};

// ---------------------------------------------------------------------------
// Text format

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\r')) ++pos;
        const std::size_t start = pos;
        while (pos < s.size() && s[pos] != ' ' && s[pos] != '\t' && s[pos] != '\r') ++pos;
        if (pos > start) out.push_back(s.substr(start, pos - start));
    }
    return out;
}

template <class T>
bool parse_number(std::string_view tok, T& out) {
    const auto* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc() && ptr == end;
}

inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

} // namespace detail

/// Parses "y i1:v1 i2:v2 ..." or "y i1 i2 ..."; y in {0, 1, -1} with -1 read as 0.
inline Instance parse_line(std::string_view text, std::size_t line_no = 0) {
    auto where = [&] { return line_no ? " (line " + std::to_string(line_no) + ")" : std::string(); };
    const auto tokens = detail::split_ws(text);
    if (tokens.size() < 2) throw Error("parse_line: expected label and features" + where());

    int label = 0;
    double raw_label = 0.0;
    if (!detail::parse_number(tokens[0], raw_label)) {
        throw Error("parse_line: bad label '" + std::string(tokens[0]) + "'" + where());
    }
    if (raw_label == 1.0) label = 1;
    else if (raw_label == 0.0 || raw_label == -1.0) label = 0;
    else throw Error("parse_line: label must be 0, 1 or -1" + where());

    std::vector<std::pair<FeatureId, double>> entries;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
        const auto tok = tokens[t];
        const auto colon = tok.find(':');
        FeatureId idx = 0;
        double value = 1.0;
        const auto idx_tok = tok.substr(0, colon);
        if (!detail::parse_number(idx_tok, idx) ||
            (colon != std::string_view::npos &&
             !detail::parse_number(tok.substr(colon + 1), value))) {
            throw Error("parse_line: malformed token '" + std::string(tok) + "'" + where());
        }
        if (!std::isfinite(value)) throw Error("parse_line: non-finite value" + where());
        entries.emplace_back(idx, value);
    }
    try {
        return make_instance(std::move(entries), label);
    } catch (const Error& e) {
        throw Error(std::string("parse_line: ") + e.what() + where());
    }
}

inline std::string format_line(const Instance& inst) {
    std::string out = std::to_string(inst.label);
    for (std::size_t k = 0; k < inst.size(); ++k) {
        out += ' ';
        out += std::to_string(inst.nodes[k]);
        out += ':';
        out += detail::format_double(inst.values[k]);
    }
    return out;
}

inline Dataset parse_dataset(std::istream& in) {
    Dataset ds;
    std::optional<std::size_t> declared;
    std::string line;
    std::size_t line_no = 0;
    FeatureId max_index = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = std::string_view(line);
        if (detail::split_ws(body).empty()) continue;
        if (body.starts_with("vocab_size=")) {
            std::size_t n = 0;
            if (!detail::parse_number(body.substr(11), n)) {
                throw Error("bad vocab_size header (line " + std::to_string(line_no) + ")");
            }
            declared = n;
            continue;
        }
        ds.instances.push_back(parse_line(body, line_no));
        max_index = std::max(max_index, ds.instances.back().nodes.back());
    }
    const std::size_t inferred = ds.instances.empty() ? 0 : std::size_t(max_index) + 1;
    if (declared && *declared < inferred) {
        throw Error("vocab_size=" + std::to_string(*declared) + " but feature index " +
                    std::to_string(max_index) + " present");
    }
    ds.vocab_size = declared.value_or(inferred);
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset '" + path + "'");
    return parse_dataset(in);
}

inline void write_dataset(std::ostream& out, const Dataset& ds) {
    out << "vocab_size=" << ds.vocab_size << '\n';
    for (const auto& inst : ds.instances) out << format_line(inst) << '\n';
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write dataset '" + path + "'");
    write_dataset(out, ds);
}

inline nlohmann::json ground_truth_json(const Dataset& ds) {
    nlohmann::json pairs = nlohmann::json::array();
    nlohmann::json weights = nlohmann::json::array();
    for (const auto& p : ds.planted) {
        pairs.push_back({p.i, p.j});
        weights.push_back(p.weight);
    }
    return {{"pairs", pairs}, {"weights", weights}};
}

inline std::vector<PlantedPair> parse_ground_truth(const nlohmann::json& j) {
    const auto& pairs = j.at("pairs");
    const auto& weights = j.at("weights");
    if (pairs.size() != weights.size()) throw Error("ground truth: pairs/weights length mismatch");
    std::vector<PlantedPair> out;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        out.push_back({pairs[k].at(0).get<FeatureId>(), pairs[k].at(1).get<FeatureId>(),
                       weights[k].get<double>()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
    double train = 0.70;
    double valid = 0.15;
    double test = 0.15;
    std::uint64_t seed = 0;

    void validate() const {
        if (train < 0 || valid < 0 || test < 0 || std::abs(train + valid + test - 1.0) > 1e-9) {
            throw Error("SplitSpec: fractions must be non-negative and sum to 1");
        }
    }
};

struct Splits {
    Dataset train, valid, test;
};

/// Deterministic seeded permutation cut into train/valid/test.
inline Splits split(const Dataset& ds, const SplitSpec& spec) {
    spec.validate();
    const std::size_t n = ds.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(spec.seed);
    // Fisher-Yates with explicit modulo draws; std::shuffle's output is
    // implementation-defined and would tie splits to one standard library.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(perm[i - 1], perm[j]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train * double(n)));
    const auto n_valid = static_cast<std::size_t>(std::llround(spec.valid * double(n)));
    if (n_train + n_valid > n || n_train == 0 || n_valid == 0 || n_train + n_valid == n) {
        throw Error("split: " + std::to_string(n) + " instances leave an empty split");
    }
    std::span<const std::size_t> all(perm);
    return {ds.subset(all.subspan(0, n_train)), ds.subset(all.subspan(n_train, n_valid)),
            ds.subset(all.subspan(n_train + n_valid))};
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
    std::size_t vocab_size = 20;
    std::size_t n_samples = 5000;
    std::size_t nodes_per_sample = 6;
    std::vector<std::pair<FeatureId, FeatureId>> planted_pairs;
    std::vector<double> weights;  // optional; drawn from the seed when empty
    double noise_rate = 0.05;
    std::uint64_t seed = 0;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace detail

/// Draws `count` distinct unordered pairs (i < j) from the vocabulary.
inline std::vector<std::pair<FeatureId, FeatureId>> draw_planted_pairs(std::size_t vocab_size,
                                                                       std::size_t count,
                                                                       std::uint64_t seed) {
    const std::size_t universe = vocab_size * (vocab_size - 1) / 2;
    if (count > universe) throw Error("draw_planted_pairs: more pairs than the vocabulary allows");
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::vector<std::pair<FeatureId, FeatureId>> out;
    while (out.size() < count) {
        auto a = static_cast<FeatureId>(rng() % vocab_size);
        auto b = static_cast<FeatureId>(rng() % vocab_size);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        if (std::find(out.begin(), out.end(), std::pair{a, b}) == out.end()) out.emplace_back(a, b);
    }
    return out;
}

/// Planted-pair score of an instance; nullopt when no planted pair is present.
inline std::optional<double> planted_score(const Instance& inst, std::span<const PlantedPair> planted) {
    std::optional<double> score;
    for (const auto& p : planted) {
        const bool has_i = std::binary_search(inst.nodes.begin(), inst.nodes.end(), p.i);
        const bool has_j = std::binary_search(inst.nodes.begin(), inst.nodes.end(), p.j);
        if (has_i && has_j) score = score.value_or(0.0) + p.weight;
    }
    return score;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.nodes_per_sample == 0 || spec.nodes_per_sample > spec.vocab_size) {
        throw Error("generate_synthetic: nodes_per_sample must be in [1, vocab_size]");
    }
    if (!(spec.noise_rate >= 0.0 && spec.noise_rate < 0.5)) {
        throw Error("generate_synthetic: noise_rate must be in [0, 0.5)");
    }
    if (!spec.weights.empty() && spec.weights.size() != spec.planted_pairs.size()) {
        throw Error("generate_synthetic: weights must match planted pairs");
    }
    std::mt19937_64 rng(spec.seed);

    Dataset ds;
    ds.vocab_size = spec.vocab_size;
    for (std::size_t p = 0; p < spec.planted_pairs.size(); ++p) {
        auto [i, j] = spec.planted_pairs[p];
        if (i >= spec.vocab_size || j >= spec.vocab_size || i == j) {
            throw Error("generate_synthetic: planted pair outside vocabulary or a self-pair");
        }
        if (i > j) std::swap(i, j);
        double w = 0.0;
        if (!spec.weights.empty()) {
            w = spec.weights[p];
        } else {
            do { w = 2.0 * detail::uniform01(rng) - 1.0; } while (std::abs(w) < 0.2);
        }
        ds.planted.push_back({i, j, w});
    }

    std::vector<FeatureId> pool(spec.vocab_size);
    ds.instances.reserve(spec.n_samples);
    for (std::size_t n = 0; n < spec.n_samples; ++n) {
        std::iota(pool.begin(), pool.end(), FeatureId{0});
        // partial Fisher-Yates: first k entries are a uniform k-subset
        for (std::size_t t = 0; t < spec.nodes_per_sample; ++t) {
            const std::size_t j = t + rng() % (spec.vocab_size - t);
            std::swap(pool[t], pool[j]);
        }
        Instance inst;
        inst.nodes.assign(pool.begin(), pool.begin() + spec.nodes_per_sample);
        std::sort(inst.nodes.begin(), inst.nodes.end());
        inst.values.assign(inst.nodes.size(), 1.0);

        const auto score = planted_score(inst, ds.planted);
        if (score) {
            inst.label = *score > 0.0 ? 1 : 0;
            if (detail::uniform01(rng) < spec.noise_rate) inst.label = 1 - inst.label;
        } else {
            inst.label = detail::uniform01(rng) < 0.5 ? 1 : 0;
        }
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

} // namespace l0sign
