#pragma once

// Subcommand implementations behind the l0sign executable. Each command takes
// a flat key=value Settings bag (flags layered over an optional config file)
// and writes its artifacts into the `out` directory.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "l0sign/ablation.hpp"
#include "l0sign/checkpoint.hpp"
#include "l0sign/gradcheck.hpp"

namespace l0sign::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // paths
        "data", "out", "checkpoint", "edges", "truth",
        // training
        "seed", "lambda1", "lambda2", "lr", "initial_accumulator", "epochs", "batch", "mode", "embedding_update", "steady_window",
        "steady_tolerance",
        // model
        "edge_dim", "embed_dim", "hidden", "aggregation", "edge_bias_init", "embedding_init_std",
        // split
        "train_frac", "valid_frac", "test_frac",
        // ablation / edges
        "ratios", "threshold", "repeats",
        // synthetic data
        "vocab_size", "samples", "nodes_per_sample", "planted", "noise_rate",
        // explain / gradcheck
        "instances", "max_nodes", "dim", "tolerance", "binary_gate"};
    return keys;
}

class Settings {
public:
    void set(const std::string& key, const std::string& value) {
        if (!known_keys().count(key)) throw Error("unknown setting '" + key + "'");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string required(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty()) throw Error("missing required setting --" + key);
        return it->second;
    }

    double real(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const auto& s = values_.at(key);
        double v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size()) throw Error("bad number for " + key + ": '" + s + "'");
        return v;
    }

    std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const auto& s = values_.at(key);
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size()) throw Error("bad integer for " + key + ": '" + s + "'");
        return v;
    }

    bool boolean(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& s = values_.at(key);
        if (s == "1" || s == "true" || s == "on") return true;
        if (s == "0" || s == "false" || s == "off") return false;
        throw Error("bad boolean for " + key + ": '" + s + "'");
    }

    std::vector<double> reals(const std::string& key, std::vector<double> fallback) const {
        if (!has(key)) return fallback;
        std::vector<double> out;
        std::stringstream ss(values_.at(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            Settings one;
            one.values_["ratios"] = item;
            out.push_back(one.real("ratios", 0.0));
        }
        if (out.empty()) throw Error("empty list for " + key);
        return out;
    }

    /// Flat `key = value` lines; '#' starts a comment.
    void merge_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open config '" + path + "'");
        std::string line;
        std::size_t no = 0;
        while (std::getline(in, line)) {
            ++no;
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw Error(path + ":" + std::to_string(no) + ": expected key=value");
            std::string key = trim(line.substr(0, eq));
            std::replace(key.begin(), key.end(), '-', '_');
            set(key, trim(line.substr(eq + 1)));
        }
    }

    /// Later layers win: defaults < file < flags.
    void overlay(const Settings& o) {
        for (const auto& [k, v] : o.values_) values_[k] = v;
    }

private:
    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Settings -> library configs

inline ModelConfig model_config(const Settings& s, std::size_t vocab) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.edge_dim = s.integer("edge_dim", c.edge_dim);
    c.embed_dim = s.integer("embed_dim", c.embed_dim);
    c.hidden = s.integer("hidden", c.hidden);
    c.aggregation = parse_aggregation(s.str("aggregation", to_string(c.aggregation)));
    c.edge_bias_init = s.real("edge_bias_init", c.edge_bias_init);
    c.embedding_init_std = s.real("embedding_init_std", c.embedding_init_std);
    c.gate.binary_eval = s.boolean("binary_gate", false);
    c.validate();
    return c;
}

inline EdgeSet read_edges(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open edge file '" + path + "'");
    EdgeSet out;
    FeatureId i = 0, j = 0;
    while (in >> i >> j) out.insert({std::min(i, j), std::max(i, j)});
    if (!in.eof()) throw Error("malformed edge file '" + path + "'");
    return out;
}

inline TrainConfig train_config(const Settings& s) {
    TrainConfig c;
    c.lambda1 = s.real("lambda1", c.lambda1);
    c.lambda2 = s.real("lambda2", c.lambda2);
    c.learning_rate = s.real("lr", c.learning_rate);
    c.initial_accumulator = s.real("initial_accumulator", c.initial_accumulator);
    c.epochs = s.integer("epochs", c.epochs);
    c.batch_size = s.integer("batch", c.batch_size);
    c.seed = s.integer("seed", c.seed);
    c.mode = parse_train_mode(s.str("mode", to_string(c.mode)));
    const auto upd = s.str("embedding_update", "gradient");
    if (upd == "gradient") {
        c.embedding_update = EmbeddingUpdate::gradient;
    } else if (upd == "algorithm-literal") {
        c.embedding_update = EmbeddingUpdate::algorithm_literal;
    } else {
        throw Error("unknown embedding_update '" + upd + "' (expected gradient or algorithm-literal)");
    }
    c.steady_window = s.integer("steady_window", c.steady_window);
    c.steady_tolerance = s.real("steady_tolerance", c.steady_tolerance);
    if (c.mode == TrainMode::sign_fixed) {
        if (!s.has("edges")) throw Error("mode sign-fixed needs --edges <file of 'i j' lines>");
        c.fixed_edges = read_edges(s.required("edges"));
    }
    c.validate();
    return c;
}

inline SplitSpec split_spec(const Settings& s) {
    SplitSpec sp;
    sp.train = s.real("train_frac", sp.train);
    sp.valid = s.real("valid_frac", sp.valid);
    sp.test = s.real("test_frac", sp.test);
    sp.seed = s.integer("seed", 0);
    return sp;
}

inline fs::path out_dir(const Settings& s) {
    fs::path dir = s.str("out", ".");
    fs::create_directories(dir);
    return dir;
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

inline json metrics_json(const Metrics& m) {
    return {{"auc", m.auc}, {"acc", m.acc}, {"f1", m.f1}, {"f1_undefined", m.f1_undefined},
            {"n_samples", m.n_samples}};
}

inline json edges_json(const EdgeSet& e) {
    json a = json::array();
    for (const auto& [i, j] : e) a.push_back({i, j});
    return a;
}

inline EdgeSet edges_from_json(const json& a) {
    EdgeSet e;
    for (const auto& p : a) e.insert({p.at(0).get<FeatureId>(), p.at(1).get<FeatureId>()});
    return e;
}

/// Settings recorded in a checkpoint so later commands see the same split
/// and gating regime.
inline TrainConfig restore_train_config(const Checkpoint& ck) {
    TrainConfig c;
    c.seed = ck.seed;
    c.mode = parse_train_mode(ck.extra.value("mode", "l0sign"));
    if (ck.extra.contains("fixed_edges")) c.fixed_edges = edges_from_json(ck.extra.at("fixed_edges"));
    return c;
}

inline SplitSpec restore_split(const Checkpoint& ck) {
    SplitSpec sp;
    if (ck.extra.contains("split")) {
        const auto& j = ck.extra.at("split");
        sp.train = j.at("train");
        sp.valid = j.at("valid");
        sp.test = j.at("test");
    }
    sp.seed = ck.seed;
    return sp;
}

inline void write_edge_csv(const fs::path& path, const EdgeReport& rep) {
    std::ofstream out(path);
    out << "i,j,gate,count\n";
    for (const auto& e : rep.entries) {
        out << e.pair.first << ',' << e.pair.second << ',' << detail::format_double(e.gate) << ',' << e.count
            << '\n';
    }
}

// ---------------------------------------------------------------------------
// Commands. Each returns the process exit status.

inline int cmd_synth(const Settings& s, std::ostream& log) {
    SyntheticSpec spec;
    spec.vocab_size = s.integer("vocab_size", spec.vocab_size);
    spec.n_samples = s.integer("samples", spec.n_samples);
    spec.nodes_per_sample = s.integer("nodes_per_sample", spec.nodes_per_sample);
    spec.noise_rate = s.real("noise_rate", spec.noise_rate);
    spec.seed = s.integer("seed", 0);
    spec.planted_pairs = draw_planted_pairs(spec.vocab_size, s.integer("planted", 5), spec.seed);
    const auto ds = generate_synthetic(spec);
    const auto dir = out_dir(s);
    save_dataset((dir / "data.txt").string(), ds);
    write_json(dir / "ground_truth.json", ground_truth_json(ds));
    log << "wrote " << ds.size() << " instances to " << (dir / "data.txt").string() << '\n';
    return 0;
}

inline int cmd_train(const Settings& s, std::ostream& log) {
    const auto ds = load_dataset(s.required("data"));
    const auto sp_spec = split_spec(s);
    const auto sp = split(ds, sp_spec);
    const auto tc = train_config(s);
    const auto mc = model_config(s, ds.vocab_size);

    auto result = fit(sp.train, sp.valid, ModelParams::initialize(mc, tc.seed), tc);
    const auto dir = out_dir(s);
    {
        std::ofstream csv(dir / "train_log.csv");
        write_training_log(csv, result.records);
    }
    Checkpoint ck{result.params, tc.seed, json::object()};
    ck.extra["mode"] = to_string(tc.mode);
    ck.extra["selected_epoch"] = result.selected_epoch;
    ck.extra["selected_steady"] = result.selected_steady;
    ck.extra["split"] = {{"train", sp_spec.train}, {"valid", sp_spec.valid}, {"test", sp_spec.test}};
    if (tc.mode == TrainMode::sign_fixed) ck.extra["fixed_edges"] = edges_json(tc.fixed_edges);
    save_checkpoint((dir / "checkpoint.bin").string(), ck);

    const auto rep = edge_report(sp.train, result.params);
    write_edge_csv(dir / "edges.csv", rep);
    json summary = {{"selected_epoch", result.selected_epoch},
                    {"selected_steady", result.selected_steady},
                    {"diverged", result.diverged},
                    {"valid", metrics_json(evaluate(sp.valid, result.params, tc))},
                    {"test", metrics_json(evaluate(sp.test, result.params, tc))},
                    {"open_gate_fraction", mode_open_fraction(sp.valid, result.params, tc)}};
    if (s.has("truth")) {
        std::ifstream in(s.required("truth"));
        if (!in) throw Error("cannot open '" + s.required("truth") + "'");
        const auto planted = parse_ground_truth(json::parse(in));
        const auto r = edge_recovery(rep, planted);
        summary["recovery"] = {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
    }
    write_json(dir / "summary.json", summary);
    log << "selected epoch " << result.selected_epoch << ", test auc " << summary["test"]["auc"].get<double>()
        << '\n';
    return 0;
}

// checkpoint, with binary_gate overriding the stored inference gate if given
inline Checkpoint load_model(const Settings& s) {
    auto ck = load_checkpoint(s.required("checkpoint"));
    if (s.has("binary_gate")) ck.params.set_binary_eval(s.boolean("binary_gate", false));
    return ck;
}

inline int cmd_eval(const Settings& s, std::ostream& log) {
    const auto ds = load_dataset(s.required("data"));
    const auto ck = load_model(s);
    const auto tc = restore_train_config(ck);
    const auto sp = split(ds, restore_split(ck));
    const json out = {{"valid", metrics_json(evaluate(sp.valid, ck.params, tc))},
                      {"test", metrics_json(evaluate(sp.test, ck.params, tc))},
                      {"open_gate_fraction", mode_open_fraction(sp.valid, ck.params, tc)}};
    write_json(out_dir(s) / "eval.json", out);
    log << "test auc " << out["test"]["auc"].get<double>() << " acc " << out["test"]["acc"].get<double>() << '\n';
    return 0;
}

inline int cmd_ablate(const Settings& s, std::ostream& log) {
    const auto ds = load_dataset(s.required("data"));
    const auto ck = load_model(s);
    const auto sp = split(ds, restore_split(ck));
    TrainConfig base = train_config(s);
    base.seed = s.has("seed") ? s.integer("seed", 0) : ck.seed;
    AblationConfig ac;
    ac.ratios = s.reals("ratios", ac.ratios);
    ac.threshold = s.real("threshold", ac.threshold);
    ac.repeats = s.integer("repeats", ac.repeats);
    const auto rows = run_ablation(sp, ck.params, base, ac);
    std::ofstream csv(out_dir(s) / "ablation.csv");
    write_ablation_csv(csv, rows);
    for (const auto& r : rows) {
        log << to_string(r.source) << " ratio " << r.ratio << " edges " << r.edges << " auc " << r.mean_auc()
            << '\n';
    }
    return 0;
}

inline int cmd_explain(const Settings& s, std::ostream& log) {
    const auto ds = load_dataset(s.required("data"));
    const auto ck = load_model(s);
    const auto sp = split(ds, restore_split(ck));
    const std::size_t n = std::min<std::size_t>(s.integer("instances", sp.test.size()), sp.test.size());

    json per = json::array();
    std::map<FeaturePair, std::pair<double, std::size_t>> totals;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ex = explain(sp.test.instances[i], ck.params, i);
        per.push_back(to_json(ex));
        for (const auto& p : ex.pairs) {
            auto& t = totals[{p.i, p.j}];
            t.first += p.contribution;
            ++t.second;
        }
    }
    json mean = json::array();
    for (const auto& [pair, t] : totals) {
        mean.push_back({{"i", pair.first}, {"j", pair.second}, {"mean_contribution", t.first / double(t.second)},
                        {"instances", t.second}});
    }
    write_json(out_dir(s) / "explanations.json", {{"instances", per}, {"pair_means", mean}});
    log << "explained " << n << " test instances\n";
    return 0;
}

inline int cmd_gradcheck(const Settings& s, std::ostream& log) {
    const std::uint64_t seed = s.integer("seed", 0);
    const std::size_t n = s.integer("instances", 20);
    const std::size_t max_nodes = s.integer("max_nodes", 6);
    const std::size_t dim = s.integer("dim", 4);
    const double tol = s.real("tolerance", 1e-4);
    const std::size_t vocab = s.integer("vocab_size", 12);
    if (max_nodes < 1 || max_nodes > vocab) throw Error("gradcheck: need 1 <= max_nodes <= vocab_size");

    ModelConfig mc;
    mc.vocab_size = vocab;
    mc.edge_dim = mc.embed_dim = dim;
    mc.hidden = s.integer("hidden", 8);
    mc.aggregation = parse_aggregation(s.str("aggregation", "soft_degree"));
    mc.embedding_init_std = s.real("embedding_init_std", 0.5);
    TrainConfig tc;
    tc.lambda1 = s.real("lambda1", 0.05);
    tc.lambda2 = s.real("lambda2", 0.01);
    tc.seed = seed;

    std::mt19937_64 rng(seed);
    double worst = 0.0;
    json rows = json::array();
    for (std::size_t t = 0; t < n; ++t) {
        const auto params = ModelParams::initialize(mc, seed * 1000 + t);
        std::vector<FeatureId> pool(vocab);
        std::iota(pool.begin(), pool.end(), FeatureId{0});
        std::vector<std::pair<FeatureId, double>> entries;
        const std::size_t k = 1 + rng() % max_nodes;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + rng() % (vocab - i);
            std::swap(pool[i], pool[j]);
            entries.emplace_back(pool[i], 0.5 + double(rng() % 1000) / 1000.0);
        }
        const auto inst = make_instance(entries, int(rng() % 2));
        const auto r = grad_check(params, inst, tc, 1e-5, 0, t);
        worst = std::max(worst, r.max_relative_error);
        rows.push_back({{"instance", t}, {"nodes", k}, {"max_relative_error", r.max_relative_error},
                        {"worst_param", r.worst_param}, {"max_abs_error", r.max_abs_error}, {"worst_index", r.worst_index}});
    }
    const bool ok = worst <= tol;
    write_json(out_dir(s) / "gradcheck.json",
               {{"max_relative_error", worst}, {"tolerance", tol}, {"pass", ok}, {"instances", rows}});
    log << "max relative error " << worst << (ok ? " <= " : " > ") << tol << '\n';
    return ok ? 0 : 1;
}

} // namespace l0sign::cli
