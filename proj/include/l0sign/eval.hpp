#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "data.hpp"
#include "model.hpp"

namespace l0sign {

// ---------------------------------------------------------------------------
// Classification metrics. Scores are raw model outputs; a prediction is
// positive iff score > threshold.

/// Rank-sum AUC: probability that a random positive outranks a random
/// negative, ties counted as one half.
inline double auc(std::span<const int> labels, std::span<const double> scores) {
    detail::require_same_length(labels.size(), scores.size(), "auc");
    const std::size_t n = labels.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) {
                pos_rank_sum += mid_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("auc: need both positive and negative labels");
    const double np = double(n_pos), nn = double(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double acc(std::span<const int> labels, std::span<const double> scores, double threshold = 0.0) {
    detail::require_same_length(labels.size(), scores.size(), "acc");
    if (labels.empty()) throw Error("acc: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        correct += (scores[i] > threshold ? 1 : 0) == labels[i];
    }
    return double(correct) / double(labels.size());
}

struct F1Result {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    bool undefined = false;  // no predicted or no true positives
};

inline F1Result f1(std::span<const int> labels, std::span<const double> scores, double threshold = 0.0) {
    detail::require_same_length(labels.size(), scores.size(), "f1");
    if (labels.empty()) throw Error("f1: empty input");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = scores[i] > threshold;
        tp += pred && labels[i] == 1;
        fp += pred && labels[i] == 0;
        fn += !pred && labels[i] == 1;
    }
    F1Result r;
    if (tp + fp == 0 || tp + fn == 0) {
        r.undefined = true;
        return r;
    }
    r.precision = double(tp) / double(tp + fp);
    r.recall = double(tp) / double(tp + fn);
    r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

struct Metrics {
    double auc = 0.5;
    double acc = 0.0;
    double f1 = 0.0;
    bool f1_undefined = false;
    std::size_t n_samples = 0;
};

inline Metrics compute_metrics(std::span<const int> labels, std::span<const double> scores) {
    Metrics m;
    m.n_samples = labels.size();
    m.auc = auc(labels, scores);
    m.acc = acc(labels, scores);
    const auto f = f1(labels, scores);
    m.f1 = f.f1;
    m.f1_undefined = f.undefined;
    return m;
}

// ---------------------------------------------------------------------------
// Edges

inline constexpr double kEdgeThreshold = 0.5;

using FeaturePair = std::pair<FeatureId, FeatureId>;  // first <= second

/// Unordered pairs (self-pairs included) co-occurring in at least one instance, with counts.
inline std::map<FeaturePair, std::size_t> cooccurring_pairs(const Dataset& ds) {
    std::map<FeaturePair, std::size_t> out;
    for (const auto& inst : ds.instances) {
        for (std::size_t a = 0; a < inst.size(); ++a) {
            for (std::size_t b = a; b < inst.size(); ++b) ++out[{inst.nodes[a], inst.nodes[b]}];
        }
    }
    return out;
}

struct EdgeEntry {
    FeaturePair pair;
    double gate = 0.0;
    std::size_t count = 0;
};

struct EdgeReport {
    std::vector<EdgeEntry> entries;
    double open_fraction = 0.0;  // share of distinct co-occurring pairs with gate > threshold
    double threshold = kEdgeThreshold;

    std::vector<FeaturePair> predicted(double gate_threshold) const {
        std::vector<FeaturePair> out;
        for (const auto& e : entries) {
            if (e.gate > gate_threshold) out.push_back(e.pair);
        }
        return out;
    }
};

/// Deterministic gate of every co-occurring pair. Gates depend only on the
/// two feature ids, never on the rest of the instance.
inline EdgeReport edge_report(const Dataset& ds, const ModelParams& p, double threshold = kEdgeThreshold) {
    EdgeReport r;
    r.threshold = threshold;
    std::size_t open = 0;
    for (const auto& [pair, count] : cooccurring_pairs(ds)) {
        const double g = eval_gate(edge_logit(pair.first, pair.second, p), p.config().gate);
        r.entries.push_back({pair, g, count});
        open += g > threshold;
    }
    r.open_fraction = r.entries.empty() ? 0.0 : double(open) / double(r.entries.size());
    return r;
}

/// Fraction of instance pairs (self-pairs included) whose deterministic gate exceeds the threshold.
inline double open_gate_fraction(const Dataset& ds, const ModelParams& p, double threshold = kEdgeThreshold) {
    std::map<FeaturePair, double> cache;
    std::size_t open = 0, total = 0;
    for (const auto& inst : ds.instances) {
        for (std::size_t a = 0; a < inst.size(); ++a) {
            for (std::size_t b = a; b < inst.size(); ++b) {
                const FeaturePair key{inst.nodes[a], inst.nodes[b]};
                auto it = cache.find(key);
                if (it == cache.end()) {
                    it = cache.emplace(key, eval_gate(edge_logit(key.first, key.second, p), p.config().gate)).first;
                }
                open += it->second > threshold;
                ++total;
            }
        }
    }
    return total == 0 ? 0.0 : double(open) / double(total);
}

struct RecoveryScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Set precision/recall of predicted non-self edges against the planted pairs.
inline RecoveryScore edge_recovery(const EdgeReport& report, std::span<const PlantedPair> planted,
                                   double gate_threshold = kEdgeThreshold) {
    if (planted.empty()) throw Error("edge_recovery: empty planted set");
    std::set<FeaturePair> truth;
    for (const auto& p : planted) truth.insert({std::min(p.i, p.j), std::max(p.i, p.j)});
    std::size_t predicted = 0, hit = 0;
    for (const auto& e : report.entries) {
        if (e.pair.first == e.pair.second || e.count == 0 || !(e.gate > gate_threshold)) continue;
        ++predicted;
        hit += truth.count(e.pair);
    }
    RecoveryScore s;
    s.precision = predicted ? double(hit) / double(predicted) : 0.0;
    s.recall = double(hit) / double(truth.size());
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

// ---------------------------------------------------------------------------
// Explanations

struct ExplainedPair {
    FeatureId i = 0, j = 0;
    double gate = 0.0;
    double contribution = 0.0;
};

struct Explanation {
    std::size_t instance = 0;
    double score = 0.0;
    std::vector<ExplainedPair> pairs;  // every pair with gate > 0, by |contribution| descending
};

/// Per-pair additive decomposition of the deterministic L0-SIGN score:
/// the contributions (self-pairs included) sum to the score.
inline Explanation explain(const Instance& inst, const ModelParams& p, std::size_t instance_id = 0) {
    const auto rec = forward(inst, p, DeterministicGates{});
    Explanation ex;
    ex.instance = instance_id;
    ex.score = rec.score;
    for (const auto& pr : rec.pairs) {
        if (pr.gate > 0.0) {
            ex.pairs.push_back({inst.nodes[pr.a], inst.nodes[pr.b], pr.gate, pr.contribution});
        }
    }
    std::stable_sort(ex.pairs.begin(), ex.pairs.end(), [](const auto& x, const auto& y) {
        return std::abs(x.contribution) > std::abs(y.contribution);
    });
    return ex;
}

inline nlohmann::json to_json(const Explanation& ex) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : ex.pairs) {
        pairs.push_back({{"i", p.i}, {"j", p.j}, {"gate", p.gate}, {"contribution", p.contribution}});
    }
    return {{"instance", ex.instance}, {"score", ex.score}, {"pairs", pairs}};
}

inline Explanation explanation_from_json(const nlohmann::json& j) {
    Explanation ex;
    ex.instance = j.at("instance").get<std::size_t>();
    ex.score = j.at("score").get<double>();
    for (const auto& p : j.at("pairs")) {
        ex.pairs.push_back({p.at("i").get<FeatureId>(), p.at("j").get<FeatureId>(),
                            p.at("gate").get<double>(), p.at("contribution").get<double>()});
    }
    return ex;
}

} // namespace l0sign
