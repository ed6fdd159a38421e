#pragma once

// Predicted-vs-reversed edge ablation: SIGN is retrained on random subsets
// of the learned edge set and of its complement, and scored on test data.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "train.hpp"

namespace l0sign {

enum class EdgeSource { predicted, reversed };

inline const char* to_string(EdgeSource s) { return s == EdgeSource::predicted ? "predicted" : "reversed"; }

struct AblationConfig {
    std::vector<double> ratios = {0.2, 0.4, 0.6, 0.8, 1.0};
    std::size_t repeats = 5;
    double threshold = kEdgeThreshold;
};

struct AblationRow {
    EdgeSource source = EdgeSource::predicted;
    double ratio = 1.0;
    std::vector<double> auc;  // per repeat
    std::vector<double> acc;
    std::size_t edges = 0;

    double mean_auc() const { return std::accumulate(auc.begin(), auc.end(), 0.0) / double(auc.size()); }
    double mean_acc() const { return std::accumulate(acc.begin(), acc.end(), 0.0) / double(acc.size()); }
};

struct EdgePartition {
    std::vector<FeaturePair> predicted;
    std::vector<FeaturePair> reversed;
};

/// Predicted = co-occurring training pairs whose deterministic gate exceeds
/// the threshold; reversed = the remaining co-occurring pairs.
inline EdgePartition partition_edges(const Dataset& train, const ModelParams& p,
                                     double threshold = kEdgeThreshold) {
    EdgePartition out;
    for (const auto& e : edge_report(train, p, threshold).entries) {
        (e.gate > threshold ? out.predicted : out.reversed).push_back(e.pair);
    }
    return out;
}

/// Uniform random subset of round(ratio * |edges|) pairs (at least one).
inline EdgeSet sample_edges(const std::vector<FeaturePair>& edges, double ratio, std::uint64_t seed) {
    std::vector<FeaturePair> pool = edges;
    std::mt19937_64 rng(seed);
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
    const auto n = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * double(pool.size()))),
                                           1, pool.size());
    return EdgeSet(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
}

/// Runs every (source, ratio) cell `repeats` times. Repeat r uses seed
/// base.seed + r for both the edge subset and the SIGN initialization.
inline std::vector<AblationRow> run_ablation(const Splits& data, const ModelParams& trained,
                                             const TrainConfig& base, const AblationConfig& cfg) {
    const auto parts = partition_edges(data.train, trained, cfg.threshold);
    if (parts.predicted.empty()) throw Error("ablate: predicted edge set is empty");
    if (parts.reversed.empty()) throw Error("ablate: reversed edge set is empty");

    std::vector<AblationRow> rows;
    for (const auto source : {EdgeSource::predicted, EdgeSource::reversed}) {
        const auto& edges = source == EdgeSource::predicted ? parts.predicted : parts.reversed;
        for (const double ratio : cfg.ratios) {
            AblationRow row;
            row.source = source;
            row.ratio = ratio;
            for (std::size_t r = 0; r < cfg.repeats; ++r) {
                TrainConfig tc = base;
                tc.mode = TrainMode::sign_fixed;
                tc.lambda1 = 0.0;
                tc.seed = base.seed + r;
                tc.fixed_edges = sample_edges(edges, ratio, tc.seed);
                row.edges = tc.fixed_edges.size();
                const auto fitted =
                    fit(data.train, data.valid, ModelParams::initialize(trained.config(), tc.seed), tc);
                const auto m = evaluate(data.test, fitted.params, tc);
                row.auc.push_back(m.auc);
                row.acc.push_back(m.acc);
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

/// One row per repeat plus a "mean" row per (source, ratio).
inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
    out << "source,ratio,repeat,edges,auc,acc\n";
    for (const auto& row : rows) {
        const auto ratio = detail::format_double(row.ratio);
        for (std::size_t r = 0; r < row.auc.size(); ++r) {
            out << to_string(row.source) << ',' << ratio << ',' << r << ',' << row.edges << ','
                << detail::format_double(row.auc[r]) << ',' << detail::format_double(row.acc[r]) << '\n';
        }
        out << to_string(row.source) << ',' << ratio << ",mean," << row.edges << ','
            << detail::format_double(row.mean_auc()) << ',' << detail::format_double(row.mean_acc()) << '\n';
    }
}

} // namespace l0sign
