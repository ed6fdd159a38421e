#pragma once

// Empirical risk minimization:
//   R = 1/N sum_n [ logloss(y'_n, y_n) + lambda1 sum_pairs pi + lambda2 sum_pairs |z|^2 ]
// with minibatch Adagrad and validation-based checkpoint selection.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "eval.hpp"
#include "gates.hpp"
#include "model.hpp"

namespace l0sign {

enum class TrainMode {
    l0sign,         // learned gates
    sign_complete,  // every gate pinned to 1
    sign_fixed,     // gates fixed to a given edge set, edge side frozen
};

enum class EmbeddingUpdate {
    gradient,           // embeddings trained like every other parameter
    algorithm_literal,  // embeddings overwritten by aggregated v' and excluded from updates
};

inline TrainMode parse_train_mode(const std::string& s) {
    if (s == "l0sign") return TrainMode::l0sign;
    if (s == "sign-complete") return TrainMode::sign_complete;
    if (s == "sign-fixed") return TrainMode::sign_fixed;
    throw Error("unknown mode '" + s + "' (expected l0sign, sign-complete or sign-fixed)");
}

inline const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::l0sign: return "l0sign";
        case TrainMode::sign_complete: return "sign-complete";
        case TrainMode::sign_fixed: return "sign-fixed";
    }
    return "?";
}

using EdgeSet = std::set<FeaturePair>;

struct TrainConfig {
    double lambda1 = 1e-3;
    double lambda2 = 1e-3;
    double learning_rate = 0.05;
    double initial_accumulator = 0.0;
    std::size_t batch_size = 1024;
    std::size_t epochs = 60;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::l0sign;
    EmbeddingUpdate embedding_update = EmbeddingUpdate::gradient;
    EdgeSet fixed_edges;  // sign_fixed only
    std::size_t steady_window = 3;
    double steady_tolerance = 0.01;

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0) throw Error("TrainConfig: lambdas must be >= 0");
        if (!(learning_rate > 0)) throw Error("TrainConfig: learning rate must be > 0");
        if (initial_accumulator < 0) throw Error("TrainConfig: initial accumulator must be >= 0");
        if (batch_size == 0) throw Error("TrainConfig: batch size must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Gate sources per mode

inline Matrix edge_set_gates(const Instance& inst, const EdgeSet& edges) {
    const std::size_t k = inst.size();
    Matrix g(k, k);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a; b < k; ++b) {
            const double v = edges.count({inst.nodes[a], inst.nodes[b]}) ? 1.0 : 0.0;
            g(a, b) = g(b, a) = v;
        }
    }
    return g;
}

/// Gates used while training on sample `sample_index` in `epoch`.
inline GateSource training_gates(const Instance& inst, const TrainConfig& cfg, std::uint64_t epoch,
                                 std::uint64_t sample_index) {
    switch (cfg.mode) {
        case TrainMode::l0sign: return SampledGates{{cfg.seed, epoch, sample_index}};
        case TrainMode::sign_complete: return complete_gates(inst.size());
        case TrainMode::sign_fixed: return ExplicitGates{edge_set_gates(inst, cfg.fixed_edges)};
    }
    throw Error("training_gates: bad mode");
}

/// Gates used for evaluation: deterministic for L0-SIGN, explicit otherwise.
inline GateSource inference_gates(const Instance& inst, const TrainConfig& cfg) {
    switch (cfg.mode) {
        case TrainMode::l0sign: return DeterministicGates{};
        case TrainMode::sign_complete: return complete_gates(inst.size());
        case TrainMode::sign_fixed: return ExplicitGates{edge_set_gates(inst, cfg.fixed_edges)};
    }
    throw Error("inference_gates: bad mode");
}

inline std::vector<double> predict_scores(const Dataset& ds, const ModelParams& p, const TrainConfig& cfg) {
    std::vector<double> out;
    out.reserve(ds.size());
    for (const auto& inst : ds.instances) out.push_back(forward(inst, p, inference_gates(inst, cfg)).score);
    return out;
}

inline std::vector<int> labels_of(const Dataset& ds) {
    std::vector<int> out;
    out.reserve(ds.size());
    for (const auto& inst : ds.instances) out.push_back(inst.label);
    return out;
}

inline Metrics evaluate(const Dataset& ds, const ModelParams& p, const TrainConfig& cfg) {
    const auto labels = labels_of(ds);
    const auto scores = predict_scores(ds, p, cfg);
    return compute_metrics(labels, scores);
}

/// Open-gate fraction as seen by a given mode.
inline double mode_open_fraction(const Dataset& ds, const ModelParams& p, const TrainConfig& cfg) {
    if (cfg.mode == TrainMode::l0sign) return open_gate_fraction(ds, p);
    if (cfg.mode == TrainMode::sign_complete) return 1.0;
    std::size_t open = 0, total = 0;
    for (const auto& inst : ds.instances) {
        for (std::size_t a = 0; a < inst.size(); ++a) {
            for (std::size_t b = a; b < inst.size(); ++b) {
                open += cfg.fixed_edges.count({inst.nodes[a], inst.nodes[b]});
                ++total;
            }
        }
    }
    return total ? double(open) / double(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Risk

inline double logistic_loss(double score, int label) noexcept {
    const double m = -(label == 1 ? 1.0 : -1.0) * score;  // ln(1 + e^m)
    return m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

inline double logistic_loss_grad(double score, int label) noexcept {
    const double y = label == 1 ? 1.0 : -1.0;
    return -y * sigmoid(-y * score);
}

struct RiskTerms {
    double risk = 0.0;
    double loss = 0.0;  // mean prediction loss
    double l0 = 0.0;    // mean sum of open probabilities (unweighted)
    double l2 = 0.0;    // mean sum of squared interaction entries (unweighted)
};

/// Risk over a batch. Accumulates gradients into p's store when `with_grad`.
/// `sample_ids` are the noise-stream indices of the batch instances.
inline RiskTerms risk(std::span<const Instance* const> batch, std::span<const std::uint64_t> sample_ids,
                      ModelParams& p, const TrainConfig& cfg, std::uint64_t epoch, bool with_grad = true,
                      std::vector<std::pair<const Instance*, std::vector<Vector>>>* aggregated = nullptr) {
    if (batch.empty()) throw Error("risk: empty batch");
    detail::require_same_length(batch.size(), sample_ids.size(), "risk");
    const double inv_n = 1.0 / double(batch.size());
    const bool learn_edges = cfg.mode == TrainMode::l0sign;
    RiskTerms t;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const Instance& inst = *batch[n];
        const auto rec = forward(inst, p, training_gates(inst, cfg, epoch, sample_ids[n]));
        double l0 = 0.0, l2 = 0.0;
        for (const auto& pr : rec.pairs) {
            if (learn_edges) l0 += open_probability(pr.edge->log_alpha, p.config().gate);
            for (double z : pr.inter.z) l2 += z * z;
        }
        const double loss = logistic_loss(rec.score, inst.label);
        t.loss += inv_n * loss;
        t.l0 += inv_n * l0;
        t.l2 += inv_n * l2;
        if (with_grad) {
            backward(inst, rec, p,
                     {inv_n * logistic_loss_grad(rec.score, inst.label),
                      learn_edges ? inv_n * cfg.lambda1 : 0.0, inv_n * cfg.lambda2});
        }
        if (aggregated) {
            std::vector<Vector> vprime;
            for (const auto& node : rec.nodes) vprime.push_back(node.vprime);
            aggregated->emplace_back(&inst, std::move(vprime));
        }
    }
    t.risk = t.loss + (learn_edges ? cfg.lambda1 * t.l0 : 0.0) + cfg.lambda2 * t.l2;
    return t;
}

// ---------------------------------------------------------------------------
// Adagrad: acc += g^2; p -= lr * g / (sqrt(acc) + eps), acc starting at
// `initial_accumulator`

class Adagrad {
public:
    explicit Adagrad(double lr, double eps = 1e-10, double initial_accumulator = 0.0)
        : lr_(lr), eps_(eps), init_(initial_accumulator) {}

    /// Updates every parameter not masked out by `frozen`.
    void step(ParamStore& store, const std::vector<bool>& frozen = {}) {
        if (acc_.empty()) {
            for (std::size_t i = 0; i < store.count(); ++i) {
                acc_.emplace_back(store.value(i).rows(), store.value(i).cols(), init_);
            }
        }
        if (acc_.size() != store.count()) throw Error("Adagrad: parameter layout changed");
        for (std::size_t i = 0; i < store.count(); ++i) {
            if (i < frozen.size() && frozen[i]) continue;
            auto w = store.value(i).values();
            const auto g = store.grad(i).values();
            auto a = acc_[i].values();
            if (a.size() != w.size()) throw Error("Adagrad: state shape mismatch");
            for (std::size_t k = 0; k < w.size(); ++k) {
                if (g[k] == 0.0) continue;
                a[k] += g[k] * g[k];
                w[k] -= lr_ * g[k] / (std::sqrt(a[k]) + eps_);
            }
        }
    }

    double learning_rate() const noexcept { return lr_; }

private:
    double lr_;
    double eps_;
    double init_;
    std::vector<Matrix> acc_;
};

// ---------------------------------------------------------------------------
// fit

struct EpochRecord {
    std::size_t epoch = 0;
    double train_risk = 0.0;
    double valid_auc = 0.5;
    double valid_acc = 0.0;
    double open_gate_fraction = 0.0;
};

struct FitResult {
    ModelParams params;  // selected checkpoint
    std::vector<EpochRecord> records;  // records[0] is the untrained model
    std::size_t selected_epoch = 0;
    bool selected_steady = false;
    bool diverged = false;
};

namespace detail {

inline bool steady_at(const std::vector<EpochRecord>& recs, std::size_t e, std::size_t window, double tol) {
    if (e < window) return false;
    double lo = recs[e].open_gate_fraction, hi = lo;
    for (std::size_t t = e - window; t < e; ++t) {
        lo = std::min(lo, recs[t].open_gate_fraction);
        hi = std::max(hi, recs[t].open_gate_fraction);
    }
    return hi - lo < tol;
}

inline std::vector<bool> frozen_mask(const TrainConfig& cfg) {
    std::vector<bool> mask(kParamCount, false);
    if (cfg.mode != TrainMode::l0sign) {
        for (std::size_t id = 0; id < kParamCount; ++id) mask[id] = is_edge_param(id);
    }
    if (cfg.embedding_update == EmbeddingUpdate::algorithm_literal) mask[kEmbedding] = true;
    return mask;
}

} // namespace detail

/// Trains from `init`. After each epoch the validation metrics and open-gate
/// fraction are recorded; the returned checkpoint maximizes validation AUC
/// among epochs whose open-gate fraction stayed within `steady_tolerance`
/// over the previous `steady_window` epochs, or over all epochs otherwise.
inline FitResult fit(const Dataset& train, const Dataset& valid, ModelParams init, const TrainConfig& cfg) {
    cfg.validate();
    if (train.size() == 0 || valid.size() == 0) throw Error("fit: empty split");
    train.validate();
    valid.validate();

    FitResult result;
    ModelParams params = std::move(init);
    Adagrad opt(cfg.learning_rate, 1e-10, cfg.initial_accumulator);
    const auto frozen = detail::frozen_mask(cfg);
    const bool literal = cfg.embedding_update == EmbeddingUpdate::algorithm_literal;

    std::vector<const Instance*> all(train.size());
    std::vector<std::uint64_t> ids(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        all[i] = &train.instances[i];
        ids[i] = i;
    }

    auto record_epoch = [&](std::size_t epoch, double train_risk) {
        EpochRecord r;
        r.epoch = epoch;
        r.train_risk = train_risk;
        const auto m = evaluate(valid, params, cfg);
        r.valid_auc = m.auc;
        r.valid_acc = m.acc;
        r.open_gate_fraction = mode_open_fraction(valid, params, cfg);
        result.records.push_back(r);
    };

    {
        ModelParams probe = params;
        record_epoch(0, risk(all, ids, probe, cfg, 0, false).risk);
    }

    std::optional<ModelParams> best_steady, best_any;
    std::size_t best_steady_epoch = 0, best_any_epoch = 0;
    double best_steady_auc = -1.0, best_any_auc = -1.0;
    ModelParams last_finite = params;
    std::size_t last_finite_epoch = 0;

    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(splitmix64(cfg.seed ^ (epoch * 0x9E3779B97F4A7C15ull)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

        double risk_sum = 0.0;
        bool finite = true;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const Instance*> batch;
            std::vector<std::uint64_t> batch_ids;
            for (std::size_t t = start; t < end; ++t) {
                batch.push_back(all[order[t]]);
                batch_ids.push_back(ids[order[t]]);
            }
            params.store().zero_grad();
            std::vector<std::pair<const Instance*, std::vector<Vector>>> aggregated;
            const auto terms = risk(batch, batch_ids, params, cfg, epoch, true, literal ? &aggregated : nullptr);
            if (!std::isfinite(terms.risk)) {
                finite = false;
                break;
            }
            risk_sum += terms.risk * double(end - start);
            opt.step(params.store(), frozen);
            if (literal) {
                for (const auto& [inst, vprime] : aggregated) {
                    for (std::size_t a = 0; a < inst->size(); ++a) {
                        auto row = params[kEmbedding].row(inst->nodes[a]);
                        std::copy(vprime[a].begin(), vprime[a].end(), row.begin());
                    }
                }
            }
        }
        if (!finite) {
            result.diverged = true;
            break;
        }
        record_epoch(epoch, risk_sum / double(train.size()));
        const auto& rec = result.records.back();
        if (!std::isfinite(rec.valid_auc)) {
            result.diverged = true;
            break;
        }
        last_finite = params;
        last_finite_epoch = epoch;
        if (rec.valid_auc > best_any_auc) {
            best_any_auc = rec.valid_auc;
            best_any = params;
            best_any_epoch = epoch;
        }
        if (detail::steady_at(result.records, epoch, cfg.steady_window, cfg.steady_tolerance) &&
            rec.valid_auc > best_steady_auc) {
            best_steady_auc = rec.valid_auc;
            best_steady = params;
            best_steady_epoch = epoch;
        }
    }

    if (best_steady) {
        result.params = std::move(*best_steady);
        result.selected_epoch = best_steady_epoch;
        result.selected_steady = true;
    } else if (best_any) {
        result.params = std::move(*best_any);
        result.selected_epoch = best_any_epoch;
    } else {
        result.params = std::move(last_finite);
        result.selected_epoch = last_finite_epoch;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Training log

inline void write_training_log(std::ostream& out, const std::vector<EpochRecord>& recs) {
    out << "epoch,train_risk,valid_auc,valid_acc,open_gate_fraction\n";
    for (const auto& r : recs) {
        out << r.epoch << ',' << detail::format_double(r.train_risk) << ','
            << detail::format_double(r.valid_auc) << ',' << detail::format_double(r.valid_acc) << ','
            << detail::format_double(r.open_gate_fraction) << '\n';
    }
}

inline std::vector<EpochRecord> read_training_log(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "epoch,train_risk,valid_auc,valid_acc,open_gate_fraction") {
        throw Error("training log: bad header");
    }
    std::vector<EpochRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        EpochRecord r;
        if (cells.size() != 5 || !detail::parse_number(std::string_view(cells[0]), r.epoch) ||
            !detail::parse_number(std::string_view(cells[1]), r.train_risk) ||
            !detail::parse_number(std::string_view(cells[2]), r.valid_auc) ||
            !detail::parse_number(std::string_view(cells[3]), r.valid_acc) ||
            !detail::parse_number(std::string_view(cells[4]), r.open_gate_fraction)) {
            throw Error("training log: malformed row '" + line + "'");
        }
        out.push_back(r);
    }
    return out;
}

} // namespace l0sign
