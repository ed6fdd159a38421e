#pragma once

// L0-SIGN: an edge-logit MLP decides which feature pairs interact, an
// interaction MLP models each pair, and two mean aggregations turn the gated
// pair vectors into a scalar score.
//
// forward() records every intermediate needed by backward(); the
// computation shape is fixed per instance, so no general tape is kept.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "data.hpp"
#include "gates.hpp"
#include "numcore.hpp"

namespace l0sign {

enum class Activation { relu, identity };
enum class PairCombine { product, sum };

// How a node's gated pair vectors are normalized. soft_degree divides by
// max(sum of the node's gates, eps); neighbor_count divides by the number
// of candidate pairs the node is part of (k for a k-node instance).
enum class Aggregation { soft_degree, neighbor_count };

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t edge_dim = 8;   // b
    std::size_t embed_dim = 8;  // d
    std::size_t hidden = 32;
    GateConfig gate{};
    Aggregation aggregation = Aggregation::soft_degree;
    Activation activation = Activation::relu;
    PairCombine combine = PairCombine::product;
    double edge_bias_init = 1.0;
    double embedding_init_std = 0.1;

    void validate() const {
        if (vocab_size == 0 || edge_dim == 0 || embed_dim == 0 || hidden == 0) {
            throw Error("ModelConfig: all dimensions must be >= 1");
        }
        gate.validate();
    }
};

inline constexpr double kDegreeEps = 1e-8;

// Parameter layout; also the declared order of checkpoint blocks.
enum ParamId : std::size_t {
    kEdgeEmbedding,  // |J| x b
    kEmbedding,      // |J| x d
    kEdgeW1,         // hidden x b
    kEdgeB1,         // hidden x 1
    kEdgeW2,         // 1 x hidden
    kEdgeB2,         // 1 x 1
    kInterW1,        // hidden x d
    kInterB1,        // hidden x 1
    kInterW2,        // d x hidden
    kInterB2,        // d x 1
    kReadout,        // d x 1
    kParamCount
};

inline constexpr const char* kParamNames[kParamCount] = {
    "edge_embedding", "embedding", "edge_w1",  "edge_b1",  "edge_w2", "edge_b2",
    "inter_w1",       "inter_b1",  "inter_w2", "inter_b2", "readout"};

inline bool is_edge_param(std::size_t id) noexcept { return id <= kEdgeB2; }

class ModelParams {
public:
    ModelParams() = default;

    /// Zero-initialized parameters with the shapes implied by the config.
    explicit ModelParams(const ModelConfig& cfg) : config_(cfg) {
        cfg.validate();
        const auto J = cfg.vocab_size, b = cfg.edge_dim, d = cfg.embed_dim, H = cfg.hidden;
        const std::pair<std::size_t, std::size_t> shapes[kParamCount] = {
            {J, b}, {J, d}, {H, b}, {H, 1}, {1, H}, {1, 1}, {H, d}, {H, 1}, {d, H}, {d, 1}, {d, 1}};
        for (std::size_t p = 0; p < kParamCount; ++p) {
            store_.add(kParamNames[p], Matrix(shapes[p].first, shapes[p].second));
        }
    }

    /// Embeddings ~ Normal(0, embedding_init_std^2), MLP and readout weights uniform in +-sqrt(6 / fan_in),
    /// biases zero except the edge head, which starts at edge_bias_init.
    static ModelParams initialize(const ModelConfig& cfg, std::uint64_t seed) {
        ModelParams p(cfg);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, cfg.embedding_init_std);
        for (auto id : {kEdgeEmbedding, kEmbedding}) {
            for (double& v : p[id].values()) v = normal(rng);
        }
        for (auto id : {kEdgeW1, kEdgeW2, kInterW1, kInterW2, kReadout}) {
            const std::size_t fan_in = id == kReadout ? p[id].rows() : p[id].cols();
            const double bound = std::sqrt(6.0 / double(fan_in));
            std::uniform_real_distribution<double> uni(-bound, bound);
            for (double& v : p[id].values()) v = uni(rng);
        }
        p[kEdgeB2](0, 0) = cfg.edge_bias_init;
        return p;
    }

    const ModelConfig& config() const noexcept { return config_; }
    void set_binary_eval(bool on) noexcept { config_.gate.binary_eval = on; }
    ParamStore& store() noexcept { return store_; }
    const ParamStore& store() const noexcept { return store_; }

    Matrix& operator[](ParamId id) { return store_.value(id); }
    const Matrix& operator[](ParamId id) const { return store_.value(id); }
    Matrix& grad(ParamId id) { return store_.grad(id); }

    bool operator==(const ModelParams& o) const { return store_ == o.store_; }

private:
    ModelConfig config_{};
    ParamStore store_;
};

// ---------------------------------------------------------------------------
// Building blocks

namespace detail {

inline Vector activate(std::span<const double> x, Activation a) {
    return a == Activation::relu ? relu(x) : Vector(x.begin(), x.end());
}

inline Vector activate_backward(std::span<const double> pre, std::span<const double> up,
                                Activation a) {
    return a == Activation::relu ? relu_backward(pre, up) : Vector(up.begin(), up.end());
}

inline Vector combine(std::span<const double> a, std::span<const double> b, PairCombine c) {
    if (c == PairCombine::product) return elementwise_product(a, b);
    require_same_length(a.size(), b.size(), "combine");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline void check_feature(FeatureId f, const ModelParams& p) {
    if (f >= p.config().vocab_size) {
        throw Error("feature " + std::to_string(f) + " outside vocabulary of size " +
                    std::to_string(p.config().vocab_size));
    }
}

} // namespace detail

struct EdgeActivations {
    Vector product, pre, act;
    double log_alpha = 0.0;
};

inline EdgeActivations edge_forward(FeatureId i, FeatureId j, const ModelParams& p) {
    detail::check_feature(i, p);
    detail::check_feature(j, p);
    EdgeActivations e;
    e.product = elementwise_product(p[kEdgeEmbedding].row(i), p[kEdgeEmbedding].row(j));
    e.pre = linear(p[kEdgeW1], e.product, p[kEdgeB1].values());
    e.act = detail::activate(e.pre, p.config().activation);
    e.log_alpha = linear(p[kEdgeW2], e.act, p[kEdgeB2].values())[0];
    return e;
}

/// f_ep(v^e_i, v^e_j), read as log alpha. Symmetric in (i, j).
inline double edge_logit(FeatureId i, FeatureId j, const ModelParams& p) {
    return edge_forward(i, j, p).log_alpha;
}

struct InteractionActivations {
    Vector input, pre, act, z;
};

inline InteractionActivations interaction_forward(std::span<const double> u_i,
                                                  std::span<const double> u_j,
                                                  const ModelParams& p) {
    const auto& cfg = p.config();
    if (u_i.size() != cfg.embed_dim || u_j.size() != cfg.embed_dim) {
        throw Error("interaction: expected vectors of length " + std::to_string(cfg.embed_dim));
    }
    InteractionActivations a;
    a.input = detail::combine(u_i, u_j, cfg.combine);
    a.pre = linear(p[kInterW1], a.input, p[kInterB1].values());
    a.act = detail::activate(a.pre, cfg.activation);
    a.z = linear(p[kInterW2], a.act, p[kInterB2].values());
    return a;
}

/// h(u_i, u_j) = W2 relu(W1 (u_i ⊙ u_j) + b1) + b2.
inline Vector interaction(std::span<const double> u_i, std::span<const double> u_j,
                          const ModelParams& p) {
    return interaction_forward(u_i, u_j, p).z;
}

// ---------------------------------------------------------------------------
// Gate sources

struct SampledGates {
    NoiseKey key;
};
struct DeterministicGates {};
/// Explicit symmetric k x k gate matrix in instance node order; self-pairs on the diagonal.
struct ExplicitGates {
    Matrix gates;
};

using GateSource = std::variant<SampledGates, DeterministicGates, ExplicitGates>;

/// All-ones gates: the complete feature graph of the SIGN baseline.
inline ExplicitGates complete_gates(std::size_t k) { return {Matrix(k, k, 1.0)}; }

// ---------------------------------------------------------------------------
// Forward record

struct PairRecord {
    std::size_t a = 0, b = 0;  // node positions within the instance, a <= b
    std::optional<EdgeActivations> edge;  // absent for explicit gates
    double gate = 0.0;
    double gate_grad = 0.0;  // d gate / d log_alpha
    InteractionActivations inter;
    double contribution = 0.0;
};

struct NodeRecord {
    Vector u;  // x_i v_i
    double degree = 0.0;
    double rho = 0.0;  // normalizer actually used
    Vector agg;        // sum of gate * z
    Vector vprime;
    Vector uprime;
    double nu = 0.0;
};

struct ForwardRecord {
    std::vector<PairRecord> pairs;
    std::vector<NodeRecord> nodes;
    double score = 0.0;
    std::size_t multiply_adds = 0;
};

/// Index of pair (a, b), a <= b, in the order forward() enumerates pairs.
inline std::size_t pair_index(std::size_t a, std::size_t b, std::size_t k) noexcept {
    // rows a' < a contribute k - a' pairs each
    return a * k - a * (a - 1) / 2 + (b - a);
}

inline std::size_t pair_count(std::size_t k) noexcept { return k * (k + 1) / 2; }

inline ForwardRecord forward(const Instance& inst, const ModelParams& p, const GateSource& gates) {
    const auto& cfg = p.config();
    const std::size_t k = inst.size();
    if (k == 0) throw Error("forward: empty instance");
    inst.validate(cfg.vocab_size);

    if (const auto* ex = std::get_if<ExplicitGates>(&gates)) {
        const auto& g = ex->gates;
        if (g.rows() != k || g.cols() != k) {
            throw Error("forward: gate matrix " + g.shape_string() + " for " + std::to_string(k) +
                        " nodes");
        }
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = 0; b < k; ++b) {
                if (!(g(a, b) >= 0.0 && g(a, b) <= 1.0)) throw Error("forward: gate outside [0,1]");
                if (g(a, b) != g(b, a)) throw Error("forward: gate matrix not symmetric");
            }
        }
    }

    ForwardRecord rec;
    rec.nodes.resize(k);
    for (std::size_t a = 0; a < k; ++a) {
        const auto v = p[kEmbedding].row(inst.nodes[a]);
        rec.nodes[a].u.resize(v.size());
        for (std::size_t t = 0; t < v.size(); ++t) rec.nodes[a].u[t] = inst.values[a] * v[t];
    }

    const std::size_t d = cfg.embed_dim, H = cfg.hidden;
    const std::size_t edge_cost = cfg.edge_dim + H * cfg.edge_dim + H;
    const std::size_t inter_cost = d + H * d + d * H;

    rec.pairs.reserve(pair_count(k));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a; b < k; ++b) {
            PairRecord pr;
            pr.a = a;
            pr.b = b;
            std::visit(
                [&](const auto& src) {
                    using T = std::decay_t<decltype(src)>;
                    if constexpr (std::is_same_v<T, ExplicitGates>) {
                        pr.gate = src.gates(a, b);
                    } else {
                        pr.edge = edge_forward(inst.nodes[a], inst.nodes[b], p);
                        rec.multiply_adds += edge_cost;
                        const double la = pr.edge->log_alpha;
                        if constexpr (std::is_same_v<T, SampledGates>) {
                            const auto s = sample_gate(la, gate_noise(src.key, rec.pairs.size()), cfg.gate);
                            pr.gate = s.value;
                            pr.gate_grad = grad_log_alpha(s, cfg.gate);
                        } else {
                            pr.gate = eval_gate(la, cfg.gate);
                            pr.gate_grad = eval_gate_grad(la, cfg.gate);
                        }
                    }
                },
                gates);
            pr.inter = interaction_forward(rec.nodes[a].u, rec.nodes[b].u, p);
            rec.multiply_adds += inter_cost;
            rec.pairs.push_back(std::move(pr));
        }
    }

    for (auto& n : rec.nodes) n.agg.assign(d, 0.0);
    for (const auto& pr : rec.pairs) {
        const auto scatter = [&](NodeRecord& n) {
            n.degree += pr.gate;
            for (std::size_t t = 0; t < d; ++t) n.agg[t] += pr.gate * pr.inter.z[t];
        };
        scatter(rec.nodes[pr.a]);
        if (pr.b != pr.a) scatter(rec.nodes[pr.b]);
        rec.multiply_adds += 2 * d;
    }

    const auto& w_g = p[kReadout];
    double total = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        auto& n = rec.nodes[a];
        n.rho = cfg.aggregation == Aggregation::soft_degree ? std::max(n.degree, kDegreeEps)
                                                            : static_cast<double>(k);
        n.vprime.resize(d);
        n.uprime.resize(d);
        for (std::size_t t = 0; t < d; ++t) {
            n.vprime[t] = n.agg[t] / n.rho;
            n.uprime[t] = inst.values[a] * n.vprime[t];
        }
        n.nu = dot(w_g.values(), n.uprime);
        total += n.nu;
        rec.multiply_adds += d;
    }
    rec.score = total / static_cast<double>(k);

    // Exact additive share of each pair in the score; the score is linear in
    // the gated pair vectors once the normalizers are fixed.
    for (auto& pr : rec.pairs) {
        const double wz = dot(w_g.values(), pr.inter.z);
        double weight = inst.values[pr.a] / rec.nodes[pr.a].rho;
        if (pr.b != pr.a) weight += inst.values[pr.b] / rec.nodes[pr.b].rho;
        pr.contribution = pr.gate * wz * weight / static_cast<double>(k);
    }
    if (!std::isfinite(rec.score)) throw Error("forward: non-finite score");
    return rec;
}

// ---------------------------------------------------------------------------
// Predictions

struct PairAnalysis {
    FeatureId i = 0, j = 0;
    std::optional<double> log_alpha;
    double gate = 0.0;
    Vector z;
    double contribution = 0.0;
};

struct Prediction {
    double score = 0.0;
    std::vector<Vector> node_embeddings;  // v'_i
    std::vector<PairAnalysis> pairs;
};

inline Prediction to_prediction(const Instance& inst, const ForwardRecord& rec) {
    Prediction out;
    out.score = rec.score;
    for (const auto& n : rec.nodes) out.node_embeddings.push_back(n.vprime);
    for (const auto& pr : rec.pairs) {
        PairAnalysis pa;
        pa.i = inst.nodes[pr.a];
        pa.j = inst.nodes[pr.b];
        if (pr.edge) pa.log_alpha = pr.edge->log_alpha;
        pa.gate = pr.gate;
        pa.z = pr.inter.z;
        pa.contribution = pr.contribution;
        out.pairs.push_back(std::move(pa));
    }
    return out;
}

/// SIGN prediction with explicit gates (k x k, symmetric, values in [0,1]).
inline Prediction predict_sign(const Instance& inst, const Matrix& gates, const ModelParams& p) {
    return to_prediction(inst, forward(inst, p, ExplicitGates{gates}));
}

/// L0-SIGN prediction: gates come from the edge-logit MLP, sampled with
/// the given noise or evaluated deterministically.
inline Prediction predict_l0sign(const Instance& inst, const ModelParams& p,
                                 std::optional<NoiseKey> noise = std::nullopt) {
    if (noise) return to_prediction(inst, forward(inst, p, SampledGates{*noise}));
    return to_prediction(inst, forward(inst, p, DeterministicGates{}));
}

// ---------------------------------------------------------------------------
// Backward

/// Coefficients of the per-instance objective
///   d_score * y' + l0_weight * sum(open_probability) + l2_weight * sum(z^2)
/// whose gradient backward() accumulates.
struct Upstream {
    double d_score = 0.0;
    double l0_weight = 0.0;
    double l2_weight = 0.0;
};

inline void backward(const Instance& inst, const ForwardRecord& rec, ModelParams& p,
                     const Upstream& up) {
    const auto& cfg = p.config();
    const std::size_t k = inst.size(), d = cfg.embed_dim;
    if (rec.nodes.size() != k || rec.pairs.size() != pair_count(k)) {
        throw Error("backward: forward record does not match instance");
    }
    const auto& w_g = p[kReadout].values();
    auto d_readout = p.grad(kReadout).values();

    std::vector<Vector> d_agg(k, Vector(d, 0.0));
    std::vector<double> d_degree(k, 0.0);
    const double d_nu = up.d_score / static_cast<double>(k);
    for (std::size_t a = 0; a < k; ++a) {
        const auto& n = rec.nodes[a];
        const double x = inst.values[a];
        Vector d_vprime(d);
        for (std::size_t t = 0; t < d; ++t) {
            d_readout[t] += d_nu * n.uprime[t];
            d_vprime[t] = x * d_nu * w_g[t];
        }
        for (std::size_t t = 0; t < d; ++t) d_agg[a][t] = d_vprime[t] / n.rho;
        if (cfg.aggregation == Aggregation::soft_degree && n.degree > kDegreeEps) {
            d_degree[a] = -dot(d_vprime, n.agg) / (n.rho * n.rho);
        }
    }

    Matrix& dW1h = p.grad(kInterW1);
    Matrix& dW2h = p.grad(kInterW2);
    Vector db1h(cfg.hidden, 0.0), db2h(d, 0.0);
    Matrix& dW1e = p.grad(kEdgeW1);
    Matrix& dW2e = p.grad(kEdgeW2);
    Vector db1e(cfg.hidden, 0.0), db2e(1, 0.0);
    Matrix& dV = p.grad(kEmbedding);
    Matrix& dVe = p.grad(kEdgeEmbedding);

    for (const auto& pr : rec.pairs) {
        const bool self = pr.a == pr.b;
        const auto& z = pr.inter.z;

        Vector dz(d);
        for (std::size_t t = 0; t < d; ++t) {
            const double agg_up = self ? d_agg[pr.a][t] : d_agg[pr.a][t] + d_agg[pr.b][t];
            dz[t] = pr.gate * agg_up + 2.0 * up.l2_weight * z[t];
        }
        double d_gate = dot(z, d_agg[pr.a]) + d_degree[pr.a];
        if (!self) d_gate += dot(z, d_agg[pr.b]) + d_degree[pr.b];

        // interaction MLP
        const Vector d_act = linear_backward(p[kInterW2], pr.inter.act, dz, dW2h, db2h);
        const Vector d_pre = detail::activate_backward(pr.inter.pre, d_act, cfg.activation);
        const Vector d_in = linear_backward(p[kInterW1], pr.inter.input, d_pre, dW1h, db1h);
        const auto& ua = rec.nodes[pr.a].u;
        const auto& ub = rec.nodes[pr.b].u;
        auto dva = dV.row(inst.nodes[pr.a]);
        auto dvb = dV.row(inst.nodes[pr.b]);
        const double xa = inst.values[pr.a], xb = inst.values[pr.b];
        for (std::size_t t = 0; t < d; ++t) {
            const double dua = cfg.combine == PairCombine::product ? d_in[t] * ub[t] : d_in[t];
            const double dub = cfg.combine == PairCombine::product ? d_in[t] * ua[t] : d_in[t];
            dva[t] += xa * dua;
            dvb[t] += xb * dub;
        }

        // edge-logit MLP
        if (!pr.edge) continue;
        const auto& e = *pr.edge;
        const double d_la =
            d_gate * pr.gate_grad + up.l0_weight * open_probability_grad(e.log_alpha, cfg.gate);
        if (d_la == 0.0) continue;
        const Vector d_eact = linear_backward(p[kEdgeW2], e.act, Vector{d_la}, dW2e, db2e);
        const Vector d_epre = detail::activate_backward(e.pre, d_eact, cfg.activation);
        const Vector d_prod = linear_backward(p[kEdgeW1], e.product, d_epre, dW1e, db1e);
        const auto vea = p[kEdgeEmbedding].row(inst.nodes[pr.a]);
        const auto veb = p[kEdgeEmbedding].row(inst.nodes[pr.b]);
        auto dvea = dVe.row(inst.nodes[pr.a]);
        auto dveb = dVe.row(inst.nodes[pr.b]);
        for (std::size_t t = 0; t < cfg.edge_dim; ++t) {
            dvea[t] += d_prod[t] * veb[t];
            dveb[t] += d_prod[t] * vea[t];
        }
    }

    auto add = [](Matrix& m, const Vector& v) {
        auto dst = m.values();
        for (std::size_t t = 0; t < v.size(); ++t) dst[t] += v[t];
    };
    add(p.grad(kInterB1), db1h);
    add(p.grad(kInterB2), db2h);
    add(p.grad(kEdgeB1), db1e);
    add(p.grad(kEdgeB2), db2e);
}

// ---------------------------------------------------------------------------
// Additivity probe

struct ProbePoint {
    Vector delta_i;
    Vector delta_j;
};

/// Largest |f(vi', vj') - f(vi', vj) - f(vi, vj') + f(vi, vj)| over the probe
/// points, where vi' = vi + delta_i perturbs the interaction embedding of the
/// node at position `a` (likewise `b`) and the gates stay fixed.
inline double additivity_probe(const ModelParams& params, const Instance& inst,
                               const Matrix& gates, std::size_t a, std::size_t b,
                               std::span<const ProbePoint> probes) {
    if (a >= inst.size() || b >= inst.size() || a == b) {
        throw Error("additivity_probe: need two distinct node positions");
    }
    ModelParams work = params;
    const FeatureId fi = inst.nodes[a], fj = inst.nodes[b];
    const Vector vi(params[kEmbedding].row(fi).begin(), params[kEmbedding].row(fi).end());
    const Vector vj(params[kEmbedding].row(fj).begin(), params[kEmbedding].row(fj).end());
    auto eval = [&](const Vector* di, const Vector* dj) {
        auto ri = work[kEmbedding].row(fi);
        auto rj = work[kEmbedding].row(fj);
        for (std::size_t t = 0; t < vi.size(); ++t) {
            ri[t] = vi[t] + (di ? (*di)[t] : 0.0);
            rj[t] = vj[t] + (dj ? (*dj)[t] : 0.0);
        }
        return forward(inst, work, ExplicitGates{gates}).score;
    };
    const double base = eval(nullptr, nullptr);
    double worst = 0.0;
    for (const auto& pt : probes) {
        const double D = eval(&pt.delta_i, &pt.delta_j) - eval(&pt.delta_i, nullptr) -
                         eval(nullptr, &pt.delta_j) + base;
        worst = std::max(worst, std::abs(D));
    }
    return worst;
}

} // namespace l0sign
