#pragma once

// Hard concrete gates: stretched, clamped binary relaxation used to learn
// which feature pairs become edges, plus the expected-L0 penalty.

#include <cmath>
#include <cstdint>
#include <string>

#include "numcore.hpp"

namespace l0sign {

struct GateConfig {
    double beta = 2.0 / 3.0;  // temperature
    double gamma = -0.1;      // stretch lower bound
    double delta = 1.1;       // stretch upper bound
    bool binary_eval = false;  // inference gate snapped to {0, 1}

    void validate() const {
        if (!(gamma < 0.0 && delta > 1.0 && beta > 0.0)) {
            throw Error("GateConfig: need gamma < 0 < 1 < delta and beta > 0 (got beta=" +
                        std::to_string(beta) + ", gamma=" + std::to_string(gamma) +
                        ", delta=" + std::to_string(delta) + ")");
        }
    }
};

struct GateSample {
    double value = 0.0;    // e' in [0, 1]
    double s = 0.0;        // concrete sample before stretching
    double stretched = 0.0;  // s(delta - gamma) + gamma, before clamping
    double u = 0.5;
};

inline constexpr double kNoiseFloor = 1e-8;

inline GateSample sample_gate(double log_alpha, double u, const GateConfig& cfg = {}) {
    if (!(u > 0.0 && u < 1.0)) throw Error("sample_gate: u=" + std::to_string(u) + " not in (0,1)");
    GateSample out;
    out.u = u;
    out.s = sigmoid((std::log(u) - std::log1p(-u) + log_alpha) / cfg.beta);
    out.stretched = out.s * (cfg.delta - cfg.gamma) + cfg.gamma;
    out.value = std::min(1.0, std::max(0.0, out.stretched));
    return out;
}

/// Noise-free gate used at inference: clamp(sigmoid(a)(delta - gamma) + gamma).
/// With binary_eval it is 1 when that value exceeds 0.5, else 0.
inline double eval_gate(double log_alpha, const GateConfig& cfg = {}) {
    const double stretched = sigmoid(log_alpha) * (cfg.delta - cfg.gamma) + cfg.gamma;
    const double g = std::min(1.0, std::max(0.0, stretched));
    if (cfg.binary_eval) return g > 0.5 ? 1.0 : 0.0;
    return g;
}

/// d eval_gate / d log_alpha (zero in the clamped region).
inline double eval_gate_grad(double log_alpha, const GateConfig& cfg = {}) {
    const double s = sigmoid(log_alpha);
    const double stretched = s * (cfg.delta - cfg.gamma) + cfg.gamma;
    if (cfg.binary_eval || stretched <= 0.0 || stretched >= 1.0) return 0.0;
    return (cfg.delta - cfg.gamma) * s * (1.0 - s);
}

/// Probability that a sampled gate is non-zero; the per-pair L0 penalty.
inline double open_probability(double log_alpha, const GateConfig& cfg = {}) {
    return sigmoid(log_alpha - cfg.beta * std::log(-cfg.gamma / cfg.delta));
}

inline double open_probability_grad(double log_alpha, const GateConfig& cfg = {}) {
    const double p = open_probability(log_alpha, cfg);
    return p * (1.0 - p);
}

/// d e' / d log_alpha for a sampled gate.
inline double grad_log_alpha(const GateSample& g, const GateConfig& cfg = {}) {
    if (g.stretched <= 0.0 || g.stretched >= 1.0) return 0.0;
    return (cfg.delta - cfg.gamma) * g.s * (1.0 - g.s) / cfg.beta;
}

// Counter-based uniform noise keyed by (seed, epoch, sample, pair). Every
// draw is a pure function of its key, so sampling order never matters.

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

struct NoiseKey {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t sample = 0;
};

inline double gate_noise(const NoiseKey& key, std::uint64_t pair) noexcept {
    std::uint64_t h = splitmix64(key.seed);
    h = splitmix64(h ^ key.epoch);
    h = splitmix64(h ^ key.sample);
    h = splitmix64(h ^ pair);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return std::min(1.0 - kNoiseFloor, std::max(kNoiseFloor, u));
}

} // namespace l0sign
