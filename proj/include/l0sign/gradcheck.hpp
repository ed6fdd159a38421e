#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "train.hpp"

namespace l0sign {

struct GradCheckResult {
    double max_relative_error = 0.0;  // |a - n| / max(|a|, |n|) over the whole gradient vector
    double max_abs_error = 0.0;       // largest single-entry discrepancy
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Compares the analytic gradient of the single-instance risk against
/// central differences (R(w + eps) - R(w - eps)) / 2 eps for every scalar
/// parameter. Gate noise is frozen through the config seed and `epoch`.
/// The error is norm-wise: per-entry ratios on near-zero gradients only
/// measure double rounding (about 1e-11 absolute at eps = 1e-5).
inline GradCheckResult grad_check(const ModelParams& params, const Instance& inst, const TrainConfig& cfg,
                                  double epsilon = 1e-5, std::uint64_t epoch = 0,
                                  std::uint64_t sample_id = 0) {
    const Instance* batch[] = {&inst};
    const std::uint64_t ids[] = {sample_id};

    ModelParams analytic = params;
    analytic.store().zero_grad();
    risk(batch, ids, analytic, cfg, epoch, true);

    ModelParams work = params;
    GradCheckResult out;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto& store = work.store();
    for (std::size_t pi = 0; pi < store.count(); ++pi) {
        auto values = store.value(pi).values();
        const auto grads = analytic.store().grad(pi).values();
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double orig = values[k];
            values[k] = orig + epsilon;
            const double up = risk(batch, ids, work, cfg, epoch, false).risk;
            values[k] = orig - epsilon;
            const double down = risk(batch, ids, work, cfg, epoch, false).risk;
            values[k] = orig;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = grads[k];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            ++out.checked;
            if (std::abs(a - numeric) > out.max_abs_error) {
                out.max_abs_error = std::abs(a - numeric);
                out.worst_param = store.param(pi).name;
                out.worst_index = k;
            }
        }
    }
    const double denom = std::sqrt(std::max(a2, n2));
    out.max_relative_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
    return out;
}

} // namespace l0sign
