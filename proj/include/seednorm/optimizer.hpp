#pragma once

// AdamW with decoupled weight decay and a per-tensor decay mask.

#include <cstdint>
#include <span>
#include <vector>

#include "seednorm/model.hpp"

namespace seednorm {

/// Which tensor roles receive weight decay. alpha and beta are the dynamic
/// norm's parameters; gamma follows the baseline, which leaves norm scales
/// undecayed.
struct DecayPolicy {
    bool matrix = true;
    bool embedding = false;
    bool gamma = false;
    bool alpha = true;
    bool beta = true;
    bool shift = false;
    bool dyt_alpha = false;

    bool decays(TensorRole role) const noexcept;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

struct OptimizerState {
    std::vector<Vector> m;
    std::vector<Vector> v;
    std::vector<bool> decay;
    /// Number of completed updates.
    std::uint64_t step = 0;
    /// Learning rate used by the last update.
    double last_lr = 0.0;
};

/// Zeroed moments sized like `layout`; decay membership from `policy`.
OptimizerState make_optimizer_state(const std::vector<TensorInfo>& layout,
                                    const DecayPolicy& policy);

/// One AdamW update. Decayed tensors shrink by (1 - lr * weight_decay) before
/// the moment-normalized step. Throws std::invalid_argument on non-finite
/// gradients (parameters are left untouched) or on shape mismatches.
void adamw_step(OptimizerState& state, std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, const AdamWConfig& hyper);

/// Global L2 norm across all tensors.
double global_norm(std::span<const std::span<const double>> grads);

/// Rescales the gradients so their global norm is min(norm, max_norm).
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm);

}  // namespace seednorm
