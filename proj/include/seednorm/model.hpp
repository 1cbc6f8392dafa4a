#pragma once

// Tiny decoder-only transformer with a pluggable norm slot.
//
// Layout per block (pre-norm): attn_norm -> Wq/Wk/Wv -> Q/K norms -> causal
// softmax attention -> Wo -> residual, then ffn_norm -> W1 -> GELU -> W2 ->
// residual. A final norm precedes the untied output head. Every norm slot
// holds the configured variant.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seednorm/norm_forward.hpp"

namespace seednorm {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t hidden = 64;
    std::size_t attn_heads = 4;
    std::size_t vocab = 16;
    std::size_t context = 16;
    /// 0 means 4 * hidden.
    std::size_t ffn_hidden = 0;
    /// rmsnorm, layernorm, dyt, seednorm or mh_seednorm.
    NormKind norm = NormKind::seednorm;
    /// Head count of mh_seednorm slots.
    std::size_t norm_heads = 1;
    double alpha_init = 1.0;
    double dyt_alpha_init = 0.5;
    double eps = kDefaultEps;
    /// Q/K norms run per attention head at width hidden / attn_heads with
    /// parameters shared across heads. When false they span the full hidden
    /// width.
    bool qk_norm_per_head = true;

    std::size_t ffn_width() const noexcept { return ffn_hidden == 0 ? 4 * hidden : ffn_hidden; }
    std::size_t head_dim() const noexcept { return hidden / attn_heads; }
    std::size_t qk_norm_dim() const noexcept { return qk_norm_per_head ? head_dim() : hidden; }
};

/// Throws std::invalid_argument describing the first violated constraint.
void validate(const ModelConfig& cfg);

enum class TensorRole { embedding, matrix, gamma, alpha, beta, shift, dyt_alpha };

std::string_view to_string(TensorRole role);

struct TensorInfo {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    TensorRole role = TensorRole::matrix;

    std::size_t size() const noexcept { return rows * cols; }
};

/// Every learnable tensor in canonical order; build_model allocates exactly
/// this list and tensor_views walks it in the same order.
std::vector<TensorInfo> parameter_layout(const ModelConfig& cfg);

std::size_t parameter_count(const ModelConfig& cfg);

/// One norm slot: the variant's parameters plus the LayerNorm/DyT shift.
struct NormSlot {
    NormParams params;
    Vector shift;
};

struct Block {
    NormSlot attn_norm;
    NormSlot q_norm;
    NormSlot k_norm;
    NormSlot ffn_norm;
    Matrix wq, wk, wv, wo;
    Matrix w1, w2;
};

struct Model {
    ModelConfig cfg;
    Matrix tok_emb;
    Matrix pos_emb;
    std::vector<Block> blocks;
    NormSlot final_norm;
    Matrix lm_head;
};

/// Weights ~ N(0, 1/fan_in) (output projections additionally scaled by
/// 1/sqrt(2 layers)), embeddings ~ N(0, 0.02^2). Norm parameters are
/// deterministic: gamma = 1, beta = 0, alpha = alpha_init (DyT: its scalar
/// dyt_alpha_init, shift 0), so the random draws do not depend on the norm
/// variant.
Model build_model(const ModelConfig& cfg, Rng& rng);

/// A model of the same shape with every tensor zero; used for gradients.
Model zeros_like(const Model& m);

/// Flat views in parameter_layout order.
std::vector<std::span<double>> tensor_views(Model& m);
std::vector<std::span<const double>> tensor_views(const Model& m);

std::size_t parameter_count(const Model& m);

/// A batch of token sequences, row-major batch x length.
struct Batch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<std::uint32_t> inputs;
    std::vector<std::uint32_t> targets;
    /// 1 where the position contributes to the loss.
    std::vector<std::uint8_t> loss_mask;
};

/// Forward pass result. `first_nonfinite` names the first stage whose output
/// held a non-finite value ("block 1 ffn_norm", "logits", "loss"); empty when
/// every stage stayed finite.
struct LossResult {
    double loss = 0.0;
    std::string first_nonfinite;
};

/// Mean cross-entropy over masked positions.
LossResult evaluate_loss(const Model& m, const Batch& b);

/// Loss plus gradients of every parameter (same shape as the model). The
/// gradient model's cfg is copied from m.
LossResult loss_and_gradients(const Model& m, const Batch& b, Model& grads);

}  // namespace seednorm
