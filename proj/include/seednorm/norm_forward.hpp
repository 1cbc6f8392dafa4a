#pragma once

// Forward passes for LayerNorm, RMSNorm, DyT and the self-rescaled dynamic
// norm family (single-head, multi-head, condition-modulated).
//
// Every kernel works row by row on an N x D block and returns the output
// together with a ForwardCache that the matching backward pass consumes.

#include <optional>
#include <string>
#include <string_view>

#include "seednorm/tensor.hpp"

namespace seednorm {

enum class NormKind { rmsnorm, layernorm, dyt, seednorm, mh_seednorm, ada_seednorm };

std::string_view to_string(NormKind kind);
NormKind parse_norm_kind(std::string_view name);

/// Bounded activation used for the dynamic coefficient. Unbounded choices are
/// not offered.
enum class Activation { tanh, sigmoid, hardtanh };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

double activate(Activation act, double z);
/// Derivative of activate(); hardtanh uses 0 at |z| = 1.
double activate_derivative(Activation act, double z);

/// Learnable state of one norm layer.
///
/// For the dynamic norms gamma is the static scale, alpha the dynamic-scale
/// weight (length 1 or D, a length-1 alpha broadcasts) and beta the
/// self-rescaling direction. DyT keeps its scalar in alpha[0]. DyT and
/// LayerNorm take their shift separately.
struct NormParams {
    Vector gamma;
    Vector alpha;
    Vector beta;
    double eps = kDefaultEps;
    std::size_t n_heads = 1;
    /// Divide each head's dot product by the head width before the activation.
    bool dim_scaled = false;
    /// Dropout on the dynamic coefficient s, training mode only.
    double dyn_dropout_rate = 0.0;
    Activation activation = Activation::tanh;

    /// gamma = 1, alpha = beta = empty.
    static NormParams rms(std::size_t dim, double eps = kDefaultEps);
    /// gamma = 1, beta = 0, alpha = alpha_init everywhere.
    static NormParams dynamic(std::size_t dim, double alpha_init, std::size_t n_heads = 1,
                              double eps = kDefaultEps);

    std::size_t dim() const noexcept { return gamma.size(); }
    std::size_t head_dim() const noexcept { return n_heads == 0 ? 0 : dim() / n_heads; }
    double alpha_at(std::size_t j) const { return alpha.size() == 1 ? alpha[0] : alpha[j]; }
};

/// Scale and shift predicted from a condition upstream.
struct ConditionParams {
    Vector gamma_c;
    Vector eta_c;
};

enum class Mode { inference, training };

struct ForwardOptions {
    Mode mode = Mode::inference;
    /// Source of the dropout key; required when dropout is active.
    Rng* rng = nullptr;
};

struct ForwardCache {
    NormKind kind = NormKind::rmsnorm;
    Matrix x;
    /// x / RMS(x) per row; LayerNorm stores the standardized row here.
    Matrix r;
    /// RMS per row; LayerNorm stores sqrt(var + eps).
    Vector rms;
    /// Pre-activation per row and head (DyT: alpha * x per element).
    Matrix tanh_arg;
    /// Activation of tanh_arg.
    Matrix sigma_val;
    /// Dynamic coefficient broadcast to N x D, after dropout.
    Matrix s;
    /// 0/1 mask applied to s when dropout ran.
    std::optional<Matrix> dropout_mask;
    double dropout_rate = 0.0;
    std::size_t n_heads = 1;
    bool dim_scaled = false;
    Activation activation = Activation::tanh;
    double eps = 0.0;
    /// Condition-modulated variant only: the unmodulated (s + 1) * r.
    Matrix inner;

    bool dropout_active() const noexcept { return dropout_mask.has_value(); }
};

struct ForwardResult {
    Matrix output;
    ForwardCache cache;
};

ForwardResult rmsnorm_forward(const Matrix& x, const NormParams& p);
ForwardResult layernorm_forward(const Matrix& x, const NormParams& p, const Vector& shift);
ForwardResult dyt_forward(const Matrix& x, double alpha, const Vector& gamma, const Vector& shift);
ForwardResult seednorm_forward(const Matrix& x, const NormParams& p, ForwardOptions opts = {});
ForwardResult mh_seednorm_forward(const Matrix& x, const NormParams& p, ForwardOptions opts = {});
ForwardResult ada_seednorm_forward(const Matrix& x, const NormParams& p, const ConditionParams& c,
                                   ForwardOptions opts = {});

}  // namespace seednorm
