#pragma once

// Analytic backward passes for every norm in norm_forward.hpp, plus a
// central-difference oracle used to check them.
//
// All backward passes are vector-Jacobian products: given the upstream
// gradient u = dL/d(output) they return dL/d(parameter) summed over rows
// (ascending row order) and dL/dx per row.

#include <functional>
#include <string>

#include "seednorm/norm_forward.hpp"

namespace seednorm {

struct GradBundle {
    Vector d_gamma;
    /// Length mirrors alpha (1 or D); DyT returns its scalar here.
    Vector d_alpha;
    Vector d_beta;
    /// LayerNorm/DyT shift, or the condition shift of the modulated variant.
    Vector d_shift;
    Matrix d_x;
};

GradBundle rmsnorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u);
GradBundle layernorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u);
GradBundle dyt_backward(const ForwardCache& cache, double alpha, const Vector& gamma,
                        const Matrix& u);

/// Single-head backward. Rejects caches carrying a dropout mask; use
/// mh_seednorm_backward (mask-aware) for training-mode caches.
GradBundle seednorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u);

/// Per-head backward. Cross-head terms vanish, the RMS path spans the whole
/// row. When the cache holds a dropout mask the s-path terms are masked and
/// rescaled exactly as in the forward pass.
GradBundle mh_seednorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u);

/// Condition-modulated backward. d_gamma and d_shift hold the gradients of
/// the condition scale gamma(c) and shift eta(c); p.gamma is not used.
GradBundle ada_seednorm_backward(const ForwardCache& cache, const NormParams& p,
                                 const ConditionParams& c, const Matrix& u);

/// A point at which a norm is probed: input plus every learnable slot.
struct ProbePoint {
    Matrix x;
    NormParams params;
    Vector shift;
};

using NormFunction =
    std::function<Matrix(const Matrix& x, const NormParams& p, const Vector& shift)>;

/// Central differences (L(t+h) - L(t-h)) / 2h of L = sum(u * f(.)) for every
/// coordinate of gamma, alpha, beta, shift and x present in `point`.
/// Throws std::runtime_error naming the coordinate if an evaluation is not
/// finite.
GradBundle finite_difference_jacobian(const NormFunction& f, const ProbePoint& point,
                                      const Matrix& u, double step = 1e-5);

inline constexpr double kRelErrorFloor = 1e-8;

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = kRelErrorFloor);

struct GradComparison {
    double max_rel_error = 0.0;
    double d_gamma = 0.0;
    double d_alpha = 0.0;
    double d_beta = 0.0;
    double d_shift = 0.0;
    double d_x = 0.0;
    /// Coordinate with the largest error, e.g. "beta[3]".
    std::string worst;
};

GradComparison compare_gradients(const GradBundle& analytic, const GradBundle& numeric,
                                 double floor = kRelErrorFloor);

}  // namespace seednorm
