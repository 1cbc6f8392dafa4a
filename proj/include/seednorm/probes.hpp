#pragma once

// Executable checks of the analytical claims about the dynamic norm: scale
// insensitivity of the output, the RMSNorm/DyT gradient ODE, the variance of
// the pre-activation dot product, and the parameter/FLOP overhead.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "seednorm/norm_forward.hpp"

namespace seednorm {

struct ProbeReport {
    std::string name;
    std::size_t samples = 0;
    double statistic = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    /// When set, pass requires statistic <= expected + tolerance only.
    bool one_sided = false;
    bool pass = false;
    /// Free-form rows (objects) explaining the statistic.
    nlohmann::json details = nlohmann::json::array();
};

void to_json(nlohmann::json& j, const ProbeReport& r);

/// Checks that scaling the input by k changes only the dynamic coefficient.
///
/// For every trial row x and k the output change is compared against
/// [act(k z) - act(z)] * alpha * r(x) (eps forced to 0). statistic is the
/// largest residual of that identity relative to max(1, |y|), expected 0,
/// tolerance 1e-12. The probe also fails if any |delta_j| exceeds the bound
/// 2 |alpha_j| |r_j|. details[k] carries the drift, i.e. the largest
/// |act(k z) - act(z)| * |alpha_j r_j|, and the bound tightness ratio.
ProbeReport probe_scale_insensitivity(const NormParams& p, const std::vector<double>& k_values,
                                      Rng& rng, std::size_t trials);

/// RMSNorm vs DyT gradient ODE. Check (i): the exact RMSNorm Jacobian diagonal
/// at inputs with RMS(x) = c equals (1/c)(1 - r_d^2 / D) (100 random inputs,
/// tolerance 1e-12). Check (ii): r(x) = sqrt(D) tanh(x / (c sqrt(D)))
/// satisfies dr/dx = (1/c)(1 - r^2/D) on `grid` (tolerance 1e-10).
/// statistic is the larger of the two maxima.
ProbeReport probe_dyt_rmsnorm_ode(double c, std::size_t dim, const std::vector<double>& grid,
                                  std::uint64_t seed = 0, std::size_t jacobian_inputs = 100);

enum class ComponentDistribution { normal, uniform };

/// Monte-Carlo variance of x . beta for D-dimensional i.i.d. zero-mean
/// vectors with component variance sigma^2, and of the per-head dot products
/// at width D / n. statistic = estimate / (D sigma^4), expected 1, tolerance
/// 0.1; the per-head ratio (expected 1/n, same relative tolerance) must also
/// hold.
ProbeReport probe_dot_variance(std::size_t dim, std::size_t n_heads, double sigma,
                               std::size_t samples, Rng& rng,
                               ComponentDistribution dist = ComponentDistribution::normal);

struct CostEstimate {
    std::size_t layers = 0;
    std::size_t hidden = 0;
    std::size_t heads = 0;
    /// (4N + 4N/H + 2) * D
    std::int64_t extra_params = 0;
    /// (8N + 8N/H + 4) * D - 4N - 1
    std::int64_t extra_madds = 0;
};

void to_json(nlohmann::json& j, const CostEstimate& c);

/// Closed-form overhead of swapping every RMSNorm (attention/FFN inputs,
/// per-head Q/K norms, output norm) for the dynamic norm. N/H uses exact
/// division: D must be divisible by H.
CostEstimate estimate_cost(std::size_t layers, std::size_t hidden, std::size_t heads);

/// estimate_cost checked against the parameter-count delta between a
/// seednorm and an rmsnorm model of that shape, each built with build_model
/// and enumerated tensor by tensor. The models use vocab 2, context 1 and
/// FFN width 1 since the delta does not depend on them; even so the OLMoE
/// shape (16 layers, D = 2048) needs about 2.2 GB per model, and the two
/// models are built one after the other. statistic = |formula - enumeration|,
/// expected 0, tolerance 0.
ProbeReport probe_cost(std::size_t layers, std::size_t hidden, std::size_t heads);

}  // namespace seednorm
