#pragma once

// Randomized agreement suite between the analytic backward passes and the
// finite-difference oracle.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seednorm/model.hpp"
#include "seednorm/norm_grad.hpp"

namespace seednorm {

/// One variant under test; heads only matters for mh_seednorm.
struct GradcheckVariant {
    NormKind kind = NormKind::seednorm;
    std::size_t heads = 1;

    std::string label() const;
};

struct GradcheckOptions {
    std::vector<GradcheckVariant> variants;
    std::vector<std::size_t> dims{2, 4, 8, 16, 64};
    std::size_t trials = 100;
    std::uint64_t seed = 0;
    double tolerance = 1e-5;
    double step = 1e-5;
};

struct VariantResult {
    GradcheckVariant variant;
    std::size_t trials = 0;
    double max_rel_error = 0.0;
    /// Per-slot maxima over all trials.
    GradComparison slots;
    /// e.g. "trial 17 (N=3, D=64, eps=0): beta[5]"
    std::string worst;
    /// max |dot(d_x, x)| / (|d_x| |x|) over eps = 0 trials (rmsnorm only).
    std::optional<double> orthogonality;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<VariantResult> results;
    double tolerance = 0.0;
    bool pass = false;
};

/// Draws `trials` configurations per variant. Trial t uses D = dims[t % |dims|]
/// (dims not divisible by the head count are skipped), N alternates between 1
/// and 3, eps between 0 and 1e-6. Parameters, u and x are standard normal,
/// except that x is scaled by 1/sqrt(head width) for the dynamic norms so the
/// per-head dot product stays O(1); see README for why.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

/// The variant set used by the acceptance suite.
std::vector<GradcheckVariant> default_gradcheck_variants();

/// Moves every norm parameter off its initial value (gamma = 1 + N(0, s^2),
/// alpha, beta, shift and the DyT scalar perturbed by N(0, s^2)) so that a
/// whole-model check exercises all gradient paths.
void perturb_norm_parameters(Model& m, Rng& rng, double scale = 0.5);

struct ModelGradcheckResult {
    std::size_t parameters = 0;
    double max_rel_error = 0.0;
    /// e.g. "blocks.0.q_norm.beta[3]"
    std::string worst;
    /// Largest error per tensor, in parameter_layout order.
    std::vector<std::pair<std::string, double>> per_tensor;
};

/// Fourth-order central differences (8[L(h) - L(-h)] - [L(2h) - L(-2h)]) / 12h
/// of the batch loss over every parameter of `m`, compared with
/// loss_and_gradients. The higher-order stencil lets the step be large enough
/// to keep round-off small for the 0.02-scale embeddings. Throws
/// std::runtime_error when an evaluation is not finite.
ModelGradcheckResult check_model_gradients(const Model& m, const Batch& b, double step = 1e-4,
                                           double floor = kRelErrorFloor);

}  // namespace seednorm
