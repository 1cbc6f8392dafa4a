#include "seednorm/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace seednorm {

namespace {

struct TrialSetup {
    ProbePoint point;
    Matrix u;
    NormFunction forward;
    std::string description;
};

double vec_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

GradBundle analytic_gradients(const GradcheckVariant& v, const ProbePoint& pt, const Matrix& u) {
    switch (v.kind) {
        case NormKind::rmsnorm:
            return rmsnorm_backward(rmsnorm_forward(pt.x, pt.params).cache, pt.params, u);
        case NormKind::layernorm:
            return layernorm_backward(layernorm_forward(pt.x, pt.params, pt.shift).cache,
                                      pt.params, u);
        case NormKind::dyt:
            return dyt_backward(
                dyt_forward(pt.x, pt.params.alpha[0], pt.params.gamma, pt.shift).cache,
                pt.params.alpha[0], pt.params.gamma, u);
        case NormKind::seednorm:
            return seednorm_backward(seednorm_forward(pt.x, pt.params).cache, pt.params, u);
        case NormKind::mh_seednorm:
            return mh_seednorm_backward(mh_seednorm_forward(pt.x, pt.params).cache, pt.params, u);
        case NormKind::ada_seednorm: {
            const ConditionParams c{pt.params.gamma, pt.shift};
            return ada_seednorm_backward(ada_seednorm_forward(pt.x, pt.params, c).cache,
                                         pt.params, c, u);
        }
    }
    throw std::logic_error("unhandled norm kind");
}

NormFunction forward_function(NormKind kind) {
    switch (kind) {
        case NormKind::rmsnorm:
            return [](const Matrix& x, const NormParams& p, const Vector&) {
                return rmsnorm_forward(x, p).output;
            };
        case NormKind::layernorm:
            return [](const Matrix& x, const NormParams& p, const Vector& shift) {
                return layernorm_forward(x, p, shift).output;
            };
        case NormKind::dyt:
            return [](const Matrix& x, const NormParams& p, const Vector& shift) {
                return dyt_forward(x, p.alpha[0], p.gamma, shift).output;
            };
        case NormKind::seednorm:
            return [](const Matrix& x, const NormParams& p, const Vector&) {
                return seednorm_forward(x, p).output;
            };
        case NormKind::mh_seednorm:
            return [](const Matrix& x, const NormParams& p, const Vector&) {
                return mh_seednorm_forward(x, p).output;
            };
        case NormKind::ada_seednorm:
            // gamma slot carries gamma(c), shift slot carries eta(c).
            return [](const Matrix& x, const NormParams& p, const Vector& shift) {
                return ada_seednorm_forward(x, p, ConditionParams{p.gamma, shift}).output;
            };
    }
    throw std::logic_error("unhandled norm kind");
}

bool is_dynamic(NormKind k) {
    return k == NormKind::seednorm || k == NormKind::mh_seednorm || k == NormKind::ada_seednorm;
}

TrialSetup make_trial(const GradcheckVariant& v, std::size_t rows, std::size_t d, double eps,
                      Rng& rng) {
    TrialSetup t;
    NormParams& p = t.point.params;
    p.eps = eps;
    p.gamma = rng.normal_vector(d);
    switch (v.kind) {
        case NormKind::rmsnorm: break;
        case NormKind::layernorm: t.point.shift = rng.normal_vector(d); break;
        case NormKind::dyt:
            p.alpha = {rng.normal()};
            t.point.shift = rng.normal_vector(d);
            break;
        case NormKind::seednorm:
        case NormKind::mh_seednorm:
        case NormKind::ada_seednorm:
            p.alpha = rng.normal_vector(d);
            p.beta = rng.normal_vector(d);
            p.n_heads = v.kind == NormKind::mh_seednorm ? v.heads : 1;
            if (v.kind == NormKind::ada_seednorm) t.point.shift = rng.normal_vector(d);
            break;
    }
    double x_scale = 1.0;
    if (is_dynamic(v.kind)) x_scale = 1.0 / std::sqrt(static_cast<double>(d / p.n_heads));
    t.point.x = rng.normal_matrix(rows, d, 0.0, x_scale);
    t.u = rng.normal_matrix(rows, d);
    t.forward = forward_function(v.kind);
    t.description = "N=" + std::to_string(rows) + ", D=" + std::to_string(d) +
                    ", eps=" + (eps == 0.0 ? std::string("0") : std::string("1e-6"));
    return t;
}

}  // namespace

std::string GradcheckVariant::label() const {
    if (kind == NormKind::mh_seednorm) {
        return "mh_seednorm(n=" + std::to_string(heads) + ")";
    }
    return std::string(to_string(kind));
}

std::vector<GradcheckVariant> default_gradcheck_variants() {
    return {{NormKind::rmsnorm, 1},
            {NormKind::dyt, 1},
            {NormKind::seednorm, 1},
            {NormKind::mh_seednorm, 2},
            {NormKind::mh_seednorm, 4}};
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
    if (opts.dims.empty()) throw std::invalid_argument("gradcheck: no dimensions given");
    if (!(opts.step > 0.0)) throw std::invalid_argument("gradcheck: step must be > 0");
    GradcheckReport report;
    report.tolerance = opts.tolerance;
    report.pass = true;

    for (std::size_t vi = 0; vi < opts.variants.size(); ++vi) {
        const GradcheckVariant& v = opts.variants[vi];
        if (v.heads == 0) throw std::invalid_argument("gradcheck: heads must be >= 1");
        std::vector<std::size_t> dims;
        for (std::size_t d : opts.dims) {
            if (d == 0) throw std::invalid_argument("gradcheck: dimension must be >= 1");
            if (v.kind != NormKind::mh_seednorm || d % v.heads == 0) dims.push_back(d);
        }
        if (dims.empty()) {
            throw std::invalid_argument("gradcheck: no dimension is divisible by " +
                                        std::to_string(v.heads) + " heads");
        }

        VariantResult res;
        res.variant = v;
        res.trials = opts.trials;
        Rng variant_rng(Rng::at(opts.seed, vi));
        for (std::size_t t = 0; t < opts.trials; ++t) {
            const std::size_t d = dims[t % dims.size()];
            const std::size_t rows = (t / dims.size()) % 2 == 0 ? 1 : 3;
            const double eps = (t / (2 * dims.size())) % 2 == 0 ? 0.0 : 1e-6;
            Rng rng = variant_rng.split();
            const TrialSetup trial = make_trial(v, rows, d, eps, rng);

            const GradBundle analytic = analytic_gradients(v, trial.point, trial.u);
            const GradBundle numeric =
                finite_difference_jacobian(trial.forward, trial.point, trial.u, opts.step);
            const GradComparison cmp = compare_gradients(analytic, numeric);

            res.slots.d_gamma = std::max(res.slots.d_gamma, cmp.d_gamma);
            res.slots.d_alpha = std::max(res.slots.d_alpha, cmp.d_alpha);
            res.slots.d_beta = std::max(res.slots.d_beta, cmp.d_beta);
            res.slots.d_shift = std::max(res.slots.d_shift, cmp.d_shift);
            res.slots.d_x = std::max(res.slots.d_x, cmp.d_x);
            if (!(cmp.max_rel_error <= res.max_rel_error)) {
                res.max_rel_error = cmp.max_rel_error;
                res.worst = "trial " + std::to_string(t) + " (" + trial.description +
                            "): " + cmp.worst;
            }

            if (v.kind == NormKind::rmsnorm && eps == 0.0) {
                double worst = res.orthogonality.value_or(0.0);
                for (std::size_t i = 0; i < rows; ++i) {
                    const auto dx = analytic.d_x.row(i);
                    const auto x = trial.point.x.row(i);
                    const double denom = vec_norm(dx) * vec_norm(x);
                    if (denom > 0.0) worst = std::max(worst, std::abs(dot(dx, x)) / denom);
                }
                res.orthogonality = worst;
            }
        }
        res.slots.max_rel_error = res.max_rel_error;
        res.pass = res.max_rel_error <= opts.tolerance;
        report.pass = report.pass && res.pass;
        report.results.push_back(std::move(res));
    }
    return report;
}

void perturb_norm_parameters(Model& m, Rng& rng, double scale) {
    auto perturb = [&](NormSlot& s) {
        for (double& g : s.params.gamma) g += rng.normal(0.0, scale);
        for (double& a : s.params.alpha) a += rng.normal(0.0, scale);
        for (double& b : s.params.beta) b += rng.normal(0.0, scale);
        for (double& v : s.shift) v += rng.normal(0.0, scale);
    };
    for (Block& b : m.blocks) {
        perturb(b.attn_norm);
        perturb(b.q_norm);
        perturb(b.k_norm);
        perturb(b.ffn_norm);
    }
    perturb(m.final_norm);
}

ModelGradcheckResult check_model_gradients(const Model& m, const Batch& b, double step,
                                           double floor) {
    if (!(step > 0.0)) throw std::invalid_argument("model gradcheck: step must be > 0");
    Model grads;
    const LossResult base = loss_and_gradients(m, b, grads);
    if (!base.first_nonfinite.empty()) {
        throw std::runtime_error("model gradcheck: non-finite values in " + base.first_nonfinite);
    }
    const auto layout = parameter_layout(m.cfg);
    const auto analytic = tensor_views(std::as_const(grads));

    ModelGradcheckResult res;
    Model work = m;
    auto views = tensor_views(work);
    for (std::size_t t = 0; t < views.size(); ++t) {
        double worst = 0.0;
        for (std::size_t i = 0; i < views[t].size(); ++i) {
            const double saved = views[t][i];
            const std::string coord = layout[t].name + "[" + std::to_string(i) + "]";
            auto loss_at = [&](double offset) {
                views[t][i] = saved + offset;
                const LossResult r = evaluate_loss(work, b);
                views[t][i] = saved;
                if (!r.first_nonfinite.empty()) {
                    throw std::runtime_error("model gradcheck: non-finite loss when probing " +
                                             coord);
                }
                return r.loss;
            };
            const double near = loss_at(step) - loss_at(-step);
            const double far = loss_at(2.0 * step) - loss_at(-2.0 * step);
            const double numeric = (8.0 * near - far) / (12.0 * step);
            const double err = relative_error(analytic[t][i], numeric, floor);
            worst = std::max(worst, err);
            if (!(err <= res.max_rel_error)) {
                res.max_rel_error = err;
                res.worst = coord;
            }
            ++res.parameters;
        }
        res.per_tensor.emplace_back(layout[t].name, worst);
    }
    return res;
}

}  // namespace seednorm
