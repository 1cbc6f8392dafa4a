#include "seednorm/norm_grad.hpp"

#include <cmath>
#include <stdexcept>

namespace seednorm {

namespace {

void check_upstream(const ForwardCache& cache, const Matrix& u, const char* op) {
    if (!u.same_shape(cache.x)) {
        throw DimensionError(std::string(op) + ": upstream gradient is " +
                             std::to_string(u.rows()) + "x" + std::to_string(u.cols()) +
                             ", forward output was " + std::to_string(cache.x.rows()) + "x" +
                             std::to_string(cache.x.cols()));
    }
}

void check_kind(const ForwardCache& cache, std::initializer_list<NormKind> kinds, const char* op) {
    for (NormKind k : kinds) {
        if (cache.kind == k) return;
    }
    throw std::invalid_argument(std::string(op) + ": cache was produced by " +
                                std::string(to_string(cache.kind)));
}

double sech2(double z) {
    const double c = std::cosh(z);
    return 1.0 / (c * c);
}

// Derivative of the activation at the cached pre-activation. tanh uses
// 1/cosh^2 so that saturated arguments keep their relative precision.
double activation_slope(Activation act, double z, double sig) {
    switch (act) {
        case Activation::tanh: return sech2(z);
        case Activation::sigmoid: return sig * (1.0 - sig);
        case Activation::hardtanh: return std::abs(z) < 1.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

// dL/dx through r = x / RMS(x) for one row, given v = dL/dr:
//   v / RMS - x * dot(v, x) / (D * RMS^3)
void rms_path_vjp(std::span<const double> x, std::span<const double> v, double rms,
                  std::span<double> d_x) {
    const double d = static_cast<double>(x.size());
    const double coef = dot(v, x) / (d * rms * rms * rms);
    for (std::size_t j = 0; j < x.size(); ++j) d_x[j] = v[j] / rms - x[j] * coef;
}

// Shared body of the dynamic-coefficient backward passes. `unit_gamma`
// selects the condition-modulated variant, whose internal scale is 1 and
// whose upstream gradient has already been multiplied by (1 + gamma_c).
GradBundle dynamic_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u,
                            bool unit_gamma) {
    const std::size_t n = cache.x.rows();
    const std::size_t d = cache.x.cols();
    const std::size_t heads = cache.n_heads;
    if (heads == 0 || d % heads != 0 || cache.sigma_val.cols() != heads) {
        throw std::invalid_argument("dynamic norm backward: malformed cache");
    }
    if (p.beta.size() != d || (p.alpha.size() != 1 && p.alpha.size() != d) ||
        p.n_heads != heads || (!unit_gamma && p.gamma.size() != d)) {
        throw DimensionError("dynamic norm backward: parameters do not match the cache");
    }
    const std::size_t hd = d / heads;
    const bool scalar_alpha = p.alpha.size() == 1;
    const bool masked = cache.dropout_active();
    const double keep_scale = masked ? 1.0 / (1.0 - cache.dropout_rate) : 1.0;

    GradBundle g;
    g.d_gamma.assign(d, 0.0);
    g.d_alpha.assign(p.alpha.size(), 0.0);
    g.d_beta.assign(d, 0.0);
    g.d_x = Matrix(n, d);

    Vector v(d);
    Vector beta_term(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = cache.x.row(i);
        const auto r = cache.r.row(i);
        const auto ui = u.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double scale = cache.s(i, j) + (unit_gamma ? 1.0 : p.gamma[j]);
            v[j] = scale * ui[j];
            g.d_gamma[j] += ui[j] * r[j];
        }
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t lo = h * hd;
            const double sig = cache.sigma_val(i, h);
            const double z = cache.tanh_arg(i, h);
            // dL/dsigma_h = sum over the head of u * r * alpha * keep.
            double head_dot = 0.0;
            for (std::size_t j = lo; j < lo + hd; ++j) {
                const double keep = masked ? (*cache.dropout_mask)(i, j) * keep_scale : 1.0;
                const double ur = ui[j] * r[j] * keep;
                head_dot += ur * p.alpha_at(j);
                const double da = sig * ur;
                if (scalar_alpha) {
                    g.d_alpha[0] += da;
                } else {
                    g.d_alpha[j] += da;
                }
            }
            double dz = head_dot * activation_slope(cache.activation, z, sig);
            if (cache.dim_scaled) dz /= static_cast<double>(hd);
            for (std::size_t j = lo; j < lo + hd; ++j) {
                g.d_beta[j] += dz * x[j];
                beta_term[j] = dz * p.beta[j];
            }
        }
        auto dx = g.d_x.row(i);
        rms_path_vjp(x, v, cache.rms[i], dx);
        for (std::size_t j = 0; j < d; ++j) dx[j] += beta_term[j];
    }
    return g;
}

}  // namespace

GradBundle rmsnorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u) {
    check_kind(cache, {NormKind::rmsnorm}, "rmsnorm_backward");
    check_upstream(cache, u, "rmsnorm_backward");
    const std::size_t n = cache.x.rows();
    const std::size_t d = cache.x.cols();
    if (p.gamma.size() != d) throw DimensionError("rmsnorm_backward: gamma does not match cache");

    GradBundle g;
    g.d_gamma.assign(d, 0.0);
    g.d_alpha.assign(p.alpha.size(), 0.0);
    g.d_beta.assign(p.beta.size(), 0.0);
    g.d_x = Matrix(n, d);
    Vector v(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ui = u.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            g.d_gamma[j] += ui[j] * cache.r(i, j);
            v[j] = p.gamma[j] * ui[j];
        }
        rms_path_vjp(cache.x.row(i), v, cache.rms[i], g.d_x.row(i));
    }
    return g;
}

GradBundle layernorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u) {
    check_kind(cache, {NormKind::layernorm}, "layernorm_backward");
    check_upstream(cache, u, "layernorm_backward");
    const std::size_t n = cache.x.rows();
    const std::size_t d = cache.x.cols();
    if (p.gamma.size() != d) throw DimensionError("layernorm_backward: gamma does not match cache");
    const double inv_d = 1.0 / static_cast<double>(d);

    GradBundle g;
    g.d_gamma.assign(d, 0.0);
    g.d_shift.assign(d, 0.0);
    g.d_x = Matrix(n, d);
    Vector v(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ui = u.row(i);
        const auto xhat = cache.r.row(i);
        double mean_v = 0.0;
        double mean_vx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            g.d_gamma[j] += ui[j] * xhat[j];
            g.d_shift[j] += ui[j];
            v[j] = p.gamma[j] * ui[j];
            mean_v += v[j];
            mean_vx += v[j] * xhat[j];
        }
        mean_v *= inv_d;
        mean_vx *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
            g.d_x(i, j) = (v[j] - mean_v - xhat[j] * mean_vx) / cache.rms[i];
        }
    }
    return g;
}

GradBundle dyt_backward(const ForwardCache& cache, double alpha, const Vector& gamma,
                        const Matrix& u) {
    check_kind(cache, {NormKind::dyt}, "dyt_backward");
    check_upstream(cache, u, "dyt_backward");
    const std::size_t n = cache.x.rows();
    const std::size_t d = cache.x.cols();
    if (gamma.size() != d) throw DimensionError("dyt_backward: gamma does not match cache");

    GradBundle g;
    g.d_gamma.assign(d, 0.0);
    g.d_alpha.assign(1, 0.0);
    g.d_shift.assign(d, 0.0);
    g.d_x = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double uij = u(i, j);
            const double slope = sech2(cache.tanh_arg(i, j));
            g.d_x(i, j) = uij * gamma[j] * alpha * slope;
            g.d_gamma[j] += uij * cache.sigma_val(i, j);
            g.d_alpha[0] += uij * gamma[j] * cache.x(i, j) * slope;
            g.d_shift[j] += uij;
        }
    }
    return g;
}

GradBundle seednorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u) {
    check_kind(cache, {NormKind::seednorm, NormKind::mh_seednorm}, "seednorm_backward");
    check_upstream(cache, u, "seednorm_backward");
    if (cache.n_heads != 1 || p.n_heads != 1) {
        throw std::invalid_argument("seednorm_backward: n_heads must be 1");
    }
    if (cache.dropout_active()) {
        throw std::invalid_argument(
            "seednorm_backward: cache carries a dropout mask; use mh_seednorm_backward");
    }
    return dynamic_backward(cache, p, u, false);
}

GradBundle mh_seednorm_backward(const ForwardCache& cache, const NormParams& p, const Matrix& u) {
    check_kind(cache, {NormKind::seednorm, NormKind::mh_seednorm}, "mh_seednorm_backward");
    check_upstream(cache, u, "mh_seednorm_backward");
    return dynamic_backward(cache, p, u, false);
}

GradBundle ada_seednorm_backward(const ForwardCache& cache, const NormParams& p,
                                 const ConditionParams& c, const Matrix& u) {
    check_kind(cache, {NormKind::ada_seednorm}, "ada_seednorm_backward");
    check_upstream(cache, u, "ada_seednorm_backward");
    const std::size_t n = cache.x.rows();
    const std::size_t d = cache.x.cols();
    if (c.gamma_c.size() != d || c.eta_c.size() != d) {
        throw DimensionError("ada_seednorm_backward: condition does not match cache");
    }
    Matrix inner_u(n, d);
    Vector d_gamma_c(d, 0.0);
    Vector d_eta_c(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            inner_u(i, j) = u(i, j) * (1.0 + c.gamma_c[j]);
            d_gamma_c[j] += u(i, j) * cache.inner(i, j);
            d_eta_c[j] += u(i, j);
        }
    }
    GradBundle g = dynamic_backward(cache, p, inner_u, true);
    g.d_gamma = std::move(d_gamma_c);
    g.d_shift = std::move(d_eta_c);
    return g;
}

GradBundle finite_difference_jacobian(const NormFunction& f, const ProbePoint& point,
                                      const Matrix& u, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_jacobian: step must be > 0");

    ProbePoint work = point;
    const Matrix base = f(work.x, work.params, work.shift);
    if (!u.same_shape(base)) {
        throw DimensionError("finite_difference_jacobian: upstream gradient shape mismatch");
    }

    // Evaluates the central difference for one coordinate, which `slot` points into.
    auto probe = [&](double& slot, const std::string& name) {
        const double saved = slot;
        slot = saved + step;
        const Matrix plus = f(work.x, work.params, work.shift);
        slot = saved - step;
        const Matrix minus = f(work.x, work.params, work.shift);
        slot = saved;
        if (!plus.all_finite() || !minus.all_finite()) {
            throw std::runtime_error("finite_difference_jacobian: non-finite evaluation at " +
                                     name);
        }
        // Differencing per element first keeps untouched outputs exactly zero.
        double acc = 0.0;
        for (std::size_t k = 0; k < plus.size(); ++k) {
            acc += u.data()[k] * (plus.data()[k] - minus.data()[k]);
        }
        return acc / (2.0 * step);
    };

    auto probe_vector = [&](Vector& values, const char* name) {
        Vector grads(values.size(), 0.0);
        for (std::size_t j = 0; j < values.size(); ++j) {
            grads[j] = probe(values[j], std::string(name) + "[" + std::to_string(j) + "]");
        }
        return grads;
    };

    GradBundle g;
    g.d_gamma = probe_vector(work.params.gamma, "gamma");
    g.d_alpha = probe_vector(work.params.alpha, "alpha");
    g.d_beta = probe_vector(work.params.beta, "beta");
    g.d_shift = probe_vector(work.shift, "shift");
    g.d_x = Matrix(work.x.rows(), work.x.cols());
    for (std::size_t i = 0; i < work.x.rows(); ++i) {
        for (std::size_t j = 0; j < work.x.cols(); ++j) {
            g.d_x(i, j) = probe(work.x(i, j),
                                "x[" + std::to_string(i) + "," + std::to_string(j) + "]");
        }
    }
    return g;
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradComparison compare_gradients(const GradBundle& analytic, const GradBundle& numeric,
                                 double floor) {
    GradComparison cmp;
    auto scan = [&](const std::vector<double>& a, const std::vector<double>& b, double& field,
                    const char* name, std::size_t cols) {
        if (a.size() != b.size()) {
            throw DimensionError(std::string("compare_gradients: ") + name + " sizes differ (" +
                                 std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                 ")");
        }
        for (std::size_t k = 0; k < a.size(); ++k) {
            const double e = relative_error(a[k], b[k], floor);
            if (!(e <= field)) field = e;  // NaN propagates
            if (!(e <= cmp.max_rel_error)) {
                cmp.max_rel_error = e;
                cmp.worst = cols == 0 ? std::string(name) + "[" + std::to_string(k) + "]"
                                      : std::string(name) + "[" + std::to_string(k / cols) + "," +
                                            std::to_string(k % cols) + "]";
            }
        }
    };
    scan(analytic.d_gamma, numeric.d_gamma, cmp.d_gamma, "gamma", 0);
    scan(analytic.d_alpha, numeric.d_alpha, cmp.d_alpha, "alpha", 0);
    scan(analytic.d_beta, numeric.d_beta, cmp.d_beta, "beta", 0);
    scan(analytic.d_shift, numeric.d_shift, cmp.d_shift, "shift", 0);
    scan(analytic.d_x.data(), numeric.d_x.data(), cmp.d_x, "x", analytic.d_x.cols());
    return cmp;
}

}  // namespace seednorm
