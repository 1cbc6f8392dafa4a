#include "seednorm/norm_forward.hpp"

#include <algorithm>
#include <cmath>

namespace seednorm {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

void check_gamma(const Matrix& x, const Vector& gamma, const char* op) {
    require(gamma.size() == x.cols(), std::string(op) + ": gamma has " +
                                          std::to_string(gamma.size()) + " entries, input has " +
                                          std::to_string(x.cols()) + " columns");
}

void check_dynamic(const Matrix& x, const NormParams& p, const char* op) {
    const std::size_t d = x.cols();
    require(p.alpha.size() == 1 || p.alpha.size() == d,
            std::string(op) + ": alpha must have 1 or D entries");
    require(p.beta.size() == d, std::string(op) + ": beta must have D entries");
    require(p.n_heads >= 1 && d % p.n_heads == 0,
            std::string(op) + ": D=" + std::to_string(d) + " is not divisible by n_heads=" +
                std::to_string(p.n_heads));
    if (p.eps < 0.0) throw std::invalid_argument(std::string(op) + ": eps must be >= 0");
    if (!(p.dyn_dropout_rate >= 0.0 && p.dyn_dropout_rate < 1.0)) {
        throw std::invalid_argument(std::string(op) + ": dropout rate must lie in [0, 1)");
    }
}

// Shared body of every dynamic-coefficient norm. `unit_gamma` replaces gamma
// by the constant 1 (condition-modulated variant).
ForwardResult dynamic_forward(const Matrix& x, const NormParams& p, ForwardOptions opts,
                              NormKind kind, bool unit_gamma) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    const std::size_t heads = p.n_heads;
    const std::size_t hd = d / heads;

    ForwardCache cache;
    cache.kind = kind;
    cache.x = x;
    cache.r = Matrix(n, d);
    cache.rms.assign(n, 0.0);
    cache.tanh_arg = Matrix(n, heads);
    cache.sigma_val = Matrix(n, heads);
    cache.s = Matrix(n, d);
    cache.n_heads = heads;
    cache.dim_scaled = p.dim_scaled;
    cache.activation = p.activation;
    cache.eps = p.eps;

    const bool dropout = opts.mode == Mode::training && p.dyn_dropout_rate > 0.0;
    std::uint64_t mask_key = 0;
    if (dropout) {
        if (opts.rng == nullptr) {
            throw std::invalid_argument("dynamic-coefficient dropout needs an Rng in training mode");
        }
        // One key per call; each (row, channel) then addresses its own draw.
        mask_key = opts.rng->next_u64();
        cache.dropout_mask = Matrix(n, d);
        cache.dropout_rate = p.dyn_dropout_rate;
    }
    const double keep_scale = dropout ? 1.0 / (1.0 - p.dyn_dropout_rate) : 1.0;

    Matrix out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = x.row(i);
        const double rms = row_rms(row, p.eps);
        cache.rms[i] = rms;
        for (std::size_t j = 0; j < d; ++j) cache.r(i, j) = row[j] / rms;

        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t lo = h * hd;
            double z = dot(row.subspan(lo, hd), std::span<const double>(p.beta).subspan(lo, hd));
            if (p.dim_scaled) z /= static_cast<double>(hd);
            const double sig = activate(p.activation, z);
            cache.tanh_arg(i, h) = z;
            cache.sigma_val(i, h) = sig;
            for (std::size_t j = lo; j < lo + hd; ++j) {
                double s = sig * p.alpha_at(j);
                if (dropout) {
                    const bool keep =
                        Rng::uniform_at(mask_key, i * d + j) >= p.dyn_dropout_rate;
                    (*cache.dropout_mask)(i, j) = keep ? 1.0 : 0.0;
                    s = keep ? s * keep_scale : 0.0;
                }
                cache.s(i, j) = s;
                const double g = unit_gamma ? 1.0 : p.gamma[j];
                out(i, j) = (s + g) * cache.r(i, j);
            }
        }
    }
    return {std::move(out), std::move(cache)};
}

}  // namespace

std::string_view to_string(NormKind kind) {
    switch (kind) {
        case NormKind::rmsnorm: return "rmsnorm";
        case NormKind::layernorm: return "layernorm";
        case NormKind::dyt: return "dyt";
        case NormKind::seednorm: return "seednorm";
        case NormKind::mh_seednorm: return "mh_seednorm";
        case NormKind::ada_seednorm: return "ada_seednorm";
    }
    return "unknown";
}

NormKind parse_norm_kind(std::string_view name) {
    for (NormKind k : {NormKind::rmsnorm, NormKind::layernorm, NormKind::dyt, NormKind::seednorm,
                       NormKind::mh_seednorm, NormKind::ada_seednorm}) {
        if (to_string(k) == name) return k;
    }
    throw std::invalid_argument("unknown norm variant '" + std::string(name) + "'");
}

std::string_view to_string(Activation act) {
    switch (act) {
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::hardtanh: return "hardtanh";
    }
    return "unknown";
}

Activation parse_activation(std::string_view name) {
    for (Activation a : {Activation::tanh, Activation::sigmoid, Activation::hardtanh}) {
        if (to_string(a) == name) return a;
    }
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

double activate(Activation act, double z) {
    switch (act) {
        case Activation::tanh: return std::tanh(z);
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::hardtanh: return std::clamp(z, -1.0, 1.0);
    }
    return 0.0;
}

double activate_derivative(Activation act, double z) {
    switch (act) {
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Activation::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-z));
            return s * (1.0 - s);
        }
        case Activation::hardtanh: return std::abs(z) < 1.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

NormParams NormParams::rms(std::size_t dim, double eps) {
    NormParams p;
    p.gamma.assign(dim, 1.0);
    p.eps = eps;
    return p;
}

NormParams NormParams::dynamic(std::size_t dim, double alpha_init, std::size_t n_heads,
                               double eps) {
    NormParams p;
    p.gamma.assign(dim, 1.0);
    p.alpha.assign(dim, alpha_init);
    p.beta.assign(dim, 0.0);
    p.n_heads = n_heads;
    p.eps = eps;
    return p;
}

ForwardResult rmsnorm_forward(const Matrix& x, const NormParams& p) {
    check_gamma(x, p.gamma, "rmsnorm_forward");
    if (p.eps < 0.0) throw std::invalid_argument("rmsnorm_forward: eps must be >= 0");
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();

    ForwardCache cache;
    cache.kind = NormKind::rmsnorm;
    cache.x = x;
    cache.r = Matrix(n, d);
    cache.rms.assign(n, 0.0);
    cache.eps = p.eps;

    Matrix out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = x.row(i);
        const double rms = row_rms(row, p.eps);
        cache.rms[i] = rms;
        for (std::size_t j = 0; j < d; ++j) {
            cache.r(i, j) = row[j] / rms;
            out(i, j) = p.gamma[j] * cache.r(i, j);
        }
    }
    return {std::move(out), std::move(cache)};
}

ForwardResult layernorm_forward(const Matrix& x, const NormParams& p, const Vector& shift) {
    check_gamma(x, p.gamma, "layernorm_forward");
    require(shift.size() == x.cols(), "layernorm_forward: shift must have D entries");
    if (p.eps < 0.0) throw std::invalid_argument("layernorm_forward: eps must be >= 0");
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    const double inv_d = 1.0 / static_cast<double>(d);

    ForwardCache cache;
    cache.kind = NormKind::layernorm;
    cache.x = x;
    cache.r = Matrix(n, d);
    cache.rms.assign(n, 0.0);
    cache.eps = p.eps;

    Matrix out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = x.row(i);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean *= inv_d;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var *= inv_d;
        const double stddev = std::sqrt(var + p.eps);
        cache.rms[i] = stddev;
        for (std::size_t j = 0; j < d; ++j) {
            cache.r(i, j) = (row[j] - mean) / stddev;
            out(i, j) = p.gamma[j] * cache.r(i, j) + shift[j];
        }
    }
    return {std::move(out), std::move(cache)};
}

ForwardResult dyt_forward(const Matrix& x, double alpha, const Vector& gamma, const Vector& shift) {
    check_gamma(x, gamma, "dyt_forward");
    require(shift.size() == x.cols(), "dyt_forward: shift must have D entries");
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();

    ForwardCache cache;
    cache.kind = NormKind::dyt;
    cache.x = x;
    cache.tanh_arg = Matrix(n, d);
    cache.sigma_val = Matrix(n, d);

    Matrix out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double z = alpha * x(i, j);
            const double t = std::tanh(z);
            cache.tanh_arg(i, j) = z;
            cache.sigma_val(i, j) = t;
            out(i, j) = gamma[j] * t + shift[j];
        }
    }
    return {std::move(out), std::move(cache)};
}

ForwardResult seednorm_forward(const Matrix& x, const NormParams& p, ForwardOptions opts) {
    check_gamma(x, p.gamma, "seednorm_forward");
    check_dynamic(x, p, "seednorm_forward");
    if (p.n_heads != 1) {
        throw std::invalid_argument("seednorm_forward: n_heads must be 1; use mh_seednorm_forward");
    }
    return dynamic_forward(x, p, opts, NormKind::seednorm, false);
}

ForwardResult mh_seednorm_forward(const Matrix& x, const NormParams& p, ForwardOptions opts) {
    check_gamma(x, p.gamma, "mh_seednorm_forward");
    check_dynamic(x, p, "mh_seednorm_forward");
    return dynamic_forward(x, p, opts, NormKind::mh_seednorm, false);
}

ForwardResult ada_seednorm_forward(const Matrix& x, const NormParams& p, const ConditionParams& c,
                                   ForwardOptions opts) {
    check_dynamic(x, p, "ada_seednorm_forward");
    require(c.gamma_c.size() == x.cols() && c.eta_c.size() == x.cols(),
            "ada_seednorm_forward: condition scale and shift must have D entries");
    auto result = dynamic_forward(x, p, opts, NormKind::ada_seednorm, true);
    result.cache.kind = NormKind::ada_seednorm;
    result.cache.inner = result.output;
    Matrix& out = result.output;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            out(i, j) = out(i, j) * (1.0 + c.gamma_c[j]) + c.eta_c[j];
        }
    }
    return result;
}

}  // namespace seednorm
