#include <cmath>

#include "doctest.h"
#include "seednorm/norm_grad.hpp"

using namespace seednorm;

namespace {

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

bool all_zero(const GradBundle& g) {
    auto zero = [](const std::vector<double>& v) {
        for (double e : v) {
            if (e != 0.0) return false;
        }
        return true;
    };
    return zero(g.d_gamma) && zero(g.d_alpha) && zero(g.d_beta) && zero(g.d_shift) &&
           zero(g.d_x.data());
}

NormParams random_dynamic(Rng& rng, std::size_t d, std::size_t heads, double eps = kDefaultEps) {
    NormParams p;
    p.gamma = rng.normal_vector(d);
    p.alpha = rng.normal_vector(d);
    p.beta = rng.normal_vector(d);
    p.n_heads = heads;
    p.eps = eps;
    return p;
}

const NormFunction rms_fn = [](const Matrix& x, const NormParams& p, const Vector&) {
    return rmsnorm_forward(x, p).output;
};
const NormFunction dynamic_fn = [](const Matrix& x, const NormParams& p, const Vector&) {
    return mh_seednorm_forward(x, p).output;
};
const NormFunction dyt_fn = [](const Matrix& x, const NormParams& p, const Vector& shift) {
    return dyt_forward(x, p.alpha[0], p.gamma, shift).output;
};
const NormFunction layernorm_fn = [](const Matrix& x, const NormParams& p, const Vector& shift) {
    return layernorm_forward(x, p, shift).output;
};

}  // namespace

TEST_CASE("rmsnorm_backward") {
    Rng rng(3);
    const std::size_t d = 6;
    const Matrix x = rng.normal_matrix(2, d);
    auto p = NormParams::rms(d, 0.0);
    p.gamma = rng.normal_vector(d);
    const auto fwd = rmsnorm_forward(x, p);

    SUBCASE("zero upstream gives a zero bundle") {
        CHECK(all_zero(rmsnorm_backward(fwd.cache, p, Matrix(2, d))));
    }
    SUBCASE("input gradient is orthogonal to the input") {
        const Matrix u = rng.normal_matrix(2, d);
        const auto g = rmsnorm_backward(fwd.cache, p, u);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(std::abs(dot(g.d_x.row(i), x.row(i))) <= 1e-13 * norm2(u.data()) * norm2(x.data()));
        }
    }
    SUBCASE("matches finite differences") {
        const Matrix u = rng.normal_matrix(2, d);
        const auto g = rmsnorm_backward(fwd.cache, p, u);
        const auto fd = finite_difference_jacobian(rms_fn, {x, p, {}}, u, 1e-5);
        const auto cmp = compare_gradients(g, fd);
        CHECK(cmp.max_rel_error <= 1e-6);
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(rmsnorm_backward(fwd.cache, p, Matrix(3, d)), DimensionError);
        CHECK_THROWS_AS(rmsnorm_backward(fwd.cache, NormParams::rms(d + 1), rng.normal_matrix(2, d)),
                        DimensionError);
    }
}

TEST_CASE("dyt_backward") {
    Rng rng(5);
    const std::size_t d = 6;
    const Matrix x = rng.normal_matrix(3, d);
    const Vector gamma = rng.normal_vector(d);
    const Vector shift = rng.normal_vector(d);
    const Matrix u = rng.normal_matrix(3, d);

    SUBCASE("alpha zero kills the input gradient") {
        const auto fwd = dyt_forward(x, 0.0, gamma, shift);
        const auto g = dyt_backward(fwd.cache, 0.0, gamma, u);
        for (double v : g.d_x.data()) CHECK(v == 0.0);
        double expect = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < d; ++j) expect += u(i, j) * gamma[j] * x(i, j);
        }
        CHECK(g.d_alpha[0] == doctest::Approx(expect).epsilon(1e-14));
    }
    SUBCASE("saturation drives the input gradient to zero") {
        const Matrix big = Matrix::from_rows({{50, -50}});
        const Vector g2{1.5, -2};
        const Matrix u2 = Matrix::from_rows({{0.7, 1.1}});
        const auto fwd = dyt_forward(big, 1.0, g2, {0, 0});
        const auto g = dyt_backward(fwd.cache, 1.0, g2, u2);
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(std::abs(g.d_x(0, j)) < 1e-40 * std::abs(u2(0, j) * g2[j]));
        }
    }
    SUBCASE("all four gradients match finite differences") {
        NormParams p;
        p.gamma = gamma;
        p.alpha = {rng.normal()};
        const auto fwd = dyt_forward(x, p.alpha[0], gamma, shift);
        const auto g = dyt_backward(fwd.cache, p.alpha[0], gamma, u);
        const auto fd = finite_difference_jacobian(dyt_fn, {x, p, shift}, u, 1e-5);
        CHECK(compare_gradients(g, fd).max_rel_error <= 1e-6);
    }
}

TEST_CASE("layernorm_backward matches finite differences") {
    Rng rng(21);
    for (double eps : {0.0, 1e-6}) {
        const Matrix x = rng.normal_matrix(3, 7);
        auto p = NormParams::rms(7, eps);
        p.gamma = rng.normal_vector(7);
        const Vector shift = rng.normal_vector(7);
        const Matrix u = rng.normal_matrix(3, 7);
        const auto g = layernorm_backward(layernorm_forward(x, p, shift).cache, p, u);
        const auto fd = finite_difference_jacobian(layernorm_fn, {x, p, shift}, u);
        CHECK(compare_gradients(g, fd).max_rel_error <= 1e-6);
    }
}

TEST_CASE("seednorm_backward") {
    Rng rng(11);
    const std::size_t d = 8;

    SUBCASE("beta zero reduces to the rmsnorm gradients") {
        const Matrix x = rng.normal_matrix(3, d);
        auto p = NormParams::dynamic(d, 0.0, 1, 0.0);
        p.gamma = rng.normal_vector(d);
        p.alpha = rng.normal_vector(d);
        const Matrix u = rng.normal_matrix(3, d);
        const auto fwd = seednorm_forward(x, p);
        const auto g = seednorm_backward(fwd.cache, p, u);
        auto rp = NormParams::rms(d, 0.0);
        rp.gamma = p.gamma;
        const auto gr = rmsnorm_backward(rmsnorm_forward(x, rp).cache, rp, u);
        CHECK(g.d_gamma == gr.d_gamma);
        CHECK(g.d_x == gr.d_x);
        for (double v : g.d_alpha) CHECK(v == 0.0);
        Vector expect_beta(d, 0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            double ar = 0.0;
            for (std::size_t j = 0; j < d; ++j) ar += u(i, j) * p.alpha[j] * fwd.cache.r(i, j);
            for (std::size_t j = 0; j < d; ++j) expect_beta[j] += ar * x(i, j);
        }
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(g.d_beta[j] == doctest::Approx(expect_beta[j]).epsilon(1e-13));
        }
    }
    SUBCASE("zero upstream gives a zero bundle") {
        const Matrix x = rng.normal_matrix(2, d);
        const auto p = random_dynamic(rng, d, 1);
        CHECK(all_zero(seednorm_backward(seednorm_forward(x, p).cache, p, Matrix(2, d))));
    }
    SUBCASE("matches finite differences") {
        // Seed-11 configuration: alpha, beta, gamma, x ~ N(0, 1).
        Rng r11(11);
        auto p = random_dynamic(r11, d, 1);
        const Matrix x = r11.normal_matrix(1, d);
        const Matrix u = r11.normal_matrix(1, d);
        const auto g = seednorm_backward(seednorm_forward(x, p).cache, p, u);
        const auto fd = finite_difference_jacobian(dynamic_fn, {x, p, {}}, u, 1e-5);
        const auto cmp = compare_gradients(g, fd);
        INFO("worst coordinate " << cmp.worst);
        CHECK(cmp.max_rel_error <= 1e-5);
    }
    SUBCASE("dropout-active cache is rejected") {
        auto p = random_dynamic(rng, d, 1);
        p.dyn_dropout_rate = 0.3;
        Rng mask(1);
        const Matrix x = rng.normal_matrix(2, d);
        const auto fwd = seednorm_forward(x, p, {Mode::training, &mask});
        CHECK_THROWS_AS(seednorm_backward(fwd.cache, p, Matrix(2, d)), std::invalid_argument);
    }
    SUBCASE("cache from another norm is rejected") {
        const Matrix x = rng.normal_matrix(1, d);
        const auto fwd = rmsnorm_forward(x, NormParams::rms(d));
        CHECK_THROWS(seednorm_backward(fwd.cache, random_dynamic(rng, d, 1), Matrix(1, d)));
    }
}

TEST_CASE("mh_seednorm_backward") {
    SUBCASE("one head equals single-head bitwise") {
        Rng rng(14);
        for (int t = 0; t < 10; ++t) {
            const Matrix x = rng.normal_matrix(3, 6);
            const auto p = random_dynamic(rng, 6, 1);
            const Matrix u = rng.normal_matrix(3, 6);
            const auto cache = mh_seednorm_forward(x, p).cache;
            const auto a = seednorm_backward(cache, p, u);
            const auto b = mh_seednorm_backward(cache, p, u);
            CHECK(a.d_gamma == b.d_gamma);
            CHECK(a.d_alpha == b.d_alpha);
            CHECK(a.d_beta == b.d_beta);
            CHECK(a.d_x == b.d_x);
        }
    }
    SUBCASE("cross-head beta gradients vanish") {
        Rng rng(15);
        const auto p = random_dynamic(rng, 8, 2);
        const Matrix x = rng.normal_matrix(2, 8);
        Matrix u = rng.normal_matrix(2, 8);
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 4; j < 8; ++j) u(i, j) = 0.0;  // loss only sees head 0
        }
        const auto fd = finite_difference_jacobian(dynamic_fn, {x, p, {}}, u);
        const auto g = mh_seednorm_backward(mh_seednorm_forward(x, p).cache, p, u);
        for (std::size_t j = 4; j < 8; ++j) {
            CHECK(std::abs(fd.d_beta[j]) <= 1e-10);
            CHECK(g.d_beta[j] == 0.0);
        }
        CHECK(norm2({fd.d_beta.begin(), fd.d_beta.begin() + 4}) > 1e-6);
    }
    SUBCASE("matches finite differences") {
        Rng r13(13);
        auto p = random_dynamic(r13, 8, 2);
        const Matrix x = r13.normal_matrix(2, 8);
        const Matrix u = r13.normal_matrix(2, 8);
        const auto g = mh_seednorm_backward(mh_seednorm_forward(x, p).cache, p, u);
        const auto fd = finite_difference_jacobian(dynamic_fn, {x, p, {}}, u);
        const auto cmp = compare_gradients(g, fd);
        INFO("worst coordinate " << cmp.worst);
        CHECK(cmp.max_rel_error <= 1e-5);
    }
    SUBCASE("dimension scaling and scalar alpha") {
        Rng rng(16);
        auto p = random_dynamic(rng, 12, 3);
        p.dim_scaled = true;
        p.alpha = {rng.normal()};
        const Matrix x = rng.normal_matrix(3, 12);
        const Matrix u = rng.normal_matrix(3, 12);
        const auto g = mh_seednorm_backward(mh_seednorm_forward(x, p).cache, p, u);
        const auto fd = finite_difference_jacobian(dynamic_fn, {x, p, {}}, u);
        CHECK(compare_gradients(g, fd).max_rel_error <= 1e-5);
    }
    SUBCASE("ablation activations") {
        Rng rng(17);
        for (Activation act : {Activation::sigmoid, Activation::hardtanh}) {
            auto p = random_dynamic(rng, 8, 2);
            p.activation = act;
            // Keep pre-activations away from the hardtanh kinks.
            const Matrix x = scaled(rng.normal_matrix(2, 8), 0.2);
            const Matrix u = rng.normal_matrix(2, 8);
            const auto g = mh_seednorm_backward(mh_seednorm_forward(x, p).cache, p, u);
            const auto fd = finite_difference_jacobian(dynamic_fn, {x, p, {}}, u);
            INFO(to_string(act));
            CHECK(compare_gradients(g, fd).max_rel_error <= 1e-5);
        }
    }
    SUBCASE("dropout-aware gradients treat the mask as fixed") {
        Rng rng(18);
        auto p = random_dynamic(rng, 8, 2);
        p.dyn_dropout_rate = 0.4;
        const Matrix x = rng.normal_matrix(3, 8);
        const Matrix u = rng.normal_matrix(3, 8);
        const NormFunction masked = [](const Matrix& xx, const NormParams& pp, const Vector&) {
            Rng mask(777);  // same key on every evaluation, so the mask is fixed
            return mh_seednorm_forward(xx, pp, {Mode::training, &mask}).output;
        };
        Rng mask(777);
        const auto fwd = mh_seednorm_forward(x, p, {Mode::training, &mask});
        REQUIRE(fwd.cache.dropout_active());
        const auto g = mh_seednorm_backward(fwd.cache, p, u);
        const auto fd = finite_difference_jacobian(masked, {x, p, {}}, u);
        CHECK(compare_gradients(g, fd).max_rel_error <= 1e-5);
    }
}

TEST_CASE("ada_seednorm_backward matches finite differences") {
    Rng rng(19);
    auto p = random_dynamic(rng, 8, 2);
    const Matrix x = rng.normal_matrix(3, 8);
    const Matrix u = rng.normal_matrix(3, 8);
    // gamma slot carries gamma(c), shift slot carries eta(c).
    p.gamma = rng.normal_vector(8);
    const Vector eta = rng.normal_vector(8);
    const NormFunction ada = [](const Matrix& xx, const NormParams& pp, const Vector& shift) {
        return ada_seednorm_forward(xx, pp, ConditionParams{pp.gamma, shift}).output;
    };
    const ConditionParams cond{p.gamma, eta};
    const auto g = ada_seednorm_backward(ada_seednorm_forward(x, p, cond).cache, p, cond, u);
    const auto fd = finite_difference_jacobian(ada, {x, p, eta}, u);
    CHECK(compare_gradients(g, fd).max_rel_error <= 1e-5);
}

TEST_CASE("finite_difference_jacobian") {
    SUBCASE("identity map") {
        const NormFunction identity = [](const Matrix& x, const NormParams&, const Vector&) {
            return x;
        };
        Rng rng(1);
        const Matrix x = rng.normal_matrix(2, 3);
        const auto g = finite_difference_jacobian(identity, {x, {}, {}}, Matrix(2, 3, 1.0));
        for (double v : g.d_x.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("step sweep error curve is V-shaped") {
        Rng rng(2);
        const Matrix x = rng.normal_matrix(1, 8);
        auto p = NormParams::rms(8, 0.0);
        p.gamma = rng.normal_vector(8);
        const Matrix u = rng.normal_matrix(1, 8);
        const auto analytic = rmsnorm_backward(rmsnorm_forward(x, p).cache, p, u);
        auto err = [&](double h) {
            return compare_gradients(analytic, finite_difference_jacobian(rms_fn, {x, p, {}}, u, h))
                .d_x;
        };
        const double coarse = err(1e-3);
        const double mid = err(1e-5);
        const double fine = err(1e-7);
        CHECK(mid < coarse);
        CHECK(mid < fine);
    }
    SUBCASE("non-finite evaluation names the coordinate") {
        const NormFunction blowup = [](const Matrix& x, const NormParams&, const Vector&) {
            Matrix y = x;
            if (x(0, 1) > 1.0) y(0, 0) = std::numeric_limits<double>::infinity();
            return y;
        };
        const Matrix x = Matrix::from_rows({{0.0, 1.0}});
        try {
            finite_difference_jacobian(blowup, {x, {}, {}}, Matrix(1, 2, 1.0), 1e-3);
            FAIL("expected an exception");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("x[0,1]") != std::string::npos);
        }
    }
    SUBCASE("step must be positive") {
        CHECK_THROWS(finite_difference_jacobian(rms_fn, {Matrix(1, 2, 1.0), NormParams::rms(2), {}},
                                                Matrix(1, 2, 1.0), 0.0));
    }
}

TEST_CASE("gradient invariants under input scaling") {
    Rng rng(23);
    const std::size_t d = 8;
    const Matrix u = rng.normal_matrix(2, d);

    SUBCASE("gamma gradient is scale invariant") {
        const auto p = random_dynamic(rng, d, 1, 0.0);
        const Matrix x = rng.normal_matrix(2, d);
        const auto base = seednorm_backward(seednorm_forward(x, p).cache, p, u).d_gamma;
        for (double k : {1e-3, 0.1, 7.0, 1e3}) {
            const auto gk = seednorm_backward(seednorm_forward(scaled(x, k), p).cache, p, u).d_gamma;
            for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(gk[j] - base[j]) <= 1e-12);
        }
    }
    SUBCASE("alpha gradient is bounded by u * r") {
        for (int t = 0; t < 20; ++t) {
            const auto p = random_dynamic(rng, d, 1);
            const Matrix x = scaled(rng.normal_matrix(1, d), std::pow(10.0, rng.uniform(-3, 3)));
            const Matrix u1 = rng.normal_matrix(1, d);
            const auto fwd = seednorm_forward(x, p);
            const auto g = seednorm_backward(fwd.cache, p, u1);
            for (std::size_t j = 0; j < d; ++j) {
                CHECK(std::abs(g.d_alpha[j]) <= std::abs(u1(0, j) * fwd.cache.r(0, j)));
            }
        }
    }
    SUBCASE("beta zero input gradient scales exactly as 1/k") {
        auto p = NormParams::dynamic(d, 1.0, 1, 0.0);
        p.gamma = rng.normal_vector(d);
        p.alpha = rng.normal_vector(d);
        const Matrix x = rng.normal_matrix(2, d);
        const double base = norm2(seednorm_backward(seednorm_forward(x, p).cache, p, u).d_x.data());
        for (double k : {1e-3, 0.25, 10.0, 1e3}) {
            const double nk =
                norm2(seednorm_backward(seednorm_forward(scaled(x, k), p).cache, p, u).d_x.data());
            CHECK(std::abs(nk * k - base) <= 1e-12 * base);
        }
    }
    SUBCASE("general beta input gradient scales asymptotically as 1/k") {
        const auto p = random_dynamic(rng, d, 1, 0.0);
        const Matrix x = rng.normal_matrix(1, d);
        const Matrix u1 = rng.normal_matrix(1, d);
        // k -> infinity limit: sigma -> sign(z), sigma' -> 0, only the r-path survives.
        const auto fwd = seednorm_forward(x, p);
        const double sign = fwd.cache.tanh_arg(0, 0) > 0 ? 1.0 : -1.0;
        Vector v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = (sign * p.alpha[j] + p.gamma[j]) * u1(0, j);
        const double rms = fwd.cache.rms[0];
        const double coef = dot(v, x.row(0)) / (d * rms * rms * rms);
        Vector limit(d);
        for (std::size_t j = 0; j < d; ++j) limit[j] = v[j] / rms - x(0, j) * coef;
        const double k = 1e3;
        const double nk =
            norm2(seednorm_backward(seednorm_forward(scaled(x, k), p).cache, p, u1).d_x.data());
        CHECK(std::abs(nk * k - norm2(limit)) <= 0.05 * norm2(limit));
    }
    SUBCASE("beta gradient vanishes at large scale") {
        const auto p = random_dynamic(rng, d, 1, 0.0);
        Matrix x = rng.normal_matrix(1, d);
        x = scaled(x, 1.0 / norm2(x.data()));
        const Matrix u1 = rng.normal_matrix(1, d);
        const double at1 = norm2(seednorm_backward(seednorm_forward(x, p).cache, p, u1).d_beta);
        const double at1000 =
            norm2(seednorm_backward(seednorm_forward(scaled(x, 1e3), p).cache, p, u1).d_beta);
        CHECK(at1 > 0.0);
        CHECK(at1000 < 1e-6 * at1);
    }
}

TEST_CASE("compare_gradients reports the worst coordinate") {
    GradBundle a;
    GradBundle b;
    a.d_beta = {1.0, 2.0};
    b.d_beta = {1.0, 2.5};
    a.d_x = Matrix(1, 1, 3.0);
    b.d_x = Matrix(1, 1, 3.0);
    const auto cmp = compare_gradients(a, b);
    CHECK(cmp.worst == "beta[1]");
    CHECK(cmp.max_rel_error == doctest::Approx(0.2));
    CHECK(relative_error(0.0, 1e-12) == doctest::Approx(1e-4));
    a.d_beta = {1.0};
    CHECK_THROWS_AS(compare_gradients(a, b), DimensionError);
}
