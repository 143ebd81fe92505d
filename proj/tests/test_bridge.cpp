#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tcbm/bridge.hpp"
#include "tcbm/oracle.hpp"
#include "tcbm/rng.hpp"

using namespace tcbm;
using namespace tcbm::bridge;

namespace {

Matrix random_matrix(int n, int d, Rng& rng) {
    Matrix m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    return m;
}

prior::PriorSpec spec_of(int n, double alpha, double eps, int d = 1) {
    return prior::make_prior(spectral::build_operator(n, alpha), eps, Matrix::Zero(n, d));
}

}  // namespace

TEST_CASE("conditioning on self is a point mass") {
    Rng rng(1);
    const auto spec = spec_of(4, 1.0, 0.2, 2);
    const Matrix x0 = random_matrix(4, 2, rng);
    const Matrix xtp = random_matrix(4, 2, rng);
    const auto stats = posterior(spec, x0, xtp, 0.6, 0.6);
    CHECK((stats.mean - xtp).cwiseAbs().maxCoeff() == 0.0);
    CHECK(stats.mode_var.cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(posterior(spec, x0, xtp, 0.0, 0.0), SingularCovarianceError);
    CHECK_THROWS_AS(posterior(spec, x0, xtp, 0.8, 0.6), std::out_of_range);
}

TEST_CASE("Brownian bridge closed form at alpha = 0") {
    Rng rng(2);
    const auto spec = spec_of(5, 0.0, 0.3, 2);
    const Matrix x0 = random_matrix(5, 2, rng);
    const Matrix xtp = random_matrix(5, 2, rng);
    const double t = 0.35, tp = 0.85;

    const auto stats = posterior(spec, x0, xtp, t, tp);
    const Matrix expect_mean = x0 + (t / tp) * (xtp - x0);
    const double expect_var = 0.3 * t * (tp - t) / tp;
    CHECK((stats.mean - expect_mean).cwiseAbs().maxCoeff() <= 1e-12);
    for (int k = 0; k < 5; ++k)
        CHECK(stats.mode_var[k] == doctest::Approx(expect_var).epsilon(1e-12));
}

TEST_CASE("alpha -> 0 continuity of the posterior") {
    Rng rng(3);
    const auto tiny = spec_of(4, 1e-8, 0.2, 1);
    const Matrix x0 = random_matrix(4, 1, rng);
    const Matrix xtp = random_matrix(4, 1, rng);
    const double t = 0.3, tp = 0.9;

    const auto stats = posterior(tiny, x0, xtp, t, tp);
    const Matrix bb_mean = x0 + (t / tp) * (xtp - x0);
    const double bb_var = 0.2 * t * (tp - t) / tp;
    CHECK((stats.mean - bb_mean).cwiseAbs().maxCoeff() <= 1e-5);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(stats.mode_var[k] - bb_var) <= 1e-5);
}

TEST_CASE("posterior matches the dense joint-Gaussian conditioning oracle") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 2 + static_cast<int>(rng.uniform() * 4.0);
        const int d = 1 + static_cast<int>(rng.uniform() * 2.0);
        auto spec = spec_of(n, 0.3 + 2.0 * rng.uniform(), 0.05 + 0.5 * rng.uniform(), d);
        spec.b = random_matrix(n, d, rng);
        const Matrix x0 = random_matrix(n, d, rng);
        const Matrix xtp = random_matrix(n, d, rng);
        const double tp = 0.2 + 0.8 * rng.uniform();
        const double t = tp * rng.uniform();

        const auto stats = posterior(spec, x0, xtp, t, tp);
        const Matrix closed_cov =
            spec.op.basis * stats.mode_var.asDiagonal() * spec.op.basis.transpose();

        for (int col = 0; col < d; ++col) {
            prior::PriorSpec col_spec = spec;
            col_spec.b = spec.b.col(col);
            const auto joint = oracle::joint_gaussian(col_spec, x0.col(col), t, tp);
            const auto cond = oracle::condition(joint, n, xtp.col(col));
            CHECK((cond.mean.head(n) - stats.mean.col(col)).cwiseAbs().maxCoeff() <= 1e-8);
            CHECK((cond.cov.topLeftCorner(n, n) - closed_cov).cwiseAbs().maxCoeff() <= 1e-8);
        }
    }
}

TEST_CASE("posterior variance never exceeds the marginal variance") {
    auto spec = spec_of(5, 1.4, 0.25, 1);
    const Matrix x0 = Matrix::Zero(5, 1);
    const Matrix xtp = Matrix::Constant(5, 1, 0.7);
    for (int i = 1; i <= 10; ++i) {
        const double tp = i / 10.0;
        const auto at_tp = prior::marginal(spec, x0, tp);
        for (int j = 0; j <= 10; ++j) {
            const double t = tp * j / 10.0;
            const auto stats = posterior(spec, x0, xtp, t, tp);
            const auto marg = prior::marginal(spec, x0, t);
            for (int k = 0; k < 5; ++k) CHECK(stats.mode_var[k] <= marg.mode_var[k] + 1e-15);
        }
        (void)at_tp;
    }
}

TEST_CASE("nested conditioning agrees with direct conditioning") {
    // Markov property: condition at u first, then at t, composing the
    // per-mode gains; must match the one-shot bridge
    auto spec = spec_of(4, 1.1, 0.3, 1);
    const double t = 0.25, u = 0.5, tp = 0.9;
    const auto lam = spec.op.eigenvalues;

    for (int k = 0; k < 4; ++k) {
        const double s_t = spectral::kernel_var(lam[k], t, spec.eps);
        const double s_u = spectral::kernel_var(lam[k], u, spec.eps);
        const double s_tp = spectral::kernel_var(lam[k], tp, spec.eps);
        const double c_t_tp = spectral::kernel_cross(lam[k], t, tp, spec.eps);
        const double c_t_u = spectral::kernel_cross(lam[k], t, u, spec.eps);
        const double c_u_tp = spectral::kernel_cross(lam[k], u, tp, spec.eps);

        // direct
        const double g_direct = c_t_tp / s_tp;
        const double var_direct = s_t - g_direct * c_t_tp;

        // via u: X_u | X_tp has variance v_u; then X_t | X_u combines the
        // conditional variance plus the gain-propagated uncertainty of X_u
        const double g_u = c_u_tp / s_tp;
        const double v_u = s_u - g_u * c_u_tp;
        const double g_t = c_t_u / s_u;
        const double var_nested = (s_t - g_t * c_t_u) + g_t * g_t * v_u;

        CHECK(std::abs(var_direct - var_nested) <= 1e-9);

        // mean gains compose the same way: direct gain on (x_tp - mu_tp)
        // equals g_t * g_u
        CHECK(std::abs(g_direct - g_t * g_u) <= 1e-9);
    }
}

TEST_CASE("bridge sampling moments") {
    Rng rng(8);
    const auto spec = spec_of(4, 1.0, 0.4, 1);
    const Matrix x0 = random_matrix(4, 1, rng);
    const Matrix xtp = random_matrix(4, 1, rng);
    const auto stats = posterior(spec, x0, xtp, 0.4, 0.9);

    // degenerate stats return the mean exactly
    BridgeStats point{stats.mean, Vector::Zero(4)};
    CHECK((sample_bridge(spec.op, point, rng) - stats.mean).cwiseAbs().maxCoeff() == 0.0);

    const int draws = 100000;
    Matrix mean_acc = Matrix::Zero(4, 1);
    Matrix mode_sq_acc = Matrix::Zero(4, 1);
    for (int i = 0; i < draws; ++i) {
        const Matrix x = sample_bridge(spec.op, stats, rng);
        mean_acc += x;
        const Matrix dev_modes = spec.op.to_modes(x - stats.mean);
        mode_sq_acc += dev_modes.cwiseProduct(dev_modes);
    }
    const Matrix emp_mean = mean_acc / draws;
    const Matrix emp_var = mode_sq_acc / draws;

    for (int k = 0; k < 4; ++k) {
        const double se = std::sqrt(stats.mode_var[k] / draws);
        CHECK(std::abs(emp_mean(k, 0) - stats.mean(k, 0)) <= 4.0 * se + 1e-12);
        if (stats.mode_var[k] > 0.0)
            CHECK(std::abs(emp_var(k, 0) - stats.mode_var[k]) / stats.mode_var[k] <= 0.05);
    }
}

TEST_CASE("tower property: bridge marginalizes back to the prior") {
    Rng rng(9);
    const auto spec = spec_of(3, 1.0, 0.3, 1);
    const Matrix x0 = random_matrix(3, 1, rng);
    const double t = 0.4, tp = 1.0;

    const int draws = 100000;
    Matrix acc = Matrix::Zero(3, 1);
    Matrix acc_sq_modes = Matrix::Zero(3, 1);
    const auto at_tp = prior::marginal(spec, x0, tp);
    const auto at_t = prior::marginal(spec, x0, t);
    for (int i = 0; i < draws; ++i) {
        const Matrix x_tp = sample_bridge(spec.op, BridgeStats{at_tp.mean, at_tp.mode_var}, rng);
        const auto stats = posterior(spec, x0, x_tp, t, tp);
        const Matrix x_t = sample_bridge(spec.op, stats, rng);
        acc += x_t;
        const Matrix dev = spec.op.to_modes(x_t - at_t.mean);
        acc_sq_modes += dev.cwiseProduct(dev);
    }
    const Matrix emp_mean = acc / draws;
    const Matrix emp_var = acc_sq_modes / draws;
    for (int k = 0; k < 3; ++k) {
        const double se_mean = std::sqrt(at_t.mode_var[k] / draws);
        CHECK(std::abs(emp_mean(k, 0) - at_t.mean(k, 0)) <= 5.0 * se_mean);
        const double se_var = at_t.mode_var[k] * std::sqrt(2.0 / draws);
        CHECK(std::abs(emp_var(k, 0) - at_t.mode_var[k]) <= 5.0 * se_var);
    }
}

TEST_CASE("drift identities") {
    Rng rng(10);
    auto spec = spec_of(4, 1.0, 0.2, 2);
    spec.b = random_matrix(4, 2, rng);
    const Matrix x0 = random_matrix(4, 2, rng);
    const Matrix xt = random_matrix(4, 2, rng);
    const double t = 0.55;

    // a prediction whose marginal mean lands on xt gives zero drift
    {
        // choose x0_hat = e^{-A t}(xt - h(b)) per mode
        const Matrix xt_modes = spec.op.to_modes(xt);
        const Matrix b_modes = spec.op.to_modes(spec.b);
        Matrix x0h_modes(4, 2);
        for (int k = 0; k < 4; ++k) {
            const double lam = spec.op.eigenvalues[k];
            x0h_modes.row(k) = (xt_modes.row(k) -
                                spectral::kernel_bresponse(lam, t) * b_modes.row(k)) /
                               spectral::kernel_mean(lam, t);
        }
        const Matrix x0_hat = spec.op.from_modes(x0h_modes);
        CHECK(drift(spec, xt, t, x0_hat).cwiseAbs().maxCoeff() <= 1e-9);
    }

    // oracle prediction: drift coincides with the prior score
    const Matrix v = drift(spec, xt, t, x0);
    const Matrix s = prior::score(spec, x0, xt, t);
    CHECK((v - s).cwiseAbs().maxCoeff() <= 1e-12);

    // drift - score = -Sigma^{-1} e^{At} (x0 - x0_hat), via the dense route
    const Matrix x0_hat = random_matrix(4, 2, rng);
    const Matrix diff = drift(spec, xt, t, x0_hat) - s;
    auto [lam_d, q] = oracle::dense_eigensolve(oracle::dense_coupling_matrix(4, 1.0));
    Vector expAt(4), svar(4);
    for (int k = 0; k < 4; ++k) {
        expAt[k] = std::exp(lam_d[k] * t);
        svar[k] = spec.eps * std::expm1(2.0 * lam_d[k] * t) / (2.0 * lam_d[k]);
    }
    const Matrix dense_expAt = q * expAt.asDiagonal() * q.transpose();
    const Matrix dense_sigma_inv = q * svar.cwiseInverse().asDiagonal() * q.transpose();
    const Matrix expect = -dense_sigma_inv * dense_expAt * (x0 - x0_hat);
    CHECK((diff - expect).cwiseAbs().maxCoeff() <= 1e-10);

    CHECK_THROWS_AS(drift(spec, xt, 0.0, x0), SingularCovarianceError);
}
