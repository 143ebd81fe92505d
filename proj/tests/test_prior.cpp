#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Cholesky>

#include "tcbm/oracle.hpp"
#include "tcbm/prior.hpp"
#include "tcbm/rng.hpp"

using namespace tcbm;
using namespace tcbm::prior;

namespace {

// Composite Simpson oracle for int_0^t f, independent of the closed forms.
double simpson(const CorrelationSchedule& s, double t, int panels = 4096) {
    double acc = s.value(0.0) + s.value(t);
    for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4.0 : 2.0) * s.value(i * t / panels);
    return acc * t / (3.0 * panels);
}

PriorSpec small_spec(int n, double alpha, double eps, int d = 1) {
    return make_prior(spectral::build_operator(n, alpha), eps, Matrix::Zero(n, d));
}

Matrix random_matrix(int n, int d, Rng& rng) {
    Matrix m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("antiderivative closed forms") {
    CHECK(antiderivative(CorrelationSchedule::constant(), 0.8) == 0.8);
    CHECK(antiderivative(CorrelationSchedule::linear(1.0, 1.0), 1.0) ==
          doctest::Approx(0.5).epsilon(1e-14));
    // frozen: (1 - e^{-4})/4
    CHECK(antiderivative(CorrelationSchedule::exponential(4.0), 1.0) ==
          doctest::Approx(0.24542109027781645).epsilon(1e-13));

    // every kind against the Simpson oracle
    const CorrelationSchedule kinds[] = {
        CorrelationSchedule::constant(), CorrelationSchedule::linear(1.0, 2.0),
        CorrelationSchedule::linear(0.5, 0.5), CorrelationSchedule::quadratic(),
        CorrelationSchedule::exponential(2.5)};
    for (const auto& s : kinds)
        for (double t : {0.1, 0.37, 0.9, 1.0})
            CHECK(antiderivative(s, t) == doctest::Approx(simpson(s, t)).epsilon(1e-10));
}

TEST_CASE("marginal at t = 0 and the Brownian case") {
    Rng rng(11);
    const auto spec = small_spec(4, 1.0, 0.1, 2);
    const Matrix x0 = random_matrix(4, 2, rng);

    const auto at0 = marginal(spec, x0, 0.0);
    CHECK((at0.mean - x0).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(at0.mode_var.cwiseAbs().maxCoeff() == 0.0);

    // alpha = 0, b = 0: plain Brownian motion
    const auto bm = small_spec(4, 0.0, 0.25, 2);
    const auto stats = marginal(bm, x0, 0.4);
    CHECK((stats.mean - x0).cwiseAbs().maxCoeff() <= 1e-14);
    for (int k = 0; k < 4; ++k) CHECK(stats.mode_var[k] == doctest::Approx(0.1).epsilon(1e-14));

    CHECK_THROWS_AS(marginal(spec, x0, -0.1), std::out_of_range);
    CHECK_THROWS_AS(marginal(spec, x0, 1.1), std::out_of_range);
}

TEST_CASE("marginal matches Euler-Maruyama Monte Carlo") {
    // N=4, D=1, alpha=1, eps=0.1, b=0, t=0.5, x0 = e_1
    const auto spec = small_spec(4, 1.0, 0.1);
    Matrix x0 = Matrix::Zero(4, 1);
    x0(0, 0) = 1.0;

    oracle::SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.paths = 200000;
    cfg.seed = 2;
    const auto sim = oracle::simulate_prior(spec, x0, 0.5, cfg);
    const Vector mean = oracle::mc_mean(sim.states.back());
    const Matrix cov = oracle::mc_cov(sim.states.back());

    const auto stats = marginal(spec, x0, 0.5);
    const Matrix closed_cov =
        spec.op.basis * stats.mode_var.asDiagonal() * spec.op.basis.transpose();

    for (int i = 0; i < 4; ++i) {
        const double se = std::sqrt(cov(i, i) / cfg.paths);
        CHECK(std::abs(mean[i] - stats.mean(i, 0)) <= 3.0 * se);
        for (int j = 0; j < 4; ++j) {
            const double se_cov =
                std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / (cfg.paths - 1.0));
            CHECK(std::abs(cov(i, j) - closed_cov(i, j)) <= 3.0 * se_cov);
        }
    }
}

TEST_CASE("score vanishes at the mean and reduces to the scalar case") {
    Rng rng(3);
    const auto spec = small_spec(5, 1.0, 0.2, 2);
    const Matrix x0 = random_matrix(5, 2, rng);
    const auto stats = marginal(spec, x0, 0.6);
    CHECK(score(spec, x0, stats.mean, 0.6).cwiseAbs().maxCoeff() <= 1e-10);

    // N=1 reduces to the scalar OU formula with lambda = -2 alpha
    const auto scalar_spec = make_prior(spectral::build_operator(1, 1.0), 0.1,
                                        Matrix::Constant(1, 1, 0.3));
    const double t = 0.45, x0s = 0.8, xts = -0.2;
    const double lam = -2.0;
    const double m = std::exp(lam * t);
    const double h = (std::exp(lam * t) - 1.0) / lam;
    const double s = 0.1 * (std::exp(2.0 * lam * t) - 1.0) / (2.0 * lam);
    const double expected = -(xts - m * x0s - h * 0.3) / s;
    const Matrix got = score(scalar_spec, Matrix::Constant(1, 1, x0s),
                             Matrix::Constant(1, 1, xts), t);
    CHECK(got(0, 0) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(score(spec, x0, x0, 0.0), SingularCovarianceError);
}

TEST_CASE("score matches finite differences of the dense log-density") {
    Rng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        const int n = 5;
        auto spec = small_spec(n, 0.8, 0.15);
        spec.b = random_matrix(n, 1, rng);
        const Matrix x0 = random_matrix(n, 1, rng);
        const Matrix xt = random_matrix(n, 1, rng);
        const double t = 0.3 + 0.5 * rng.uniform();

        const auto dense = oracle::dense_marginal(spec, x0.col(0), t);
        const Eigen::LDLT<Matrix> ldlt(dense.cov);
        auto logq = [&](const Vector& x) {
            const Vector r = x - dense.mean;
            return -0.5 * r.dot(ldlt.solve(r));
        };

        const Matrix s = score(spec, x0, xt, t);
        const double h = 1e-4;
        double max_rel = 0.0;
        for (int i = 0; i < n; ++i) {
            Vector xp = xt.col(0), xm = xt.col(0);
            xp[i] += h;
            xm[i] -= h;
            const double fd = (logq(xp) - logq(xm)) / (2.0 * h);
            max_rel = std::max(max_rel, std::abs(s(i, 0) - fd) / std::max(1e-12, std::abs(fd)));
        }
        CHECK(max_rel <= 1e-5);
    }
}

TEST_CASE("score is the gradient of the dense quadratic form") {
    // for a quadratic log-density the midpoint directional derivative is
    // exact: logq(y) - logq(x) = <score((x+y)/2), y - x>
    Rng rng(13);
    const int n = 4;
    auto spec = small_spec(n, 1.2, 0.3);
    spec.b = random_matrix(n, 1, rng);
    const Matrix x0 = random_matrix(n, 1, rng);
    const double t = 0.7;

    const auto dense = oracle::dense_marginal(spec, x0.col(0), t);
    const Eigen::LDLT<Matrix> ldlt(dense.cov);
    auto logq = [&](const Vector& x) {
        const Vector r = x - dense.mean;
        return -0.5 * r.dot(ldlt.solve(r));
    };

    for (int rep = 0; rep < 10; ++rep) {
        const Matrix x = random_matrix(n, 1, rng);
        const Matrix y = random_matrix(n, 1, rng);
        const Matrix mid = 0.5 * (x + y);
        const Matrix s = score(spec, x0, mid, t);
        const double lhs = logq(y.col(0)) - logq(x.col(0));
        const double rhs = s.col(0).dot(y.col(0) - x.col(0));
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    }
}

TEST_CASE("Chapman-Kolmogorov composition of moments") {
    Rng rng(23);
    auto spec = small_spec(5, 1.3, 0.2, 2);
    spec.b = random_matrix(5, 2, rng);
    const Matrix x0 = random_matrix(5, 2, rng);

    for (double s_time : {0.2, 0.45}) {
        for (double t : {0.6, 0.95}) {
            const auto at_s = marginal(spec, x0, s_time);
            const auto at_t = marginal(spec, x0, t);
            const double gap = t - s_time;

            const Matrix mean_s_modes = spec.op.to_modes(at_s.mean);
            const Matrix b_modes = spec.op.to_modes(spec.b);
            Matrix propagated(5, 2);
            for (int k = 0; k < 5; ++k) {
                const double lam = spec.op.eigenvalues[k];
                propagated.row(k) = spectral::kernel_mean(lam, gap) * mean_s_modes.row(k) +
                                    spectral::kernel_bresponse(lam, gap) * b_modes.row(k);
                const double var_comp = spectral::kernel_mean(lam, gap) *
                                            spectral::kernel_mean(lam, gap) * at_s.mode_var[k] +
                                        spectral::kernel_var(lam, gap, spec.eps);
                CHECK(std::abs(var_comp - at_t.mode_var[k]) <= 1e-10);
            }
            CHECK((spec.op.from_modes(propagated) - at_t.mean).cwiseAbs().maxCoeff() <= 1e-10);
        }
    }
}

TEST_CASE("mode variance is nondecreasing in t") {
    for (const auto& schedule :
         {CorrelationSchedule::constant(), CorrelationSchedule::linear(1.0, 1.0),
          CorrelationSchedule::quadratic()}) {
        auto spec = make_prior(spectral::build_operator(4, 1.5), 0.3, Matrix::Zero(4, 1), 1.0,
                               schedule);
        Vector prev = Vector::Zero(4);
        for (int i = 1; i <= 100; ++i) {
            const auto stats = marginal(spec, Matrix::Zero(4, 1), i / 100.0);
            for (int k = 0; k < 4; ++k) {
                CHECK(stats.mode_var[k] >= prev[k] - 1e-12);
                CHECK(stats.mode_var[k] >= 0.0);
            }
            prev = stats.mode_var;
        }
    }
}

TEST_CASE("dynamic machinery with constant f reproduces the static formulas") {
    // linear(1, 0) evaluates f = 1 through the quadrature path
    Rng rng(31);
    const auto op = spectral::build_operator(5, 1.1);
    const Matrix b = random_matrix(5, 2, rng);
    const Matrix x0 = random_matrix(5, 2, rng);
    const auto stat = make_prior(op, 0.2, b);
    const auto dyn = make_prior(op, 0.2, b, 1.0, CorrelationSchedule::linear(1.0, 0.0));

    for (double t : {0.15, 0.5, 1.0}) {
        const auto a = marginal(stat, x0, t);
        const auto b2 = marginal(dyn, x0, t);
        CHECK((a.mean - b2.mean).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.mode_var - b2.mode_var).cwiseAbs().maxCoeff() <= 1e-12);

        const Vector ca = cross_covariance(stat, t, 1.0);
        const Vector cb = cross_covariance(dyn, t, 1.0);
        CHECK((ca - cb).cwiseAbs().maxCoeff() <= 1e-12);
    }

    // per-mode quadrature vs the closed form, constant kind forced through
    // the integral
    for (double lam : {-3.0, -0.4, 0.0})
        for (double t : {0.2, 0.8})
            CHECK(mode_var_quadrature(CorrelationSchedule::constant(), lam, t, 0.3) ==
                  doctest::Approx(spectral::kernel_var(lam, t, 0.3)).epsilon(1e-12));
}

TEST_CASE("cross covariance") {
    Rng rng(41);
    auto spec = small_spec(4, 1.0, 0.2);
    spec.b = random_matrix(4, 1, rng);

    // t = t': equals the marginal variance
    const auto stats = marginal(spec, random_matrix(4, 1, rng), 0.5);
    const Vector c = cross_covariance(spec, 0.5, 0.5);
    for (int k = 0; k < 4; ++k) CHECK(c[k] == stats.mode_var[k]);

    // constant schedule reduces to kernel_cross
    const Vector c2 = cross_covariance(spec, 0.3, 0.8);
    for (int k = 0; k < 4; ++k)
        CHECK(c2[k] ==
              doctest::Approx(spectral::kernel_cross(spec.op.eigenvalues[k], 0.3, 0.8, 0.2))
                  .epsilon(1e-14));

    CHECK_THROWS_AS(cross_covariance(spec, 0.8, 0.3), std::out_of_range);
}

TEST_CASE("dynamic cross covariance matches time-dependent Euler-Maruyama") {
    // f(t) = 1 - t, single mode lambda = -1 via n = 1, alpha = 0.5
    const auto spec = make_prior(spectral::build_operator(1, 0.5), 1.0, Matrix::Zero(1, 1), 1.0,
                                 CorrelationSchedule::linear(1.0, 1.0));
    oracle::SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.paths = 100000;
    cfg.seed = 5;
    const auto sim = oracle::simulate_prior(spec, Matrix::Zero(1, 1), 0.6, cfg, {0.3});

    const Matrix cross_mc = oracle::mc_cross_cov(sim.states[0], sim.states[1]);
    const Matrix var_t = oracle::mc_cov(sim.states[0]);
    const Matrix var_tp = oracle::mc_cov(sim.states[1]);

    const Vector closed = cross_covariance(spec, 0.3, 0.6);
    // moment SE for a Gaussian pair
    const double se = std::sqrt((var_t(0, 0) * var_tp(0, 0) + cross_mc(0, 0) * cross_mc(0, 0)) /
                                (cfg.paths - 1.0));
    CHECK(std::abs(cross_mc(0, 0) - closed[0]) <= 3.0 * se);

    // marginal variance from the quadrature against the same run
    const auto stats = marginal(spec, Matrix::Zero(1, 1), 0.6);
    const double se_var = var_tp(0, 0) * std::sqrt(2.0 / (cfg.paths - 1.0));
    CHECK(std::abs(var_tp(0, 0) - stats.mode_var[0]) <= 3.0 * se_var);
}
