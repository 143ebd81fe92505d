#include "tcbm/prior.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace tcbm::prior {

CorrelationSchedule CorrelationSchedule::constant() { return {}; }

CorrelationSchedule CorrelationSchedule::linear(Scalar a, Scalar c, int nodes) {
    CorrelationSchedule s;
    s.kind = Kind::Linear;
    s.a = a;
    s.c = c;
    s.quadrature_nodes = nodes;
    return s;
}

CorrelationSchedule CorrelationSchedule::quadratic(int nodes) {
    CorrelationSchedule s;
    s.kind = Kind::Quadratic;
    s.quadrature_nodes = nodes;
    return s;
}

CorrelationSchedule CorrelationSchedule::exponential(Scalar rate, int nodes) {
    CorrelationSchedule s;
    s.kind = Kind::Exponential;
    s.rate = rate;
    s.quadrature_nodes = nodes;
    return s;
}

Scalar CorrelationSchedule::value(Scalar t) const {
    switch (kind) {
        case Kind::Constant: return 1.0;
        case Kind::Linear: return a - c * t;
        case Kind::Quadratic: return (1.0 - t) * (1.0 - t);
        case Kind::Exponential: return std::exp(-rate * t);
    }
    return 1.0;
}

Scalar antiderivative(const CorrelationSchedule& schedule, Scalar t) {
    using Kind = CorrelationSchedule::Kind;
    switch (schedule.kind) {
        case Kind::Constant: return t;
        case Kind::Linear: return schedule.a * t - schedule.c * t * t / 2.0;
        case Kind::Quadratic: return t - t * t + t * t * t / 3.0;
        case Kind::Exponential:
            // (1 - e^{-r t}) / r, continuous in r through r = 0
            return t * spectral::phi1(-schedule.rate * t);
    }
    return t;
}

std::pair<Vector, Vector> gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");

    static std::mutex mtx;
    static std::map<int, std::pair<Vector, Vector>> cache;
    {
        std::lock_guard<std::mutex> lock(mtx);
        auto it = cache.find(n);
        if (it != cache.end()) return it->second;
    }

    Vector nodes(n), weights(n);
    const Scalar pi = 3.14159265358979323846;
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        // Chebyshev-like initial guess, then Newton on P_n via the recurrence.
        Scalar x = std::cos(pi * (i + 0.75) / (n + 0.5));
        Scalar dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            Scalar p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const Scalar p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const Scalar dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        const Scalar w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }

    std::lock_guard<std::mutex> lock(mtx);
    return cache.emplace(n, std::make_pair(nodes, weights)).first->second;
}

Scalar mode_var_quadrature(const CorrelationSchedule& schedule, Scalar lambda, Scalar t,
                           Scalar eps) {
    if (t == 0.0) return 0.0;
    const auto& [nodes, weights] = gauss_legendre(schedule.quadrature_nodes);
    const Scalar ft = antiderivative(schedule, t);
    Scalar acc = 0.0;
    for (int i = 0; i < nodes.size(); ++i) {
        const Scalar s = 0.5 * t * (nodes[i] + 1.0);
        acc += weights[i] * std::exp(2.0 * lambda * (ft - antiderivative(schedule, s)));
    }
    return eps * 0.5 * t * acc;
}

PriorSpec make_prior(spectral::SpectralOperator op, Scalar eps, Matrix b, Scalar horizon,
                     CorrelationSchedule schedule) {
    if (eps <= 0.0) throw std::invalid_argument("make_prior: eps must be > 0");
    if (horizon <= 0.0) throw std::invalid_argument("make_prior: horizon must be > 0");
    if (b.rows() != op.n) throw std::invalid_argument("make_prior: b must have op.n rows");
    if (schedule.quadrature_nodes < 1)
        throw std::invalid_argument("make_prior: quadrature_nodes must be >= 1");
    return PriorSpec{std::move(op), eps, std::move(b), horizon, schedule};
}

namespace {

void check_time(const PriorSpec& spec, Scalar t, const char* who) {
    if (t < 0.0 || t > spec.horizon)
        throw std::out_of_range(std::string(who) + ": t outside [0, horizon]");
}

Vector mode_variances(const PriorSpec& spec, Scalar t) {
    const int n = spec.op.n;
    Vector v(n);
    if (spec.schedule.is_constant()) {
        for (int k = 0; k < n; ++k)
            v[k] = spectral::kernel_var(spec.op.eigenvalues[k], t, spec.eps);
    } else {
        for (int k = 0; k < n; ++k)
            v[k] = mode_var_quadrature(spec.schedule, spec.op.eigenvalues[k], t, spec.eps);
    }
    return v;
}

}  // namespace

GaussianStats marginal(const PriorSpec& spec, const MatrixRef& x0, Scalar t) {
    check_time(spec, t, "marginal");
    if (x0.rows() != spec.op.n || x0.cols() != spec.b.cols())
        throw std::invalid_argument("marginal: x0 shape must match (op.n, b cols)");

    const Scalar ft = antiderivative(spec.schedule, t);
    const Matrix x0_modes = spec.op.to_modes(x0);
    const Matrix b_modes = spec.op.to_modes(spec.b);

    Matrix mean_modes(spec.op.n, x0.cols());
    for (int k = 0; k < spec.op.n; ++k) {
        const Scalar lam = spec.op.eigenvalues[k];
        mean_modes.row(k) = spectral::kernel_mean(lam, ft) * x0_modes.row(k) +
                            spectral::kernel_bresponse(lam, ft) * b_modes.row(k);
    }

    GaussianStats stats;
    stats.mean = spec.op.from_modes(mean_modes);
    stats.mode_var = mode_variances(spec, t);
    return stats;
}

Matrix score(const PriorSpec& spec, const MatrixRef& x0, const MatrixRef& xt, Scalar t) {
    check_time(spec, t, "score");
    if (t == 0.0) throw SingularCovarianceError("score: covariance singular at t = 0");
    if (xt.rows() != x0.rows() || xt.cols() != x0.cols())
        throw std::invalid_argument("score: xt shape must match x0");

    const GaussianStats stats = marginal(spec, x0, t);
    Matrix resid_modes = spec.op.to_modes(xt - stats.mean);
    for (int k = 0; k < spec.op.n; ++k) {
        if (stats.mode_var[k] < 1e-300)
            throw SingularCovarianceError("score: vanishing mode variance");
        resid_modes.row(k) /= -stats.mode_var[k];
    }
    return spec.op.from_modes(resid_modes);
}

Vector cross_covariance(const PriorSpec& spec, Scalar t, Scalar t_prime) {
    check_time(spec, t, "cross_covariance");
    check_time(spec, t_prime, "cross_covariance");
    if (t > t_prime) throw std::out_of_range("cross_covariance: requires t <= t_prime");

    const Scalar df = antiderivative(spec.schedule, t_prime) - antiderivative(spec.schedule, t);
    Vector c = mode_variances(spec, t);
    for (int k = 0; k < spec.op.n; ++k)
        c[k] *= spectral::kernel_mean(spec.op.eigenvalues[k], df);
    return c;
}

}  // namespace tcbm::prior
