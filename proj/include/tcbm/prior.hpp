#pragma once

#include <utility>

#include "tcbm/spectral.hpp"
#include "tcbm/types.hpp"

namespace tcbm::prior {

// Time reparameterization f(t) multiplying the drift:
//   dX = f(t) (A~ X + b) dt + sqrt(eps) dW.
// Every built-in kind has a closed-form antiderivative F(t) = int_0^t f;
// the quadrature node count is only used for the marginal variance integral
// under non-constant kinds.
struct CorrelationSchedule {
    enum class Kind { Constant, Linear, Quadratic, Exponential };

    Kind kind = Kind::Constant;
    Scalar a = 1.0;      // linear: f(t) = a - c t
    Scalar c = 0.0;
    Scalar rate = 1.0;   // exponential: f(t) = e^{-rate t}
    int quadrature_nodes = 64;

    static CorrelationSchedule constant();
    static CorrelationSchedule linear(Scalar a, Scalar c, int nodes = 64);
    static CorrelationSchedule quadratic(int nodes = 64);   // f(t) = (1 - t)^2
    static CorrelationSchedule exponential(Scalar rate, int nodes = 64);

    bool is_constant() const { return kind == Kind::Constant; }
    Scalar value(Scalar t) const;  // f(t)
};

// F(t) = int_0^t f(tau) dtau, closed form per kind:
// constant -> t,  linear(a,c) -> a t - c t^2 / 2,
// quadratic -> t - t^2 + t^3/3,  exponential(r) -> (1 - e^{-r t}) / r.
Scalar antiderivative(const CorrelationSchedule& schedule, Scalar t);

// Full description of the prior process dX = f(t) (A~ X + b) dt + sqrt(eps) dW
// on sequences of op.n frames.  b is the constant drift term as it appears in
// the SDE (callers scale task boundary patterns by alpha before storing it).
struct PriorSpec {
    spectral::SpectralOperator op;
    Scalar eps = 0.1;
    Matrix b;            // n x d
    Scalar horizon = 1.0;
    CorrelationSchedule schedule;
};

PriorSpec make_prior(spectral::SpectralOperator op, Scalar eps, Matrix b, Scalar horizon = 1.0,
                     CorrelationSchedule schedule = CorrelationSchedule::constant());

// Gaussian law over n x d arrays: the covariance is V diag(mode_var) V^T
// applied per feature column, so it is stored as per-eigenmode variances.
struct GaussianStats {
    Matrix mean;      // n x d
    Vector mode_var;  // n, entries >= 0
};

// Marginal law of X_t given X_0 = x0:
//   mean     = e^{A~ F(t)} x0 + (e^{A~ F(t)} - I) A~^{-1} b
//   mode_var = eps int_0^t e^{2 lambda (F(t) - F(s))} ds
// (the integral collapses to kernel_var for the constant schedule).
GaussianStats marginal(const PriorSpec& spec, const MatrixRef& x0, Scalar t);

// Gradient of the marginal log-density in xt:
//   -V diag(1/mode_var) V^T (xt - mean), column-wise.
Matrix score(const PriorSpec& spec, const MatrixRef& x0, const MatrixRef& xt, Scalar t);

// Per-mode cross-covariance of (X_t, X_{t'}) given X_0, 0 <= t <= t':
//   c_k = e^{lambda_k (F(t') - F(t))} mode_var_k(t).
Vector cross_covariance(const PriorSpec& spec, Scalar t, Scalar t_prime);

// Marginal mode variance by Gauss-Legendre quadrature of the dynamic-schedule
// integral; exposed so the constant kind can be checked against kernel_var.
Scalar mode_var_quadrature(const CorrelationSchedule& schedule, Scalar lambda, Scalar t,
                           Scalar eps);

// Gauss-Legendre nodes and weights on [-1, 1] (cached per n).
std::pair<Vector, Vector> gauss_legendre(int n);

}  // namespace tcbm::prior
