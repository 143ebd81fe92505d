#pragma once

#include <cmath>
#include <stdexcept>

#include "tcbm/types.hpp"

namespace tcbm::spectral {

// Scaled coupling operator  A~ = alpha * A  where A is the tridiagonal
// smoothing stencil (-2 on the diagonal, 1 on both off-diagonals).  The
// stencil is the negative discrete Laplacian with clamped ends, so its
// eigensystem is closed form:
//
//   lambda_k = alpha * (-2 + 2 cos(k pi / (n+1)))          k = 1..n
//   v_k[m]   = sqrt(2/(n+1)) * sin(m k pi / (n+1))         m = 1..n
//
// Every matrix function used downstream (exp(A~ t), variance integrals,
// cross-covariances) reduces to scalar kernels of the eigenvalues, applied
// in this basis.
struct SpectralOperator {
    int n = 0;
    Scalar alpha = 0.0;
    Vector eigenvalues;  // strictly decreasing for alpha > 0; all zero at alpha = 0
    Matrix basis;        // orthonormal V, columns are eigenvectors

    // Eigenbasis coordinates of an n x d column block: V^T x.
    Matrix to_modes(const MatrixRef& x) const { return basis.transpose() * x; }

    // Back to state space: V m.
    Matrix from_modes(const MatrixRef& m) const { return basis * m; }
};

inline SpectralOperator build_operator(int n, Scalar alpha) {
    if (n < 1) throw std::invalid_argument("build_operator: n must be >= 1");
    if (alpha < 0.0) throw std::invalid_argument("build_operator: alpha must be >= 0");

    SpectralOperator op;
    op.n = n;
    op.alpha = alpha;
    op.eigenvalues.resize(n);
    op.basis.resize(n, n);

    const Scalar pi = 3.14159265358979323846;
    const Scalar norm = std::sqrt(2.0 / (n + 1));
    for (int k = 1; k <= n; ++k) {
        op.eigenvalues[k - 1] = alpha * (-2.0 + 2.0 * std::cos(k * pi / (n + 1)));
        for (int m = 1; m <= n; ++m)
            op.basis(m - 1, k - 1) = norm * std::sin(m * k * pi / (n + 1));
    }
    return op;
}

// (e^x - 1) / x with a series branch below |x| = 1e-8; both branches agree
// to better than 1e-12 relative at the switch.
inline Scalar phi1(Scalar x) {
    if (std::abs(x) < 1e-8) return 1.0 + x / 2.0 + x * x / 6.0;
    return std::expm1(x) / x;
}

// Per-mode mean propagator of exp(A~ t): m = e^{lambda t}.
inline Scalar kernel_mean(Scalar lambda, Scalar t) { return std::exp(lambda * t); }

// Per-mode response to the constant drift term, (e^{A~ t} - I) A~^{-1}:
// h = (e^{lambda t} - 1) / lambda = t phi1(lambda t), continuous h = t at
// lambda = 0.
inline Scalar kernel_bresponse(Scalar lambda, Scalar t) { return t * phi1(lambda * t); }

// Per-mode marginal variance, eps (e^{2 A~ t} - I) A~^{-1} / 2:
// s = eps (e^{2 lambda t} - 1) / (2 lambda) = eps t phi1(2 lambda t),
// continuous s = eps t at lambda = 0.  Nondecreasing in t; bounded by
// eps / (2 |lambda|) for lambda < 0.
inline Scalar kernel_var(Scalar lambda, Scalar t, Scalar eps) {
    return eps * t * phi1(2.0 * lambda * t);
}

// Per-mode cross-covariance of (X_t, X_{t'}), t <= t':
// c = e^{lambda (t' - t)} s(lambda, t), the factored form of
// eps/2 * lambda^{-1} (e^{lambda (t + t')} - e^{lambda (t' - t)}).
// At t = t' the mean factor is exactly 1, so c == kernel_var bitwise.
inline Scalar kernel_cross(Scalar lambda, Scalar t, Scalar t_prime, Scalar eps) {
    if (t > t_prime) throw std::invalid_argument("kernel_cross: requires t <= t_prime");
    return kernel_mean(lambda, t_prime - t) * kernel_var(lambda, t, eps);
}

}  // namespace tcbm::spectral
