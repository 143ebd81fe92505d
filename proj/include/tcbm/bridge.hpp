#pragma once

#include <stdexcept>

#include "tcbm/prior.hpp"
#include "tcbm/rng.hpp"

namespace tcbm::bridge {

// Posterior law of X_t pinned between X_0 and X_{t'}, diagonal in the
// operator's eigenbasis like everything else.
struct BridgeStats {
    Matrix mean;      // n x d
    Vector mode_var;  // n, each <= the prior marginal variance at t
};

// Gaussian conditioning of the joint (X_t, X_{t'}) | X_0 per eigenmode:
//   gain g = c(t,t') / s(t')
//   mean  = mu_t + g (x_{t'} - mu_{t'})
//   var   = s(t) - g c(t,t')
// where c is the cross-covariance and s the marginal variance.  Round-off
// negatives in the variance difference are clamped to zero below 1e-14.
inline BridgeStats posterior(const prior::PriorSpec& spec, const MatrixRef& x0,
                             const MatrixRef& x_tp, Scalar t, Scalar t_prime) {
    if (t_prime <= 0.0)
        throw SingularCovarianceError("posterior: conditioning on t' = 0 is singular");
    if (t > t_prime) throw std::out_of_range("posterior: requires t <= t_prime");
    if (t_prime > spec.horizon) throw std::out_of_range("posterior: t' outside [0, horizon]");
    if (x_tp.rows() != x0.rows() || x_tp.cols() != x0.cols())
        throw std::invalid_argument("posterior: x_tp shape must match x0");

    if (t == t_prime) return BridgeStats{x_tp, Vector::Zero(spec.op.n)};

    const prior::GaussianStats at_t = prior::marginal(spec, x0, t);
    const prior::GaussianStats at_tp = prior::marginal(spec, x0, t_prime);
    const Vector cross = prior::cross_covariance(spec, t, t_prime);

    const Matrix resid_modes = spec.op.to_modes(x_tp - at_tp.mean);
    Matrix mean_modes = spec.op.to_modes(at_t.mean);
    Vector var(spec.op.n);
    for (int k = 0; k < spec.op.n; ++k) {
        const Scalar s_tp = at_tp.mode_var[k];
        if (s_tp < 1e-300)
            throw SingularCovarianceError("posterior: vanishing endpoint variance");
        const Scalar gain = cross[k] / s_tp;
        mean_modes.row(k) += gain * resid_modes.row(k);
        Scalar v = at_t.mode_var[k] - gain * cross[k];
        if (v < 0.0) {
            if (v < -1e-14) throw std::logic_error("posterior: variance below round-off floor");
            v = 0.0;
        }
        var[k] = v;
    }
    return BridgeStats{spec.op.from_modes(mean_modes), var};
}

// mean + V diag(sqrt(mode_var)) xi, one standard normal per (mode, column).
inline Matrix sample_bridge(const spectral::SpectralOperator& op, const BridgeStats& stats,
                            Rng& rng) {
    Matrix noise_modes(op.n, stats.mean.cols());
    for (int k = 0; k < op.n; ++k) {
        const Scalar sd = std::sqrt(stats.mode_var[k]);
        for (int d = 0; d < noise_modes.cols(); ++d) noise_modes(k, d) = sd * rng.normal();
    }
    return stats.mean + op.from_modes(noise_modes);
}

// Reparameterized optimal drift: the prior score with x0 replaced by the
// clean-data prediction,  v(x_t, t) = -Sigma_t^{-1} (x_t - mu_t(x0_hat)).
inline Matrix drift(const prior::PriorSpec& spec, const MatrixRef& xt, Scalar t,
                    const MatrixRef& x0_hat) {
    return prior::score(spec, x0_hat, xt, t);
}

}  // namespace tcbm::bridge
