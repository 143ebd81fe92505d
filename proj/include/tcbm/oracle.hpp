#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tcbm/prior.hpp"
#include "tcbm/types.hpp"

// Independent verification machinery. Nothing here evaluates the spectral
// scalar kernels or the prior/bridge closed forms: the coupling matrix is
// rebuilt densely from the tridiagonal stencil, eigensystems come from a
// cyclic Jacobi solver, marginals come from Euler-Maruyama simulation, and
// bridge laws come from Schur-complement conditioning of the dense joint.
namespace tcbm::oracle {

struct SimConfig {
    Scalar dt = 1e-3;          // <= 1e-2 for acceptance runs
    long paths = 200000;       // >= 1e4
    std::uint64_t seed = 1;
};

// A~ = alpha * tridiag(1, -2, 1), assembled entry by entry.
Matrix dense_coupling_matrix(int n, Scalar alpha);

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
// 1e-14 (relative to the input norm).  Eigenvalues sorted descending with
// matching eigenvector columns.  Input must be symmetric within 1e-10.
std::pair<Vector, Matrix> dense_eigensolve(const MatrixRef& sym);

// Pathwise Euler-Maruyama states at the requested checkpoint times
// (t_end is always the last checkpoint).  Each column of states[c] is one
// path's n*d state, flattened column-major.
struct SimResult {
    std::vector<Scalar> times;
    std::vector<Matrix> states;  // states[c] is (n*d) x paths
};

SimResult simulate_prior(const prior::PriorSpec& spec, const MatrixRef& x0, Scalar t_end,
                         const SimConfig& cfg, std::vector<Scalar> checkpoints = {});

// Moment estimators with a fixed pairwise-tree summation order over paths.
Vector mc_mean(const MatrixRef& states);
Matrix mc_cov(const MatrixRef& states);
Matrix mc_cross_cov(const MatrixRef& states_a, const MatrixRef& states_b);

struct DenseGaussian {
    Vector mean;
    Matrix cov;  // symmetric, eigenvalues >= -1e-10
};

// Joint law of (X_t, X_{t'}) given X_0 for one feature column, with all three
// covariance blocks built as dense matrix functions through the Jacobi
// eigensolver.  Constant schedule only.
DenseGaussian joint_gaussian(const prior::PriorSpec& spec, const VectorRef& x0_col, Scalar t,
                             Scalar t_prime);

// Condition on coordinates [obs_start, obs_start + len(value)) taking the
// given values.  The result keeps the full dimension: observed coordinates
// become a point mass at the value, the rest get the Schur-complement
// conditional.  A 1e-12 ridge is added if the observed block's condition
// number exceeds 1e12; if that does not rescue it, throws.
DenseGaussian condition(const DenseGaussian& g, int obs_start, const VectorRef& value);

// Dense marginal statistics for one feature column (mean and covariance via
// the Jacobi route), used by the score finite-difference check.
DenseGaussian dense_marginal(const prior::PriorSpec& spec, const VectorRef& x0_col, Scalar t);

}  // namespace tcbm::oracle
