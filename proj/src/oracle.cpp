#include "tcbm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "tcbm/rng.hpp"

namespace tcbm::oracle {

Matrix dense_coupling_matrix(int n, Scalar alpha) {
    if (n < 1) throw std::invalid_argument("dense_coupling_matrix: n must be >= 1");
    Matrix a = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        a(i, i) = -2.0 * alpha;
        if (i + 1 < n) {
            a(i, i + 1) = alpha;
            a(i + 1, i) = alpha;
        }
    }
    return a;
}

std::pair<Vector, Matrix> dense_eigensolve(const MatrixRef& sym) {
    const int n = static_cast<int>(sym.rows());
    if (sym.cols() != n) throw std::invalid_argument("dense_eigensolve: matrix must be square");
    const Scalar scale = std::max<Scalar>(1.0, sym.cwiseAbs().maxCoeff());
    if ((sym - sym.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw std::invalid_argument("dense_eigensolve: matrix must be symmetric within 1e-10");

    Matrix b = 0.5 * (sym + sym.transpose());
    Matrix v = Matrix::Identity(n, n);
    const Scalar tol = 1e-14 * std::max<Scalar>(1.0, b.norm());

    for (int sweep = 0; sweep < 100; ++sweep) {
        Scalar off2 = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off2 += 2.0 * b(p, q) * b(p, q);
        if (std::sqrt(off2) <= tol) break;

        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(b(p, q)) <= 1e-300) continue;
                const Scalar theta = (b(q, q) - b(p, p)) / (2.0 * b(p, q));
                const Scalar t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const Scalar c = 1.0 / std::sqrt(t * t + 1.0);
                const Scalar s = t * c;
                for (int i = 0; i < n; ++i) {
                    const Scalar bip = b(i, p), biq = b(i, q);
                    b(i, p) = c * bip - s * biq;
                    b(i, q) = s * bip + c * biq;
                }
                for (int i = 0; i < n; ++i) {
                    const Scalar bpi = b(p, i), bqi = b(q, i);
                    b(p, i) = c * bpi - s * bqi;
                    b(q, i) = s * bpi + c * bqi;
                }
                for (int i = 0; i < n; ++i) {
                    const Scalar vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) { return b(i, i) > b(j, j); });

    Vector eigenvalues(n);
    Matrix eigenvectors(n, n);
    for (int k = 0; k < n; ++k) {
        eigenvalues[k] = b(order[k], order[k]);
        eigenvectors.col(k) = v.col(order[k]);
    }
    return {eigenvalues, eigenvectors};
}

SimResult simulate_prior(const prior::PriorSpec& spec, const MatrixRef& x0, Scalar t_end,
                         const SimConfig& cfg, std::vector<Scalar> checkpoints) {
    if (t_end < 0.0 || t_end > spec.horizon)
        throw std::out_of_range("simulate_prior: t_end outside [0, horizon]");
    if (cfg.dt <= 0.0 || cfg.paths < 1) throw std::invalid_argument("simulate_prior: bad config");
    if (x0.rows() != spec.op.n) throw std::invalid_argument("simulate_prior: x0 rows != n");

    checkpoints.push_back(t_end);
    std::sort(checkpoints.begin(), checkpoints.end());
    checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());
    for (Scalar c : checkpoints)
        if (c < 0.0 || c > t_end) throw std::out_of_range("simulate_prior: checkpoint outside range");

    // One shared time grid: fixed dt, shortened where a checkpoint interrupts.
    std::vector<Scalar> grid{0.0};
    std::vector<int> checkpoint_at;  // grid index of each checkpoint
    {
        std::size_t next_cp = 0;
        while (next_cp < checkpoints.size() && checkpoints[next_cp] <= 1e-15) {
            checkpoint_at.push_back(0);
            ++next_cp;
        }
        Scalar t = 0.0;
        while (next_cp < checkpoints.size()) {
            Scalar tn = std::min(t + cfg.dt, checkpoints[next_cp]);
            if (checkpoints[next_cp] - tn < 1e-12) tn = checkpoints[next_cp];
            grid.push_back(tn);
            t = tn;
            if (tn == checkpoints[next_cp]) {
                checkpoint_at.push_back(static_cast<int>(grid.size()) - 1);
                ++next_cp;
            }
        }
    }

    const int n = spec.op.n;
    const int d = static_cast<int>(x0.cols());
    const Matrix a = dense_coupling_matrix(n, spec.op.alpha);
    const Scalar noise_scale = std::sqrt(spec.eps);

    SimResult result;
    result.times = checkpoints;
    result.states.assign(checkpoints.size(), Matrix(n * d, cfg.paths));

    Rng master(cfg.seed);
    Matrix state(n, d), noise(n, d);
    for (long p = 0; p < cfg.paths; ++p) {
        Rng rng = master.substream(static_cast<std::uint64_t>(p));
        state = x0;
        std::size_t cp = 0;
        while (cp < checkpoint_at.size() && checkpoint_at[cp] == 0) {
            result.states[cp].col(p) = Eigen::Map<const Vector>(state.data(), n * d);
            ++cp;
        }
        for (std::size_t g = 1; g < grid.size(); ++g) {
            const Scalar t = grid[g - 1];
            const Scalar h = grid[g] - t;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) noise(i, j) = rng.normal();
            state += spec.schedule.value(t) * h * (a * state + spec.b) +
                     noise_scale * std::sqrt(h) * noise;
            while (cp < checkpoint_at.size() && checkpoint_at[cp] == static_cast<int>(g)) {
                if (!state.allFinite())
                    throw DivergedError("simulate_prior: non-finite state encountered");
                result.states[cp].col(p) = Eigen::Map<const Vector>(state.data(), n * d);
                ++cp;
            }
        }
    }
    return result;
}

namespace {

Vector pairwise_sum(const MatrixRef& cols, long lo, long hi) {
    if (hi - lo <= 8) {
        Vector acc = Vector::Zero(cols.rows());
        for (long i = lo; i < hi; ++i) acc += cols.col(i);
        return acc;
    }
    const long mid = lo + (hi - lo) / 2;
    return pairwise_sum(cols, lo, mid) + pairwise_sum(cols, mid, hi);
}

Matrix pairwise_outer_sum(const MatrixRef& a, const MatrixRef& b, long lo, long hi) {
    if (hi - lo <= 8) {
        Matrix acc = Matrix::Zero(a.rows(), b.rows());
        for (long i = lo; i < hi; ++i) acc += a.col(i) * b.col(i).transpose();
        return acc;
    }
    const long mid = lo + (hi - lo) / 2;
    return pairwise_outer_sum(a, b, lo, mid) + pairwise_outer_sum(a, b, mid, hi);
}

}  // namespace

Vector mc_mean(const MatrixRef& states) {
    return pairwise_sum(states, 0, states.cols()) / static_cast<Scalar>(states.cols());
}

Matrix mc_cov(const MatrixRef& states) { return mc_cross_cov(states, states); }

Matrix mc_cross_cov(const MatrixRef& states_a, const MatrixRef& states_b) {
    if (states_a.cols() != states_b.cols())
        throw std::invalid_argument("mc_cross_cov: path counts differ");
    const long paths = states_a.cols();
    const Matrix ca = states_a.colwise() - mc_mean(states_a);
    const Matrix cb = states_b.colwise() - mc_mean(states_b);
    return pairwise_outer_sum(ca, cb, 0, paths) / static_cast<Scalar>(paths - 1);
}

namespace {

// Scalar spectral maps for the dense route; the lambda == 0 branches are the
// exact alpha = 0 values.
Scalar dense_var_scalar(Scalar lambda, Scalar t, Scalar eps) {
    if (lambda == 0.0) return eps * t;
    return eps * std::expm1(2.0 * lambda * t) / (2.0 * lambda);
}

Scalar dense_cross_scalar(Scalar lambda, Scalar t, Scalar t_prime, Scalar eps) {
    if (lambda == 0.0) return eps * t;
    return 0.5 * eps * (std::exp(lambda * (t + t_prime)) - std::exp(lambda * (t_prime - t))) /
           lambda;
}

Scalar dense_bresp_scalar(Scalar lambda, Scalar t) {
    if (lambda == 0.0) return t;
    return std::expm1(lambda * t) / lambda;
}

struct DenseSpectral {
    Vector lam;
    Matrix q;
};

DenseSpectral dense_spectral(const prior::PriorSpec& spec) {
    auto [lam, q] = dense_eigensolve(dense_coupling_matrix(spec.op.n, spec.op.alpha));
    return {std::move(lam), std::move(q)};
}

Vector dense_mean_column(const DenseSpectral& ds, const prior::PriorSpec& spec,
                         const VectorRef& x0_col, int col, Scalar t) {
    const Vector x0m = ds.q.transpose() * x0_col;
    const Vector bm = ds.q.transpose() * spec.b.col(col);
    Vector m(ds.lam.size());
    for (int k = 0; k < ds.lam.size(); ++k)
        m[k] = std::exp(ds.lam[k] * t) * x0m[k] + dense_bresp_scalar(ds.lam[k], t) * bm[k];
    return ds.q * m;
}

Matrix dense_matrix_function(const DenseSpectral& ds, const Vector& diag) {
    return ds.q * diag.asDiagonal() * ds.q.transpose();
}

void require_constant_schedule(const prior::PriorSpec& spec, const char* who) {
    if (!spec.schedule.is_constant())
        throw std::invalid_argument(std::string(who) + ": dense oracle covers the constant schedule");
}

}  // namespace

DenseGaussian dense_marginal(const prior::PriorSpec& spec, const VectorRef& x0_col, Scalar t) {
    require_constant_schedule(spec, "dense_marginal");
    const DenseSpectral ds = dense_spectral(spec);
    Vector svar(ds.lam.size());
    for (int k = 0; k < ds.lam.size(); ++k) svar[k] = dense_var_scalar(ds.lam[k], t, spec.eps);
    return {dense_mean_column(ds, spec, x0_col, 0, t), dense_matrix_function(ds, svar)};
}

DenseGaussian joint_gaussian(const prior::PriorSpec& spec, const VectorRef& x0_col, Scalar t,
                             Scalar t_prime) {
    require_constant_schedule(spec, "joint_gaussian");
    if (t > t_prime) throw std::out_of_range("joint_gaussian: requires t <= t_prime");
    const int n = spec.op.n;
    const DenseSpectral ds = dense_spectral(spec);

    Vector s_t(n), s_tp(n), s_cross(n);
    for (int k = 0; k < n; ++k) {
        s_t[k] = dense_var_scalar(ds.lam[k], t, spec.eps);
        s_tp[k] = dense_var_scalar(ds.lam[k], t_prime, spec.eps);
        s_cross[k] = dense_cross_scalar(ds.lam[k], t, t_prime, spec.eps);
    }

    DenseGaussian g;
    g.mean.resize(2 * n);
    g.mean.head(n) = dense_mean_column(ds, spec, x0_col, 0, t);
    g.mean.tail(n) = dense_mean_column(ds, spec, x0_col, 0, t_prime);
    g.cov.resize(2 * n, 2 * n);
    g.cov.topLeftCorner(n, n) = dense_matrix_function(ds, s_t);
    g.cov.bottomRightCorner(n, n) = dense_matrix_function(ds, s_tp);
    g.cov.topRightCorner(n, n) = dense_matrix_function(ds, s_cross);
    g.cov.bottomLeftCorner(n, n) = g.cov.topRightCorner(n, n).transpose();
    return g;
}

DenseGaussian condition(const DenseGaussian& g, int obs_start, const VectorRef& value) {
    const int n = static_cast<int>(g.mean.size());
    const int m = static_cast<int>(value.size());
    if (obs_start < 0 || obs_start + m > n)
        throw std::invalid_argument("condition: observed block outside the vector");
    if (m == 0) return g;

    std::vector<int> rest;
    for (int i = 0; i < n; ++i)
        if (i < obs_start || i >= obs_start + m) rest.push_back(i);
    const int r = static_cast<int>(rest.size());

    Matrix syy = g.cov.block(obs_start, obs_start, m, m);
    auto [ev, _] = dense_eigensolve(syy);
    const Scalar lam_max = ev.cwiseAbs().maxCoeff();
    const Scalar lam_min = ev.cwiseAbs().minCoeff();
    if (lam_min <= 0.0 || lam_max / lam_min > 1e12) {
        syy += 1e-12 * Matrix::Identity(m, m);
        auto [ev2, _2] = dense_eigensolve(syy);
        const Scalar l2max = ev2.cwiseAbs().maxCoeff();
        const Scalar l2min = ev2.minCoeff();
        if (l2min <= 0.0 || l2max / l2min > 1e12)
            throw SingularCovarianceError("condition: observed block singular despite ridge");
    }
    const Eigen::LDLT<Matrix> solver(syy);

    Matrix sxy(r, m);
    Matrix sxx(r, r);
    Vector mux(r);
    for (int i = 0; i < r; ++i) {
        mux[i] = g.mean[rest[i]];
        for (int j = 0; j < m; ++j) sxy(i, j) = g.cov(rest[i], obs_start + j);
        for (int j = 0; j < r; ++j) sxx(i, j) = g.cov(rest[i], rest[j]);
    }

    const Vector innov = value - g.mean.segment(obs_start, m);
    const Vector cond_mean = mux + sxy * solver.solve(innov);
    const Matrix cond_cov = sxx - sxy * solver.solve(sxy.transpose());

    DenseGaussian out;
    out.mean = Vector::Zero(n);
    out.cov = Matrix::Zero(n, n);
    out.mean.segment(obs_start, m) = value;
    for (int i = 0; i < r; ++i) {
        out.mean[rest[i]] = cond_mean[i];
        for (int j = 0; j < r; ++j) out.cov(rest[i], rest[j]) = cond_cov(i, j);
    }
    return out;
}

}  // namespace tcbm::oracle
