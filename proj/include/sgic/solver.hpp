#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>

#include "errors.hpp"
#include "losses.hpp"
#include "model_space.hpp"
#include "param_point.hpp"

namespace sgic {

/// One accepted iteration of the proximal-gradient solver.
struct SolveTraceRow {
    double lambda;
    int iter;
    double objective;
    double kkt_residual;
    double step;
};

struct SolveOptions {
    int max_iter = 5000;
    double tol_kkt = 1e-7;
    double backtrack_factor = 0.5;
    /// Initial Lipschitz estimate; <= 0 means compute step_bound(L).
    double lipschitz = 0.0;
    /// Called once per accepted iterate when set.
    std::function<void(const SolveTraceRow &)> trace;

    void validate() const {
        if (max_iter < 1)
            throw std::invalid_argument("SolveOptions: max_iter must be >= 1");
        if (!(tol_kkt > 0))
            throw std::invalid_argument("SolveOptions: tol_kkt must be positive");
        if (!(backtrack_factor > 0 && backtrack_factor < 1))
            throw std::invalid_argument("SolveOptions: backtrack_factor must be in (0, 1)");
    }
};

struct SolveResult {
    ParamPoint theta;
    double objective = 0.0;
    double kkt = 0.0;
    int iterations = 0;
    /// false means `theta` is the best iterate after max_iter (NotConverged).
    bool converged = false;
};

namespace detail {

struct SmoothEval {
    double value;
    Vec grad;
};

inline SmoothEval smooth_eval(const LossProblem &L, const Vec &theta) {
    if (L.has_gram()) {
        Vec Gt = L.gram() * theta;
        const double value = 0.5 * theta.dot(Gt) - L.xty().dot(theta) + L.half_yty();
        Gt -= L.xty();
        return {value, std::move(Gt)};
    }
    return {L.value_flat(theta), L.grad_flat(theta)};
}

inline ParamPoint reshape_like(const ParamPoint &like, const Vec &flat) {
    return like.with_values(Eigen::Map<const Mat>(flat.data(), like.rows(), like.cols()));
}

/// Stationarity on the tangent space of the rank-r manifold at U S V^T:
/// ||lambda U V^T + P_T(G)||_F.
inline double nuclear_stationarity(const Mat &U, const Mat &V, const Mat &G, double lambda) {
    if (U.cols() == 0)
        return 0.0;
    const Mat UtG = U.transpose() * G;
    const Mat GV = G * V;
    // P_T(G) = U U^T G + G V V^T - U (U^T G V) V^T
    const Mat tangent = U * UtG + GV * V.transpose() - U * (UtG * V) * V.transpose();
    return (lambda * U * V.transpose() + tangent).norm();
}

/// Number of singular values treated as nonzero.
inline Index numerical_rank(const Vec &s) {
    const double smax = s.size() ? s(0) : 0.0;
    Index r = 0;
    while (r < s.size() && s(r) > 1e-12 * std::max(1.0, smax))
        ++r;
    return r;
}

/// Optimality residual given the gradient at theta.
inline double kkt_from_grad(const Regularizer &reg, double lambda, const ParamPoint &theta,
                            const ParamPoint &grad) {
    const double slack = std::max(0.0, phi_dual(reg, grad) - lambda);
    double stationarity = 0.0;
    if (reg.is_nuclear()) {
        const ThinSvd svd = thin_svd(theta.values());
        const Index r = numerical_rank(svd.s);
        stationarity =
            nuclear_stationarity(svd.U.leftCols(r), svd.V.leftCols(r), grad.values(), lambda);
    } else {
        const auto &part = *reg.partition();
        const auto x = theta.flat();
        const auto g = grad.flat();
        for (Index k = 0; k < part.count(); ++k) {
            const auto &idx = part.group(k);
            const double nrm = block_norm(x, idx);
            if (nrm == 0.0)
                continue;
            double s = 0.0;
            for (Index j : idx) {
                const double d = lambda * x(j) / nrm + g(j);
                s += d * d;
            }
            stationarity += std::sqrt(s);
        }
    }
    return slack + stationarity;
}

/// Proximal step result with Phi of the output; nuclear steps also keep the
/// nonzero singular factors of the output.
struct ProxStep {
    Vec z;
    double phi = 0.0;
    Mat U, V;
};

inline ProxStep prox_step(const Regularizer &reg, const ParamPoint &like, const Vec &u, double t) {
    ProxStep out;
    if (reg.is_nuclear()) {
        const ThinSvd svd =
            thin_svd(Eigen::Map<const Mat>(u.data(), like.rows(), like.cols()));
        const Vec shrunk = (svd.s.array() - t).max(0.0).matrix();
        Index r = 0;
        while (r < shrunk.size() && shrunk(r) > 0.0)
            ++r;
        out.U = svd.U.leftCols(r);
        out.V = svd.V.leftCols(r);
        const Mat z = out.U * shrunk.head(r).asDiagonal() * out.V.transpose();
        out.z = Eigen::Map<const Vec>(z.data(), z.size());
        out.phi = shrunk.sum();
        return out;
    }
    out.z = prox(reg, reshape_like(like, u), t).flat();
    out.phi = phi(reg, reshape_like(like, out.z));
    return out;
}

/// kkt_from_grad that reuses the factors of a proximal step output.
inline double kkt_at_prox(const Regularizer &reg, double lambda, const ParamPoint &like,
                          const ProxStep &step, const Vec &grad) {
    if (!reg.is_nuclear())
        return kkt_from_grad(reg, lambda, reshape_like(like, step.z), reshape_like(like, grad));
    const ParamPoint g = reshape_like(like, grad);
    const double slack = std::max(0.0, phi_dual(reg, g) - lambda);
    return slack + nuclear_stationarity(step.U, step.V, g.values(), lambda);
}

} // namespace detail

/// Optimality residual for min L(theta) + lambda Phi(theta):
/// max(0, Phi*(grad) - lambda) plus, over active blocks, the distance between
/// -grad and lambda times the block's subgradient direction. Zero iff optimal.
inline double kkt_residual(const LossProblem &L, const Regularizer &reg, double lambda,
                           const ParamPoint &theta) {
    if (!(lambda > 0))
        throw std::invalid_argument("kkt_residual: lambda must be positive");
    reg.require_compatible(theta);
    return detail::kkt_from_grad(reg, lambda, theta, loss_grad(L, theta));
}

/// FISTA with backtracking and function-value adaptive restart for
/// min L(theta) + lambda Phi(theta).
inline SolveResult solve_regularized(const LossProblem &L, const Regularizer &reg, double lambda,
                                     const ParamPoint &init, const SolveOptions &opts = {}) {
    if (!(lambda > 0))
        throw std::invalid_argument("solve_regularized: lambda must be positive");
    opts.validate();
    L.require_compatible(init);
    reg.require_compatible(init);

    double step = 1.0 / (opts.lipschitz > 0 ? opts.lipschitz : step_bound(L));
    Vec x = init.flat();
    detail::SmoothEval ex = detail::smooth_eval(L, x);
    double Fx = ex.value + lambda * phi(reg, init);
    double kkt = detail::kkt_from_grad(reg, lambda, init, detail::reshape_like(init, ex.grad));

    SolveResult best{init, Fx, kkt, 0, kkt <= opts.tol_kkt};
    if (best.converged)
        return best;

    Vec y = x;
    detail::SmoothEval ey = ex;
    double t = 1.0;
    bool momentum = false;
    for (int it = 1; it <= opts.max_iter; ++it) {
        detail::ProxStep ps;
        detail::SmoothEval ez;
        for (;;) {
            ps = detail::prox_step(reg, init, y - step * ey.grad, step * lambda);
            ez = detail::smooth_eval(L, ps.z);
            const Vec d = ps.z - y;
            const double model = ey.value + ey.grad.dot(d) + d.squaredNorm() / (2.0 * step);
            if (ez.value <= model + 1e-12 * (1.0 + std::abs(model)))
                break;
            step *= opts.backtrack_factor;
        }
        const double Fz = ez.value + lambda * ps.phi;
        if (Fz > Fx + 1e-12 * (1.0 + std::abs(Fx))) {
            if (momentum) {
                // restart from the last accepted iterate
                y = x;
                ey = ex;
                t = 1.0;
                momentum = false;
                continue;
            }
            // A plain proximal step cannot increase F beyond round-off; stop here.
            break;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double beta = (t - 1.0) / t_next;
        y = ps.z + beta * (ps.z - x);
        momentum = beta > 0.0;
        x = ps.z;
        ex = std::move(ez);
        Fx = Fz;
        t = t_next;
        ey = momentum ? detail::smooth_eval(L, y) : ex;

        kkt = detail::kkt_at_prox(reg, lambda, init, ps, ex.grad);
        if (opts.trace)
            opts.trace({lambda, it, Fz, kkt, step});
        best = {detail::reshape_like(init, x), Fz, kkt, it, kkt <= opts.tol_kkt};
        if (best.converged)
            return best;
    }
    return best;
}

/// Same as solve_regularized, but throws NotConverged instead of flagging.
inline ParamPoint solve_regularized_or_throw(const LossProblem &L, const Regularizer &reg,
                                             double lambda, const ParamPoint &init,
                                             const SolveOptions &opts = {}) {
    SolveResult r = solve_regularized(L, reg, lambda, init, opts);
    if (!r.converged)
        throw NotConverged("solve_regularized", r.kkt);
    return r.theta;
}

// ---------------------------------------------------------------------------
// Restricted fits

struct RestrictedFit {
    ParamPoint theta;
    double loss = 0.0;
    /// The restricted normal system was rank deficient; theta is the
    /// minimum-norm solution (SingularFit).
    bool singular = false;
    /// false when the logistic Newton iteration hit its cap (NotConverged).
    bool converged = true;
};

namespace detail {

inline Mat select_columns(const Mat &X, const std::vector<Index> &cols) {
    Mat out(X.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k)
        out.col(static_cast<Index>(k)) = X.col(cols[k]);
    return out;
}

/// Least squares on the columns of Z, minimum-norm when rank deficient.
inline Vec least_squares(const Mat &Z, const Vec &y, bool &singular) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(Z);
    singular = cod.rank() < Z.cols();
    return cod.solve(y);
}

/// Gaussian fit on coordinates `cols`, using the cached Gram when present.
inline Vec gaussian_fit(const LossProblem &L, const std::vector<Index> &cols, bool &singular) {
    const Index k = static_cast<Index>(cols.size());
    if (L.has_gram()) {
        Mat G(k, k);
        Vec b(k);
        for (Index a = 0; a < k; ++a) {
            b(a) = L.xty()(cols[a]);
            for (Index c = 0; c < k; ++c)
                G(a, c) = L.gram()(cols[a], cols[c]);
        }
        Eigen::LDLT<Mat> ldlt(G);
        if (ldlt.info() == Eigen::Success) {
            const Vec D = ldlt.vectorD();
            const double dmax = D.cwiseAbs().maxCoeff();
            if (D.minCoeff() > 1e-10 * dmax) {
                singular = false;
                return ldlt.solve(b);
            }
        }
    }
    return least_squares(select_columns(L.design(), cols), L.response(), singular);
}

/// Damped Newton for the logistic loss on columns `cols`.
inline Vec logistic_fit(const LossProblem &L, const std::vector<Index> &cols, bool &singular,
                        bool &converged) {
    const Mat Z = select_columns(L.design(), cols);
    const Vec &y = L.response();
    const double n = static_cast<double>(L.n());
    const Index k = Z.cols();
    auto value = [&](const Vec &b) {
        const Vec eta = Z * b;
        double s = 0;
        for (Index i = 0; i < eta.size(); ++i)
            s += LossProblem::softplus(eta(i)) - y(i) * eta(i);
        return s / n;
    };
    auto gradient = [&](const Vec &b) {
        Vec r = Z * b;
        for (Index i = 0; i < r.size(); ++i)
            r(i) = LossProblem::sigmoid(r(i)) - y(i);
        return Vec(Z.transpose() * r / n);
    };
    Vec beta = Vec::Zero(k);
    singular = false;
    converged = false;
    double f = value(beta);
    for (int it = 0; it < 100; ++it) {
        const Vec g = gradient(beta);
        if (g.norm() <= 1e-8) {
            converged = true;
            break;
        }
        Vec w = Z * beta;
        for (Index i = 0; i < w.size(); ++i) {
            const double s = LossProblem::sigmoid(w(i));
            w(i) = s * (1.0 - s);
        }
        const Mat H = Z.transpose() * w.asDiagonal() * Z / n;
        Eigen::LDLT<Mat> ldlt(H);
        Vec dir;
        const Vec D = ldlt.vectorD();
        if (ldlt.info() == Eigen::Success && D.minCoeff() > 1e-12 * std::max(1e-300, D.maxCoeff())) {
            dir = -ldlt.solve(g);
        } else {
            singular = true;
            dir = -4.0 * g; // gradient step with the 1/4 curvature bound
        }
        double s = 1.0;
        Vec next = beta + dir;
        double fn = value(next);
        while (fn > f + 1e-4 * s * g.dot(dir) && s > 1e-10) {
            s *= 0.5;
            next = beta + s * dir;
            fn = value(next);
        }
        if (fn > f)
            break;
        beta = std::move(next);
        f = fn;
    }
    if (!converged && gradient(beta).norm() <= 1e-8)
        converged = true;
    return beta;
}

} // namespace detail

/// argmin over theta in M of L(theta).
/// Group supports: unpenalized fit on the selected columns (normal equations
/// or damped Newton). Low-rank M(U, V): Theta = U A V^T with A solved exactly.
inline RestrictedFit restricted_fit(const LossProblem &L, const ModelSubspace &M,
                                    const SolveOptions & = {}) {
    const ParamPoint zero = L.zero();
    M.require_compatible(zero);
    RestrictedFit out{zero, 0.0, false, true};
    if (M.is_zero()) {
        out.loss = loss_value(L, zero);
        return out;
    }
    if (M.is_group()) {
        const std::vector<Index> cols = M.active_coordinates();
        const Vec beta = L.family() == Family::Gaussian
                             ? detail::gaussian_fit(L, cols, out.singular)
                             : detail::logistic_fit(L, cols, out.singular, out.converged);
        Vec full = Vec::Zero(L.dim());
        for (std::size_t k = 0; k < cols.size(); ++k)
            full(cols[k]) = beta(static_cast<Index>(k));
        out.theta = ParamPoint::vector(std::move(full));
    } else {
        const auto &lr = M.low_rank();
        const Index r = lr.rank(), p1 = lr.U.rows(), p2 = lr.V.rows();
        // vec(U A V^T) = (V kron U) vec(A)
        Mat K(p1 * p2, r * r);
        for (Index b = 0; b < r; ++b)
            for (Index a = 0; a < r; ++a)
                K.col(b * r + a) = Eigen::Map<const Vec>(
                    Mat(lr.U.col(a) * lr.V.col(b).transpose()).data(), p1 * p2);
        const Mat Z = L.design() * K;
        const Vec avec = detail::least_squares(Z, L.response(), out.singular);
        const Mat A = Eigen::Map<const Mat>(avec.data(), r, r);
        out.theta = ParamPoint::matrix(lr.U * A * lr.V.transpose());
    }
    out.loss = loss_value(L, out.theta);
    return out;
}

} // namespace sgic
