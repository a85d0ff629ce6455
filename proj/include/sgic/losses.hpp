#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <variant>

#include "errors.hpp"
#include "model_space.hpp"
#include "param_point.hpp"
#include "random.hpp"

namespace sgic {

enum class Family { Gaussian, Logistic };

inline const char *family_name(Family f) { return f == Family::Gaussian ? "gaussian" : "logistic"; }

/// n x p design with responses.
struct TabularData {
    Mat X;
    Vec y;
    Family family = Family::Gaussian;
};

/// Trace regression y_i = <X_i, Theta> + w_i. Row i of `design` holds X_i
/// flattened column-major, so design * vec(Theta) = observation operator.
struct MatrixRegData {
    Index p1 = 0;
    Index p2 = 0;
    Mat design;
    Vec y;

    Mat covariate(Index i) const {
        const Vec row = design.row(i).transpose();
        return Eigen::Map<const Mat>(row.data(), p1, p2);
    }
};

using Dataset = std::variant<TabularData, MatrixRegData>;

inline Index sample_count(const Dataset &d) {
    return std::visit([](const auto &x) { return static_cast<Index>(x.y.size()); }, d);
}

/// Validates n >= 1, finiteness, matching dimensions and {0,1} responses for
/// the logistic family.
inline void validate(const Dataset &data) {
    std::visit(
        [](const auto &d) {
            using T = std::decay_t<decltype(d)>;
            const Mat &X = [&]() -> const Mat & {
                if constexpr (std::is_same_v<T, TabularData>)
                    return d.X;
                else
                    return d.design;
            }();
            if (d.y.size() < 1)
                throw InvalidShape("dataset needs at least one observation");
            if (X.rows() != d.y.size())
                throw InvalidShape("design has " + std::to_string(X.rows()) +
                                   " rows but y has " + std::to_string(d.y.size()));
            if (!X.allFinite() || !d.y.allFinite())
                throw std::invalid_argument("dataset entries must be finite");
            if constexpr (std::is_same_v<T, TabularData>) {
                if (d.family == Family::Logistic)
                    for (Index i = 0; i < d.y.size(); ++i)
                        if (d.y(i) != 0.0 && d.y(i) != 1.0)
                            throw std::invalid_argument("logistic responses must be 0 or 1");
            } else {
                if (d.p1 < 1 || d.p2 < 1 || X.cols() != d.p1 * d.p2)
                    throw InvalidShape("matrix regression covariates must be p1 x p2");
            }
        },
        data);
}

/// Convex empirical loss: 1/(2n)||y - X theta||^2 for squared losses,
/// 1/n sum [log(1 + e^{<x_i,theta>}) - y_i <x_i,theta>] for the logistic GLM.
class LossProblem {
  public:
    explicit LossProblem(Dataset data) : data_(std::make_shared<const Dataset>(std::move(data))) {
        validate(*data_);
        if (const auto *t = std::get_if<TabularData>(data_.get())) {
            family_ = t->family;
            X_ = &t->X;
        } else {
            const auto &m = std::get<MatrixRegData>(*data_);
            family_ = Family::Gaussian;
            X_ = &m.design;
        }
        y_ = &std::visit([](const auto &d) -> const Vec & { return d.y; }, *data_);
        if (family_ == Family::Gaussian && dim() <= kMaxGramDim) {
            const double nn = static_cast<double>(n());
            auto gram = std::make_shared<Mat>(Mat::Zero(dim(), dim()));
            gram->selfadjointView<Eigen::Lower>().rankUpdate(X_->transpose(), 1.0 / nn);
            *gram = gram->selfadjointView<Eigen::Lower>();
            gram_ = std::move(gram);
            xty_ = std::make_shared<const Vec>(X_->transpose() * (*y_) / nn);
            yty_ = 0.5 * y_->squaredNorm() / nn;
        }
    }

    /// Squared losses with at most this many parameters cache X^T X / n.
    static constexpr Index kMaxGramDim = 2000;

    const Dataset &data() const { return *data_; }
    bool is_matrix() const { return std::holds_alternative<MatrixRegData>(*data_); }
    Family family() const { return family_; }
    Index n() const { return X_->rows(); }
    Index dim() const { return X_->cols(); }
    /// Design with one row per observation over vec(theta).
    const Mat &design() const { return *X_; }
    const Vec &response() const { return *y_; }

    ParamPoint zero() const {
        if (is_matrix()) {
            const auto &m = std::get<MatrixRegData>(*data_);
            return ParamPoint::zeros(m.p1, m.p2);
        }
        return ParamPoint::zeros(dim());
    }

    void require_compatible(const ParamPoint &theta) const {
        const ParamPoint z = zero();
        if (!z.same_shape(theta))
            throw InvalidShape("parameter " + theta.shape_string() + " does not match data " +
                               z.shape_string());
    }

    /// X^T X / n, X^T y / n and y^T y / (2n) when cached (squared losses only).
    bool has_gram() const { return gram_ != nullptr; }
    const Mat &gram() const { return *gram_; }
    const Vec &xty() const { return *xty_; }
    double half_yty() const { return yty_; }

    /// Loss at a flattened parameter; no shape checks.
    double value_flat(const Eigen::Ref<const Vec> &theta) const {
        const Vec eta = (*X_) * theta;
        const double n = static_cast<double>(this->n());
        if (family_ == Family::Gaussian)
            return 0.5 * (*y_ - eta).squaredNorm() / n;
        double s = 0.0;
        for (Index i = 0; i < eta.size(); ++i)
            s += softplus(eta(i)) - (*y_)(i) * eta(i);
        return s / n;
    }

    /// Gradient at a flattened parameter; no shape checks.
    Vec grad_flat(const Eigen::Ref<const Vec> &theta) const {
        Vec r = (*X_) * theta;
        if (family_ == Family::Gaussian) {
            r -= *y_;
        } else {
            for (Index i = 0; i < r.size(); ++i)
                r(i) = sigmoid(r(i)) - (*y_)(i);
        }
        return X_->transpose() * r / static_cast<double>(n());
    }

    /// Curvature weights sigma'(eta_i) for the logistic family; ones otherwise.
    Vec hessian_weights(const Eigen::Ref<const Vec> &theta) const {
        if (family_ == Family::Gaussian)
            return Vec::Ones(n());
        Vec eta = (*X_) * theta;
        for (Index i = 0; i < eta.size(); ++i) {
            const double s = sigmoid(eta(i));
            eta(i) = s * (1.0 - s);
        }
        return eta;
    }

    static double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
    static double sigmoid(double z) {
        if (z >= 0)
            return 1.0 / (1.0 + std::exp(-z));
        const double e = std::exp(z);
        return e / (1.0 + e);
    }

  private:
    std::shared_ptr<const Dataset> data_;
    std::shared_ptr<const Mat> gram_;
    std::shared_ptr<const Vec> xty_;
    double yty_ = 0.0;
    const Mat *X_ = nullptr;
    const Vec *y_ = nullptr;
    Family family_ = Family::Gaussian;
};

inline double loss_value(const LossProblem &L, const ParamPoint &theta) {
    L.require_compatible(theta);
    return L.value_flat(theta.flat());
}

inline ParamPoint loss_grad(const LossProblem &L, const ParamPoint &theta) {
    L.require_compatible(theta);
    const Vec g = L.grad_flat(theta.flat());
    return theta.with_values(Eigen::Map<const Mat>(g.data(), theta.rows(), theta.cols()));
}

/// Largest eigenvalue of the symmetric PSD operator `apply` on R^dim by power
/// iteration, stopping when the Rayleigh quotient changes by <= rel_tol.
template <class Apply>
double power_iteration(Index dim, Apply &&apply, double rel_tol = 1e-10, int max_iter = 20000) {
    Vec v = Vec::LinSpaced(dim, 1.0, 2.0);
    v.normalize();
    double value = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vec w = apply(v);
        const double next = v.dot(w);
        const double nrm = w.norm();
        if (nrm == 0.0)
            return 0.0;
        v = w / nrm;
        const bool done = it > 0 && std::abs(next - value) <= rel_tol * std::abs(next);
        value = next;
        if (done)
            break;
    }
    return value;
}

/// Largest eigenvalue of X^T X / n.
inline double design_lambda_max(const Mat &X) {
    const double n = static_cast<double>(X.rows());
    return power_iteration(X.cols(), [&](const Vec &v) { return Vec(X.transpose() * (X * v) / n); });
}

/// Upper bound on the Lipschitz constant of the loss gradient:
/// lambda_max(X^T X)/n, divided by 4 for the logistic family. The power
/// iteration estimate is inflated by 1e-6 relative so it bounds from above.
inline double step_bound(const LossProblem &L) {
    double lmax = L.has_gram()
                      ? power_iteration(L.dim(), [&](const Vec &v) { return Vec(L.gram() * v); })
                      : design_lambda_max(L.design());
    lmax *= 1.0 + 1e-6;
    if (L.family() == Family::Logistic)
        lmax *= 0.25;
    return std::max(lmax, 1e-300);
}

/// Fraction of `trials` random perturbations with ||Delta|| <= eta that violate
/// L(theta*+D) - L(theta*) - <grad L(theta*), D> >= kappa ||D||^2 - tau_sq Phi(D)^2
/// by more than 1e-10.
inline double rsc_probe(const LossProblem &L, const ParamPoint &theta_star, const Regularizer &reg,
                        double kappa, double tau_sq, double eta, int trials,
                        std::uint64_t seed = 1) {
    L.require_compatible(theta_star);
    if (!(kappa > 0) || !(tau_sq >= 0) || !(eta > 0) || trials < 1)
        throw std::invalid_argument("rsc_probe: need kappa > 0, tau_sq >= 0, eta > 0, trials >= 1");
    Rng rng(seed);
    const double base = loss_value(L, theta_star);
    const ParamPoint grad = loss_grad(L, theta_star);
    int violations = 0;
    for (int t = 0; t < trials; ++t) {
        Mat dir = rng.normal_matrix(theta_star.rows(), theta_star.cols());
        const double nrm = dir.norm();
        const double radius = eta * rng.uniform();
        if (nrm > 0)
            dir *= radius / nrm;
        const ParamPoint delta = theta_star.with_values(std::move(dir));
        const double lhs = loss_value(L, theta_star + delta) - base - grad.dot(delta);
        const double ph = phi(reg, delta);
        const double rhs = kappa * delta.dot(delta) - tau_sq * ph * ph;
        if (lhs < rhs - 1e-10)
            ++violations;
    }
    return static_cast<double>(violations) / trials;
}

} // namespace sgic
