#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "param_point.hpp"

namespace sgic {

/// Disjoint index sets g_1..g_G covering {0..p-1}.
class GroupPartition {
  public:
    static GroupPartition from_groups(std::vector<std::vector<Index>> groups) {
        GroupPartition out;
        Index p = 0;
        for (const auto &g : groups) {
            if (g.empty())
                throw std::invalid_argument("GroupPartition: empty group");
            p += static_cast<Index>(g.size());
        }
        std::vector<char> seen(static_cast<std::size_t>(p), 0);
        for (auto &g : groups) {
            std::sort(g.begin(), g.end());
            for (Index j : g) {
                if (j < 0 || j >= p || seen[static_cast<std::size_t>(j)])
                    throw std::invalid_argument(
                        "GroupPartition: groups must be disjoint and cover 0..p-1");
                seen[static_cast<std::size_t>(j)] = 1;
            }
        }
        out.groups_ = std::move(groups);
        out.dim_ = p;
        return out;
    }

    /// Consecutive blocks of size m; the last block is shorter when m does not divide p.
    static GroupPartition contiguous(Index p, Index m) {
        if (p < 1 || m < 1)
            throw std::invalid_argument("GroupPartition::contiguous: p, m must be >= 1");
        std::vector<std::vector<Index>> groups;
        for (Index start = 0; start < p; start += m) {
            std::vector<Index> g;
            for (Index j = start; j < std::min(p, start + m); ++j)
                g.push_back(j);
            groups.push_back(std::move(g));
        }
        return from_groups(std::move(groups));
    }

    static GroupPartition singletons(Index p) { return contiguous(p, 1); }

    Index dim() const { return dim_; }
    Index count() const { return static_cast<Index>(groups_.size()); }
    Index max_size() const {
        std::size_t m = 0;
        for (const auto &g : groups_)
            m = std::max(m, g.size());
        return static_cast<Index>(m);
    }
    const std::vector<Index> &group(Index g) const {
        return groups_[static_cast<std::size_t>(g)];
    }
    const std::vector<std::vector<Index>> &groups() const { return groups_; }

    bool operator==(const GroupPartition &) const = default;

  private:
    std::vector<std::vector<Index>> groups_;
    Index dim_ = 0;
};

using PartitionPtr = std::shared_ptr<const GroupPartition>;

inline PartitionPtr make_partition(GroupPartition p) {
    return std::make_shared<const GroupPartition>(std::move(p));
}

namespace detail {

template <class Derived>
double block_norm(const Eigen::MatrixBase<Derived> &x, const std::vector<Index> &idx) {
    double s = 0;
    for (Index j : idx)
        s += x(j) * x(j);
    return std::sqrt(s);
}

} // namespace detail

/// Thin SVD with a deterministic sign convention: the first entry of each
/// left singular vector whose magnitude exceeds 1e-12 is positive.
struct ThinSvd {
    Mat U;
    Vec s;
    Mat V;
};

inline ThinSvd thin_svd(const Mat &a) {
    Eigen::BDCSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    ThinSvd out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
    for (Index k = 0; k < out.U.cols(); ++k) {
        for (Index i = 0; i < out.U.rows(); ++i) {
            if (std::abs(out.U(i, k)) > 1e-12) {
                if (out.U(i, k) < 0) {
                    out.U.col(k) *= -1.0;
                    out.V.col(k) *= -1.0;
                }
                break;
            }
        }
    }
    return out;
}

/// Largest sin of the principal angles between span(a) and span(b), both
/// with orthonormal columns of equal count.
inline double max_principal_angle_sin(const Mat &a, const Mat &b) {
    if (a.cols() == 0 && b.cols() == 0)
        return 0.0;
    const Mat resid = b - a * (a.transpose() * b);
    if (resid.size() == 0)
        return 0.0;
    return Eigen::JacobiSVD<Mat>(resid).singularValues()(0);
}

// ---------------------------------------------------------------------------
// Model subspaces

struct GroupSupport {
    PartitionPtr partition;
    std::vector<Index> S; ///< sorted, unique group indices
};

/// M(U, V) = {Theta : col(Theta) in span U, row(Theta) in span V}.
struct LowRank {
    Mat U;
    Mat V;
    Index rank() const { return U.cols(); }
};

class ModelSubspace {
  public:
    static constexpr double kOrthoTol = 1e-10;

    static ModelSubspace group(PartitionPtr partition, std::vector<Index> S) {
        std::sort(S.begin(), S.end());
        S.erase(std::unique(S.begin(), S.end()), S.end());
        for (Index g : S)
            if (g < 0 || g >= partition->count())
                throw std::invalid_argument("ModelSubspace: group index out of range");
        return ModelSubspace(GroupSupport{std::move(partition), std::move(S)});
    }

    static ModelSubspace low_rank(Mat U, Mat V) {
        if (U.cols() != V.cols())
            throw InvalidShape("ModelSubspace: U and V must have the same rank");
        if (U.cols() > std::min(U.rows(), V.rows()))
            throw InvalidShape("ModelSubspace: rank exceeds min(p1, p2)");
        const Index r = U.cols();
        if (r > 0) {
            const Mat I = Mat::Identity(r, r);
            if ((U.transpose() * U - I).cwiseAbs().maxCoeff() > kOrthoTol ||
                (V.transpose() * V - I).cwiseAbs().maxCoeff() > kOrthoTol)
                throw std::invalid_argument("ModelSubspace: U, V must be orthonormal");
        }
        return ModelSubspace(LowRank{std::move(U), std::move(V)});
    }

    static ModelSubspace zero_rank(Index p1, Index p2) {
        return low_rank(Mat(p1, 0), Mat(p2, 0));
    }

    bool is_group() const { return std::holds_alternative<GroupSupport>(v_); }
    bool is_low_rank() const { return std::holds_alternative<LowRank>(v_); }
    const GroupSupport &group_support() const { return std::get<GroupSupport>(v_); }
    const LowRank &low_rank() const { return std::get<LowRank>(v_); }

    /// |S| or r.
    Index size() const {
        return is_group() ? static_cast<Index>(group_support().S.size()) : low_rank().rank();
    }

    bool is_zero() const { return size() == 0; }

    /// Coordinates covered by the support, in increasing order.
    std::vector<Index> active_coordinates() const {
        const auto &gs = group_support();
        std::vector<Index> cols;
        for (Index g : gs.S)
            for (Index j : gs.partition->group(g))
                cols.push_back(j);
        std::sort(cols.begin(), cols.end());
        return cols;
    }

    void require_compatible(const ParamPoint &u) const {
        if (is_group()) {
            if (u.is_matrix() || u.rows() != group_support().partition->dim())
                throw InvalidShape("group subspace on " + std::to_string(
                                       group_support().partition->dim()) +
                                   " coordinates vs " + u.shape_string());
        } else {
            const auto &lr = low_rank();
            if (!u.is_matrix() || u.rows() != lr.U.rows() || u.cols() != lr.V.rows())
                throw InvalidShape("low-rank subspace " + std::to_string(lr.U.rows()) + "x" +
                                   std::to_string(lr.V.rows()) + " vs " + u.shape_string());
        }
    }

    /// Subspace equality. Group supports compare exactly; low-rank subspaces
    /// compare by rank and by the largest principal angle of both U and V.
    bool same_as(const ModelSubspace &other, double angle_tol = 1e-6) const {
        if (is_group() != other.is_group())
            return false;
        if (is_group())
            return group_support().S == other.group_support().S;
        const auto &a = low_rank();
        const auto &b = other.low_rank();
        if (a.rank() != b.rank() || a.U.rows() != b.U.rows() || a.V.rows() != b.V.rows())
            return false;
        return max_principal_angle_sin(a.U, b.U) <= angle_tol &&
               max_principal_angle_sin(a.V, b.V) <= angle_tol;
    }

  private:
    explicit ModelSubspace(std::variant<GroupSupport, LowRank> v) : v_(std::move(v)) {}
    std::variant<GroupSupport, LowRank> v_;
};

/// Psi^2(M): |S| for group supports, r for low-rank subspaces.
inline double psi_sq(const ModelSubspace &M) { return static_cast<double>(M.size()); }

/// Euclidean projection onto M.
inline ParamPoint project(const ParamPoint &u, const ModelSubspace &M) {
    M.require_compatible(u);
    if (M.is_group()) {
        Mat out = Mat::Zero(u.rows(), 1);
        for (Index j : M.active_coordinates())
            out(j, 0) = u.values()(j, 0);
        return u.with_values(std::move(out));
    }
    const auto &lr = M.low_rank();
    return u.with_values(lr.U * (lr.U.transpose() * u.values() * lr.V) * lr.V.transpose());
}

/// Euclidean projection onto the paired complement M-bar-perp.
inline ParamPoint project_complement(const ParamPoint &u, const ModelSubspace &M) {
    M.require_compatible(u);
    if (M.is_group()) {
        Mat out = u.values();
        for (Index j : M.active_coordinates())
            out(j, 0) = 0.0;
        return u.with_values(std::move(out));
    }
    const auto &lr = M.low_rank();
    const Mat left = u.values() - lr.U * (lr.U.transpose() * u.values());
    return u.with_values(left - (left * lr.V) * lr.V.transpose());
}

// ---------------------------------------------------------------------------
// Decomposable regularizers

class Regularizer {
  public:
    enum class Kind { GroupL2, ElementwiseL1, Nuclear };

    static Regularizer group_l2(PartitionPtr partition) {
        return Regularizer(Kind::GroupL2, std::move(partition));
    }
    /// L1 is the group norm over singleton groups.
    static Regularizer l1(Index p) {
        return Regularizer(Kind::ElementwiseL1, make_partition(GroupPartition::singletons(p)));
    }
    static Regularizer nuclear() { return Regularizer(Kind::Nuclear, nullptr); }

    Kind kind() const { return kind_; }
    bool is_nuclear() const { return kind_ == Kind::Nuclear; }
    const PartitionPtr &partition() const { return partition_; }

    std::string name() const {
        switch (kind_) {
        case Kind::GroupL2: return "group";
        case Kind::ElementwiseL1: return "l1";
        case Kind::Nuclear: return "nuclear";
        }
        return "";
    }

    void require_compatible(const ParamPoint &u) const {
        if (is_nuclear()) {
            if (!u.is_matrix())
                throw InvalidShape("nuclear norm needs a matrix, got " + u.shape_string());
        } else if (u.is_matrix() || u.rows() != partition_->dim()) {
            throw InvalidShape(name() + " norm over " + std::to_string(partition_->dim()) +
                               " coordinates vs " + u.shape_string());
        }
    }

  private:
    Regularizer(Kind k, PartitionPtr p) : kind_(k), partition_(std::move(p)) {}
    Kind kind_;
    PartitionPtr partition_;
};

/// Per-group Euclidean norms of a vector.
inline Vec group_norms(const Regularizer &reg, const ParamPoint &u) {
    reg.require_compatible(u);
    const auto &part = *reg.partition();
    Vec out(part.count());
    const auto x = u.flat();
    for (Index g = 0; g < part.count(); ++g)
        out(g) = detail::block_norm(x, part.group(g));
    return out;
}

inline Vec singular_values(const ParamPoint &u) {
    return Eigen::BDCSVD<Mat>(u.values()).singularValues();
}

/// Largest singular value, from the top eigenvalue of the smaller Gram matrix.
inline double operator_norm(const Mat &a) {
    if (a.size() == 0)
        return 0.0;
    const Mat gram = a.rows() <= a.cols() ? Mat(a * a.transpose()) : Mat(a.transpose() * a);
    Eigen::SelfAdjointEigenSolver<Mat> eig(gram, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, eig.eigenvalues()(eig.eigenvalues().size() - 1)));
}

/// Phi(u): sum of group norms, or sum of singular values.
inline double phi(const Regularizer &reg, const ParamPoint &u) {
    reg.require_compatible(u);
    if (reg.is_nuclear())
        return singular_values(u).sum();
    return group_norms(reg, u).sum();
}

/// Dual norm Phi*(v): max group norm, or the operator norm.
inline double phi_dual(const Regularizer &reg, const ParamPoint &v) {
    reg.require_compatible(v);
    if (reg.is_nuclear())
        return operator_norm(v.values());
    const Vec n = group_norms(reg, v);
    return n.size() ? n.maxCoeff() : 0.0;
}

/// argmin_theta 1/2 ||theta - u||^2 + t Phi(theta).
inline ParamPoint prox(const Regularizer &reg, const ParamPoint &u, double t) {
    reg.require_compatible(u);
    if (!(t > 0))
        throw std::invalid_argument("prox: t must be positive");
    if (reg.is_nuclear()) {
        const ThinSvd svd = thin_svd(u.values());
        const Vec shrunk = (svd.s.array() - t).max(0.0).matrix();
        return u.with_values(svd.U * shrunk.asDiagonal() * svd.V.transpose());
    }
    const auto &part = *reg.partition();
    Mat out = u.values();
    for (Index g = 0; g < part.count(); ++g) {
        const auto &idx = part.group(g);
        const double nrm = detail::block_norm(out.col(0), idx);
        const double scale = nrm > t ? 1.0 - t / nrm : 0.0;
        for (Index j : idx)
            out(j, 0) *= scale;
    }
    return u.with_values(std::move(out));
}

/// Checks Phi(theta + gamma) = Phi(theta) + Phi(gamma) after projecting theta
/// onto M and gamma onto M-bar-perp.
inline bool decompose_check(const Regularizer &reg, const ModelSubspace &M,
                            const ParamPoint &theta, const ParamPoint &gamma) {
    const ParamPoint a = project(theta, M);
    const ParamPoint b = project_complement(gamma, M);
    const double pa = phi(reg, a), pb = phi(reg, b);
    return std::abs(phi(reg, a + b) - pa - pb) <= 1e-9 * (1.0 + pa + pb);
}

/// A point of M at which Phi(u)/||u|| = sqrt(psi_sq(M)): unit mass on every
/// selected group, or U V^T.
inline ParamPoint compatibility_witness(const ModelSubspace &M) {
    if (M.is_group()) {
        const auto &gs = M.group_support();
        Vec u = Vec::Zero(gs.partition->dim());
        for (Index g : gs.S) {
            const auto &idx = gs.partition->group(g);
            for (Index j : idx)
                u(j) = 1.0 / std::sqrt(static_cast<double>(idx.size()));
        }
        return ParamPoint::vector(std::move(u));
    }
    const auto &lr = M.low_rank();
    return ParamPoint::matrix(lr.U * lr.V.transpose());
}

} // namespace sgic
