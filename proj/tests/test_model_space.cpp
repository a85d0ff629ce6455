#include <gtest/gtest.h>

#include "support.hpp"

using namespace sgic;
using sgic::testing::random_basis;

namespace {

PartitionPtr pairs4() { return make_partition(GroupPartition::from_groups({{0, 1}, {2, 3}})); }

ParamPoint vec(std::initializer_list<double> xs) {
    Vec v(static_cast<Index>(xs.size()));
    Index i = 0;
    for (double x : xs)
        v(i++) = x;
    return ParamPoint::vector(v);
}

} // namespace

TEST(GroupPartition, RejectsOverlapAndGaps) {
    EXPECT_THROW(GroupPartition::from_groups({{0, 1}, {1, 2}}), std::invalid_argument);
    EXPECT_THROW(GroupPartition::from_groups({{0, 2}}), std::invalid_argument);
    EXPECT_THROW(GroupPartition::from_groups({{0}, {}}), std::invalid_argument);
    const auto p = GroupPartition::from_groups({{2, 0}, {1}});
    EXPECT_EQ(p.dim(), 3);
    EXPECT_EQ(p.count(), 2);
    EXPECT_EQ(p.max_size(), 2);
    EXPECT_EQ(p.group(0), (std::vector<Index>{0, 2}));
}

TEST(GroupPartition, ContiguousShortLastBlock) {
    const auto p = GroupPartition::contiguous(7, 3);
    EXPECT_EQ(p.count(), 3);
    EXPECT_EQ(p.group(2), (std::vector<Index>{6}));
}

TEST(ParamPoint, RejectsNonFinite) {
    Vec v(2);
    v << 1.0, std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(ParamPoint::vector(v), std::invalid_argument);
    Mat m = Mat::Zero(2, 2);
    m(1, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(ParamPoint::matrix(m), std::invalid_argument);
}

TEST(ParamPoint, TraceInnerProduct) {
    Mat a(2, 2), b(2, 2);
    a << 1, 2, 3, 4;
    b << 5, 6, 7, 8;
    const auto pa = ParamPoint::matrix(a), pb = ParamPoint::matrix(b);
    EXPECT_DOUBLE_EQ(pa.dot(pb), (a.transpose() * b).trace());
    EXPECT_DOUBLE_EQ(pa.norm(), std::sqrt(30.0));
    EXPECT_THROW(pa.dot(ParamPoint::zeros(4)), InvalidShape);
}

TEST(Phi, WorkedValues) {
    const auto reg = Regularizer::group_l2(pairs4());
    EXPECT_DOUBLE_EQ(phi(reg, vec({3, 4, 0, 0})), 5.0);
    EXPECT_DOUBLE_EQ(phi(reg, ParamPoint::zeros(4)), 0.0);
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 3;
    d(1, 1) = 4;
    EXPECT_NEAR(phi(Regularizer::nuclear(), ParamPoint::matrix(d)), 7.0, 1e-14);
    EXPECT_DOUBLE_EQ(phi(Regularizer::l1(3), vec({1, -2, 3})), 6.0);
}

TEST(Phi, ShapeMismatch) {
    EXPECT_THROW(phi(Regularizer::group_l2(pairs4()), ParamPoint::zeros(3)), InvalidShape);
    EXPECT_THROW(phi(Regularizer::nuclear(), ParamPoint::zeros(3)), InvalidShape);
    EXPECT_THROW(phi(Regularizer::l1(2), ParamPoint::zeros(2, 1)), InvalidShape);
}

TEST(PhiDual, WorkedValues) {
    const auto reg = Regularizer::group_l2(pairs4());
    EXPECT_DOUBLE_EQ(phi_dual(reg, vec({3, 4, 1, 1})), 5.0);
    Mat d = Mat::Zero(2, 3);
    d(0, 0) = 3;
    d(1, 1) = 4;
    EXPECT_NEAR(phi_dual(Regularizer::nuclear(), ParamPoint::matrix(d)), 4.0, 1e-12);
}

// The dual norm is the support function of the unit ball: <v,u> <= Phi*(v) Phi(u)
// for every u, with equality at an explicit maximizer.
TEST(PhiDual, SupportFunctionOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto part = sgic::testing::random_partition(rng, 12, 4);
        const auto reg = Regularizer::group_l2(part);
        const ParamPoint v = ParamPoint::vector(rng.normal_vector(12));
        const double dual = phi_dual(reg, v);
        for (int k = 0; k < 20; ++k) {
            const ParamPoint u = ParamPoint::vector(rng.normal_vector(12));
            EXPECT_LE(v.dot(u), dual * phi(reg, u) * (1 + 1e-12));
        }
        // maximizer: v restricted to the largest group, normalized
        const Vec norms = group_norms(reg, v);
        Index gmax = 0;
        norms.maxCoeff(&gmax);
        Vec u = Vec::Zero(12);
        for (Index j : part->group(gmax))
            u(j) = v.values()(j, 0) / norms(gmax);
        EXPECT_NEAR(v.dot(ParamPoint::vector(u)), dual, 1e-12);

        const Mat m = rng.normal_matrix(5, 3);
        const double op = Eigen::JacobiSVD<Mat>(m).singularValues()(0);
        EXPECT_NEAR(phi_dual(Regularizer::nuclear(), ParamPoint::matrix(m)), op, 1e-12 * op);
    }
}

TEST(ModelSubspace, LowRankValidation) {
    Rng rng(5);
    const Mat U = random_basis(rng, 5, 2), V = random_basis(rng, 4, 2);
    EXPECT_NO_THROW(ModelSubspace::low_rank(U, V));
    EXPECT_THROW(ModelSubspace::low_rank(2.0 * U, V), std::invalid_argument);
    EXPECT_THROW(ModelSubspace::low_rank(U, V.leftCols(1)), InvalidShape);
    const auto z = ModelSubspace::zero_rank(5, 4);
    EXPECT_TRUE(z.is_zero());
    EXPECT_EQ(psi_sq(z), 0.0);
}

TEST(ModelSubspace, GroupValidationAndCanonicalOrder) {
    const auto M = ModelSubspace::group(pairs4(), {1, 0, 1});
    EXPECT_EQ(M.group_support().S, (std::vector<Index>{0, 1}));
    EXPECT_EQ(psi_sq(M), 2.0);
    EXPECT_THROW(ModelSubspace::group(pairs4(), {2}), std::invalid_argument);
}

TEST(ModelSubspace, SameAsUsesPrincipalAngles) {
    Rng rng(9);
    const Mat U = random_basis(rng, 6, 2), V = random_basis(rng, 5, 2);
    const auto M = ModelSubspace::low_rank(U, V);
    // a rotated basis spans the same subspaces
    Mat R(2, 2);
    R << std::cos(0.3), -std::sin(0.3), std::sin(0.3), std::cos(0.3);
    EXPECT_TRUE(M.same_as(ModelSubspace::low_rank(U * R, V)));
    const Mat U2 = random_basis(rng, 6, 2);
    EXPECT_FALSE(M.same_as(ModelSubspace::low_rank(U2, V)));
    EXPECT_FALSE(M.same_as(ModelSubspace::low_rank(U.leftCols(1), V.leftCols(1))));
}

TEST(Projection, GroupPartsSumToIdentity) {
    const auto M = ModelSubspace::group(pairs4(), {1});
    const auto u = vec({1, 2, 3, 4});
    const auto a = project(u, M), b = project_complement(u, M);
    EXPECT_EQ(a.values()(0, 0), 0.0);
    EXPECT_EQ(a.values()(2, 0), 3.0);
    EXPECT_EQ((a + b).values(), u.values());
    EXPECT_EQ(a.dot(b), 0.0);
}

TEST(Projection, LowRankIsIdempotentAndOrthogonal) {
    Rng rng(11);
    const auto M = ModelSubspace::low_rank(random_basis(rng, 6, 2), random_basis(rng, 5, 2));
    const auto u = ParamPoint::matrix(rng.normal_matrix(6, 5));
    const auto a = project(u, M), b = project_complement(u, M);
    EXPECT_LT((project(a, M) - a).norm(), 1e-12);
    EXPECT_LT((project_complement(b, M) - b).norm(), 1e-12);
    EXPECT_NEAR(a.dot(b), 0.0, 1e-12);
    // the complement has row space orthogonal to V and column space orthogonal to U
    const auto &lr = M.low_rank();
    EXPECT_LT((lr.U.transpose() * b.values()).norm(), 1e-12);
    EXPECT_LT((b.values() * lr.V).norm(), 1e-12);
}

// Prox oracle: the returned point beats every nearby perturbation on the prox objective.
TEST(Prox, MinimizesProxObjective) {
    Rng rng(13);
    const auto regs = std::vector<Regularizer>{Regularizer::group_l2(pairs4()), Regularizer::l1(4)};
    for (const auto &reg : regs) {
        for (int trial = 0; trial < 40; ++trial) {
            const auto u = ParamPoint::vector(rng.normal_vector(4));
            const double t = 0.1 + rng.uniform() * 2;
            auto obj = [&](const ParamPoint &z) {
                return 0.5 * (z - u).dot(z - u) + t * phi(reg, z);
            };
            const auto z = prox(reg, u, t);
            const double best = obj(z);
            for (int k = 0; k < 200; ++k) {
                const auto dz = ParamPoint::vector(rng.normal_vector(4) * (k < 100 ? 1e-3 : 0.3));
                EXPECT_LE(best, obj(z + dz) + 1e-12);
            }
        }
    }
    for (int trial = 0; trial < 40; ++trial) {
        const auto u = ParamPoint::matrix(rng.normal_matrix(3, 4));
        const double t = 0.1 + rng.uniform() * 1.5;
        const auto reg = Regularizer::nuclear();
        auto obj = [&](const ParamPoint &z) {
            return 0.5 * (z - u).dot(z - u) + t * phi(reg, z);
        };
        const auto z = prox(reg, u, t);
        const double best = obj(z);
        for (int k = 0; k < 200; ++k) {
            const auto dz = ParamPoint::matrix(rng.normal_matrix(3, 4) * (k < 100 ? 1e-3 : 0.3));
            EXPECT_LE(best, obj(z + dz) + 1e-12);
        }
    }
}

TEST(Prox, RejectsNonPositiveStep) {
    EXPECT_THROW(prox(Regularizer::l1(2), ParamPoint::zeros(2), 0.0), std::invalid_argument);
}

TEST(Prox, GroupSoftThresholdValues) {
    const auto z = prox(Regularizer::group_l2(pairs4()), vec({3, 4, 0.3, 0.4}), 1.0);
    EXPECT_NEAR(z.values()(0, 0), 3 * 0.8, 1e-15);
    EXPECT_NEAR(z.values()(1, 0), 4 * 0.8, 1e-15);
    EXPECT_EQ(z.values()(2, 0), 0.0);
    EXPECT_EQ(z.values()(3, 0), 0.0);
}

TEST(Compatibility, WitnessAttainsPsi) {
    const auto M = ModelSubspace::group(pairs4(), {0, 1});
    const auto w = compatibility_witness(M);
    EXPECT_NEAR(phi(Regularizer::group_l2(pairs4()), w) / w.norm(), std::sqrt(2.0), 1e-14);
    Rng rng(1);
    const auto L = ModelSubspace::low_rank(random_basis(rng, 5, 3), random_basis(rng, 4, 3));
    const auto wl = compatibility_witness(L);
    EXPECT_NEAR(phi(Regularizer::nuclear(), wl) / wl.norm(), std::sqrt(3.0), 1e-12);
}

TEST(Svd, SignConventionIsDeterministic) {
    Rng rng(2);
    const Mat a = rng.normal_matrix(5, 4);
    const ThinSvd s1 = thin_svd(a), s2 = thin_svd(-a);
    for (Index k = 0; k < s1.U.cols(); ++k) {
        EXPECT_GT(s1.U(0, k), 0.0);
        EXPECT_GT(s2.U(0, k), 0.0);
    }
    EXPECT_LT((s1.U * s1.s.asDiagonal() * s1.V.transpose() - a).norm(), 1e-12);
}
