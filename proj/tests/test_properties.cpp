// Randomized invariants: norm axioms, decomposability, compatibility bounds,
// prox nonexpansiveness and loss convexity.
#include <gtest/gtest.h>

#include "support.hpp"

using namespace sgic;
using sgic::testing::random_basis;
using sgic::testing::random_partition;
using sgic::testing::random_subset;

namespace {

struct Case {
    Regularizer reg;
    ParamPoint sample;
};

/// A random regularizer with a random point of matching shape.
Case random_case(Rng &rng, int kind) {
    if (kind == 0) {
        const auto part = random_partition(rng, 10, 4);
        return {Regularizer::group_l2(part), ParamPoint::vector(rng.normal_vector(10))};
    }
    if (kind == 1)
        return {Regularizer::l1(7), ParamPoint::vector(rng.normal_vector(7))};
    return {Regularizer::nuclear(), ParamPoint::matrix(rng.normal_matrix(5, 4))};
}

ParamPoint like(Rng &rng, const ParamPoint &p) {
    return p.with_values(rng.normal_matrix(p.rows(), p.cols()));
}

} // namespace

TEST(Property, NormAxioms) {
    Rng rng(1);
    for (int kind = 0; kind < 3; ++kind) {
        for (int t = 0; t < 200; ++t) {
            const Case c = random_case(rng, kind);
            const ParamPoint u = c.sample, v = like(rng, u);
            const double a = rng.normal() * 3;
            const double pu = phi(c.reg, u);
            EXPECT_NEAR(phi(c.reg, a * u), std::abs(a) * pu, 1e-12 * (1 + std::abs(a) * pu));
            EXPECT_LE(phi(c.reg, u + v), pu + phi(c.reg, v) + 1e-12);
            EXPECT_GT(pu, 0.0);
            EXPECT_EQ(phi(c.reg, ParamPoint::zeros_like(u)), 0.0);
            // Phi and Phi* are dual: <u, v> <= Phi(u) Phi*(v)
            EXPECT_LE(u.dot(v), pu * phi_dual(c.reg, v) * (1 + 1e-12) + 1e-12);
        }
    }
}

TEST(Property, Decomposability) {
    Rng rng(2);
    for (int t = 0; t < 300; ++t) {
        const auto part = random_partition(rng, 12, 4);
        const auto reg = Regularizer::group_l2(part);
        const Index k = static_cast<Index>(rng.below(static_cast<std::uint64_t>(part->count() + 1)));
        const auto M = ModelSubspace::group(part, random_subset(rng, part->count(), k));
        EXPECT_TRUE(decompose_check(reg, M, ParamPoint::vector(rng.normal_vector(12)),
                                    ParamPoint::vector(rng.normal_vector(12))));

        const Index r = static_cast<Index>(rng.below(4));
        const auto L = ModelSubspace::low_rank(random_basis(rng, 6, r), random_basis(rng, 5, r));
        EXPECT_TRUE(decompose_check(Regularizer::nuclear(), L,
                                    ParamPoint::matrix(rng.normal_matrix(6, 5)),
                                    ParamPoint::matrix(rng.normal_matrix(6, 5))));
    }
}

TEST(Property, CompatibilityBound) {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const auto part = random_partition(rng, 12, 3);
        const Index k = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(part->count())));
        const auto M = ModelSubspace::group(part, random_subset(rng, part->count(), k));
        const auto u = project(ParamPoint::vector(rng.normal_vector(12)), M);
        EXPECT_LE(phi(Regularizer::group_l2(part), u) / u.norm(), std::sqrt(psi_sq(M)) + 1e-10);

        const Index r = 1 + static_cast<Index>(rng.below(3));
        const auto L = ModelSubspace::low_rank(random_basis(rng, 5, r), random_basis(rng, 6, r));
        const auto w = project(ParamPoint::matrix(rng.normal_matrix(5, 6)), L);
        EXPECT_LE(phi(Regularizer::nuclear(), w) / w.norm(), std::sqrt(psi_sq(L)) + 1e-10);
    }
}

TEST(Property, ProxIsFirmlyNonexpansive) {
    Rng rng(4);
    for (int kind = 0; kind < 3; ++kind) {
        for (int t = 0; t < 100; ++t) {
            const Case c = random_case(rng, kind);
            const ParamPoint u = c.sample, v = like(rng, u);
            const double s = 0.05 + rng.uniform();
            const ParamPoint pu = prox(c.reg, u, s), pv = prox(c.reg, v, s);
            EXPECT_LE((pu - pv).dot(pu - pv), (pu - pv).dot(u - v) + 1e-12);
            // Moreau: u = prox(u) + s * (projection onto the dual ball)
            EXPECT_LE(phi_dual(c.reg, (1.0 / s) * (u - pu)), 1.0 + 1e-9);
        }
    }
}

TEST(Property, LossMidpointConvexity) {
    Rng rng(5);
    const Index n = 30;
    TabularData g{rng.normal_matrix(n, 5), rng.normal_vector(n), Family::Gaussian};
    TabularData b{rng.normal_matrix(n, 5), Vec(n), Family::Logistic};
    for (Index i = 0; i < n; ++i)
        b.y(i) = rng.uniform() < 0.5;
    MatrixRegData m{3, 3, rng.normal_matrix(n, 9), rng.normal_vector(n)};
    for (const Dataset &d : {Dataset{g}, Dataset{b}, Dataset{m}}) {
        const LossProblem L(d);
        for (int t = 0; t < 200; ++t) {
            const auto a = like(rng, L.zero()), c = like(rng, L.zero());
            const double mid = loss_value(L, 0.5 * (a + c));
            EXPECT_LE(mid, 0.5 * (loss_value(L, a) + loss_value(L, c)) + 1e-12);
        }
    }
}

TEST(Property, GicMonotoneInPenaltyRate) {
    Rng rng(6);
    const auto part = make_partition(GroupPartition::contiguous(6, 2));
    const LossProblem L(Dataset{TabularData{rng.normal_matrix(40, 6), rng.normal_vector(40), Family::Gaussian}});
    // a larger a_n never selects a larger model
    const auto cands = all_group_supports(part);
    double prev = std::numeric_limits<double>::infinity();
    for (double an : {0.001, 0.01, 0.05, 0.2, 1.0}) {
        const double size = select_exhaustive(L, cands, PenaltySchedule::custom(an)).best().psi_sq;
        EXPECT_LE(size, prev);
        prev = size;
    }
}
