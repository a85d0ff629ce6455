#include <gtest/gtest.h>

#include "support.hpp"

#include <algorithm>

using namespace sgic;

namespace {

GroupGlmDesign small_group(std::uint64_t seed) {
    GroupGlmDesign d;
    d.n = 100;
    d.G = 6;
    d.m = 3;
    d.s_star = 2;
    d.seed = seed;
    return d;
}

} // namespace

TEST(GenGroup, DeterministicAndExactSignal) {
    const auto a = gen_group_glm(small_group(3)), b = gen_group_glm(small_group(3));
    EXPECT_EQ(io::to_csv(std::get<TabularData>(a.data)), io::to_csv(std::get<TabularData>(b.data)));
    EXPECT_EQ(a.M_star.group_support().S, b.M_star.group_support().S);
    const Vec norms = group_norms(a.reg, a.theta_star);
    for (Index g = 0; g < norms.size(); ++g) {
        const bool active = std::count(a.M_star.group_support().S.begin(),
                                       a.M_star.group_support().S.end(), g) > 0;
        EXPECT_NEAR(norms(g), active ? 1.0 : 0.0, 1e-15);
    }
    // columns scaled to ||x_j||^2 = n, so C = sqrt(m)
    EXPECT_NEAR(a.group_norm_C, std::sqrt(3.0), 1e-12);
    const auto c = gen_group_glm(small_group(4));
    EXPECT_NE(io::to_csv(std::get<TabularData>(a.data)), io::to_csv(std::get<TabularData>(c.data)));
}

TEST(GenGroup, NullSignal) {
    auto d = small_group(1);
    d.signal = 0;
    const auto inst = gen_group_glm(d);
    EXPECT_TRUE(inst.M_star.is_zero());
    EXPECT_EQ(inst.theta_star.norm(), 0.0);
}

TEST(GenGroup, LogisticResponsesBinary) {
    auto d = small_group(2);
    d.family = Family::Logistic;
    const auto inst = gen_group_glm(d);
    const auto &y = std::get<TabularData>(inst.data).y;
    for (Index i = 0; i < y.size(); ++i)
        EXPECT_TRUE(y(i) == 0.0 || y(i) == 1.0);
}

TEST(GenGroup, CovariateCorrelation) {
    auto d = small_group(5);
    d.n = 20000;
    d.covariate_corr = 0.6;
    const auto inst = gen_group_glm(d);
    const Mat &X = std::get<TabularData>(inst.data).X;
    EXPECT_NEAR(X.col(0).dot(X.col(1)) / d.n, 0.6, 0.03);
    EXPECT_NEAR(X.col(0).dot(X.col(2)) / d.n, 0.36, 0.03);
}

TEST(GenLowRank, RankAndSpectrum) {
    LowRankDesign d;
    d.n = 50;
    d.p1 = 6;
    d.p2 = 5;
    d.r_star = 3;
    d.sv_min = 1.5;
    const auto inst = gen_lowrank(d);
    const Vec s = singular_values(inst.theta_star);
    EXPECT_NEAR(s(0), 3.0, 1e-12);
    EXPECT_NEAR(s(1), 2.25, 1e-12);
    EXPECT_NEAR(s(2), 1.5, 1e-12);
    EXPECT_LT(s(3), 1e-12);
    d.r_star = 0;
    const auto zero = gen_lowrank(d);
    EXPECT_EQ(zero.theta_star.norm(), 0.0);
    EXPECT_TRUE(zero.M_star.is_zero());
}

TEST(GenLowRank, NoiselessRestrictedFitRecovers) {
    LowRankDesign d;
    d.n = 60;
    d.p1 = 5;
    d.p2 = 6;
    d.noise_sd = 0;
    const auto inst = gen_lowrank(d);
    const LossProblem L(inst.data);
    EXPECT_LT((restricted_fit(L, inst.M_star).theta - inst.theta_star).norm(), 1e-8);
}

TEST(Assumptions, BetaMinPrimeConstant) {
    EXPECT_NEAR(kBetaMinPrimeBound, 3.0 / (2.0 * std::sqrt(2.0)) * (3.0 + std::sqrt(2.0)), 1e-15);
    EXPECT_GT(AssumptionInputs{}.c_prime, kBetaMinPrimeBound);
}

TEST(Assumptions, NullSignalFailsBetaMin) {
    auto d = small_group(1);
    d.signal = 0;
    const auto inst = gen_group_glm(d);
    const LossProblem L(inst.data);
    AssumptionInputs in;
    in.kappa = 0.5;
    const auto r = check_assumptions(inst, schedule_for(L, inst.reg), in);
    EXPECT_EQ(r.beta_min, 0.0);
    EXPECT_FALSE(r.a4);
    EXPECT_TRUE(r.a1);
}

TEST(Assumptions, BetaMinMarginScalesWithSignal) {
    auto d = small_group(2);
    const auto a = gen_group_glm(d);
    d.signal *= 10;
    const auto b = gen_group_glm(d);
    const LossProblem L(a.data);
    AssumptionInputs in;
    in.kappa = 0.5;
    const auto ra = check_assumptions(a, schedule_for(L, a.reg), in);
    const auto rb = check_assumptions(b, schedule_for(L, b.reg), in);
    EXPECT_NEAR(rb.a4_margin, 10 * ra.a4_margin, 1e-12 * rb.a4_margin);
}

TEST(Assumptions, GradientAtTruthShrinksWithN) {
    std::vector<double> medians;
    for (Index n : {100, 200, 400, 800}) {
        std::vector<double> v;
        for (std::uint64_t seed = 1; seed <= 9; ++seed) {
            auto d = small_group(seed);
            d.n = n;
            const auto inst = gen_group_glm(d);
            const LossProblem L(inst.data);
            v.push_back(phi_dual(inst.reg, loss_grad(L, inst.theta_star)));
        }
        std::nth_element(v.begin(), v.begin() + 4, v.end());
        medians.push_back(v[4]);
    }
    for (std::size_t k = 1; k < medians.size(); ++k)
        EXPECT_LT(medians[k], medians[k - 1]);
}

TEST(Assumptions, EmpiricalKappaIsHessianMinEigen) {
    const auto inst = gen_group_glm(small_group(6));
    const LossProblem L(inst.data);
    const auto cols = inst.M_star.active_coordinates();
    const Mat Z = sgic::testing::select_cols(L.design(), cols);
    const Mat H = Z.transpose() * Z / static_cast<double>(L.n());
    EXPECT_NEAR(empirical_kappa(L, inst.theta_star, inst.M_star),
                Eigen::SelfAdjointEigenSolver<Mat>(H).eigenvalues().minCoeff(), 1e-12);
}

TEST(PathContainsTruth, NullModelAtLambdaMax) {
    auto d = small_group(7);
    d.signal = 0;
    const auto inst = gen_group_glm(d);
    const LossProblem L(inst.data);
    const auto sel = select_on_path(L, inst.reg, lambda_grid(L, inst.reg, 10, 1e-2),
                                    schedule_for(L, inst.reg));
    EXPECT_TRUE(path_contains_truth(sel.path, inst.M_star));
    EXPECT_THROW(path_contains_truth({}, inst.M_star), std::invalid_argument);
}

TEST(PathContainsTruth, FalseWhenTruthOverBudget) {
    auto d = small_group(8);
    d.s_star = 3;
    d.noise_sd = 0;
    const auto inst = gen_group_glm(d);
    const LossProblem L(inst.data);
    PathOptions o;
    o.psi_budget = 2;
    const auto sel = select_on_path(L, inst.reg, lambda_grid(L, inst.reg, 30, 1e-3),
                                    schedule_for(L, inst.reg), o);
    EXPECT_FALSE(path_contains_truth(sel.path, inst.M_star));
    o.psi_budget = 10;
    const auto sel2 = select_on_path(L, inst.reg, lambda_grid(L, inst.reg, 30, 1e-3),
                                     schedule_for(L, inst.reg), o);
    EXPECT_TRUE(path_contains_truth(sel2.path, inst.M_star));
}

TEST(MonteCarlo, ReproducibleAndThreadInvariant) {
    McConfig cfg;
    cfg.design = small_group(0);
    cfg.ns = {60, 120};
    cfg.replicates = 3;
    cfg.seed = 99;
    const auto a = monte_carlo(cfg);
    cfg.threads = 3;
    const auto b = monte_carlo(cfg);
    ASSERT_EQ(a.details.size(), b.details.size());
    for (std::size_t i = 0; i < a.details.size(); ++i) {
        EXPECT_EQ(a.details[i].error_norm, b.details[i].error_norm);
        EXPECT_EQ(a.details[i].exact_recovery, b.details[i].exact_recovery);
    }
    for (const auto &row : a.rows) {
        EXPECT_GE(row.exact_recovery_rate, 0.0);
        EXPECT_LE(row.exact_recovery_rate, 1.0);
    }
}

TEST(MonteCarlo, NoiselessExhaustiveRecoversAlways) {
    McConfig cfg;
    GroupGlmDesign d;
    d.G = 4;
    d.m = 3;
    d.s_star = 2;
    d.noise_sd = 0;
    cfg.design = d;
    cfg.ns = {100};
    cfg.replicates = 10;
    cfg.selector.kind = SelectorConfig::Kind::Exhaustive;
    const auto r = monte_carlo(cfg);
    EXPECT_EQ(r.rows[0].exact_recovery_rate, 1.0);
    EXPECT_EQ(r.rows[0].truth_strict_min_rate, 1.0);
}

TEST(MonteCarlo, NoiselessRecoveryHasSmallError) {
    McConfig cfg;
    auto d = small_group(0);
    d.noise_sd = 0;
    cfg.design = d;
    cfg.ns = {100};
    cfg.replicates = 5;
    const auto r = monte_carlo(cfg);
    for (const auto &rec : r.details)
        if (rec.exact_recovery)
            EXPECT_LE(rec.error_norm, 1e-6);
}

TEST(Recovered, LowRankNoisyComparesRankOnly) {
    LowRankDesign d;
    d.n = 50;
    d.p1 = 4;
    d.p2 = 4;
    const auto inst = gen_lowrank(d);
    Rng rng(1);
    const auto other = ModelSubspace::low_rank(sgic::testing::random_basis(rng, 4, 2),
                                               sgic::testing::random_basis(rng, 4, 2));
    EXPECT_TRUE(recovered(other, inst));
    EXPECT_FALSE(recovered(ModelSubspace::zero_rank(4, 4), inst));
    d.noise_sd = 0;
    const auto clean = gen_lowrank(d);
    EXPECT_FALSE(recovered(other, clean));
    EXPECT_TRUE(recovered(clean.M_star, clean));
}
