#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "losses.hpp"
#include "model_space.hpp"
#include "parallel.hpp"
#include "path_gic.hpp"
#include "random.hpp"
#include "solver.hpp"

namespace sgic {

// ---------------------------------------------------------------------------
// Synthetic designs

/// Group-sparse GLM with p = G * m equal groups.
struct GroupGlmDesign {
    Index n = 200;
    Index G = 20;
    Index m = 4;
    Index s_star = 3;
    double signal = 1.0;
    Family family = Family::Gaussian;
    double noise_sd = 0.5;
    double covariate_corr = 0.0;
    std::uint64_t seed = 1;

    Index p() const { return G * m; }

    void validate() const {
        if (n < 1 || G < 1 || m < 1)
            throw std::invalid_argument("GroupGlmDesign: n, G, m must be >= 1");
        if (s_star < 0 || s_star > G)
            throw std::invalid_argument("GroupGlmDesign: s_star must be in [0, G]");
        if (!(covariate_corr >= 0 && covariate_corr < 1))
            throw std::invalid_argument("GroupGlmDesign: covariate_corr must be in [0, 1)");
        if (!(noise_sd >= 0) || !(signal >= 0))
            throw std::invalid_argument("GroupGlmDesign: noise_sd, signal must be >= 0");
    }
};

/// Trace regression with a rank-r_star coefficient matrix.
struct LowRankDesign {
    Index n = 800;
    Index p1 = 20;
    Index p2 = 20;
    Index r_star = 2;
    double sv_min = 2.0;
    double noise_sd = 0.5;
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1 || p1 < 1 || p2 < 1)
            throw std::invalid_argument("LowRankDesign: n, p1, p2 must be >= 1");
        if (r_star < 0 || r_star > std::min(p1, p2))
            throw std::invalid_argument("LowRankDesign: r_star must be in [0, min(p1, p2)]");
        if (!(sv_min > 0) || !(noise_sd >= 0))
            throw std::invalid_argument("LowRankDesign: sv_min > 0 and noise_sd >= 0 required");
    }
};

/// A generated dataset with its ground truth.
struct SyntheticInstance {
    Dataset data;
    ParamPoint theta_star;
    ModelSubspace M_star;
    Regularizer reg;
    /// max_g ||X_g||_F / sqrt(n) (group designs); 0 for low-rank designs.
    double group_norm_C = 0.0;
    bool noiseless = false;
};

/// Gaussian covariates with AR(1) correlation across columns, each column
/// scaled to unit empirical second moment. theta* has s_star active groups
/// (drawn at random) with every entry signal / sqrt(m).
inline SyntheticInstance gen_group_glm(const GroupGlmDesign &d) {
    d.validate();
    Rng rng(d.seed);
    const Index p = d.p();
    const double rho = d.covariate_corr;
    const double innov = std::sqrt(1.0 - rho * rho);
    Mat X(d.n, p);
    for (Index i = 0; i < d.n; ++i) {
        double prev = rng.normal();
        X(i, 0) = prev;
        for (Index j = 1; j < p; ++j) {
            prev = rho * prev + innov * rng.normal();
            X(i, j) = prev;
        }
    }
    for (Index j = 0; j < p; ++j) {
        const double nrm = X.col(j).norm();
        if (nrm > 0)
            X.col(j) *= std::sqrt(static_cast<double>(d.n)) / nrm;
    }

    auto partition = make_partition(GroupPartition::contiguous(p, d.m));
    std::vector<Index> order(static_cast<std::size_t>(d.G));
    for (Index g = 0; g < d.G; ++g)
        order[static_cast<std::size_t>(g)] = g;
    for (Index g = d.G - 1; g > 0; --g) // Fisher-Yates
        std::swap(order[static_cast<std::size_t>(g)],
                  order[rng.below(static_cast<std::uint64_t>(g + 1))]);
    std::vector<Index> S;
    if (d.signal > 0)
        S.assign(order.begin(), order.begin() + d.s_star);
    std::sort(S.begin(), S.end());

    Vec theta = Vec::Zero(p);
    const double entry = d.signal / std::sqrt(static_cast<double>(d.m));
    for (Index g : S)
        for (Index j : partition->group(g))
            theta(j) = entry;

    Vec y(d.n);
    const Vec eta = X * theta;
    for (Index i = 0; i < d.n; ++i) {
        if (d.family == Family::Gaussian)
            y(i) = eta(i) + d.noise_sd * rng.normal();
        else
            y(i) = rng.bernoulli(LossProblem::sigmoid(eta(i))) ? 1.0 : 0.0;
    }

    double C = 0.0;
    for (Index g = 0; g < partition->count(); ++g) {
        double s = 0;
        for (Index j : partition->group(g))
            s += X.col(j).squaredNorm();
        C = std::max(C, std::sqrt(s / static_cast<double>(d.n)));
    }
    return SyntheticInstance{TabularData{std::move(X), std::move(y), d.family},
                             ParamPoint::vector(std::move(theta)),
                             ModelSubspace::group(partition, std::move(S)),
                             Regularizer::group_l2(partition), C,
                             d.family == Family::Gaussian && d.noise_sd == 0.0};
}

/// Orthonormal p x r matrix from the QR factorization of a Gaussian draw.
inline Mat random_orthonormal(Rng &rng, Index p, Index r) {
    if (r == 0)
        return Mat(p, 0);
    const Mat A = rng.normal_matrix(p, r);
    Eigen::HouseholderQR<Mat> qr(A);
    Mat Q = qr.householderQ() * Mat::Identity(p, r);
    const Mat R = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    for (Index k = 0; k < r; ++k)
        if (R(k, k) < 0)
            Q.col(k) *= -1.0;
    return Q;
}

/// X_i with iid N(0,1) entries; Theta* = U* diag(s) V*^T with s linearly
/// spaced on [sv_min, 2 sv_min]; y_i = <X_i, Theta*> + N(0, noise_sd^2).
inline SyntheticInstance gen_lowrank(const LowRankDesign &d) {
    d.validate();
    Rng rng(d.seed);
    const Index q = d.p1 * d.p2;
    Mat design = rng.normal_matrix(d.n, q);
    const Mat U = random_orthonormal(rng, d.p1, d.r_star);
    const Mat V = random_orthonormal(rng, d.p2, d.r_star);
    Vec s(d.r_star);
    for (Index k = 0; k < d.r_star; ++k)
        s(k) = d.r_star == 1 ? d.sv_min
                             : d.sv_min * (2.0 - static_cast<double>(k) / (d.r_star - 1));
    const Mat Theta = U * s.asDiagonal() * V.transpose();
    const Vec eta = design * Eigen::Map<const Vec>(Theta.data(), q);
    Vec y(d.n);
    for (Index i = 0; i < d.n; ++i)
        y(i) = eta(i) + d.noise_sd * rng.normal();
    return SyntheticInstance{MatrixRegData{d.p1, d.p2, std::move(design), std::move(y)},
                             ParamPoint::matrix(Theta), ModelSubspace::low_rank(U, V),
                             Regularizer::nuclear(), 0.0, d.noise_sd == 0.0};
}

// ---------------------------------------------------------------------------
// Assumption diagnostics

/// Smallest admissible constant of the strengthened beta-min condition,
/// 3 / (2 sqrt 2) * (3 + sqrt 2).
inline constexpr double kBetaMinPrimeBound =
    3.0 / (2.0 * std::numbers::sqrt2) * (3.0 + std::numbers::sqrt2);

struct AssumptionInputs {
    double kappa = 0.0; ///< <= 0 selects empirical_kappa on M*
    double tau_sq = 0.0;
    double eta = 1.0;
    double lambda = 0.0; ///< <= 0 selects kappa * sqrt(a_n)
    double psi_budget = std::numeric_limits<double>::infinity();
    double c_prime = 4.7; ///< constant of the strengthened beta-min condition
    int rsc_trials = 200;
    std::uint64_t seed = 1;
};

struct AssumptionReport {
    double kappa = 0, tau_sq = 0, eta = 0, lambda = 0, a_n = 0;
    // A1: Psi^2(M*) within budget
    double psi_sq_star = 0, psi_budget = 0;
    bool a1 = false;
    // A3: sqrt(a_n) >= (2/kappa) Phi*(grad L(theta*))
    double a3_lhs = 0, a3_rhs = 0;
    bool a3 = false;
    // A4: beta-min over sub-models of M*
    double beta_min = 0, a4_rhs = 0, a4_margin = 0;
    bool a4 = false;
    // A4': beta-min against (c/kappa) lambda Psi(M-bar*)
    double c_prime = 0, a4p_rhs = 0;
    bool a4p = false;
    // RSC audit
    double rsc_violation_rate = 0;
    bool rsc = false;
};

/// Smallest eigenvalue of the empirical Hessian at theta restricted to M.
inline double empirical_kappa(const LossProblem &L, const ParamPoint &theta,
                              const ModelSubspace &M) {
    if (M.is_zero())
        return 0.0;
    Mat Z;
    if (M.is_group()) {
        Z = detail::select_columns(L.design(), M.active_coordinates());
    } else {
        const auto &lr = M.low_rank();
        const Index r = lr.rank(), q = lr.U.rows() * lr.V.rows();
        Mat K(q, r * r);
        for (Index b = 0; b < r; ++b)
            for (Index a = 0; a < r; ++a) {
                const Mat outer = lr.U.col(a) * lr.V.col(b).transpose();
                K.col(b * r + a) = Eigen::Map<const Vec>(outer.data(), q);
            }
        Z = L.design() * K;
    }
    const Vec w = L.hessian_weights(theta.flat());
    const Mat H = Z.transpose() * w.asDiagonal() * Z / static_cast<double>(L.n());
    return Eigen::SelfAdjointEigenSolver<Mat>(H, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

/// Smallest projected signal over nonzero sub-models of M*: the minimum
/// group norm of theta* on S*, or the smallest nonzero singular value.
/// Zero when M* is the zero subspace.
inline double beta_min(const SyntheticInstance &inst) {
    if (inst.M_star.is_zero())
        return 0.0;
    if (inst.M_star.is_group()) {
        const Vec norms = group_norms(inst.reg, inst.theta_star);
        double out = std::numeric_limits<double>::infinity();
        for (Index g : inst.M_star.group_support().S)
            out = std::min(out, norms(g));
        return out;
    }
    const Vec s = singular_values(inst.theta_star);
    return s(inst.M_star.size() - 1);
}

inline AssumptionReport check_assumptions(const SyntheticInstance &inst,
                                          const PenaltySchedule &schedule,
                                          const AssumptionInputs &in = {}) {
    const LossProblem L(inst.data);
    AssumptionReport r;
    r.kappa = in.kappa > 0 ? in.kappa : empirical_kappa(L, inst.theta_star, inst.M_star);
    r.tau_sq = in.tau_sq;
    r.eta = in.eta;
    r.a_n = a_n(schedule);
    r.lambda = in.lambda > 0 ? in.lambda : r.kappa * std::sqrt(r.a_n);
    r.c_prime = in.c_prime;

    r.psi_sq_star = psi_sq(inst.M_star);
    r.psi_budget = in.psi_budget;
    r.a1 = r.psi_sq_star <= r.psi_budget;

    const bool usable_kappa = r.kappa > 0;
    const double inv_kappa = usable_kappa ? 1.0 / r.kappa : std::numeric_limits<double>::infinity();
    r.a3_lhs = std::sqrt(r.a_n);
    r.a3_rhs = 2.0 * inv_kappa * phi_dual(inst.reg, loss_grad(L, inst.theta_star));
    r.a3 = r.a3_lhs >= r.a3_rhs;

    const double psi = std::sqrt(r.psi_sq_star);
    r.beta_min = beta_min(inst);
    r.a4_rhs = 2.0 * inv_kappa * std::sqrt(r.a_n) * psi;
    r.a4 = r.beta_min > r.a4_rhs;
    r.a4_margin = r.a4_rhs > 0 ? r.beta_min / r.a4_rhs : 0.0;

    // Psi(M-bar*) = Psi(M*) for both the group and the low-rank pairs.
    r.a4p_rhs = r.c_prime * inv_kappa * r.lambda * psi;
    r.a4p = r.beta_min > r.a4p_rhs;

    if (usable_kappa && in.eta > 0) {
        r.rsc_violation_rate = rsc_probe(L, inst.theta_star, inst.reg, r.kappa, r.tau_sq, r.eta,
                                         in.rsc_trials, in.seed);
        r.rsc = r.rsc_violation_rate == 0.0;
    } else {
        r.rsc_violation_rate = 1.0;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Monte-Carlo studies

/// True iff some path point extracted M* (low-rank subspaces compare by rank
/// and principal angles within angle_tol).
inline bool path_contains_truth(const std::vector<PathPoint> &path, const ModelSubspace &M_star,
                                double angle_tol = 1e-6) {
    if (path.empty())
        throw std::invalid_argument("path_contains_truth: empty path");
    return std::any_of(path.begin(), path.end(), [&](const PathPoint &p) {
        return p.within_budget && p.M.same_as(M_star, angle_tol);
    });
}

/// Exact-recovery test. Low-rank subspaces need a rank match, plus a
/// principal-angle match within 1e-6 when the instance is noiseless.
inline bool recovered(const ModelSubspace &hat, const SyntheticInstance &inst) {
    if (hat.is_group())
        return hat.same_as(inst.M_star);
    if (hat.size() != inst.M_star.size())
        return false;
    return !inst.noiseless || hat.same_as(inst.M_star, 1e-6);
}

inline double support_hamming(const ModelSubspace &hat, const ModelSubspace &star) {
    if (hat.is_group()) {
        const auto &a = hat.group_support().S;
        const auto &b = star.group_support().S;
        std::vector<Index> diff;
        std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(),
                                      std::back_inserter(diff));
        return static_cast<double>(diff.size());
    }
    return std::abs(static_cast<double>(hat.size() - star.size()));
}

struct SelectorConfig {
    enum class Kind { Path, Exhaustive };
    Kind kind = Kind::Path;
    int k_grid = 50;
    double ratio = 1e-3;
    double c_gic = 1.0;
    bool log_n_factor = false;
    double c_xi = 0.5;
    /// NaN selects default_psi_budget.
    double psi_budget = std::numeric_limits<double>::quiet_NaN();
    /// Also run the exhaustive selector over all group supports within the
    /// budget and compare (path selector, group designs only).
    bool compare_exhaustive = false;
    SolveOptions solve;
};

struct ReplicateRecord {
    Index n = 0;
    int replicate = 0;
    bool ok = true;
    std::string failure;
    bool exact_recovery = false;
    double hamming = 0;
    double error_norm = 0;
    double selected_size = 0;
    std::optional<bool> path_contains_truth;
    std::optional<bool> agrees_with_exhaustive;
    std::optional<bool> truth_strict_gic_min;
    std::size_t unconverged_points = 0;
};

struct McRow {
    Index n = 0;
    int replicates = 0;
    int failures = 0;
    double exact_recovery_rate = 0;
    double mean_support_hamming = 0;
    double mean_error_norm = 0;
    double mean_selected_size = 0;
    double path_coverage_rate = std::numeric_limits<double>::quiet_NaN();
    double exhaustive_agreement_rate = std::numeric_limits<double>::quiet_NaN();
    int exhaustive_compared = 0;
    double truth_strict_min_rate = std::numeric_limits<double>::quiet_NaN();
};

struct McReport {
    std::vector<McRow> rows;
    std::vector<ReplicateRecord> details;
};

using DesignSpec = std::variant<GroupGlmDesign, LowRankDesign>;

struct McConfig {
    DesignSpec design = GroupGlmDesign{};
    std::vector<Index> ns{50, 100, 200, 400};
    int replicates = 100;
    std::uint64_t seed = 20240601;
    SelectorConfig selector;
    int threads = 1;
};

/// Seed of replicate `rep` at sample-size index `k`.
inline std::uint64_t replicate_seed(std::uint64_t master, std::size_t k, int rep) {
    return Rng::splitmix64(master ^ Rng::splitmix64((static_cast<std::uint64_t>(k) << 32) ^
                                                    static_cast<std::uint64_t>(rep)));
}

inline SyntheticInstance generate(const DesignSpec &spec, Index n, std::uint64_t seed) {
    return std::visit(
        [&](auto d) {
            d.n = n;
            d.seed = seed;
            if constexpr (std::is_same_v<decltype(d), GroupGlmDesign>)
                return gen_group_glm(d);
            else
                return gen_lowrank(d);
        },
        spec);
}

/// One replicate: generate, select, compare with the truth.
inline ReplicateRecord run_replicate(const DesignSpec &spec, Index n, std::uint64_t seed,
                                     const SelectorConfig &cfg) {
    ReplicateRecord rec;
    rec.n = n;
    const SyntheticInstance inst = generate(spec, n, seed);
    const LossProblem L(inst.data);
    const PenaltySchedule schedule = schedule_for(L, inst.reg, cfg.c_gic, cfg.log_n_factor);
    const double budget = std::isnan(cfg.psi_budget) ? default_psi_budget(L) : cfg.psi_budget;

    auto finish = [&](const GicResult &chosen) {
        rec.exact_recovery = recovered(chosen.M, inst);
        rec.hamming = support_hamming(chosen.M, inst.M_star);
        rec.error_norm = (chosen.theta - inst.theta_star).norm();
        rec.selected_size = psi_sq(chosen.M);
    };

    std::optional<ExhaustiveSelection> exhaustive;
    auto run_exhaustive = [&] {
        if (!inst.M_star.is_group())
            throw std::invalid_argument("exhaustive selection needs a group design");
        const auto cands =
            all_group_supports(inst.reg.partition(), static_cast<Index>(std::floor(budget)));
        exhaustive = select_exhaustive(L, cands, schedule, budget);
        const auto &res = exhaustive->results;
        const auto star = std::find_if(res.begin(), res.end(), [&](const GicResult &g) {
            return g.M.same_as(inst.M_star);
        });
        if (star != res.end())
            rec.truth_strict_gic_min = std::all_of(res.begin(), res.end(), [&](const GicResult &g) {
                return &g == &*star || star->gic < g.gic;
            });
    };

    if (cfg.kind == SelectorConfig::Kind::Exhaustive) {
        run_exhaustive();
        finish(exhaustive->best());
        return rec;
    }

    PathOptions popts;
    popts.c_xi = cfg.c_xi;
    popts.psi_budget = budget;
    popts.solve = cfg.solve;
    const auto grid = lambda_grid(L, inst.reg, cfg.k_grid, cfg.ratio);
    const PathSelection sel = select_on_path(L, inst.reg, grid, schedule, popts);
    rec.unconverged_points = sel.unconverged_count();
    rec.path_contains_truth =
        path_contains_truth(sel.path, inst.M_star, inst.noiseless ? 1e-6 : 1.0);
    if (!sel.selected) {
        rec.ok = false;
        rec.failure = "no converged in-budget path point";
        return rec;
    }
    finish(sel.gic_hat());
    if (cfg.compare_exhaustive) {
        run_exhaustive();
        rec.agrees_with_exhaustive = sel.model_hat().same_as(exhaustive->best().M);
    }
    return rec;
}

/// Runs `replicates` replicates at every n. Replicate seeds depend only on
/// (master seed, n index, replicate index), so the report does not depend on
/// the thread count.
inline McReport monte_carlo(const McConfig &cfg) {
    if (cfg.replicates < 1)
        throw std::invalid_argument("monte_carlo: replicates must be >= 1");
    McReport report;
    const std::size_t per_n = static_cast<std::size_t>(cfg.replicates);
    report.details.resize(cfg.ns.size() * per_n);
    parallel_for(report.details.size(), resolve_threads(cfg.threads), [&](std::size_t idx) {
        const std::size_t k = idx / per_n;
        const int rep = static_cast<int>(idx % per_n);
        const Index n = cfg.ns[k];
        ReplicateRecord rec;
        try {
            rec = run_replicate(cfg.design, n, replicate_seed(cfg.seed, k, rep), cfg.selector);
        } catch (const std::exception &e) {
            rec.n = n;
            rec.ok = false;
            rec.failure = e.what();
        }
        rec.replicate = rep;
        report.details[idx] = std::move(rec);
    });

    for (std::size_t k = 0; k < cfg.ns.size(); ++k) {
        McRow row;
        row.n = cfg.ns[k];
        row.replicates = cfg.replicates;
        int ok = 0, covered_total = 0, covered = 0, strict_total = 0, strict = 0, agree = 0;
        for (std::size_t r = 0; r < per_n; ++r) {
            const ReplicateRecord &rec = report.details[k * per_n + r];
            if (rec.path_contains_truth) {
                ++covered_total;
                covered += *rec.path_contains_truth;
            }
            if (!rec.ok) {
                ++row.failures;
                continue;
            }
            ++ok;
            row.exact_recovery_rate += rec.exact_recovery;
            row.mean_support_hamming += rec.hamming;
            row.mean_error_norm += rec.error_norm;
            row.mean_selected_size += rec.selected_size;
            if (rec.agrees_with_exhaustive) {
                ++row.exhaustive_compared;
                agree += *rec.agrees_with_exhaustive;
            }
            if (rec.truth_strict_gic_min) {
                ++strict_total;
                strict += *rec.truth_strict_gic_min;
            }
        }
        // Failed replicates count as non-recoveries.
        row.exact_recovery_rate /= cfg.replicates;
        if (ok > 0) {
            row.mean_support_hamming /= ok;
            row.mean_error_norm /= ok;
            row.mean_selected_size /= ok;
        }
        if (covered_total)
            row.path_coverage_rate = static_cast<double>(covered) / covered_total;
        if (row.exhaustive_compared)
            row.exhaustive_agreement_rate = static_cast<double>(agree) / row.exhaustive_compared;
        if (strict_total)
            row.truth_strict_min_rate = static_cast<double>(strict) / strict_total;
        report.rows.push_back(row);
    }
    return report;
}

} // namespace sgic
