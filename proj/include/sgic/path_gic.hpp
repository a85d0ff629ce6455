#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "losses.hpp"
#include "model_space.hpp"
#include "parallel.hpp"
#include "solver.hpp"

namespace sgic {

/// Penalty rate a_n of the information criterion.
struct PenaltySchedule {
    enum class Kind { GroupGlm, LowRank, Custom };

    Kind kind = Kind::Custom;
    Index m = 0, G = 0;   // GroupGlm
    Index p1 = 0, p2 = 0; // LowRank
    Index n = 0;
    double value = 0.0; // Custom
    double c_gic = 1.0;
    bool log_n_factor = false;

    static PenaltySchedule group_glm(Index m, Index G, Index n, double c_gic = 1.0,
                                     bool log_n_factor = false) {
        PenaltySchedule s;
        s.kind = Kind::GroupGlm;
        s.m = m;
        s.G = G;
        s.n = n;
        s.c_gic = c_gic;
        s.log_n_factor = log_n_factor;
        return s;
    }

    static PenaltySchedule low_rank(Index p1, Index p2, Index n, double c_gic = 1.0,
                                    bool log_n_factor = false) {
        PenaltySchedule s;
        s.kind = Kind::LowRank;
        s.p1 = p1;
        s.p2 = p2;
        s.n = n;
        s.c_gic = c_gic;
        s.log_n_factor = log_n_factor;
        return s;
    }

    /// a_n fixed to `value`; c_gic and the log factor do not apply.
    static PenaltySchedule custom(double value) {
        PenaltySchedule s;
        s.kind = Kind::Custom;
        s.value = value;
        return s;
    }
};

/// GroupGlm: c (m + log G) / n. LowRank: c (p1 + p2) / n. Either times log n
/// when log_n_factor is set.
inline double a_n(const PenaltySchedule &s) {
    if (s.kind == PenaltySchedule::Kind::Custom) {
        if (!(s.value > 0) || !std::isfinite(s.value))
            throw std::invalid_argument("a_n: custom value must be positive");
        return s.value;
    }
    if (s.n < 1 || !(s.c_gic > 0))
        throw std::invalid_argument("a_n: need n >= 1 and c_gic > 0");
    const double n = static_cast<double>(s.n);
    double rate;
    if (s.kind == PenaltySchedule::Kind::GroupGlm) {
        if (s.m < 1 || s.G < 1)
            throw std::invalid_argument("a_n: need m, G >= 1");
        rate = (static_cast<double>(s.m) + std::log(static_cast<double>(s.G))) / n;
    } else {
        if (s.p1 < 1 || s.p2 < 1)
            throw std::invalid_argument("a_n: need p1, p2 >= 1");
        rate = static_cast<double>(s.p1 + s.p2) / n;
    }
    if (s.log_n_factor)
        rate *= std::log(n);
    return s.c_gic * rate;
}

/// Schedule matching the regularizer: group GLM rate for group/L1 norms,
/// low-rank rate for the nuclear norm.
inline PenaltySchedule schedule_for(const LossProblem &L, const Regularizer &reg,
                                    double c_gic = 1.0, bool log_n_factor = false) {
    if (reg.is_nuclear()) {
        const ParamPoint z = L.zero();
        return PenaltySchedule::low_rank(z.rows(), z.cols(), L.n(), c_gic, log_n_factor);
    }
    return PenaltySchedule::group_glm(reg.partition()->max_size(), reg.partition()->count(),
                                      L.n(), c_gic, log_n_factor);
}

/// Default cap on Psi^2: min(dim, n) / 2.
inline double default_psi_budget(const LossProblem &L) {
    return 0.5 * static_cast<double>(std::min(L.dim(), L.n()));
}

/// Smallest lambda at which zero is optimal, Phi*(grad L(0)).
inline double lambda_max(const LossProblem &L, const Regularizer &reg) {
    return phi_dual(reg, loss_grad(L, L.zero()));
}

/// K values, log-uniform from lambda_max down to ratio * lambda_max.
inline std::vector<double> lambda_grid(const LossProblem &L, const Regularizer &reg, int K,
                                       double ratio) {
    if (K < 2)
        throw std::invalid_argument("lambda_grid: K must be >= 2");
    if (!(ratio > 0 && ratio < 1))
        throw std::invalid_argument("lambda_grid: ratio must be in (0, 1)");
    const double top = lambda_max(L, reg);
    if (!(top > 0))
        throw DegenerateData("lambda_grid: gradient of the loss at zero vanishes");
    std::vector<double> grid(static_cast<std::size_t>(K));
    const double log_ratio = std::log(ratio);
    for (int k = 0; k < K; ++k)
        grid[static_cast<std::size_t>(k)] = top * std::exp(log_ratio * k / (K - 1));
    grid.back() = top * ratio;
    return grid;
}

/// Threshold separating retained components when extracting M_lambda.
inline double xi_n(double lambda, double c_xi) {
    if (!(lambda > 0))
        throw std::invalid_argument("xi_n: lambda must be positive");
    if (!(c_xi >= 0))
        throw std::invalid_argument("xi_n: c_xi must be nonnegative");
    return c_xi * lambda;
}

/// Largest model subspace whose every sub-model carries projected mass
/// above xi. For group norms this is S = {g : ||theta_g|| > xi}; for the
/// nuclear norm, the singular subspaces of the values above xi. Singular
/// values within 1e-10 (relative to the largest) of each other are kept or
/// dropped together, and values below 1e-10 relative are treated as zero.
inline ModelSubspace extract_model(const ParamPoint &theta, const Regularizer &reg, double xi) {
    if (!(xi >= 0))
        throw std::invalid_argument("extract_model: xi must be nonnegative");
    reg.require_compatible(theta);
    if (reg.is_nuclear()) {
        const ThinSvd svd = thin_svd(theta.values());
        const Index len = svd.s.size();
        const double scale = len ? std::max(1.0, svd.s(0)) : 1.0;
        const double floor = len ? 1e-10 * svd.s(0) : 0.0;
        const double tie = 1e-10 * scale;
        Index r = 0;
        while (r < len && svd.s(r) > xi && svd.s(r) > floor)
            ++r;
        while (r > 0 && r < len && svd.s(r - 1) - svd.s(r) <= tie && svd.s(r) > floor)
            ++r;
        return ModelSubspace::low_rank(svd.U.leftCols(r), svd.V.leftCols(r));
    }
    const Vec norms = group_norms(reg, theta);
    std::vector<Index> S;
    for (Index g = 0; g < norms.size(); ++g)
        if (norms(g) > xi)
            S.push_back(g);
    return ModelSubspace::group(reg.partition(), std::move(S));
}

/// GIC_{a_n}(M) = L(theta_hat(M)) + a_n Psi^2(M).
struct GicResult {
    ModelSubspace M;
    ParamPoint theta;
    double loss = 0.0;
    double psi_sq = 0.0;
    double a_n = 0.0;
    double gic = 0.0;
    bool singular = false;
    bool converged = true;
};

inline GicResult gic(const LossProblem &L, const ModelSubspace &M, double a_n_value,
                     double psi_budget = std::numeric_limits<double>::infinity()) {
    if (!(a_n_value > 0))
        throw std::invalid_argument("gic: a_n must be positive");
    const double ps = psi_sq(M);
    if (ps > psi_budget)
        throw PsiBudgetExceeded(ps, psi_budget);
    RestrictedFit fit = restricted_fit(L, M);
    return GicResult{M,   std::move(fit.theta), fit.loss,     ps,
                     a_n_value, fit.loss + a_n_value * ps, fit.singular, fit.converged};
}

/// Ordering key for group supports (used for caching and lexicographic ties).
inline std::string model_key(const ModelSubspace &M) {
    std::string key;
    if (M.is_group()) {
        for (Index g : M.group_support().S)
            key += std::to_string(g) + ",";
        return key;
    }
    return "r" + std::to_string(M.size());
}

struct PathPoint {
    double lambda = 0.0;
    ParamPoint theta;
    ModelSubspace M;
    double kkt = 0.0;
    bool converged = false;
    int iterations = 0;
    bool within_budget = true;
    /// Present for converged points within budget.
    std::optional<GicResult> gic;
};

struct PathSelection {
    std::vector<PathPoint> path;
    /// Index into `path` of the selected point; empty when no point qualifies.
    std::optional<std::size_t> selected;

    double lambda_hat() const { return path.at(selected.value()).lambda; }
    const ModelSubspace &model_hat() const { return path.at(selected.value()).M; }
    const GicResult &gic_hat() const { return *path.at(selected.value()).gic; }
    std::size_t unconverged_count() const {
        return static_cast<std::size_t>(std::count_if(
            path.begin(), path.end(), [](const PathPoint &p) { return !p.converged; }));
    }
};

struct PathOptions {
    double c_xi = 0.5;
    double psi_budget = std::numeric_limits<double>::infinity();
    SolveOptions solve;
    int threads = 1;
};

/// Warm-started solves down `grid` (descending); each point yields M_lambda
/// and its GIC. Returns the GIC minimizer over converged, in-budget points;
/// ties go to the smaller Psi^2, then to the larger lambda.
inline PathSelection select_on_path(const LossProblem &L, const Regularizer &reg,
                                    const std::vector<double> &grid,
                                    const PenaltySchedule &schedule, const PathOptions &opts = {}) {
    if (grid.empty())
        throw std::invalid_argument("select_on_path: empty lambda grid");
    const double an = a_n(schedule);
    PathSelection out;
    ParamPoint warm = L.zero();
    SolveOptions solve = opts.solve;
    if (!(solve.lipschitz > 0))
        solve.lipschitz = step_bound(L);
    for (double lambda : grid) {
        SolveResult res = solve_regularized(L, reg, lambda, warm, solve);
        warm = res.theta;
        ModelSubspace M = extract_model(res.theta, reg, xi_n(lambda, opts.c_xi));
        const bool in_budget = psi_sq(M) <= opts.psi_budget;
        out.path.push_back(PathPoint{lambda, std::move(res.theta), std::move(M), res.kkt,
                                     res.converged, res.iterations, in_budget, std::nullopt});
    }

    // Refit each distinct eligible model once.
    std::vector<std::size_t> eligible;
    std::vector<std::size_t> owner(out.path.size(), SIZE_MAX);
    std::map<std::string, std::size_t> first_by_key;
    for (std::size_t i = 0; i < out.path.size(); ++i) {
        const PathPoint &p = out.path[i];
        if (!p.converged || !p.within_budget)
            continue;
        if (p.M.is_group()) {
            auto [it, inserted] = first_by_key.emplace(model_key(p.M), i);
            owner[i] = it->second;
            if (!inserted)
                continue;
        } else {
            owner[i] = i;
        }
        eligible.push_back(i);
    }
    std::vector<std::optional<GicResult>> fits(out.path.size());
    parallel_for(eligible.size(), resolve_threads(opts.threads), [&](std::size_t k) {
        const std::size_t i = eligible[k];
        fits[i] = gic(L, out.path[i].M, an, opts.psi_budget);
    });
    for (std::size_t i = 0; i < out.path.size(); ++i) {
        if (owner[i] == SIZE_MAX)
            continue;
        GicResult r = *fits[owner[i]];
        r.M = out.path[i].M;
        out.path[i].gic = std::move(r);
    }

    for (std::size_t i = 0; i < out.path.size(); ++i) {
        const auto &cand = out.path[i].gic;
        if (!cand)
            continue;
        if (!out.selected) {
            out.selected = i;
            continue;
        }
        const GicResult &best = *out.path[*out.selected].gic;
        if (cand->gic < best.gic || (cand->gic == best.gic && cand->psi_sq < best.psi_sq))
            out.selected = i;
    }
    return out;
}

struct ExhaustiveSelection {
    std::size_t selected = 0;
    std::vector<GicResult> results;

    const GicResult &best() const { return results.at(selected); }
};

/// argmin of GIC over `candidates`; ties go to the smaller Psi^2, then to
/// the lexicographically smaller support (group) or earlier candidate.
inline ExhaustiveSelection select_exhaustive(const LossProblem &L,
                                             const std::vector<ModelSubspace> &candidates,
                                             const PenaltySchedule &schedule,
                                             double psi_budget =
                                                 std::numeric_limits<double>::infinity(),
                                             int threads = 1) {
    if (candidates.empty())
        throw std::invalid_argument("select_exhaustive: no candidates");
    const double an = a_n(schedule);
    for (const auto &M : candidates)
        if (psi_sq(M) > psi_budget)
            throw PsiBudgetExceeded(psi_sq(M), psi_budget);
    std::vector<std::optional<GicResult>> fits(candidates.size());
    parallel_for(candidates.size(), resolve_threads(threads),
                 [&](std::size_t i) { fits[i] = gic(L, candidates[i], an, psi_budget); });
    ExhaustiveSelection out;
    out.results.reserve(candidates.size());
    for (auto &f : fits)
        out.results.push_back(std::move(*f));
    for (std::size_t i = 1; i < out.results.size(); ++i) {
        const GicResult &c = out.results[i];
        const GicResult &b = out.results[out.selected];
        bool better = c.gic < b.gic;
        if (!better && c.gic == b.gic) {
            if (c.psi_sq != b.psi_sq)
                better = c.psi_sq < b.psi_sq;
            else if (c.M.is_group())
                better = c.M.group_support().S < b.M.group_support().S;
        }
        if (better)
            out.selected = i;
    }
    return out;
}

/// Every group support with at most `max_size` groups, ordered by size and
/// then lexicographically.
inline std::vector<ModelSubspace> all_group_supports(const PartitionPtr &partition,
                                                     Index max_size =
                                                         std::numeric_limits<Index>::max()) {
    const Index G = partition->count();
    max_size = std::min(max_size, G);
    std::vector<ModelSubspace> out;
    for (Index k = 0; k <= max_size; ++k) {
        std::vector<Index> comb(static_cast<std::size_t>(k));
        for (Index j = 0; j < k; ++j)
            comb[static_cast<std::size_t>(j)] = j;
        for (;;) {
            out.push_back(ModelSubspace::group(partition, comb));
            Index j = k - 1;
            while (j >= 0 && comb[static_cast<std::size_t>(j)] == G - k + j)
                --j;
            if (j < 0)
                break;
            ++comb[static_cast<std::size_t>(j)];
            for (Index l = j + 1; l < k; ++l)
                comb[static_cast<std::size_t>(l)] = comb[static_cast<std::size_t>(l - 1)] + 1;
        }
    }
    return out;
}

} // namespace sgic
