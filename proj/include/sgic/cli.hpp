#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "experiments.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "model_space.hpp"
#include "path_gic.hpp"
#include "solver.hpp"

namespace sgic::cli {

using json = nlohmann::json;

/// Every option of a run. Keys of the JSON form equal the field names; the
/// matching command-line flag is the key with '_' replaced by '-'.
struct RunConfig {
    std::string command = "select";

    // data and regularizer
    std::string data;
    std::string family = "gaussian";
    std::string reg = "group";
    std::string groups_file;
    Index group_size = 4;

    // path and criterion
    int k_grid = 50;
    double ratio = 1e-3;
    double c_gic = 1.0;
    double c_xi = 0.5;
    bool log_n = false;
    std::optional<double> a_n;        // fixed penalty rate, overrides c_gic / log_n
    std::optional<double> psi_budget; // unset: min(dim, n) / 2
    std::optional<double> lambda;     // fit, and A4' in diagnose
    std::string method = "path";

    // solver
    int max_iter = 5000;
    double tol = 1e-7;

    // output
    std::string out;
    std::string out_dir;
    std::string trace;
    bool json = false;
    bool verbose = false;
    int threads = 0;

    // synthetic designs (experiment, diagnose)
    std::string design = "group";
    Index n = 200;
    std::vector<Index> ns{50, 100, 200, 400};
    int replicates = 100;
    std::uint64_t seed = 20240601;
    Index n_groups = 20;
    Index s_star = 3;
    double signal = 1.0;
    double noise_sd = 0.5;
    double covariate_corr = 0.0;
    Index p1 = 20;
    Index p2 = 20;
    Index r_star = 2;
    double sv_min = 2.0;
    bool compare_exhaustive = false;

    // assumption diagnostics
    std::optional<double> kappa; // unset: empirical Hessian heuristic
    double tau_sq = 0.0;
    double eta = 1.0;
    double c_prime = 4.7;
    int rsc_trials = 200;

    bool operator==(const RunConfig &) const = default;
};

/// Calls f(key, field, help) for every field, in a fixed order.
template <class C, class F>
void visit_fields(C &c, F &&f) {
    f("command", c.command, "fit | path | select | experiment | diagnose");
    f("data", c.data, "input data: CSV x1..xp,y (group, l1) or matrix JSON (nuclear)");
    f("family", c.family, "gaussian | logistic");
    f("reg", c.reg, "group | nuclear | l1");
    f("groups_file", c.groups_file, "JSON {\"groups\": [[0-based columns]]}");
    f("group_size", c.group_size, "contiguous group size when no groups file is given");
    f("k_grid", c.k_grid, "number of lambda grid points");
    f("ratio", c.ratio, "lambda_min / lambda_max");
    f("c_gic", c.c_gic, "penalty rate constant");
    f("c_xi", c.c_xi, "extraction threshold xi = c_xi * lambda");
    f("log_n", c.log_n, "multiply the penalty rate by log n");
    f("a_n", c.a_n, "fixed penalty rate (overrides c-gic and log-n)");
    f("psi_budget", c.psi_budget, "largest admissible Psi^2 (default min(dim, n) / 2)");
    f("lambda", c.lambda, "regularization level (fit; A4' check in diagnose)");
    f("method", c.method, "selector: path | exhaustive");
    f("max_iter", c.max_iter, "solver iteration cap");
    f("tol", c.tol, "solver KKT tolerance");
    f("out", c.out, "output file (default stdout)");
    f("out_dir", c.out_dir, "output directory");
    f("trace", c.trace, "write solver iterations as JSON lines to this file");
    f("json", c.json, "machine-readable JSON on stdout");
    f("verbose", c.verbose, "progress on stderr; per-replicate details.csv for experiment");
    f("threads", c.threads, "worker threads (0: all cores; STRUCTURED_GIC_THREADS overrides)");
    f("design", c.design, "synthetic design: group | lowrank");
    f("n", c.n, "sample size (diagnose)");
    f("ns", c.ns, "sample sizes (experiment)");
    f("replicates", c.replicates, "replicates per sample size");
    f("seed", c.seed, "master seed");
    f("n_groups", c.n_groups, "number of groups G (group design)");
    f("s_star", c.s_star, "active groups (group design)");
    f("signal", c.signal, "group norm of each active group");
    f("noise_sd", c.noise_sd, "noise standard deviation");
    f("covariate_corr", c.covariate_corr, "AR(1) covariate correlation");
    f("p1", c.p1, "rows of the coefficient matrix (lowrank design)");
    f("p2", c.p2, "columns of the coefficient matrix (lowrank design)");
    f("r_star", c.r_star, "true rank (lowrank design)");
    f("sv_min", c.sv_min, "smallest nonzero singular value (lowrank design)");
    f("compare_exhaustive", c.compare_exhaustive,
      "experiment: also run exhaustive selection within the budget");
    f("kappa", c.kappa, "RSC curvature hypothesis (default: empirical heuristic)");
    f("tau_sq", c.tau_sq, "RSC tolerance hypothesis");
    f("eta", c.eta, "RSC radius hypothesis");
    f("c_prime", c.c_prime, "constant of the strengthened beta-min check");
    f("rsc_trials", c.rsc_trials, "RSC probe directions");
}

inline std::string flag_name(const std::string &key) {
    std::string out = "--" + key;
    std::replace(out.begin(), out.end(), '_', '-');
    return out;
}

inline json to_json(const RunConfig &c) {
    json j = json::object();
    visit_fields(c, [&](const char *key, const auto &v, const char *) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::optional<double>>)
            j[key] = v ? json(*v) : json(nullptr);
        else
            j[key] = v;
    });
    return j;
}

inline void validate(const RunConfig &c) {
    auto one_of = [](const std::string &key, const std::string &v,
                     std::initializer_list<const char *> allowed) {
        for (const char *a : allowed)
            if (v == a)
                return;
        std::string list;
        for (const char *a : allowed)
            list += (list.empty() ? "" : ", ") + std::string(a);
        throw ConfigError(key, "'" + v + "' is not one of " + list);
    };
    auto positive = [](const std::string &key, double v) {
        if (!(v > 0) || !std::isfinite(v))
            throw ConfigError(key, "must be positive");
    };
    one_of("command", c.command, {"fit", "path", "select", "experiment", "diagnose"});
    one_of("family", c.family, {"gaussian", "logistic"});
    one_of("reg", c.reg, {"group", "nuclear", "l1"});
    one_of("method", c.method, {"path", "exhaustive"});
    one_of("design", c.design, {"group", "lowrank"});
    if (c.group_size < 1)
        throw ConfigError("group_size", "must be >= 1");
    if (c.k_grid < 2)
        throw ConfigError("k_grid", "must be >= 2");
    if (!(c.ratio > 0 && c.ratio < 1))
        throw ConfigError("ratio", "must be in (0, 1)");
    positive("c_gic", c.c_gic);
    if (!(c.c_xi >= 0) || !std::isfinite(c.c_xi))
        throw ConfigError("c_xi", "must be >= 0");
    if (c.a_n)
        positive("a_n", *c.a_n);
    if (c.psi_budget && !(*c.psi_budget >= 0))
        throw ConfigError("psi_budget", "must be >= 0");
    if (c.lambda)
        positive("lambda", *c.lambda);
    if (c.max_iter < 1)
        throw ConfigError("max_iter", "must be >= 1");
    positive("tol", c.tol);
    if (c.threads < 0)
        throw ConfigError("threads", "must be >= 0");
    if (c.n < 1)
        throw ConfigError("n", "must be >= 1");
    if (c.ns.empty())
        throw ConfigError("ns", "needs at least one sample size");
    for (Index v : c.ns)
        if (v < 1)
            throw ConfigError("ns", "sample sizes must be >= 1");
    if (c.replicates < 1)
        throw ConfigError("replicates", "must be >= 1");
    if (c.n_groups < 1)
        throw ConfigError("n_groups", "must be >= 1");
    if (c.s_star < 0 || c.s_star > c.n_groups)
        throw ConfigError("s_star", "must be in [0, n_groups]");
    if (!(c.signal >= 0))
        throw ConfigError("signal", "must be >= 0");
    if (!(c.noise_sd >= 0))
        throw ConfigError("noise_sd", "must be >= 0");
    if (!(c.covariate_corr >= 0 && c.covariate_corr < 1))
        throw ConfigError("covariate_corr", "must be in [0, 1)");
    if (c.p1 < 1 || c.p2 < 1)
        throw ConfigError(c.p1 < 1 ? "p1" : "p2", "must be >= 1");
    if (c.r_star < 0 || c.r_star > std::min(c.p1, c.p2))
        throw ConfigError("r_star", "must be in [0, min(p1, p2)]");
    positive("sv_min", c.sv_min);
    if (c.kappa)
        positive("kappa", *c.kappa);
    if (!(c.tau_sq >= 0))
        throw ConfigError("tau_sq", "must be >= 0");
    if (!(c.eta >= 0))
        throw ConfigError("eta", "must be >= 0");
    positive("c_prime", c.c_prime);
    if (c.rsc_trials < 0)
        throw ConfigError("rsc_trials", "must be >= 0");
}

/// Parses a JSON config. Missing keys keep their defaults; unknown keys and
/// ill-typed values raise ConfigError naming the key.
inline RunConfig from_json(const json &j) {
    if (!j.is_object())
        throw ConfigError("<config>", "expected a JSON object");
    RunConfig c;
    std::vector<std::string> known;
    visit_fields(c, [&](const char *key, auto &v, const char *) {
        known.emplace_back(key);
        const auto it = j.find(key);
        if (it == j.end())
            return;
        using T = std::decay_t<decltype(v)>;
        try {
            if constexpr (std::is_same_v<T, std::optional<double>>) {
                if (it->is_null())
                    v.reset();
                else if (it->is_number())
                    v = it->template get<double>();
                else
                    throw ConfigError(key, "expected a number or null");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean())
                    throw ConfigError(key, "expected true or false");
                v = it->template get<bool>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string())
                    throw ConfigError(key, "expected a string");
                v = it->template get<std::string>();
            } else if constexpr (std::is_same_v<T, double>) {
                if (!it->is_number())
                    throw ConfigError(key, "expected a number");
                v = it->template get<double>();
            } else if constexpr (std::is_same_v<T, std::vector<Index>>) {
                if (!it->is_array())
                    throw ConfigError(key, "expected an array of integers");
                for (const auto &e : *it)
                    if (!e.is_number_integer())
                        throw ConfigError(key, "expected an array of integers");
                v = it->template get<T>();
            } else {
                if (!it->is_number_integer())
                    throw ConfigError(key, "expected an integer");
                if constexpr (std::is_unsigned_v<T>)
                    if (!it->is_number_unsigned())
                        throw ConfigError(key, "expected a non-negative integer");
                v = it->template get<T>();
            }
        } catch (const json::exception &e) {
            throw ConfigError(key, e.what());
        }
    });
    for (const auto &item : j.items())
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            throw ConfigError(item.key(), "unknown key");
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// Running

/// Exit codes.
enum : int { kOk = 0, kConfigError = 2, kNumericalError = 3 };

struct Problem {
    Dataset data;
    Regularizer reg;
};

inline Family parse_family(const std::string &s) {
    return s == "logistic" ? Family::Logistic : Family::Gaussian;
}

inline Problem load_problem(const RunConfig &c) {
    if (c.data.empty())
        throw ConfigError("data", "missing --data");
    if (c.reg == "nuclear") {
        if (c.family != "gaussian")
            throw ConfigError("family", "the nuclear regularizer supports gaussian trace regression only");
        return {Dataset{io::matrix_data_from_json(io::read_json_file(c.data), c.data)},
                Regularizer::nuclear()};
    }
    TabularData d = io::read_csv(c.data, parse_family(c.family));
    const Index p = d.X.cols();
    if (c.reg == "l1")
        return {Dataset{std::move(d)}, Regularizer::l1(p)};
    GroupPartition part = c.groups_file.empty() ? GroupPartition::contiguous(p, c.group_size)
                                                : io::read_groups_file(c.groups_file);
    if (part.dim() != p)
        throw ConfigError("groups_file", "groups cover " + std::to_string(part.dim()) +
                                             " columns but " + c.data + " has " +
                                             std::to_string(p));
    return {Dataset{std::move(d)}, Regularizer::group_l2(make_partition(std::move(part)))};
}

inline PenaltySchedule schedule_of(const RunConfig &c, const LossProblem &L, const Regularizer &reg) {
    if (c.a_n)
        return PenaltySchedule::custom(*c.a_n);
    return schedule_for(L, reg, c.c_gic, c.log_n);
}

inline double budget_of(const RunConfig &c, const LossProblem &L) {
    return c.psi_budget ? *c.psi_budget : default_psi_budget(L);
}

inline json theta_json(const ParamPoint &t) {
    if (t.is_matrix())
        return io::matrix_to_json(t.values());
    return std::vector<double>(t.values().data(), t.values().data() + t.values().size());
}

inline std::string support_cell(const ModelSubspace &M) {
    std::string out;
    for (Index g : M.group_support().S)
        out += (out.empty() ? "" : " ") + std::to_string(g);
    return out;
}

inline std::string support_braces(const ModelSubspace &M) {
    if (!M.is_group())
        return "rank " + std::to_string(M.size());
    std::string out = "{";
    for (Index g : M.group_support().S)
        out += (out.size() > 1 ? "," : "") + std::to_string(g);
    return out + "}";
}

/// Path table: one row per lambda, numbers at 12 significant digits. Rows
/// without a refit (unconverged or over budget) leave the refit cells empty.
inline std::string path_csv(const PathSelection &sel, double an) {
    std::string out = "lambda,kkt,support_size_or_rank,loss,psi_sq,a_n,gic,selected,status\n";
    for (std::size_t i = 0; i < sel.path.size(); ++i) {
        const PathPoint &p = sel.path[i];
        out += io::fmt(p.lambda) + "," + io::fmt(p.kkt) + "," + std::to_string(p.M.size()) + ",";
        if (p.gic)
            out += io::fmt(p.gic->loss) + "," + io::fmt(p.gic->psi_sq) + "," + io::fmt(an) + "," +
                   io::fmt(p.gic->gic) + ",";
        else
            out += ",," + io::fmt(an) + ",,";
        out += (sel.selected && *sel.selected == i) ? "1," : "0,";
        out += !p.converged ? "unconverged" : !p.within_budget ? "over_budget" : "ok";
        out += "\n";
    }
    return out;
}

/// Candidate table of the exhaustive selector.
inline std::string exhaustive_csv(const ExhaustiveSelection &sel) {
    std::string out = "S,support_size_or_rank,loss,psi_sq,a_n,gic,selected,status\n";
    for (std::size_t i = 0; i < sel.results.size(); ++i) {
        const GicResult &r = sel.results[i];
        out += support_cell(r.M) + "," + std::to_string(r.M.size()) + "," + io::fmt(r.loss) + "," +
               io::fmt(r.psi_sq) + "," + io::fmt(r.a_n) + "," + io::fmt(r.gic) + "," +
               (i == sel.selected ? "1," : "0,") +
               (!r.converged ? "unconverged" : r.singular ? "singular" : "ok") + "\n";
    }
    return out;
}

inline json model_json(const GicResult &r, std::optional<double> lambda) {
    json j{{"model", io::to_json(r.M)}, {"loss", r.loss},  {"psi_sq", r.psi_sq},
           {"a_n", r.a_n},             {"gic", r.gic},    {"singular", r.singular},
           {"converged", r.converged}, {"theta", theta_json(r.theta)}};
    j["lambda"] = lambda ? json(*lambda) : json(nullptr);
    return j;
}

namespace detail {

/// Destination files of a table + model run.
struct Sinks {
    std::string table;
    std::string model;
};

inline Sinks sinks(const RunConfig &c, const std::string &table_name) {
    if (!c.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(c.out_dir, ec);
        if (ec)
            throw ConfigError("out_dir", "cannot create " + c.out_dir);
        const std::filesystem::path dir(c.out_dir);
        return {(dir / table_name).string(), (dir / "model.json").string()};
    }
    if (!c.out.empty()) {
        std::filesystem::path model(c.out);
        model.replace_extension(".model.json");
        return {c.out, model.string()};
    }
    return {};
}

struct TraceSink {
    std::string text;
    void attach(SolveOptions &o) {
        o.trace = [this](const SolveTraceRow &r) {
            text += json{{"lambda", r.lambda},
                         {"iter", r.iter},
                         {"objective", r.objective},
                         {"kkt", r.kkt_residual},
                         {"step", r.step}}
                        .dump() +
                    "\n";
        };
    }
};

inline SolveOptions solve_options(const RunConfig &c) {
    SolveOptions o;
    o.max_iter = c.max_iter;
    o.tol_kkt = c.tol;
    return o;
}

inline void log(const RunConfig &c, std::ostream &err, const std::string &msg) {
    if (c.verbose)
        err << "[sgic] " << msg << "\n";
}

inline std::string rate_cell(double v) { return std::isnan(v) ? "" : io::fmt(v); }

} // namespace detail

inline int run_fit(const RunConfig &c, std::ostream &out, std::ostream &err) {
    if (!c.lambda)
        throw ConfigError("lambda", "fit needs --lambda");
    Problem pr = load_problem(c);
    const LossProblem L(pr.data);
    SolveOptions opts = detail::solve_options(c);
    detail::TraceSink trace;
    if (!c.trace.empty())
        trace.attach(opts);
    const SolveResult res = solve_regularized(L, pr.reg, *c.lambda, L.zero(), opts);
    const ModelSubspace M = extract_model(res.theta, pr.reg, xi_n(*c.lambda, c.c_xi));
    json j{{"lambda", *c.lambda},       {"objective", res.objective},
           {"kkt", res.kkt},            {"iterations", res.iterations},
           {"converged", res.converged}, {"model", io::to_json(M)},
           {"theta", theta_json(res.theta)}};
    const std::string text = j.dump(2) + "\n";
    if (!c.trace.empty())
        io::write_file(c.trace, trace.text);
    if (!c.out.empty())
        io::write_file(c.out, text);
    else
        out << text;
    if (!res.converged) {
        err << "fit: solver did not reach tol " << c.tol << " (kkt " << res.kkt << ")\n";
        return kNumericalError;
    }
    detail::log(c, err, "fit converged in " + std::to_string(res.iterations) + " iterations");
    return kOk;
}

/// `path` and `select`.
inline int run_select(const RunConfig &c, std::ostream &out, std::ostream &err) {
    Problem pr = load_problem(c);
    const LossProblem L(pr.data);
    const PenaltySchedule schedule = schedule_of(c, L, pr.reg);
    const double an = a_n(schedule);
    const double budget = budget_of(c, L);
    const bool exhaustive = c.command == "select" && c.method == "exhaustive";

    std::string table;
    std::optional<GicResult> chosen;
    std::optional<double> lambda_hat;
    std::size_t unconverged = 0;
    if (exhaustive) {
        if (pr.reg.is_nuclear())
            throw ConfigError("method", "exhaustive selection needs the group or l1 regularizer");
        const auto cands = all_group_supports(
            pr.reg.partition(), static_cast<Index>(std::floor(std::min(budget, 1e9))));
        if (cands.size() > (std::size_t{1} << 22))
            throw ConfigError("psi_budget", "too many candidate supports (" +
                                                std::to_string(cands.size()) + ")");
        detail::log(c, err, "exhaustive selection over " + std::to_string(cands.size()) +
                                " supports");
        const ExhaustiveSelection sel = select_exhaustive(L, cands, schedule, budget, c.threads);
        table = exhaustive_csv(sel);
        chosen = sel.best();
        for (const auto &r : sel.results)
            unconverged += !r.converged;
    } else {
        PathOptions popts;
        popts.c_xi = c.c_xi;
        popts.psi_budget = budget;
        popts.solve = detail::solve_options(c);
        popts.threads = c.threads;
        detail::TraceSink trace;
        if (!c.trace.empty())
            trace.attach(popts.solve);
        const auto grid = lambda_grid(L, pr.reg, c.k_grid, c.ratio);
        detail::log(c, err, "path over " + std::to_string(grid.size()) + " lambdas from " +
                                io::fmt(grid.front()));
        const PathSelection sel = select_on_path(L, pr.reg, grid, schedule, popts);
        if (!c.trace.empty())
            io::write_file(c.trace, trace.text);
        table = path_csv(sel, an);
        unconverged = sel.unconverged_count();
        if (sel.selected) {
            chosen = sel.gic_hat();
            lambda_hat = sel.lambda_hat();
        }
    }

    const detail::Sinks sinks = detail::sinks(c, exhaustive ? "candidates.csv" : "path.csv");
    json model = chosen ? model_json(*chosen, lambda_hat) : json{{"model", nullptr}};
    model["method"] = exhaustive ? "exhaustive" : "path";
    model["unconverged_points"] = unconverged;
    if (!sinks.table.empty()) {
        io::write_file(sinks.table, table);
        io::write_file(sinks.model, model.dump(2) + "\n");
    }

    if (c.json) {
        json j = model;
        j["table"] = table;
        out << j.dump(2) << "\n";
    } else if (c.command == "path") {
        if (sinks.table.empty())
            out << table;
    } else {
        if (chosen)
            out << "selected " << support_braces(chosen->M) << " gic " << io::fmt(chosen->gic)
                << (lambda_hat ? " lambda " + io::fmt(*lambda_hat) : std::string()) << "\n";
        else
            out << "selected none\n";
        out << table;
    }
    if (unconverged > 0)
        err << "warning: " << unconverged << " unconverged point(s), flagged in the status column\n";
    if (!chosen) {
        err << "no converged in-budget model to select\n";
        return kNumericalError;
    }
    return kOk;
}

inline DesignSpec design_of(const RunConfig &c) {
    if (c.design == "lowrank") {
        LowRankDesign d;
        d.n = c.n;
        d.p1 = c.p1;
        d.p2 = c.p2;
        d.r_star = c.r_star;
        d.sv_min = c.sv_min;
        d.noise_sd = c.noise_sd;
        d.seed = c.seed;
        return d;
    }
    GroupGlmDesign d;
    d.n = c.n;
    d.G = c.n_groups;
    d.m = c.group_size;
    d.s_star = c.s_star;
    d.signal = c.signal;
    d.family = parse_family(c.family);
    d.noise_sd = c.noise_sd;
    d.covariate_corr = c.covariate_corr;
    d.seed = c.seed;
    return d;
}

inline std::string report_csv(const McReport &r) {
    std::string out = "n,replicates,failures,exact_recovery_rate,mean_support_hamming,"
                      "mean_error_norm,mean_selected_size,path_coverage_rate,"
                      "exhaustive_agreement_rate,exhaustive_compared,truth_strict_min_rate\n";
    for (const McRow &row : r.rows)
        out += std::to_string(row.n) + "," + std::to_string(row.replicates) + "," +
               std::to_string(row.failures) + "," + io::fmt(row.exact_recovery_rate) + "," +
               io::fmt(row.mean_support_hamming) + "," + io::fmt(row.mean_error_norm) + "," +
               io::fmt(row.mean_selected_size) + "," + detail::rate_cell(row.path_coverage_rate) +
               "," + detail::rate_cell(row.exhaustive_agreement_rate) + "," +
               std::to_string(row.exhaustive_compared) + "," +
               detail::rate_cell(row.truth_strict_min_rate) + "\n";
    return out;
}

inline std::string details_csv(const McReport &r) {
    auto tri = [](const std::optional<bool> &b) { return b ? std::string(*b ? "1" : "0") : ""; };
    std::string out = "n,replicate,ok,exact_recovery,hamming,error_norm,selected_size,"
                      "path_contains_truth,agrees_with_exhaustive,truth_strict_gic_min,"
                      "unconverged_points,failure\n";
    for (const ReplicateRecord &d : r.details) {
        std::string failure = d.failure;
        std::replace(failure.begin(), failure.end(), ',', ';');
        std::replace(failure.begin(), failure.end(), '\n', ' ');
        out += std::to_string(d.n) + "," + std::to_string(d.replicate) + "," +
               (d.ok ? "1," : "0,") + (d.exact_recovery ? "1," : "0,") +
               (d.ok ? io::fmt(d.hamming) + "," + io::fmt(d.error_norm) + "," +
                           io::fmt(d.selected_size)
                     : std::string(",,")) +
               "," + tri(d.path_contains_truth) + "," + tri(d.agrees_with_exhaustive) + "," +
               tri(d.truth_strict_gic_min) + "," + std::to_string(d.unconverged_points) + "," +
               failure + "\n";
    }
    return out;
}

inline json report_json(const McReport &r) {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    json rows = json::array();
    for (const McRow &row : r.rows)
        rows.push_back({{"n", row.n},
                        {"replicates", row.replicates},
                        {"failures", row.failures},
                        {"exact_recovery_rate", row.exact_recovery_rate},
                        {"mean_support_hamming", row.mean_support_hamming},
                        {"mean_error_norm", row.mean_error_norm},
                        {"mean_selected_size", row.mean_selected_size},
                        {"path_coverage_rate", num(row.path_coverage_rate)},
                        {"exhaustive_agreement_rate", num(row.exhaustive_agreement_rate)},
                        {"exhaustive_compared", row.exhaustive_compared},
                        {"truth_strict_min_rate", num(row.truth_strict_min_rate)}});
    json details = json::array();
    auto tri = [](const std::optional<bool> &b) { return b ? json(*b) : json(nullptr); };
    for (const ReplicateRecord &d : r.details)
        details.push_back({{"n", d.n},
                           {"replicate", d.replicate},
                           {"ok", d.ok},
                           {"failure", d.failure},
                           {"exact_recovery", d.exact_recovery},
                           {"hamming", d.hamming},
                           {"error_norm", d.error_norm},
                           {"selected_size", d.selected_size},
                           {"path_contains_truth", tri(d.path_contains_truth)},
                           {"agrees_with_exhaustive", tri(d.agrees_with_exhaustive)},
                           {"truth_strict_gic_min", tri(d.truth_strict_gic_min)},
                           {"unconverged_points", d.unconverged_points}});
    return json{{"rows", std::move(rows)}, {"details", std::move(details)}};
}

inline int run_experiment(const RunConfig &c, std::ostream &out, std::ostream &err) {
    if (c.out_dir.empty())
        throw ConfigError("out_dir", "experiment needs --out-dir");
    if (c.a_n)
        throw ConfigError("a_n", "experiment derives a_n from each design; unset it");
    McConfig mc;
    mc.design = design_of(c);
    mc.ns = c.ns;
    mc.replicates = c.replicates;
    mc.seed = c.seed;
    mc.threads = c.threads;
    mc.selector.kind = c.method == "exhaustive" ? SelectorConfig::Kind::Exhaustive
                                                : SelectorConfig::Kind::Path;
    mc.selector.k_grid = c.k_grid;
    mc.selector.ratio = c.ratio;
    mc.selector.c_gic = c.c_gic;
    mc.selector.log_n_factor = c.log_n;
    mc.selector.c_xi = c.c_xi;
    if (c.psi_budget)
        mc.selector.psi_budget = *c.psi_budget;
    mc.selector.compare_exhaustive = c.compare_exhaustive;
    mc.selector.solve = detail::solve_options(c);
    if (c.design == "lowrank" && (c.method == "exhaustive" || c.compare_exhaustive))
        throw ConfigError("method", "exhaustive selection needs the group design");

    detail::log(c, err, "experiment: " + std::to_string(mc.ns.size()) + " sample sizes x " +
                            std::to_string(mc.replicates) + " replicates");
    const McReport report = monte_carlo(mc);

    std::error_code ec;
    std::filesystem::create_directories(c.out_dir, ec);
    if (ec)
        throw ConfigError("out_dir", "cannot create " + c.out_dir);
    const std::filesystem::path dir(c.out_dir);
    const std::string csv = report_csv(report);
    json j = report_json(report);
    j["config"] = to_json(c);
    io::write_file((dir / "report.csv").string(), csv);
    io::write_file((dir / "report.json").string(), j.dump(2) + "\n");
    if (c.verbose)
        io::write_file((dir / "details.csv").string(), details_csv(report));
    if (c.json)
        out << json{{"rows", j["rows"]}}.dump(2) << "\n";
    else
        out << csv;
    return kOk;
}

inline json assumption_json(const AssumptionReport &r) {
    return json{{"kappa", r.kappa},
                {"tau_sq", r.tau_sq},
                {"eta", r.eta},
                {"lambda", r.lambda},
                {"a_n", r.a_n},
                {"A1", {{"holds", r.a1}, {"psi_sq_star", r.psi_sq_star}, {"psi_budget", r.psi_budget}}},
                {"A3", {{"holds", r.a3}, {"sqrt_a_n", r.a3_lhs}, {"bound", r.a3_rhs}}},
                {"A4", {{"holds", r.a4}, {"beta_min", r.beta_min}, {"bound", r.a4_rhs},
                        {"margin", r.a4_margin}}},
                {"A4_prime", {{"holds", r.a4p}, {"beta_min", r.beta_min}, {"bound", r.a4p_rhs},
                              {"c", r.c_prime}}},
                {"RSC", {{"holds", r.rsc}, {"violation_rate", r.rsc_violation_rate}}}};
}

inline int run_diagnose(const RunConfig &c, std::ostream &out, std::ostream &) {
    const SyntheticInstance inst = generate(design_of(c), c.n, c.seed);
    const LossProblem L(inst.data);
    AssumptionInputs in;
    in.kappa = c.kappa.value_or(0.0);
    in.tau_sq = c.tau_sq;
    in.eta = c.eta;
    in.lambda = c.lambda.value_or(0.0);
    in.psi_budget = budget_of(c, L);
    in.c_prime = c.c_prime;
    in.rsc_trials = c.rsc_trials;
    in.seed = c.seed;
    const AssumptionReport r = check_assumptions(inst, schedule_of(c, L, inst.reg), in);
    const std::string text = assumption_json(r).dump(2) + "\n";
    if (!c.out.empty())
        io::write_file(c.out, text);
    else
        out << text;
    return kOk;
}

/// Runs a validated config. Returns 0, 2 (config or data error) or 3
/// (numerical failure; outputs written so far are flagged).
inline int run(const RunConfig &c, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
    try {
        validate(c);
        if (c.command == "fit")
            return run_fit(c, out, err);
        if (c.command == "path" || c.command == "select")
            return run_select(c, out, err);
        if (c.command == "experiment")
            return run_experiment(c, out, err);
        return run_diagnose(c, out, err);
    } catch (const ConfigError &e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const InvalidShape &e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DegenerateData &e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const PsiBudgetExceeded &e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument &e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception &e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumericalError;
    }
}

/// Command-line front end: `sgic <command> [flags]`. Flags override values
/// loaded with --config.
inline int main_with_args(int argc, const char *const *argv, std::ostream &out = std::cout,
                          std::ostream &err = std::cerr) {
    CLI::App app{"Model selection with the generalized information criterion over "
                 "structured regularization paths",
                 "sgic"};
    app.option_defaults()->always_capture_default();
    RunConfig flags;
    std::string config_path;
    std::vector<std::pair<std::string, CLI::Option *>> options;
    visit_fields(flags, [&](const char *key, auto &v, const char *help) {
        using T = std::decay_t<decltype(v)>;
        CLI::Option *opt;
        if (std::string(key) == "command")
            opt = app.add_option("command", v, help);
        else if constexpr (std::is_same_v<T, bool>)
            opt = app.add_flag(flag_name(key), v, help);
        else if constexpr (std::is_same_v<T, std::optional<double>>)
            opt = app.add_option_function<double>(
                flag_name(key), [&v](const double &x) { v = x; }, help);
        else
            opt = app.add_option(flag_name(key), v, help);
        options.emplace_back(key, opt);
    });
    app.add_option("--config", config_path, "JSON file with any of the keys above");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError &e) {
        app.exit(e, out, err);
        return kConfigError;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty())
            cfg = from_json(io::read_json_file(config_path));
        json merged = to_json(cfg);
        const json given = to_json(flags);
        for (const auto &[key, opt] : options)
            if (opt->count() > 0)
                merged[key] = given[key];
        cfg = from_json(merged);
    } catch (const ConfigError &e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }
    return run(cfg, out, err);
}

} // namespace sgic::cli
