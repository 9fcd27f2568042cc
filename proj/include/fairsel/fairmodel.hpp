#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairsel/dataset.hpp"
#include "fairsel/milp.hpp"
#include "fairsel/propensity.hpp"
#include "fairsel/simplex.hpp"

namespace fairsel {

// Scores within this band of a decision boundary count as ties. Solver
// feasibility is certified at 1e-7, so optima routinely park rejected
// candidates at score 0 up to that residual; the band must sit above it and
// far below the margin for tie-breaking to stay deterministic.
inline constexpr double kDecisionTol = 1e-6;

// Per-stage linear selection rule. Stage t scores the stacked covariates of
// stages 1..t; a candidate advances on score > 0, ties go against selection.
// The margin is the epsilon the policy was trained with.
struct PolicyParams {
    std::vector<std::vector<double>> w;  // w[t] over stacked stage dims
    std::vector<double> b;
    double epsilon = 1e-3;

    int n_stages() const { return static_cast<int>(b.size()); }

    double score(int t, const std::vector<double>& xhat) const {
        if (t < 0 || t >= n_stages()) throw ConfigError("PolicyParams: stage out of range");
        if (xhat.size() != w[t].size())
            throw DataError("PolicyParams: covariate dimension mismatch");
        double s = b[t];
        for (size_t j = 0; j < xhat.size(); ++j) s += w[t][j] * xhat[j];
        return s;
    }

    bool selects(int t, const std::vector<double>& xhat) const {
        return score(t, xhat) > kDecisionTol;
    }
};

struct DinkelbachStep {
    double rho = 0.0;   // ratio guess entering the subproblem
    double z = 0.0;     // normalized subproblem optimum
    long long nodes = 0;
    double gap = 0.0;
};

struct TrainReport {
    std::vector<DinkelbachStep> steps;
    double final_ratio = 0.0;             // weighted margin-model precision
    double train_precision_strict = 0.0;  // strict funnel, beta^T-weighted
    double u_strict = 0.0;
    double u_eps = 0.0;
    int binding_upper = 0;
    int binding_lower = 0;
    int binding_consistency = 0;
    int binding_fairness = 0;
    bool big_m_tight = false;  // a linking row sits within 1e-6*M of its M bound
    long long total_nodes = 0;
    double max_gap = 0.0;
};

struct TrainLimits {
    MilpLimits milp;
    double dink_tol = 1e-7;
    int max_iterations = 30;
};

// The mixed-binary program of the selection model with the ratio objective
// left open: rows never depend on the ratio guess, only the objective does.
struct FairProgram {
    MilpInstance inst;
    int T = 0;
    int K = 0;                    // |I^T|
    std::vector<int> ids;         // panel candidate ids, in final-set order
    std::vector<int> num_wb_at;   // first variable of stage t's (W, b) block
    int num_wb = 0;
    std::vector<double> big_m;    // per stage
    std::vector<int> stacked_dim;  // per stage
    std::vector<int8_t> y, a;                 // per k
    std::vector<double> beta_T;               // per k
    double sT = 0.0;
    double margin = 0.0;

    int g_index(int t, int k) const { return num_wb + t * K + k; }
    int p_index(int t, int k) const { return num_wb + (T + t) * K + k; }

    void set_rho(double rho) {
        std::fill(inst.lp.objective.begin(), inst.lp.objective.end(), 0.0);
        for (int k = 0; k < K; ++k)
            inst.lp.objective[g_index(T - 1, k)] =
                beta_T[k] / sT * ((y[k] ? 1.0 : 0.0) - rho);
    }

    // N/D of the final-stage selection encoded in a solution vector.
    double ratio_of(const std::vector<double>& x) const {
        double num = 0.0, den = 0.0;
        for (int k = 0; k < K; ++k) {
            if (x[g_index(T - 1, k)] < 0.5) continue;
            den += beta_T[k];
            if (y[k]) num += beta_T[k];
        }
        return den > 0.0 ? num / den : 0.0;
    }

    PolicyParams extract_policy(const std::vector<double>& x) const {
        PolicyParams pol;
        pol.epsilon = margin;
        pol.w.resize(T);
        pol.b.resize(T);
        for (int t = 0; t < T; ++t) {
            const int base = num_wb_at[t];
            pol.w[t].assign(x.begin() + base, x.begin() + base + stacked_dim[t]);
            pol.b[t] = x[base + stacked_dim[t]];
        }
        return pol;
    }

    std::vector<std::vector<std::vector<double>>> xhat_rows;  // [t][k][j]
};

namespace detail {

// Group membership on I^T for the fairness rows.
inline std::vector<std::vector<int>> fairness_groups(const std::vector<int8_t>& a,
                                                     const std::vector<int8_t>& y,
                                                     FairnessNotion notion) {
    std::vector<std::vector<int>> grp(2);
    const int K = static_cast<int>(a.size());
    for (int k = 0; k < K; ++k) {
        if (notion == FairnessNotion::EqualOpportunity && !y[k]) continue;
        grp[a[k] ? 1 : 0].push_back(k);
    }
    for (int g = 0; g < 2; ++g)
        if (grp[g].empty())
            throw DataError(std::string("fairness group ") + (g ? "1" : "0") +
                            " is empty on the final stage" +
                            (notion == FairnessNotion::EqualOpportunity
                                 ? " (no positive outcomes)"
                                 : ""));
    return grp;
}

}  // namespace detail

inline FairProgram build_fair_program(const StagePanel& panel, const WeightSet& weights,
                                      const SelectionSpec& spec) {
    spec.validate();
    if (spec.n_stages() != panel.n_stages)
        throw ConfigError("build_fair_program: spec stage count mismatch");
    FairProgram prog;
    prog.T = panel.n_stages;
    prog.K = static_cast<int>(panel.final_set().size());
    prog.ids = panel.final_set();
    prog.margin = spec.margin;
    if (weights.ids != prog.ids)
        throw DataError("build_fair_program: weights not aligned with the final set");
    if (prog.K == 0) throw DataError("build_fair_program: empty final set");
    if (weights.n_stages() != prog.T)
        throw DataError("build_fair_program: weights stage count mismatch");
    for (int t = 0; t < prog.T; ++t)
        if (static_cast<int>(weights.beta[t].size()) != prog.K)
            throw DataError("build_fair_program: weight vector length mismatch");

    const int T = prog.T, K = prog.K;
    prog.y.resize(K);
    prog.a.resize(K);
    prog.beta_T = weights.beta[T - 1];
    prog.sT = weights.normalizer(T - 1);
    for (int k = 0; k < K; ++k) {
        prog.y[k] = static_cast<int8_t>(panel.outcome_of(prog.ids[k]));
        prog.a[k] = panel.sensitive[prog.ids[k]];
    }

    // Stacked covariates and the per-stage big-M derived from the box bounds.
    prog.xhat_rows.assign(T, {});
    prog.stacked_dim.resize(T);
    prog.big_m.resize(T);
    for (int t = 0; t < T; ++t) {
        prog.xhat_rows[t].reserve(K);
        double max_l1 = 0.0;
        for (int k = 0; k < K; ++k) {
            prog.xhat_rows[t].push_back(panel.stacked_covariates(t, prog.ids[k]));
            double l1 = 0.0;
            for (double v : prog.xhat_rows[t].back()) l1 += std::fabs(v);
            max_l1 = std::max(max_l1, l1);
        }
        prog.stacked_dim[t] = static_cast<int>(prog.xhat_rows[t][0].size());
        const double needed = spec.w_max * max_l1 + spec.b_max;
        if (spec.big_m > 0.0) {
            if (spec.big_m < needed + spec.margin)
                throw ConfigError("build_fair_program: big_m too small for the data bounds");
            prog.big_m[t] = spec.big_m;
        } else {
            prog.big_m[t] = 1.05 * needed;
        }
    }

    prog.num_wb_at.resize(T);
    int nv = 0;
    for (int t = 0; t < T; ++t) {
        prog.num_wb_at[t] = nv;
        nv += prog.stacked_dim[t] + 1;
    }
    prog.num_wb = nv;
    nv += 2 * T * K;

    LpInstance& lp = prog.inst.lp;
    lp.num_vars = nv;
    lp.maximize = true;
    lp.objective.assign(nv, 0.0);
    lp.lower.assign(nv, 0.0);
    lp.upper.assign(nv, 1.0);
    for (int t = 0; t < T; ++t) {
        const int base = prog.num_wb_at[t];
        for (int j = 0; j < prog.stacked_dim[t]; ++j) {
            lp.lower[base + j] = -spec.w_max;
            lp.upper[base + j] = spec.w_max;
        }
        lp.lower[base + prog.stacked_dim[t]] = -spec.b_max;
        lp.upper[base + prog.stacked_dim[t]] = spec.b_max;
    }
    prog.inst.binary_vars.clear();
    for (int v = prog.num_wb; v < nv; ++v) prog.inst.binary_vars.push_back(v);

    auto fresh_row = [nv](Rel rel, double rhs) {
        LpRow row;
        row.coeffs.assign(nv, 0.0);
        row.rel = rel;
        row.rhs = rhs;
        return row;
    };

    // Upper selection ratios, one per stage.
    for (int t = 0; t < T; ++t) {
        double total = 0.0;
        for (int k = 0; k < K; ++k) total += weights.beta[t][k];
        LpRow row = fresh_row(Rel::LE, spec.upper_ratios[t] * total);
        for (int k = 0; k < K; ++k) row.coeffs[prog.g_index(t, k)] = weights.beta[t][k];
        lp.rows.push_back(std::move(row));
    }

    // Lower selection ratio at the final stage, via the rejected mass.
    {
        LpRow row = fresh_row(Rel::LE, (1.0 - spec.lower_ratio_final) * prog.sT);
        for (int k = 0; k < K; ++k) row.coeffs[prog.p_index(T - 1, k)] = prog.beta_T[k];
        lp.rows.push_back(std::move(row));
    }

    // Consistency between consecutive stages.
    for (int t = 0; t + 1 < T; ++t)
        for (int k = 0; k < K; ++k) {
            LpRow row = fresh_row(Rel::LE, 1.0);
            row.coeffs[prog.g_index(t + 1, k)] = 1.0;
            row.coeffs[prog.p_index(t, k)] = 1.0;
            lp.rows.push_back(std::move(row));
        }

    // Fairness in both orderings on the final stage.
    {
        auto grp = detail::fairness_groups(prog.a, prog.y, spec.notion);
        double mass[2] = {0.0, 0.0};
        for (int g = 0; g < 2; ++g)
            for (int k : grp[g]) mass[g] += prog.beta_T[k];
        for (int g = 0; g < 2; ++g) {
            const int other = 1 - g;
            LpRow row = fresh_row(Rel::LE, 1.0 + spec.eta);
            for (int k : grp[g]) row.coeffs[prog.g_index(T - 1, k)] = prog.beta_T[k] / mass[g];
            for (int k : grp[other])
                row.coeffs[prog.p_index(T - 1, k)] = prog.beta_T[k] / mass[other];
            lp.rows.push_back(std::move(row));
        }
    }

    // Big-M linking of scores to the indicator variables.
    for (int t = 0; t < T; ++t) {
        const int base = prog.num_wb_at[t];
        const int dim = prog.stacked_dim[t];
        const double M = prog.big_m[t];
        for (int k = 0; k < K; ++k) {
            const auto& xr = prog.xhat_rows[t][k];

            LpRow lo = fresh_row(Rel::GE, -M);  // g = 1 forces score >= 0
            for (int j = 0; j < dim; ++j) lo.coeffs[base + j] = xr[j];
            lo.coeffs[base + dim] = 1.0;
            lo.coeffs[prog.g_index(t, k)] = -M;
            lp.rows.push_back(std::move(lo));

            LpRow hi = fresh_row(Rel::LE, 0.0);  // g = 0 forces score <= 0
            for (int j = 0; j < dim; ++j) hi.coeffs[base + j] = xr[j];
            hi.coeffs[base + dim] = 1.0;
            hi.coeffs[prog.g_index(t, k)] = -M;
            lp.rows.push_back(std::move(hi));

            LpRow marg = fresh_row(Rel::LE, -spec.margin);  // p = 0 forces score >= margin
            for (int j = 0; j < dim; ++j) marg.coeffs[base + j] = -xr[j];
            marg.coeffs[base + dim] = -1.0;
            marg.coeffs[prog.p_index(t, k)] = -M;
            lp.rows.push_back(std::move(marg));
        }
    }

    // Funnel logic the search can exploit directly: rejection at a stage
    // forces the margin miss and every later selection off; selection at a
    // later stage needs the full margin at every earlier one. All of these
    // follow from the rows above at integer points.
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
            const int g = prog.g_index(t, k);
            const int p = prog.p_index(t, k);
            prog.inst.implications.push_back({g, 0, p, 1});
            prog.inst.implications.push_back({p, 0, g, 1});
            if (t + 1 < T) {
                const int g_next = prog.g_index(t + 1, k);
                prog.inst.implications.push_back({g, 0, g_next, 0});
                prog.inst.implications.push_back({g_next, 1, g, 1});
                prog.inst.implications.push_back({p, 1, g_next, 0});
                prog.inst.implications.push_back({g_next, 1, p, 0});
            }
        }
    }
    // The objective lives on the final-stage selections; settle those first.
    prog.inst.branch_priority.assign(nv, 0);
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k)
            prog.inst.branch_priority[prog.g_index(t, k)] = (t == T - 1) ? 2 : 1;

    prog.set_rho(0.0);
    prog.inst.validate();
    return prog;
}

inline MilpInstance build_subproblem(const StagePanel& panel, const WeightSet& weights,
                                     const SelectionSpec& spec, double rho) {
    FairProgram prog = build_fair_program(panel, weights, spec);
    prog.set_rho(rho);
    return std::move(prog.inst);
}

namespace detail {

// Rounds an LP-relaxation point to a candidate incumbent: rescale the policy
// away from the margin band, then rederive the indicators from the scores.
inline bool round_fair_point(const FairProgram& prog, const SelectionSpec& spec,
                             const std::vector<double>& relax, std::vector<double>& out) {
    PolicyParams pol = prog.extract_policy(relax);
    double scale = std::numeric_limits<double>::infinity();
    for (int t = 0; t < prog.T; ++t) {
        for (double v : pol.w[t])
            if (std::fabs(v) > 1e-12) scale = std::min(scale, spec.w_max / std::fabs(v));
        if (std::fabs(pol.b[t]) > 1e-12)
            scale = std::min(scale, spec.b_max / std::fabs(pol.b[t]));
    }
    if (!std::isfinite(scale) || scale < 1.0) scale = 1.0;

    out.assign(prog.inst.lp.num_vars, 0.0);
    for (int t = 0; t < prog.T; ++t) {
        const int base = prog.num_wb_at[t];
        for (int j = 0; j < prog.stacked_dim[t]; ++j) out[base + j] = pol.w[t][j] * scale;
        out[base + prog.stacked_dim[t]] = pol.b[t] * scale;
    }
    for (int t = 0; t < prog.T; ++t)
        for (int k = 0; k < prog.K; ++k) {
            double s = out[prog.num_wb_at[t] + prog.stacked_dim[t]];
            const auto& xr = prog.xhat_rows[t][k];
            for (int j = 0; j < prog.stacked_dim[t]; ++j)
                s += out[prog.num_wb_at[t] + j] * xr[j];
            out[prog.g_index(t, k)] = s > 0.0 ? 1.0 : 0.0;
            out[prog.p_index(t, k)] = s < spec.margin ? 1.0 : 0.0;
        }
    return check_milp_solution(prog.inst, out);
}

}  // namespace detail

// Weighted selection rates of a policy on the final-stage sample, split by
// fairness group. rate_pos uses the strict rule, rate_margin the epsilon one.
struct GroupRates {
    double rate_pos[2] = {0.0, 0.0};
    double rate_margin[2] = {0.0, 0.0};
};

namespace detail {

inline GroupRates group_rates(const PolicyParams& pol, const StagePanel& panel,
                              const WeightSet& weights, FairnessNotion notion) {
    const int T = panel.n_stages;
    const auto& ids = panel.final_set();
    if (weights.ids != ids)
        throw DataError("group_rates: weights not aligned with the final set");
    std::vector<int8_t> y(ids.size()), a(ids.size());
    for (size_t k = 0; k < ids.size(); ++k) {
        y[k] = static_cast<int8_t>(panel.outcome_of(ids[k]));
        a[k] = panel.sensitive[ids[k]];
    }
    auto grp = fairness_groups(a, y, notion);
    GroupRates r;
    for (int g = 0; g < 2; ++g) {
        double mass = 0.0, pos = 0.0, marg = 0.0;
        for (int k : grp[g]) {
            const double beta = weights.beta[T - 1][k];
            const double s = pol.score(T - 1, panel.stacked_covariates(T - 1, ids[k]));
            mass += beta;
            if (s > kDecisionTol) pos += beta;
            if (s >= pol.epsilon - kDecisionTol) marg += beta;
        }
        r.rate_pos[g] = pos / mass;
        r.rate_margin[g] = marg / mass;
    }
    return r;
}

}  // namespace detail

enum class UnfairnessMode { Strict, Eps };

// Disparity of the final-stage rule across groups: strict mode is the plain
// absolute rate gap, eps mode the margin-padded display that dominates it.
inline double unfairness(const PolicyParams& pol, const StagePanel& panel,
                         const WeightSet& weights, FairnessNotion notion,
                         UnfairnessMode mode) {
    GroupRates r = detail::group_rates(pol, panel, weights, notion);
    if (mode == UnfairnessMode::Strict)
        return std::fabs(r.rate_pos[1] - r.rate_pos[0]);
    return std::max(r.rate_pos[0] - r.rate_margin[1], r.rate_pos[1] - r.rate_margin[0]);
}

inline std::pair<PolicyParams, TrainReport> train(const StagePanel& panel,
                                                  const WeightSet& weights,
                                                  const SelectionSpec& spec,
                                                  const TrainLimits& limits = {}) {
    FairProgram prog = build_fair_program(panel, weights, spec);
    TrainReport report;

    // Weighted positive rate is the fallback starting ratio; a feasible
    // rounding of the relaxation replaces it when available.
    double wy = 0.0;
    for (int k = 0; k < prog.K; ++k)
        if (prog.y[k]) wy += prog.beta_T[k];
    double rho = wy / prog.sT;

    MilpCallbacks callbacks;
    callbacks.rounding = [&prog, &spec](const std::vector<double>& relax,
                                        std::vector<double>& out) {
        return detail::round_fair_point(prog, spec, relax, out);
    };

    {
        prog.set_rho(rho);
        auto relax = solve_lp(prog.inst.lp);
        std::vector<double> rounded;
        if (relax.status == LpStatus::Optimal &&
            detail::round_fair_point(prog, spec, relax.x, rounded)) {
            const double r0 = prog.ratio_of(rounded);
            if (r0 > 0.0) {
                rho = r0;
                callbacks.warm_starts.push_back(std::move(rounded));
            }
        }
    }

    std::vector<double> best;
    bool probed = false;
    for (int it = 0; it < limits.max_iterations; ++it) {
        prog.set_rho(rho);
        MilpSolution sol = solve_milp(prog.inst, limits.milp, callbacks);
        if (!sol.has_incumbent) {
            if (it == 0 && sol.status == MilpStatus::Infeasible)
                throw ConfigError("train: selection requirements are infeasible on this data");
            throw SolverError("train: subproblem solve failed: " + sol.message);
        }
        if (!probed) {
            probed = true;
            // The fallback starting ratio is not backed by a feasible point and
            // can overshoot the constrained optimum; restart from the incumbent's
            // own ratio so the recorded iterates increase monotonically.
            if (sol.objective < -limits.dink_tol) {
                rho = prog.ratio_of(sol.x);
                callbacks.warm_starts = {sol.x};
                report.total_nodes += sol.node_count;
                report.max_gap = std::max(report.max_gap, sol.max_lp_duality_gap);
                continue;
            }
        }
        report.steps.push_back({rho, sol.objective, sol.node_count, sol.gap});
        report.total_nodes += sol.node_count;
        report.max_gap = std::max(report.max_gap, sol.max_lp_duality_gap);
        best = sol.x;
        if (sol.objective <= limits.dink_tol) break;
        const double next = prog.ratio_of(sol.x);
        if (next <= rho)
            throw SolverError("train: ratio iteration stalled before convergence");
        rho = next;
        callbacks.warm_starts = {sol.x};
        if (it + 1 == limits.max_iterations)
            throw SolverError("train: ratio iteration failed to converge");
    }
    if (best.empty()) throw SolverError("train: iteration budget exhausted before a solve");

    PolicyParams pol = prog.extract_policy(best);
    report.final_ratio = prog.ratio_of(best);

    // Strict funnel re-evaluation on the training sample.
    {
        const int T = prog.T;
        double den = 0.0, num = 0.0;
        for (int k = 0; k < prog.K; ++k) {
            bool pass = true;
            for (int t = 0; t < T && pass; ++t)
                pass = pol.score(t, prog.xhat_rows[t][k]) > kDecisionTol;
            if (!pass) continue;
            den += prog.beta_T[k];
            if (prog.y[k]) num += prog.beta_T[k];
        }
        report.train_precision_strict = den > 0.0 ? num / den : 0.0;
    }
    report.u_strict = unfairness(pol, panel, weights, spec.notion, UnfairnessMode::Strict);
    report.u_eps = unfairness(pol, panel, weights, spec.notion, UnfairnessMode::Eps);

    // Binding-row summary and the big-M slack flag at the returned point.
    {
        const auto& lp = prog.inst.lp;
        const int T = prog.T, K = prog.K;
        const int first_bigm = static_cast<int>(lp.rows.size()) - 3 * T * K;
        for (int r = 0; r < static_cast<int>(lp.rows.size()); ++r) {
            double act = 0.0;
            for (int j = 0; j < lp.num_vars; ++j) act += lp.rows[r].coeffs[j] * best[j];
            const double slack = std::fabs(lp.rows[r].rhs - act);
            if (r >= first_bigm) {
                const int t = (r - first_bigm) / (3 * K);
                // Linking rows carry one M-scaled indicator term; the row is
                // M-tight when it binds with that indicator active.
                if (slack <= 1e-6 * prog.big_m[t]) {
                    const int kind = (r - first_bigm) % 3;
                    const int k = ((r - first_bigm) / 3) % K;
                    const double ind = kind == 2 ? best[prog.p_index(t, k)]
                                                 : best[prog.g_index(t, k)];
                    const bool active = kind == 0 ? ind < 0.5 : ind > 0.5;
                    if (active) report.big_m_tight = true;
                }
                continue;
            }
            if (slack > 1e-6 * std::max(1.0, std::fabs(lp.rows[r].rhs))) continue;
            if (r < T)
                ++report.binding_upper;
            else if (r == T)
                ++report.binding_lower;
            else if (r < T + 1 + (T - 1) * K)
                ++report.binding_consistency;
            else
                ++report.binding_fairness;
        }
    }
    return {std::move(pol), std::move(report)};
}

inline nlohmann::json policy_to_json(
    const PolicyParams& pol,
    const std::vector<std::vector<std::string>>& stage_feature_names = {}) {
    nlohmann::json j;
    j["epsilon"] = pol.epsilon;
    j["n_stages"] = pol.n_stages();
    j["stages"] = nlohmann::json::array();
    for (int t = 0; t < pol.n_stages(); ++t) {
        nlohmann::json s;
        s["offset"] = pol.b[t];
        s["coefficients"] = pol.w[t];
        if (t < static_cast<int>(stage_feature_names.size()) &&
            stage_feature_names[t].size() == pol.w[t].size())
            s["feature_names"] = stage_feature_names[t];
        j["stages"].push_back(std::move(s));
    }
    return j;
}

inline PolicyParams policy_from_json(const nlohmann::json& j) {
    PolicyParams pol;
    try {
        pol.epsilon = j.at("epsilon").get<double>();
        for (const auto& s : j.at("stages")) {
            pol.b.push_back(s.at("offset").get<double>());
            pol.w.push_back(s.at("coefficients").get<std::vector<double>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("policy_from_json: ") + e.what());
    }
    return pol;
}

}  // namespace fairsel
