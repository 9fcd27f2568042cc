#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "fairsel/fairmodel.hpp"

namespace fairsel {

// Exhaustive reference solver for tiny instances. Each candidate gets a
// per-stage score class: neg (<= 0), mid ([0, margin]), or high (>= margin).
// The indicator pair is determined by the class (neg: g=0 p=1; mid: g=1 p=1;
// high: g=1 p=0), and a class other than neg at stage t+1 forces high at
// stage t, so the valid per-candidate profiles are a run of highs followed by
// an optional mid and then negs: 2T+1 profiles. Every solution of the mixed
// binary program maps onto one of these profiles without losing objective
// value, so scanning all profile assignments and checking each stage's class
// pattern for linear realizability inside the box bounds is exact.

struct OracleResult {
    bool feasible = false;
    double ratio = 0.0;
    std::vector<int> profile;  // per candidate in final-set order
    PolicyParams policy;
    long patterns_checked = 0;
    long lp_calls = 0;
};

namespace detail {

enum class ScoreClass : int8_t { Neg = 0, Mid = 1, High = 2 };

// Class of candidate k at stage t under per-candidate profile c. Profiles
// 0..T are "high at stages < c, neg after": profile 0 is all-neg, profile T
// all-high. Profiles T+1..2T are "high at stages < c-T, then one mid".
inline ScoreClass profile_class(int profile, int t, int T) {
    if (profile <= T) return t < profile ? ScoreClass::High : ScoreClass::Neg;
    const int mid_at = profile - T - 1;  // stage carrying the mid, 0-based
    if (t < mid_at) return ScoreClass::High;
    return t == mid_at ? ScoreClass::Mid : ScoreClass::Neg;
}

// One LP feasibility probe per stage: the stage's (W, b) only appears in its
// own linking rows, so realizability splits across stages.
inline bool stage_realizable(const FairProgram& prog, const SelectionSpec& spec, int t,
                             const std::vector<ScoreClass>& cls, std::vector<double>* wb,
                             long& lp_calls) {
    const int dim = prog.stacked_dim[t];
    LpInstance lp;
    lp.num_vars = dim + 1;
    lp.maximize = true;
    lp.objective.assign(dim + 1, 0.0);
    lp.lower.assign(dim + 1, -spec.w_max);
    lp.upper.assign(dim + 1, spec.w_max);
    lp.lower[dim] = -spec.b_max;
    lp.upper[dim] = spec.b_max;
    for (int k = 0; k < prog.K; ++k) {
        LpRow row;
        row.coeffs.assign(dim + 1, 0.0);
        for (int j = 0; j < dim; ++j) row.coeffs[j] = prog.xhat_rows[t][k][j];
        row.coeffs[dim] = 1.0;
        switch (cls[k]) {
            case ScoreClass::Neg:
                row.rel = Rel::LE;
                row.rhs = 0.0;
                lp.rows.push_back(std::move(row));
                break;
            case ScoreClass::High:
                row.rel = Rel::GE;
                row.rhs = spec.margin;
                lp.rows.push_back(std::move(row));
                break;
            case ScoreClass::Mid: {
                LpRow up = row;
                up.rel = Rel::LE;
                up.rhs = spec.margin;
                lp.rows.push_back(std::move(up));
                row.rel = Rel::GE;
                row.rhs = 0.0;
                lp.rows.push_back(std::move(row));
                break;
            }
        }
    }
    ++lp_calls;
    auto sol = solve_lp(lp);
    if (sol.status != LpStatus::Optimal) return false;
    if (wb) *wb = sol.x;
    return true;
}

}  // namespace detail

inline OracleResult enumerate_optimal(const StagePanel& panel, const WeightSet& weights,
                                      const SelectionSpec& spec) {
    FairProgram prog = build_fair_program(panel, weights, spec);
    const int T = prog.T, K = prog.K;
    if (K > 12 || T > 3)
        throw ConfigError("enumerate_optimal: instance exceeds the enumeration cap");
    const int n_profiles = 2 * T + 1;

    // Group masses for the fairness rows, mirroring the program build.
    auto grp = detail::fairness_groups(prog.a, prog.y, spec.notion);
    double grp_mass[2] = {0.0, 0.0};
    std::vector<int> grp_of(K, -1);
    for (int g = 0; g < 2; ++g)
        for (int k : grp[g]) {
            grp_mass[g] += prog.beta_T[k];
            grp_of[k] = g;
        }

    std::vector<double> stage_mass(T, 0.0);
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k) stage_mass[t] += weights.beta[t][k];

    OracleResult res;
    std::vector<int> profile(K, 0);
    std::vector<std::map<std::vector<int8_t>, bool>> memo(T);

    long total = 1;
    for (int k = 0; k < K; ++k) total *= n_profiles;

    for (long code = 0; code < total; ++code) {
        long rem = code;
        for (int k = 0; k < K; ++k) {
            profile[k] = static_cast<int>(rem % n_profiles);
            rem /= n_profiles;
        }
        ++res.patterns_checked;

        // Ratio and constraint screen straight from the indicator values.
        double num = 0.0, den = 0.0;
        bool ok = true;
        for (int t = 0; t < T && ok; ++t) {
            double gmass = 0.0;
            for (int k = 0; k < K; ++k)
                if (detail::profile_class(profile[k], t, T) != detail::ScoreClass::Neg)
                    gmass += weights.beta[t][k];
            ok = gmass <= spec.upper_ratios[t] * stage_mass[t] + 1e-12;
        }
        if (!ok) continue;
        double pmass = 0.0;
        for (int k = 0; k < K; ++k) {
            const auto cls = detail::profile_class(profile[k], T - 1, T);
            if (cls != detail::ScoreClass::High) pmass += prog.beta_T[k];
            if (cls != detail::ScoreClass::Neg) {
                den += prog.beta_T[k];
                if (prog.y[k]) num += prog.beta_T[k];
            }
        }
        if (pmass > (1.0 - spec.lower_ratio_final) * prog.sT + 1e-12) continue;
        const double ratio = den > 0.0 ? num / den : 0.0;
        if (res.feasible && ratio <= res.ratio + 1e-15) continue;

        double fair[2];
        for (int g = 0; g < 2; ++g) {
            double gsel = 0.0, prej = 0.0;
            for (int k : grp[g])
                if (detail::profile_class(profile[k], T - 1, T) != detail::ScoreClass::Neg)
                    gsel += prog.beta_T[k];
            for (int k : grp[1 - g])
                if (detail::profile_class(profile[k], T - 1, T) != detail::ScoreClass::High)
                    prej += prog.beta_T[k];
            fair[g] = gsel / grp_mass[g] + prej / grp_mass[1 - g] - 1.0;
        }
        if (fair[0] > spec.eta + 1e-12 || fair[1] > spec.eta + 1e-12) continue;

        // Per-stage linear realizability, memoized on the class pattern.
        bool realizable = true;
        for (int t = 0; t < T && realizable; ++t) {
            std::vector<int8_t> key(K);
            for (int k = 0; k < K; ++k)
                key[k] = static_cast<int8_t>(detail::profile_class(profile[k], t, T));
            auto it = memo[t].find(key);
            if (it != memo[t].end()) {
                realizable = it->second;
                continue;
            }
            std::vector<detail::ScoreClass> cls(K);
            for (int k = 0; k < K; ++k) cls[k] = static_cast<detail::ScoreClass>(key[k]);
            realizable = detail::stage_realizable(prog, spec, t, cls, nullptr, res.lp_calls);
            memo[t][std::move(key)] = realizable;
        }
        if (!realizable) continue;

        res.feasible = true;
        res.ratio = ratio;
        res.profile = profile;
    }

    if (res.feasible) {
        res.policy.epsilon = spec.margin;
        res.policy.w.resize(T);
        res.policy.b.resize(T);
        for (int t = 0; t < T; ++t) {
            std::vector<detail::ScoreClass> cls(K);
            for (int k = 0; k < K; ++k)
                cls[k] = detail::profile_class(res.profile[k], t, T);
            std::vector<double> wb;
            if (!detail::stage_realizable(prog, spec, t, cls, &wb, res.lp_calls))
                throw SolverError("enumerate_optimal: winning pattern lost realizability");
            res.policy.w[t].assign(wb.begin(), wb.begin() + prog.stacked_dim[t]);
            res.policy.b[t] = wb[prog.stacked_dim[t]];
        }
    }
    return res;
}

// Random two-stage instance for solver-vs-oracle cross checks. Scalar
// covariates per stage, weights perturbed into [1,5], both sensitive groups
// guaranteed a positive member so the fairness rows are well defined.
struct CheckInstance {
    StagePanel panel;
    WeightSet weights;
    SelectionSpec spec;
};

inline CheckInstance random_check_instance(Rng& rng, int n_final) {
    if (n_final < 2) throw ConfigError("random_check_instance: need at least 2 candidates");
    const int n = n_final;
    StagePanel p;
    p.n_stages = 2;
    p.censored = false;
    p.stage_dims = {1, 1};
    p.covariates.assign(2, std::vector<std::vector<double>>(n));
    p.sensitive.resize(n);
    p.outcome.resize(n);
    p.selections.assign(2, std::vector<int8_t>(n, 1));
    int pos[2] = {0, 0};
    for (int i = 0; i < n; ++i) {
        p.covariates[0][i] = {rng.normal(0.0, 1.0)};
        p.covariates[1][i] = {rng.normal(0.0, 1.0)};
        p.outcome[i] = rng.bernoulli(0.5) ? 1 : 0;
        p.sensitive[i] = rng.bernoulli(0.5) ? 1 : 0;
        if (p.outcome[i]) ++pos[p.sensitive[i]];
    }
    if (!pos[0]) {
        p.outcome[0] = 1;
        p.sensitive[0] = 0;
    }
    if (!pos[1]) {
        p.outcome[n - 1] = 1;
        p.sensitive[n - 1] = 1;
    }
    p.finalize();

    CheckInstance inst;
    inst.panel = std::move(p);
    inst.weights = no_ipw_weights(inst.panel);
    for (int t = 0; t < 2; ++t)
        for (int k = 0; k < n; ++k)
            inst.weights.beta[t][k] = 1.0 + 4.0 * rng.uniform();
    inst.spec.upper_ratios = {1.0, 0.5 + 0.3 * rng.uniform()};
    inst.spec.lower_ratio_final = 0.2 + 0.2 * rng.uniform();
    inst.spec.eta = rng.uniform() < 0.3 ? 0.5 : 1.0;
    return inst;
}

}  // namespace fairsel
