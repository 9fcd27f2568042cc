#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairsel/dataset.hpp"
#include "fairsel/fairmodel.hpp"
#include "fairsel/propensity.hpp"
#include "fairsel/rng.hpp"

namespace fairsel {

// Stagewise strict funnel decisions on a panel: selected[t][i] = 1 iff the
// candidate cleared every stage up to and including t. Nested by construction.
struct StageDecisions {
    std::vector<std::vector<uint8_t>> selected;

    int n_stages() const { return static_cast<int>(selected.size()); }
    int num_candidates() const {
        return selected.empty() ? 0 : static_cast<int>(selected[0].size());
    }
    int count(int t) const {
        int c = 0;
        for (uint8_t s : selected[t]) c += s;
        return c;
    }
};

// Runs the policy's funnel over a panel where every candidate carries full
// covariates. Dropped candidates are not scored at later stages.
inline StageDecisions apply_policy(const PolicyParams& pol, const StagePanel& panel) {
    if (pol.n_stages() != panel.n_stages)
        throw ConfigError("apply_policy: policy and panel stage counts differ");
    const int T = panel.n_stages;
    const int n = panel.num_candidates();
    StageDecisions dec;
    dec.selected.assign(T, std::vector<uint8_t>(n, 0));
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < T; ++t) {
            if (!pol.selects(t, panel.stacked_covariates(t, i))) break;
            dec.selected[t][i] = 1;
        }
    }
    return dec;
}

struct RepairCounts {
    int promoted = 0;  // candidates randomly added to meet the final lower bound
    int demoted = 0;   // candidates randomly removed to meet upper bounds
};

namespace detail {

// Count caps on a finite sample: fraction bounds become integer counts against
// the full panel size. The small slack absorbs representation error in
// products like 0.7 * 100.
inline int upper_cap(double ratio, int n) {
    return static_cast<int>(std::floor(ratio * n + 1e-9));
}
inline int lower_target(double ratio, int n) {
    return static_cast<int>(std::ceil(ratio * n - 1e-9));
}

}  // namespace detail

// Enforces the selection-ratio bounds on realized decisions: over-selected
// stages drop uniformly random members (removals cascade to later stages),
// then an under-selected final stage promotes uniformly random survivors of
// the nearest prior stage, walking to earlier stages as pools empty. A
// promotion from stage s inserts the candidate into every stage after s.
inline RepairCounts repair(StageDecisions& dec, const SelectionSpec& spec, uint64_t seed) {
    spec.validate();
    const int T = dec.n_stages();
    const int n = dec.num_candidates();
    if (T != spec.n_stages()) throw ConfigError("repair: spec stage count mismatch");
    if (n == 0) throw DataError("repair: no candidates");

    std::vector<int> cap(T);
    for (int t = 0; t < T; ++t) cap[t] = detail::upper_cap(spec.upper_ratios[t], n);
    const int target = detail::lower_target(spec.lower_ratio_final, n);
    // Promotions fill every stage at most to the final target, so the bounds
    // are jointly achievable exactly when no cap rounds below it.
    for (int t = 0; t < T; ++t)
        if (cap[t] < target)
            throw DataError("repair: lower bound " + std::to_string(target) +
                            " exceeds the stage " + std::to_string(t + 1) + " cap " +
                            std::to_string(cap[t]) + " on this sample");

    Rng rng = derive_stream(seed, {0x7e9a1u});
    RepairCounts counts;

    for (int t = 0; t < T; ++t) {
        int over = dec.count(t) - cap[t];
        if (over <= 0) continue;
        std::vector<int> pool;
        for (int i = 0; i < n; ++i)
            if (dec.selected[t][i]) pool.push_back(i);
        for (; over > 0; --over) {
            const size_t pick = rng.below(pool.size());
            const int i = pool[pick];
            pool[pick] = pool.back();
            pool.pop_back();
            for (int s = t; s < T; ++s) dec.selected[s][i] = 0;
            ++counts.demoted;
        }
    }

    int have = dec.count(T - 1);
    for (int level = T - 2; level >= -1 && have < target; --level) {
        std::vector<int> pool;
        for (int i = 0; i < n; ++i) {
            const bool in_level = level < 0 || dec.selected[level][i];
            if (in_level && !dec.selected[level + 1][i]) pool.push_back(i);
        }
        while (have < target && !pool.empty()) {
            const size_t pick = rng.below(pool.size());
            const int i = pool[pick];
            pool[pick] = pool.back();
            pool.pop_back();
            for (int s = level + 1; s < T; ++s) dec.selected[s][i] = 1;
            ++counts.promoted;
            ++have;
        }
    }
    if (have < target) throw DataError("repair: final lower bound unreachable");
    return counts;
}

struct EvalReport {
    double precision = 0.0;  // positive rate among the final post-repair selection
    double u_eo = 0.0;       // strict disparity of final selection, equal opportunity
    double u_dp = 0.0;       // strict disparity of final selection, demographic parity
    std::vector<double> fractions;       // post-repair, per stage, over the full panel
    std::vector<uint8_t> upper_violated;  // pre-repair, per stage
    bool lower_violated = false;          // pre-repair, final stage
    int promoted = 0;
    int demoted = 0;
    uint64_t seed = 0;
};

namespace detail {

// Absolute selection-rate gap of a fixed final set between the two values of
// the sensitive attribute, restricted to positives under equal opportunity.
inline double selection_disparity(const std::vector<uint8_t>& selected,
                                  const StagePanel& panel, FairnessNotion notion) {
    double mass[2] = {0.0, 0.0}, hit[2] = {0.0, 0.0};
    for (int i = 0; i < panel.num_candidates(); ++i) {
        if (notion == FairnessNotion::EqualOpportunity && panel.outcome_of(i) != 1) continue;
        const int g = panel.sensitive[i] ? 1 : 0;
        mass[g] += 1.0;
        hit[g] += selected[i];
    }
    if (mass[0] == 0.0 || mass[1] == 0.0)
        throw DataError("selection_disparity: a conditioning group is empty");
    return std::fabs(hit[1] / mass[1] - hit[0] / mass[0]);
}

}  // namespace detail

// Out-of-sample protocol: run the funnel, flag ratio violations, repair them
// with seeded randomness, then score the repaired selection.
inline EvalReport evaluate(const PolicyParams& pol, const StagePanel& panel,
                           const SelectionSpec& spec, uint64_t seed) {
    StageDecisions dec = apply_policy(pol, panel);
    const int T = dec.n_stages();
    const int n = dec.num_candidates();

    EvalReport rep;
    rep.seed = seed;
    rep.upper_violated.assign(T, 0);
    for (int t = 0; t < T; ++t)
        rep.upper_violated[t] = dec.count(t) > detail::upper_cap(spec.upper_ratios[t], n);
    rep.lower_violated =
        dec.count(T - 1) < detail::lower_target(spec.lower_ratio_final, n);

    RepairCounts counts = repair(dec, spec, seed);
    rep.promoted = counts.promoted;
    rep.demoted = counts.demoted;
    rep.fractions.resize(T);
    for (int t = 0; t < T; ++t) rep.fractions[t] = static_cast<double>(dec.count(t)) / n;

    const auto& fin = dec.selected[T - 1];
    double den = 0.0, num = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!fin[i]) continue;
        den += 1.0;
        num += panel.outcome_of(i) == 1 ? 1.0 : 0.0;
    }
    if (den == 0.0) throw DataError("evaluate: final selection is empty after repair");
    rep.precision = num / den;
    rep.u_eo = detail::selection_disparity(fin, panel, FairnessNotion::EqualOpportunity);
    rep.u_dp = detail::selection_disparity(fin, panel, FairnessNotion::DemographicParity);
    return rep;
}

struct CounterfactualEstimate {
    double selection_rate = 0.0;  // estimated P(funnel = 1) in the source population
    double precision = 0.0;       // estimated positive rate among the selected
    double weighted_mass = 0.0;   // raw weighted count behind the estimates
};

// Estimates how the candidate policy would have performed on the population
// behind a logged funnel, reweighting the logged final-stage rows by their
// inverse selection propensities.
inline CounterfactualEstimate counterfactual_evaluate(const PolicyParams& pol,
                                                      const StagePanel& panel,
                                                      const WeightSet& weights) {
    if (pol.n_stages() != panel.n_stages)
        throw ConfigError("counterfactual_evaluate: policy and panel stage counts differ");
    const auto& ids = panel.final_set();
    if (weights.ids != ids)
        throw DataError("counterfactual_evaluate: weights not aligned with the final set");
    const int T = panel.n_stages;

    CounterfactualEstimate est;
    double mass = 0.0, pos = 0.0;
    for (size_t k = 0; k < ids.size(); ++k) {
        bool pass = true;
        for (int t = 0; t < T && pass; ++t)
            pass = pol.selects(t, panel.stacked_covariates(t, ids[k]));
        if (!pass) continue;
        const double beta = weights.beta[T - 1][k];
        mass += beta;
        if (panel.outcome_of(ids[k]) == 1) pos += beta;
    }
    if (mass <= 0.0)
        throw DataError("counterfactual_evaluate: zero weighted mass selected");
    est.weighted_mass = mass;
    est.selection_rate = mass / panel.num_candidates();
    est.precision = pos / mass;
    return est;
}

struct ParetoCell {
    double eta = 0.0;
    uint64_t trial_seed = 0;
    double train_ratio = 0.0;
    double train_precision_strict = 0.0;
    double train_u_eps = 0.0;
    EvalReport report;
};

struct ParetoAggregate {
    double eta = 0.0;
    double mean_precision = 0.0;
    double sd_precision = 0.0;
    double mean_unfairness = 0.0;  // in the spec template's notion
    double sd_unfairness = 0.0;
};

struct ParetoTable {
    FairnessNotion notion = FairnessNotion::EqualOpportunity;
    std::vector<ParetoCell> cells;
    std::vector<ParetoAggregate> aggregates;
};

// One trained policy per unfairness budget, evaluated once per trial seed.
// Per-cell randomness (the repair draws) streams from (trial seed, eta index)
// so cells stay reproducible independent of execution order.
inline ParetoTable pareto_sweep(const StagePanel& train_panel, const WeightSet& weights,
                                const StagePanel& test_panel, const SelectionSpec& spec,
                                const std::vector<double>& eta_grid,
                                const std::vector<uint64_t>& seeds,
                                const TrainLimits& limits = {}) {
    if (eta_grid.empty()) throw ConfigError("pareto_sweep: eta grid is empty");
    if (seeds.empty()) throw ConfigError("pareto_sweep: no trial seeds");

    ParetoTable table;
    table.notion = spec.notion;
    for (size_t e = 0; e < eta_grid.size(); ++e) {
        SelectionSpec cell_spec = spec;
        cell_spec.eta = eta_grid[e];
        auto [policy, train_rep] = train(train_panel, weights, cell_spec, limits);

        double sum = 0.0, sum2 = 0.0, usum = 0.0, usum2 = 0.0;
        for (size_t j = 0; j < seeds.size(); ++j) {
            const uint64_t cell_seed =
                derive_stream(seeds[j], {0xe7a11u, static_cast<uint32_t>(e)}).next_u64();
            ParetoCell cell;
            cell.eta = eta_grid[e];
            cell.trial_seed = seeds[j];
            cell.train_ratio = train_rep.final_ratio;
            cell.train_precision_strict = train_rep.train_precision_strict;
            cell.train_u_eps = train_rep.u_eps;
            cell.report = evaluate(policy, test_panel, cell_spec, cell_seed);
            const double u = spec.notion == FairnessNotion::EqualOpportunity
                                 ? cell.report.u_eo
                                 : cell.report.u_dp;
            sum += cell.report.precision;
            sum2 += cell.report.precision * cell.report.precision;
            usum += u;
            usum2 += u * u;
            table.cells.push_back(std::move(cell));
        }
        const double m = static_cast<double>(seeds.size());
        ParetoAggregate agg;
        agg.eta = eta_grid[e];
        agg.mean_precision = sum / m;
        agg.mean_unfairness = usum / m;
        if (m > 1.5) {
            agg.sd_precision =
                std::sqrt(std::max(0.0, (sum2 - sum * sum / m) / (m - 1.0)));
            agg.sd_unfairness =
                std::sqrt(std::max(0.0, (usum2 - usum * usum / m) / (m - 1.0)));
        }
        table.aggregates.push_back(agg);
    }
    return table;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["precision"] = rep.precision;
    j["unfairness_eo"] = rep.u_eo;
    j["unfairness_dp"] = rep.u_dp;
    j["fractions"] = rep.fractions;
    j["upper_violated"] = nlohmann::json::array();
    for (uint8_t v : rep.upper_violated) j["upper_violated"].push_back(v != 0);
    j["lower_violated"] = rep.lower_violated;
    j["promoted"] = rep.promoted;
    j["demoted"] = rep.demoted;
    j["seed"] = rep.seed;
    return j;
}

// Cell rows then per-eta aggregate rows, one flat CSV. Cell columns stay
// empty on aggregate rows and vice versa; fraction columns are sized by the
// first cell's stage count. Aggregated unfairness uses the table's notion.
inline std::string pareto_csv(const ParetoTable& table) {
    if (table.cells.empty()) throw ConfigError("pareto_csv: empty table");
    const int T = static_cast<int>(table.cells.front().report.fractions.size());
    std::ostringstream out;
    out << "row,eta,trial_seed,train_ratio,train_precision_strict,train_u_eps,"
           "test_precision,test_u_eo,test_u_dp,promoted,demoted";
    for (int t = 0; t < T; ++t) out << ",frac_stage" << (t + 1);
    out << ",mean_precision,sd_precision,mean_unfairness,sd_unfairness\n";
    out.precision(12);
    const std::string agg_pad(static_cast<size_t>(9 + T), ',');
    for (const auto& c : table.cells) {
        out << "cell," << c.eta << ',' << c.trial_seed << ',' << c.train_ratio << ','
            << c.train_precision_strict << ',' << c.train_u_eps << ','
            << c.report.precision << ',' << c.report.u_eo << ',' << c.report.u_dp << ','
            << c.report.promoted << ',' << c.report.demoted;
        for (double f : c.report.fractions) out << ',' << f;
        out << ",,,,\n";
    }
    for (const auto& a : table.aggregates)
        out << "aggregate," << a.eta << agg_pad << ',' << a.mean_precision << ','
            << a.sd_precision << ',' << a.mean_unfairness << ',' << a.sd_unfairness
            << '\n';
    return out.str();
}

}  // namespace fairsel
