#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "fairsel/eval.hpp"
#include "fairsel/synthgen.hpp"

using namespace fairsel;

namespace {

StagePanel full_panel(const std::vector<std::vector<double>>& x1,
                      const std::vector<std::vector<double>>& x2,
                      const std::vector<int8_t>& y, const std::vector<int8_t>& a) {
    const int n = static_cast<int>(y.size());
    StagePanel p;
    p.n_stages = 2;
    p.censored = false;
    p.stage_dims = {static_cast<int>(x1[0].size()), static_cast<int>(x2[0].size())};
    p.covariates = {x1, x2};
    p.sensitive = a;
    p.selections.assign(2, std::vector<int8_t>(n, 1));
    p.outcome = y;
    p.finalize();
    return p;
}

StagePanel toy_panel() {
    return full_panel({{-1.0}, {-0.5}, {0.5}, {1.0}}, {{-1.0}, {-0.5}, {0.5}, {1.0}},
                      {0, 0, 1, 1}, {0, 1, 0, 1});
}

PolicyParams step_policy(double b1, double b2) {
    PolicyParams pol;
    pol.w = {{1.0}, {1.0, 0.0}};
    pol.b = {b1, b2};
    return pol;
}

// Hand-built decision table: stage counts are prefix sizes, nested by index.
StageDecisions prefix_decisions(int n, int n1, int n2) {
    StageDecisions dec;
    dec.selected.assign(2, std::vector<uint8_t>(n, 0));
    for (int i = 0; i < n1; ++i) dec.selected[0][i] = 1;
    for (int i = 0; i < n2; ++i) dec.selected[1][i] = 1;
    return dec;
}

SelectionSpec ratio_spec(std::vector<double> upper, double lower) {
    SelectionSpec spec;
    spec.upper_ratios = std::move(upper);
    spec.lower_ratio_final = lower;
    return spec;
}

bool nested(const StageDecisions& dec) {
    for (int t = 1; t < dec.n_stages(); ++t)
        for (int i = 0; i < dec.num_candidates(); ++i)
            if (dec.selected[t][i] && !dec.selected[t - 1][i]) return false;
    return true;
}

}  // namespace

TEST_CASE("boundary scores do not select") {
    StagePanel p;
    p.n_stages = 1;
    p.censored = false;
    p.stage_dims = {1};
    p.covariates = {{{0.0}, {1.0}}};
    p.sensitive = {0, 1};
    p.selections = {{1, 1}};
    p.outcome = {1, 1};
    p.finalize();
    PolicyParams pol;
    pol.w = {{1.0}};
    pol.b = {0.0};
    auto dec = apply_policy(pol, p);
    CHECK(dec.selected[0][0] == 0);  // score exactly 0 is a tie, not selected
    CHECK(dec.selected[0][1] == 1);
    PolicyParams wrong;
    wrong.w = {{1.0}, {1.0, 0.0}};
    wrong.b = {0.0, 0.0};
    CHECK_THROWS_AS(apply_policy(wrong, p), ConfigError);
}

TEST_CASE("decisions form a funnel and reproduce training selections") {
    auto panel = toy_panel();
    auto weights = no_ipw_weights(panel);
    SelectionSpec spec = ratio_spec({1.0, 0.5}, 0.5);
    auto [policy, report] = train(panel, weights, spec);
    auto dec = apply_policy(policy, panel);
    CHECK(nested(dec));
    for (int i = 0; i < 4; ++i)
        CHECK(dec.selected[1][i] == (panel.outcome[i] == 1 ? 1 : 0));
}

TEST_CASE("repair promotes from the prior stage to meet the lower bound") {
    auto dec = prefix_decisions(100, 50, 10);
    auto counts = repair(dec, ratio_spec({1.0, 0.5}, 0.2), 7);
    CHECK(counts.promoted == 10);
    CHECK(counts.demoted == 0);
    CHECK(dec.count(0) == 50);
    CHECK(dec.count(1) == 20);
    CHECK(nested(dec));

    // Same seed, same draws.
    auto again = prefix_decisions(100, 50, 10);
    repair(again, ratio_spec({1.0, 0.5}, 0.2), 7);
    CHECK(again.selected == dec.selected);
    auto other = prefix_decisions(100, 50, 10);
    repair(other, ratio_spec({1.0, 0.5}, 0.2), 8);
    CHECK(other.selected != dec.selected);
}

TEST_CASE("repair demotes the overfull stage and keeps nesting") {
    auto dec = prefix_decisions(100, 90, 30);
    auto counts = repair(dec, ratio_spec({0.7, 0.5}, 0.2), 3);
    CHECK(counts.demoted == 20);
    CHECK(dec.count(0) == 70);
    CHECK(nested(dec));
    CHECK(dec.count(1) >= 20);
    CHECK(dec.count(1) <= 30);
}

TEST_CASE("in-bounds decisions are repaired to themselves") {
    auto dec = prefix_decisions(100, 50, 25);
    auto before = dec.selected;
    auto counts = repair(dec, ratio_spec({0.6, 0.5}, 0.2), 19);
    CHECK(counts.promoted == 0);
    CHECK(counts.demoted == 0);
    CHECK(dec.selected == before);
}

TEST_CASE("promotion cascades past an empty prior-stage pool") {
    auto dec = prefix_decisions(10, 2, 1);
    auto counts = repair(dec, ratio_spec({0.5, 0.3}, 0.3), 4);
    CHECK(counts.promoted == 2);
    CHECK(dec.count(1) == 3);
    CHECK(dec.count(0) == 3);  // one candidate entered both stages
    CHECK(nested(dec));
}

TEST_CASE("count rounding can make the bounds jointly unreachable") {
    // floor(0.55 * 10) = 5 but ceil(0.55 * 10) = 6.
    auto dec = prefix_decisions(10, 5, 5);
    CHECK_THROWS_AS(repair(dec, ratio_spec({1.0, 0.55}, 0.55), 1), DataError);
}

TEST_CASE("evaluating a clean separation gives perfect scores") {
    std::vector<std::vector<double>> x(10, std::vector<double>{-1.0});
    std::vector<int8_t> y(10, 0), a(10);
    x[0] = {1.0};
    x[1] = {1.0};
    y[0] = y[1] = 1;
    for (int i = 0; i < 10; ++i) a[i] = i % 2;
    auto panel = full_panel(x, x, y, a);
    auto rep = evaluate(step_policy(0.0, 0.0), panel, ratio_spec({1.0, 0.5}, 0.2), 11);
    CHECK(rep.precision == 1.0);
    CHECK(rep.u_eo == 0.0);
    CHECK(rep.promoted == 0);
    CHECK(rep.demoted == 0);
    CHECK(!rep.lower_violated);
    CHECK(rep.upper_violated == std::vector<uint8_t>{0, 0});
    CHECK(rep.fractions == std::vector<double>{0.2, 0.2});
    CHECK(rep.seed == 11);
}

TEST_CASE("violation flags describe the pre-repair funnel") {
    // Policy selects 6 of 10 at both stages; stage-2 cap is 5.
    std::vector<std::vector<double>> x(10, std::vector<double>{-1.0});
    std::vector<int8_t> y(10), a(10);
    for (int i = 0; i < 6; ++i) x[i] = {1.0};
    for (int i = 0; i < 10; ++i) {
        y[i] = i < 3 || i == 6;
        a[i] = i % 2;
    }
    auto panel = full_panel(x, x, y, a);
    auto rep = evaluate(step_policy(0.0, 0.0), panel, ratio_spec({1.0, 0.5}, 0.2), 5);
    CHECK(rep.upper_violated == std::vector<uint8_t>{0, 1});
    CHECK(rep.fractions[1] == 0.5);  // demoted back to the cap
    CHECK(rep.demoted == 1);
}

TEST_CASE("empty post-repair selection is impossible, empty groups error") {
    // All candidates share one sensitive value: equal opportunity is undefined.
    std::vector<std::vector<double>> x = {{1.0}, {-1.0}};
    auto panel = full_panel(x, x, {1, 0}, {1, 1});
    CHECK_THROWS_AS(evaluate(step_policy(0.0, 0.0), panel, ratio_spec({1.0, 0.5}, 0.5), 1),
                    DataError);
}

TEST_CASE("counterfactual evaluation on a fully-observed panel is empirical") {
    auto panel = toy_panel();
    auto weights = no_ipw_weights(panel);
    auto est = counterfactual_evaluate(step_policy(0.0, 0.0), panel, weights);
    CHECK(est.selection_rate == Catch::Approx(0.5));
    CHECK(est.precision == Catch::Approx(1.0));
    CHECK(est.weighted_mass == Catch::Approx(2.0));

    // Selecting every logged row reproduces the weighted empirical rates.
    PolicyParams all;
    all.w = {{0.0}, {0.0, 0.0}};
    all.b = {5.0, 5.0};
    auto full = counterfactual_evaluate(all, panel, weights);
    CHECK(full.selection_rate == Catch::Approx(1.0));
    CHECK(full.precision == Catch::Approx(0.5));

    PolicyParams none;
    none.w = {{0.0}, {0.0, 0.0}};
    none.b = {-5.0, -5.0};
    CHECK_THROWS_AS(counterfactual_evaluate(none, panel, weights), DataError);
}

TEST_CASE("counterfactual estimates track direct simulation") {
    SyntheticParams sp;
    sp.n = 100000;
    sp.seed = 21;
    auto full = gen_synthetic(sp);
    auto logged = full.censored_view();

    WeightSet w;
    w.clip_floor = 0.0;
    w.ids = logged.final_set();
    w.propensity.assign(2, {});
    w.beta.assign(2, {});
    for (int i : w.ids) {
        const double mu1 = full.true_propensities[0][i];
        const double mu2 = full.true_propensities[1][i];
        w.propensity[0].push_back(mu1);
        w.propensity[1].push_back(mu2);
        w.beta[0].push_back(1.0 / mu1);
        w.beta[1].push_back(1.0 / (mu1 * mu2));
    }

    PolicyParams pol;
    pol.w = {{1.0}, {0.3, 0.7}};
    pol.b = {-0.2, -0.3};
    auto est = counterfactual_evaluate(pol, logged, w);

    auto dec = apply_policy(pol, full);
    double sel = 0.0, pos = 0.0;
    for (int i = 0; i < sp.n; ++i) {
        if (!dec.selected[1][i]) continue;
        sel += 1.0;
        pos += full.outcome[i];
    }
    CHECK(est.selection_rate == Catch::Approx(sel / sp.n).margin(0.03));
    CHECK(est.precision == Catch::Approx(pos / sel).margin(0.03));
}

TEST_CASE("sweep emits one row per cell plus one aggregate per budget") {
    auto panel = toy_panel();
    auto weights = no_ipw_weights(panel);
    SelectionSpec spec = ratio_spec({1.0, 0.5}, 0.5);
    auto table = pareto_sweep(panel, weights, panel, spec, {0.0, 1.0}, {101, 202});
    REQUIRE(table.cells.size() == 4);
    REQUIRE(table.aggregates.size() == 2);
    for (const auto& c : table.cells) {
        CHECK(c.train_ratio == Catch::Approx(1.0));
        CHECK(c.report.precision == Catch::Approx(1.0));
        CHECK(c.report.u_eo == 0.0);
    }
    CHECK(table.aggregates[0].eta == 0.0);
    CHECK(table.aggregates[1].eta == 1.0);
    CHECK(table.aggregates[0].mean_precision == Catch::Approx(1.0));
    CHECK(table.aggregates[0].sd_precision == 0.0);
    // Budget growth never costs training precision.
    CHECK(table.aggregates[1].mean_precision >= table.aggregates[0].mean_precision - 1e-9);

    const std::string csv = pareto_csv(table);
    std::istringstream lines(csv);
    std::string line;
    int rows = 0;
    size_t commas = std::string::npos;
    while (std::getline(lines, line)) {
        ++rows;
        const size_t c = static_cast<size_t>(std::count(line.begin(), line.end(), ','));
        if (commas == std::string::npos) commas = c;
        CHECK(c == commas);
    }
    CHECK(rows == 1 + 4 + 2);
    CHECK(csv.rfind("row,eta,trial_seed,", 0) == 0);

    CHECK_THROWS_AS(pareto_sweep(panel, weights, panel, spec, {}, {1}), ConfigError);
    CHECK_THROWS_AS(pareto_sweep(panel, weights, panel, spec, {1.0}, {}), ConfigError);
}

TEST_CASE("evaluation reports serialize with every field") {
    auto panel = toy_panel();
    auto rep = evaluate(step_policy(0.0, 0.0), panel, ratio_spec({1.0, 0.5}, 0.5), 99);
    auto j = eval_report_to_json(rep);
    CHECK(j["precision"] == 1.0);
    CHECK(j["fractions"].size() == 2);
    CHECK(j["upper_violated"].size() == 2);
    CHECK(j["seed"] == 99);
    CHECK(j.contains("promoted"));
    CHECK(j.contains("lower_violated"));
}
