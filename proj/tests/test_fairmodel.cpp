#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <tuple>

#include "fairsel/fairmodel.hpp"
#include "fairsel/oracle.hpp"
#include "fairsel/rng.hpp"

using namespace fairsel;

namespace {

// Uncensored panel where everyone reached the final stage; covariates are
// supplied per stage directly.
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

WeightSet unit_weights_for(const StagePanel& p) { return no_ipw_weights(p); }

SelectionSpec toy_spec(double eta) {
    SelectionSpec spec;
    spec.upper_ratios = {1.0, 0.5};
    spec.lower_ratio_final = 0.5;
    spec.eta = eta;
    return spec;
}

StagePanel toy_panel() {
    return full_panel({{-1.0}, {-0.5}, {0.5}, {1.0}}, {{-1.0}, {-0.5}, {0.5}, {1.0}},
                      {0, 0, 1, 1}, {0, 1, 0, 1});
}

// Random small instance shared by the solver-vs-oracle checks.
struct SmallInstance {
    StagePanel panel;
    WeightSet weights;
    SelectionSpec spec;
};

SmallInstance random_instance(Rng& rng, int n) {
    std::vector<std::vector<double>> x1(n), x2(n);
    std::vector<int8_t> y(n), a(n);
    int pos[2] = {0, 0};
    for (int i = 0; i < n; ++i) {
        x1[i] = {rng.normal(0.0, 1.0)};
        x2[i] = {rng.normal(0.0, 1.0)};
        y[i] = rng.bernoulli(0.5) ? 1 : 0;
        a[i] = rng.bernoulli(0.5) ? 1 : 0;
        if (y[i]) ++pos[a[i]];
    }
    // Both groups need a positive member for the fairness rows.
    if (!pos[0]) {
        y[0] = 1;
        a[0] = 0;
    }
    if (!pos[1]) {
        y[n - 1] = 1;
        a[n - 1] = 1;
    }
    SmallInstance inst;
    inst.panel = full_panel(x1, x2, y, a);
    inst.weights = no_ipw_weights(inst.panel);
    for (int t = 0; t < 2; ++t)
        for (int k = 0; k < n; ++k)
            inst.weights.beta[t][k] = 1.0 + 4.0 * rng.uniform();
    inst.spec.upper_ratios = {1.0, 0.5 + 0.3 * rng.uniform()};
    inst.spec.lower_ratio_final = 0.2 + 0.2 * rng.uniform();
    inst.spec.eta = rng.uniform() < 0.3 ? 0.5 : 1.0;
    return inst;
}

}  // namespace

TEST_CASE("subproblem has the documented shape") {
    auto panel = full_panel({{1.0}, {0.0}, {-1.0}}, {{1.0}, {0.0}, {-1.0}},
                            {1, 0, 1}, {0, 1, 1});
    auto weights = unit_weights_for(panel);
    auto inst = build_subproblem(panel, weights, toy_spec(1.0), 0.5);
    CHECK(inst.binary_vars.size() == 12);  // 2 stages x 2 indicator blocks x 3
    CHECK(inst.lp.num_vars - static_cast<int>(inst.binary_vars.size()) == 5);
    // Rows: 2 upper + 1 lower + 3 consistency + 2 fairness + 18 linking.
    CHECK(inst.lp.rows.size() == 2 + 1 + 3 + 2 + 18);
}

TEST_CASE("big-M is derived from the data and the box bounds") {
    // Stage-2 stacked l1 norms peak at 8, so M = 1.05*(10*8+10) = 94.5.
    auto panel = full_panel({{1.0}, {3.0}}, {{2.0}, {5.0}}, {1, 1}, {0, 1});
    auto weights = unit_weights_for(panel);
    SelectionSpec spec = toy_spec(1.0);
    auto prog = build_fair_program(panel, weights, spec);
    CHECK(prog.big_m[1] == Catch::Approx(94.5));
    CHECK(prog.big_m[0] == Catch::Approx(1.05 * (10.0 * 3.0 + 10.0)));

    spec.big_m = 50.0;  // below the stage-2 requirement of 90
    CHECK_THROWS_AS(build_fair_program(panel, weights, spec), ConfigError);
}

TEST_CASE("training the toy panel selects both positives") {
    auto panel = toy_panel();
    auto weights = unit_weights_for(panel);
    auto [policy, report] = train(panel, weights, toy_spec(1.0));
    CHECK(report.final_ratio == Catch::Approx(1.0));
    CHECK(report.train_precision_strict == Catch::Approx(1.0));
    // The two positives clear every stage strictly, the negatives none.
    for (int i = 0; i < 4; ++i) {
        bool pass = true;
        for (int t = 0; t < 2; ++t)
            pass = pass && policy.selects(t, panel.stacked_covariates(t, i));
        CHECK(pass == (panel.outcome[i] == 1));
    }
}

TEST_CASE("zero unfairness tolerance still admits the balanced optimum") {
    auto panel = toy_panel();
    auto weights = unit_weights_for(panel);
    auto [policy, report] = train(panel, weights, toy_spec(0.0));
    CHECK(report.final_ratio == Catch::Approx(1.0));
    CHECK(report.u_eps <= 1e-9);
}

TEST_CASE("ratio iterates increase strictly and finish below tolerance") {
    Rng rng(0xd1c4e1ull);
    int solved = 0;
    for (int trial = 0; trial < 6; ++trial) {
        auto inst = random_instance(rng, 6);
        TrainReport report;
        try {
            report = train(inst.panel, inst.weights, inst.spec).second;
        } catch (const ConfigError&) {
            continue;  // infeasible random spec
        }
        ++solved;
        REQUIRE(!report.steps.empty());
        CHECK(report.steps.size() <= 30);
        for (size_t s = 1; s < report.steps.size(); ++s) {
            CHECK(report.steps[s].rho > report.steps[s - 1].rho);
            CHECK(report.steps[s - 1].z > 1e-7);  // positive until termination
        }
        CHECK(std::fabs(report.steps.back().z) <= 1e-7);
    }
    CHECK(solved >= 3);
}

TEST_CASE("trained policies satisfy the exact model strictly") {
    Rng rng(0x5afec0ull);
    int solved = 0;
    for (int trial = 0; trial < 8; ++trial) {
        auto inst = random_instance(rng, 6);
        PolicyParams policy;
        TrainReport report;
        try {
            std::tie(policy, report) = train(inst.panel, inst.weights, inst.spec);
        } catch (const ConfigError&) {
            continue;
        }
        ++solved;

        const auto& ids = inst.panel.final_set();
        const int K = static_cast<int>(ids.size());
        // Strict funnel decisions per stage.
        std::vector<std::vector<bool>> sel(2, std::vector<bool>(K, false));
        for (int k = 0; k < K; ++k) {
            bool alive = true;
            for (int t = 0; t < 2; ++t) {
                alive = alive && policy.selects(t, inst.panel.stacked_covariates(t, ids[k]));
                sel[t][k] = alive;
            }
        }
        for (int t = 0; t < 2; ++t) {
            double gmass = 0.0, total = 0.0;
            for (int k = 0; k < K; ++k) {
                total += inst.weights.beta[t][k];
                if (sel[t][k]) gmass += inst.weights.beta[t][k];
            }
            CHECK(gmass <= inst.spec.upper_ratios[t] * total + 1e-9);
        }
        // Margin chain across stages: passing t+1 strictly requires clearing
        // stage t by the full margin.
        for (int k = 0; k < K; ++k) {
            const auto x0 = inst.panel.stacked_covariates(0, ids[k]);
            const auto x1 = inst.panel.stacked_covariates(1, ids[k]);
            if (policy.selects(1, x1))
                CHECK(policy.score(0, x0) >= policy.epsilon - kDecisionTol);
        }
        double fmass = 0.0, total = 0.0;
        for (int k = 0; k < K; ++k) {
            total += inst.weights.beta[1][k];
            if (sel[1][k]) fmass += inst.weights.beta[1][k];
        }
        CHECK(fmass >= inst.spec.lower_ratio_final * total - 1e-9);
        CHECK(report.u_strict <= inst.spec.eta + 1e-9);
        CHECK(report.u_eps <= inst.spec.eta + 1e-9);
    }
    CHECK(solved >= 4);
}

TEST_CASE("margin unfairness dominates the strict measure") {
    Rng rng(0x200fa1bull);
    auto panel = random_instance(rng, 10).panel;
    auto weights = no_ipw_weights(panel);
    for (int trial = 0; trial < 200; ++trial) {
        PolicyParams pol;
        pol.epsilon = 1e-3;
        pol.w = {{rng.normal(0.0, 3.0)}, {rng.normal(0.0, 3.0), rng.normal(0.0, 3.0)}};
        pol.b = {rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)};
        for (auto notion : {FairnessNotion::EqualOpportunity, FairnessNotion::DemographicParity}) {
            const double us = unfairness(pol, panel, weights, notion, UnfairnessMode::Strict);
            const double ue = unfairness(pol, panel, weights, notion, UnfairnessMode::Eps);
            CHECK(ue >= us - 1e-12);
        }
    }
}

TEST_CASE("extreme policies hit the unfairness endpoints") {
    // Group 1 positives all selected, group 0 positives all rejected.
    auto panel = full_panel({{1.0}, {1.0}, {-1.0}, {-1.0}},
                            {{1.0}, {1.0}, {-1.0}, {-1.0}}, {1, 1, 1, 1}, {1, 1, 0, 0});
    auto weights = unit_weights_for(panel);
    PolicyParams pol;
    pol.epsilon = 1e-3;
    pol.w = {{1.0}, {1.0, 0.0}};
    pol.b = {0.0, 0.0};
    CHECK(unfairness(pol, panel, weights, FairnessNotion::EqualOpportunity,
                     UnfairnessMode::Strict) == Catch::Approx(1.0));
    // Selecting everyone is fair under both notions.
    pol.b = {5.0, 5.0};
    CHECK(unfairness(pol, panel, weights, FairnessNotion::EqualOpportunity,
                     UnfairnessMode::Strict) == Catch::Approx(0.0));
    CHECK(unfairness(pol, panel, weights, FairnessNotion::DemographicParity,
                     UnfairnessMode::Strict) == Catch::Approx(0.0));
}

TEST_CASE("missing positives in a group is an error under equal opportunity") {
    auto panel = full_panel({{1.0}, {-1.0}}, {{1.0}, {-1.0}}, {1, 0}, {1, 0});
    auto weights = unit_weights_for(panel);
    CHECK_THROWS_AS(build_fair_program(panel, weights, toy_spec(1.0)), DataError);
    SelectionSpec dp = toy_spec(1.0);
    dp.notion = FairnessNotion::DemographicParity;
    CHECK_NOTHROW(build_fair_program(panel, weights, dp));
}

TEST_CASE("policy serialization round-trips") {
    PolicyParams pol;
    pol.epsilon = 1e-3;
    pol.w = {{1.25}, {-0.5, 2.0}};
    pol.b = {0.75, -1.5};
    auto j = policy_to_json(pol, {{"score"}, {"score", "review"}});
    auto back = policy_from_json(j);
    CHECK(back.epsilon == pol.epsilon);
    CHECK(back.w == pol.w);
    CHECK(back.b == pol.b);
    CHECK(j["stages"][1]["feature_names"][1] == "review");
}

TEST_CASE("oracle solves the obvious two-candidate instance") {
    auto panel = full_panel({{-1.0}, {1.0}}, {{-1.0}, {1.0}}, {0, 1}, {0, 1});
    auto weights = unit_weights_for(panel);
    SelectionSpec spec;
    spec.upper_ratios = {1.0, 0.5};
    spec.lower_ratio_final = 0.5;
    spec.eta = 1.0;
    // One positive candidate total, so equal opportunity has an empty group.
    spec.notion = FairnessNotion::DemographicParity;
    auto res = enumerate_optimal(panel, weights, spec);
    REQUIRE(res.feasible);
    CHECK(res.ratio == Catch::Approx(1.0));
    // The realizing policy reproduces the pattern up to solver residuals.
    CHECK(res.policy.score(1, panel.stacked_covariates(1, 1)) >= spec.margin - 1e-9);
    CHECK(res.policy.score(1, panel.stacked_covariates(1, 0)) <= 1e-9);
}

TEST_CASE("all-negative outcomes cap the oracle ratio at zero") {
    auto panel = full_panel({{-1.0}, {1.0}}, {{-1.0}, {1.0}}, {0, 0}, {0, 1});
    auto weights = unit_weights_for(panel);
    SelectionSpec spec;
    spec.upper_ratios = {1.0, 1.0};
    spec.lower_ratio_final = 0.5;
    spec.eta = 1.0;
    spec.notion = FairnessNotion::DemographicParity;
    auto res = enumerate_optimal(panel, weights, spec);
    REQUIRE(res.feasible);
    CHECK(res.ratio == 0.0);
}

TEST_CASE("solver matches the enumeration oracle on random instances") {
    Rng rng(0x0c0ac1e5ull);
    TrainLimits limits;
    limits.milp.gap_tol = 1e-9;
    int infeasible_seen = 0;
    for (int trial = 0; trial < 12; ++trial) {
        auto inst = random_instance(rng, 5);
        auto oracle = enumerate_optimal(inst.panel, inst.weights, inst.spec);
        if (!oracle.feasible) {
            ++infeasible_seen;
            CHECK_THROWS_AS(train(inst.panel, inst.weights, inst.spec, limits),
                            ConfigError);
            continue;
        }
        auto [policy, report] = train(inst.panel, inst.weights, inst.spec, limits);
        CHECK(report.final_ratio == Catch::Approx(oracle.ratio).margin(1e-6));
    }
    INFO("infeasible instances: " << infeasible_seen);
}

TEST_CASE("oracle rejects instances beyond its enumeration cap") {
    const int n = 13;
    std::vector<std::vector<double>> x(n);
    std::vector<int8_t> y(n), a(n);
    for (int i = 0; i < n; ++i) {
        x[i] = {i - 6.0};
        y[i] = i % 2;
        a[i] = i % 3 == 0;
    }
    auto panel = full_panel(x, x, y, a);
    auto weights = unit_weights_for(panel);
    CHECK_THROWS_AS(enumerate_optimal(panel, weights, toy_spec(1.0)), ConfigError);
}

TEST_CASE("precision is monotone in the unfairness budget") {
    Rng rng(0xe7a91dull);
    auto inst = random_instance(rng, 6);
    TrainLimits limits;
    limits.milp.gap_tol = 1e-9;
    double prev = -1.0;
    for (double eta : {0.0, 0.2, 0.5, 1.0}) {
        inst.spec.eta = eta;
        double ratio;
        try {
            ratio = train(inst.panel, inst.weights, inst.spec, limits).second.final_ratio;
        } catch (const ConfigError&) {
            continue;  // tight budgets may be infeasible outright
        }
        CHECK(ratio >= prev - 1e-9);
        prev = ratio;
    }
}
