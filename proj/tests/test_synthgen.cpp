#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fairsel/synthgen.hpp"

using namespace fairsel;

TEST_CASE("default generator matches the analytic base rate") {
    SyntheticParams p;
    p.n = 200000;
    p.seed = 3;
    auto panel = gen_synthetic(p);
    double y_rate = 0.0;
    for (int i = 0; i < p.n; ++i) y_rate += panel.outcome[i];
    y_rate /= p.n;
    // P(Y=1) = 1 - Phi(1/sqrt(2)) for qualification variance 2.
    CHECK(y_rate == Catch::Approx(0.23975).margin(0.005));
}

TEST_CASE("degenerate noise makes the first stage score the qualification") {
    SyntheticParams p;
    p.n = 2000;
    p.seed = 5;
    p.noise1_var = 0.0;
    p.b_effect = 0.0;
    auto panel = gen_synthetic(p);
    for (int i = 0; i < p.n; ++i) {
        double x1 = panel.covariates[0][i][0];
        CHECK(panel.outcome[i] == (x1 >= p.y_threshold ? 1 : 0));
    }
}

TEST_CASE("generation is bit-identical across calls") {
    SyntheticParams p;
    p.n = 500;
    p.seed = 99;
    auto a = gen_synthetic(p);
    auto b = gen_synthetic(p);
    CHECK(a.covariates == b.covariates);
    CHECK(a.sensitive == b.sensitive);
    CHECK(a.selections == b.selections);
    CHECK(a.outcome == b.outcome);
    CHECK(a.true_propensities == b.true_propensities);
    p.seed = 100;
    auto c = gen_synthetic(p);
    CHECK(a.covariates != c.covariates);
}

TEST_CASE("generator panel is uncensored and structurally sound") {
    SyntheticParams p;
    p.n = 1000;
    p.seed = 17;
    auto panel = gen_synthetic(p);
    CHECK_FALSE(panel.censored);
    CHECK(panel.n_stages == 2);
    CHECK(panel.stage_dims == std::vector<int>{1, 1});
    // Everyone carries both covariates and an outcome.
    for (int i = 0; i < p.n; ++i) {
        CHECK(panel.covariates[0][i].size() == 1);
        CHECK(panel.covariates[1][i].size() == 1);
        CHECK(panel.outcome[i] >= 0);
    }
    // The funnel shrinks.
    CHECK(panel.index_sets[1].size() < panel.index_sets[0].size());
    CHECK(panel.index_sets[2].size() < panel.index_sets[1].size());
    CHECK(panel.index_sets[2].size() > 0);
    // Stored propensities are the Bernoulli rates actually used.
    for (int i : panel.index_sets[1]) {
        double x1 = panel.covariates[0][i][0];
        CHECK(panel.true_propensities[0][i] == Catch::Approx(sigmoid(x1)));
        double x2 = panel.covariates[1][i][0];
        CHECK(panel.true_propensities[1][i] ==
              Catch::Approx(sigmoid(0.7 * x2 + 0.3 * x1)));
    }
}

TEST_CASE("symmetric groups leave the logging policy fair") {
    SyntheticParams p;
    p.n = 100000;
    p.seed = 23;
    p.p_a0 = 0.5;
    p.b_rate_a0 = 0.15;
    p.b_rate_a1 = 0.15;
    p.stage2_shift_a0 = 0.0;
    p.stage2_shift_a1 = 0.0;
    auto panel = gen_synthetic(p);
    auto stats = logging_policy_stats(panel);
    CHECK(stats.unfairness_eo <= 0.015);
    CHECK(stats.unfairness_dp <= 0.015);
}

TEST_CASE("calibrated benchmark hits the reference operating point") {
    auto p = benchmark_synthetic_params(200000, 31);
    auto panel = gen_synthetic(p);
    auto stats = logging_policy_stats(panel);
    CHECK(stats.precision >= 0.66);
    CHECK(stats.precision <= 0.71);
    CHECK(stats.unfairness_eo >= 0.02);
    CHECK(stats.unfairness_eo <= 0.08);
}

TEST_CASE("logging stats need the uncensored panel") {
    SyntheticParams p;
    p.n = 200;
    p.seed = 41;
    auto panel = gen_synthetic(p);
    auto censored = panel.censored_view();
    CHECK_THROWS_AS(logging_policy_stats(censored), DataError);
}

TEST_CASE("semi-synthetic scores follow the plug-in models") {
    // Single source feature per stage; f2 saturates near 1 via a huge
    // intercept so the second score is deterministic up to group shift.
    const int n = 50;
    std::vector<std::vector<double>> x(n, std::vector<double>{0.0, 0.0});
    std::vector<int8_t> labels(n, 1);
    std::vector<int8_t> sensitive(n, 1);
    for (int i = 0; i < n; ++i) x[i] = {0.1 * i, -0.1 * i};

    SemiSyntheticParams sp;
    sp.f1.theta = {0.0, 0.0};          // f1 = 1/2
    sp.g.theta = {0.0, 100.0};         // g = 1 everywhere: group 1
    sp.f2.theta = {0.0, 0.0, 100.0};   // f2 = 1
    sp.noise1_var = 0.0;
    sp.noise2_var = 0.0;
    sp.b_rate_g0 = 0.0;
    sp.b_rate_g1 = 0.0;
    sp.seed = 12;
    std::vector<std::vector<int>> stage_cols = {{0}, {1}};
    auto panel = gen_semisynthetic(x, labels, sensitive, stage_cols, sp);
    CHECK_FALSE(panel.censored);
    REQUIRE(panel.num_candidates() == n);
    for (int i = 0; i < n; ++i) {
        CHECK(panel.sensitive[i] == 1);
        // Policies see the source columns; the latent scores drive selection.
        CHECK(panel.covariates[0][i][0] == Catch::Approx(0.1 * i));
        CHECK(panel.covariates[1][i][0] == Catch::Approx(-0.1 * i));
        // Score1 = 10*f1 - 2*B = 5; Score2 = 10*f2 + shift = 11.5.
        CHECK(panel.true_propensities[0][i] == Catch::Approx(sigmoid(5.0)));
        CHECK(panel.true_propensities[1][i] ==
              Catch::Approx(sigmoid(0.8 * 11.5 + 0.2 * 5.0)));
        CHECK(panel.outcome[i] == 1);
    }
}

TEST_CASE("semi-synthetic model fitting validates dimensions") {
    const int n = 40;
    std::vector<std::vector<double>> x(n, std::vector<double>{0.0, 0.0});
    std::vector<int8_t> labels(n);
    std::vector<int8_t> sensitive(n);
    Rng rng(0xf17ull);
    for (int i = 0; i < n; ++i) {
        x[i] = {rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)};
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        sensitive[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    // Guard against separation at this tiny n.
    LogisticOptions opt;
    opt.l2 = 1e-2;
    std::vector<std::vector<int>> stage_cols = {{0}, {1}};
    SemiSyntheticParams sp;
    sp.seed = 13;
    fit_semisynthetic_models(x, labels, sensitive, stage_cols, sp, opt);
    CHECK(sp.f1.dim() == 1);
    CHECK(sp.g.dim() == 1);
    CHECK(sp.f2.dim() == 2);
    auto panel = gen_semisynthetic(x, labels, sensitive, stage_cols, sp);
    CHECK(panel.num_candidates() == n);

    SemiSyntheticParams bad = sp;
    bad.f2.theta = {0.0, 0.0};  // wrong stacked dimension
    CHECK_THROWS_AS(gen_semisynthetic(x, labels, sensitive, stage_cols, bad),
                    ConfigError);
}
