#include <catch2/catch_amalgamated.hpp>

#include "fairsel/panel_io.hpp"
#include "fairsel/synthgen.hpp"

using namespace fairsel;

TEST_CASE("panel round-trips through the columnar file") {
    SyntheticParams p;
    p.n = 300;
    p.seed = 77;
    auto panel = gen_synthetic(p);
    write_panel(panel, "pio_full.csv", "pio_full.json", {{"seed", "77"}});
    auto back = read_panel("pio_full.csv", "pio_full.json");

    CHECK(back.n_stages == panel.n_stages);
    CHECK(back.censored == panel.censored);
    CHECK(back.stage_dims == panel.stage_dims);
    CHECK(back.sensitive == panel.sensitive);
    CHECK(back.selections == panel.selections);
    CHECK(back.outcome == panel.outcome);
    CHECK(back.index_sets == panel.index_sets);
    // fmt_double is round-trip exact.
    CHECK(back.covariates == panel.covariates);
    for (int t = 0; t < 2; ++t)
        for (int i : panel.index_sets[t])
            CHECK(back.true_propensities[t][i] == panel.true_propensities[t][i]);
}

TEST_CASE("censored panel round-trips with empty cells") {
    SyntheticParams p;
    p.n = 300;
    p.seed = 78;
    auto panel = gen_synthetic(p).censored_view();
    write_panel(panel, "pio_cens.csv", "pio_cens.json");
    auto back = read_panel("pio_cens.csv", "pio_cens.json");
    CHECK(back.censored);
    CHECK(back.covariates == panel.covariates);
    CHECK(back.outcome == panel.outcome);
    CHECK(back.index_sets == panel.index_sets);
}

TEST_CASE("sidecar disagreement is rejected") {
    SyntheticParams p;
    p.n = 50;
    p.seed = 79;
    auto panel = gen_synthetic(p);
    write_panel(panel, "pio_bad.csv", "pio_bad.json");
    {
        std::ofstream out("pio_bad.json");
        out << "{\"format_version\":1,\"n_stages\":2,\"stage_dims\":[1,1],"
               "\"censored\":false,\"num_candidates\":49}\n";
    }
    CHECK_THROWS_AS(read_panel("pio_bad.csv", "pio_bad.json"), DataError);
    {
        std::ofstream out("pio_bad.json");
        out << "not json\n";
    }
    CHECK_THROWS_AS(read_panel("pio_bad.csv", "pio_bad.json"), DataError);
}

TEST_CASE("weights round-trip through their file") {
    SyntheticParams p;
    p.n = 120;
    p.seed = 31;
    auto full = gen_synthetic(p);
    auto logged = full.censored_view();
    auto models = fit_stage_models(logged);
    auto w = compute_ipw_weights(logged, models, 0.01);
    write_weights(w, "pio_weights.csv");
    auto back = read_weights("pio_weights.csv");
    CHECK(back.ids == w.ids);
    CHECK(back.clip_floor == w.clip_floor);
    REQUIRE(back.n_stages() == w.n_stages());
    for (int t = 0; t < w.n_stages(); ++t)
        for (int k = 0; k < w.size(); ++k) {
            CHECK(back.beta[t][k] == Catch::Approx(w.beta[t][k]).epsilon(1e-12));
            CHECK(back.propensity[t][k] == Catch::Approx(w.propensity[t][k]).epsilon(1e-12));
        }
    CHECK_THROWS_AS(read_weights("pio_missing.csv"), DataError);
}
