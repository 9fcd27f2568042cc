#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fairsel/dataset.hpp"
#include "fairsel/propensity.hpp"
#include "fairsel/rng.hpp"

namespace fairsel {

// Two-stage selection funnel over a latent qualification score. Group A=0 is
// the minority; a nuisance flag B depresses the stage-1 covariate, and the
// stage-2 covariate carries a group-dependent shift.
struct SyntheticParams {
    int n = 0;
    double p_a0 = 0.3;  // P(A = 0)
    double qual_var = 2.0;
    double noise1_var = 0.5;
    double noise2_var = 0.25;
    double b_rate_a0 = 0.2;
    double b_rate_a1 = 0.1;
    double b_effect = 0.5;
    double stage2_shift_a0 = -0.5;
    double stage2_shift_a1 = 0.5;
    double stage2_w2 = 0.7;
    double stage2_w1 = 0.3;
    double y_threshold = 1.0;
    uint64_t seed = 1;

    void validate() const {
        if (n <= 0) throw ConfigError("SyntheticParams: n must be positive");
        if (p_a0 <= 0.0 || p_a0 >= 1.0) throw ConfigError("SyntheticParams: p_a0 must lie in (0,1)");
        for (double v : {qual_var, noise1_var, noise2_var})
            if (v < 0.0) throw ConfigError("SyntheticParams: variances must be >= 0");
        if (qual_var == 0.0) throw ConfigError("SyntheticParams: qualification variance must be > 0");
        for (double r : {b_rate_a0, b_rate_a1})
            if (r < 0.0 || r >= 1.0) throw ConfigError("SyntheticParams: B rates must lie in [0,1)");
    }
};

// Uncensored panel: all covariates, outcomes, and realized propensities are
// stored; apply censored_view() to obtain the training-side observation.
inline StagePanel gen_synthetic(const SyntheticParams& p) {
    p.validate();
    StagePanel panel;
    panel.n_stages = 2;
    panel.censored = false;
    panel.stage_dims = {1, 1};
    panel.covariates.assign(2, std::vector<std::vector<double>>(p.n));
    panel.sensitive.resize(p.n);
    panel.selections.assign(2, std::vector<int8_t>(p.n, -1));
    panel.outcome.resize(p.n);
    panel.true_propensities.assign(2, std::vector<double>(p.n));

    Rng rng = derive_stream(p.seed, {0x9e4f01u});
    const double sd_x = std::sqrt(p.qual_var);
    const double sd_1 = std::sqrt(p.noise1_var);
    const double sd_2 = std::sqrt(p.noise2_var);

    for (int i = 0; i < p.n; ++i) {
        const int a = rng.uniform() < p.p_a0 ? 0 : 1;
        const double x = rng.normal(0.0, sd_x);
        const int b = rng.bernoulli(a == 0 ? p.b_rate_a0 : p.b_rate_a1) ? 1 : 0;
        const double x1 = x - p.b_effect * b + rng.normal(0.0, sd_1);
        const double mu1 = sigmoid(x1);
        const int s1 = rng.bernoulli(mu1) ? 1 : 0;
        const double x2 = x + (a == 0 ? p.stage2_shift_a0 : p.stage2_shift_a1) +
                          rng.normal(0.0, sd_2);
        const double mu2 = sigmoid(p.stage2_w2 * x2 + p.stage2_w1 * x1);
        const int s2 = rng.bernoulli(mu2) ? 1 : 0;

        panel.sensitive[i] = static_cast<int8_t>(a);
        panel.covariates[0][i] = {x1};
        panel.covariates[1][i] = {x2};
        panel.true_propensities[0][i] = mu1;
        panel.true_propensities[1][i] = mu2;
        panel.selections[0][i] = static_cast<int8_t>(s1);
        panel.selections[1][i] = s1 ? static_cast<int8_t>(s2) : int8_t{-1};
        panel.outcome[i] = static_cast<int8_t>(x >= p.y_threshold ? 1 : 0);
    }
    panel.finalize();
    return panel;
}

// Benchmark configuration pinned by a calibration pilot at n = 200,000:
// dispersion figures read as standard deviations and balanced groups put the
// logging policy at precision ~0.688, equal-opportunity unfairness ~0.06.
inline SyntheticParams benchmark_synthetic_params(int n, uint64_t seed) {
    SyntheticParams p;
    p.n = n;
    p.seed = seed;
    p.p_a0 = 0.5;
    p.qual_var = 4.0;     // dispersion 2 as sd
    p.noise1_var = 0.25;  // dispersion 0.5 as sd
    p.noise2_var = 0.0625;
    return p;
}

// Funnel simulated on top of a real feature table. Stage scores are driven by
// logistic models fitted on the uncensored source data.
struct SemiSyntheticParams {
    LogisticModel f1;  // outcome model on stage-1 features
    LogisticModel g;   // sensitive-attribute model on stage-1 features
    LogisticModel f2;  // outcome model on both stages' features
    double outcome_scale = 10.0;
    double b_penalty = 2.0;
    double stage2_shift = 1.5;  // subtracted for A=0, added for A=1
    double mix_s2 = 0.8;
    double mix_s1 = 0.2;
    double noise1_var = 1.0;
    double noise2_var = 1.0;
    double b_rate_g0 = 0.2;
    double b_rate_g1 = 0.1;
    uint64_t seed = 1;

    void validate() const {
        if (std::fabs(mix_s1 + mix_s2 - 1.0) > 1e-12)
            throw ConfigError("SemiSyntheticParams: mixing weights must sum to 1");
        if (noise1_var < 0.0 || noise2_var < 0.0)
            throw ConfigError("SemiSyntheticParams: noise variances must be >= 0");
    }
};

inline StagePanel gen_semisynthetic(const std::vector<std::vector<double>>& features,
                                    const std::vector<int8_t>& labels,
                                    const std::vector<int8_t>& sensitive,
                                    const std::vector<std::vector<int>>& stage_cols,
                                    const SemiSyntheticParams& p) {
    p.validate();
    const int n = static_cast<int>(features.size());
    if (n == 0) throw DataError("gen_semisynthetic: empty feature table");
    if (static_cast<int>(labels.size()) != n || static_cast<int>(sensitive.size()) != n)
        throw DataError("gen_semisynthetic: label/sensitive length mismatch");
    if (stage_cols.size() != 2) throw ConfigError("gen_semisynthetic: exactly two stages supported");

    const int d1 = static_cast<int>(stage_cols[0].size());
    const int d2 = static_cast<int>(stage_cols[1].size());
    if (p.f1.dim() != d1 || p.g.dim() != d1)
        throw ConfigError("gen_semisynthetic: stage-1 model dimension mismatch");
    if (p.f2.dim() != d1 + d2)
        throw ConfigError("gen_semisynthetic: stage-2 model dimension mismatch");

    StagePanel panel;
    panel.n_stages = 2;
    panel.censored = false;
    panel.stage_dims = {d1, d2};
    panel.covariates.assign(2, std::vector<std::vector<double>>(n));
    panel.sensitive = sensitive;
    panel.selections.assign(2, std::vector<int8_t>(n, -1));
    panel.outcome = labels;
    panel.true_propensities.assign(2, std::vector<double>(n));

    Rng rng = derive_stream(p.seed, {0x53435u});
    const double sd1 = std::sqrt(p.noise1_var);
    const double sd2 = std::sqrt(p.noise2_var);

    for (int i = 0; i < n; ++i) {
        std::vector<double> x1(d1), x2(d2);
        for (int k = 0; k < d1; ++k) x1[k] = features[i][stage_cols[0][k]];
        for (int k = 0; k < d2; ++k) x2[k] = features[i][stage_cols[1][k]];
        std::vector<double> x12 = x1;
        x12.insert(x12.end(), x2.begin(), x2.end());

        const int ghat = p.g.predict(x1) >= 0.5 ? 1 : 0;
        const int b = rng.bernoulli(ghat == 0 ? p.b_rate_g0 : p.b_rate_g1) ? 1 : 0;
        const double score1 = p.outcome_scale * p.f1.predict(x1) - p.b_penalty * b +
                              rng.normal(0.0, sd1);
        const double mu1 = sigmoid(score1);
        const int s1 = rng.bernoulli(mu1) ? 1 : 0;
        const double score2 = p.outcome_scale * p.f2.predict(x12) +
                              (sensitive[i] == 0 ? -p.stage2_shift : p.stage2_shift) +
                              rng.normal(0.0, sd2);
        const double mu2 = sigmoid(p.mix_s2 * score2 + p.mix_s1 * score1);
        const int s2 = rng.bernoulli(mu2) ? 1 : 0;

        panel.covariates[0][i] = std::move(x1);
        panel.covariates[1][i] = std::move(x2);
        panel.true_propensities[0][i] = mu1;
        panel.true_propensities[1][i] = mu2;
        panel.selections[0][i] = static_cast<int8_t>(s1);
        panel.selections[1][i] = s1 ? static_cast<int8_t>(s2) : int8_t{-1};
    }
    panel.finalize();
    return panel;
}

// Fits the three source models for the semi-synthetic simulation on the full
// uncensored table.
inline void fit_semisynthetic_models(const std::vector<std::vector<double>>& features,
                                     const std::vector<int8_t>& labels,
                                     const std::vector<int8_t>& sensitive,
                                     const std::vector<std::vector<int>>& stage_cols,
                                     SemiSyntheticParams& params,
                                     const LogisticOptions& opt = {}) {
    if (stage_cols.size() != 2) throw ConfigError("fit_semisynthetic_models: two stages required");
    const int n = static_cast<int>(features.size());
    std::vector<std::vector<double>> x1(n), x12(n);
    for (int i = 0; i < n; ++i) {
        for (int c : stage_cols[0]) x1[i].push_back(features[i][c]);
        x12[i] = x1[i];
        for (int c : stage_cols[1]) x12[i].push_back(features[i][c]);
    }
    params.f1 = fit_logistic(x1, labels, opt);
    params.g = fit_logistic(x1, sensitive, opt);
    params.f2 = fit_logistic(x12, labels, opt);
}

// Realized funnel statistics on an uncensored panel: the benchmark the
// learned policies are compared against.
struct LoggingStats {
    double precision = 0.0;
    double unfairness_eo = 0.0;
    double unfairness_dp = 0.0;
    std::vector<double> stage_rates;  // |I^t| / n
};

inline LoggingStats logging_policy_stats(const StagePanel& panel) {
    if (panel.censored) throw DataError("logging_policy_stats: needs an uncensored panel");
    const auto& fin = panel.final_set();
    if (fin.empty()) throw DataError("logging_policy_stats: empty final selection");
    LoggingStats st;
    int pos = 0;
    for (int i : fin) pos += panel.outcome_of(i);
    st.precision = static_cast<double>(pos) / static_cast<double>(fin.size());

    const int n = panel.num_candidates();
    std::vector<bool> in_final(n, false);
    for (int i : fin) in_final[i] = true;
    double sel_y1[2] = {0, 0}, tot_y1[2] = {0, 0};
    double sel_all[2] = {0, 0}, tot_all[2] = {0, 0};
    for (int i = 0; i < n; ++i) {
        const int a = panel.sensitive[i];
        tot_all[a] += 1;
        if (in_final[i]) sel_all[a] += 1;
        if (panel.outcome_of(i) == 1) {
            tot_y1[a] += 1;
            if (in_final[i]) sel_y1[a] += 1;
        }
    }
    if (tot_y1[0] > 0 && tot_y1[1] > 0)
        st.unfairness_eo = std::fabs(sel_y1[0] / tot_y1[0] - sel_y1[1] / tot_y1[1]);
    if (tot_all[0] > 0 && tot_all[1] > 0)
        st.unfairness_dp = std::fabs(sel_all[0] / tot_all[0] - sel_all[1] / tot_all[1]);
    for (int t = 1; t <= panel.n_stages; ++t)
        st.stage_rates.push_back(static_cast<double>(panel.index_sets[t].size()) / n);
    return st;
}

}  // namespace fairsel
