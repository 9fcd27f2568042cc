#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairsel/csv.hpp"
#include "fairsel/dataset.hpp"
#include "fairsel/propensity.hpp"

namespace fairsel {

// Columnar panel file: one row per candidate, empty cells where the funnel
// censored the value. A JSON sidecar carries the shape and provenance.

inline void write_panel(const StagePanel& panel, const std::string& csv_path,
                        const std::string& meta_path,
                        const std::map<std::string, std::string>& params = {}) {
    const int n = panel.num_candidates();
    const int T = panel.n_stages;
    const bool has_mu = !panel.true_propensities.empty();

    std::ofstream out(csv_path);
    if (!out) throw DataError("write_panel: cannot open " + csv_path);
    out << "candidate_id,a";
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < panel.stage_dims[t]; ++k)
            out << ",x" << (t + 1) << "_" << k;
    for (int t = 0; t < T; ++t) out << ",s" << (t + 1);
    if (has_mu)
        for (int t = 0; t < T; ++t) out << ",mu" << (t + 1);
    out << ",y\n";

    for (int i = 0; i < n; ++i) {
        out << i << ',' << int(panel.sensitive[i]);
        for (int t = 0; t < T; ++t) {
            const auto& xi = panel.covariates[t][i];
            for (int k = 0; k < panel.stage_dims[t]; ++k) {
                out << ',';
                if (!xi.empty()) out << fmt_double(xi[k]);
            }
        }
        for (int t = 0; t < T; ++t) {
            out << ',';
            if (panel.selections[t][i] >= 0) out << int(panel.selections[t][i]);
        }
        if (has_mu) {
            for (int t = 0; t < T; ++t) {
                out << ',';
                if (panel.selections[t][i] >= 0)
                    out << fmt_double(panel.true_propensities[t][i]);
            }
        }
        out << ',';
        if (panel.outcome[i] >= 0) out << int(panel.outcome[i]);
        out << '\n';
    }
    if (!out.good()) throw DataError("write_panel: write failed on " + csv_path);
    out.close();

    nlohmann::json meta;
    meta["format_version"] = 1;
    meta["n_stages"] = T;
    meta["stage_dims"] = panel.stage_dims;
    meta["censored"] = panel.censored;
    meta["num_candidates"] = n;
    meta["has_propensities"] = has_mu;
    meta["params"] = params;
    std::ofstream mout(meta_path);
    if (!mout) throw DataError("write_panel: cannot open " + meta_path);
    mout << meta.dump(2) << '\n';
    if (!mout.good()) throw DataError("write_panel: write failed on " + meta_path);
}

inline StagePanel read_panel(const std::string& csv_path, const std::string& meta_path) {
    std::ifstream min(meta_path);
    if (!min) throw DataError("read_panel: cannot open " + meta_path);
    nlohmann::json meta;
    try {
        min >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("read_panel: bad sidecar " + meta_path + ": " + e.what());
    }
    StagePanel panel;
    try {
        if (meta.at("format_version").get<int>() != 1)
            throw DataError("read_panel: unsupported format version");
        panel.n_stages = meta.at("n_stages").get<int>();
        panel.stage_dims = meta.at("stage_dims").get<std::vector<int>>();
        panel.censored = meta.at("censored").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("read_panel: bad sidecar " + meta_path + ": " + e.what());
    }
    const int T = panel.n_stages;
    const bool has_mu = meta.value("has_propensities", false);

    auto table = read_csv(csv_path);
    const int n = static_cast<int>(table.rows.size());
    if (meta.contains("num_candidates") && meta["num_candidates"].get<int>() != n)
        throw DataError("read_panel: row count disagrees with sidecar");

    const int a_col = table.col_required("a");
    const int y_col = table.col_required("y");
    std::vector<std::vector<int>> x_cols(T);
    std::vector<int> s_cols(T), mu_cols(T, -1);
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < panel.stage_dims[t]; ++k)
            x_cols[t].push_back(table.col_required(
                "x" + std::to_string(t + 1) + "_" + std::to_string(k)));
        s_cols[t] = table.col_required("s" + std::to_string(t + 1));
        if (has_mu) mu_cols[t] = table.col_required("mu" + std::to_string(t + 1));
    }

    panel.covariates.assign(T, std::vector<std::vector<double>>(n));
    panel.sensitive.resize(n);
    panel.selections.assign(T, std::vector<int8_t>(n, -1));
    panel.outcome.assign(n, -1);
    if (has_mu) panel.true_propensities.assign(T, std::vector<double>(n, 0.0));

    for (int i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        panel.sensitive[i] = static_cast<int8_t>(parse_int(row[a_col], "column a"));
        for (int t = 0; t < T; ++t) {
            if (row[s_cols[t]].empty()) continue;
            panel.selections[t][i] =
                static_cast<int8_t>(parse_int(row[s_cols[t]], "selection column"));
            if (has_mu)
                panel.true_propensities[t][i] =
                    parse_double(row[mu_cols[t]], "propensity column");
        }
        for (int t = 0; t < T; ++t) {
            if (row[x_cols[t][0]].empty()) continue;
            auto& xi = panel.covariates[t][i];
            xi.reserve(panel.stage_dims[t]);
            for (int c : x_cols[t]) xi.push_back(parse_double(row[c], "covariate column"));
        }
        if (!row[y_col].empty())
            panel.outcome[i] = static_cast<int8_t>(parse_int(row[y_col], "column y"));
    }
    panel.finalize();
    return panel;
}

// Weight files carry one row per final-set candidate: id, the clip floor
// (repeated, so the file is self contained), per-stage propensity products,
// and per-stage cumulative inverse weights.
inline void write_weights(const WeightSet& w, const std::string& path) {
    const int T = w.n_stages();
    std::ostringstream out;
    out << "id,clip_floor";
    for (int t = 0; t < T; ++t) out << ",mu" << (t + 1);
    for (int t = 0; t < T; ++t) out << ",beta" << (t + 1);
    out << "\n";
    for (int k = 0; k < w.size(); ++k) {
        out << w.ids[k] << ',' << fmt_double(w.clip_floor);
        for (int t = 0; t < T; ++t) out << ',' << fmt_double(w.propensity[t][k]);
        for (int t = 0; t < T; ++t) out << ',' << fmt_double(w.beta[t][k]);
        out << "\n";
    }
    std::ofstream f(path);
    if (!f) throw DataError("write_weights: cannot open " + path);
    f << out.str();
    if (!f.good()) throw DataError("write_weights: write failed on " + path);
}

inline WeightSet read_weights(const std::string& path) {
    auto table = read_csv(path);
    const int n = static_cast<int>(table.rows.size());
    if (n == 0) throw DataError("read_weights: no rows in " + path);
    int T = 0;
    while (table.col("beta" + std::to_string(T + 1)) >= 0) ++T;
    if (T == 0) throw DataError("read_weights: no beta columns in " + path);
    const int id_col = table.col_required("id");
    const int clip_col = table.col_required("clip_floor");
    std::vector<int> mu_cols(T), beta_cols(T);
    for (int t = 0; t < T; ++t) {
        mu_cols[t] = table.col_required("mu" + std::to_string(t + 1));
        beta_cols[t] = table.col_required("beta" + std::to_string(t + 1));
    }
    WeightSet w;
    w.propensity.assign(T, {});
    w.beta.assign(T, {});
    w.clip_floor = parse_double(table.rows[0][clip_col], "clip_floor");
    for (int i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        w.ids.push_back(static_cast<int>(parse_int(row[id_col], "weight id")));
        for (int t = 0; t < T; ++t) {
            w.propensity[t].push_back(parse_double(row[mu_cols[t]], "propensity"));
            w.beta[t].push_back(parse_double(row[beta_cols[t]], "weight"));
        }
    }
    return w;
}

}  // namespace fairsel
