#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fairsel/common.hpp"
#include "fairsel/csv.hpp"
#include "fairsel/kvconfig.hpp"
#include "fairsel/rng.hpp"

namespace fairsel {

enum class FairnessNotion : uint8_t { EqualOpportunity, DemographicParity };

inline FairnessNotion parse_notion(const std::string& s) {
    if (s == "equal_opportunity") return FairnessNotion::EqualOpportunity;
    if (s == "demographic_parity") return FairnessNotion::DemographicParity;
    throw ConfigError("unknown fairness notion: " + s +
                      " (expected equal_opportunity or demographic_parity)");
}

inline std::string notion_name(FairnessNotion n) {
    return n == FairnessNotion::EqualOpportunity ? "equal_opportunity" : "demographic_parity";
}

// Targets for the staged selection problem: per-stage seat caps, a final
// floor, the fairness budget, and the policy box bounds.
struct SelectionSpec {
    std::vector<double> upper_ratios;  // one per stage, non-increasing
    double lower_ratio_final = 0.0;
    double eta = 1.0;
    double margin = 1e-3;
    FairnessNotion notion = FairnessNotion::EqualOpportunity;
    double big_m = 0.0;  // 0 = derive from data and box bounds at build time
    double w_max = 10.0;
    double b_max = 10.0;

    int n_stages() const { return static_cast<int>(upper_ratios.size()); }

    void validate() const {
        if (upper_ratios.empty()) throw ConfigError("SelectionSpec: needs at least one stage");
        double prev = 1.0;
        for (double a : upper_ratios) {
            if (a <= 0.0 || a > 1.0) throw ConfigError("SelectionSpec: upper ratios must lie in (0,1]");
            if (a > prev + 1e-12) throw ConfigError("SelectionSpec: upper ratios must be non-increasing");
            prev = a;
        }
        if (lower_ratio_final <= 0.0 || lower_ratio_final > upper_ratios.back() + 1e-12)
            throw ConfigError("SelectionSpec: final lower ratio must lie in (0, last upper ratio]");
        if (eta < 0.0 || eta > 1.0) throw ConfigError("SelectionSpec: eta must lie in [0,1]");
        if (margin <= 0.0) throw ConfigError("SelectionSpec: margin must be positive");
        if (w_max <= 0.0 || b_max <= 0.0) throw ConfigError("SelectionSpec: box bounds must be positive");
        if (big_m < 0.0) throw ConfigError("SelectionSpec: big_m must be >= 0");
        if (big_m > 0.0 && margin >= big_m)
            throw ConfigError("SelectionSpec: margin must be smaller than big_m");
    }
};

// Candidates flowing through a censored selection funnel. In a censored panel
// stage-t covariates exist only for candidates that reached stage t, and the
// outcome only for those selected through every stage. Generators can produce
// uncensored panels (censored = false) where everything is observed; those are
// the test-time ground truth.
struct StagePanel {
    int n_stages = 0;
    bool censored = true;
    std::vector<int> stage_dims;
    // covariates[t][i]: empty vector means absent.
    std::vector<std::vector<std::vector<double>>> covariates;
    std::vector<int8_t> sensitive;                   // in {0,1}
    std::vector<std::vector<int8_t>> selections;     // [t][i] in {-1,0,1}; -1 = never reached
    std::vector<int8_t> outcome;                     // -1 = unobserved
    std::vector<std::vector<double>> true_propensities;  // optional, NaN = absent
    std::vector<std::vector<int>> index_sets;        // derived: I^0 ... I^T

    int num_candidates() const { return static_cast<int>(sensitive.size()); }
    const std::vector<int>& final_set() const { return index_sets.back(); }

    bool reached(int t, int i) const { return t == 0 || selections[t - 1][i] >= 0; }

    bool in_final(int i) const {
        for (int t = 0; t < n_stages; ++t)
            if (selections[t][i] != 1) return false;
        return true;
    }

    // Checked outcome access: censoring means absence, never a default.
    int outcome_of(int i) const {
        if (outcome[i] < 0)
            throw DataError("outcome requested for censored candidate " + std::to_string(i));
        return outcome[i];
    }

    const std::vector<double>& covariate(int t, int i) const {
        if (covariates[t][i].empty())
            throw DataError("stage " + std::to_string(t + 1) + " covariates absent for candidate " +
                            std::to_string(i));
        return covariates[t][i];
    }

    // Concatenation (x^1, ..., x^{t+1}) seen by stage-(t+1) decision makers.
    std::vector<double> stacked_covariates(int t, int i) const {
        std::vector<double> out;
        for (int s = 0; s <= t; ++s) {
            const auto& x = covariate(s, i);
            out.insert(out.end(), x.begin(), x.end());
        }
        return out;
    }

    // Derives index sets and enforces the structural invariants.
    void finalize() {
        const int n = num_candidates();
        const int T = n_stages;
        if (T < 1) throw DataError("StagePanel: needs at least one stage");
        if (static_cast<int>(stage_dims.size()) != T ||
            static_cast<int>(covariates.size()) != T ||
            static_cast<int>(selections.size()) != T ||
            static_cast<int>(outcome.size()) != n)
            throw DataError("StagePanel: field dimensions disagree");
        for (int t = 0; t < T; ++t)
            if (static_cast<int>(covariates[t].size()) != n ||
                static_cast<int>(selections[t].size()) != n)
                throw DataError("StagePanel: per-stage arrays must cover all candidates");
        if (!true_propensities.empty() && static_cast<int>(true_propensities.size()) != T)
            throw DataError("StagePanel: true propensity array must cover all stages");

        index_sets.assign(T + 1, {});
        index_sets[0].resize(n);
        for (int i = 0; i < n; ++i) {
            if (sensitive[i] != 0 && sensitive[i] != 1)
                throw DataError("StagePanel: sensitive attribute must be 0/1");
            index_sets[0][i] = i;
        }
        for (int t = 1; t <= T; ++t) {
            std::vector<bool> in_prev(n, false);
            for (int i : index_sets[t - 1]) in_prev[i] = true;
            for (int i = 0; i < n; ++i) {
                const int8_t s = selections[t - 1][i];
                if (in_prev[i]) {
                    if (s != 0 && s != 1)
                        throw DataError("StagePanel: candidate " + std::to_string(i) +
                                        " reached stage " + std::to_string(t) +
                                        " but has no selection decision");
                } else if (s != -1) {
                    throw DataError("StagePanel: candidate " + std::to_string(i) +
                                    " has a decision at stage " + std::to_string(t) +
                                    " it never reached (nesting violated)");
                }
            }
            for (int i : index_sets[t - 1])
                if (selections[t - 1][i] == 1) index_sets[t].push_back(i);
        }

        for (int t = 0; t < T; ++t) {
            std::vector<bool> present_ok(n, !censored);
            if (censored) for (int i : index_sets[t]) present_ok[i] = true;
            for (int i = 0; i < n; ++i) {
                const bool has = !covariates[t][i].empty();
                if (censored && has && !present_ok[i])
                    throw DataError("StagePanel: stage " + std::to_string(t + 1) +
                                    " covariates present for unreached candidate " + std::to_string(i));
                if (present_ok[i] && !has && !censored)
                    throw DataError("StagePanel: uncensored panel missing stage covariates");
                if (censored && present_ok[i] && !has)
                    throw DataError("StagePanel: stage " + std::to_string(t + 1) +
                                    " covariates missing for candidate " + std::to_string(i));
                if (has && static_cast<int>(covariates[t][i].size()) != stage_dims[t])
                    throw DataError("StagePanel: covariate dimension mismatch at stage " +
                                    std::to_string(t + 1));
            }
        }

        std::vector<bool> in_final_set(n, false);
        for (int i : index_sets[T]) in_final_set[i] = true;
        for (int i = 0; i < n; ++i) {
            const bool has_y = outcome[i] >= 0;
            if (has_y && outcome[i] > 1) throw DataError("StagePanel: outcome must be 0/1");
            if (censored) {
                if (in_final_set[i] && !has_y)
                    throw DataError("StagePanel: outcome missing for selected candidate " +
                                    std::to_string(i));
                if (!in_final_set[i] && has_y)
                    throw DataError("StagePanel: outcome present for censored candidate " +
                                    std::to_string(i));
            } else if (!has_y) {
                throw DataError("StagePanel: uncensored panel missing outcome for candidate " +
                                std::to_string(i));
            }
        }
    }

    // Applies the censoring rules to a fully observed panel: drop covariates
    // past the last stage reached and outcomes of non-selected candidates.
    StagePanel censored_view() const {
        StagePanel out = *this;
        out.censored = true;
        const int n = num_candidates();
        for (int t = 1; t < n_stages; ++t) {
            std::vector<bool> keep(n, false);
            for (int i : index_sets[t]) keep[i] = true;
            for (int i = 0; i < n; ++i)
                if (!keep[i]) out.covariates[t][i].clear();
        }
        std::vector<bool> fin(n, false);
        for (int i : index_sets[n_stages]) fin[i] = true;
        for (int i = 0; i < n; ++i)
            if (!fin[i]) out.outcome[i] = -1;
        out.finalize();
        return out;
    }
};

// Generic tabular input for the semi-synthetic pipeline.
enum class ColumnKind : uint8_t { Numeric, Categorical, Binary };

struct RawTable {
    std::vector<std::string> names;
    std::vector<ColumnKind> kinds;
    std::vector<std::vector<std::string>> cells;  // row major
    int sensitive_col = -1;
    int label_col = -1;
    int dropped_missing_rows = 0;
    std::map<std::string, std::string> binary_level_map;  // "col=level" -> "0"/"1"

    int num_rows() const { return static_cast<int>(cells.size()); }
    int num_cols() const { return static_cast<int>(names.size()); }
};

namespace detail {

inline bool cell_missing(const std::string& s) {
    return s.empty() || s == "?" || s == "NA" || s == "na" || s == "N/A";
}

inline bool cell_numeric(const std::string& s) {
    if (cell_missing(s)) return false;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    (void)v;
    return end == s.c_str() + s.size();
}

}  // namespace detail

// Parses a CSV and applies the schema: designates sensitive and label columns
// (two-level columns are mapped to 0/1 by sorted level order), tags column
// kinds, and drops rows with missing cells (counted).
inline RawTable ingest(const std::string& path, const KvConfig& schema) {
    const CsvTable csv = read_csv(path);
    RawTable t;
    t.names = csv.header;

    const std::string sens_name = schema.get_string("sensitive_column");
    const std::string label_name = schema.get_string("label_column");
    std::set<std::string> categorical;
    if (schema.has("categorical_columns")) {
        std::string list = schema.get_string("categorical_columns");
        size_t pos = 0;
        while (pos <= list.size()) {
            size_t next = list.find(',', pos);
            if (next == std::string::npos) next = list.size();
            std::string item = list.substr(pos, next - pos);
            const auto b = item.find_first_not_of(" \t");
            if (b != std::string::npos) {
                const auto e = item.find_last_not_of(" \t");
                categorical.insert(item.substr(b, e - b + 1));
            }
            pos = next + 1;
        }
    }
    for (const auto& c : categorical)
        if (std::find(t.names.begin(), t.names.end(), c) == t.names.end())
            throw DataError("schema names unknown categorical column: " + c);

    for (int c = 0; c < t.num_cols(); ++c) {
        if (t.names[c] == sens_name) t.sensitive_col = c;
        if (t.names[c] == label_name) t.label_col = c;
    }
    if (t.sensitive_col < 0) throw DataError("schema error: sensitive column '" + sens_name + "' not found");
    if (t.label_col < 0) throw DataError("schema error: label column '" + label_name + "' not found");

    for (const auto& row : csv.rows) {
        bool missing = false;
        for (const auto& cell : row)
            if (detail::cell_missing(cell)) { missing = true; break; }
        if (missing) { ++t.dropped_missing_rows; continue; }
        t.cells.push_back(row);
    }
    if (t.cells.empty()) throw DataError(path + ": no complete rows after dropping missing values");

    t.kinds.resize(t.num_cols());
    for (int c = 0; c < t.num_cols(); ++c) {
        if (categorical.count(t.names[c])) { t.kinds[c] = ColumnKind::Categorical; continue; }
        bool numeric = true, binary01 = true;
        for (const auto& row : t.cells) {
            if (!detail::cell_numeric(row[c])) { numeric = false; binary01 = false; break; }
            if (row[c] != "0" && row[c] != "1") binary01 = false;
        }
        t.kinds[c] = binary01 ? ColumnKind::Binary
                   : numeric ? ColumnKind::Numeric
                             : ColumnKind::Categorical;
    }

    // Sensitive and label columns must end up binary; two-level columns are
    // encoded by sorted level order.
    for (int c : {t.sensitive_col, t.label_col}) {
        if (t.kinds[c] == ColumnKind::Binary) continue;
        std::set<std::string> levels;
        for (const auto& row : t.cells) levels.insert(row[c]);
        if (levels.size() != 2)
            throw DataError("column '" + t.names[c] + "' must be binary or two-level, found " +
                            std::to_string(levels.size()) + " levels");
        const std::string lv0 = *levels.begin();
        const std::string lv1 = *std::next(levels.begin());
        t.binary_level_map[t.names[c] + "=" + lv0] = "0";
        t.binary_level_map[t.names[c] + "=" + lv1] = "1";
        for (auto& row : t.cells) row[c] = (row[c] == lv0) ? "0" : "1";
        t.kinds[c] = ColumnKind::Binary;
    }
    return t;
}

struct FeatureMatrix {
    std::vector<std::vector<double>> x;  // n rows, d columns
    std::vector<int8_t> sensitive;
    std::vector<int8_t> label;
    std::vector<std::string> feature_names;
    std::vector<std::string> dropped_columns;    // zero variance
    std::vector<double> means, sds;              // per surviving numeric feature
    std::string scaling = "sample-sd";           // (n-1) denominator
};

// One-hot encodes categoricals (all levels kept) and standardizes numeric
// columns to mean 0, unit sample variance. Binary covariates pass through.
// Zero-variance numerics are dropped and reported.
inline FeatureMatrix preprocess(const RawTable& t) {
    FeatureMatrix f;
    const int n = t.num_rows();
    f.x.assign(n, {});
    f.sensitive.resize(n);
    f.label.resize(n);
    for (int r = 0; r < n; ++r) {
        f.sensitive[r] = static_cast<int8_t>(parse_int(t.cells[r][t.sensitive_col], "sensitive"));
        f.label[r] = static_cast<int8_t>(parse_int(t.cells[r][t.label_col], "label"));
        if (f.sensitive[r] != 0 && f.sensitive[r] != 1)
            throw DataError("sensitive column not 0/1 at row " + std::to_string(r + 1));
        if (f.label[r] != 0 && f.label[r] != 1)
            throw DataError("label column not 0/1 at row " + std::to_string(r + 1));
    }

    for (int c = 0; c < t.num_cols(); ++c) {
        if (c == t.sensitive_col || c == t.label_col) continue;
        if (t.kinds[c] == ColumnKind::Categorical) {
            std::set<std::string> levels;
            for (int r = 0; r < n; ++r) levels.insert(t.cells[r][c]);
            for (const auto& lv : levels) {
                f.feature_names.push_back(t.names[c] + "=" + lv);
                f.means.push_back(0.0);
                f.sds.push_back(1.0);
                for (int r = 0; r < n; ++r) f.x[r].push_back(t.cells[r][c] == lv ? 1.0 : 0.0);
            }
        } else if (t.kinds[c] == ColumnKind::Binary) {
            f.feature_names.push_back(t.names[c]);
            f.means.push_back(0.0);
            f.sds.push_back(1.0);
            for (int r = 0; r < n; ++r)
                f.x[r].push_back(parse_double(t.cells[r][c], t.names[c]));
        } else {
            std::vector<double> col(n);
            double mean = 0.0;
            for (int r = 0; r < n; ++r) {
                col[r] = parse_double(t.cells[r][c], t.names[c]);
                mean += col[r];
            }
            mean /= n;
            double ss = 0.0;
            for (double v : col) ss += (v - mean) * (v - mean);
            const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
            if (sd < 1e-12) {
                f.dropped_columns.push_back(t.names[c]);
                continue;
            }
            f.feature_names.push_back(t.names[c]);
            f.means.push_back(mean);
            f.sds.push_back(sd);
            for (int r = 0; r < n; ++r) f.x[r].push_back((col[r] - mean) / sd);
        }
    }
    return f;
}

// Partitions feature columns across stages, either by explicit assignment or
// by a seeded shuffle into near-equal non-empty groups.
inline std::vector<std::vector<int>> split_stage_covariates(
    int num_features, int n_stages, const std::vector<std::vector<int>>* explicit_assignment,
    uint64_t seed) {
    if (n_stages < 1) throw ConfigError("split: need at least one stage");
    if (explicit_assignment) {
        if (static_cast<int>(explicit_assignment->size()) != n_stages)
            throw ConfigError("split: assignment must cover every stage");
        std::vector<int> owner(num_features, -1);
        for (int t = 0; t < n_stages; ++t) {
            if ((*explicit_assignment)[t].empty())
                throw ConfigError("split: stage " + std::to_string(t + 1) + " has no columns");
            for (int c : (*explicit_assignment)[t]) {
                if (c < 0 || c >= num_features)
                    throw ConfigError("split: column index out of range: " + std::to_string(c));
                if (owner[c] != -1)
                    throw ConfigError("split: column " + std::to_string(c) + " assigned twice");
                owner[c] = t;
            }
        }
        for (int c = 0; c < num_features; ++c)
            if (owner[c] == -1)
                throw ConfigError("split: column " + std::to_string(c) + " not assigned to any stage");
        return *explicit_assignment;
    }
    if (num_features < n_stages)
        throw ConfigError("split: fewer columns than stages");
    std::vector<int> perm(num_features);
    for (int c = 0; c < num_features; ++c) perm[c] = c;
    Rng rng = derive_stream(seed, {0x5117u});
    for (int c = num_features - 1; c > 0; --c)
        std::swap(perm[c], perm[rng.below(static_cast<uint64_t>(c + 1))]);
    std::vector<std::vector<int>> out(n_stages);
    for (int k = 0; k < num_features; ++k) out[k % n_stages].push_back(perm[k]);
    for (auto& g : out) std::sort(g.begin(), g.end());
    return out;
}

inline std::pair<std::vector<int>, std::vector<int>> train_test_split(int n, double ratio,
                                                                      uint64_t seed) {
    if (ratio <= 0.0 || ratio >= 1.0)
        throw ConfigError("train_test_split: ratio must lie strictly in (0,1)");
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    Rng rng = derive_stream(seed, {0x7e57u});
    for (int i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.below(static_cast<uint64_t>(i + 1))]);
    const int k = static_cast<int>(std::llround(ratio * n));
    std::vector<int> train(perm.begin(), perm.begin() + k);
    std::vector<int> test(perm.begin() + k, perm.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

}  // namespace fairsel
