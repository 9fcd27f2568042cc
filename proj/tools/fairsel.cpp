#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fairsel/dataset.hpp"
#include "fairsel/eval.hpp"
#include "fairsel/fairmodel.hpp"
#include "fairsel/kvconfig.hpp"
#include "fairsel/oracle.hpp"
#include "fairsel/panel_io.hpp"
#include "fairsel/propensity.hpp"
#include "fairsel/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairsel;

namespace {

// Mismatch reported by a self check (oracle-check): a bug, not bad input.
class CheckFailure : public Error {
public:
    using Error::Error;
};

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Artifacts land under their final name only after a complete write.
void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot open " + tmp + " for writing");
        out << content;
        if (!out.good()) throw DataError("write failed on " + tmp);
    }
    fs::rename(tmp, path);
}

void write_json_atomic(const std::string& path, const json& j) {
    atomic_write(path, j.dump(2) + "\n");
}

struct RunContext {
    std::string command;
    std::string config_path;  // empty when flags only
    std::map<std::string, std::string> file_entries;
    std::map<std::string, std::string> overrides;
    KvConfig cfg;
    std::string out_dir;

    std::string path(const std::string& name) const {
        return (fs::path(out_dir) / name).string();
    }
};

RunContext make_context(const std::string& command, const std::string& config_path,
                        const std::vector<std::string>& sets) {
    RunContext ctx;
    ctx.command = command;
    ctx.config_path = config_path;
    if (!config_path.empty()) {
        ctx.cfg = KvConfig::from_file(config_path);
        ctx.file_entries = ctx.cfg.entries();
    }
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        ctx.overrides[key] = val;
        ctx.cfg.set(key, val);
    }
    ctx.out_dir = ctx.cfg.get_string("out_dir", ".");
    fs::create_directories(ctx.out_dir);
    return ctx;
}

void write_manifest(const RunContext& ctx) {
    std::ostringstream resolved_text;
    for (const auto& [k, v] : ctx.cfg.entries()) resolved_text << k << '=' << v << '\n';
    std::ostringstream hash;
    hash << "fnv1a:" << std::hex << fnv1a(resolved_text.str());
    json j;
    j["command"] = ctx.command;
    j["version"] = kVersion;
    j["format_version"] = 1;
    j["config_file"] = ctx.config_path;
    j["file_entries"] = ctx.file_entries;
    j["flag_overrides"] = ctx.overrides;
    j["resolved"] = ctx.cfg.entries();
    j["config_hash"] = hash.str();
    write_json_atomic(ctx.path("manifest.json"), j);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = item.find_last_not_of(" \t");
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const auto& tok : split_list(s)) out.push_back(parse_double(tok, what));
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
}

// Grid syntax: either "a,b,c" or "start:stop:count" (inclusive endpoints).
std::vector<double> parse_grid(const std::string& s) {
    if (s.find(':') == std::string::npos) return parse_double_list(s, "eta_grid");
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    if (parts.size() != 3) throw ConfigError("eta_grid: expected start:stop:count, got '" + s + "'");
    const double lo = parse_double(parts[0], "eta_grid start");
    const double hi = parse_double(parts[1], "eta_grid stop");
    const long long k = parse_int(parts[2], "eta_grid count");
    if (k < 1) throw ConfigError("eta_grid: count must be >= 1");
    std::vector<double> out;
    if (k == 1) {
        out.push_back(lo);
    } else {
        for (long long i = 0; i < k; ++i)
            out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(k - 1));
    }
    return out;
}

const std::set<std::string> kSpecKeys = {"upper_ratios", "lower_ratio", "eta",  "margin",
                                         "notion",       "big_m",       "w_max", "b_max"};
const std::set<std::string> kLimitKeys = {"node_limit", "time_limit_sec", "gap_tol",
                                          "dink_tol", "max_iterations"};

SelectionSpec spec_from(const KvConfig& cfg) {
    SelectionSpec spec;
    spec.upper_ratios = parse_double_list(cfg.get_string("upper_ratios"), "upper_ratios");
    spec.lower_ratio_final = cfg.get_double("lower_ratio");
    spec.eta = cfg.get_double("eta", spec.eta);
    spec.margin = cfg.get_double("margin", spec.margin);
    spec.notion = parse_notion(cfg.get_string("notion", "equal_opportunity"));
    spec.big_m = cfg.get_double("big_m", spec.big_m);
    spec.w_max = cfg.get_double("w_max", spec.w_max);
    spec.b_max = cfg.get_double("b_max", spec.b_max);
    spec.validate();
    return spec;
}

TrainLimits limits_from(const KvConfig& cfg) {
    TrainLimits limits;
    limits.milp.node_limit = cfg.get_int("node_limit", limits.milp.node_limit);
    limits.milp.time_limit_sec = cfg.get_double("time_limit_sec", limits.milp.time_limit_sec);
    limits.milp.gap_tol = cfg.get_double("gap_tol", limits.milp.gap_tol);
    limits.dink_tol = cfg.get_double("dink_tol", limits.dink_tol);
    limits.max_iterations =
        static_cast<int>(cfg.get_int("max_iterations", limits.max_iterations));
    return limits;
}

StagePanel load_panel(const KvConfig& cfg, const std::string& csv_key,
                      const std::string& meta_key) {
    return read_panel(cfg.get_string(csv_key), cfg.get_string(meta_key));
}

void write_panel_atomic(const StagePanel& panel, const std::string& csv_path,
                        const std::string& meta_path,
                        const std::map<std::string, std::string>& params) {
    write_panel(panel, csv_path + ".tmp", meta_path + ".tmp", params);
    fs::rename(csv_path + ".tmp", csv_path);
    fs::rename(meta_path + ".tmp", meta_path);
}

json logging_stats_json(const LoggingStats& st) {
    return json{{"precision", st.precision},
                {"unfairness_eo", st.unfairness_eo},
                {"unfairness_dp", st.unfairness_dp},
                {"stage_rates", st.stage_rates}};
}

json train_report_json(const TrainReport& rep) {
    json steps = json::array();
    for (const auto& s : rep.steps)
        steps.push_back(json{{"rho", s.rho}, {"z", s.z}, {"nodes", s.nodes}, {"gap", s.gap}});
    return json{{"steps", steps},
                {"final_ratio", rep.final_ratio},
                {"train_precision_strict", rep.train_precision_strict},
                {"u_strict", rep.u_strict},
                {"u_eps", rep.u_eps},
                {"binding_upper", rep.binding_upper},
                {"binding_lower", rep.binding_lower},
                {"binding_consistency", rep.binding_consistency},
                {"binding_fairness", rep.binding_fairness},
                {"big_m_tight", rep.big_m_tight},
                {"total_nodes", rep.total_nodes},
                {"max_gap", rep.max_gap}};
}

// generate: synthetic two-stage logging run, written censored by default.
// The three dispersion keys are read as variances unless dispersion = sd.
int cmd_generate(RunContext& ctx) {
    ctx.cfg.require_known({"out_dir", "n", "seed", "censor", "dispersion", "preset", "p_a0",
                           "qual_var", "noise1_var", "noise2_var", "b_rate_a0", "b_rate_a1",
                           "b_effect", "stage2_shift_a0", "stage2_shift_a1", "stage2_w2",
                           "stage2_w1", "y_threshold"});
    const auto& cfg = ctx.cfg;
    const int n = static_cast<int>(cfg.get_int("n"));
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    const std::string preset = cfg.get_string("preset", "none");
    SyntheticParams p;
    if (preset == "benchmark") {
        p = benchmark_synthetic_params(n, seed);
    } else if (preset == "none") {
        p.n = n;
        p.seed = seed;
    } else {
        throw ConfigError("generate: unknown preset '" + preset + "'");
    }
    const std::string dispersion = cfg.get_string("dispersion", "variance");
    if (dispersion != "variance" && dispersion != "sd")
        throw ConfigError("generate: dispersion must be variance or sd");
    const bool as_sd = dispersion == "sd";
    auto disp = [&](const std::string& key, double& field) {
        if (!cfg.has(key)) return;
        const double v = cfg.get_double(key);
        field = as_sd ? v * v : v;
    };
    disp("qual_var", p.qual_var);
    disp("noise1_var", p.noise1_var);
    disp("noise2_var", p.noise2_var);
    if (cfg.has("p_a0")) p.p_a0 = cfg.get_double("p_a0");
    if (cfg.has("b_rate_a0")) p.b_rate_a0 = cfg.get_double("b_rate_a0");
    if (cfg.has("b_rate_a1")) p.b_rate_a1 = cfg.get_double("b_rate_a1");
    if (cfg.has("b_effect")) p.b_effect = cfg.get_double("b_effect");
    if (cfg.has("stage2_shift_a0")) p.stage2_shift_a0 = cfg.get_double("stage2_shift_a0");
    if (cfg.has("stage2_shift_a1")) p.stage2_shift_a1 = cfg.get_double("stage2_shift_a1");
    if (cfg.has("stage2_w2")) p.stage2_w2 = cfg.get_double("stage2_w2");
    if (cfg.has("stage2_w1")) p.stage2_w1 = cfg.get_double("stage2_w1");
    if (cfg.has("y_threshold")) p.y_threshold = cfg.get_double("y_threshold");

    const StagePanel full = gen_synthetic(p);
    const bool censor = cfg.get_bool("censor", true);
    std::map<std::string, std::string> meta = {{"seed", std::to_string(seed)},
                                               {"generator", "synthetic"}};
    write_panel_atomic(censor ? full.censored_view() : full, ctx.path("panel.csv"),
                       ctx.path("panel.meta.json"), meta);
    write_json_atomic(ctx.path("logging_stats.json"),
                      logging_stats_json(logging_policy_stats(full)));
    return 0;
}

// ingest: tabular file + schema -> semi-synthetic logged panel.
int cmd_ingest(RunContext& ctx) {
    ctx.cfg.require_known({"out_dir",        "input",       "sensitive_column", "label_column",
                           "categorical_columns", "stage_seed",  "stage1_columns",  "stage2_columns",
                           "seed",           "censor",      "outcome_scale",    "b_penalty",
                           "stage2_shift",   "mix_s2",      "mix_s1",           "noise1_var",
                           "noise2_var",     "b_rate_g0",   "b_rate_g1",        "l2"});
    const auto& cfg = ctx.cfg;
    KvConfig schema;
    schema.set("sensitive_column", cfg.get_string("sensitive_column"));
    schema.set("label_column", cfg.get_string("label_column"));
    if (cfg.has("categorical_columns"))
        schema.set("categorical_columns", cfg.get_string("categorical_columns"));
    RawTable table = ingest(cfg.get_string("input"), schema);
    FeatureMatrix f = preprocess(table);

    const int d = static_cast<int>(f.feature_names.size());
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    std::vector<std::vector<int>> stage_cols;
    if (cfg.has("stage1_columns") != cfg.has("stage2_columns"))
        throw ConfigError("ingest: stage1_columns and stage2_columns must be given together");
    if (cfg.has("stage1_columns")) {
        std::vector<std::vector<int>> assignment(2);
        for (int t = 0; t < 2; ++t) {
            const std::string key = "stage" + std::to_string(t + 1) + "_columns";
            for (const auto& name : split_list(cfg.get_string(key))) {
                int idx = -1;
                for (int c = 0; c < d; ++c)
                    if (f.feature_names[c] == name) idx = c;
                if (idx < 0) throw ConfigError("ingest: unknown feature column '" + name + "'");
                assignment[t].push_back(idx);
            }
        }
        stage_cols = split_stage_covariates(d, 2, &assignment, seed);
    } else {
        stage_cols = split_stage_covariates(
            d, 2, nullptr, static_cast<uint64_t>(cfg.get_int("stage_seed", static_cast<long long>(seed))));
    }

    SemiSyntheticParams sp;
    sp.seed = seed;
    if (cfg.has("outcome_scale")) sp.outcome_scale = cfg.get_double("outcome_scale");
    if (cfg.has("b_penalty")) sp.b_penalty = cfg.get_double("b_penalty");
    if (cfg.has("stage2_shift")) sp.stage2_shift = cfg.get_double("stage2_shift");
    if (cfg.has("mix_s2")) sp.mix_s2 = cfg.get_double("mix_s2");
    if (cfg.has("mix_s1")) sp.mix_s1 = cfg.get_double("mix_s1");
    if (cfg.has("noise1_var")) sp.noise1_var = cfg.get_double("noise1_var");
    if (cfg.has("noise2_var")) sp.noise2_var = cfg.get_double("noise2_var");
    if (cfg.has("b_rate_g0")) sp.b_rate_g0 = cfg.get_double("b_rate_g0");
    if (cfg.has("b_rate_g1")) sp.b_rate_g1 = cfg.get_double("b_rate_g1");
    LogisticOptions lopt;
    if (cfg.has("l2")) lopt.l2 = cfg.get_double("l2");
    fit_semisynthetic_models(f.x, f.label, f.sensitive, stage_cols, sp, lopt);

    const StagePanel full = gen_semisynthetic(f.x, f.label, f.sensitive, stage_cols, sp);
    const bool censor = cfg.get_bool("censor", true);
    std::map<std::string, std::string> meta = {{"seed", std::to_string(seed)},
                                               {"generator", "semisynthetic"},
                                               {"source", cfg.get_string("input")}};
    write_panel_atomic(censor ? full.censored_view() : full, ctx.path("panel.csv"),
                       ctx.path("panel.meta.json"), meta);
    write_json_atomic(ctx.path("logging_stats.json"),
                      logging_stats_json(logging_policy_stats(full)));

    json split = json::array();
    for (int t = 0; t < 2; ++t) {
        json names = json::array();
        for (int c : stage_cols[t]) names.push_back(f.feature_names[c]);
        split.push_back(names);
    }
    json extra = {{"dropped_missing_rows", table.dropped_missing_rows},
                  {"dropped_columns", f.dropped_columns},
                  {"stage_columns", split},
                  {"scaling", f.scaling}};
    write_json_atomic(ctx.path("ingest_report.json"), extra);
    return 0;
}

// fit-propensity: stagewise selection models on the logged panel, then
// cumulative inverse weights for the final-stage survivors.
int cmd_fit_propensity(RunContext& ctx) {
    ctx.cfg.require_known({"out_dir", "panel_csv", "panel_meta", "clip_floor", "l2",
                           "use_true_mu", "positivity_threshold"});
    const auto& cfg = ctx.cfg;
    const StagePanel panel = load_panel(cfg, "panel_csv", "panel_meta");
    const double clip = cfg.get_double("clip_floor", 0.01);
    WeightSet weights;
    json models_json = json::array();
    if (cfg.get_bool("use_true_mu", false)) {
        if (panel.true_propensities.empty())
            throw DataError("fit-propensity: panel carries no realized propensities");
        weights.clip_floor = clip;
        weights.ids = panel.final_set();
        weights.propensity.assign(panel.n_stages, {});
        weights.beta.assign(panel.n_stages, {});
        for (int i : weights.ids) {
            double cum = 1.0;
            for (int t = 0; t < panel.n_stages; ++t) {
                double mu = panel.true_propensities[t][i];
                if (mu <= 0.0 && clip == 0.0)
                    throw DataError("fit-propensity: zero propensity with clipping off");
                mu = std::max(mu, clip);
                cum *= mu;
                weights.propensity[t].push_back(mu);
                weights.beta[t].push_back(1.0 / cum);
            }
        }
    } else {
        LogisticOptions opt;
        if (cfg.has("l2")) opt.l2 = cfg.get_double("l2");
        const auto models = fit_stage_models(panel, opt);
        weights = compute_ipw_weights(panel, models, clip);
        for (const auto& m : models)
            models_json.push_back(json{{"theta", m.theta}, {"converged", m.converged},
                                       {"iterations", m.iterations}});
        const double thresh = cfg.get_double("positivity_threshold", clip);
        const auto pos = positivity_report(models, panel, thresh);
        json stages = json::array();
        for (const auto& st : pos.stages)
            stages.push_back(json{{"evaluated", st.evaluated},
                                  {"flagged", st.flagged},
                                  {"min_mu", st.min_mu},
                                  {"q01", st.q01},
                                  {"median", st.median},
                                  {"max_mu", st.max_mu}});
        write_json_atomic(ctx.path("positivity.json"),
                          json{{"threshold", pos.threshold},
                               {"total_flagged", pos.total_flagged()},
                               {"stages", stages}});
    }
    write_weights(weights, ctx.path("weights.csv") + ".tmp");
    fs::rename(ctx.path("weights.csv") + ".tmp", ctx.path("weights.csv"));
    write_json_atomic(ctx.path("propensity_models.json"), models_json);
    return 0;
}

WeightSet weights_for(const KvConfig& cfg, const StagePanel& panel) {
    if (cfg.has("weights_csv")) return read_weights(cfg.get_string("weights_csv"));
    return no_ipw_weights(panel);
}

int cmd_train(RunContext& ctx) {
    std::set<std::string> keys = {"out_dir", "panel_csv", "panel_meta", "weights_csv"};
    keys.insert(kSpecKeys.begin(), kSpecKeys.end());
    keys.insert(kLimitKeys.begin(), kLimitKeys.end());
    ctx.cfg.require_known(keys);
    const auto& cfg = ctx.cfg;
    const StagePanel panel = load_panel(cfg, "panel_csv", "panel_meta");
    const WeightSet weights = weights_for(cfg, panel);
    const SelectionSpec spec = spec_from(cfg);
    const auto [policy, report] = train(panel, weights, spec, limits_from(cfg));
    write_json_atomic(ctx.path("policy.json"), policy_to_json(policy));
    write_json_atomic(ctx.path("train_report.json"), train_report_json(report));
    return 0;
}

// evaluate: direct funnel metrics on an uncensored panel, or the weighted
// counterfactual estimate on a logged one (weights required there).
int cmd_evaluate(RunContext& ctx) {
    std::set<std::string> keys = {"out_dir", "policy", "panel_csv", "panel_meta",
                                  "weights_csv", "seed"};
    keys.insert(kSpecKeys.begin(), kSpecKeys.end());
    ctx.cfg.require_known(keys);
    const auto& cfg = ctx.cfg;
    std::ifstream pin(cfg.get_string("policy"));
    if (!pin) throw DataError("evaluate: cannot open policy file " + cfg.get_string("policy"));
    json pj;
    try {
        pin >> pj;
    } catch (const json::exception& e) {
        throw DataError(std::string("evaluate: bad policy JSON: ") + e.what());
    }
    const PolicyParams policy = policy_from_json(pj);
    const StagePanel panel = load_panel(cfg, "panel_csv", "panel_meta");
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));

    json out;
    out["direct"] = nullptr;
    out["counterfactual"] = nullptr;
    if (!panel.censored) {
        const SelectionSpec spec = spec_from(cfg);
        out["direct"] = eval_report_to_json(evaluate(policy, panel, spec, seed));
    } else if (!cfg.has("weights_csv")) {
        throw DataError("evaluate: censored panel needs weights_csv for counterfactual mode");
    }
    if (cfg.has("weights_csv")) {
        const WeightSet weights = read_weights(cfg.get_string("weights_csv"));
        const auto est = counterfactual_evaluate(policy, panel, weights);
        out["counterfactual"] = json{{"selection_rate", est.selection_rate},
                                     {"precision", est.precision},
                                     {"weighted_mass", est.weighted_mass}};
    }
    write_json_atomic(ctx.path("eval_report.json"), out);
    return 0;
}

int cmd_pareto(RunContext& ctx) {
    std::set<std::string> keys = {"out_dir",        "train_panel_csv", "train_panel_meta",
                                  "test_panel_csv", "test_panel_meta", "weights_csv",
                                  "eta_grid",       "trials",          "seed"};
    keys.insert(kSpecKeys.begin(), kSpecKeys.end());
    keys.insert(kLimitKeys.begin(), kLimitKeys.end());
    keys.erase("eta");  // the grid replaces the scalar budget
    ctx.cfg.require_known(keys);
    const auto& cfg = ctx.cfg;
    const StagePanel train_panel = load_panel(cfg, "train_panel_csv", "train_panel_meta");
    const StagePanel test_panel = load_panel(cfg, "test_panel_csv", "test_panel_meta");
    const WeightSet weights = weights_for(cfg, train_panel);
    const SelectionSpec spec = spec_from(cfg);
    const std::vector<double> grid = parse_grid(cfg.get_string("eta_grid"));
    const long long trials = cfg.get_int("trials", 10);
    if (trials < 1) throw ConfigError("pareto: trials must be >= 1");
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    std::vector<uint64_t> seeds;
    for (long long j = 0; j < trials; ++j) seeds.push_back(seed + static_cast<uint64_t>(j));
    const auto table =
        pareto_sweep(train_panel, weights, test_panel, spec, grid, seeds, limits_from(cfg));
    atomic_write(ctx.path("pareto.csv"), pareto_csv(table));
    return 0;
}

// oracle-check: train vs exhaustive enumeration on random tiny instances.
int cmd_oracle_check(RunContext& ctx) {
    ctx.cfg.require_known({"out_dir", "instances", "k", "seed", "tol", "node_limit", "gap_tol"});
    const auto& cfg = ctx.cfg;
    const int instances = static_cast<int>(cfg.get_int("instances", 20));
    const int k = static_cast<int>(cfg.get_int("k", 6));
    const double tol = cfg.get_double("tol", 1e-6);
    TrainLimits limits;
    limits.milp.gap_tol = cfg.get_double("gap_tol", 1e-9);
    limits.milp.node_limit = cfg.get_int("node_limit", limits.milp.node_limit);
    Rng rng = derive_stream(static_cast<uint64_t>(cfg.get_int("seed", 1)), {0x0c7ec4u});

    json rows = json::array();
    int failures = 0;
    for (int r = 0; r < instances; ++r) {
        auto inst = random_check_instance(rng, k);
        const auto oracle = enumerate_optimal(inst.panel, inst.weights, inst.spec);
        json row;
        row["instance"] = r;
        row["feasible"] = oracle.feasible;
        row["oracle_ratio"] = oracle.ratio;
        if (!oracle.feasible) {
            bool threw = false;
            try {
                train(inst.panel, inst.weights, inst.spec, limits);
            } catch (const ConfigError&) {
                threw = true;
            }
            row["pass"] = threw;
            if (!threw) ++failures;
        } else {
            const auto [policy, report] = train(inst.panel, inst.weights, inst.spec, limits);
            row["train_ratio"] = report.final_ratio;
            row["gap"] = std::fabs(report.final_ratio - oracle.ratio);
            row["pass"] = std::fabs(report.final_ratio - oracle.ratio) <= tol;
            if (!row["pass"].get<bool>()) ++failures;
        }
        rows.push_back(row);
    }
    write_json_atomic(ctx.path("oracle_check.json"),
                      json{{"instances", instances},
                           {"pool_size", k},
                           {"tol", tol},
                           {"failures", failures},
                           {"rows", rows}});
    if (failures > 0)
        throw CheckFailure("oracle-check: " + std::to_string(failures) + " of " +
                           std::to_string(instances) + " instances disagree");
    return 0;
}

// bench: wall-clock per pipeline phase on the calibrated synthetic setup.
int cmd_bench(RunContext& ctx) {
    ctx.cfg.require_known({"out_dir", "n", "test_n", "seed", "clip_floor", "upper_ratios",
                           "lower_ratio", "eta", "margin", "notion", "budget_sec", "node_limit",
                           "time_limit_sec", "dink_tol", "max_iterations", "gap_tol"});
    const auto& cfg = ctx.cfg;
    const int n = static_cast<int>(cfg.get_int("n", 200));
    const int test_n = static_cast<int>(cfg.get_int("test_n", 10000));
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    const double budget = cfg.get_double("budget_sec", 300.0);

    SelectionSpec spec;
    spec.upper_ratios = cfg.has("upper_ratios")
                            ? parse_double_list(cfg.get_string("upper_ratios"), "upper_ratios")
                            : std::vector<double>{0.7, 0.35};
    spec.lower_ratio_final = cfg.get_double("lower_ratio", 0.2);
    spec.eta = cfg.get_double("eta", 1.0);
    spec.margin = cfg.get_double("margin", 1e-3);
    spec.notion = parse_notion(cfg.get_string("notion", "equal_opportunity"));
    spec.validate();

    using clock = std::chrono::steady_clock;
    json phases = json::array();
    auto timed = [&phases](const std::string& name, auto&& fn) {
        const auto t0 = clock::now();
        fn();
        const double sec = std::chrono::duration<double>(clock::now() - t0).count();
        phases.push_back(json{{"name", name}, {"seconds", sec}});
        return sec;
    };

    StagePanel logged, test_panel;
    timed("generate", [&] {
        logged = gen_synthetic(benchmark_synthetic_params(n, seed)).censored_view();
        test_panel = gen_synthetic(benchmark_synthetic_params(test_n, seed + 1));
    });
    WeightSet weights;
    timed("fit_propensity", [&] {
        const auto models = fit_stage_models(logged);
        weights = compute_ipw_weights(logged, models, cfg.get_double("clip_floor", 0.01));
    });
    PolicyParams policy;
    TrainReport report;
    double train_sec = 0.0;
    train_sec = timed("train", [&] {
        std::tie(policy, report) = train(logged, weights, spec, limits_from(cfg));
    });
    EvalReport eval_rep;
    timed("evaluate", [&] { eval_rep = evaluate(policy, test_panel, spec, seed); });

    double total = 0.0;
    for (const auto& ph : phases) total += ph["seconds"].get<double>();
    write_json_atomic(ctx.path("bench.json"),
                      json{{"phases", phases},
                           {"total_seconds", total},
                           {"budget_sec", budget},
                           {"within_budget", train_sec <= budget},
                           {"train_ratio", report.final_ratio},
                           {"test_precision", eval_rep.precision},
                           {"test_u_eo", eval_rep.u_eo}});
    return 0;
}

int run_command(const std::string& name, const std::string& config_path,
                const std::vector<std::string>& sets) {
    RunContext ctx = make_context(name, config_path, sets);
    int rc = 0;
    if (name == "generate") rc = cmd_generate(ctx);
    else if (name == "ingest") rc = cmd_ingest(ctx);
    else if (name == "fit-propensity") rc = cmd_fit_propensity(ctx);
    else if (name == "train") rc = cmd_train(ctx);
    else if (name == "evaluate") rc = cmd_evaluate(ctx);
    else if (name == "pareto") rc = cmd_pareto(ctx);
    else if (name == "oracle-check") rc = cmd_oracle_check(ctx);
    else if (name == "bench") rc = cmd_bench(ctx);
    else throw ConfigError("unknown command: " + name);
    write_manifest(ctx);
    return rc;
}

int fail(const std::string& type, const std::string& message, int code) {
    json j;
    j["error"] = {{"type", type}, {"message", message}};
    std::cout << j.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"staged fair selection pipeline"};
    app.require_subcommand(1);

    struct SubArgs {
        std::string config;
        std::vector<std::string> sets;
    };
    std::map<std::string, SubArgs> args;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"generate", "simulate a synthetic logging run and write the panel"},
        {"ingest", "build a semi-synthetic logged panel from a tabular file"},
        {"fit-propensity", "fit stage selection models and write inverse weights"},
        {"train", "learn a stage policy from a logged panel"},
        {"evaluate", "score a policy on a panel, directly or counterfactually"},
        {"pareto", "sweep the unfairness budget and tabulate the frontier"},
        {"oracle-check", "cross check training against exhaustive enumeration"},
        {"bench", "time each pipeline phase against the budget"}};
    for (const auto& [name, desc] : commands) {
        auto* sub = app.add_subcommand(name, desc);
        auto& a = args[name];
        sub->add_option("--config", a.config, "key = value config file");
        sub->add_option("--set", a.sets, "override: key=value (repeatable)");
        auto alias = [&a, sub](const std::string& flag, const std::string& key,
                               const std::string& help) {
            sub->add_option_function<std::string>(
                flag, [&a, key](const std::string& v) { a.sets.push_back(key + "=" + v); },
                help);
        };
        alias("--out", "out_dir", "output directory");
        if (name == "generate" || name == "bench") alias("--n", "n", "panel size");
        if (name == "ingest") alias("--input", "input", "tabular input file");
        if (name == "pareto") {
            alias("--eta", "eta_grid", "unfairness grid: list or start:stop:count");
            alias("--trials", "trials", "evaluation seeds per grid point");
        }
        if (name == "train" || name == "evaluate") alias("--eta", "eta", "unfairness budget");
        if (name == "oracle-check") alias("--instances", "instances", "random instances");
        alias("--seed", "seed", "base seed");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::ostringstream msg;
        msg << e.get_name() << ": " << e.what();
        return fail("ConfigError", msg.str(), 2);
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        return run_command(name, args[name].config, args[name].sets);
    } catch (const ConfigError& e) {
        return fail("ConfigError", e.what(), 2);
    } catch (const DataError& e) {
        return fail("DataError", e.what(), 3);
    } catch (const SolverError& e) {
        return fail("SolverError", e.what(), 4);
    } catch (const std::exception& e) {
        return fail("Error", e.what(), 1);
    }
}
