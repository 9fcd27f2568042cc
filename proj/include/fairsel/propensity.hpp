#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "fairsel/csv.hpp"
#include "fairsel/dataset.hpp"

namespace fairsel {

inline double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

struct LogisticModel {
    std::vector<double> theta;  // feature coefficients, intercept last
    int iterations = 0;
    double grad_norm = 0.0;
    bool converged = false;

    int dim() const { return static_cast<int>(theta.size()) - 1; }

    double score(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != dim())
            throw DataError("logistic model: feature dimension mismatch");
        double s = theta.back();
        for (size_t j = 0; j < x.size(); ++j) s += theta[j] * x[j];
        return s;
    }
    double predict(const std::vector<double>& x) const { return sigmoid(score(x)); }
};

struct LogisticOptions {
    double l2 = 1e-6;  // ridge on every coefficient, intercept included
    double tol = 1e-8;
    int max_iter = 100;
};

namespace detail {

inline double penalized_nll(const std::vector<std::vector<double>>& x, const std::vector<int8_t>& y,
                            const std::vector<double>& theta, double l2) {
    const int n = static_cast<int>(x.size());
    const int d = static_cast<int>(theta.size()) - 1;
    double nll = 0.0;
    for (int i = 0; i < n; ++i) {
        double s = theta[d];
        for (int j = 0; j < d; ++j) s += theta[j] * x[i][j];
        // log(1 + e^s) computed without overflow
        const double softplus = std::max(s, 0.0) + std::log1p(std::exp(-std::fabs(s)));
        nll += softplus - (y[i] ? s : 0.0);
    }
    double pen = 0.0;
    for (double v : theta) pen += v * v;
    return nll + 0.5 * l2 * pen;
}

inline bool solve_spd(std::vector<std::vector<double>>& a, std::vector<double>& b) {
    const int k = static_cast<int>(b.size());
    for (int c = 0; c < k; ++c) {
        int piv = c;
        for (int r = c + 1; r < k; ++r)
            if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
        if (std::fabs(a[piv][c]) < 1e-12) return false;
        std::swap(a[piv], a[c]);
        std::swap(b[piv], b[c]);
        for (int r = 0; r < k; ++r) {
            if (r == c) continue;
            const double f = a[r][c] / a[c][c];
            if (f == 0.0) continue;
            for (int j = c; j < k; ++j) a[r][j] -= f * a[c][j];
            b[r] -= f * b[c];
        }
    }
    for (int c = 0; c < k; ++c) b[c] /= a[c][c];
    return true;
}

}  // namespace detail

// Ridge-penalized logistic regression by iteratively reweighted least squares
// with step halving. With l2 = 0 a coefficient-norm guard detects perfect
// separation (the unpenalized optimum runs to infinity).
inline LogisticModel fit_logistic(const std::vector<std::vector<double>>& x,
                                  const std::vector<int8_t>& y,
                                  const LogisticOptions& opt = {}) {
    const int n = static_cast<int>(x.size());
    if (n == 0) throw DataError("fit_logistic: empty training set");
    if (static_cast<int>(y.size()) != n) throw DataError("fit_logistic: label count mismatch");
    const int d = static_cast<int>(x[0].size());
    for (const auto& row : x)
        if (static_cast<int>(row.size()) != d) throw DataError("fit_logistic: ragged feature matrix");
    if (opt.l2 < 0.0) throw ConfigError("fit_logistic: l2 must be >= 0");

    LogisticModel model;
    model.theta.assign(d + 1, 0.0);
    double cur_obj = detail::penalized_nll(x, y, model.theta, opt.l2);

    std::vector<double> grad(d + 1);
    for (int it = 0; it < opt.max_iter; ++it) {
        // Gradient and weighted Gram matrix at the current point.
        std::vector<std::vector<double>> h(d + 1, std::vector<double>(d + 1, 0.0));
        for (int j = 0; j <= d; ++j) {
            grad[j] = opt.l2 * model.theta[j];
            h[j][j] = opt.l2;
        }
        double max_resid = 0.0;
        for (int i = 0; i < n; ++i) {
            double s = model.theta[d];
            for (int j = 0; j < d; ++j) s += model.theta[j] * x[i][j];
            const double p = sigmoid(s);
            const double resid = p - (y[i] ? 1.0 : 0.0);
            max_resid = std::max(max_resid, std::fabs(resid));
            const double w = std::max(p * (1.0 - p), 1e-12);
            for (int j = 0; j < d; ++j) grad[j] += resid * x[i][j];
            grad[d] += resid;
            for (int j = 0; j <= d; ++j) {
                const double xj = j < d ? x[i][j] : 1.0;
                if (xj == 0.0) continue;
                for (int k = j; k <= d; ++k) {
                    const double xk = k < d ? x[i][k] : 1.0;
                    h[j][k] += w * xj * xk;
                }
            }
        }
        for (int j = 0; j <= d; ++j)
            for (int k = 0; k < j; ++k) h[j][k] = h[k][j];

        model.grad_norm = 0.0;
        for (double g : grad) model.grad_norm = std::max(model.grad_norm, std::fabs(g));
        model.iterations = it;
        if (model.grad_norm <= opt.tol) {
            // A vanishing gradient with every observation fit exactly means the
            // unpenalized likelihood has no finite maximizer.
            if (opt.l2 == 0.0 && max_resid < 1e-6)
                throw DataError(
                    "fit_logistic: coefficients diverging, labels are perfectly "
                    "separated; refit with l2 > 0");
            model.converged = true;
            return model;
        }

        std::vector<double> step(d + 1);
        for (int j = 0; j <= d; ++j) step[j] = -grad[j];
        if (!detail::solve_spd(h, step))
            throw SolverError("fit_logistic: singular reweighted system; set l2 > 0");

        // Step halving on the penalized objective.
        double scale = 1.0;
        bool accepted = false;
        std::vector<double> trial(d + 1);
        for (int half = 0; half < 40; ++half) {
            for (int j = 0; j <= d; ++j) trial[j] = model.theta[j] + scale * step[j];
            const double trial_obj = detail::penalized_nll(x, y, trial, opt.l2);
            if (trial_obj <= cur_obj + 1e-14 * std::fabs(cur_obj)) {
                model.theta = trial;
                cur_obj = trial_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) {
            model.converged = model.grad_norm <= std::sqrt(opt.tol);
            return model;
        }

        if (opt.l2 == 0.0) {
            double norm = 0.0;
            for (double v : model.theta) norm = std::max(norm, std::fabs(v));
            if (norm > 30.0)
                throw DataError(
                    "fit_logistic: coefficients diverging, labels are perfectly separated; "
                    "refit with l2 > 0");
        }
    }
    model.iterations = opt.max_iter;
    return model;
}

// Per-stage inverse propensity weights for the final-stage survivors.
struct WeightSet {
    std::vector<int> ids;                         // I^T members, ascending
    std::vector<std::vector<double>> propensity;  // [t][k], clipped
    std::vector<std::vector<double>> beta;        // [t][k], cumulative inverses
    double clip_floor = 0.0;

    int n_stages() const { return static_cast<int>(beta.size()); }
    int size() const { return static_cast<int>(ids.size()); }
    double normalizer(int t) const {
        double s = 0.0;
        for (double b : beta[t]) s += b;
        return s;
    }
};

inline WeightSet compute_ipw_weights(const StagePanel& panel,
                                     const std::vector<LogisticModel>& models,
                                     double clip_floor = 0.01) {
    if (static_cast<int>(models.size()) != panel.n_stages)
        throw ConfigError("compute_ipw_weights: one model per stage required");
    if (clip_floor < 0.0 || clip_floor >= 1.0)
        throw ConfigError("compute_ipw_weights: clip floor must lie in [0,1)");
    WeightSet w;
    w.clip_floor = clip_floor;
    w.ids = panel.final_set();
    w.propensity.assign(panel.n_stages, {});
    w.beta.assign(panel.n_stages, {});
    for (int t = 0; t < panel.n_stages; ++t) {
        w.propensity[t].reserve(w.ids.size());
        w.beta[t].reserve(w.ids.size());
    }
    for (int i : w.ids) {
        double cum = 1.0;
        for (int t = 0; t < panel.n_stages; ++t) {
            double mu = models[t].predict(panel.stacked_covariates(t, i));
            if (mu <= 0.0 && clip_floor == 0.0)
                throw DataError(
                    "compute_ipw_weights: predicted selection probability is 0 for candidate " +
                    std::to_string(i) + " at stage " + std::to_string(t + 1) +
                    "; positivity is violated and clipping is off");
            mu = std::max(mu, clip_floor);
            cum *= mu;
            w.propensity[t].push_back(mu);
            w.beta[t].push_back(1.0 / cum);
        }
    }
    return w;
}

// Uniform weights: the No-IPW baseline that ignores the censoring process.
inline WeightSet no_ipw_weights(const StagePanel& panel) {
    WeightSet w;
    w.clip_floor = 0.0;
    w.ids = panel.final_set();
    w.propensity.assign(panel.n_stages, std::vector<double>(w.ids.size(), 1.0));
    w.beta.assign(panel.n_stages, std::vector<double>(w.ids.size(), 1.0));
    return w;
}

// Fits the stage-t selection model on everyone who reached stage t.
inline std::vector<LogisticModel> fit_stage_models(const StagePanel& panel,
                                                   const LogisticOptions& opt = {}) {
    std::vector<LogisticModel> models;
    for (int t = 0; t < panel.n_stages; ++t) {
        std::vector<std::vector<double>> x;
        std::vector<int8_t> y;
        for (int i : panel.index_sets[t]) {
            x.push_back(panel.stacked_covariates(t, i));
            y.push_back(panel.selections[t][i]);
        }
        models.push_back(fit_logistic(x, y, opt));
    }
    return models;
}

struct PositivityReport {
    struct StageStats {
        int evaluated = 0;
        int flagged = 0;
        double min_mu = 1.0, q01 = 1.0, median = 1.0, max_mu = 0.0;
    };
    std::vector<StageStats> stages;
    std::vector<std::pair<int, int>> flagged;  // (stage, candidate)
    double threshold = 0.0;

    int total_flagged() const { return static_cast<int>(flagged.size()); }
};

inline PositivityReport positivity_report(const std::vector<LogisticModel>& models,
                                          const StagePanel& panel, double threshold) {
    PositivityReport rep;
    rep.threshold = threshold;
    for (int t = 0; t < panel.n_stages; ++t) {
        PositivityReport::StageStats st;
        std::vector<double> mus;
        for (int i : panel.index_sets[t]) {
            const double mu = models[t].predict(panel.stacked_covariates(t, i));
            mus.push_back(mu);
            if (mu < threshold) {
                ++st.flagged;
                rep.flagged.emplace_back(t, i);
            }
        }
        st.evaluated = static_cast<int>(mus.size());
        if (!mus.empty()) {
            std::sort(mus.begin(), mus.end());
            st.min_mu = mus.front();
            st.max_mu = mus.back();
            st.q01 = mus[static_cast<size_t>(0.01 * (mus.size() - 1))];
            st.median = mus[mus.size() / 2];
        }
        rep.stages.push_back(st);
    }
    return rep;
}

// candidate id, stage, clipped propensity, cumulative inverse weight
inline std::string weights_to_csv(const WeightSet& w) {
    std::ostringstream os;
    os << "candidate_id,stage,mu,beta\n";
    for (int k = 0; k < w.size(); ++k)
        for (int t = 0; t < w.n_stages(); ++t)
            os << w.ids[k] << "," << t + 1 << "," << fmt_double(w.propensity[t][k]) << ","
               << fmt_double(w.beta[t][k]) << "\n";
    return os.str();
}

inline std::string model_to_json(const LogisticModel& m) {
    std::ostringstream os;
    os << "{\"coefficients\":[";
    for (int j = 0; j < m.dim(); ++j) os << (j ? "," : "") << fmt_double(m.theta[j]);
    os << "],\"intercept\":" << fmt_double(m.theta.back())
       << ",\"iterations\":" << m.iterations << ",\"grad_norm\":" << fmt_double(m.grad_norm)
       << ",\"converged\":" << (m.converged ? "true" : "false") << "}";
    return os.str();
}

}  // namespace fairsel
