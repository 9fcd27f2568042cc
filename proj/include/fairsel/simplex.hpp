#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fairsel/common.hpp"

namespace fairsel {

enum class Rel : uint8_t { LE, EQ, GE };

struct LpRow {
    std::vector<double> coeffs;  // dense, length num_vars
    Rel rel = Rel::LE;
    double rhs = 0.0;
};

// Linear program with finite bounds on every structural variable.
struct LpInstance {
    int num_vars = 0;
    bool maximize = true;
    std::vector<double> objective;
    std::vector<LpRow> rows;
    std::vector<double> lower;
    std::vector<double> upper;

    void validate() const {
        if (num_vars <= 0) throw ConfigError("LpInstance: num_vars must be positive");
        if (static_cast<int>(objective.size()) != num_vars ||
            static_cast<int>(lower.size()) != num_vars ||
            static_cast<int>(upper.size()) != num_vars)
            throw ConfigError("LpInstance: objective/bound dimension mismatch");
        for (int j = 0; j < num_vars; ++j) {
            if (!std::isfinite(lower[j]) || !std::isfinite(upper[j]))
                throw ConfigError("LpInstance: all variable bounds must be finite");
            if (lower[j] > upper[j])
                throw ConfigError("LpInstance: lower bound exceeds upper bound at variable " +
                                  std::to_string(j));
        }
        for (const auto& row : rows)
            if (static_cast<int>(row.coeffs.size()) != num_vars)
                throw ConfigError("LpInstance: row coefficient dimension mismatch");
    }
};

enum class LpStatus : uint8_t { Optimal, Infeasible, NumericError };

struct LpSolution {
    LpStatus status = LpStatus::NumericError;
    std::vector<double> x;
    double objective = 0.0;
    std::vector<double> duals;        // one per row, original row scale
    double duality_gap = 0.0;         // |primal - dual| at exit
    double infeasibility = 0.0;       // phase-1 residual when Infeasible
    int iterations = 0;
    std::string message;
};

namespace detail {

// Bounded-variable primal simplex on a dense tableau. Phase 1 introduces
// artificial columns only for rows whose slack cannot absorb the initial
// residual; phase 2 prices the true objective. Dantzig pricing with a Bland
// fallback after a run of degenerate pivots.
class SimplexSolver {
public:
    SimplexSolver(const LpInstance& inst, int max_iter)
        : inst_(inst), n_(inst.num_vars), m_(static_cast<int>(inst.rows.size())),
          max_iter_(max_iter) {}

    LpSolution solve() {
        LpSolution sol;
        setup();
        if (!phase1(sol)) return sol;
        // Phase 2: true objective on structurals, sign-flipped when minimizing.
        for (int j = 0; j < total_; ++j) cost_[j] = 0.0;
        for (int j = 0; j < n_; ++j) cost_[j] = inst_.maximize ? inst_.objective[j] : -inst_.objective[j];
        recompute_reduced_costs();
        const int status = iterate();
        if (status != 0) {
            sol.status = LpStatus::NumericError;
            sol.message = status == 1 ? "iteration limit reached" : "unbounded direction encountered";
            sol.iterations = iters_;
            return sol;
        }
        extract(sol);
        return sol;
    }

private:
    static constexpr double kInf = std::numeric_limits<double>::infinity();
    static constexpr double kPivTol = 1e-9;
    static constexpr double kCostTol = 1e-9;
    static constexpr double kDegenTol = 1e-10;
    static constexpr int kBlandTrigger = 1000;

    enum class VarState : uint8_t { Basic, AtLower, AtUpper };

    const LpInstance& inst_;
    int n_, m_;
    int total_ = 0;          // structurals + slacks + artificials
    int slack0_ = 0;         // first slack column
    int art0_ = 0;           // first artificial column
    int max_iter_;
    int iters_ = 0;
    int degen_run_ = 0;
    bool bland_ = false;

    std::vector<std::vector<double>> tab_;  // m rows, total_ columns (B^-1 A)
    std::vector<double> xb_;                // basic values per row
    std::vector<int> basis_;                // basic column per row
    std::vector<VarState> state_;
    std::vector<double> lo_, hi_;           // per column
    std::vector<double> cost_;              // current phase costs
    std::vector<double> dj_;                // reduced costs
    std::vector<double> row_scale_;         // original rhs / row divided by this

    void setup() {
        slack0_ = n_;
        art0_ = n_ + m_;
        total_ = n_ + m_;  // artificials appended below as needed

        lo_.assign(n_ + 2 * m_, 0.0);
        hi_.assign(n_ + 2 * m_, 0.0);
        row_scale_.assign(m_, 1.0);
        for (int j = 0; j < n_; ++j) {
            lo_[j] = inst_.lower[j];
            hi_[j] = inst_.upper[j];
        }

        tab_.assign(m_, std::vector<double>(n_ + 2 * m_, 0.0));
        xb_.assign(m_, 0.0);
        basis_.assign(m_, -1);
        state_.assign(n_ + 2 * m_, VarState::AtLower);

        // Structurals start at the bound nearer zero; deterministic.
        std::vector<double> xval(n_, 0.0);
        for (int j = 0; j < n_; ++j) {
            const bool use_lower = std::fabs(lo_[j]) <= std::fabs(hi_[j]);
            state_[j] = use_lower ? VarState::AtLower : VarState::AtUpper;
            xval[j] = use_lower ? lo_[j] : hi_[j];
        }

        int nart = 0;
        for (int r = 0; r < m_; ++r) {
            const LpRow& row = inst_.rows[r];
            double scale = 1.0;
            for (double c : row.coeffs) scale = std::max(scale, std::fabs(c));
            row_scale_[r] = scale;
            double act = 0.0;
            for (int j = 0; j < n_; ++j) {
                tab_[r][j] = row.coeffs[j] / scale;
                act += tab_[r][j] * xval[j];
            }
            const int sj = slack0_ + r;
            tab_[r][sj] = 1.0;
            switch (row.rel) {
                case Rel::LE: lo_[sj] = 0.0;   hi_[sj] = kInf; break;
                case Rel::GE: lo_[sj] = -kInf; hi_[sj] = 0.0;  break;
                case Rel::EQ: lo_[sj] = 0.0;   hi_[sj] = 0.0;  break;
            }
            double resid = row.rhs / scale - act;
            if (resid >= lo_[sj] && resid <= hi_[sj]) {
                basis_[r] = sj;
                state_[sj] = VarState::Basic;
                xb_[r] = resid;
            } else {
                // Slack bounds always admit zero, so pin it there and let an
                // artificial carry the residual. Negate the row first when the
                // residual is negative so the artificial column stays +e_r and
                // the initial basis is an identity on this row. The negation is
                // folded into row_scale_ (slack bounds flip with it).
                if (resid < 0.0) {
                    row_scale_[r] = -scale;
                    for (int j = 0; j < n_; ++j) tab_[r][j] = -tab_[r][j];
                    std::swap(lo_[sj], hi_[sj]);
                    lo_[sj] = -lo_[sj];
                    hi_[sj] = -hi_[sj];
                    resid = -resid;
                }
                state_[sj] = (lo_[sj] == 0.0) ? VarState::AtLower : VarState::AtUpper;
                const int aj = art0_ + nart++;
                tab_[r][aj] = 1.0;
                lo_[aj] = 0.0;
                hi_[aj] = kInf;
                basis_[r] = aj;
                state_[aj] = VarState::Basic;
                xb_[r] = resid;
            }
        }
        total_ = n_ + m_ + nart;
        for (auto& row : tab_) row.resize(total_);
        lo_.resize(total_);
        hi_.resize(total_);
        state_.resize(total_);
        cost_.assign(total_, 0.0);
        dj_.assign(total_, 0.0);
    }

    bool phase1(LpSolution& sol) {
        bool need = false;
        for (int r = 0; r < m_; ++r)
            if (basis_[r] >= art0_) { need = true; break; }
        if (!need) return true;

        for (int j = 0; j < total_; ++j) cost_[j] = (j >= art0_) ? -1.0 : 0.0;
        recompute_reduced_costs();
        const int status = iterate();
        if (status != 0) {
            sol.status = LpStatus::NumericError;
            sol.message = "phase-1 did not terminate cleanly";
            sol.iterations = iters_;
            return false;
        }
        double infeas = 0.0;
        for (int r = 0; r < m_; ++r)
            if (basis_[r] >= art0_) infeas += xb_[r];
        if (infeas > 1e-7 * (1.0 + rhs_norm())) {
            sol.status = LpStatus::Infeasible;
            sol.infeasibility = infeas;
            sol.iterations = iters_;
            sol.message = "phase-1 objective positive";
            return false;
        }
        // Pivot degenerate artificials out where possible; freeze the rest.
        for (int r = 0; r < m_; ++r) {
            if (basis_[r] < art0_) continue;
            int enter = -1;
            for (int j = 0; j < art0_; ++j) {
                if (state_[j] == VarState::Basic) continue;
                if (std::fabs(tab_[r][j]) > 1e-7) { enter = j; break; }
            }
            if (enter >= 0) {
                state_[basis_[r]] = VarState::AtLower;
                pivot(r, enter, (state_[enter] == VarState::AtLower) ? lo_[enter] : hi_[enter]);
            }
        }
        for (int j = art0_; j < total_; ++j) hi_[j] = 0.0;  // lock artificials at zero
        return true;
    }

    double rhs_norm() const {
        double s = 0.0;
        for (int r = 0; r < m_; ++r) s = std::max(s, std::fabs(inst_.rows[r].rhs / row_scale_[r]));
        return s;
    }

    void recompute_reduced_costs() {
        // dj = cost - cB^T (B^-1 A), using the tableau columns directly.
        std::vector<double> cb(m_);
        bool any = false;
        for (int r = 0; r < m_; ++r) {
            cb[r] = cost_[basis_[r]];
            if (cb[r] != 0.0) any = true;
        }
        for (int j = 0; j < total_; ++j) dj_[j] = cost_[j];
        if (!any) return;
        for (int r = 0; r < m_; ++r) {
            const double c = cb[r];
            if (c == 0.0) continue;
            const double* row = tab_[r].data();
            for (int j = 0; j < total_; ++j) dj_[j] -= c * row[j];
        }
    }

    // Returns 0 on optimal, 1 on iteration limit, 2 on unbounded.
    int iterate() {
        int since_recompute = 0;
        for (;;) {
            if (iters_ >= max_iter_) return 1;
            if (since_recompute >= 256) {
                recompute_reduced_costs();
                since_recompute = 0;
            }
            int enter = -1;
            double best = kCostTol;
            for (int j = 0; j < total_; ++j) {
                if (state_[j] == VarState::Basic) continue;
                if (lo_[j] == hi_[j]) continue;  // fixed
                const double d = dj_[j];
                double merit = 0.0;
                if (state_[j] == VarState::AtLower && d > kCostTol) merit = d;
                else if (state_[j] == VarState::AtUpper && d < -kCostTol) merit = -d;
                else continue;
                if (bland_) { enter = j; break; }
                if (merit > best) { best = merit; enter = j; }
            }
            if (enter < 0) return 0;

            const double dir = (state_[enter] == VarState::AtLower) ? 1.0 : -1.0;
            // Ratio test: basics move by -theta*dir*column.
            double theta = hi_[enter] - lo_[enter];  // bound-flip distance
            int leave = -1;
            double leave_piv = 0.0;
            bool leave_to_lower = true;
            for (int r = 0; r < m_; ++r) {
                const double a = dir * tab_[r][enter];
                if (std::fabs(a) <= kPivTol) continue;
                const int b = basis_[r];
                double limit;
                bool to_lower;
                if (a > 0.0) {
                    if (lo_[b] == -kInf) continue;
                    limit = (xb_[r] - lo_[b]) / a;
                    to_lower = true;
                } else {
                    if (hi_[b] == kInf) continue;
                    limit = (xb_[r] - hi_[b]) / a;
                    to_lower = false;
                }
                if (limit < -1e-12) limit = 0.0;
                const bool better =
                    limit < theta - 1e-12 ||
                    (limit < theta + 1e-12 && leave >= 0 &&
                     (bland_ ? basis_[r] < basis_[leave]
                             : std::fabs(tab_[r][enter]) > std::fabs(leave_piv)));
                if (better) {
                    theta = std::min(theta, std::max(limit, 0.0));
                    leave = r;
                    leave_piv = tab_[r][enter];
                    leave_to_lower = to_lower;
                }
            }
            if (!std::isfinite(theta)) return 2;

            ++iters_;
            ++since_recompute;
            if (theta <= kDegenTol) {
                if (++degen_run_ >= kBlandTrigger) bland_ = true;
            } else {
                degen_run_ = 0;
                bland_ = false;
            }

            const double start = (state_[enter] == VarState::AtLower) ? lo_[enter] : hi_[enter];
            if (leave < 0) {
                // Bound flip: entering runs to its other bound.
                for (int r = 0; r < m_; ++r) xb_[r] -= theta * dir * tab_[r][enter];
                state_[enter] = (dir > 0) ? VarState::AtUpper : VarState::AtLower;
                continue;
            }
            for (int r = 0; r < m_; ++r)
                if (r != leave) xb_[r] -= theta * dir * tab_[r][enter];
            const int out = basis_[leave];
            state_[out] = leave_to_lower ? VarState::AtLower : VarState::AtUpper;
            pivot(leave, enter, start + dir * theta);
        }
    }

    void pivot(int r, int enter, double enter_value) {
        const double piv = tab_[r][enter];
        double* prow = tab_[r].data();
        const double inv = 1.0 / piv;
        for (int j = 0; j < total_; ++j) prow[j] *= inv;
        prow[enter] = 1.0;
        for (int i = 0; i < m_; ++i) {
            if (i == r) continue;
            const double f = tab_[i][enter];
            if (f == 0.0) continue;
            double* irow = tab_[i].data();
            for (int j = 0; j < total_; ++j) irow[j] -= f * prow[j];
            irow[enter] = 0.0;
        }
        const double fd = dj_[enter];
        if (fd != 0.0) {
            for (int j = 0; j < total_; ++j) dj_[j] -= fd * prow[j];
            dj_[enter] = 0.0;
        }
        basis_[r] = enter;
        state_[enter] = VarState::Basic;
        xb_[r] = enter_value;
    }

    void extract(LpSolution& sol) {
        recompute_reduced_costs();
        sol.x.assign(n_, 0.0);
        for (int j = 0; j < n_; ++j)
            sol.x[j] = (state_[j] == VarState::AtUpper) ? hi_[j] : lo_[j];
        for (int r = 0; r < m_; ++r)
            if (basis_[r] < n_) sol.x[basis_[r]] = xb_[r];
        for (int j = 0; j < n_; ++j) sol.x[j] = std::clamp(sol.x[j], lo_[j], hi_[j]);

        double primal = 0.0;
        for (int j = 0; j < n_; ++j) primal += inst_.objective[j] * sol.x[j];
        sol.objective = primal;

        // Duals off the slack columns: dj(slack_k) = 0 - y_k, then undo the
        // row scaling so y matches the original constraint rows.
        sol.duals.assign(m_, 0.0);
        for (int k = 0; k < m_; ++k) {
            sol.duals[k] = -dj_[slack0_ + k] / row_scale_[k];
            if (!inst_.maximize) sol.duals[k] = -sol.duals[k];
        }

        // Weak-duality certificate for the bounded LP:
        //   dual = y^T b + sum_j [dj]+ * hi_j + [dj]- * lo_j   (maximization form)
        double dual = 0.0;
        for (int k = 0; k < m_; ++k)
            dual += (inst_.maximize ? sol.duals[k] : -sol.duals[k]) * inst_.rows[k].rhs;
        for (int j = 0; j < n_; ++j) {
            double d = (inst_.maximize ? inst_.objective[j] : -inst_.objective[j]);
            for (int k = 0; k < m_; ++k) {
                const double y = (inst_.maximize ? sol.duals[k] : -sol.duals[k]);
                if (y != 0.0) d -= y * inst_.rows[k].coeffs[j];
            }
            dual += (d > 0.0) ? d * hi_[j] : d * lo_[j];
        }
        const double primal_int = inst_.maximize ? primal : -primal;
        sol.duality_gap = std::fabs(primal_int - dual);
        sol.iterations = iters_;
        sol.status = LpStatus::Optimal;
    }
};

}  // namespace detail

inline LpSolution solve_lp(const LpInstance& inst, int max_iter = 0) {
    inst.validate();
    if (max_iter <= 0)
        max_iter = 20000 + 60 * (inst.num_vars + static_cast<int>(inst.rows.size()));
    detail::SimplexSolver solver(inst, max_iter);
    return solver.solve();
}

}  // namespace fairsel
