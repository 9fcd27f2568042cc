#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fairsel/common.hpp"
#include "fairsel/simplex.hpp"

namespace fairsel {

// Logical consequence between two binary variables: fixing if_var to if_val
// forces then_var to then_val in every integer-feasible point. Implications
// must be valid for the row system; the solver exploits them (propagation at
// branching time plus internal cut rows) but never checks them against data.
struct MilpImplication {
    int if_var = -1;
    int if_val = 0;
    int then_var = -1;
    int then_val = 0;
};

struct MilpInstance {
    LpInstance lp;
    std::vector<int> binary_vars;
    std::vector<MilpImplication> implications;
    std::vector<int> branch_priority;  // empty or per variable; higher branches first

    void validate() const {
        lp.validate();
        std::vector<bool> seen(lp.num_vars, false);
        for (int b : binary_vars) {
            if (b < 0 || b >= lp.num_vars)
                throw ConfigError("MilpInstance: binary index out of range");
            if (seen[b]) throw ConfigError("MilpInstance: duplicate binary index");
            seen[b] = true;
            if (lp.lower[b] < -1e-12 || lp.upper[b] > 1.0 + 1e-12)
                throw ConfigError("MilpInstance: binary variable bounds must lie in [0,1]");
        }
        for (const auto& im : implications) {
            if (im.if_var < 0 || im.if_var >= lp.num_vars || im.then_var < 0 ||
                im.then_var >= lp.num_vars)
                throw ConfigError("MilpInstance: implication variable out of range");
            if (!seen[im.if_var] || !seen[im.then_var])
                throw ConfigError("MilpInstance: implications may only link binary variables");
            if ((im.if_val != 0 && im.if_val != 1) || (im.then_val != 0 && im.then_val != 1))
                throw ConfigError("MilpInstance: implication values must be 0 or 1");
        }
        if (!branch_priority.empty() &&
            static_cast<int>(branch_priority.size()) != lp.num_vars)
            throw ConfigError("MilpInstance: branch_priority must be empty or per variable");
    }
};

enum class MilpStatus : uint8_t { Optimal, Infeasible, NodeLimit, TimeLimit };

struct MilpLimits {
    double gap_tol = 1e-6;
    double int_tol = 1e-6;
    double feas_tol = 1e-7;
    long long node_limit = 2000000;
    double time_limit_sec = 0.0;  // 0 disables the clock
};

struct MilpCallbacks {
    // Proposes a full-length candidate from a fractional node relaxation.
    // Return false to decline. Candidates are verified independently before
    // they can become incumbents.
    std::function<bool(const std::vector<double>& lp_x, std::vector<double>& candidate)> rounding;
    // Known feasible points injected before the search starts.
    std::vector<std::vector<double>> warm_starts;
};

struct MilpSolution {
    MilpStatus status = MilpStatus::Infeasible;
    bool has_incumbent = false;
    std::vector<double> x;
    double objective = 0.0;   // incumbent value in the instance's sense
    double best_bound = 0.0;  // valid bound in the instance's sense
    double gap = 0.0;         // bound minus incumbent, maximize orientation
    long long node_count = 0;
    double max_lp_duality_gap = 0.0;  // normalized by 1+|obj| per node solve
    std::string message;
};

// Feasibility check against the raw instance data only; used to vet every
// incumbent so a solver bug cannot smuggle in an invalid solution.
inline bool check_milp_solution(const MilpInstance& inst, const std::vector<double>& x,
                                double feas_tol = 1e-7, double int_tol = 1e-6,
                                std::string* why = nullptr) {
    const auto& lp = inst.lp;
    if (static_cast<int>(x.size()) != lp.num_vars) {
        if (why) *why = "dimension mismatch";
        return false;
    }
    for (int j = 0; j < lp.num_vars; ++j) {
        if (x[j] < lp.lower[j] - feas_tol || x[j] > lp.upper[j] + feas_tol) {
            if (why) *why = "bound violated at variable " + std::to_string(j);
            return false;
        }
    }
    for (int b : inst.binary_vars) {
        if (std::fabs(x[b] - std::round(x[b])) > int_tol) {
            if (why) *why = "integrality violated at variable " + std::to_string(b);
            return false;
        }
    }
    for (size_t r = 0; r < lp.rows.size(); ++r) {
        const auto& row = lp.rows[r];
        double act = 0.0, scale = 1.0;
        for (int j = 0; j < lp.num_vars; ++j) {
            act += row.coeffs[j] * x[j];
            scale = std::max(scale, std::fabs(row.coeffs[j]));
        }
        const double slack = row.rhs - act;
        const bool ok = (row.rel == Rel::LE && slack >= -feas_tol * scale) ||
                        (row.rel == Rel::GE && slack <= feas_tol * scale) ||
                        (row.rel == Rel::EQ && std::fabs(slack) <= feas_tol * scale);
        if (!ok) {
            if (why) *why = "row " + std::to_string(r) + " violated by " + std::to_string(slack);
            return false;
        }
    }
    return true;
}

// CPLEX-style LP text format, for cross-checking instances externally.
inline std::string write_lp_format(const MilpInstance& inst) {
    std::ostringstream os;
    os.precision(17);
    const auto& lp = inst.lp;
    os << (lp.maximize ? "Maximize\n" : "Minimize\n") << " obj:";
    bool first = true;
    for (int j = 0; j < lp.num_vars; ++j) {
        if (lp.objective[j] == 0.0) continue;
        os << (first ? " " : (lp.objective[j] >= 0 ? " + " : " ")) << lp.objective[j] << " x" << j;
        first = false;
    }
    if (first) os << " 0 x0";
    os << "\nSubject To\n";
    for (size_t r = 0; r < lp.rows.size(); ++r) {
        os << " c" << r << ":";
        bool f2 = true;
        for (int j = 0; j < lp.num_vars; ++j) {
            const double c = lp.rows[r].coeffs[j];
            if (c == 0.0) continue;
            os << (f2 ? " " : (c >= 0 ? " + " : " ")) << c << " x" << j;
            f2 = false;
        }
        if (f2) os << " 0 x0";
        const char* rel = lp.rows[r].rel == Rel::LE ? "<=" : lp.rows[r].rel == Rel::GE ? ">=" : "=";
        os << " " << rel << " " << lp.rows[r].rhs << "\n";
    }
    os << "Bounds\n";
    for (int j = 0; j < lp.num_vars; ++j)
        os << " " << lp.lower[j] << " <= x" << j << " <= " << lp.upper[j] << "\n";
    if (!inst.binary_vars.empty()) {
        os << "Binaries\n";
        for (int b : inst.binary_vars) os << " x" << b;
        os << "\n";
    }
    os << "End\n";
    return os.str();
}

namespace detail {

struct BbNode {
    int parent = -1;
    int fix_var = -1;      // branching variable fixed in this node
    double fix_val = 0.0;  // value it was fixed to
    double bound = 0.0;    // maximize orientation, inherited then refined
    int depth = 0;
    std::vector<std::pair<int, int>> rc_fixes;  // subtree-valid reduced-cost fixes
};

class BranchAndBound {
public:
    BranchAndBound(const MilpInstance& inst, const MilpLimits& lim, const MilpCallbacks& cb)
        : inst_(inst), lim_(lim), cb_(cb), sense_(inst.lp.maximize ? 1.0 : -1.0) {
        build_implication_graph();
        build_work_lp();
        root_lo_ = inst.lp.lower;
        root_hi_ = inst.lp.upper;
    }

    MilpSolution run() {
        const auto t0 = std::chrono::steady_clock::now();
        MilpSolution out;

        for (const auto& ws : cb_.warm_starts) try_incumbent(ws);

        nodes_.push_back(BbNode{});
        nodes_[0].bound = std::numeric_limits<double>::infinity();
        open_.push_back(0);

        long long since_restart = 0;
        while (!open_.empty()) {
            if (terminated_by_gap()) {
                out.status = MilpStatus::Optimal;
                finish(out, open_bound());
                return out;
            }
            if (node_count_ >= lim_.node_limit) {
                out.status = MilpStatus::NodeLimit;
                finish(out, open_bound());
                return out;
            }
            if (lim_.time_limit_sec > 0.0) {
                const double el = std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0).count();
                if (el > lim_.time_limit_sec) {
                    out.status = MilpStatus::TimeLimit;
                    finish(out, open_bound());
                    return out;
                }
            }

            // DFS plunge with a periodic best-bound restart.
            size_t pick = open_.size() - 1;
            if (++since_restart >= 64) {
                since_restart = 0;
                for (size_t i = 0; i < open_.size(); ++i)
                    if (nodes_[open_[i]].bound > nodes_[open_[pick]].bound) pick = i;
            }
            const int id = open_[pick];
            open_.erase(open_.begin() + static_cast<long>(pick));
            process(id);
        }

        out.status = has_inc_ ? MilpStatus::Optimal : MilpStatus::Infeasible;
        finish(out, has_inc_ ? inc_obj_ : -std::numeric_limits<double>::infinity());
        return out;
    }

private:
    const MilpInstance& inst_;
    const MilpLimits& lim_;
    const MilpCallbacks& cb_;
    const double sense_;

    std::vector<BbNode> nodes_;
    std::vector<int> open_;
    long long node_count_ = 0;
    double max_lp_gap_ = 0.0;
    LpInstance work_lp_;  // instance rows plus implication cuts; bounds set per node
    std::vector<std::vector<std::pair<int, int>>> impl_adj_;  // [var*2+val] -> consequents
    std::vector<double> root_lo_, root_hi_;            // instance bounds + root fixings
    std::vector<std::pair<int, int>> root_fixed_;      // reduced-cost fixed binaries

    bool has_inc_ = false;
    std::vector<double> inc_x_;
    double inc_obj_ = -std::numeric_limits<double>::infinity();  // maximize orientation

    double inc_tol(double mult) const { return mult * std::max(1.0, std::fabs(inc_obj_)); }

    bool terminated_by_gap() const {
        if (!has_inc_) return false;
        return open_bound() - inc_obj_ <= lim_.gap_tol * std::max(1.0, std::fabs(inc_obj_));
    }

    double open_bound() const {
        double b = has_inc_ ? inc_obj_ : -std::numeric_limits<double>::infinity();
        for (int id : open_) b = std::max(b, nodes_[id].bound);
        return b;
    }

    double raw_objective(const std::vector<double>& x) const {
        double v = 0.0;
        for (int j = 0; j < inst_.lp.num_vars; ++j) v += inst_.lp.objective[j] * x[j];
        return v;
    }

    void try_incumbent(const std::vector<double>& cand) {
        if (!check_milp_solution(inst_, cand, lim_.feas_tol, lim_.int_tol)) return;
        const double v = sense_ * raw_objective(cand);
        if (!has_inc_ || v > inc_obj_) {
            has_inc_ = true;
            inc_obj_ = v;
            inc_x_ = cand;
            for (int b : inst_.binary_vars) inc_x_[b] = std::round(inc_x_[b]);
        }
    }

    void build_implication_graph() {
        impl_adj_.assign(static_cast<size_t>(inst_.lp.num_vars) * 2, {});
        for (const auto& im : inst_.implications)
            impl_adj_[static_cast<size_t>(im.if_var) * 2 + im.if_val].emplace_back(im.then_var,
                                                                                   im.then_val);
    }

    // Pairwise binary row in canonical form: kind 0 is x_a <= x_b, kind 1 is
    // x_a + x_b <= 1, kind 2 is x_a + x_b >= 1.
    struct PairCut {
        int kind, a, b;
        bool operator<(const PairCut& o) const {
            return std::tie(kind, a, b) < std::tie(o.kind, o.a, o.b);
        }
    };

    // The working LP restates every implication as a row, so node relaxations
    // are tighter than the declared big-M system. Rows already present in the
    // instance (and duplicate implications) are emitted once.
    void build_work_lp() {
        work_lp_ = inst_.lp;
        std::set<PairCut> have;
        std::vector<bool> is_bin(inst_.lp.num_vars, false);
        for (int b : inst_.binary_vars) is_bin[b] = true;
        for (const auto& row : inst_.lp.rows) {
            int a = -1, b = -1;
            bool clean = true;
            for (int j = 0; j < inst_.lp.num_vars && clean; ++j) {
                if (row.coeffs[j] == 0.0) continue;
                if (a < 0) a = j;
                else if (b < 0) b = j;
                else clean = false;
            }
            if (!clean || b < 0 || !is_bin[a] || !is_bin[b]) continue;
            const double ca = row.coeffs[a], cb = row.coeffs[b];
            if (std::fabs(ca) != std::fabs(cb)) continue;
            // Normalize to <= with |coeffs| = 1 (EQ rows imply both directions
            // but never match a single pair pattern; skip them).
            if (row.rel == Rel::EQ) continue;
            const double flip = (row.rel == Rel::GE) ? -1.0 : 1.0;
            const double na = flip * ca / std::fabs(ca), nb = flip * cb / std::fabs(cb),
                         rhs = flip * row.rhs / std::fabs(ca);
            if (na > 0 && nb > 0 && rhs == 1.0) have.insert({1, std::min(a, b), std::max(a, b)});
            else if (na < 0 && nb < 0 && rhs == -1.0)
                have.insert({2, std::min(a, b), std::max(a, b)});
            else if (na > 0 && nb < 0 && rhs == 0.0) have.insert({0, a, b});
            else if (na < 0 && nb > 0 && rhs == 0.0) have.insert({0, b, a});
        }
        auto add_cut = [this, &have](const PairCut& cut) {
            if (!have.insert(cut).second) return;
            LpRow row;
            row.coeffs.assign(work_lp_.num_vars, 0.0);
            row.rel = Rel::LE;
            if (cut.kind == 0) {
                row.coeffs[cut.a] = 1.0;
                row.coeffs[cut.b] = -1.0;
                row.rhs = 0.0;
            } else {
                row.coeffs[cut.a] = 1.0;
                row.coeffs[cut.b] = 1.0;
                row.rhs = 1.0;
                if (cut.kind == 2) {
                    row.coeffs[cut.a] = -1.0;
                    row.coeffs[cut.b] = -1.0;
                    row.rhs = -1.0;
                }
            }
            work_lp_.rows.push_back(std::move(row));
        };
        for (const auto& im : inst_.implications) {
            const int a = im.if_var, b = im.then_var;
            if (im.if_val == 0 && im.then_val == 0) add_cut({0, b, a});
            else if (im.if_val == 1 && im.then_val == 1) add_cut({0, a, b});
            else if (im.if_val == 1 && im.then_val == 0)
                add_cut({1, std::min(a, b), std::max(a, b)});
            else add_cut({2, std::min(a, b), std::max(a, b)});
        }
    }

    // Applies the path's branching fixes plus their implication closure on
    // top of the root bounds. Returns false when fixes contradict: the node
    // is infeasible without an LP solve.
    bool node_bounds(int id, std::vector<double>& lo, std::vector<double>& hi) const {
        lo = root_lo_;
        hi = root_hi_;
        std::vector<std::pair<int, int>> queue = root_fixed_;
        auto fix = [&](int var, int val) {
            if (lo[var] > val + 0.5 || hi[var] < val - 0.5) return false;  // conflict
            if (lo[var] == hi[var]) return true;                           // already set
            lo[var] = hi[var] = val;
            queue.emplace_back(var, val);
            return true;
        };
        for (int cur = id; cur > 0; cur = nodes_[cur].parent) {
            const auto& nd = nodes_[cur];
            if (!fix(nd.fix_var, static_cast<int>(std::lround(nd.fix_val)))) return false;
            for (const auto& [v, val] : nd.rc_fixes)
                if (!fix(v, val)) return false;
        }
        while (!queue.empty()) {
            const auto [var, val] = queue.back();
            queue.pop_back();
            for (const auto& [tv, tval] : impl_adj_[static_cast<size_t>(var) * 2 + val])
                if (!fix(tv, tval)) return false;
        }
        return true;
    }

    // Reduced-cost fixing off a node relaxation: forcing a binary away from
    // its bound costs at least its reduced cost, so any flip whose resulting
    // bound would be pruned can be fixed for the whole subtree (globally when
    // the node is the root). Uses the same slack discipline as node pruning.
    void rc_fixing(int id, const LpSolution& rel, double bound) {
        const bool mx = work_lp_.maximize;
        std::vector<double> y(rel.duals.size());
        for (size_t r = 0; r < y.size(); ++r) y[r] = mx ? rel.duals[r] : -rel.duals[r];
        const double slack = rel.duality_gap + inc_tol(1e-9);
        auto fix_to = [&](int b, int val) {
            if (id == 0) {
                root_lo_[b] = root_hi_[b] = val;
                root_fixed_.emplace_back(b, val);
            } else {
                nodes_[id].rc_fixes.emplace_back(b, val);
            }
        };
        for (int b : inst_.binary_vars) {
            if (work_lp_.lower[b] >= work_lp_.upper[b] - 0.5) continue;  // fixed here already
            double d = mx ? work_lp_.objective[b] : -work_lp_.objective[b];
            for (size_t r = 0; r < y.size(); ++r) {
                if (y[r] != 0.0) d -= y[r] * work_lp_.rows[r].coeffs[b];
            }
            if (rel.x[b] <= lim_.int_tol && d < 0.0) {
                if (bound + d + slack <= inc_obj_) fix_to(b, 0);
            } else if (rel.x[b] >= 1.0 - lim_.int_tol && d > 0.0) {
                if (bound - d + slack <= inc_obj_) fix_to(b, 1);
            }
        }
    }

    void process(int id) {
        ++node_count_;
        if (has_inc_ && nodes_[id].bound <= inc_obj_ + inc_tol(1e-9)) return;
        if (!node_bounds(id, work_lp_.lower, work_lp_.upper)) return;
        const LpSolution rel = solve_lp(work_lp_);
        if (rel.status == LpStatus::Infeasible) return;
        if (rel.status != LpStatus::Optimal)
            throw SolverError("node relaxation failed: " + rel.message);
        max_lp_gap_ = std::max(max_lp_gap_,
                               rel.duality_gap / (1.0 + std::fabs(rel.objective)));

        // A node's relaxation bound can never beat what it inherited, so clamp
        // against numeric jitter; keeps bounds monotone down every path.
        const double bound = std::min(sense_ * rel.objective, nodes_[id].bound);
        nodes_[id].bound = bound;
        if (has_inc_ && bound <= inc_obj_ + inc_tol(1e-9)) return;

        // Highest branch priority wins; most fractional within a priority
        // class, then smallest index.
        int branch = -1;
        double worst = lim_.int_tol;
        int best_prio = std::numeric_limits<int>::min();
        for (int b : inst_.binary_vars) {
            const double f = std::fabs(rel.x[b] - std::round(rel.x[b]));
            if (f <= lim_.int_tol) continue;
            const int prio = inst_.branch_priority.empty() ? 0 : inst_.branch_priority[b];
            if (prio > best_prio || (prio == best_prio && f > worst + 1e-12)) {
                best_prio = prio;
                worst = f;
                branch = b;
            }
        }
        if (branch < 0) {
            try_incumbent(rel.x);
            return;
        }
        if (cb_.rounding) {
            std::vector<double> cand;
            if (cb_.rounding(rel.x, cand)) try_incumbent(cand);
            if (has_inc_ && bound <= inc_obj_ + inc_tol(1e-9)) return;
        }
        if (has_inc_) rc_fixing(id, rel, bound);

        // Children inherit this node's bound; nearest-integer child is pushed
        // last so the DFS plunge explores it first.
        const double near = std::round(rel.x[branch]);
        const double far = 1.0 - near;
        for (double v : {far, near}) {
            BbNode child;
            child.parent = id;
            child.fix_var = branch;
            child.fix_val = v;
            child.bound = bound;
            child.depth = nodes_[id].depth + 1;
            nodes_.push_back(child);
            open_.push_back(static_cast<int>(nodes_.size()) - 1);
        }
    }

    void finish(MilpSolution& out, double bound) {
        out.has_incumbent = has_inc_;
        out.node_count = node_count_;
        out.max_lp_duality_gap = max_lp_gap_;
        if (has_inc_) {
            out.x = inc_x_;
            out.objective = sense_ * inc_obj_;
            out.gap = std::max(0.0, bound - inc_obj_);
        } else {
            out.gap = std::numeric_limits<double>::infinity();
        }
        out.best_bound = sense_ * bound;
    }
};

}  // namespace detail

inline MilpSolution solve_milp(const MilpInstance& inst, const MilpLimits& limits = {},
                               const MilpCallbacks& callbacks = {}) {
    inst.validate();
    detail::BranchAndBound bb(inst, limits, callbacks);
    return bb.run();
}

}  // namespace fairsel
