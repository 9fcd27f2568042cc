#include <chrono>
#include <cstdio>

#include "fairsel/eval.hpp"
#include "fairsel/synthgen.hpp"

using namespace fairsel;
using clk = std::chrono::steady_clock;

int main(int argc, char** argv) {
    const int n = argc > 1 ? std::atoi(argv[1]) : 60;
    auto logged = gen_synthetic(benchmark_synthetic_params(n, 7)).censored_view();
    auto models = fit_stage_models(logged);
    auto weights = compute_ipw_weights(logged, models, 0.01);
    SelectionSpec spec;
    spec.upper_ratios = {0.7, 0.35};
    spec.lower_ratio_final = 0.2;
    spec.eta = 1.0;
    std::printf("n=%d K=%zu\n", n, logged.final_set().size());
    const auto t0 = clk::now();
    auto [policy, rep] = train(logged, weights, spec);
    const double sec = std::chrono::duration<double>(clk::now() - t0).count();
    std::printf("time=%.2fs steps=%zu nodes=%lld ratio=%.4f\n", sec, rep.steps.size(),
                rep.total_nodes, rep.final_ratio);
    for (const auto& s : rep.steps)
        std::printf("  rho=%.6f z=%.3e nodes=%lld\n", s.rho, s.z, s.nodes);
    return 0;
}
