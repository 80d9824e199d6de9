// Serial reference vs OpenMP kernels: E-step, simulation, bootstrap.
#include <benchmark/benchmark.h>

#include "mscure/inference.hpp"
#include "mscure/simulate.hpp"

#include <map>

using namespace mscure;

namespace {

const TrueModel& truth() {
    static const TrueModel t = load_true_model(MSCURE_DATA_DIR "/truth_ebmt.json");
    return t;
}

struct Fitted {
    std::vector<WideRecord> cohort;
    EmResult fit;
};

const Fitted& fitted(std::size_t n) {
    static std::map<std::size_t, Fitted> cache;
    auto it = cache.find(n);
    if (it == cache.end()) {
        auto spec = truth().spec;
        spec.fit.zero_tail = ZeroTail::cure_censored_after_tmax;
        Fitted f{simulate_cohort(truth(), n, 1), {}};
        auto opt = em_options(spec.fit);
        opt.max_iter = 30;
        f.fit = em_fit(build_extended_table(f.cohort, spec), spec, opt);
        it = cache.emplace(n, std::move(f)).first;
    }
    return it->second;
}

void BM_EStepReference(benchmark::State& state) {
    const auto& f = fitted(static_cast<std::size_t>(state.range(0)));
    auto table = f.fit.table;
    for (auto _ : state) benchmark::DoNotOptimize(e_step_reference(table, f.fit.model.theta).loglik);
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EStepParallel(benchmark::State& state) {
    const auto& f = fitted(static_cast<std::size_t>(state.range(0)));
    auto table = f.fit.table;
    for (auto _ : state) benchmark::DoNotOptimize(e_step(table, f.fit.model.theta).loglik);
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SimulateReference(benchmark::State& state) {
    for (auto _ : state)
        benchmark::DoNotOptimize(simulate_cohort_reference(truth(), static_cast<std::size_t>(state.range(0)), 7));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SimulateParallel(benchmark::State& state) {
    for (auto _ : state)
        benchmark::DoNotOptimize(simulate_cohort(truth(), static_cast<std::size_t>(state.range(0)), 7));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

BootstrapOptions bootstrap_options() {
    BootstrapOptions o;
    o.replicates = 8;
    o.max_iter = 20;
    return o;
}

void BM_BootstrapReference(benchmark::State& state) {
    const auto& f = fitted(500);
    for (auto _ : state)
        benchmark::DoNotOptimize(bootstrap_se_reference(f.cohort, f.fit.model.spec, f.fit.model, bootstrap_options()));
}

void BM_BootstrapParallel(benchmark::State& state) {
    const auto& f = fitted(500);
    for (auto _ : state)
        benchmark::DoNotOptimize(bootstrap_se(f.cohort, f.fit.model.spec, f.fit.model, bootstrap_options()));
}

}  // namespace

BENCHMARK(BM_EStepReference)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EStepParallel)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimulateReference)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimulateParallel)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BootstrapReference)->Unit(benchmark::kMillisecond)->Iterations(1);
BENCHMARK(BM_BootstrapParallel)->Unit(benchmark::kMillisecond)->Iterations(1);

BENCHMARK_MAIN();
