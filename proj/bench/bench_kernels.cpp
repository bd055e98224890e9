// Serial reference vs OpenMP kernels. Shapes follow the default model: a
// batch of 16 crops of 20x20, 3x3 kernels, encoder widths.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "aqcast/geogrid.hpp"
#include "aqcast/kernels.hpp"

using namespace aqcast;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

ConvGeometry geometry(const benchmark::State& state) {
    ConvGeometry g;
    g.batch = 16;
    g.height = 20;
    g.width = 20;
    g.c_in = static_cast<std::size_t>(state.range(0));
    g.c_out = static_cast<std::size_t>(state.range(1));
    g.kernel = 3;
    return g;
}

void set_flops(benchmark::State& state, const ConvGeometry& g) {
    const double flops = 2.0 * static_cast<double>(g.output_size() * g.kernel * g.kernel * g.c_in);
    state.counters["GFLOP/s"] = benchmark::Counter(flops * static_cast<double>(state.iterations()) / 1e9,
                                                   benchmark::Counter::kIsRate);
}

template <auto Forward>
void BM_ConvForward(benchmark::State& state) {
    const auto g = geometry(state);
    const auto x = random_values(g.input_size(), 1), w = random_values(g.weight_size(), 2),
               b = random_values(g.c_out, 3);
    std::vector<double> out(g.output_size());
    for (auto _ : state) {
        Forward(g, x, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
    set_flops(state, g);
}

template <auto BackwardInput, auto BackwardParams>
void BM_ConvBackward(benchmark::State& state) {
    const auto g = geometry(state);
    const auto x = random_values(g.input_size(), 1), w = random_values(g.weight_size(), 2),
               gy = random_values(g.output_size(), 4);
    std::vector<double> gx(g.input_size()), gw(g.weight_size()), gb(g.c_out);
    for (auto _ : state) {
        BackwardInput(g, gy, w, gx);
        BackwardParams(g, x, gy, gw, gb);
        benchmark::DoNotOptimize(gx.data());
        benchmark::DoNotOptimize(gw.data());
    }
    state.counters["GFLOP/s"] = benchmark::Counter(
        4.0 * static_cast<double>(g.output_size() * g.kernel * g.kernel * g.c_in) *
            static_cast<double>(state.iterations()) / 1e9,
        benchmark::Counter::kIsRate);
}

template <auto Project>
void BM_Project(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const GridSpec grid{44.0, 2.0, 0.1, 0.1, 80, 80};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> lat(44.0, 52.0), lon(2.0, 10.0), val(0.0, 80.0);
    std::vector<StationValue> stations(n);
    for (auto& s : stations) s = {{lat(rng), lon(rng)}, val(rng)};
    for (auto _ : state) benchmark::DoNotOptimize(Project(stations, grid, kDefaultKernelDistanceKm));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * grid.ny * grid.nx));
}

GridField project_parallel(std::span<const StationValue> s, const GridSpec& g, double d) {
    return project_stations(s, g, d);
}

// (c_in, c_out): first encoder block input conv, its recurrent conv, second block.
void conv_args(benchmark::internal::Benchmark* b) {
    b->Args({4, 256})->Args({64, 256})->Args({64, 128})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<reference::conv2d_same_forward>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvForward<kernels::conv2d_same_forward>)->Name("conv_forward/openmp")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<reference::conv2d_same_backward_input, reference::conv2d_same_backward_params>)
    ->Name("conv_backward/serial")
    ->Apply(conv_args);
BENCHMARK(BM_ConvBackward<kernels::conv2d_same_backward_input, kernels::conv2d_same_backward_params>)
    ->Name("conv_backward/openmp")
    ->Apply(conv_args);
BENCHMARK(BM_Project<reference::project_stations>)->Name("project/serial")->Arg(50)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Project<project_parallel>)->Name("project/openmp")->Arg(50)->Arg(400)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
