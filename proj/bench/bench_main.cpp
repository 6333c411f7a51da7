#include <benchmark/benchmark.h>

#include <vector>

#include "scribseg/cpl.hpp"
#include "scribseg/kernels.hpp"
#include "scribseg/mcm.hpp"
#include "scribseg/nn.hpp"
#include "scribseg/rng.hpp"
#include "scribseg/synth.hpp"

using namespace scribseg;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform() - 0.5;
    return v;
}

kernels::ConvShape conv_shape(const benchmark::State& state) {
    kernels::ConvShape s;
    s.batch = 4;
    s.in_channels = static_cast<int>(state.range(0));
    s.out_channels = static_cast<int>(state.range(0));
    s.height = s.width = static_cast<int>(state.range(1));
    return s;
}

template <auto Fn>
void BM_ConvForward(benchmark::State& state) {
    const auto s = conv_shape(state);
    const auto x = random_vector(s.in_size(), 1), w = random_vector(s.weight_size(), 2),
               b = random_vector(static_cast<std::size_t>(s.out_channels), 3);
    std::vector<double> y(s.out_size());
    for (auto _ : state) {
        Fn(s, x, w, b, y);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.out_size() * s.in_channels * 9));
}

template <auto Fn>
void BM_ConvBackwardWeight(benchmark::State& state) {
    const auto s = conv_shape(state);
    const auto x = random_vector(s.in_size(), 1), dy = random_vector(s.out_size(), 2);
    std::vector<double> dw(s.weight_size()), db(static_cast<std::size_t>(s.out_channels));
    for (auto _ : state) {
        Fn(s, x, dy, dw, db);
        benchmark::DoNotOptimize(dw.data());
    }
}

BinaryGrid random_sources(int n, double density, std::uint64_t seed) {
    Rng rng(seed);
    BinaryGrid g(n, n);
    for (auto& v : g.data) v = rng.uniform() < density;
    return g;
}

template <DistanceGrid (*Fn)(const BinaryGrid&)>
void BM_Edt(benchmark::State& state) {
    const auto g = random_sources(static_cast<int>(state.range(0)), 0.01, 7);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(g));
}

void BM_BuildCpl(benchmark::State& state) {
    const Phantom ph = generate_phantom(PhantomParams::cardiac(), 42, 0);
    const auto scr = synthesize_scribbles(ph.mask, 3, ScribbleSynthParams{});
    for (auto _ : state) benchmark::DoNotOptimize(build_cpl(scr, 3));
}

void BM_SampleMask(benchmark::State& state) {
    const Phantom ph = generate_phantom(PhantomParams::cardiac(), 42, 0);
    const auto scr = synthesize_scribbles(ph.mask, 3, ScribbleSynthParams{});
    MCMConfig cfg;
    cfg.patch = static_cast<int>(state.range(0));
    const auto pg = patch_weights(scr, cfg);
    Rng rng(1);
    for (auto _ : state) benchmark::DoNotOptimize(sample_mask(pg, 0.5, rng));
}

void BM_UNetForward(benchmark::State& state) {
    nn::UNetConfig cfg;
    nn::UNet model = nn::build_unet(cfg);
    ad::Tensor x({4, 1, 64, 64});
    const auto v = random_vector(x.numel(), 5);
    for (std::size_t i = 0; i < v.size(); ++i) x[i] = v[i];
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, false));
}

}  // namespace

BENCHMARK(BM_ConvForward<kernels::conv2d_forward>)->Name("conv_forward/fast")->Args({8, 64})->Args({32, 16});
BENCHMARK(BM_ConvForward<kernels::reference::conv2d_forward>)->Name("conv_forward/reference")->Args({8, 64})->Args({32, 16});
BENCHMARK(BM_ConvBackwardWeight<kernels::conv2d_backward_weight>)->Name("conv_backward_weight/fast")->Args({8, 64});
BENCHMARK(BM_ConvBackwardWeight<kernels::reference::conv2d_backward_weight>)
    ->Name("conv_backward_weight/reference")
    ->Args({8, 64});
BENCHMARK(BM_Edt<edt>)->Name("edt/fast")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_Edt<reference::edt>)->Name("edt/reference")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_BuildCpl)->Name("build_cpl/64");
BENCHMARK(BM_SampleMask)->Name("sample_mask")->Arg(8)->Arg(16);
BENCHMARK(BM_UNetForward)->Name("unet_forward/4x64x64")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
