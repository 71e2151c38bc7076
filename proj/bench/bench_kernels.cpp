#include <benchmark/benchmark.h>

#include <random>

#include "balign/boundary.hpp"
#include "balign/datasets.hpp"
#include "balign/kernels.hpp"

using namespace balign;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// args: batch, channels, side
template <bool Reference>
void conv_forward(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), s = state.range(2);
  const auto g = kernels::conv2d_geometry({n, c, s, s}, {c, c, 3, 3}, 1, 1);
  const auto in = noise(static_cast<std::size_t>(n) * c * s * s, 1), k = noise(static_cast<std::size_t>(c) * c * 9, 2),
             b = noise(c, 3);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::conv2d_forward(g, in, k, b, out);
    else
      kernels::conv2d_forward(g, in, k, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * out.size() * c * 9, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <bool Reference>
void conv_backward(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), s = state.range(2);
  const auto g = kernels::conv2d_geometry({n, c, s, s}, {c, c, 3, 3}, 1, 1);
  const auto in = noise(static_cast<std::size_t>(n) * c * s * s, 1), k = noise(static_cast<std::size_t>(c) * c * 9, 2),
             go = noise(in.size(), 3);
  std::vector<double> gi(in.size()), gk(k.size()), gb(c);
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::conv2d_backward_input(g, go, k, gi);
      kernels::reference::conv2d_backward_kernel(g, go, in, gk, gb);
    } else {
      kernels::conv2d_backward_input(g, go, k, gi);
      kernels::conv2d_backward_kernel(g, go, in, gk, gb);
    }
    benchmark::DoNotOptimize(gi.data());
  }
}

BinaryMap random_boundary(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(0.01);
  BinaryMap m(side, side, 0);
  for (auto& v : m.data) v = on(rng);
  m.data[0] = 1;
  return m;
}

template <bool Reference>
void edt(benchmark::State& state) {
  const BinaryMap m = random_boundary(state.range(0), 4);
  for (auto _ : state) {
    DistanceMap d = Reference ? reference::distance_transform(m) : distance_transform(m);
    benchmark::DoNotOptimize(d.data.data());
  }
}

template <bool Reference>
void heatmaps(benchmark::State& state) {
  const int side = state.range(0);
  const BoundaryScheme scheme = scheme_by_id("300w_68");
  SynthOptions o;
  o.image_side = side;
  const auto s = synth_faces(1, 5, scheme, o).front();
  for (auto _ : state) {
    HeatmapStack h = Reference ? reference::generate_heatmaps(s.landmarks, scheme, side, default_sigma(side / 4))
                               : generate_heatmaps(s.landmarks, scheme, side, default_sigma(side / 4));
    benchmark::DoNotOptimize(h.maps.storage().data());
  }
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv_forward/reference")->Args({8, 32, 32})->Args({4, 64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward<false>)->Name("conv_forward/gemm_omp")->Args({8, 32, 32})->Args({4, 64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<true>)->Name("conv_backward/reference")->Args({8, 32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<false>)->Name("conv_backward/gemm_omp")->Args({8, 32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(edt<true>)->Name("distance_transform/serial")->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(edt<false>)->Name("distance_transform/omp")->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(heatmaps<true>)->Name("generate_heatmaps/serial")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(heatmaps<false>)->Name("generate_heatmaps/omp")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
