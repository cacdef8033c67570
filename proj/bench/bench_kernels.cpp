// Parallel kernels against their serial references. Thread count follows
// OMP_NUM_THREADS; run with 1 and N to see the scaling.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "mtcurv/kernels.hpp"
#include "mtcurv/model.hpp"
#include "mtcurv/ops.hpp"
#include "mtcurv/reference.hpp"

using namespace mtcurv;
using kernels::Trans;

namespace {

template <typename T>
std::vector<T> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values<float>(n * n, 1), b = random_values<float>(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::gemm<float>(Trans::No, Trans::No, n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
  state.counters["threads"] = omp_get_max_threads();
}

void BM_gemm_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values<float>(n * n, 1), b = random_values<float>(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::reference::gemm<float>(Trans::No, Trans::No, n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

kernels::ConvShape conv_shape(std::size_t side) {
  kernels::ConvShape s;
  s.batch = 2;
  s.channels = 32;
  s.height = s.width = side;
  s.kernel = 3;
  s.padding = 1;
  return s;
}

void BM_conv2d(benchmark::State& state) {
  const auto s = conv_shape(static_cast<std::size_t>(state.range(0)));
  using tensor::Tensor;
  const Tensor<float> x({s.batch, s.channels, s.height, s.width},
                        random_values<float>(s.batch * s.channels * s.height * s.width, 3));
  const Tensor<float> w({32, s.channels, 3, 3}, random_values<float>(32 * s.patch(), 4));
  const Tensor<float> b({32}, random_values<float>(32, 5));
  tensor::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(tensor::conv2d(x, w, b, 1, 1));
  state.counters["threads"] = omp_get_max_threads();
}

void BM_conv2d_reference(benchmark::State& state) {
  const auto s = conv_shape(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values<float>(s.batch * s.channels * s.height * s.width, 3);
  const auto w = random_values<float>(32 * s.patch(), 4);
  const auto b = random_values<float>(32, 5);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::reference::conv2d<float>(s, 32, x, w, b));
}

void BM_maxpool(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const std::size_t planes = 64;
  const auto in = random_values<float>(planes * side * side, 6);
  std::vector<float> out(planes * side * side / 4);
  std::vector<std::size_t> arg(out.size());
  for (auto _ : state) {
    kernels::maxpool2x2<float>(planes, side, side, in, out, arg);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_maxpool_reference(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const std::size_t planes = 64;
  const auto in = random_values<float>(planes * side * side, 6);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::reference::maxpool2x2<float>(planes, side, side, in));
}

std::vector<double> gaussian11() {
  std::vector<double> g(11);
  double s = 0;
  for (int i = 0; i < 11; ++i) s += g[i] = std::exp(-(i - 5) * (i - 5) / 4.5);
  for (auto& v : g) v /= s;
  return g;
}

void BM_gaussian_filter(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto in = random_values<double>(side * side, 7);
  const auto taps = gaussian11();
  std::vector<double> out((side - 10) * (side - 10));
  for (auto _ : state) {
    kernels::separable_filter(side, side, in, taps, kernels::Border::Valid, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_gaussian_filter_reference(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto in = random_values<double>(side * side, 7);
  const auto taps = gaussian11();
  std::vector<double> window(121);
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) window[y * 11 + x] = taps[y] * taps[x];
  for (auto _ : state)
    benchmark::DoNotOptimize(
        kernels::reference::filter2d(side, side, in, window, 11, kernels::Border::Valid));
}

void BM_model_forward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  model::Model<float> m(model::ModelSpec{}, 0);
  m.mark_running_stats_ready();
  const tensor::Tensor<float> x({1, 1, side, side}, random_values<float>(side * side, 8));
  tensor::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x, tensor::Mode::Eval));
  state.counters["threads"] = omp_get_max_threads();
}

}  // namespace

BENCHMARK(BM_gemm)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm_reference)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_reference)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_maxpool)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_maxpool_reference)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_gaussian_filter)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gaussian_filter_reference)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_model_forward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
