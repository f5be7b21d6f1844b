#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "segdiff/kernels.hpp"

namespace k = segdiff::kernels;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <auto Fn>
void BM_gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto a = noise(static_cast<std::size_t>(n * n), 1), b = noise(a.size(), 2);
  std::vector<double> c(a.size());
  for (auto _ : state) {
    Fn(false, false, n, n, n, 1.0, a.data(), n, b.data(), n, 0.0, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

template <auto Fn>
void BM_im2col(benchmark::State& state) {
  const int ch = 16, h = 32, w = static_cast<int>(state.range(0));
  auto img = noise(static_cast<std::size_t>(ch * h * w), 3);
  const int oh = k::conv_out(h, 3, 2, 1), ow = k::conv_out(w, 3, 2, 1);
  std::vector<double> cols(static_cast<std::size_t>(ch * 9 * oh * ow));
  for (auto _ : state) {
    Fn(img.data(), ch, h, w, 3, 2, 1, cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

template <auto Fn>
void BM_attention(benchmark::State& state) {
  const int seq = static_cast<int>(state.range(0)), heads = 4, hd = 32;
  const auto n = static_cast<std::size_t>(seq * heads * hd);
  auto q = noise(n, 4), kk = noise(n, 5), v = noise(n, 6);
  std::vector<double> probs(static_cast<std::size_t>(heads * seq * seq)), out(n);
  for (auto _ : state) {
    Fn(q.data(), kk.data(), v.data(), seq, heads, hd, probs.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Fn>
void BM_resample(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto x = noise(static_cast<std::size_t>(n), 7);
  const int out_n = n / 12;
  std::vector<double> y(static_cast<std::size_t>(out_n));
  for (auto _ : state) {
    Fn(x.data(), n, 24000, 2000, 16, y.data(), out_n);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::gemm>)->Name("gemm/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::reference::gemm>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_im2col<k::im2col2d>)->Name("im2col/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_im2col<k::reference::im2col2d>)->Name("im2col/reference")->Arg(256)->Arg(1024);
BENCHMARK(BM_attention<k::attention_forward>)->Name("attention/omp")->Arg(32)->Arg(128);
BENCHMARK(BM_attention<k::reference::attention_forward>)->Name("attention/reference")->Arg(32)->Arg(128);
BENCHMARK(BM_resample<k::resample>)->Name("resample/omp")->Arg(48000);
BENCHMARK(BM_resample<k::reference::resample>)->Name("resample/reference")->Arg(48000);

BENCHMARK_MAIN();
