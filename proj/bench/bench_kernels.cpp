// Parallel kernels against their serial references, over bank sizes R.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "moca/kernels.hpp"

namespace {

using namespace moca::kernels;

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> v(n);
  for (auto &x : v) x = z(rng);
  return v;
}

// Λ⁻¹ = 0.1·I + 0.01·AAᵀ per hypothesis, so predictive variances stay positive.
std::vector<double> spd_bank(std::size_t R, std::size_t n) {
  std::vector<double> out(R * n * n);
  const auto a = randn(R * n * n, 3);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = i == j ? 0.1 : 0.0;
        for (std::size_t k = 0; k < n; ++k)
          s += 0.01 * a[(r * n + i) * n + k] * a[(r * n + j) * n + k];
        out[(r * n + i) * n + j] = s;
      }
  return out;
}

struct AlpacaBank {
  AlpacaDims d;
  std::vector<double> linv, q, phi, y, noise, out, grown;
  explicit AlpacaBank(std::size_t R, std::size_t n = 32, std::size_t m = 1)
      : d{R, n, m}, linv(spd_bank(R, n)), q(randn(R * n * m, 4)), phi(randn(n, 5)),
        y(randn(m, 6)), noise(m, 0.5), out(R), grown((R + 1) * n * n) {}
};

struct PcocBank {
  PcocDims d;
  std::vector<double> alpha, q, prec, noise, z, out;
  explicit PcocBank(std::size_t R, std::size_t J = 5, std::size_t k = 16)
      : d{R, J, k}, alpha(R * J, 3.0), q(randn(R * J * k, 7)), prec(R * J * k, 2.0),
        noise(J * k, 0.3), z(randn(k, 8)), out(R * J) {}
};

void BM_AlpacaPredict(benchmark::State &state) {
  AlpacaBank b(state.range(0));
  set_kernel_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    alpaca_predict_forward(b.d, b.linv, b.q, b.phi, b.y, b.noise, b.out);
    benchmark::DoNotOptimize(b.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AlpacaPredictReference(benchmark::State &state) {
  AlpacaBank b(state.range(0));
  for (auto _ : state) {
    reference::alpaca_predict_forward(b.d, b.linv, b.q, b.phi, b.y, b.noise, b.out);
    benchmark::DoNotOptimize(b.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AlpacaGrow(benchmark::State &state) {
  AlpacaBank b(state.range(0));
  const auto linv0 = spd_bank(1, b.d.features);
  set_kernel_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    alpaca_grow_forward(b.d, linv0, b.linv, b.phi, b.grown);
    benchmark::DoNotOptimize(b.grown.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AlpacaGrowReference(benchmark::State &state) {
  AlpacaBank b(state.range(0));
  const auto linv0 = spd_bank(1, b.d.features);
  for (auto _ : state) {
    reference::alpaca_grow_forward(b.d, linv0, b.linv, b.phi, b.grown);
    benchmark::DoNotOptimize(b.grown.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PcocJoint(benchmark::State &state) {
  PcocBank b(state.range(0));
  set_kernel_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    pcoc_joint_forward(b.d, b.alpha, b.q, b.prec, b.noise, b.z, b.out);
    benchmark::DoNotOptimize(b.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PcocJointReference(benchmark::State &state) {
  PcocBank b(state.range(0));
  for (auto _ : state) {
    reference::pcoc_joint_forward(b.d, b.alpha, b.q, b.prec, b.noise, b.z, b.out);
    benchmark::DoNotOptimize(b.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void parallel_args(benchmark::internal::Benchmark *b) {
  const int max_threads = std::max(1, kernel_threads());
  for (long R : {64, 512, 4096})
    for (int t = 1; t <= max_threads; t *= 2) b->Args({R, t});
}

void serial_args(benchmark::internal::Benchmark *b) {
  for (long R : {64, 512, 4096}) b->Args({R});
}

} // namespace

BENCHMARK(BM_AlpacaPredict)->Apply(parallel_args)->ArgNames({"R", "threads"});
BENCHMARK(BM_AlpacaPredictReference)->Apply(serial_args)->ArgNames({"R"});
BENCHMARK(BM_AlpacaGrow)->Apply(parallel_args)->ArgNames({"R", "threads"});
BENCHMARK(BM_AlpacaGrowReference)->Apply(serial_args)->ArgNames({"R"});
BENCHMARK(BM_PcocJoint)->Apply(parallel_args)->ArgNames({"R", "threads"});
BENCHMARK(BM_PcocJointReference)->Apply(serial_args)->ArgNames({"R"});

BENCHMARK_MAIN();
