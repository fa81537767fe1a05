#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "driftflow/assignment.hpp"
#include "driftflow/kde.hpp"
#include "driftflow/metrics.hpp"
#include "driftflow/mlp.hpp"
#include "driftflow/rng.hpp"

using namespace driftflow;

namespace {

Matrix cloud(std::uint64_t seed, Eigen::Index n, Eigen::Index d) {
  CounterRng rng(seed);
  return standard_normal(rng, n, d);
}

void BM_KdeEvaluate(benchmark::State& state) {
  const auto n = state.range(0);
  const Matrix x = cloud(1, n, 2);
  KdeConfig cfg;
  cfg.kernel = state.range(1) ? Kernel::laplace : Kernel::gaussian;
  cfg.tau = 0.3;
  std::vector<Eigen::Index> self(static_cast<size_t>(n));
  std::iota(self.begin(), self.end(), Eigen::Index{0});
  for (auto _ : state) benchmark::DoNotOptimize(kde_evaluate(cfg, x, x, self));
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_KdeEvaluate)->Args({1024, 0})->Args({1024, 1})->Args({2048, 1})->Unit(benchmark::kMillisecond);

void BM_SinkhornNormalize(benchmark::State& state) {
  const auto n = state.range(0);
  const Matrix x = cloud(2, n, 2);
  Matrix logk(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) logk(i, j) = -(x.row(i) - x.row(j)).squaredNorm() / 0.3;
  for (auto _ : state) benchmark::DoNotOptimize(sinkhorn_normalize(logk, 10));
}
BENCHMARK(BM_SinkhornNormalize)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_MlpForwardBackward(benchmark::State& state) {
  MlpShape s;
  s.latent_dim = s.out_dim = 2;
  const MlpParams p = init_mlp(s, 3);
  const Matrix eps = cloud(4, state.range(0), 2);
  const Matrix V = cloud(5, state.range(0), 2);
  for (auto _ : state) {
    MlpTape tape;
    benchmark::DoNotOptimize(forward(p, eps, tape));
    benchmark::DoNotOptimize(loss_and_grad(p, tape, V));
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_ExactW1(benchmark::State& state) {
  const Matrix x = cloud(6, state.range(0), 2), y = cloud(7, state.range(0), 2);
  for (auto _ : state) benchmark::DoNotOptimize(w1_exact(x, y));
}
BENCHMARK(BM_ExactW1)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_SinkhornW2(benchmark::State& state) {
  const Matrix x = cloud(8, state.range(0), 16), y = cloud(9, state.range(0), 16);
  for (auto _ : state) benchmark::DoNotOptimize(w2_sinkhorn(x, y));
}
BENCHMARK(BM_SinkhornW2)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
