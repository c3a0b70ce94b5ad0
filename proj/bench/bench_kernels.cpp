// Serial reference kernels against their OpenMP counterparts.
// Arg 0 selects Exec::serial, 1 selects Exec::parallel.

#include <memory>

#include <benchmark/benchmark.h>

#include "memprior/diagnostics.hpp"
#include "memprior/gmm_prior.hpp"
#include "memprior/helmholtz.hpp"
#include "memprior/klfield.hpp"
#include "memprior/samplers.hpp"

using namespace memprior;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "parallel"); }

void BM_GmmScoreBatch(benchmark::State& state) {
  const GmmPrior prior(TrainingSet(sample_coefficients(100, 1000, 1)), NoiseSchedule::variance_exploding());
  const Eigen::MatrixXd x = sample_coefficients(100, 256, 2);
  for (auto _ : state) benchmark::DoNotOptimize(prior.score_batch(x, 0.3, exec_of(state)));
  label(state);
}
BENCHMARK(BM_GmmScoreBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_MemorizationRate(benchmark::State& state) {
  const TrainingSet training(sample_coefficients(100, 1000, 3));
  const Eigen::MatrixXd samples = sample_coefficients(100, 256, 4);
  for (auto _ : state) benchmark::DoNotOptimize(memorization_rate(samples, training, 0.5, 0, exec_of(state)));
  label(state);
}
BENCHMARK(BM_MemorizationRate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_UnconditionalSampling(benchmark::State& state) {
  const GmmPrior prior(TrainingSet(sample_coefficients(100, 200, 5)), NoiseSchedule::variance_exploding());
  SamplerConfig cfg;
  cfg.n_steps = 50;
  cfg.batch = 128;
  for (auto _ : state) benchmark::DoNotOptimize(sample_unconditional(prior, cfg, exec_of(state)));
  label(state);
}
BENCHMARK(BM_UnconditionalSampling)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

struct HelmholtzFixture {
  HelmholtzConfig cfg;
  std::unique_ptr<HelmholtzSolver> solver;
  Eigen::VectorXd perturbation;
  Eigen::VectorXd weights;

  explicit HelmholtzFixture(Index n) {
    cfg.nx = n;
    cfg.nz = n;
    cfg.pml_cells = 10;
    cfg.n_receivers = n - 4;
    const KlBasis basis = build_basis(n, n, 3.0, 5.0, 20, cfg.background_slowness_sq);
    solver = std::make_unique<HelmholtzSolver>(cfg, basis.synthesize(sample_coefficients(20, 1, 6).row(0).transpose()));
    perturbation = basis.synthesize_perturbation(sample_coefficients(20, 1, 7).row(0).transpose());
    weights = Eigen::VectorXd::Ones(cfg.data_size());
  }
};

void BM_HelmholtzFactorAndSolve(benchmark::State& state) {
  HelmholtzConfig cfg;
  cfg.nx = 100;
  cfg.nz = 100;
  cfg.pml_cells = 10;
  cfg.n_receivers = 96;
  const Eigen::VectorXd s = Eigen::VectorXd::Constant(100 * 100, cfg.background_slowness_sq);
  for (auto _ : state) {
    HelmholtzSolver solver(cfg, s, exec_of(state));
    benchmark::DoNotOptimize(solver.data());
  }
  label(state);
}
BENCHMARK(BM_HelmholtzFactorAndSolve)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_HelmholtzBorn(benchmark::State& state) {
  static const HelmholtzFixture fx(100);
  for (auto _ : state) benchmark::DoNotOptimize(fx.solver->born(fx.perturbation, exec_of(state)));
  label(state);
}
BENCHMARK(BM_HelmholtzBorn)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_HelmholtzAdjoint(benchmark::State& state) {
  static const HelmholtzFixture fx(100);
  for (auto _ : state) benchmark::DoNotOptimize(fx.solver->adjoint(fx.weights, exec_of(state)));
  label(state);
}
BENCHMARK(BM_HelmholtzAdjoint)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
