#include <benchmark/benchmark.h>

#include <vector>

#include "hyperada/distributions.hpp"
#include "hyperada/geometry.hpp"
#include "hyperada/ode.hpp"
#include "hyperada/random.hpp"

namespace {

using namespace hyperada;
namespace kern = geometry::kernel;
using geometry::Curvature;
using geometry::Vector;

Vector random_point(Eigen::Index dim, Rng& rng, double max_norm = 0.9) {
  Vector v(dim);
  for (auto& x : v) x = rng.normal();
  return v.normalized() * (max_norm * rng.uniform());
}

void BM_MobiusAdd(benchmark::State& state) {
  Rng rng(1);
  const Curvature k(-1.0);
  const Vector x = random_point(state.range(0), rng);
  const Vector y = random_point(state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(kern::mobius_add(x, y, k));
}
BENCHMARK(BM_MobiusAdd)->Arg(8)->Arg(64);

void BM_Distance(benchmark::State& state) {
  Rng rng(2);
  const Curvature k(-1.0);
  const Vector x = random_point(state.range(0), rng);
  const Vector y = random_point(state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(kern::distance(x, y, k));
}
BENCHMARK(BM_Distance)->Arg(8)->Arg(64);

void BM_ExpLogRoundTrip(benchmark::State& state) {
  Rng rng(3);
  const Curvature k(-1.0);
  const Vector base = random_point(8, rng, 0.5);
  Vector v(8);
  for (auto& x : v) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(kern::log_map(kern::exp_map(v, base, k), base, k));
}
BENCHMARK(BM_ExpLogRoundTrip);

void BM_Gyromidpoint(benchmark::State& state) {
  Rng rng(4);
  const Curvature k(-1.0);
  std::vector<Vector> pts;
  std::vector<double> w;
  for (int i = 0; i < state.range(0); ++i) {
    pts.push_back(random_point(8, rng));
    w.push_back(rng.uniform(0.1, 1.0));
  }
  for (auto _ : state) benchmark::DoNotOptimize(kern::gyromidpoint(pts, w, k));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Gyromidpoint)->Arg(2)->Arg(64)->Arg(1024);

void BM_OdeExponential(benchmark::State& state) {
  auto cfg = state.range(0) == 0 ? distributions::OdeSolverConfig::rgb_default()
                                 : distributions::OdeSolverConfig::lidar_default();
  const Eigen::VectorXd y0 = Eigen::VectorXd::Ones(16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(distributions::integrate([](const Eigen::VectorXd& y) { return y; }, y0, cfg));
  }
}
BENCHMARK(BM_OdeExponential)->Arg(0)->Arg(1)->ArgNames({"euler"});

void BM_EstimateDistribution(benchmark::State& state) {
  Rng rng(5);
  const Curvature k(-1.0);
  std::vector<Vector> emb;
  for (int i = 0; i < state.range(0); ++i) emb.push_back(random_point(8, rng, 0.6));
  const distributions::FlowNetwork net(8, rng);
  const auto solver = distributions::OdeSolverConfig::rgb_default();
  for (auto _ : state) benchmark::DoNotOptimize(distributions::estimate_distribution(0, emb, net, solver, k));
}
BENCHMARK(BM_EstimateDistribution)->Arg(32)->Arg(128);

}  // namespace
