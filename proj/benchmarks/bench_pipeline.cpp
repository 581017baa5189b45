#include <benchmark/benchmark.h>

#include <vector>

#include "hyperada/acquisition.hpp"
#include "hyperada/data_io.hpp"
#include "hyperada/random.hpp"
#include "hyperada/trainer.hpp"

namespace {

using namespace hyperada;

LabeledImage scene_image() {
  io::SyntheticWorldConfig world;
  world.shift = io::DomainShift::rgb_default();
  return io::generate_rgb_scene(world, 0).target;
}

LabeledCloud scene_cloud() {
  io::SyntheticWorldConfig world;
  world.shift = io::DomainShift::lidar_default();
  return io::generate_lidar_scene(world, 0).target;
}

void BM_HaloScores(benchmark::State& state) {
  Rng rng(1);
  const auto model = trainer::Model::create(Modality::kRgb, 16, 8, 5, geometry::Curvature(-1.0), rng);
  const auto fc = trainer::forward(model, trainer::rgb_features(scene_image()));
  for (auto _ : state) {
    benchmark::DoNotOptimize(acquisition::halo_scores(fc.points, fc.probs, model.classifier.curvature));
  }
  state.SetItemsProcessed(state.iterations() * fc.points.cols());
}
BENCHMARK(BM_HaloScores);

void BM_HaloVcdScores(benchmark::State& state) {
  Rng rng(2);
  const auto cloud = scene_cloud();
  const auto model = trainer::Model::create(Modality::kLidar, 16, 8, 5, geometry::Curvature(-1.0), rng);
  const auto fc = trainer::forward(model, trainer::lidar_features(cloud));
  const auto grid = acquisition::VoxelGrid::build(cloud.points);
  for (auto _ : state) {
    benchmark::DoNotOptimize(acquisition::halo_vcd_score(grid, fc.points, fc.probs, model.classifier.curvature));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cloud.size()));
}
BENCHMARK(BM_HaloVcdScores);

void BM_ForwardBackward(benchmark::State& state) {
  Rng rng(3);
  const auto image = scene_image();
  const auto features = trainer::rgb_features(image);
  const auto model = trainer::Model::create(Modality::kRgb, 16, 8, 5, geometry::Curvature(-1.0), rng);
  trainer::StepPlan plan;
  plan.source = {features, image.labels};
  plan.target = {geometry::Matrix(trainer::kRgbFeatures, 0), {}};
  trainer::TrainingConfig cfg = trainer::TrainingConfig::rgb_default();
  trainer::Model grad;
  for (auto _ : state) benchmark::DoNotOptimize(trainer::evaluate_step(model, plan, cfg, &grad));
  state.SetItemsProcessed(state.iterations() * features.cols());
}
BENCHMARK(BM_ForwardBackward);

void BM_TrainStepRgb(benchmark::State& state) {
  trainer::TrainingConfig cfg = trainer::TrainingConfig::rgb_default();
  auto s = trainer::make_state(cfg);
  io::SyntheticWorldConfig world;
  world.shift = io::DomainShift::rgb_default();
  const auto pair = io::generate_rgb_scene(world, 1);
  for (auto _ : state) benchmark::DoNotOptimize(trainer::train_step_rgb(s, pair.source, pair.target, cfg, 0.5));
}
BENCHMARK(BM_TrainStepRgb)->Unit(benchmark::kMillisecond);

void BM_CloudRoundTrip(benchmark::State& state) {
  const auto cloud = scene_cloud();
  for (auto _ : state) {
    const auto [points, labels] = io::serialize_cloud(cloud);
    benchmark::DoNotOptimize(io::parse_cloud(points, labels));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(cloud.size()) * 20);
}
BENCHMARK(BM_CloudRoundTrip);

}  // namespace
