// Microbenchmarks for the training-loop hot paths: forward/backward passes,
// attack generation, mask construction, and topology updates.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "sparw/attack.hpp"
#include "sparw/autodiff.hpp"
#include "sparw/data.hpp"
#include "sparw/model.hpp"
#include "sparw/rng.hpp"
#include "sparw/sparsity.hpp"
#include "sparw/train.hpp"

namespace {

using namespace sparw;

struct Fixture {
  Network<float> net;
  TensorT<float> x;
  std::vector<std::int32_t> labels;
};

Fixture make_fixture(std::int64_t batch) {
  ModelSpec spec = make_mini_vgg({3, 32, 32}, {8, 16, 32, 32}, 10);
  Fixture f{build_network<float>(spec), TensorT<float>(), {}};
  init_params(f.net, 1);
  RandomStream rng(2);
  Shape shp{batch, 3, 32, 32};
  f.x = TensorT<float>(shp);
  for (auto& v : f.x.vec()) v = static_cast<float>(rng.uniform());
  f.labels.resize(static_cast<std::size_t>(batch));
  for (auto& l : f.labels) l = static_cast<std::int32_t>(rng.uniform_int(10));
  return f;
}

void BM_ForwardBackward(benchmark::State& state) {
  Fixture f = make_fixture(state.range(0));
  for (auto _ : state) {
    zero_grads(f.net);
    const double loss = forward_backward(f.net, f.x, f.labels, Mode::train,
                                         GradMode::masked);
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(64)->Arg(128);

void BM_PgdAttack(benchmark::State& state) {
  Fixture f = make_fixture(32);
  AttackConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const TensorT<float> delta =
        pgd_attack(f.net, f.x, f.labels, cfg, ++seed);
    benchmark::DoNotOptimize(delta.vec().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_PgdAttack)->Arg(1)->Arg(4)->Arg(10);

void BM_SgdStep(benchmark::State& state) {
  Fixture f = make_fixture(16);
  OptimizerStateT<float> opt = make_optimizer_state(f.net);
  zero_grads(f.net);
  forward_backward(f.net, f.x, f.labels, Mode::train, GradMode::masked);
  for (auto _ : state) sgd_step(f.net, opt, 0.1, 0.9, 5e-4);
}
BENCHMARK(BM_SgdStep);

void BM_GlobalMagnitudeMask(benchmark::State& state) {
  Fixture f = make_fixture(1);
  for (auto _ : state) {
    const MaskSet m = global_magnitude_mask(f.net, 0.8);
    benchmark::DoNotOptimize(m.active());
  }
}
BENCHMARK(BM_GlobalMagnitudeMask);

void BM_TopologyUpdate(benchmark::State& state) {
  Fixture f = make_fixture(16);
  const auto players = prunable_layers(f.net.spec);
  install_masks(f.net, sample_random_mask(allocate_igq(players, 0.8), players,
                                          3));
  OptimizerStateT<float> opt = make_optimizer_state(f.net);
  zero_grads(f.net);
  forward_backward(f.net, f.x, f.labels, Mode::train, GradMode::dense);
  for (auto _ : state) {
    MaskSet masks = extract_masks(f.net);
    fb_topology_update(f.net, opt, masks, 0.2, 0.2);
    benchmark::DoNotOptimize(masks.active());
  }
}
BENCHMARK(BM_TopologyUpdate);

void BM_AllocateIgq(benchmark::State& state) {
  ModelSpec spec = make_preset("resnet14", {3, 32, 32}, 10, {});
  const auto players = prunable_layers(spec);
  for (auto _ : state) {
    const AllocationPlan plan = allocate_igq(players, 0.8);
    benchmark::DoNotOptimize(plan.density.data());
  }
}
BENCHMARK(BM_AllocateIgq);

void BM_AugmentedBatch(benchmark::State& state) {
  const Dataset ds = synthetic_blobs(10, 64, {3, 32, 32}, 4);
  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.count()));
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<std::int64_t>(i);
  AugmentConfig aug{true, 4, true};
  RandomStream rng(5);
  TensorT<float> x;
  std::vector<std::int32_t> labels;
  for (auto _ : state) {
    fill_batch(ds, order, 0, 128, aug, rng, x, labels);
    benchmark::DoNotOptimize(x.vec().data());
  }
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_AugmentedBatch);

}  // namespace

BENCHMARK_MAIN();
