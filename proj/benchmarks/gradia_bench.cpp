#include <benchmark/benchmark.h>

#include "gradia/alignment_loss.hpp"
#include "gradia/attention.hpp"
#include "gradia/model.hpp"
#include "gradia/runtime.hpp"
#include "gradia/synthetic.hpp"

namespace {

using namespace gradia;

// One default-benchmark batch of `n` images with oracle target grids.
struct Batch {
  ModelConfig config;
  Parameters params;
  std::vector<SyntheticInstance> data;
  std::vector<Sample> samples;
  std::vector<Tensor> targets;
  Tensor stacked;
  std::vector<std::size_t> labels;

  explicit Batch(std::size_t n) : params(init_model(config, 0)) {
    data = generate_dataset(SceneSpec{}, SplitCounts{n, 0, 0});
    const FeatureGeometry g = feature_geometry(config);
    std::vector<const Tensor*> images;
    for (const auto& inst : data) {
      targets.push_back(mask_to_target_grid(inst.intrinsic_mask, g.height, g.width).grid);
      images.push_back(&inst.image);
      labels.push_back(inst.label);
    }
    for (std::size_t i = 0; i < n; ++i) {
      samples.push_back({data[i].id, &data[i].image, data[i].label, &targets[i]});
    }
    stacked = stack_images(images, config);
  }
};

void BM_Forward(benchmark::State& state) {
  const Batch b(static_cast<std::size_t>(state.range(0)));
  ad::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(b.params, b.stacked).logits);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32);

void BM_PredictionBackward(benchmark::State& state) {
  const Batch b(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    const TapedForward tape = forward_batch(b.params, b.stacked);
    benchmark::DoNotOptimize(grad_wrt_params(prediction_loss(tape.logits, b.labels), tape.params));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PredictionBackward)->Arg(32);

void BM_GradCam(benchmark::State& state) {
  const Batch b(1);
  const ForwardTrace trace = forward(b.params, b.data[0].image);
  for (auto _ : state) benchmark::DoNotOptimize(grad_cam(trace, 1));
}
BENCHMARK(BM_GradCam);

// Full GRADIA step cost: forward, Grad-CAM, attention loss and the
// parameter gradient, first-order or through Grad-CAM.
void BM_Objective(benchmark::State& state) {
  const Batch b(32);
  ObjectiveOptions options;
  options.higher_order = state.range(0) != 0;
  QuadrantBatch ua{Quadrant::kUA, b.samples};
  for (auto _ : state) {
    Objective obj = gradia_objective(b.params, {}, ua, {}, {}, BalanceFactors{},
                                     Condition::kC4, options);
    benchmark::DoNotOptimize(objective_gradient(obj).grads);
  }
  state.SetLabel(options.higher_order ? "higher-order" : "first-order");
}
BENCHMARK(BM_Objective)->Arg(0)->Arg(1);

}  // namespace

int main(int argc, char** argv) {
  gradia::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
