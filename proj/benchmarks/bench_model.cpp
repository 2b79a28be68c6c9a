// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "gbt/model/render.hpp"
#include "gbt/synth/dataset.hpp"
#include "gbt/train/trainer.hpp"

namespace {

using namespace gbt;

// The small model used for desk-scale training runs.
model::ModelConfig desk_model(model::Variant v) {
  model::ModelConfig c;
  c.latent_dim = 64;
  c.num_heads = 4;
  c.encoder_layers = 2;
  c.decoder_layers = 1;
  c.mlp_hidden = {64, 32};
  c.stem_channels = {16, 32, 32};
  c.variant = v;
  return c;
}

const synth::Dataset& bench_data() {
  static const synth::Dataset data = [] {
    synth::DatasetConfig cfg;
    cfg.num_scenes = 2;
    cfg.views_per_scene = 8;
    return synth::make_dataset(cfg);
  }();
  return data;
}

struct SceneInput {
  nn::Tensor<float> images;
  std::vector<geom::CameraPose> poses;
  geom::Intrinsics intr;
};

SceneInput scene_input() {
  const synth::SceneViews& scene = bench_data().scenes[0];
  const std::vector<int> views{0, 3, 5, 1};
  std::vector<geom::CameraPose> ctx;
  for (int v : views) ctx.push_back(scene.views[static_cast<std::size_t>(v)].pose);
  return {train::stack_images(scene, std::span(views.data(), 3)), train::canonical_poses(std::span(ctx.data(), 3), ctx),
          scene.views[0].intr};
}

void BM_EncodeScene(benchmark::State& state) {
  const model::GbtModel<float> m(desk_model(static_cast<model::Variant>(state.range(0))), 1);
  const SceneInput in = scene_input();
  for (auto _ : state) {
    benchmark::DoNotOptimize(model::encode_scene(m, in.images, std::span(in.poses.data(), 3), in.intr).tokens[0]);
  }
}
BENCHMARK(BM_EncodeScene)->Arg(0)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_RenderView(benchmark::State& state) {
  const model::GbtModel<float> m(desk_model(model::Variant::kGbt), 1);
  const SceneInput in = scene_input();
  const auto encoded = model::encode_scene(m, in.images, std::span(in.poses.data(), 3), in.intr);
  for (auto _ : state) benchmark::DoNotOptimize(model::render_view(m, encoded, in.poses[6], in.intr)[0]);
  state.SetItemsProcessed(state.iterations() * 64 * 64);
}
BENCHMARK(BM_RenderView)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  model::GbtModel<float> m(desk_model(model::Variant::kGbt), 1);
  train::TrainConfig tc;
  tc.rays_per_step = static_cast<int>(state.range(0));
  tc.batch_scenes = 1;
  tc.max_steps = 1 << 30;
  tc.eval_every = 0;
  train::Trainer trainer(m, bench_data(), tc);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace
