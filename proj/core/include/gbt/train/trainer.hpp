// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "gbt/model/gbt_model.hpp"
#include "gbt/nn/adam.hpp"
#include "gbt/synth/dataset.hpp"

namespace gbt::train {

struct TrainConfig {
  int context_views = 3;
  int rays_per_step = 1024;
  int batch_scenes = 2;
  double lr = 1e-3;
  /// Linear warmup, then cosine decay to lr * final_lr_ratio at max_steps.
  int warmup_steps = 100;
  double final_lr_ratio = 0.1;
  int max_steps = 2000;
  std::uint64_t seed = 0;
  /// Loss log cadence; 0 disables periodic logging.
  int eval_every = 100;
  /// Random RGB permutation and per-channel gain in [0.5, 1] for each draw,
  /// applied alike to its context and query views. With few training scenes
  /// the colors otherwise identify the scene and the model memorizes it.
  bool color_augment = true;

  /// Q = 7168 rays, batch of 6 scenes.
  static TrainConfig paper_preset();
  void validate(int image_size) const;
  double lr_at(std::int64_t step) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// One scene draw: V context views and one query view (view indices).
struct TrainingSample {
  int scene = 0;
  std::vector<int> context;
  int query = 0;
  /// Output channel c is input channel channel_order[c] times channel_gain[c].
  std::array<int, 3> channel_order{0, 1, 2};
  std::array<float, 3> channel_gain{1.0f, 1.0f, 1.0f};
};

/// Stacks views [V, 3, S, S].
nn::Tensor<float> stack_images(const synth::SceneViews& scene, std::span<const int> views);

/// Context poses expressed relative to the first context view, followed by
/// every pose in `extra` in the same frame.
std::vector<geom::CameraPose> canonical_poses(std::span<const geom::CameraPose> context,
                                              std::span<const geom::CameraPose> extra = {});

/// First k entries of a uniformly shuffled [0, n).
std::vector<int> sample_without_replacement(int n, int k, std::mt19937_64& rng);

class Trainer {
 public:
  using SampleFn = std::function<TrainingSample(std::mt19937_64&)>;

  Trainer(model::GbtModel<float>& model, const synth::Dataset& data, TrainConfig config);

  /// Replaces the default uniform scene/view sampler.
  void set_sampler(SampleFn fn) { sampler_ = std::move(fn); }

  /// One optimizer step over batch_scenes draws; returns the mean loss.
  /// Throws kNumericFailure if the loss is not finite.
  double step();

  /// Runs until max_steps; writes "step,loss" rows if log is non-null.
  void run(std::ostream* log = nullptr);

  /// Loss of one draw without touching parameters or optimizer state.
  double sample_loss(const TrainingSample& sample, std::mt19937_64& rng) const;

  std::int64_t steps_done() const { return optimizer_.step_count; }
  const std::vector<double>& losses() const { return losses_; }
  nn::AdamState<float>& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainingSample default_sample(std::mt19937_64& rng) const;
  double accumulate(const TrainingSample& sample, std::mt19937_64& rng, float weight) const;

  model::GbtModel<float>& model_;
  const synth::Dataset& data_;
  TrainConfig config_;
  nn::AdamState<float> optimizer_;
  std::mt19937_64 rng_;
  SampleFn sampler_;
  std::vector<double> losses_;
};

}  // namespace gbt::train
