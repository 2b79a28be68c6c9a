// SPDX-License-Identifier: Apache-2.0
#include "gbt/train/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "gbt/error.hpp"
#include "gbt/nn/ops.hpp"
#include "gbt/train/metrics.hpp"

namespace gbt::train {

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.rays_per_step = 7168;
  c.batch_scenes = 6;
  c.lr = 1e-5;
  c.warmup_steps = 0;
  c.final_lr_ratio = 1.0;
  return c;
}

void TrainConfig::validate(int image_size) const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, m); };
  if (context_views < 1) fail("context_views must be >= 1");
  if (rays_per_step < 1 || rays_per_step > image_size * image_size) fail("rays_per_step must be in [1, S*S]");
  if (batch_scenes < 1) fail("batch_scenes must be >= 1");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (warmup_steps < 0 || max_steps < 0 || eval_every < 0) fail("step counts must be non-negative");
  if (!(final_lr_ratio > 0.0 && final_lr_ratio <= 1.0)) fail("final_lr_ratio must be in (0, 1]");
}

double TrainConfig::lr_at(std::int64_t step) const {
  if (step < warmup_steps) return lr * static_cast<double>(step + 1) / warmup_steps;
  const double span = std::max(1, max_steps - warmup_steps);
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return lr * (final_lr_ratio + (1.0 - final_lr_ratio) * cosine);
}

nn::Tensor<float> stack_images(const synth::SceneViews& scene, std::span<const int> views) {
  if (views.empty()) throw Error(ErrorCode::kInsufficientViews, "no views to stack");
  const nn::Shape& s = scene.views.at(static_cast<std::size_t>(views[0])).image.shape();
  const std::size_t per = nn::numel(s);
  nn::Tensor<float> out({views.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < views.size(); ++i) {
    const nn::Tensor<float>& img = scene.views.at(static_cast<std::size_t>(views[i])).image;
    if (img.shape() != s) throw Error(ErrorCode::kShapeMismatch, "views differ in size");
    std::copy(img.values().begin(), img.values().end(), out.data() + i * per);
  }
  return out;
}

std::vector<geom::CameraPose> canonical_poses(std::span<const geom::CameraPose> context,
                                              std::span<const geom::CameraPose> extra) {
  std::vector<geom::CameraPose> all(context.begin(), context.end());
  all.insert(all.end(), extra.begin(), extra.end());
  return geom::canonicalize_poses(all, 0);
}

std::vector<int> sample_without_replacement(int n, int k, std::mt19937_64& rng) {
  if (k < 0 || k > n) throw Error(ErrorCode::kInvalidArgument, "cannot draw k of n without replacement");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Trainer::Trainer(model::GbtModel<float>& model, const synth::Dataset& data, TrainConfig config)
    : model_(model), data_(data), config_(config), rng_(config.seed) {
  config_.validate(model.config().image_size);
  if (data.scenes.empty()) throw Error(ErrorCode::kInsufficientViews, "empty dataset");
  if (data.config.image_size != model.config().image_size) {
    throw Error(ErrorCode::kShapeMismatch, "dataset image_size differs from the model's");
  }
  for (const auto& s : data.scenes) {
    if (static_cast<int>(s.views.size()) < config_.context_views + 1) {
      throw Error(ErrorCode::kInsufficientViews, "scene " + std::to_string(s.index) + " has " +
                                                     std::to_string(s.views.size()) + " views, need " +
                                                     std::to_string(config_.context_views + 1));
    }
  }
  optimizer_.config.lr = config_.lr;
  sampler_ = [this](std::mt19937_64& rng) { return default_sample(rng); };
}

TrainingSample Trainer::default_sample(std::mt19937_64& rng) const {
  TrainingSample s;
  s.scene = std::uniform_int_distribution<int>(0, static_cast<int>(data_.scenes.size()) - 1)(rng);
  const int n = static_cast<int>(data_.scenes[static_cast<std::size_t>(s.scene)].views.size());
  std::vector<int> views = sample_without_replacement(n, config_.context_views + 1, rng);
  s.query = views.back();
  views.pop_back();
  s.context = std::move(views);
  return s;
}

namespace {

void recolor(float* rgb, std::size_t plane, const TrainingSample& s) {
  std::vector<float> src(rgb, rgb + 3 * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    const float* in = src.data() + static_cast<std::size_t>(s.channel_order[c]) * plane;
    for (std::size_t i = 0; i < plane; ++i) rgb[c * plane + i] = in[i] * s.channel_gain[c];
  }
}

bool is_identity_color(const TrainingSample& s) {
  return s.channel_order == std::array<int, 3>{0, 1, 2} && s.channel_gain == std::array<float, 3>{1.0f, 1.0f, 1.0f};
}

}  // namespace

double Trainer::accumulate(const TrainingSample& sample, std::mt19937_64& rng, float weight) const {
  const synth::SceneViews& scene = data_.scenes.at(static_cast<std::size_t>(sample.scene));
  std::vector<geom::CameraPose> context;
  for (int v : sample.context) context.push_back(scene.views.at(static_cast<std::size_t>(v)).pose);
  const synth::PosedImage& query = scene.views.at(static_cast<std::size_t>(sample.query));
  const std::vector<geom::CameraPose> poses = canonical_poses(context, std::span(&query.pose, 1));
  const std::span<const geom::CameraPose> ctx(poses.data(), context.size());

  const int width = query.intr.width;
  const int hw = width * query.intr.height;
  const std::vector<int> pixels = sample_without_replacement(hw, config_.rays_per_step, rng);
  std::vector<std::pair<int, int>> px;
  px.reserve(pixels.size());
  nn::Tensor<float> target({pixels.size(), 3});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    px.emplace_back(pixels[i] % width, pixels[i] / width);
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = static_cast<std::size_t>(sample.channel_order[c]) * static_cast<std::size_t>(hw);
      target[i * 3 + c] = query.image[src + static_cast<std::size_t>(pixels[i])] * sample.channel_gain[c];
    }
  }
  nn::Tensor<float> images = stack_images(scene, sample.context);
  if (!is_identity_color(sample)) {
    for (std::size_t v = 0; v < sample.context.size(); ++v) {
      recolor(images.data() + v * 3 * static_cast<std::size_t>(hw), static_cast<std::size_t>(hw), sample);
    }
  }

  nn::Graph<float> g(weight != 0.0f);
  model::SceneEncoding enc = model_.encode(g, images, ctx, query.intr);
  nn::Var pred = model_.decode(g, model::pixel_rays(poses.back(), query.intr, px), enc);
  nn::Var loss = l2_ray_loss(g, pred, g.constant(target));
  const double value = g.value(loss)[0];
  if (!std::isfinite(value)) throw Error(ErrorCode::kNumericFailure, "non-finite training loss");
  if (weight != 0.0f) g.backward(nn::scale(g, loss, weight));
  return value;
}

double Trainer::sample_loss(const TrainingSample& sample, std::mt19937_64& rng) const {
  return accumulate(sample, rng, 0.0f);
}

double Trainer::step() {
  model_.params().zero_grad();
  const float weight = 1.0f / static_cast<float>(config_.batch_scenes);
  double total = 0.0;
  for (int b = 0; b < config_.batch_scenes; ++b) {
    TrainingSample s = sampler_(rng_);
    if (config_.color_augment) {
      const std::vector<int> order = sample_without_replacement(3, 3, rng_);
      std::uniform_real_distribution<float> gain(0.5f, 1.0f);
      for (std::size_t c = 0; c < 3; ++c) {
        s.channel_order[c] = order[c];
        s.channel_gain[c] = gain(rng_);
      }
    }
    total += accumulate(s, rng_, weight);
  }
  optimizer_.config.lr = config_.lr_at(optimizer_.step_count);
  const std::vector<nn::Parameter<float>*> params = model_.params().all();
  nn::adam_step<float>(params, optimizer_);
  const double mean = total / config_.batch_scenes;
  losses_.push_back(mean);
  return mean;
}

void Trainer::run(std::ostream* log) {
  if (log && steps_done() == 0) *log << "step,loss\n";
  while (steps_done() < config_.max_steps) {
    const double loss = step();
    const std::int64_t s = steps_done();
    if (log && config_.eval_every > 0 && (s % config_.eval_every == 0 || s == config_.max_steps)) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%lld,%.9g\n", static_cast<long long>(s), loss);
      *log << buf;
    }
  }
}

}  // namespace gbt::train
