// SPDX-License-Identifier: Apache-2.0
#include "gbt/train/grad_suite.hpp"

#include <cmath>
#include <random>

#include "gbt/model/gbt_model.hpp"
#include "gbt/synth/scene.hpp"
#include "gbt/train/metrics.hpp"
#include "gbt/train/trainer.hpp"

namespace gbt::train {

ModelGradCheck model_grad_check(const model::ModelConfig& config, std::uint64_t seed, int num_rays, double h) {
  model::GbtModel<double> net(config, seed);
  const geom::Intrinsics intr = geom::Intrinsics::from_fov(config.image_size, 1.0);
  const synth::Scene scene = synth::random_scene(seed);
  const std::vector<geom::CameraPose> world = {
      geom::look_at({0.0, 0.3, -2.0}, geom::Vec3::Zero()),
      geom::look_at({1.6, 0.5, -1.2}, geom::Vec3::Zero()),
      geom::look_at({-1.0, 0.2, -1.7}, geom::Vec3::Zero()),
  };
  const std::vector<geom::CameraPose> poses = geom::canonicalize_poses(world, 0);

  const std::size_t s = static_cast<std::size_t>(config.image_size);
  nn::Tensor<double> images({2, 3, s, s});
  for (std::size_t v = 0; v < 2; ++v) {
    const nn::Tensor<float> img = synth::render_scene(scene, world[v], intr).image;
    for (std::size_t i = 0; i < img.size(); ++i) images[v * img.size() + i] = img[i];
  }

  std::mt19937_64 rng(seed);
  std::vector<std::pair<int, int>> px;
  for (int i = 0; i < num_rays; ++i) {
    px.emplace_back(static_cast<int>(rng() % s), static_cast<int>(rng() % s));
  }
  const model::RayBatch rays = model::pixel_rays(poses[2], intr, px);
  nn::Tensor<double> target({px.size(), 3});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& t : target.values()) t = u(rng);

  auto loss = [&](nn::Graph<double>& g) {
    model::SceneEncoding enc = net.encode(g, images, std::span(poses.data(), 2), intr);
    return l2_ray_loss(g, net.decode(g, rays, enc), g.constant(target));
  };
  const std::vector<nn::Parameter<double>*> params = net.params().all();
  ModelGradCheck out;
  out.result = nn::grad_check_params(loss, params, h);
  out.worst_param = params.at(out.result.worst_input)->name;
  for (const auto* p : params) out.params_checked += p->trainable ? 1 : 0;
  return out;
}

}  // namespace gbt::train
