// SPDX-License-Identifier: Apache-2.0
//
// Small random inputs for model-level tests.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <numbers>
#include <random>
#include <vector>

#include "gbt/geometry/ray_geometry.hpp"
#include "gbt/model/config.hpp"
#include "gbt/model/gbt_model.hpp"
#include "gbt/nn/tensor.hpp"

namespace gbt::testing {

template <class T>
struct Context {
  nn::Tensor<T> images;  // [V, 3, S, S]
  std::vector<geom::CameraPose> poses;
  geom::Intrinsics intr;
};

/// Cameras on a ring around the origin looking inward, canonicalized to view 0.
inline std::vector<geom::CameraPose> ring_poses(int views, double radius, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  std::vector<geom::CameraPose> world;
  for (int v = 0; v < views; ++v) {
    const double az = 2.0 * std::numbers::pi * v / views + jitter(rng);
    const geom::Vec3 eye(radius * std::cos(az), 0.4 + jitter(rng), radius * std::sin(az));
    world.push_back(geom::look_at(eye, geom::Vec3(jitter(rng), 0.0, jitter(rng)) * 0.3));
  }
  return geom::canonicalize_poses(world, 0);
}

template <class T>
Context<T> random_context(const model::ModelConfig& cfg, int views, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto s = static_cast<std::size_t>(cfg.image_size);
  Context<T> c;
  c.images = nn::Tensor<T>({static_cast<std::size_t>(views), 3, s, s});
  for (std::size_t i = 0; i < c.images.size(); ++i) c.images[i] = static_cast<T>(u(rng));
  c.poses = ring_poses(views, 2.0, rng);
  c.intr = geom::Intrinsics::from_fov(cfg.image_size, std::numbers::pi / 3);
  return c;
}

/// A few query rays from a camera between the context views.
inline model::RayBatch random_queries(const geom::Intrinsics& intr, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, intr.width - 1);
  const geom::CameraPose pose = ring_poses(1, 2.2, rng)[0] * geom::se3_exp({0.0, 0.4, 0.0}, {0.3, 0.0, 0.1});
  std::vector<std::pair<int, int>> pixels;
  for (int i = 0; i < count; ++i) pixels.emplace_back(px(rng), px(rng));
  return model::pixel_rays(pose, intr, pixels);
}

inline model::RayBatch permuted(const model::RayBatch& rays, const std::vector<std::size_t>& perm) {
  model::RayBatch out;
  for (std::size_t i : perm) {
    out.rays.push_back(rays.rays[i]);
    out.origins.push_back(rays.origins[i]);
  }
  return out;
}

template <class T>
nn::Tensor<T> permuted_rows(const nn::Tensor<T>& x, const std::vector<std::size_t>& perm) {
  nn::Tensor<T> out(x.shape());
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < perm.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x.at(perm[r], c);
  }
  return out;
}

template <class T>
double max_abs_diff(const nn::Tensor<T>& a, const nn::Tensor<T>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

inline model::ModelConfig small_config(model::Variant variant) {
  model::ModelConfig c;
  c.image_size = 16;
  c.grid = 4;
  c.latent_dim = 24;
  c.num_heads = 3;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.harmonic = {4, -2};
  c.mlp_hidden = {16};
  c.stem_channels = {8, 8, 12};
  c.ff_multiplier = 2;
  c.variant = variant;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("gbt_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Relative path -> contents for every regular file under root.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

}  // namespace gbt::testing
