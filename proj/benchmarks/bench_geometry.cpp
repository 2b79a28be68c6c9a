// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "gbt/geometry/ray_geometry.hpp"

namespace {

using namespace gbt::geom;

std::vector<Ray> random_rays(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Ray> rays;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 o(g(rng), g(rng), g(rng));
    const Vec3 d(g(rng), g(rng), g(rng));
    rays.push_back(ray_from_origin_dir(o, d));
  }
  return rays;
}

void BM_RayDistance(benchmark::State& state) {
  const std::vector<Ray> rays = random_rays(256, 1);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ray_distance(rays[i % 256], rays[(i + 97) % 256]));
    ++i;
  }
}
BENCHMARK(BM_RayDistance);

// One decoder chunk: Q query rays against V*G*G memory rays.
void BM_RayDistanceMatrix(benchmark::State& state) {
  const std::vector<Ray> a = random_rays(static_cast<std::size_t>(state.range(0)), 2);
  const std::vector<Ray> b = random_rays(static_cast<std::size_t>(state.range(1)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(ray_distance_matrix(a, b));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}
BENCHMARK(BM_RayDistanceMatrix)->Args({192, 192})->Args({1024, 192});

void BM_HarmonicEmbed(benchmark::State& state) {
  const HarmonicConfig cfg;
  const std::vector<Ray> rays = random_rays(1024, 4);
  std::vector<float> out(cfg.output_dim(6));
  std::size_t i = 0;
  for (auto _ : state) {
    const auto c = rays[i++ % rays.size()].coords();
    harmonic_embed_into<float>(c, cfg, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_HarmonicEmbed);

void BM_PixelRays(benchmark::State& state) {
  const Intrinsics intr = Intrinsics::from_fov(64, 1.0);
  const CameraPose pose = look_at({0, -1, -2}, {0, 0, 0});
  for (auto _ : state) {
    for (int r = 0; r < 64; ++r) {
      for (int c = 0; c < 64; ++c) benchmark::DoNotOptimize(pixel_center_ray(pose, intr, c, r));
    }
  }
  state.SetItemsProcessed(state.iterations() * 64 * 64);
}
BENCHMARK(BM_PixelRays);

}  // namespace
