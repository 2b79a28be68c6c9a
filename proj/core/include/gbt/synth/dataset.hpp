// SPDX-License-Identifier: Apache-2.0
//
// On-disk layout:
//   <root>/manifest.txt            key value lines, "format gbt-dataset" first
//   <root>/scene_<k>/view_<j>.png  8-bit RGB
//   <root>/scene_<k>/cameras.csv   frame_index, R (row-major), t, fx, fy, cx, cy
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gbt/synth/scene.hpp"

namespace gbt::synth {

inline constexpr int kDatasetVersion = 1;

enum class ViewLayout {
  kJittered,  // azimuths evenly spread with jitter, random elevation per view
  kOrbit,     // orbit_cameras at one elevation per scene
};

struct DatasetConfig {
  int num_scenes = 64;
  int views_per_scene = 24;
  int image_size = 64;
  std::uint64_t seed = 0;
  double radius = 2.0;
  double fov_deg = 60.0;
  double elevation_jitter_deg = 15.0;
  CategoryStyle style = CategoryStyle::kMixed;
  ViewLayout layout = ViewLayout::kJittered;

  geom::Intrinsics intrinsics() const;
  void validate() const;
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct SceneViews {
  int index = 0;
  std::vector<PosedImage> views;
};

struct Dataset {
  DatasetConfig config;
  std::vector<SceneViews> scenes;
};

/// Scene k of a dataset; seeds are derived from (config.seed, k).
Scene dataset_scene(const DatasetConfig& config, int k);
std::vector<geom::CameraPose> dataset_cameras(const DatasetConfig& config, int k);

/// Renders in memory. Images are quantized to 8 bits, so they match what
/// load_dataset() returns.
Dataset make_dataset(const DatasetConfig& config);

/// Renders and writes under root (created if missing). Throws kIoError.
Dataset make_dataset(const DatasetConfig& config, const std::filesystem::path& root);

void write_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace gbt::synth
