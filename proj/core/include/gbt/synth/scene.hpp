// SPDX-License-Identifier: Apache-2.0
//
// Procedural Lambertian scenes and a ray-casting renderer for them.
#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "gbt/geometry/ray_geometry.hpp"
#include "gbt/nn/tensor.hpp"

namespace gbt::synth {

using geom::Vec3;

struct Sphere {
  Vec3 center;
  double radius = 1.0;
};

/// Axis-aligned box.
struct Box {
  Vec3 lo;
  Vec3 hi;
};

struct Primitive {
  std::variant<Sphere, Box> shape;
  Vec3 albedo{1.0, 1.0, 1.0};
};

/// Selects the primitive mix, so one style can be held out as a category.
enum class CategoryStyle { kMixed, kSpheres, kBoxes };

std::string_view to_string(CategoryStyle s);
CategoryStyle parse_category_style(std::string_view name);

struct Scene {
  std::vector<Primitive> primitives;
  Vec3 light_dir{0.0, -1.0, 0.0};  // unit, points from the surface to the light
  double ambient = 0.3;
  Vec3 background{0.0, 0.0, 0.0};
  std::uint64_t seed = 0;

  /// Throws kInvalidArgument if any invariant is broken.
  void validate() const;
};

struct PosedImage {
  nn::Tensor<float> image;  // [3, H, W] in [0, 1]
  geom::CameraPose pose;
  geom::Intrinsics intr;
  int frame_index = 0;
};

struct Hit {
  double t = 0.0;
  Vec3 point;
  Vec3 normal;  // outward, unit
  std::size_t primitive = 0;
};

/// 1 to 5 primitives inside the unit ball; deterministic per seed.
Scene random_scene(std::uint64_t seed, CategoryStyle style = CategoryStyle::kMixed);

/// Nearest hit with t > 0 along origin + t * dir (dir unit).
std::optional<Hit> intersect(const Scene& scene, const Vec3& origin, const Vec3& dir);
std::optional<double> intersect(const Sphere& s, const Vec3& origin, const Vec3& dir);
std::optional<double> intersect(const Box& b, const Vec3& origin, const Vec3& dir);

/// Shaded color seen along a ray (background on a miss).
Vec3 trace(const Scene& scene, const Vec3& origin, const Vec3& dir);

PosedImage render_scene(const Scene& scene, const geom::CameraPose& pose, const geom::Intrinsics& intr,
                        int frame_index = 0);

/// n cameras on a circle of the given radius and elevation (radians), all
/// looking at the origin; camera i sits at azimuth 2*pi*i/n.
std::vector<geom::CameraPose> orbit_cameras(int n, double radius, double elevation);

}  // namespace gbt::synth
