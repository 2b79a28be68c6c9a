// SPDX-License-Identifier: Apache-2.0
#include "gbt/synth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "gbt/error.hpp"

namespace gbt::synth {

namespace {

constexpr double kHitEpsilon = 1e-9;

Vec3 random_color(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const double r = u(rng);
  const double g = u(rng);
  const double b = u(rng);
  return {r, g, b};
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    const double x = n(rng);
    const double y = n(rng);
    const double z = n(rng);
    v = {x, y, z};
  } while (v.norm() < 1e-6);
  return v.normalized();
}

bool in_unit_ball(const Primitive& p) {
  if (const auto* s = std::get_if<Sphere>(&p.shape)) return s->center.norm() + s->radius <= 1.0;
  const auto& b = std::get<Box>(p.shape);
  // The farthest corner bounds the whole box.
  const Vec3 far = b.lo.cwiseAbs().cwiseMax(b.hi.cwiseAbs());
  return far.norm() <= 1.0;
}

}  // namespace

std::string_view to_string(CategoryStyle s) {
  switch (s) {
    case CategoryStyle::kMixed: return "mixed";
    case CategoryStyle::kSpheres: return "spheres";
    case CategoryStyle::kBoxes: return "boxes";
  }
  return "?";
}

CategoryStyle parse_category_style(std::string_view name) {
  if (name == "mixed") return CategoryStyle::kMixed;
  if (name == "spheres") return CategoryStyle::kSpheres;
  if (name == "boxes") return CategoryStyle::kBoxes;
  throw Error(ErrorCode::kInvalidArgument, "unknown category style '" + std::string(name) + "'");
}

void Scene::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, m); };
  auto unit_color = [](const Vec3& c) { return (c.array() >= 0.0).all() && (c.array() <= 1.0).all(); };
  for (const Primitive& p : primitives) {
    if (const auto* s = std::get_if<Sphere>(&p.shape)) {
      if (!(s->radius > 0.0)) fail("sphere radius must be positive");
    } else {
      const auto& b = std::get<Box>(p.shape);
      if (!(b.lo.array() < b.hi.array()).all()) fail("box min must be below max");
    }
    if (!unit_color(p.albedo)) fail("albedo outside [0,1]");
  }
  if (std::abs(light_dir.norm() - 1.0) > 1e-9) fail("light_dir must be unit");
  if (ambient < 0.0 || ambient > 1.0) fail("ambient outside [0,1]");
  if (!unit_color(background)) fail("background outside [0,1]");
}

Scene random_scene(std::uint64_t seed, CategoryStyle style) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Scene scene;
  scene.seed = seed;
  const int count = std::uniform_int_distribution<int>(1, 5)(rng);
  while (static_cast<int>(scene.primitives.size()) < count) {
    bool sphere = style == CategoryStyle::kSpheres;
    if (style == CategoryStyle::kMixed) sphere = u01(rng) < 0.5;
    Primitive p;
    if (sphere) {
      const double radius = 0.3 + 0.3 * u01(rng);
      const Vec3 center = random_unit(rng) * (1.0 - radius) * std::cbrt(u01(rng));
      p.shape = Sphere{center, radius};
    } else {
      const Vec3 half(0.2 + 0.25 * u01(rng), 0.2 + 0.25 * u01(rng), 0.2 + 0.25 * u01(rng));
      const double room = 1.0 - half.norm();
      const Vec3 center = random_unit(rng) * room * std::cbrt(u01(rng));
      p.shape = Box{center - half, center + half};
    }
    p.albedo = random_color(rng, 0.15, 1.0);
    if (in_unit_ball(p)) scene.primitives.push_back(p);
  }
  Vec3 light = random_unit(rng);
  light.y() = std::abs(light.y()) + 0.3;  // keep the light above the horizon
  scene.light_dir = light.normalized();
  scene.ambient = 0.25 + 0.2 * u01(rng);
  scene.background = random_color(rng, 0.0, 0.25);
  return scene;
}

std::optional<double> intersect(const Sphere& s, const Vec3& origin, const Vec3& dir) {
  const Vec3 oc = origin - s.center;
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  double t = -b - root;
  if (t <= kHitEpsilon) t = -b + root;
  if (t <= kHitEpsilon) return std::nullopt;
  return t;
}

std::optional<double> intersect(const Box& box, const Vec3& origin, const Vec3& dir) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double t0 = (box.lo[a] - origin[a]) / dir[a];
    double t1 = (box.hi[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far) return std::nullopt;
  if (t_near > kHitEpsilon) return t_near;
  if (t_far > kHitEpsilon) return t_far;
  return std::nullopt;
}

std::optional<Hit> intersect(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const auto& shape = scene.primitives[i].shape;
    const std::optional<double> t = std::visit([&](const auto& s) { return intersect(s, origin, dir); }, shape);
    if (!t || (best && *t >= best->t)) continue;
    Hit h;
    h.t = *t;
    h.point = origin + *t * dir;
    h.primitive = i;
    if (const auto* s = std::get_if<Sphere>(&shape)) {
      h.normal = (h.point - s->center).normalized();
    } else {
      // Normal of the face the hit point is closest to.
      const auto& b = std::get<Box>(shape);
      const Vec3 center = 0.5 * (b.lo + b.hi);
      const Vec3 half = 0.5 * (b.hi - b.lo);
      const Vec3 rel = (h.point - center).cwiseQuotient(half);
      int axis = 0;
      rel.cwiseAbs().maxCoeff(&axis);
      h.normal = Vec3::Zero();
      h.normal[axis] = rel[axis] > 0.0 ? 1.0 : -1.0;
    }
    best = h;
  }
  return best;
}

Vec3 trace(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  const std::optional<Hit> hit = intersect(scene, origin, dir);
  if (!hit) return scene.background;
  const Primitive& p = scene.primitives[hit->primitive];
  const double diffuse = std::max(0.0, hit->normal.dot(scene.light_dir));
  return p.albedo * (scene.ambient + (1.0 - scene.ambient) * diffuse);
}

PosedImage render_scene(const Scene& scene, const geom::CameraPose& pose, const geom::Intrinsics& intr,
                        int frame_index) {
  const std::size_t w = static_cast<std::size_t>(intr.width);
  const std::size_t h = static_cast<std::size_t>(intr.height);
  PosedImage out{nn::Tensor<float>({3, h, w}), pose, intr, frame_index};
  const Vec3 origin = pose.center();
  for (std::size_t row = 0; row < h; ++row) {
    for (std::size_t col = 0; col < w; ++col) {
      const geom::Ray ray = geom::pixel_center_ray(pose, intr, static_cast<int>(col), static_cast<int>(row));
      const Vec3 c = trace(scene, origin, ray.d);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.image[(ch * h + row) * w + col] = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
      }
    }
  }
  return out;
}

std::vector<geom::CameraPose> orbit_cameras(int n, double radius, double elevation) {
  if (n < 1 || !(radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "orbit needs n >= 1 and radius > 0");
  std::vector<geom::CameraPose> poses;
  poses.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double az = 2.0 * std::numbers::pi * i / n;
    const Vec3 eye = radius * Vec3(std::cos(elevation) * std::cos(az), std::sin(elevation),
                                   std::cos(elevation) * std::sin(az));
    poses.push_back(geom::look_at(eye, Vec3::Zero()));
  }
  return poses;
}

}  // namespace gbt::synth
