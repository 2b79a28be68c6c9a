// SPDX-License-Identifier: Apache-2.0
//
// Reference computations that share no code with the library.
#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <random>

#include "gbt/geometry/ray_geometry.hpp"

namespace gbt::testing {

using geom::Mat3;
using geom::Vec3;

/// Line as a point and a (not necessarily unit) direction.
struct Line {
  Vec3 point;
  Vec3 dir;
};

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return {x, y, z};
}

inline Vec3 random_unit(std::mt19937_64& rng) { return random_vec(rng).normalized(); }

inline Mat3 random_rotation(std::mt19937_64& rng) {
  // Normalized Gaussian 4-vectors are uniform unit quaternions.
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector4d v;
  for (int i = 0; i < 4; ++i) v[i] = n(rng);
  return Eigen::Quaterniond(v.normalized()).toRotationMatrix();
}

/// Distance from p to the line.
inline double point_line_distance(const Vec3& p, const Line& l) {
  const Vec3 u = l.dir.normalized();
  const Vec3 w = p - l.point;
  return (w - w.dot(u) * u).norm();
}

/// Closest points of two lines by minimizing |p_a + s d_a - p_b - t d_b|^2.
inline double closest_point_distance(const Line& a, const Line& b) {
  const Vec3 w0 = a.point - b.point;
  const double aa = a.dir.dot(a.dir);
  const double ab = a.dir.dot(b.dir);
  const double bb = b.dir.dot(b.dir);
  const double da = a.dir.dot(w0);
  const double db = b.dir.dot(w0);
  const double denom = aa * bb - ab * ab;
  if (denom <= 1e-14 * aa * bb) return point_line_distance(a.point, b);
  const double s = (ab * db - bb * da) / denom;
  const double t = (aa * db - ab * da) / denom;
  return ((a.point + s * a.dir) - (b.point + t * b.dir)).norm();
}

/// Pair of lines at a known distance: b is a shifted by `dist` along a unit
/// normal u, then rotated by `angle` about u and slid along its own length.
/// The common normal is u, so the exact distance is `dist` for any angle.
struct KnownPair {
  Line a;
  Line b;
  double dist = 0.0;
};

inline KnownPair known_distance_pair(std::mt19937_64& rng, double dist, double angle) {
  const Vec3 d = random_unit(rng);
  Vec3 u = d.cross(random_unit(rng));
  u.normalize();
  const Vec3 w = d.cross(u);
  const Vec3 pa = random_vec(rng, 2.0);
  const Vec3 db = std::cos(angle) * d + std::sin(angle) * w;
  std::uniform_real_distribution<double> slide(-3.0, 3.0);
  const Vec3 pb = pa + dist * u + slide(rng) * db;
  return {{pa + slide(rng) * d, d}, {pb, db}, dist};
}

inline geom::Ray to_ray(const Line& l) { return geom::ray_from_origin_dir(l.point, l.dir); }

}  // namespace gbt::testing
