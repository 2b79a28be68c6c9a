// SPDX-License-Identifier: Apache-2.0
//
// Plücker rays, pinhole cameras and the small amount of rigid-body algebra
// the model needs. Everything here is a pure function of its arguments.
//
// Conventions: poses map camera-frame points to world frame. Cameras look
// down +z with x to the right and y down. Pixel (i, j) covers the continuous
// square [i, i+1) x [j, j+1), so its center sits at (i + 0.5, j + 0.5).
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace gbt::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Cross-product norm below which two directions are treated as parallel.
inline constexpr double kParallelEpsilon = 1e-8;

/// Line in Plücker coordinates: unit direction d and moment m = o x d.
struct Ray {
  Vec3 d = Vec3::UnitZ();
  Vec3 m = Vec3::Zero();

  /// The six coordinates (d, m) in that order.
  std::array<double, 6> coords() const { return {d.x(), d.y(), d.z(), m.x(), m.y(), m.z()}; }
};

struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static CameraPose identity() { return {}; }

  /// Camera center in world coordinates.
  const Vec3& center() const { return translation; }
  Vec3 transform_point(const Vec3& p) const { return rotation * p + translation; }
  CameraPose inverse() const;
  CameraPose operator*(const CameraPose& rhs) const;
  bool is_valid(double tol = 1e-9) const;
  bool is_identity(double tol) const;
};

struct Intrinsics {
  double focal_x = 1.0;
  double focal_y = 1.0;
  double principal_x = 0.0;
  double principal_y = 0.0;
  int width = 1;
  int height = 1;

  /// Square image with the principal point at the center.
  static Intrinsics from_fov(int size, double fov_radians);
  bool is_valid() const;
};

struct HarmonicConfig {
  int num_frequencies = 15;
  int min_exponent = -6;

  std::size_t output_dim(std::size_t input_dim) const {
    return 2 * static_cast<std::size_t>(num_frequencies) * input_dim;
  }
  friend bool operator==(const HarmonicConfig&, const HarmonicConfig&) = default;
};

// Throws ErrorCode::kZeroDirection when ||dir|| <= 1e-12.
Ray ray_from_origin_dir(const Vec3& origin, const Vec3& dir);

/// Minimum distance between the two infinite lines. Uses the skew formula
/// when ||d_a x d_b|| > kParallelEpsilon and the parallel formula otherwise.
double ray_distance(const Ray& a, const Ray& b);

/// Row-major [a.size(), b.size()] matrix of pairwise ray distances.
std::vector<double> ray_distance_matrix(std::span<const Ray> a, std::span<const Ray> b);

/// sin/cos features, coordinate-major, frequency-minor, sin before cos.
std::vector<double> harmonic_embed(std::span<const double> x, const HarmonicConfig& cfg);

/// Writes harmonic_embed(x) into out, which must hold cfg.output_dim(x.size()).
template <class T>
void harmonic_embed_into(std::span<const double> x, const HarmonicConfig& cfg, std::span<T> out);

/// Ray through continuous pixel coordinate px (see pixel-center convention).
/// Throws kOutOfBounds when px lies outside [0, width] x [0, height].
Ray pixel_ray(const CameraPose& pose, const Intrinsics& intr, const Vec2& px);

/// Ray through the center of pixel (col, row).
inline Ray pixel_center_ray(const CameraPose& pose, const Intrinsics& intr, int col, int row) {
  return pixel_ray(pose, intr, Vec2(col + 0.5, row + 0.5));
}

/// One ray per grid cell through the cell center, row-major.
std::vector<Ray> patch_rays(const CameraPose& pose, const Intrinsics& intr, int grid);

/// Re-expresses every pose relative to poses[anchor], which becomes identity.
std::vector<CameraPose> canonicalize_poses(std::span<const CameraPose> poses, std::size_t anchor);

/// Rotation matrix from an axis-angle vector.
Mat3 so3_exp(const Vec3& omega);
/// Rotation angle in [0, pi].
double rotation_angle(const Mat3& r);
/// Rigid transform exp((omega, v)) with the SE(3) left Jacobian on v.
CameraPose se3_exp(const Vec3& omega, const Vec3& v);

/// Applies a tangent-space perturbation xi ~ N(0, sigma^2 I6) in the camera
/// frame: pose * exp(xi). sigma == 0 returns the input unchanged.
CameraPose perturb_pose(const CameraPose& pose, double sigma, std::mt19937_64& rng);

/// Pose at `eye` looking at `target`; world_up fixes the roll.
CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up = Vec3::UnitY());

/// Projects a world point to continuous pixel coordinates.
Vec2 project(const CameraPose& pose, const Intrinsics& intr, const Vec3& world_point);

}  // namespace gbt::geom
