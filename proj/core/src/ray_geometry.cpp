// SPDX-License-Identifier: Apache-2.0
#include "gbt/geometry/ray_geometry.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "gbt/error.hpp"

namespace gbt::geom {

CameraPose CameraPose::inverse() const {
  CameraPose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

CameraPose CameraPose::operator*(const CameraPose& rhs) const {
  CameraPose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

bool CameraPose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

bool CameraPose::is_identity(double tol) const {
  return (rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         translation.cwiseAbs().maxCoeff() <= tol;
}

Intrinsics Intrinsics::from_fov(int size, double fov_radians) {
  Intrinsics k;
  k.width = size;
  k.height = size;
  k.principal_x = 0.5 * size;
  k.principal_y = 0.5 * size;
  k.focal_x = 0.5 * size / std::tan(0.5 * fov_radians);
  k.focal_y = k.focal_x;
  return k;
}

bool Intrinsics::is_valid() const {
  return focal_x > 0 && focal_y > 0 && width > 0 && height > 0 && principal_x >= 0 &&
         principal_x <= width && principal_y >= 0 && principal_y <= height;
}

Ray ray_from_origin_dir(const Vec3& origin, const Vec3& dir) {
  const double n = dir.norm();
  if (!(n > 1e-12)) {
    throw Error(ErrorCode::kZeroDirection, "ray direction has norm <= 1e-12");
  }
  Ray r;
  r.d = dir / n;
  r.m = origin.cross(r.d);
  return r;
}

double ray_distance(const Ray& a, const Ray& b) {
  const Vec3 cross = a.d.cross(b.d);
  const double cross_norm = cross.norm();
  if (cross_norm > kParallelEpsilon) {
    return std::abs(a.d.dot(b.m) + b.d.dot(a.m)) / cross_norm;
  }
  // d_b = s * d_a; s is +-1 for unit directions.
  const double da_sq = a.d.squaredNorm();
  const double s = b.d.dot(a.d) / da_sq;
  return a.d.cross(a.m - b.m / s).norm() / da_sq;
}

std::vector<double> ray_distance_matrix(std::span<const Ray> a, std::span<const Ray> b) {
  std::vector<double> out(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      out[i * b.size() + j] = ray_distance(a[i], b[j]);
    }
  }
  return out;
}

template <class T>
void harmonic_embed_into(std::span<const double> x, const HarmonicConfig& cfg, std::span<T> out) {
  if (out.size() != cfg.output_dim(x.size())) {
    throw Error(ErrorCode::kShapeMismatch, "harmonic_embed output buffer has wrong size");
  }
  std::size_t k = 0;
  for (double xi : x) {
    for (int f = 0; f < cfg.num_frequencies; ++f) {
      const double w = std::ldexp(std::numbers::pi, cfg.min_exponent + f);
      out[k++] = static_cast<T>(std::sin(w * xi));
      out[k++] = static_cast<T>(std::cos(w * xi));
    }
  }
}

template void harmonic_embed_into<float>(std::span<const double>, const HarmonicConfig&, std::span<float>);
template void harmonic_embed_into<double>(std::span<const double>, const HarmonicConfig&,
                                          std::span<double>);

std::vector<double> harmonic_embed(std::span<const double> x, const HarmonicConfig& cfg) {
  if (cfg.num_frequencies < 1) {
    throw Error(ErrorCode::kInvalidArgument, "harmonic embedding needs at least one frequency");
  }
  std::vector<double> out(cfg.output_dim(x.size()));
  harmonic_embed_into<double>(x, cfg, out);
  return out;
}

Ray pixel_ray(const CameraPose& pose, const Intrinsics& intr, const Vec2& px) {
  if (!(px.x() >= 0.0 && px.x() <= intr.width && px.y() >= 0.0 && px.y() <= intr.height)) {
    std::ostringstream msg;
    msg << "pixel (" << px.x() << ", " << px.y() << ") outside " << intr.width << "x"
        << intr.height;
    throw Error(ErrorCode::kOutOfBounds, msg.str());
  }
  const Vec3 dir_cam((px.x() - intr.principal_x) / intr.focal_x,
                     (px.y() - intr.principal_y) / intr.focal_y, 1.0);
  return ray_from_origin_dir(pose.center(), pose.rotation * dir_cam);
}

std::vector<Ray> patch_rays(const CameraPose& pose, const Intrinsics& intr, int grid) {
  if (grid < 1 || intr.width % grid != 0 || intr.height % grid != 0) {
    throw Error(ErrorCode::kInvalidArgument, "grid must evenly divide the image");
  }
  const double cell_w = static_cast<double>(intr.width) / grid;
  const double cell_h = static_cast<double>(intr.height) / grid;
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(grid) * grid);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      rays.push_back(pixel_ray(pose, intr, Vec2((gx + 0.5) * cell_w, (gy + 0.5) * cell_h)));
    }
  }
  return rays;
}

std::vector<CameraPose> canonicalize_poses(std::span<const CameraPose> poses,
                                           std::size_t anchor) {
  if (anchor >= poses.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "anchor index outside pose list");
  }
  const CameraPose inv = poses[anchor].inverse();
  std::vector<CameraPose> out;
  out.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out.push_back(i == anchor ? CameraPose::identity() : inv * poses[i]);
  }
  return out;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Mat3 k;
    k << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    return Mat3::Identity() + k;
  }
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

CameraPose se3_exp(const Vec3& omega, const Vec3& v) {
  const double theta = omega.norm();
  Mat3 k;
  k << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
  Mat3 left_jacobian = Mat3::Identity();
  if (theta > 1e-12) {
    const double t2 = theta * theta;
    left_jacobian += (1.0 - std::cos(theta)) / t2 * k + (theta - std::sin(theta)) / (t2 * theta) * k * k;
  } else {
    left_jacobian += 0.5 * k;
  }
  CameraPose out;
  out.rotation = so3_exp(omega);
  out.translation = left_jacobian * v;
  return out;
}

CameraPose perturb_pose(const CameraPose& pose, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be >= 0");
  if (sigma == 0.0) return pose;
  std::normal_distribution<double> normal(0.0, sigma);
  Vec3 omega;
  Vec3 v;
  for (int i = 0; i < 3; ++i) omega[i] = normal(rng);
  for (int i = 0; i < 3; ++i) v[i] = normal(rng);
  CameraPose out = pose * se3_exp(omega, v);
  // Re-orthonormalize to keep accumulated rounding at the 1e-15 level.
  Eigen::JacobiSVD<Mat3> svd(out.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.rotation = svd.matrixU() * svd.matrixV().transpose();
  return out;
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 y = -(world_up - world_up.dot(z) * z);
  if (y.norm() < 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "look_at: view direction parallel to up vector");
  }
  y.normalize();
  const Vec3 x = y.cross(z);
  CameraPose pose;
  pose.rotation.col(0) = x;
  pose.rotation.col(1) = y;
  pose.rotation.col(2) = z;
  pose.translation = eye;
  return pose;
}

Vec2 project(const CameraPose& pose, const Intrinsics& intr, const Vec3& world_point) {
  const Vec3 p = pose.rotation.transpose() * (world_point - pose.translation);
  return {intr.focal_x * p.x() / p.z() + intr.principal_x,
          intr.focal_y * p.y() / p.z() + intr.principal_y};
}

}  // namespace gbt::geom
