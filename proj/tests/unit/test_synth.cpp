// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "gbt/error.hpp"
#include "gbt/synth/dataset.hpp"
#include "gbt/synth/image_io.hpp"
#include "gbt/synth/scene.hpp"
#include "oracles.hpp"

using namespace gbt;
using namespace gbt::synth;
using geom::Vec3;

namespace {

double primitive_extent(const Primitive& p) {
  if (const auto* s = std::get_if<Sphere>(&p.shape)) return s->center.norm() + s->radius;
  const Box& b = std::get<Box>(p.shape);
  double worst = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 c((corner & 1) ? b.hi.x() : b.lo.x(), (corner & 2) ? b.hi.y() : b.lo.y(),
                 (corner & 4) ? b.hi.z() : b.lo.z());
    worst = std::max(worst, c.norm());
  }
  return worst;
}

bool same_scene(const Scene& a, const Scene& b) {
  if (a.primitives.size() != b.primitives.size() || a.light_dir != b.light_dir || a.ambient != b.ambient ||
      a.background != b.background) {
    return false;
  }
  for (std::size_t i = 0; i < a.primitives.size(); ++i) {
    if (a.primitives[i].albedo != b.primitives[i].albedo) return false;
    if (a.primitives[i].shape.index() != b.primitives[i].shape.index()) return false;
  }
  return true;
}

Scene unit_sphere_scene() {
  Scene s;
  s.primitives.push_back({Sphere{Vec3::Zero(), 1.0}, Vec3(1, 0, 0)});
  s.light_dir = Vec3(0, 1, 0);
  s.ambient = 1.0;
  s.background = Vec3(0.1, 0.2, 0.3);
  return s;
}

}  // namespace

TEST_CASE("random_scene is deterministic and bounded") {
  int differing = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene a = random_scene(seed);
    CHECK(same_scene(a, random_scene(seed)));
    CHECK_NOTHROW(a.validate());
    CHECK(a.primitives.size() >= 1);
    CHECK(a.primitives.size() <= 5);
    CHECK(std::abs(a.light_dir.norm() - 1.0) < 1e-12);
    for (const Primitive& p : a.primitives) {
      CHECK(primitive_extent(p) <= 1.0 + 1e-12);
      CHECK(p.albedo.minCoeff() >= 0.0);
      CHECK(p.albedo.maxCoeff() <= 1.0);
    }
    if (!same_scene(a, random_scene(seed + 1000))) ++differing;
  }
  CHECK(differing == 100);
}

TEST_CASE("category styles select primitive kinds") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    for (const Primitive& p : random_scene(seed, CategoryStyle::kSpheres).primitives) {
      CHECK(std::holds_alternative<Sphere>(p.shape));
    }
    for (const Primitive& p : random_scene(seed, CategoryStyle::kBoxes).primitives) {
      CHECK(std::holds_alternative<Box>(p.shape));
    }
  }
  CHECK(parse_category_style(to_string(CategoryStyle::kBoxes)) == CategoryStyle::kBoxes);
  CHECK_THROWS_AS(parse_category_style("cars"), Error);
}

TEST_CASE("scene validation") {
  Scene s = unit_sphere_scene();
  CHECK_NOTHROW(s.validate());
  s.ambient = 1.5;
  CHECK_THROWS_AS(s.validate(), Error);
  s = unit_sphere_scene();
  s.light_dir = Vec3(0, 2, 0);
  CHECK_THROWS_AS(s.validate(), Error);
  s = unit_sphere_scene();
  s.primitives.push_back({Box{Vec3(0, 0, 0), Vec3(-1, 1, 1)}, Vec3(1, 1, 1)});
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("ambient-only sphere renders its albedo at the center") {
  const Scene s = unit_sphere_scene();
  const geom::CameraPose pose = geom::look_at({0, 0, -2}, Vec3::Zero());
  const geom::Intrinsics intr = geom::Intrinsics::from_fov(64, std::numbers::pi / 3);
  const PosedImage img = render_scene(s, pose, intr);
  REQUIRE(img.image.shape() == nn::Shape{3, 64, 64});
  const std::size_t center = 32 * 64 + 32;
  CHECK(img.image[center] == 1.0f);
  CHECK(img.image[4096 + center] == 0.0f);
  CHECK(img.image[8192 + center] == 0.0f);

  const geom::Intrinsics wide = geom::Intrinsics::from_fov(64, 2.5);
  const PosedImage w = render_scene(s, pose, wide);
  CHECK(w.image[0] == 0.1f);
  CHECK(w.image[4096] == 0.2f);
  CHECK(w.image[8192] == 0.3f);
  CHECK(render_scene(s, pose, intr).image == img.image);
}

TEST_CASE("Lambertian shading") {
  Scene s = unit_sphere_scene();
  s.ambient = 0.25;
  s.primitives[0].albedo = Vec3(0.8, 0.4, 0.2);
  // Top of the sphere faces the light; a point on the equator is lit by ambient only.
  const Vec3 top = trace(s, Vec3(0, 3, 0), Vec3(0, -1, 0));
  CHECK((top - Vec3(0.8, 0.4, 0.2)).norm() < 1e-12);
  const Vec3 side = trace(s, Vec3(0, 0, -3), Vec3(0, 0, 1));
  CHECK((side - 0.25 * Vec3(0.8, 0.4, 0.2)).norm() < 1e-12);
  CHECK(trace(s, Vec3(0, 3, 0), Vec3(0, 1, 0)) == s.background);
}

TEST_CASE("intersections satisfy the surface equations") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int hits = 0;
  for (int i = 0; i < 500; ++i) {
    const Sphere sp{Vec3(u(rng), u(rng), u(rng)) * 0.5, 0.3 + 0.2 * std::abs(u(rng))};
    const Vec3 origin = testing::random_unit(rng) * 3.0;
    const Vec3 dir = (sp.center + Vec3(u(rng), u(rng), u(rng)) * 0.4 - origin).normalized();
    if (const auto t = intersect(sp, origin, dir)) {
      ++hits;
      CHECK(std::abs((origin + *t * dir - sp.center).norm() - sp.radius) < 1e-6);
    }
    const Box b{Vec3(-0.3, -0.2, -0.4), Vec3(0.2, 0.3, 0.1)};
    if (const auto t = intersect(b, origin, dir)) {
      const Vec3 p = origin + *t * dir;
      const double outside = std::max((b.lo - p).maxCoeff(), (p - b.hi).maxCoeff());
      CHECK(std::abs(outside) < 1e-9);
    }
  }
  CHECK(hits > 100);
  // Origin inside the sphere: the exit point is returned.
  const auto inside = intersect(Sphere{Vec3::Zero(), 1.0}, Vec3::Zero(), Vec3(1, 0, 0));
  REQUIRE(inside.has_value());
  CHECK(*inside == doctest::Approx(1.0));
}

TEST_CASE("surface points look the same from two views under ambient light") {
  std::mt19937_64 rng(2);
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 50 && seed < 500; ++seed) {
    Scene s = random_scene(seed);
    s.ambient = 1.0;
    const Vec3 a = testing::random_unit(rng) * 2.0;
    const Vec3 b = testing::random_unit(rng) * 2.0;
    const Vec3 dir = (testing::random_vec(rng, 0.3) - a).normalized();
    const auto hit = intersect(s, a, dir);
    if (!hit) continue;
    const Vec3 to_b = hit->point - b;
    const auto seen = intersect(s, b, to_b.normalized());
    if (!seen || std::abs(seen->t - to_b.norm()) > 1e-6) continue;  // occluded from b
    CHECK((trace(s, a, dir) - trace(s, b, to_b.normalized())).norm() < 1e-12);
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("orbit cameras") {
  const auto four = orbit_cameras(4, 2.0, 0.0);
  REQUIRE(four.size() == 4);
  const Vec3 expect[4] = {{2, 0, 0}, {0, 0, 2}, {-2, 0, 0}, {0, 0, -2}};
  for (int i = 0; i < 4; ++i) CHECK((four[i].center() - expect[i]).norm() < 1e-12);

  for (double elevation : {0.0, 0.3, -0.2}) {
    const auto poses = orbit_cameras(7, 2.5, elevation);
    for (const auto& p : poses) {
      CHECK(p.is_valid());
      const geom::Ray axis = geom::ray_from_origin_dir(p.center(), p.rotation.col(2));
      CHECK(axis.m.norm() < 1e-9);
      CHECK(axis.d.dot(-p.center()) > 0.0);
    }
  }
  const auto ring = orbit_cameras(9, 2.0, 0.0);
  for (int i = 0; i < 9; ++i) {
    const geom::Mat3 rel = ring[i].rotation.transpose() * ring[(i + 1) % 9].rotation;
    CHECK(std::abs(geom::rotation_angle(rel) - 2.0 * std::numbers::pi / 9) < 1e-9);
  }
}

TEST_CASE("png round trip") {
  testing::TempDir dir("png");
  nn::Tensor<float> img({3, 5, 7});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 256) / 255.0f;
  write_png(dir / "a.png", img);
  const nn::Tensor<float> back = read_png(dir / "a.png");
  CHECK(back == quantize8(img));
  CHECK(testing::max_abs_diff(back, img) < 1e-6);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), Error);
  CHECK_THROWS_AS(write_png(dir / "no_dir" / "x.png", img), Error);
}

TEST_CASE("dataset generation, layout and round trip") {
  testing::TempDir dir("data");
  DatasetConfig cfg;
  cfg.num_scenes = 3;
  cfg.views_per_scene = 4;
  cfg.image_size = 16;
  cfg.seed = 5;
  const Dataset d = make_dataset(cfg, dir / "a");
  make_dataset(cfg, dir / "b");
  const auto files = testing::snapshot(dir / "a");
  CHECK(files.size() == 3 * 4 + 3 + 1);
  CHECK(files == testing::snapshot(dir / "b"));
  CHECK(files.at("manifest.txt").rfind("format gbt-dataset", 0) == 0);

  const Dataset loaded = load_dataset(dir / "a");
  CHECK(loaded.config == cfg);
  REQUIRE(loaded.scenes.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(loaded.scenes[k].views.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) {
      const PosedImage& a = d.scenes[k].views[j];
      const PosedImage& b = loaded.scenes[k].views[j];
      CHECK(a.image == b.image);
      CHECK((a.pose.rotation - b.pose.rotation).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((a.pose.translation - b.pose.translation).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(b.intr.focal_x == doctest::Approx(a.intr.focal_x));
      CHECK(b.frame_index == static_cast<int>(j));
    }
  }
  CHECK(make_dataset(cfg).scenes[1].views[2].image == d.scenes[1].views[2].image);

  DatasetConfig other = cfg;
  other.seed = 6;
  CHECK(make_dataset(other).scenes[0].views[0].image != d.scenes[0].views[0].image);
}

TEST_CASE("dataset loading rejects damaged layouts") {
  testing::TempDir dir("bad");
  DatasetConfig cfg;
  cfg.num_scenes = 1;
  cfg.views_per_scene = 2;
  cfg.image_size = 8;
  make_dataset(cfg, dir.path());
  CHECK_THROWS_AS(load_dataset(dir / "nothing"), Error);
  std::filesystem::remove(dir / "scene_0/view_1.png");
  CHECK_THROWS_AS(load_dataset(dir.path()), Error);
  {
    std::ofstream m(dir / "manifest.txt");
    m << "format something-else\n";
  }
  CHECK_THROWS_AS(load_dataset(dir.path()), Error);
}

TEST_CASE("default views are never all background") {
  DatasetConfig cfg;
  cfg.num_scenes = 12;
  cfg.views_per_scene = 6;
  cfg.image_size = 24;
  for (ViewLayout layout : {ViewLayout::kJittered, ViewLayout::kOrbit}) {
    cfg.layout = layout;
    const Dataset d = make_dataset(cfg);
    for (std::size_t k = 0; k < d.scenes.size(); ++k) {
      const Scene s = dataset_scene(cfg, static_cast<int>(k));
      for (const PosedImage& v : d.scenes[k].views) {
        bool any = false;
        for (std::size_t p = 0; p < 24 * 24 && !any; ++p) {
          for (std::size_t c = 0; c < 3; ++c) {
            const float bg = quantize8(nn::Tensor<float>({1}, {static_cast<float>(s.background[c])}))[0];
            any = any || v.image[c * 24 * 24 + p] != bg;
          }
        }
        CHECK(any);
      }
    }
  }
}

TEST_CASE("dataset config validation") {
  DatasetConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.views_per_scene = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = DatasetConfig{};
  cfg.radius = 0.9;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
