// SPDX-License-Identifier: Apache-2.0
#include "gbt/synth/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "gbt/error.hpp"
#include "gbt/synth/image_io.hpp"

namespace gbt::synth {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

std::string layout_name(ViewLayout l) { return l == ViewLayout::kOrbit ? "orbit" : "jittered"; }

ViewLayout parse_layout(const std::string& s) {
  if (s == "orbit") return ViewLayout::kOrbit;
  if (s == "jittered") return ViewLayout::kJittered;
  throw Error(ErrorCode::kIoError, "unknown view layout '" + s + "'");
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

fs::path scene_dir(const fs::path& root, int k) { return root / ("scene_" + std::to_string(k)); }
fs::path view_path(const fs::path& root, int k, int j) {
  return scene_dir(root, k) / ("view_" + std::to_string(j) + ".png");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, path.string() + ": write failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

geom::Intrinsics DatasetConfig::intrinsics() const { return geom::Intrinsics::from_fov(image_size, deg(fov_deg)); }

void DatasetConfig::validate() const {
  if (num_scenes < 1 || views_per_scene < 1 || image_size < 1) {
    throw Error(ErrorCode::kInvalidArgument, "dataset counts must be positive");
  }
  if (!(radius > 1.0)) throw Error(ErrorCode::kInvalidArgument, "camera radius must exceed the unit ball");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw Error(ErrorCode::kInvalidArgument, "fov must be in (0, 180)");
  if (!(elevation_jitter_deg >= 0.0 && elevation_jitter_deg < 90.0)) {
    throw Error(ErrorCode::kInvalidArgument, "elevation jitter must be in [0, 90)");
  }
}

Scene dataset_scene(const DatasetConfig& config, int k) {
  return random_scene(mix_seed(config.seed, 2 * static_cast<std::uint64_t>(k)), config.style);
}

std::vector<geom::CameraPose> dataset_cameras(const DatasetConfig& config, int k) {
  std::mt19937_64 rng(mix_seed(config.seed, 2 * static_cast<std::uint64_t>(k) + 1));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double jitter = deg(config.elevation_jitter_deg);
  const int n = config.views_per_scene;
  if (config.layout == ViewLayout::kOrbit) return orbit_cameras(n, config.radius, jitter * u(rng));

  const double offset = std::numbers::pi * u(rng);
  const double step = 2.0 * std::numbers::pi / n;
  std::vector<geom::CameraPose> poses;
  for (int j = 0; j < n; ++j) {
    const double az = offset + step * (j + 0.5 * u(rng));
    const double el = jitter * u(rng);
    const geom::Vec3 eye =
        config.radius * geom::Vec3(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
    poses.push_back(geom::look_at(eye, geom::Vec3::Zero()));
  }
  return poses;
}

Dataset make_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset ds{config, {}};
  const geom::Intrinsics intr = config.intrinsics();
  for (int k = 0; k < config.num_scenes; ++k) {
    const Scene scene = dataset_scene(config, k);
    SceneViews sv{k, {}};
    const std::vector<geom::CameraPose> poses = dataset_cameras(config, k);
    for (int j = 0; j < config.views_per_scene; ++j) {
      PosedImage view = render_scene(scene, poses[static_cast<std::size_t>(j)], intr, j);
      view.image = quantize8(view.image);
      sv.views.push_back(std::move(view));
    }
    ds.scenes.push_back(std::move(sv));
  }
  return ds;
}

Dataset make_dataset(const DatasetConfig& config, const fs::path& root) {
  Dataset ds = make_dataset(config);
  write_dataset(ds, root);
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::kIoError, root.string() + ": " + ec.message());
  const DatasetConfig& c = ds.config;
  std::ostringstream m;
  m << "format gbt-dataset\n"
    << "version " << kDatasetVersion << "\n"
    << "num_scenes " << ds.scenes.size() << "\n"
    << "views_per_scene " << c.views_per_scene << "\n"
    << "image_size " << c.image_size << "\n"
    << "seed " << c.seed << "\n"
    << "radius " << fmt17(c.radius) << "\n"
    << "fov_deg " << fmt17(c.fov_deg) << "\n"
    << "elevation_jitter_deg " << fmt17(c.elevation_jitter_deg) << "\n"
    << "style " << to_string(c.style) << "\n"
    << "layout " << layout_name(c.layout) << "\n";
  write_text(root / "manifest.txt", m.str());

  for (const SceneViews& sv : ds.scenes) {
    fs::create_directories(scene_dir(root, sv.index), ec);
    if (ec) throw Error(ErrorCode::kIoError, scene_dir(root, sv.index).string() + ": " + ec.message());
    std::string csv = "frame_index,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz,fx,fy,cx,cy\n";
    for (const PosedImage& v : sv.views) {
      write_png(view_path(root, sv.index, v.frame_index), v.image);
      csv += std::to_string(v.frame_index);
      for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) csv += "," + fmt17(v.pose.rotation(r, col));
      }
      for (int i = 0; i < 3; ++i) csv += "," + fmt17(v.pose.translation[i]);
      csv += "," + fmt17(v.intr.focal_x) + "," + fmt17(v.intr.focal_y) + "," + fmt17(v.intr.principal_x) + "," +
             fmt17(v.intr.principal_y) + "\n";
    }
    write_text(scene_dir(root, sv.index) / "cameras.csv", csv);
  }
}

Dataset load_dataset(const fs::path& root) {
  std::map<std::string, std::string> kv;
  {
    std::istringstream in(read_text(root / "manifest.txt"));
    std::string key;
    std::string value;
    while (in >> key >> value) kv[key] = value;
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::kIoError, "manifest missing '" + key + "'");
    return it->second;
  };
  if (get("format") != "gbt-dataset") throw Error(ErrorCode::kIoError, "not a gbt dataset: " + root.string());
  if (std::stoi(get("version")) != kDatasetVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "dataset version " + get("version"));
  }
  Dataset ds;
  DatasetConfig& c = ds.config;
  try {
    c.num_scenes = std::stoi(get("num_scenes"));
    c.views_per_scene = std::stoi(get("views_per_scene"));
    c.image_size = std::stoi(get("image_size"));
    c.seed = std::stoull(get("seed"));
    c.radius = std::stod(get("radius"));
    c.fov_deg = std::stod(get("fov_deg"));
    c.elevation_jitter_deg = std::stod(get("elevation_jitter_deg"));
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kIoError, "malformed manifest in " + root.string());
  }
  c.style = parse_category_style(get("style"));
  c.layout = parse_layout(get("layout"));

  for (int k = 0; k < c.num_scenes; ++k) {
    SceneViews sv{k, {}};
    std::istringstream csv(read_text(scene_dir(root, k) / "cameras.csv"));
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      std::vector<double> f;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) f.push_back(std::strtod(cell.c_str(), nullptr));
      if (f.size() != 17) throw Error(ErrorCode::kIoError, "bad cameras.csv row in scene " + std::to_string(k));
      PosedImage v;
      v.frame_index = static_cast<int>(f[0]);
      for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) v.pose.rotation(r, col) = f[static_cast<std::size_t>(1 + 3 * r + col)];
      }
      v.pose.translation = geom::Vec3(f[10], f[11], f[12]);
      v.intr = {f[13], f[14], f[15], f[16], c.image_size, c.image_size};
      v.image = read_png(view_path(root, k, v.frame_index));
      if (v.image.dim(1) != static_cast<std::size_t>(c.image_size) ||
          v.image.dim(2) != static_cast<std::size_t>(c.image_size)) {
        throw Error(ErrorCode::kIoError, "image size mismatch in scene " + std::to_string(k));
      }
      sv.views.push_back(std::move(v));
    }
    if (static_cast<int>(sv.views.size()) != c.views_per_scene) {
      throw Error(ErrorCode::kIoError, "scene " + std::to_string(k) + " has the wrong number of views");
    }
    ds.scenes.push_back(std::move(sv));
  }
  return ds;
}

}  // namespace gbt::synth
