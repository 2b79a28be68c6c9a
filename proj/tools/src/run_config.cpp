// SPDX-License-Identifier: Apache-2.0
#include "gbt_cli/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "gbt/error.hpp"

namespace gbt::cli {

namespace {

[[noreturn]] void bad(std::string_view key, const std::string& msg) {
  throw Error(ErrorCode::kInvalidArgument, std::string(key) + ": " + msg);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in{std::string(s)};
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long to_int(std::string_view key, std::string_view v, long long lo, long long hi) {
  long long x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected an integer, got '" + std::string(v) + "'");
  if (x < lo || x > hi) bad(key, std::to_string(x) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected an unsigned integer");
  return x;
}

double to_double(std::string_view key, std::string_view v, double lo, double hi) {
  const std::string s(v);
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) bad(key, "expected a number, got '" + s + "'");
  if (!(x >= lo && x <= hi)) bad(key, s + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

struct Entry {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

constexpr long long kBig = 1LL << 30;

Entry int_entry(std::string_view name, std::string_view doc, int RunConfig::*outer, long long lo, long long hi) {
  return {{name, doc},
          [outer](const RunConfig& c) { return std::to_string(c.*outer); },
          [outer, name, lo, hi](RunConfig& c, std::string_view v) { c.*outer = static_cast<int>(to_int(name, v, lo, hi)); }};
}

template <class Sub>
Entry sub_int(std::string_view name, std::string_view doc, Sub RunConfig::*outer, int Sub::*inner, long long lo,
              long long hi) {
  return {{name, doc},
          [outer, inner](const RunConfig& c) { return std::to_string(c.*outer.*inner); },
          [outer, inner, name, lo, hi](RunConfig& c, std::string_view v) {
            c.*outer.*inner = static_cast<int>(to_int(name, v, lo, hi));
          }};
}

template <class Sub>
Entry sub_double(std::string_view name, std::string_view doc, Sub RunConfig::*outer, double Sub::*inner, double lo,
                 double hi) {
  return {{name, doc},
          [outer, inner](const RunConfig& c) { return fmt(c.*outer.*inner); },
          [outer, inner, name, lo, hi](RunConfig& c, std::string_view v) { c.*outer.*inner = to_double(name, v, lo, hi); }};
}

std::vector<int> parse_ints(std::string_view key, std::string_view v, long long lo, long long hi) {
  std::vector<int> out;
  for (const std::string& s : split_list(v)) out.push_back(static_cast<int>(to_int(key, s, lo, hi)));
  return out;
}

const std::vector<Entry>& entries() {
  using R = RunConfig;
  using M = model::ModelConfig;
  using T = train::TrainConfig;
  using D = synth::DatasetConfig;
  static const std::vector<Entry> table = {
      sub_int<M>("image_size", "input and render resolution (pixels)", &R::model, &M::image_size, 4, 1024),
      sub_int<M>("grid", "patch grid G per view", &R::model, &M::grid, 1, 64),
      sub_int<M>("latent_dim", "token width", &R::model, &M::latent_dim, 2, 4096),
      sub_int<M>("num_heads", "attention heads", &R::model, &M::num_heads, 1, 64),
      sub_int<M>("encoder_layers", "encoder blocks", &R::model, &M::encoder_layers, 0, 64),
      sub_int<M>("decoder_layers", "decoder blocks", &R::model, &M::decoder_layers, 1, 64),
      {{"harmonic_frequencies", "harmonic embedding frequencies per coordinate"},
       [](const R& c) { return std::to_string(c.model.harmonic.num_frequencies); },
       [](R& c, std::string_view v) {
         c.model.harmonic.num_frequencies = static_cast<int>(to_int("harmonic_frequencies", v, 1, 32));
       }},
      {{"harmonic_min_exponent", "lowest frequency is 2^min_exponent * pi"},
       [](const R& c) { return std::to_string(c.model.harmonic.min_exponent); },
       [](R& c, std::string_view v) {
         c.model.harmonic.min_exponent = static_cast<int>(to_int("harmonic_min_exponent", v, -32, 32));
       }},
      {{"variant", "gbt | gbt-fb | gbt-nb | srt*"},
       [](const R& c) { return std::string(model::to_string(c.model.variant)); },
       [](R& c, std::string_view v) { c.model.variant = model::parse_variant(v); }},
      {{"mlp_hidden", "color MLP hidden widths, comma separated"},
       [](const R& c) { return join<int>(c.model.mlp_hidden, [](const int& x) { return std::to_string(x); }); },
       [](R& c, std::string_view v) { c.model.mlp_hidden = parse_ints("mlp_hidden", v, 1, 65536); }},
      {{"stem_channels", "output channels of the three stem convolutions"},
       [](const R& c) { return join<int>(c.model.stem_channels, [](const int& x) { return std::to_string(x); }); },
       [](R& c, std::string_view v) { c.model.stem_channels = parse_ints("stem_channels", v, 1, 65536); }},
      sub_int<M>("ff_multiplier", "feed-forward expansion", &R::model, &M::ff_multiplier, 1, 16),
      sub_double<M>("gamma_init", "initial geometry bias weight", &R::model, &M::gamma_init, -100.0, 100.0),
      {{"model_seed", "parameter initialization seed"},
       [](const R& c) { return std::to_string(c.model_seed); },
       [](R& c, std::string_view v) { c.model_seed = to_u64("model_seed", v); }},

      sub_int<T>("context_views", "context views per training draw", &R::train, &T::context_views, 1, 64),
      sub_int<T>("rays_per_step", "query rays per scene per step", &R::train, &T::rays_per_step, 1, kBig),
      sub_int<T>("batch_scenes", "scenes per optimizer step", &R::train, &T::batch_scenes, 1, 1024),
      sub_double<T>("lr", "peak Adam learning rate", &R::train, &T::lr, 1e-12, 1.0),
      sub_int<T>("warmup_steps", "linear warmup steps", &R::train, &T::warmup_steps, 0, kBig),
      sub_double<T>("final_lr_ratio", "cosine decay floor as a fraction of lr", &R::train, &T::final_lr_ratio, 1e-6,
                    1.0),
      sub_int<T>("max_steps", "optimizer steps", &R::train, &T::max_steps, 0, kBig),
      {{"train_seed", "data order and ray sampling seed"},
       [](const R& c) { return std::to_string(c.train.seed); },
       [](R& c, std::string_view v) { c.train.seed = to_u64("train_seed", v); }},
      sub_int<T>("eval_every", "loss log cadence in steps (0 = off)", &R::train, &T::eval_every, 0, kBig),
      {{"color_augment", "random channel permutation and gain per training draw (0 or 1)"},
       [](const R& c) { return std::string(c.train.color_augment ? "1" : "0"); },
       [](R& c, std::string_view v) { c.train.color_augment = to_int("color_augment", v, 0, 1) != 0; }},

      sub_int<D>("num_scenes", "training scenes", &R::data, &D::num_scenes, 1, 1 << 20),
      sub_int<D>("views_per_scene", "views per training scene", &R::data, &D::views_per_scene, 2, 4096),
      {{"data_seed", "scene generation seed"},
       [](const R& c) { return std::to_string(c.data.seed); },
       [](R& c, std::string_view v) { c.data.seed = to_u64("data_seed", v); }},
      sub_double<D>("orbit_radius", "camera distance from the origin", &R::data, &D::radius, 1.0 + 1e-9, 100.0),
      sub_double<D>("fov_deg", "horizontal field of view", &R::data, &D::fov_deg, 1.0, 170.0),
      sub_double<D>("elevation_jitter_deg", "camera elevation range (+-)", &R::data, &D::elevation_jitter_deg, 0.0,
                    89.0),
      {{"style", "mixed | spheres | boxes"},
       [](const R& c) { return std::string(synth::to_string(c.data.style)); },
       [](R& c, std::string_view v) { c.data.style = synth::parse_category_style(v); }},
      int_entry("eval_scenes", "held-out evaluation scenes", &R::eval_scenes, 1, 1 << 20),
      int_entry("eval_views", "views per evaluation scene", &R::eval_views, 2, 4096),
      int_entry("orbit_scenes", "scenes in the orbit (viewpoint sweep) split", &R::orbit_scenes, 1, 1 << 20),
      int_entry("orbit_views", "views per orbit scene", &R::orbit_views, 2, 4096),

      int_entry("eval_context_views", "context views at evaluation", &R::eval_context_views, 1, 64),
      int_entry("eval_queries", "query views per evaluation scene", &R::eval_queries, 1, 4096),
      {{"eval_seed", "evaluation split and noise seed"},
       [](const R& c) { return std::to_string(c.eval_seed); },
       [](R& c, std::string_view v) { c.eval_seed = to_u64("eval_seed", v); }},
      {{"noise_sigmas", "context pose noise levels"},
       [](const R& c) { return join<double>(c.noise_sigmas, [](const double& x) { return fmt(x); }); },
       [](R& c, std::string_view v) {
         c.noise_sigmas.clear();
         for (const std::string& s : split_list(v)) c.noise_sigmas.push_back(to_double("noise_sigmas", s, 0.0, 10.0));
       }},
      {{"ablate_variants", "variants trained by the ablation"},
       [](const R& c) {
         return join<model::Variant>(c.ablate_variants,
                                     [](const model::Variant& x) { return std::string(model::to_string(x)); });
       },
       [](R& c, std::string_view v) {
         c.ablate_variants.clear();
         for (const std::string& s : split_list(v)) c.ablate_variants.push_back(model::parse_variant(s));
       }},
      {{"viewsweep_context", "orbit context indices for the viewpoint sweep"},
       [](const R& c) { return join<int>(c.viewsweep_context, [](const int& x) { return std::to_string(x); }); },
       [](R& c, std::string_view v) { c.viewsweep_context = parse_ints("viewsweep_context", v, 0, 4095); }},
  };
  return table;
}

}  // namespace

synth::DatasetConfig RunConfig::eval_data() const {
  synth::DatasetConfig d = data;
  d.num_scenes = eval_scenes;
  d.views_per_scene = eval_views;
  d.seed = data.seed + 1000003;
  return d;
}

synth::DatasetConfig RunConfig::orbit_data() const {
  synth::DatasetConfig d = data;
  d.num_scenes = orbit_scenes;
  d.views_per_scene = orbit_views;
  d.seed = data.seed + 2000003;
  d.layout = synth::ViewLayout::kOrbit;
  return d;
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model.image_size);
  data.validate();
  if (data.image_size != model.image_size) throw Error(ErrorCode::kInvalidArgument, "data and model image_size differ");
  if (train.context_views + 1 > data.views_per_scene) {
    throw Error(ErrorCode::kInvalidArgument, "views_per_scene must exceed context_views");
  }
  if (eval_context_views >= eval_views) throw Error(ErrorCode::kInvalidArgument, "eval_views must exceed eval_context_views");
  if (noise_sigmas.empty()) throw Error(ErrorCode::kInvalidArgument, "noise_sigmas is empty");
  if (ablate_variants.size() < 2) throw Error(ErrorCode::kInvalidArgument, "ablate_variants needs at least two");
  if (viewsweep_context.empty()) throw Error(ErrorCode::kInvalidArgument, "viewsweep_context is empty");
  for (int c : viewsweep_context) {
    if (c >= orbit_views) throw Error(ErrorCode::kInvalidArgument, "viewsweep_context index >= orbit_views");
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const Entry& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto& table = entries();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return e.key.name == key; });
    if (it == table.end()) {
      throw Error(ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    it->set(cfg, value);
  }
  cfg.data.image_size = cfg.model.image_size;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, path + ": cannot open config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize(const RunConfig& config) {
  std::string out;
  for (const Entry& e : entries()) {
    out += "# " + std::string(e.key.doc) + "\n";
    out += std::string(e.key.name) + " = " + e.get(config) + "\n";
  }
  return out;
}

}  // namespace gbt::cli
