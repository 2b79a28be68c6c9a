// SPDX-License-Identifier: Apache-2.0
#include "gbt_cli/commands.hpp"

#include <CLI11.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "gbt/error.hpp"
#include "gbt/model/render.hpp"
#include "gbt/synth/image_io.hpp"
#include "gbt/train/checkpoint.hpp"
#include "gbt/train/evaluate.hpp"
#include "gbt/train/grad_suite.hpp"
#include "gbt/train/metrics.hpp"
#include "gbt_cli/run_config.hpp"

namespace gbt::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string variant;
  std::string context = "0,8,16";
  std::string pixel = "32,32";
  std::string size = "tiny";
  int scene = 0;
  int query = -1;
  int orbit = 0;
  int views = 3;
  int queries = 8;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void require_path(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorCode::kInvalidArgument, std::string("missing --") + what);
  if (!fs::exists(path)) throw Error(ErrorCode::kIoError, path + ": no such file or directory");
}

/// The generate output holds train/, eval/ and orbit/; accept either the
/// split itself or its parent.
fs::path split_root(const std::string& data, const char* split) {
  const fs::path sub = fs::path(data) / split;
  if (fs::exists(sub / "manifest.txt")) return sub;
  return data;
}

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  require_path(path, "config");
  return load_run_config(path);
}

std::vector<int> parse_index_list(const std::string& s, const char* flag) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kInvalidArgument, std::string("--") + flag + ": bad index '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, std::string("--") + flag + " is empty");
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error(ErrorCode::kIoError, path.string() + ": write failed");
}

void check_finite(const nn::Tensor<float>& t, const std::string& what) {
  for (float v : t.values()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNumericFailure, "NaN or Inf in " + what);
  }
}

std::unique_ptr<model::GbtModel<float>> load_model(const std::string& path) {
  require_path(path, "checkpoint");
  const train::Checkpoint ckpt = train::load_checkpoint(path);
  auto m = std::make_unique<model::GbtModel<float>>(ckpt.config, 0);
  train::apply_checkpoint(ckpt, *m);
  return m;
}

std::unique_ptr<model::GbtModel<float>> train_model(const RunConfig& cfg, model::Variant variant,
                                                    const synth::Dataset& data, std::ostream* log) {
  model::ModelConfig mc = cfg.model;
  mc.variant = variant;
  auto m = std::make_unique<model::GbtModel<float>>(mc, cfg.model_seed);
  train::Trainer trainer(*m, data, cfg.train);
  trainer.run(log);
  return m;
}

/// Checkpoint if given, otherwise a GBT model trained from the config.
std::unique_ptr<model::GbtModel<float>> model_for_experiment(const Options& o, const RunConfig& cfg,
                                                             std::ostream& out) {
  if (!o.checkpoint.empty()) return load_model(o.checkpoint);
  out << "no --checkpoint; training " << model::to_string(cfg.model.variant) << " for " << cfg.train.max_steps
      << " steps\n";
  const synth::Dataset train_data = synth::load_dataset(split_root(o.data, "train"));
  return train_model(cfg, cfg.model.variant, train_data, nullptr);
}

geom::Vec3 colormap(double t) {
  // Monotone dark-purple to yellow ramp.
  static const std::array<geom::Vec3, 5> stops = {
      geom::Vec3(0.267, 0.005, 0.329), geom::Vec3(0.229, 0.322, 0.546), geom::Vec3(0.128, 0.567, 0.551),
      geom::Vec3(0.369, 0.789, 0.383), geom::Vec3(0.993, 0.906, 0.144)};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  return stops[static_cast<std::size_t>(i)] + (t - i) * (stops[static_cast<std::size_t>(i) + 1] - stops[static_cast<std::size_t>(i)]);
}

// ---------------------------------------------------------------- commands

int cmd_config(const Options& o, std::ostream& out) {
  out << serialize(config_or_default(o.config));
  return kExitOk;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const RunConfig cfg = config_or_default(o.config);
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out");
  const fs::path root(o.out);
  synth::make_dataset(cfg.data, root / "train");
  synth::make_dataset(cfg.eval_data(), root / "eval");
  synth::make_dataset(cfg.orbit_data(), root / "orbit");
  out << "wrote " << cfg.data.num_scenes << " train, " << cfg.eval_scenes << " eval and " << cfg.orbit_scenes
      << " orbit scenes to " << root.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig cfg = config_or_default(o.config);
  require_path(o.data, "data");
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out");
  if (!o.variant.empty()) cfg.model.variant = model::parse_variant(o.variant);
  if (o.seed_set) cfg.train.seed = o.seed;
  const synth::Dataset data = synth::load_dataset(split_root(o.data, "train"));
  if (data.config.image_size != cfg.model.image_size) {
    throw Error(ErrorCode::kInvalidArgument, "dataset image_size differs from the config");
  }
  std::ostringstream log;
  model::GbtModel<float> m(cfg.model, cfg.model_seed);
  train::Trainer trainer(m, data, cfg.train);
  trainer.run(&log);
  const fs::path ckpt_path(o.out);
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  train::save_checkpoint(ckpt_path, train::make_checkpoint(m, static_cast<std::uint64_t>(trainer.steps_done()),
                                                           &trainer.optimizer()));
  write_file(fs::path(o.out + ".loss.csv"), log.str());
  out << "trained " << model::to_string(cfg.model.variant) << " for " << trainer.steps_done()
      << " steps, final loss " << (trainer.losses().empty() ? 0.0 : trainer.losses().back()) << "\n";
  return kExitOk;
}

int cmd_render(const Options& o, std::ostream& out) {
  const auto m = load_model(o.checkpoint);
  require_path(o.data, "data");
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out");
  if ((o.query >= 0) == (o.orbit > 0)) throw Error(ErrorCode::kInvalidArgument, "give exactly one of --query, --orbit");
  const synth::Dataset data = synth::load_dataset(split_root(o.data, "eval"));
  if (o.scene < 0 || o.scene >= static_cast<int>(data.scenes.size())) {
    throw Error(ErrorCode::kIndexOutOfRange, "--scene " + std::to_string(o.scene));
  }
  const synth::SceneViews& scene = data.scenes[static_cast<std::size_t>(o.scene)];
  const std::vector<int> context = parse_index_list(o.context, "context");
  for (int c : context) {
    if (c < 0 || c >= static_cast<int>(scene.views.size())) {
      throw Error(ErrorCode::kIndexOutOfRange, "context view " + std::to_string(c));
    }
  }
  const fs::path dir(o.out);
  fs::create_directories(dir);
  if (o.query >= 0) {
    if (o.query >= static_cast<int>(scene.views.size())) {
      throw Error(ErrorCode::kIndexOutOfRange, "--query " + std::to_string(o.query));
    }
    const nn::Tensor<float> img = train::render_from_context(*m, scene, context, o.query);
    check_finite(img, "render");
    synth::write_png(dir / ("query_" + std::to_string(o.query) + ".png"), img);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", train::psnr(img, scene.views[static_cast<std::size_t>(o.query)].image));
    out << "query " << o.query << " psnr " << buf << "\n";
    return kExitOk;
  }
  std::vector<geom::CameraPose> ctx;
  for (int c : context) ctx.push_back(scene.views[static_cast<std::size_t>(c)].pose);
  const std::vector<geom::CameraPose> orbit = synth::orbit_cameras(o.orbit, data.config.radius, 0.0);
  const std::vector<geom::CameraPose> poses = train::canonical_poses(ctx, orbit);
  const geom::Intrinsics& intr = scene.views[0].intr;
  const model::EncodedScene<float> enc =
      model::encode_scene(*m, train::stack_images(scene, context), std::span(poses.data(), ctx.size()), intr);
  for (int i = 0; i < o.orbit; ++i) {
    const nn::Tensor<float> img = model::render_view(*m, enc, poses[ctx.size() + static_cast<std::size_t>(i)], intr);
    check_finite(img, "render");
    synth::write_png(dir / ("orbit_" + std::to_string(i) + ".png"), img);
  }
  out << "wrote " << o.orbit << " orbit views to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const auto m = load_model(o.checkpoint);
  require_path(o.data, "data");
  const synth::Dataset data = synth::load_dataset(split_root(o.data, "eval"));
  train::EvalOptions eo;
  eo.context_views = o.views;
  eo.num_queries = o.queries;
  eo.seed = o.seed;
  const train::EvalTable table = train::evaluate(*m, data, eo);
  for (const auto& r : table.rows) {
    if (!std::isfinite(r.psnr)) throw Error(ErrorCode::kNumericFailure, "non-finite PSNR");
  }
  std::ostringstream csv;
  table.write_csv(csv);
  if (o.out.empty()) {
    out << csv.str();
  } else {
    write_file(o.out, csv.str());
  }
  out << "mean psnr " << table.mean() << " over " << table.scene_means().size() << " scenes\n";
  return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const RunConfig cfg = config_or_default(o.config);
  require_path(o.data, "data");
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out");
  const synth::Dataset train_data = synth::load_dataset(split_root(o.data, "train"));
  const synth::Dataset eval_data = synth::load_dataset(split_root(o.data, "eval"));
  train::EvalOptions eo;
  eo.context_views = cfg.eval_context_views;
  eo.num_queries = cfg.eval_queries;
  eo.seed = cfg.eval_seed;
  const train::AblationResult res =
      train::run_ablation(train_data, eval_data, cfg.ablate_variants, cfg.model, cfg.train, eo, cfg.model_seed);
  std::ostringstream csv;
  res.write_csv(csv);
  write_file(o.out, csv.str());
  for (model::Variant v : cfg.ablate_variants) out << model::to_string(v) << " mean psnr " << res.mean(v) << "\n";
  return kExitOk;
}

int cmd_noise(const Options& o, std::ostream& out) {
  const RunConfig cfg = config_or_default(o.config);
  require_path(o.data, "data");
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out");
  const synth::Dataset eval_data = synth::load_dataset(split_root(o.data, "eval"));
  const auto m = model_for_experiment(o, cfg, out);
  train::EvalOptions eo;
  eo.context_views = cfg.eval_context_views;
  eo.num_queries = cfg.eval_queries;
  eo.seed = cfg.eval_seed;
  const std::vector<train::NoiseRow> rows = train::run_noise_sweep(*m, eval_data, cfg.noise_sigmas, eo);
  std::ostringstream csv;
  train::write_noise_csv(csv, rows);
  write_file(o.out, csv.str());
  out << csv.str();
  return kExitOk;
}

int cmd_viewsweep(const Options& o, std::ostream& out) {
  const RunConfig cfg = config_or_default(o.config);
  require_path(o.data, "data");
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out");
  const synth::Dataset orbit = synth::load_dataset(split_root(o.data, "orbit"));
  const auto m = model_for_experiment(o, cfg, out);
  std::ostringstream csv;
  csv << "scene,";
  bool header = true;
  for (const synth::SceneViews& s : orbit.scenes) {
    const std::vector<train::SweepPoint> pts = train::run_viewpoint_sweep(*m, s, cfg.viewsweep_context);
    std::ostringstream one;
    train::write_sweep_csv(one, pts);
    std::string line;
    std::istringstream in(one.str());
    std::getline(in, line);
    if (header) csv << line << "\n";
    header = false;
    while (std::getline(in, line)) csv << s.index << ',' << line << "\n";
  }
  write_file(o.out, csv.str());
  out << "wrote viewpoint sweep for " << orbit.scenes.size() << " scenes to " << o.out << "\n";
  return kExitOk;
}

int cmd_attn(const Options& o, std::ostream& out) {
  const auto m = load_model(o.checkpoint);
  require_path(o.data, "data");
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "missing --out");
  const synth::Dataset data = synth::load_dataset(split_root(o.data, "eval"));
  if (o.scene < 0 || o.scene >= static_cast<int>(data.scenes.size())) {
    throw Error(ErrorCode::kIndexOutOfRange, "--scene " + std::to_string(o.scene));
  }
  const synth::SceneViews& scene = data.scenes[static_cast<std::size_t>(o.scene)];
  const std::vector<int> context = parse_index_list(o.context, "context");
  const std::vector<int> pixel = parse_index_list(o.pixel, "pixel");
  if (pixel.size() != 2) throw Error(ErrorCode::kInvalidArgument, "--pixel takes x,y");
  const int query = o.query >= 0 ? o.query : (context.back() + 1) % static_cast<int>(scene.views.size());
  for (int c : context) {
    if (c < 0 || c >= static_cast<int>(scene.views.size())) throw Error(ErrorCode::kIndexOutOfRange, "context view");
  }
  if (query >= static_cast<int>(scene.views.size())) throw Error(ErrorCode::kIndexOutOfRange, "--query");

  std::vector<geom::CameraPose> ctx;
  for (int c : context) ctx.push_back(scene.views[static_cast<std::size_t>(c)].pose);
  const synth::PosedImage& target = scene.views[static_cast<std::size_t>(query)];
  const std::vector<geom::CameraPose> poses = train::canonical_poses(ctx, std::span(&target.pose, 1));
  const model::EncodedScene<float> enc = model::encode_scene(
      *m, train::stack_images(scene, context), std::span(poses.data(), ctx.size()), target.intr);
  const std::vector<nn::Tensor<float>> maps =
      model::attention_maps(*m, enc, poses.back(), target.intr, pixel[0], pixel[1]);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::size_t g = static_cast<std::size_t>(m->config().grid);
  const std::size_t s = static_cast<std::size_t>(m->config().image_size);
  const std::size_t cell = s / g;
  const std::size_t v_count = context.size();
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const nn::Tensor<float>& w = maps[l];
    check_finite(w, "attention");
    float peak = 0.0f;
    for (float x : w.values()) peak = std::max(peak, x);
    // Strip of V panels: heatmap (nearest-neighbor upscaled) over the view at 40% alpha.
    nn::Tensor<float> heat({3, s, s * v_count});
    nn::Tensor<float> overlay({3, s, s * v_count});
    std::ostringstream csv;
    csv << "view,gx,gy,weight\n";
    for (std::size_t v = 0; v < v_count; ++v) {
      const nn::Tensor<float>& img = scene.views[static_cast<std::size_t>(context[v])].image;
      for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
          csv << v << ',' << gx << ',' << gy << ',' << w[(v * g + gy) * g + gx] << '\n';
        }
      }
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const float a = w[(v * g + y / cell) * g + x / cell];
          const geom::Vec3 c = colormap(peak > 0.0f ? a / peak : 0.0);
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const std::size_t idx = (ch * s + y) * s * v_count + v * s + x;
            heat[idx] = static_cast<float>(c[static_cast<Eigen::Index>(ch)]);
            overlay[idx] = 0.6f * img[(ch * s + y) * s + x] + 0.4f * heat[idx];
          }
        }
      }
    }
    const std::string stem = "attn_layer" + std::to_string(l);
    synth::write_png(dir / (stem + ".png"), overlay);
    synth::write_png(dir / (stem + "_heat.png"), heat);
    write_file(dir / (stem + ".csv"), csv.str());
  }
  out << "wrote " << maps.size() << " attention maps to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  if (o.size != "tiny") throw Error(ErrorCode::kInvalidArgument, "--size supports only 'tiny'");
  constexpr double kTolerance = 1e-4;
  double worst = 0.0;
  for (model::Variant v : {model::Variant::kGbt, model::Variant::kSrtStar}) {
    model::ModelConfig cfg = model::ModelConfig::tiny();
    cfg.variant = v;
    const train::ModelGradCheck r = train::model_grad_check(cfg, o.seed);
    if (!std::isfinite(r.result.max_rel_error)) throw Error(ErrorCode::kNumericFailure, "non-finite gradient");
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-6s %zu coordinates, max rel err %.3e (%s)\n",
                  std::string(model::to_string(v)).c_str(), r.result.coordinates, r.result.max_rel_error,
                  r.worst_param.c_str());
    out << buf;
    worst = std::max(worst, r.result.max_rel_error);
  }
  const bool ok = worst < kTolerance;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s: max rel err %.3e %s 1e-4\n", ok ? "PASS" : "FAIL", worst, ok ? "<" : ">=");
  out << buf;
  return ok ? kExitOk : kExitFailure;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kIndexOutOfRange:
      return kExitUsage;
    case ErrorCode::kIoError:
    case ErrorCode::kBadMagic:
    case ErrorCode::kUnsupportedVersion:
    case ErrorCode::kShapeMismatchOnLoad:
      return kExitIo;
    case ErrorCode::kNumericFailure:
      return kExitNumeric;
    default:
      return kExitFailure;
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geometry-biased transformer for novel view synthesis", "gbt"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "run config (key = value)"); };
  auto add_data = [&](CLI::App* c) { c->add_option("--data", o.data, "dataset root")->required(); };
  auto add_out = [&](CLI::App* c, const char* what) { c->add_option("--out", o.out, what)->required(); };
  auto add_ckpt = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    if (required) opt->required();
  };

  auto* cf = app.add_subcommand("config", "print the effective run config with every key documented");
  add_config(cf);

  auto* gen = app.add_subcommand("generate", "render the train, eval and orbit datasets");
  add_config(gen);
  add_out(gen, "output directory");

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  add_config(tr);
  add_data(tr);
  add_out(tr, "checkpoint path (loss log goes to <out>.loss.csv)");
  tr->add_option("--variant", o.variant, "gbt | gbt-fb | gbt-nb | srt*");
  tr->add_option("--seed", o.seed, "overrides train_seed")->each([&](const std::string&) { o.seed_set = true; });

  auto* rd = app.add_subcommand("render", "render query or orbit views of an eval scene");
  add_ckpt(rd, true);
  add_data(rd);
  add_out(rd, "output directory");
  rd->add_option("--scene", o.scene, "scene index");
  rd->add_option("--context", o.context, "context view indices, comma separated");
  rd->add_option("--query", o.query, "query view index");
  rd->add_option("--orbit", o.orbit, "render n orbit views instead");

  auto* ev = app.add_subcommand("evaluate", "per-query PSNR on the eval split");
  add_ckpt(ev, true);
  add_data(ev);
  ev->add_option("--out", o.out, "metrics CSV (stdout if omitted)");
  ev->add_option("--V", o.views, "context views")->check(CLI::PositiveNumber);
  ev->add_option("--queries", o.queries, "query views per scene")->check(CLI::PositiveNumber);
  ev->add_option("--seed", o.seed, "split seed");

  auto* ab = app.add_subcommand("ablate", "train and compare variants");
  add_config(ab);
  add_data(ab);
  add_out(ab, "ablation CSV");

  auto* ns = app.add_subcommand("noise", "PSNR under context pose noise");
  add_config(ns);
  add_data(ns);
  add_out(ns, "noise CSV");
  add_ckpt(ns, false);

  auto* vs = app.add_subcommand("viewsweep", "PSNR along orbit views");
  add_config(vs);
  add_data(vs);
  add_out(vs, "sweep CSV");
  add_ckpt(vs, false);

  auto* at = app.add_subcommand("attn", "decoder attention heatmaps for one pixel");
  add_ckpt(at, true);
  add_data(at);
  add_out(at, "output directory");
  at->add_option("--scene", o.scene, "scene index");
  at->add_option("--context", o.context, "context view indices");
  at->add_option("--query", o.query, "query view index");
  at->add_option("--pixel", o.pixel, "pixel x,y in the query view");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  gc->add_option("--size", o.size, "model size")->check(CLI::IsMember({"tiny"}));
  gc->add_option("--seed", o.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cf->parsed()) return cmd_config(o, out);
    if (gen->parsed()) return cmd_generate(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (rd->parsed()) return cmd_render(o, out);
    if (ev->parsed()) return cmd_evaluate(o, out);
    if (ab->parsed()) return cmd_ablate(o, out);
    if (ns->parsed()) return cmd_noise(o, out);
    if (vs->parsed()) return cmd_viewsweep(o, out);
    if (at->parsed()) return cmd_attn(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
  } catch (const Error& e) {
    err << "gbt: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "gbt: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "gbt: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace gbt::cli
