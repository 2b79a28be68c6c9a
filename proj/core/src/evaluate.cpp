// SPDX-License-Identifier: Apache-2.0
#include "gbt/train/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <thread>

#include "gbt/error.hpp"
#include "gbt/model/render.hpp"
#include "gbt/train/metrics.hpp"

namespace gbt::train {

namespace {

std::uint64_t scene_stream(std::uint64_t seed, int scene, std::uint64_t salt) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(scene) + 1)) ^ salt;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kSplitSalt = 0x5b1175;
constexpr std::uint64_t kNoiseSalt = 0x9015e;

/// Runs fn(i) for i in [0, n); results must be written to disjoint slots.
template <class Fn>
void parallel_for(int n, int threads, Fn fn) {
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Encodes the context and renders each query; PSNR per query.
std::vector<double> score_queries(const model::GbtModel<float>& model, const synth::SceneViews& scene,
                                  const std::vector<int>& context, const std::vector<int>& queries,
                                  const std::vector<geom::CameraPose>& context_poses, int threads) {
  std::vector<geom::CameraPose> query_poses;
  for (int q : queries) query_poses.push_back(scene.views.at(static_cast<std::size_t>(q)).pose);
  const std::vector<geom::CameraPose> poses = canonical_poses(context_poses, query_poses);
  const geom::Intrinsics& intr = scene.views.at(static_cast<std::size_t>(context[0])).intr;
  const model::EncodedScene<float> enc = model::encode_scene(
      model, stack_images(scene, context), std::span(poses.data(), context.size()), intr);
  std::vector<double> out(queries.size());
  parallel_for(static_cast<int>(queries.size()), threads, [&](int i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const synth::PosedImage& target = scene.views.at(static_cast<std::size_t>(queries[k]));
    const nn::Tensor<float> img = model::render_view(model, enc, poses[context.size() + k], target.intr);
    out[k] = psnr(img, target.image);
  });
  return out;
}

}  // namespace

int default_threads() {
  if (const char* env = std::getenv("GBT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<EvalSplit> eval_splits(const synth::Dataset& data, int context_views, int num_queries,
                                   std::uint64_t seed) {
  if (context_views < 1 || num_queries < 1) {
    throw Error(ErrorCode::kInvalidArgument, "need >= 1 context and query view");
  }
  std::vector<EvalSplit> splits;
  for (const synth::SceneViews& s : data.scenes) {
    const int n = static_cast<int>(s.views.size());
    if (n < context_views + 1) {
      throw Error(ErrorCode::kInsufficientViews, "scene " + std::to_string(s.index) + " has too few views");
    }
    std::mt19937_64 rng(scene_stream(seed, s.index, kSplitSalt));
    const int take = std::min(n, context_views + num_queries);
    std::vector<int> idx = sample_without_replacement(n, take, rng);
    EvalSplit split;
    split.scene = s.index;
    split.context.assign(idx.begin(), idx.begin() + context_views);
    split.queries.assign(idx.begin() + context_views, idx.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

std::vector<std::pair<int, double>> EvalTable::scene_means() const {
  std::vector<std::pair<int, double>> out;
  std::vector<int> counts;
  for (const EvalRow& r : rows) {
    if (out.empty() || out.back().first != r.scene) {
      out.emplace_back(r.scene, 0.0);
      counts.push_back(0);
    }
    out.back().second += r.psnr;
    ++counts.back();
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].second /= counts[i];
  return out;
}

double EvalTable::mean() const {
  const auto means = scene_means();
  if (means.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& [scene, m] : means) acc += m;
  return acc / static_cast<double>(means.size());
}

void EvalTable::write_csv(std::ostream& out) const {
  out << "scene,query_index,psnr\n";
  for (const EvalRow& r : rows) out << r.scene << ',' << r.query_index << ',' << fmt(r.psnr) << '\n';
}

EvalTable evaluate(const model::GbtModel<float>& model, const synth::Dataset& data, const EvalOptions& opts) {
  const int threads = opts.threads > 0 ? opts.threads : default_threads();
  EvalTable table;
  for (const EvalSplit& split : eval_splits(data, opts.context_views, opts.num_queries, opts.seed)) {
    const synth::SceneViews& scene = data.scenes.at(static_cast<std::size_t>(split.scene));
    std::mt19937_64 rng(scene_stream(opts.seed, split.scene, kNoiseSalt));
    std::vector<geom::CameraPose> context;
    for (int v : split.context) {
      context.push_back(geom::perturb_pose(scene.views.at(static_cast<std::size_t>(v)).pose, opts.context_sigma, rng));
    }
    const std::vector<double> scores = score_queries(model, scene, split.context, split.queries, context, threads);
    for (std::size_t i = 0; i < scores.size(); ++i) table.rows.push_back({split.scene, split.queries[i], scores[i]});
  }
  return table;
}

nn::Tensor<float> render_from_context(const model::GbtModel<float>& model, const synth::SceneViews& scene,
                                      const std::vector<int>& context, int query, double context_sigma,
                                      std::mt19937_64* rng) {
  if (context.empty()) throw Error(ErrorCode::kInsufficientViews, "need at least one context view");
  std::vector<geom::CameraPose> ctx;
  for (int v : context) {
    const geom::CameraPose& p = scene.views.at(static_cast<std::size_t>(v)).pose;
    ctx.push_back(rng ? geom::perturb_pose(p, context_sigma, *rng) : p);
  }
  const synth::PosedImage& target = scene.views.at(static_cast<std::size_t>(query));
  const std::vector<geom::CameraPose> poses = canonical_poses(ctx, std::span(&target.pose, 1));
  return model::render_view(model, stack_images(scene, context), std::span(poses.data(), ctx.size()), target.intr,
                            poses.back());
}

double AblationResult::mean(model::Variant v) const {
  double acc = 0.0;
  int n = 0;
  for (const AblationRow& r : rows) {
    if (r.variant == v) {
      acc += r.psnr_mean;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "variant not in ablation");
  return acc / n;
}

void AblationResult::write_csv(std::ostream& out) const {
  out << "variant,scene,psnr_mean\n";
  for (const AblationRow& r : rows) out << model::to_string(r.variant) << ',' << r.scene << ',' << fmt(r.psnr_mean) << '\n';
}

AblationResult run_ablation(const synth::Dataset& train_data, const synth::Dataset& eval_data,
                            const std::vector<model::Variant>& variants, const model::ModelConfig& model_config,
                            const TrainConfig& train_config, const EvalOptions& eval_options,
                            std::uint64_t model_seed) {
  if (variants.size() < 2) throw Error(ErrorCode::kInvalidArgument, "ablation needs at least two variants");
  AblationResult result;
  for (model::Variant v : variants) {
    model::ModelConfig cfg = model_config;
    cfg.variant = v;
    model::GbtModel<float> m(cfg, model_seed);
    Trainer trainer(m, train_data, train_config);
    trainer.run();
    for (const auto& [scene, psnr_mean] : evaluate(m, eval_data, eval_options).scene_means()) {
      result.rows.push_back({v, scene, psnr_mean});
    }
  }
  return result;
}

std::vector<NoiseRow> run_noise_sweep(const model::GbtModel<float>& model, const synth::Dataset& data,
                                      const std::vector<double>& sigmas, const EvalOptions& opts) {
  std::vector<NoiseRow> rows;
  for (double sigma : sigmas) {
    if (!(sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be non-negative");
    EvalOptions o = opts;
    o.context_sigma = sigma;
    rows.push_back({sigma, evaluate(model, data, o).mean()});
  }
  return rows;
}

void write_noise_csv(std::ostream& out, const std::vector<NoiseRow>& rows) {
  out << "sigma,psnr_mean\n";
  for (const NoiseRow& r : rows) out << fmt(r.sigma) << ',' << fmt(r.psnr_mean) << '\n';
}

int cyclic_distance(int index, const std::vector<int>& context, int n) {
  int best = n;
  for (int c : context) {
    const int d = std::abs(index - c) % n;
    best = std::min({best, d, n - d});
  }
  return best;
}

std::vector<SweepPoint> run_viewpoint_sweep(const model::GbtModel<float>& model, const synth::SceneViews& scene,
                                            const std::vector<int>& context_indices, int threads) {
  const int n = static_cast<int>(scene.views.size());
  if (context_indices.empty()) throw Error(ErrorCode::kInsufficientViews, "need at least one context view");
  for (int c : context_indices) {
    if (c < 0 || c >= n) throw Error(ErrorCode::kIndexOutOfRange, "context index " + std::to_string(c));
  }
  std::vector<int> queries;
  for (int i = 0; i < n; ++i) {
    if (std::find(context_indices.begin(), context_indices.end(), i) == context_indices.end()) queries.push_back(i);
  }
  std::vector<geom::CameraPose> context;
  for (int c : context_indices) context.push_back(scene.views[static_cast<std::size_t>(c)].pose);
  const std::vector<double> scores =
      score_queries(model, scene, context_indices, queries, context, threads > 0 ? threads : default_threads());
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < queries.size(); ++i) out.push_back({queries[i], scores[i]});
  return out;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points) {
  out << "index,psnr\n";
  for (const SweepPoint& p : points) out << p.index << ',' << fmt(p.psnr) << '\n';
}

}  // namespace gbt::train
