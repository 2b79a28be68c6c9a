// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gbt/model/config.hpp"
#include "gbt/model/gbt_model.hpp"
#include "gbt/synth/dataset.hpp"
#include "gbt/train/trainer.hpp"

namespace gbt::train {

/// Context/query view indices of one evaluation scene.
struct EvalSplit {
  int scene = 0;
  std::vector<int> context;
  std::vector<int> queries;
};

/// Fixed-seed splits, so every model sees the same context and query views.
std::vector<EvalSplit> eval_splits(const synth::Dataset& data, int context_views, int num_queries,
                                   std::uint64_t seed);

struct EvalRow {
  int scene = 0;
  int query_index = 0;
  double psnr = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;

  /// One mean per scene, in scene order.
  std::vector<std::pair<int, double>> scene_means() const;
  double mean() const;
  /// "scene,query_index,psnr".
  void write_csv(std::ostream& out) const;
};

struct EvalOptions {
  int context_views = 3;
  int num_queries = 8;
  std::uint64_t seed = 0;
  /// Pose noise on context views only (0 = none).
  double context_sigma = 0.0;
  /// Worker threads for query renders; 0 = GBT_THREADS or hardware.
  int threads = 0;
};

EvalTable evaluate(const model::GbtModel<float>& model, const synth::Dataset& data, const EvalOptions& opts);

/// Renders query view `query` of a scene from the given context views, with
/// optional context pose noise drawn from rng. Returns [3, H, W].
nn::Tensor<float> render_from_context(const model::GbtModel<float>& model, const synth::SceneViews& scene,
                                      const std::vector<int>& context, int query, double context_sigma = 0.0,
                                      std::mt19937_64* rng = nullptr);

struct AblationRow {
  model::Variant variant;
  int scene = 0;
  double psnr_mean = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  double mean(model::Variant v) const;
  /// "variant,scene,psnr_mean".
  void write_csv(std::ostream& out) const;
};

/// Trains one model per variant (same seeds, same data order) and evaluates
/// each on eval_data. model_config.variant is overridden per run.
AblationResult run_ablation(const synth::Dataset& train_data, const synth::Dataset& eval_data,
                            const std::vector<model::Variant>& variants, const model::ModelConfig& model_config,
                            const TrainConfig& train_config, const EvalOptions& eval_options,
                            std::uint64_t model_seed);

struct NoiseRow {
  double sigma = 0.0;
  double psnr_mean = 0.0;
};

inline const std::vector<double> kDefaultSigmas{0.0, 0.02, 0.05, 0.1};

/// Same splits for every sigma; noise draws depend only on (seed, scene).
std::vector<NoiseRow> run_noise_sweep(const model::GbtModel<float>& model, const synth::Dataset& data,
                                      const std::vector<double>& sigmas, const EvalOptions& opts);
/// "sigma,psnr_mean".
void write_noise_csv(std::ostream& out, const std::vector<NoiseRow>& rows);

struct SweepPoint {
  int index = 0;
  double psnr = 0.0;
};

/// Renders every non-context view of an orbit scene; one point per view.
std::vector<SweepPoint> run_viewpoint_sweep(const model::GbtModel<float>& model, const synth::SceneViews& scene,
                                            const std::vector<int>& context_indices, int threads = 0);
/// "index,psnr".
void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points);

/// Smallest cyclic distance from index to any context index on an n-view orbit.
int cyclic_distance(int index, const std::vector<int>& context, int n);

/// GBT_THREADS if set, otherwise hardware concurrency (at least 1).
int default_threads();

}  // namespace gbt::train
