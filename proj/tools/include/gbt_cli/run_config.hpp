// SPDX-License-Identifier: Apache-2.0
//
// Flat "key = value" run configuration. '#' starts a comment; unknown keys
// and out-of-range values are rejected at parse time.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gbt/model/config.hpp"
#include "gbt/synth/dataset.hpp"
#include "gbt/train/trainer.hpp"

namespace gbt::cli {

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  synth::DatasetConfig data;  // the train split
  std::uint64_t model_seed = 0;

  int eval_scenes = 10;
  int eval_views = 24;
  int orbit_scenes = 5;
  int orbit_views = 40;

  int eval_context_views = 3;
  int eval_queries = 8;
  std::uint64_t eval_seed = 0;
  std::vector<double> noise_sigmas{0.0, 0.02, 0.05, 0.1};
  std::vector<model::Variant> ablate_variants{model::Variant::kGbt, model::Variant::kGbtFixedBias,
                                              model::Variant::kGbtNoBias, model::Variant::kSrtStar};
  std::vector<int> viewsweep_context{10, 20, 30};

  /// Train, eval and orbit dataset configs derived from `data`.
  synth::DatasetConfig eval_data() const;
  synth::DatasetConfig orbit_data() const;

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ConfigKey {
  std::string_view name;
  std::string_view doc;
};

/// Every accepted key, in serialization order.
const std::vector<ConfigKey>& config_keys();

/// Throws Error(kInvalidArgument) naming the offending line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);
/// Every key, one per line, with its doc as a comment.
std::string serialize(const RunConfig& config);

}  // namespace gbt::cli
