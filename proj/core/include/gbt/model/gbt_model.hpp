// SPDX-License-Identifier: Apache-2.0
//
// Geometry-biased transformer for novel view synthesis.
//
//   images --stem--> G x G feature grid --(+ harmonic patch-ray embedding)--> W
//     --> encoder layers (self-attention biased by -gamma^2 * ray distance)
//     --> scene tokens
//   query rays --harmonic embedding--> linear --> decoder layers (biased
//     cross-attention into scene tokens) --> color MLP --> sigmoid RGB
//
// All attention blocks are pre-LN with a 4x gelu feed-forward. The distance
// bias is shared by every head of a layer.
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gbt/geometry/ray_geometry.hpp"
#include "gbt/model/config.hpp"
#include "gbt/nn/graph.hpp"

namespace gbt::model {

/// Owns parameters in creation order; addresses are stable.
template <class T>
class ParamStore {
 public:
  nn::Parameter<T>& add(std::string name, nn::Shape shape, bool trainable = true);
  nn::Parameter<T>* find(std::string_view name) const;
  std::vector<nn::Parameter<T>*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<nn::Parameter<T>>> params_;
};

/// Rays plus the origins they were generated from. Plücker variants ignore
/// the origins; SRT* embeds (origin, direction) instead of (d, m).
struct RayBatch {
  std::vector<geom::Ray> rays;
  std::vector<geom::Vec3> origins;

  std::size_t size() const { return rays.size(); }
  void append(const RayBatch& other);
};

/// Rays through the centers of the given pixels (col, row) of one camera.
RayBatch pixel_rays(const geom::CameraPose& pose, const geom::Intrinsics& intr,
                    std::span<const std::pair<int, int>> pixels);
/// Every pixel of the camera, row-major.
RayBatch image_rays(const geom::CameraPose& pose, const geom::Intrinsics& intr);

/// Set-latent scene representation: one token per patch, aligned with its ray.
struct SceneEncoding {
  nn::Var tokens;
  RayBatch rays;
};

/// Optional per-layer capture of head-averaged cross-attention weights.
template <class T>
struct AttentionCapture {
  std::vector<nn::Tensor<T>> per_layer;  // each [Q, memory_tokens]
};

template <class T>
class GbtModel {
 public:
  using Graph = nn::Graph<T>;
  using Param = nn::Parameter<T>;

  /// Parameters are initialized from (seed, parameter name), so models of
  /// different variants share every identically named parameter.
  GbtModel(ModelConfig config, std::uint64_t seed);

  GbtModel(const GbtModel&) = delete;
  GbtModel& operator=(const GbtModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  /// Copies every parameter of `other` whose name and shape match; returns
  /// the number copied.
  template <class U>
  std::size_t assign_from(const GbtModel<U>& other);

  /// Overwrites every gamma (no-op for variants without one).
  void set_gamma(T value);

  /// Harmonic features of each ray: (d, m) or, for SRT*, (origin, d).
  nn::Tensor<T> ray_features(const RayBatch& rays) const;

  /// images: [V, 3, S, S]. poses must contain an identity (canonical) pose.
  /// Returns [V*G*G, latent] fused features and the patch rays, view-major.
  SceneEncoding embed_patches(Graph& g, const nn::Tensor<T>& images,
                              std::span<const geom::CameraPose> poses,
                              const geom::Intrinsics& intr) const;

  /// distance: [N, N] ray distances of the tokens (ignored without bias).
  nn::Var encoder_layer(Graph& g, int layer, nn::Var tokens, nn::Var distance) const;

  SceneEncoding encode(Graph& g, const nn::Tensor<T>& images, std::span<const geom::CameraPose> poses,
                       const geom::Intrinsics& intr) const;

  /// distance: [Q, N] from query rays to memory rays.
  nn::Var decoder_layer(Graph& g, int layer, nn::Var queries, nn::Var memory, nn::Var distance,
                        nn::Tensor<T>* head_mean_attention = nullptr) const;

  /// [Q, 3] colors in [0, 1].
  nn::Var decode(Graph& g, const RayBatch& query_rays, const SceneEncoding& encoding,
                 AttentionCapture<T>* capture = nullptr) const;

  /// Pairwise ray distances as a graph constant.
  static nn::Tensor<T> distance_tensor(const RayBatch& a, const RayBatch& b);

 private:
  struct Linear {
    Param* w = nullptr;
    Param* b = nullptr;
  };
  struct Norm {
    Param* gain = nullptr;
    Param* shift = nullptr;
  };
  struct Conv {
    Param* kernel = nullptr;
    Param* bias = nullptr;
    int stride = 1;
    int padding = 1;
  };
  struct Block {
    Norm ln1;
    Linear q, k, v, o;
    Norm ln2;
    Linear ff1, ff2;
    Param* gamma = nullptr;
  };

  Linear make_linear(const std::string& name, int in, int out, bool bias = true);
  Norm make_norm(const std::string& name, int dim);
  Block make_block(const std::string& name);
  void initialize(std::uint64_t seed);

  nn::Var apply(Graph& g, const Linear& l, nn::Var x) const;
  nn::Var apply(Graph& g, const Norm& n, nn::Var x) const;
  nn::Var attention(Graph& g, const Block& blk, nn::Var queries, nn::Var keys, nn::Var distance,
                    nn::Tensor<T>* head_mean_attention) const;
  nn::Var feed_forward(Graph& g, const Block& blk, nn::Var x) const;

  ModelConfig config_;
  ParamStore<T> store_;
  std::vector<Conv> stem_;
  Linear fusion_;
  std::vector<Block> encoder_;
  Norm encoder_norm_;
  Linear query_embed_;
  std::vector<Block> decoder_;
  Norm decoder_norm_;
  std::vector<Linear> color_mlp_;
};

template <class T>
template <class U>
std::size_t GbtModel<T>::assign_from(const GbtModel<U>& other) {
  std::size_t copied = 0;
  for (nn::Parameter<U>* src : other.params().all()) {
    nn::Parameter<T>* dst = store_.find(src->name);
    if (dst == nullptr || dst->value.shape() != src->value.shape()) continue;
    for (std::size_t i = 0; i < dst->value.size(); ++i) dst->value[i] = static_cast<T>(src->value[i]);
    ++copied;
  }
  return copied;
}

}  // namespace gbt::model
