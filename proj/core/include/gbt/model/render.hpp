// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gbt/model/gbt_model.hpp"

namespace gbt::model {

/// Encoder output detached from its graph, so many decodes can reuse it.
template <class T>
struct EncodedScene {
  nn::Tensor<T> tokens;  // [V*G*G, latent]
  RayBatch rays;
  std::size_t num_views = 0;
};

/// Runs the encoder without recording gradients. Poses must be canonical.
template <class T>
EncodedScene<T> encode_scene(const GbtModel<T>& model, const nn::Tensor<T>& images,
                             std::span<const geom::CameraPose> poses, const geom::Intrinsics& intr);

/// Decodes rays in chunks of `chunk`; [Q, 3].
template <class T>
nn::Tensor<T> render_rays(const GbtModel<T>& model, const EncodedScene<T>& scene, const RayBatch& rays,
                          std::size_t chunk = 1024);

/// Every pixel of the query camera; [3, H, W].
template <class T>
nn::Tensor<T> render_view(const GbtModel<T>& model, const EncodedScene<T>& scene,
                          const geom::CameraPose& query_pose, const geom::Intrinsics& query_intr,
                          std::size_t chunk = 1024);

template <class T>
nn::Tensor<T> render_view(const GbtModel<T>& model, const nn::Tensor<T>& images,
                          std::span<const geom::CameraPose> poses, const geom::Intrinsics& intr,
                          const geom::CameraPose& query_pose, std::size_t chunk = 1024);

/// Head-averaged cross-attention of one pixel's query ray, one [V, G, G] map
/// per decoder layer. Throws OutOfBounds for pixels outside the image.
template <class T>
std::vector<nn::Tensor<T>> attention_maps(const GbtModel<T>& model, const EncodedScene<T>& scene,
                                          const geom::CameraPose& query_pose, const geom::Intrinsics& intr,
                                          int col, int row);

/// [Q, 3] pixel colors reshaped to [3, H, W].
template <class T>
nn::Tensor<T> to_chw(const nn::Tensor<T>& colors, int width, int height);

}  // namespace gbt::model
