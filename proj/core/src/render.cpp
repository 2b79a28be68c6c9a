// SPDX-License-Identifier: Apache-2.0
#include "gbt/model/render.hpp"

#include <algorithm>

#include "gbt/error.hpp"

namespace gbt::model {

template <class T>
EncodedScene<T> encode_scene(const GbtModel<T>& model, const nn::Tensor<T>& images,
                             std::span<const geom::CameraPose> poses, const geom::Intrinsics& intr) {
  nn::Graph<T> g(false);
  SceneEncoding enc = model.encode(g, images, poses, intr);
  return {g.value(enc.tokens), std::move(enc.rays), poses.size()};
}

template <class T>
nn::Tensor<T> render_rays(const GbtModel<T>& model, const EncodedScene<T>& scene, const RayBatch& rays,
                          std::size_t chunk) {
  if (chunk == 0) throw Error(ErrorCode::kInvalidArgument, "chunk must be positive");
  nn::Tensor<T> out({rays.size(), 3});
  for (std::size_t start = 0; start < rays.size(); start += chunk) {
    const std::size_t n = std::min(chunk, rays.size() - start);
    RayBatch part;
    part.rays.assign(rays.rays.begin() + start, rays.rays.begin() + start + n);
    part.origins.assign(rays.origins.begin() + start, rays.origins.begin() + start + n);
    nn::Graph<T> g(false);
    SceneEncoding enc{g.constant(scene.tokens), scene.rays};
    const nn::Tensor<T>& colors = g.value(model.decode(g, part, enc));
    std::copy(colors.values().begin(), colors.values().end(), out.data() + start * 3);
  }
  return out;
}

template <class T>
nn::Tensor<T> to_chw(const nn::Tensor<T>& colors, int width, int height) {
  const std::size_t hw = static_cast<std::size_t>(width) * height;
  if (colors.rank() != 2 || colors.dim(0) != hw || colors.dim(1) != 3) {
    throw Error(ErrorCode::kShapeMismatch, "expected [H*W, 3] colors, got " + nn::shape_str(colors.shape()));
  }
  nn::Tensor<T> img({3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) img[c * hw + p] = colors[p * 3 + c];
  }
  return img;
}

template <class T>
nn::Tensor<T> render_view(const GbtModel<T>& model, const EncodedScene<T>& scene,
                          const geom::CameraPose& query_pose, const geom::Intrinsics& query_intr,
                          std::size_t chunk) {
  const nn::Tensor<T> colors = render_rays(model, scene, image_rays(query_pose, query_intr), chunk);
  return to_chw(colors, query_intr.width, query_intr.height);
}

template <class T>
nn::Tensor<T> render_view(const GbtModel<T>& model, const nn::Tensor<T>& images,
                          std::span<const geom::CameraPose> poses, const geom::Intrinsics& intr,
                          const geom::CameraPose& query_pose, std::size_t chunk) {
  return render_view(model, encode_scene(model, images, poses, intr), query_pose, intr, chunk);
}

template <class T>
std::vector<nn::Tensor<T>> attention_maps(const GbtModel<T>& model, const EncodedScene<T>& scene,
                                          const geom::CameraPose& query_pose, const geom::Intrinsics& intr,
                                          int col, int row) {
  if (col < 0 || row < 0 || col >= intr.width || row >= intr.height) {
    throw Error(ErrorCode::kOutOfBounds,
                "pixel (" + std::to_string(col) + ", " + std::to_string(row) + ") outside image");
  }
  const std::pair<int, int> px{col, row};
  const RayBatch rays = pixel_rays(query_pose, intr, std::span(&px, 1));
  nn::Graph<T> g(false);
  SceneEncoding enc{g.constant(scene.tokens), scene.rays};
  AttentionCapture<T> capture;
  model.decode(g, rays, enc, &capture);

  const std::size_t grid = static_cast<std::size_t>(model.config().grid);
  std::vector<nn::Tensor<T>> maps;
  for (nn::Tensor<T>& w : capture.per_layer) {
    maps.emplace_back(nn::Shape{scene.num_views, grid, grid}, std::move(w.storage()));
  }
  return maps;
}

#define GBT_INSTANTIATE(T)                                                                                   \
  template EncodedScene<T> encode_scene(const GbtModel<T>&, const nn::Tensor<T>&,                           \
                                        std::span<const geom::CameraPose>, const geom::Intrinsics&);        \
  template nn::Tensor<T> render_rays(const GbtModel<T>&, const EncodedScene<T>&, const RayBatch&,           \
                                     std::size_t);                                                          \
  template nn::Tensor<T> render_view(const GbtModel<T>&, const EncodedScene<T>&, const geom::CameraPose&,   \
                                     const geom::Intrinsics&, std::size_t);                                 \
  template nn::Tensor<T> render_view(const GbtModel<T>&, const nn::Tensor<T>&,                              \
                                     std::span<const geom::CameraPose>, const geom::Intrinsics&,            \
                                     const geom::CameraPose&, std::size_t);                                 \
  template std::vector<nn::Tensor<T>> attention_maps(const GbtModel<T>&, const EncodedScene<T>&,            \
                                                     const geom::CameraPose&, const geom::Intrinsics&, int, \
                                                     int);                                                  \
  template nn::Tensor<T> to_chw(const nn::Tensor<T>&, int, int);

GBT_INSTANTIATE(float)
GBT_INSTANTIATE(double)
#undef GBT_INSTANTIATE

}  // namespace gbt::model
