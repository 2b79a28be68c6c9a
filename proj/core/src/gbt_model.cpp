// SPDX-License-Identifier: Apache-2.0
#include "gbt/model/gbt_model.hpp"

#include <cmath>
#include <random>

#include "gbt/nn/ops.hpp"

namespace gbt::model {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

// ---------------------------------------------------------------- ParamStore

template <class T>
nn::Parameter<T>& ParamStore<T>::add(std::string name, nn::Shape shape, bool trainable) {
  if (find(name) != nullptr) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  auto p = std::make_unique<nn::Parameter<T>>();
  p->name = std::move(name);
  p->value = nn::Tensor<T>(std::move(shape));
  p->trainable = trainable;
  params_.push_back(std::move(p));
  return *params_.back();
}

template <class T>
nn::Parameter<T>* ParamStore<T>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <class T>
std::vector<nn::Parameter<T>*> ParamStore<T>::all() const {
  std::vector<nn::Parameter<T>*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------- rays

void RayBatch::append(const RayBatch& other) {
  rays.insert(rays.end(), other.rays.begin(), other.rays.end());
  origins.insert(origins.end(), other.origins.begin(), other.origins.end());
}

RayBatch pixel_rays(const geom::CameraPose& pose, const geom::Intrinsics& intr,
                    std::span<const std::pair<int, int>> pixels) {
  RayBatch out;
  out.rays.reserve(pixels.size());
  out.origins.assign(pixels.size(), pose.center());
  for (auto [col, row] : pixels) out.rays.push_back(geom::pixel_center_ray(pose, intr, col, row));
  return out;
}

RayBatch image_rays(const geom::CameraPose& pose, const geom::Intrinsics& intr) {
  RayBatch out;
  const std::size_t n = static_cast<std::size_t>(intr.width) * intr.height;
  out.rays.reserve(n);
  out.origins.assign(n, pose.center());
  for (int row = 0; row < intr.height; ++row) {
    for (int col = 0; col < intr.width; ++col) {
      out.rays.push_back(geom::pixel_center_ray(pose, intr, col, row));
    }
  }
  return out;
}

// ---------------------------------------------------------------- construction

template <class T>
GbtModel<T>::GbtModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const int latent = config_.latent_dim;

  const std::vector<int> strides = config_.stem_strides();
  int in_ch = 3;
  for (std::size_t i = 0; i < config_.stem_channels.size(); ++i) {
    const int s = strides[i];
    const int k = s == 1 ? 3 : s + 1;
    const int out_ch = config_.stem_channels[i];
    const std::string name = "stem." + std::to_string(i);
    Conv c;
    c.kernel = &store_.add(name + ".kernel", {std::size_t(out_ch), std::size_t(in_ch), std::size_t(k), std::size_t(k)});
    c.bias = &store_.add(name + ".bias", {std::size_t(out_ch)});
    c.stride = s;
    c.padding = (k - 1) / 2;
    stem_.push_back(c);
    in_ch = out_ch;
  }
  fusion_ = make_linear("fusion", in_ch + config_.ray_embedding_dim(), latent);
  for (int l = 0; l < config_.encoder_layers; ++l) encoder_.push_back(make_block("encoder." + std::to_string(l)));
  encoder_norm_ = make_norm("encoder.norm", latent);
  query_embed_ = make_linear("query_embed", config_.ray_embedding_dim(), latent);
  for (int l = 0; l < config_.decoder_layers; ++l) decoder_.push_back(make_block("decoder." + std::to_string(l)));
  decoder_norm_ = make_norm("decoder.norm", latent);
  int width = latent;
  for (std::size_t i = 0; i < config_.mlp_hidden.size(); ++i) {
    color_mlp_.push_back(make_linear("color." + std::to_string(i), width, config_.mlp_hidden[i]));
    width = config_.mlp_hidden[i];
  }
  color_mlp_.push_back(make_linear("color.out", width, 3));
  initialize(seed);
}

template <class T>
typename GbtModel<T>::Linear GbtModel<T>::make_linear(const std::string& name, int in, int out, bool bias) {
  Linear l;
  l.w = &store_.add(name + ".weight", {std::size_t(in), std::size_t(out)});
  if (bias) l.b = &store_.add(name + ".bias", {std::size_t(out)});
  return l;
}

template <class T>
typename GbtModel<T>::Norm GbtModel<T>::make_norm(const std::string& name, int dim) {
  Norm n;
  n.gain = &store_.add(name + ".gain", {std::size_t(dim)});
  n.shift = &store_.add(name + ".shift", {std::size_t(dim)});
  return n;
}

template <class T>
typename GbtModel<T>::Block GbtModel<T>::make_block(const std::string& name) {
  const int d = config_.latent_dim;
  const int ff = d * config_.ff_multiplier;
  Block b;
  b.ln1 = make_norm(name + ".ln1", d);
  b.q = make_linear(name + ".attn.q", d, d);
  b.k = make_linear(name + ".attn.k", d, d);
  b.v = make_linear(name + ".attn.v", d, d);
  b.o = make_linear(name + ".attn.out", d, d);
  b.ln2 = make_norm(name + ".ln2", d);
  b.ff1 = make_linear(name + ".ff1", d, ff);
  b.ff2 = make_linear(name + ".ff2", ff, d);
  if (has_distance_bias(config_.variant)) {
    b.gamma = &store_.add(name + ".gamma", {1}, config_.variant == Variant::kGbt);
  }
  return b;
}

template <class T>
void GbtModel<T>::initialize(std::uint64_t seed) {
  for (nn::Parameter<T>* p : store_.all()) {
    const std::string& name = p->name;
    if (ends_with(name, ".gamma")) {
      p->value.fill(static_cast<T>(config_.gamma_init));
    } else if (ends_with(name, ".gain")) {
      p->value.fill(T(1));
    } else if (ends_with(name, ".bias") || ends_with(name, ".shift")) {
      p->value.fill(T(0));
    } else {
      // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in is every axis but
      // the output one (first for kernels, last for linear weights).
      const nn::Shape& s = p->value.shape();
      const std::size_t fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::mt19937_64 rng(splitmix64(seed ^ fnv1a(name)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : p->value.values()) v = static_cast<T>(dist(rng));
    }
  }
}

template <class T>
void GbtModel<T>::set_gamma(T value) {
  for (auto& b : encoder_) {
    if (b.gamma) b.gamma->value.fill(value);
  }
  for (auto& b : decoder_) {
    if (b.gamma) b.gamma->value.fill(value);
  }
}

// ---------------------------------------------------------------- forward

template <class T>
nn::Var GbtModel<T>::apply(Graph& g, const Linear& l, nn::Var x) const {
  return nn::linear(g, x, g.param(*l.w), l.b ? g.param(*l.b) : nn::Var{});
}

template <class T>
nn::Var GbtModel<T>::apply(Graph& g, const Norm& n, nn::Var x) const {
  return nn::layernorm(g, x, g.param(*n.gain), g.param(*n.shift));
}

template <class T>
nn::Tensor<T> GbtModel<T>::ray_features(const RayBatch& rays) const {
  const std::size_t width = static_cast<std::size_t>(config_.ray_embedding_dim());
  nn::Tensor<T> out({rays.size(), width});
  const bool plucker = uses_plucker(config_.variant);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    std::array<double, 6> c;
    if (plucker) {
      c = rays.rays[i].coords();
    } else {
      const geom::Vec3& o = rays.origins.at(i);
      const geom::Vec3& d = rays.rays[i].d;
      c = {o.x(), o.y(), o.z(), d.x(), d.y(), d.z()};
    }
    geom::harmonic_embed_into<T>(c, config_.harmonic, std::span<T>(out.data() + i * width, width));
  }
  return out;
}

template <class T>
nn::Tensor<T> GbtModel<T>::distance_tensor(const RayBatch& a, const RayBatch& b) {
  nn::Tensor<T> out({a.size(), b.size()});
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      out[i * b.size() + j] = static_cast<T>(geom::ray_distance(a.rays[i], b.rays[j]));
    }
  }
  return out;
}

template <class T>
SceneEncoding GbtModel<T>::embed_patches(Graph& g, const nn::Tensor<T>& images,
                                         std::span<const geom::CameraPose> poses,
                                         const geom::Intrinsics& intr) const {
  const std::size_t s = static_cast<std::size_t>(config_.image_size);
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != s || images.dim(3) != s) {
    throw Error(ErrorCode::kShapeMismatch, "expected images [V,3," + std::to_string(s) + "," +
                                               std::to_string(s) + "], got " + nn::shape_str(images.shape()));
  }
  const std::size_t views = images.dim(0);
  if (views < 1 || poses.size() != views) {
    throw Error(ErrorCode::kShapeMismatch, "need one pose per view");
  }
  if (intr.width != config_.image_size || intr.height != config_.image_size) {
    throw Error(ErrorCode::kShapeMismatch, "intrinsics do not match image_size");
  }
  bool canonical = false;
  for (const auto& p : poses) canonical = canonical || p.is_identity(1e-6);
  if (!canonical) throw Error(ErrorCode::kNonCanonicalPoses, "no context pose is the identity");

  nn::Var x = g.constant(images);
  for (std::size_t i = 0; i < stem_.size(); ++i) {
    const Conv& c = stem_[i];
    x = nn::conv2d(g, x, g.param(*c.kernel), g.param(*c.bias), c.stride, c.padding);
    if (i + 1 < stem_.size()) x = nn::relu(g, x);
  }
  const std::size_t channels = static_cast<std::size_t>(config_.stem_channels.back());
  const std::size_t cells = static_cast<std::size_t>(config_.tokens_per_view());
  x = nn::reshape(g, x, {views * channels, cells});
  std::vector<nn::Var> per_view;
  SceneEncoding enc;
  for (std::size_t v = 0; v < views; ++v) {
    per_view.push_back(nn::transpose(g, nn::slice_rows(g, x, v * channels, channels)));
    RayBatch rb;
    rb.rays = geom::patch_rays(poses[v], intr, config_.grid);
    rb.origins.assign(rb.rays.size(), poses[v].center());
    enc.rays.append(rb);
  }
  nn::Var cnn = per_view.size() == 1 ? per_view[0] : nn::concat<T>(g, per_view, 0);
  nn::Var ray_emb = g.constant(ray_features(enc.rays));
  const std::array<nn::Var, 2> parts{cnn, ray_emb};
  enc.tokens = apply(g, fusion_, nn::concat<T>(g, parts, 1));
  return enc;
}

template <class T>
nn::Var GbtModel<T>::attention(Graph& g, const Block& blk, nn::Var queries, nn::Var keys,
                               nn::Var distance, nn::Tensor<T>* head_mean_attention) const {
  const std::size_t heads = static_cast<std::size_t>(config_.num_heads);
  const std::size_t dh = static_cast<std::size_t>(config_.head_dim());
  nn::Var q = apply(g, blk.q, queries);
  nn::Var k = apply(g, blk.k, keys);
  nn::Var v = apply(g, blk.v, keys);
  nn::Var bias;
  if (blk.gamma != nullptr) {
    // -gamma^2 * d(r_q, r_k), shared across heads.
    nn::Var neg_gamma_sq = nn::scale(g, nn::square(g, g.param(*blk.gamma)), T(-1));
    bias = nn::mul_scalar(g, neg_gamma_sq, distance);
  }
  const T inv_eta = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<nn::Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    nn::Var qh = heads == 1 ? q : nn::slice_cols(g, q, h * dh, dh);
    nn::Var kh = heads == 1 ? k : nn::slice_cols(g, k, h * dh, dh);
    nn::Var vh = heads == 1 ? v : nn::slice_cols(g, v, h * dh, dh);
    nn::Var logits = nn::scale(g, nn::matmul_nt(g, qh, kh), inv_eta);
    nn::Var w = bias.valid() ? nn::softmax_with_bias(g, logits, bias) : nn::softmax(g, logits);
    if (head_mean_attention != nullptr) {
      const nn::Tensor<T>& wv = g.value(w);
      if (h == 0) *head_mean_attention = nn::Tensor<T>(wv.shape());
      for (std::size_t i = 0; i < wv.size(); ++i) (*head_mean_attention)[i] += wv[i] / static_cast<T>(heads);
    }
    outs.push_back(nn::matmul(g, w, vh));
  }
  nn::Var merged = heads == 1 ? outs[0] : nn::concat<T>(g, outs, 1);
  return apply(g, blk.o, merged);
}

template <class T>
nn::Var GbtModel<T>::feed_forward(Graph& g, const Block& blk, nn::Var x) const {
  return apply(g, blk.ff2, nn::gelu(g, apply(g, blk.ff1, x)));
}

template <class T>
nn::Var GbtModel<T>::encoder_layer(Graph& g, int layer, nn::Var tokens, nn::Var distance) const {
  const Block& blk = encoder_.at(static_cast<std::size_t>(layer));
  nn::Var h = apply(g, blk.ln1, tokens);
  nn::Var x = nn::add(g, tokens, attention(g, blk, h, h, distance, nullptr));
  return nn::add(g, x, feed_forward(g, blk, apply(g, blk.ln2, x)));
}

template <class T>
SceneEncoding GbtModel<T>::encode(Graph& g, const nn::Tensor<T>& images,
                                  std::span<const geom::CameraPose> poses,
                                  const geom::Intrinsics& intr) const {
  SceneEncoding enc = embed_patches(g, images, poses, intr);
  nn::Var distance;
  if (has_distance_bias(config_.variant)) {
    distance = g.constant(distance_tensor(enc.rays, enc.rays));
  }
  nn::Var x = enc.tokens;
  for (int l = 0; l < config_.encoder_layers; ++l) x = encoder_layer(g, l, x, distance);
  enc.tokens = apply(g, encoder_norm_, x);
  return enc;
}

template <class T>
nn::Var GbtModel<T>::decoder_layer(Graph& g, int layer, nn::Var queries, nn::Var memory,
                                   nn::Var distance, nn::Tensor<T>* head_mean_attention) const {
  const Block& blk = decoder_.at(static_cast<std::size_t>(layer));
  nn::Var h = apply(g, blk.ln1, queries);
  nn::Var x = nn::add(g, queries, attention(g, blk, h, memory, distance, head_mean_attention));
  return nn::add(g, x, feed_forward(g, blk, apply(g, blk.ln2, x)));
}

template <class T>
nn::Var GbtModel<T>::decode(Graph& g, const RayBatch& query_rays, const SceneEncoding& encoding,
                            AttentionCapture<T>* capture) const {
  if (query_rays.size() == 0) throw Error(ErrorCode::kShapeMismatch, "decode needs at least one ray");
  nn::Var distance;
  if (has_distance_bias(config_.variant)) {
    distance = g.constant(distance_tensor(query_rays, encoding.rays));
  }
  nn::Var q = apply(g, query_embed_, g.constant(ray_features(query_rays)));
  if (capture) capture->per_layer.assign(decoder_.size(), {});
  for (int l = 0; l < config_.decoder_layers; ++l) {
    q = decoder_layer(g, l, q, encoding.tokens, distance,
                      capture ? &capture->per_layer[static_cast<std::size_t>(l)] : nullptr);
  }
  nn::Var x = apply(g, decoder_norm_, q);
  for (std::size_t i = 0; i + 1 < color_mlp_.size(); ++i) x = nn::relu(g, apply(g, color_mlp_[i], x));
  return nn::sigmoid(g, apply(g, color_mlp_.back(), x));
}

template class ParamStore<float>;
template class ParamStore<double>;
template class GbtModel<float>;
template class GbtModel<double>;

}  // namespace gbt::model
