// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "gbt/error.hpp"
#include "gbt/model/render.hpp"
#include "gbt/nn/grad_check.hpp"
#include "gbt/nn/ops.hpp"
#include "gbt/train/grad_suite.hpp"

using namespace gbt;
using namespace gbt::model;
using gbt::testing::max_abs_diff;
using gbt::testing::small_config;

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

template <class T>
nn::Tensor<T> decode_values(const GbtModel<T>& m, const nn::Tensor<T>& tokens, const RayBatch& memory,
                            const RayBatch& queries) {
  nn::Graph<T> g(false);
  const SceneEncoding enc{g.constant(tokens), memory};
  return g.value(m.decode(g, queries, enc));
}

}  // namespace

TEST_CASE("config validation and presets") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.stem_strides() == std::vector<int>{2, 2, 2});
  CHECK_NOTHROW(ModelConfig::paper_preset().validate());
  CHECK(ModelConfig::paper_preset().stem_strides() == std::vector<int>{4, 2, 2});
  CHECK(ModelConfig::tiny().stem_strides() == std::vector<int>{1, 2, 2});
  c.latent_dim = 100;
  CHECK_THROWS_AS(c.validate(), Error);
  c = ModelConfig{};
  c.grid = 7;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(parse_variant("srt*") == Variant::kSrtStar);
  CHECK(to_string(parse_variant("gbt-fb")) == "gbt-fb");
  CHECK_THROWS_AS(parse_variant("nerf"), Error);
}

TEST_CASE("gamma parameters per variant") {
  for (Variant v : {Variant::kGbt, Variant::kGbtFixedBias, Variant::kGbtNoBias, Variant::kSrtStar}) {
    const GbtModel<float> m(small_config(v), 1);
    int gammas = 0;
    for (const auto* p : m.params().all()) {
      if (p->name.ends_with(".gamma")) {
        ++gammas;
        CHECK(p->value[0] == 1.0f);
        CHECK(p->trainable == (v == Variant::kGbt));
      }
    }
    CHECK(gammas == (has_distance_bias(v) ? 4 : 0));
  }
}

TEST_CASE("variants share initialization by parameter name") {
  const GbtModel<double> a(small_config(Variant::kGbt), 9);
  const GbtModel<double> b(small_config(Variant::kSrtStar), 9);
  const GbtModel<double> c(small_config(Variant::kGbt), 10);
  std::size_t shared = 0;
  for (const auto* p : b.params().all()) {
    const auto* q = a.params().find(p->name);
    REQUIRE(q != nullptr);
    CHECK(p->value == q->value);
    ++shared;
  }
  CHECK(shared + 4 == a.params().size());
  CHECK(a.params().find("stem.0.kernel")->value != c.params().find("stem.0.kernel")->value);
  // Biases start at zero, norm gains at one.
  for (double v : a.params().find("fusion.bias")->value.storage()) CHECK(v == 0.0);
  for (double v : a.params().find("encoder.norm.gain")->value.storage()) CHECK(v == 1.0);
}

TEST_CASE("ray features") {
  const ModelConfig cfg = small_config(Variant::kGbt);
  const GbtModel<double> gbt(cfg, 1);
  const GbtModel<double> srt(small_config(Variant::kSrtStar), 1);
  RayBatch rays;
  rays.rays.push_back(geom::ray_from_origin_dir({1, 0, 0}, {0, 0, 1}));
  rays.origins.emplace_back(1, 0, 0);
  const nn::Tensor<double> f = gbt.ray_features(rays);
  REQUIRE(f.shape() == nn::Shape{1, static_cast<std::size_t>(cfg.ray_embedding_dim())});
  const std::vector<double> plucker{0, 0, 1, 0, -1, 0};
  const std::vector<double> expect = geom::harmonic_embed(plucker, cfg.harmonic);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(f[i] == doctest::Approx(expect[i]).epsilon(1e-14));
  const std::vector<double> od{1, 0, 0, 0, 0, 1};
  const std::vector<double> expect_srt = geom::harmonic_embed(od, cfg.harmonic);
  const nn::Tensor<double> fs = srt.ray_features(rays);
  for (std::size_t i = 0; i < expect_srt.size(); ++i) CHECK(fs[i] == doctest::Approx(expect_srt[i]).epsilon(1e-14));
}

TEST_CASE("encode and decode shapes, ranges and errors") {
  const ModelConfig cfg = small_config(Variant::kGbt);
  GbtModel<float> m(cfg, 2);
  const auto ctx = testing::random_context<float>(cfg, 3, 5);
  const EncodedScene<float> scene = encode_scene(m, ctx.images, ctx.poses, ctx.intr);
  CHECK(scene.tokens.shape() == nn::Shape{48, 24});
  CHECK(scene.rays.size() == 48);
  CHECK(scene.num_views == 3);
  const RayBatch q = testing::random_queries(ctx.intr, 20, 6);
  const nn::Tensor<float> rgb = render_rays(m, scene, q);
  CHECK(rgb.shape() == nn::Shape{20, 3});
  for (float v : rgb.storage()) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  // Outputs stay in range for large weights too.
  for (auto* p : m.params().all()) {
    for (float& v : p->value.storage()) v *= 40.0f;
  }
  const nn::Tensor<float> saturated = render_rays(m, encode_scene(m, ctx.images, ctx.poses, ctx.intr), q);
  for (float v : saturated.storage()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  std::vector<geom::CameraPose> moved = ctx.poses;
  moved[0] = moved[0] * geom::se3_exp({0.1, 0, 0}, {0, 0.2, 0});
  CHECK_THROWS_WITH_AS(encode_scene(m, ctx.images, moved, ctx.intr), doctest::Contains("identity"), Error);
  try {
    encode_scene(m, ctx.images, moved, ctx.intr);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonCanonicalPoses);
  }
  const std::span<const geom::CameraPose> two(ctx.poses.data(), 2);
  CHECK_THROWS_AS(encode_scene(m, ctx.images, two, ctx.intr), Error);
  CHECK_THROWS_AS(encode_scene(m, ctx.images, ctx.poses, geom::Intrinsics::from_fov(32, 1.0)), Error);
}

TEST_CASE("GBT with gamma 0 matches GBT-nb") {
  const auto ctx = testing::random_context<double>(small_config(Variant::kGbt), 3, 11);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    GbtModel<double> gbt(small_config(Variant::kGbt), seed);
    GbtModel<double> nb(small_config(Variant::kGbtNoBias), seed + 100);
    CHECK(nb.assign_from(gbt) == nb.params().size());
    gbt.set_gamma(0.0);
    const nn::Tensor<double> a = render_view(gbt, ctx.images, ctx.poses, ctx.intr, ctx.poses[1]);
    const nn::Tensor<double> b = render_view(nb, ctx.images, ctx.poses, ctx.intr, ctx.poses[1]);
    CHECK(max_abs_diff(a, b) < 1e-6);
    gbt.set_gamma(1.0);
    CHECK(max_abs_diff(render_view(gbt, ctx.images, ctx.poses, ctx.intr, ctx.poses[1]), b) > 1e-6);
  }
}

TEST_CASE("encoder layers are permutation equivariant") {
  for (Variant v : {Variant::kGbt, Variant::kSrtStar}) {
    const ModelConfig cfg = small_config(v);
    const GbtModel<double> m(cfg, 3);
    const auto ctx = testing::random_context<double>(cfg, 2, 12);
    nn::Graph<double> g(false);
    const SceneEncoding emb = m.embed_patches(g, ctx.images, ctx.poses, ctx.intr);
    const std::vector<std::size_t> perm = shuffled(emb.rays.size(), 13);
    const RayBatch prays = testing::permuted(emb.rays, perm);
    const nn::Tensor<double> x = g.value(emb.tokens);
    const nn::Var base = m.encoder_layer(g, 0, emb.tokens, g.constant(GbtModel<double>::distance_tensor(emb.rays, emb.rays)));
    const nn::Var perm_out = m.encoder_layer(g, 0, g.constant(testing::permuted_rows(x, perm)),
                                             g.constant(GbtModel<double>::distance_tensor(prays, prays)));
    CHECK(max_abs_diff(testing::permuted_rows(g.value(base), perm), g.value(perm_out)) < 1e-9);
  }
}

TEST_CASE("decoder output ignores memory order") {
  const ModelConfig cfg = small_config(Variant::kGbt);
  const GbtModel<double> m(cfg, 4);
  const auto ctx = testing::random_context<double>(cfg, 3, 14);
  const EncodedScene<double> scene = encode_scene(m, ctx.images, ctx.poses, ctx.intr);
  const RayBatch q = testing::random_queries(ctx.intr, 10, 15);
  const std::vector<std::size_t> perm = shuffled(scene.rays.size(), 16);
  const nn::Tensor<double> a = decode_values(m, scene.tokens, scene.rays, q);
  const nn::Tensor<double> b =
      decode_values(m, testing::permuted_rows(scene.tokens, perm), testing::permuted(scene.rays, perm), q);
  CHECK(max_abs_diff(a, b) < 1e-9);
}

TEST_CASE("queries are decoded independently") {
  const ModelConfig cfg = small_config(Variant::kGbt);
  const GbtModel<float> m(cfg, 5);
  const auto ctx = testing::random_context<float>(cfg, 3, 17);
  const EncodedScene<float> scene = encode_scene(m, ctx.images, ctx.poses, ctx.intr);
  const RayBatch q = testing::random_queries(ctx.intr, 30, 18);
  const nn::Tensor<float> all = render_rays(m, scene, q);
  CHECK(max_abs_diff(all, render_rays(m, scene, q, 1)) < 1e-6);
  CHECK(max_abs_diff(all, render_rays(m, scene, q, 7)) < 1e-6);

  const nn::Tensor<float> img = render_view(m, scene, ctx.poses[2], ctx.intr, 37);
  CHECK(img.shape() == nn::Shape{3, 16, 16});
  CHECK(max_abs_diff(img, render_view(m, scene, ctx.poses[2], ctx.intr)) < 1e-6);
}

TEST_CASE("SRT* depends on ray origins, Plucker variants do not") {
  const auto ctx = testing::random_context<double>(small_config(Variant::kGbt), 2, 19);
  const RayBatch q = testing::random_queries(ctx.intr, 6, 20);
  RayBatch slid = q;
  for (std::size_t i = 0; i < slid.size(); ++i) slid.origins[i] += 0.7 * slid.rays[i].d;
  for (Variant v : {Variant::kGbt, Variant::kGbtNoBias, Variant::kSrtStar}) {
    const GbtModel<double> m(small_config(v), 6);
    const EncodedScene<double> scene = encode_scene(m, ctx.images, ctx.poses, ctx.intr);
    const double diff = max_abs_diff(render_rays(m, scene, q), render_rays(m, scene, slid));
    if (v == Variant::kSrtStar) {
      CHECK(diff > 1e-6);
    } else {
      CHECK(diff < 1e-12);
    }
  }
}

TEST_CASE("attention maps are distributions over context patches") {
  const ModelConfig cfg = small_config(Variant::kGbt);
  const GbtModel<double> m(cfg, 7);
  const auto ctx = testing::random_context<double>(cfg, 3, 21);
  const EncodedScene<double> scene = encode_scene(m, ctx.images, ctx.poses, ctx.intr);
  const auto maps = attention_maps(m, scene, ctx.poses[1], ctx.intr, 5, 9);
  REQUIRE(maps.size() == 2);
  for (const auto& map : maps) {
    CHECK(map.shape() == nn::Shape{3, 4, 4});
    double total = 0.0;
    for (double w : map.storage()) {
      CHECK(w > 0.0);
      total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK_THROWS_AS(attention_maps(m, scene, ctx.poses[1], ctx.intr, 16, 0), Error);
  CHECK_THROWS_AS(attention_maps(m, scene, ctx.poses[1], ctx.intr, 0, -1), Error);
}

TEST_CASE("bias pulls attention toward geometrically close patches") {
  // With a large gamma the head-mean attention of a query ray through a
  // context camera center peaks on that camera's patches.
  const ModelConfig cfg = small_config(Variant::kGbtFixedBias);
  GbtModel<double> m(cfg, 8);
  m.set_gamma(30.0);
  const auto ctx = testing::random_context<double>(cfg, 3, 22);
  const EncodedScene<double> scene = encode_scene(m, ctx.images, ctx.poses, ctx.intr);
  const auto maps = attention_maps(m, scene, ctx.poses[2], ctx.intr, 8, 8);
  double own = 0.0;
  for (std::size_t i = 32; i < 48; ++i) own += maps[0][i];
  CHECK(own > 0.9);
}

TEST_CASE("frozen gamma receives no update") {
  const ModelConfig cfg = small_config(Variant::kGbtFixedBias);
  GbtModel<double> m(cfg, 9);
  const auto ctx = testing::random_context<double>(cfg, 2, 23);
  nn::Graph<double> g;
  const SceneEncoding enc = m.encode(g, ctx.images, ctx.poses, ctx.intr);
  const RayBatch q = testing::random_queries(ctx.intr, 4, 24);
  const nn::Var target = g.constant(nn::Tensor<double>({4, 3}, 0.5));
  g.backward(nn::mse_loss(g, m.decode(g, q, enc), target));
  for (const auto* p : m.params().all()) {
    if (p->name.ends_with(".gamma")) {
      const bool untouched = p->grad.empty() || p->grad[0] == 0.0;
      CHECK(untouched);
    }
  }
}

TEST_CASE("end-to-end gradients on the tiny config") {
  for (Variant v : {Variant::kGbt, Variant::kSrtStar}) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.variant = v;
    const train::ModelGradCheck r = train::model_grad_check(cfg, 1);
    CHECK_MESSAGE(r.result.max_rel_error < 1e-4, r.worst_param);
    CHECK(r.params_checked > 10);
  }
}

TEST_CASE("gamma gradient matches finite differences") {
  ModelConfig cfg = ModelConfig::tiny();
  GbtModel<double> m(cfg, 3);
  m.set_gamma(0.8);
  const auto ctx = testing::random_context<double>(cfg, 2, 25);
  const RayBatch q = testing::random_queries(ctx.intr, 5, 26);
  std::mt19937_64 rng(27);
  nn::Tensor<double> target({5, 3});
  for (double& t : target.storage()) t = std::uniform_real_distribution<double>(0, 1)(rng);
  std::vector<nn::Parameter<double>*> gammas;
  for (auto* p : m.params().all()) {
    if (p->name.ends_with(".gamma")) gammas.push_back(p);
  }
  REQUIRE(gammas.size() == 2);
  const nn::GradCheckResult r = nn::grad_check_params(
      [&](nn::Graph<double>& g) {
        const SceneEncoding enc = m.encode(g, ctx.images, ctx.poses, ctx.intr);
        return nn::mse_loss(g, m.decode(g, q, enc), g.constant(target));
      },
      gammas);
  CHECK(r.max_rel_error < 1e-4);
  CHECK(std::abs(r.worst_analytic) > 0.0);
}
