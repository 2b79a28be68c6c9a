// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "gbt/error.hpp"
#include "gbt/nn/ops.hpp"
#include "gbt/train/checkpoint.hpp"
#include "gbt/train/evaluate.hpp"
#include "gbt/train/metrics.hpp"
#include "gbt/train/trainer.hpp"

using namespace gbt;
using namespace gbt::train;
using gbt::testing::small_config;

namespace {

const synth::Dataset& tiny_data() {
  static const synth::Dataset data = [] {
    synth::DatasetConfig cfg;
    cfg.num_scenes = 3;
    cfg.views_per_scene = 8;
    cfg.image_size = 16;
    cfg.seed = 3;
    return synth::make_dataset(cfg);
  }();
  return data;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.rays_per_step = 64;
  t.batch_scenes = 2;
  t.max_steps = 50;
  t.warmup_steps = 10;
  t.eval_every = 10;
  t.seed = 4;
  return t;
}

std::vector<float> flat_params(const model::GbtModel<float>& m) {
  std::vector<float> out;
  for (const auto* p : m.params().all()) out.insert(out.end(), p->value.storage().begin(), p->value.storage().end());
  return out;
}

Checkpoint trained_checkpoint() {
  model::GbtModel<float> m(small_config(model::Variant::kGbt), 1);
  TrainConfig t = tiny_train();
  t.max_steps = 3;
  Trainer tr(m, tiny_data(), t);
  tr.run();
  return make_checkpoint(m, 3, &tr.optimizer());
}

}  // namespace

TEST_CASE("psnr and mse") {
  nn::Tensor<float> a({3, 2, 2}, 0.5f);
  CHECK(psnr(a, a) == kPsnrCap);
  nn::Tensor<double> x({4}, 0.0);
  nn::Tensor<double> y({4}, 0.1);
  CHECK(mse(x, y) == doctest::Approx(0.01));
  CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-12));
  nn::Tensor<double> one({4}, 1.0);
  CHECK(psnr(x, one) == doctest::Approx(0.0));
  CHECK_THROWS_AS(psnr(x, nn::Tensor<double>({5})), Error);
}

TEST_CASE("l2 ray loss and its gradient") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nn::Tensor<double> pred({5, 3});
  nn::Tensor<double> target({5, 3});
  for (std::size_t i = 0; i < 15; ++i) {
    pred[i] = u(rng);
    target[i] = u(rng);
  }
  nn::Graph<double> g;
  const nn::Var p = g.input(pred);
  const nn::Var loss = l2_ray_loss(g, p, g.constant(target));
  CHECK(g.value(loss)[0] == doctest::Approx(mse(pred, target)).epsilon(1e-14));
  g.backward(loss);
  for (std::size_t i = 0; i < 15; ++i) {
    CHECK(g.grad(p)[i] == doctest::Approx(2.0 * (pred[i] - target[i]) / 15.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(l2_ray_loss(g, g.input(nn::Tensor<double>({5, 2})), g.constant(nn::Tensor<double>({5, 2}))),
                  Error);
}

TEST_CASE("train config schedule and presets") {
  TrainConfig t;
  t.lr = 1e-3;
  t.warmup_steps = 10;
  t.max_steps = 110;
  CHECK(t.lr_at(0) == doctest::Approx(1e-4));
  CHECK(t.lr_at(9) == doctest::Approx(1e-3));
  CHECK(t.lr_at(10) == doctest::Approx(1e-3));
  CHECK(t.lr_at(60) == doctest::Approx(0.55e-3));
  CHECK(t.lr_at(110) == doctest::Approx(1e-4));
  CHECK(t.lr_at(500) == doctest::Approx(1e-4));
  for (int s = 11; s < 110; ++s) CHECK(t.lr_at(s) < t.lr_at(s - 1));

  const TrainConfig paper = TrainConfig::paper_preset();
  CHECK(paper.rays_per_step == 7168);
  CHECK(paper.batch_scenes == 6);
  CHECK(paper.lr == 1e-5);
  CHECK(paper.lr_at(0) == doctest::Approx(1e-5));
  CHECK(paper.lr_at(100000) == doctest::Approx(1e-5));
  CHECK(TrainConfig{}.lr == 1e-3);

  CHECK_NOTHROW(TrainConfig{}.validate(64));
  CHECK_THROWS_AS(TrainConfig{}.validate(16), Error);
  t = TrainConfig{};
  t.final_lr_ratio = 0.0;
  CHECK_THROWS_AS(t.validate(64), Error);
}

TEST_CASE("sampling helpers") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const std::vector<int> s = sample_without_replacement(10, 4, rng);
    CHECK(s.size() == 4);
    CHECK(std::set<int>(s.begin(), s.end()).size() == 4);
    CHECK(*std::min_element(s.begin(), s.end()) >= 0);
    CHECK(*std::max_element(s.begin(), s.end()) < 10);
  }
  CHECK_THROWS_AS(sample_without_replacement(3, 4, rng), Error);

  const auto& scene = tiny_data().scenes[0];
  std::vector<geom::CameraPose> ctx{scene.views[2].pose, scene.views[5].pose};
  std::vector<geom::CameraPose> extra{scene.views[3].pose};
  const auto c = canonical_poses(ctx, extra);
  REQUIRE(c.size() == 3);
  CHECK(c[0].is_identity(1e-12));
  const geom::CameraPose rel = scene.views[2].pose.inverse() * scene.views[3].pose;
  CHECK((c[2].translation - rel.translation).norm() < 1e-9);

  const std::vector<int> views{1, 4};
  const nn::Tensor<float> stacked = stack_images(scene, views);
  CHECK(stacked.shape() == nn::Shape{2, 3, 16, 16});
  CHECK(stacked[768] == scene.views[4].image[0]);
}

TEST_CASE("untrained loss is finite and training reduces it") {
  model::GbtModel<float> m(small_config(model::Variant::kGbt), 5);
  TrainConfig t = tiny_train();
  t.batch_scenes = 1;
  t.max_steps = 150;
  t.lr = 3e-3;
  t.color_augment = false;
  Trainer tr(m, tiny_data(), t);
  // Fixed draw: scene 0, context {0, 3, 6}, query 1.
  tr.set_sampler([](std::mt19937_64&) { return TrainingSample{0, {0, 3, 6}, 1}; });
  std::mt19937_64 rng(6);
  const double before = tr.sample_loss({0, {0, 3, 6}, 1}, rng);
  CHECK(std::isfinite(before));
  CHECK(before > 0.0);
  tr.run();
  CHECK(tr.steps_done() == 150);
  rng.seed(6);
  CHECK(tr.sample_loss({0, {0, 3, 6}, 1}, rng) < 0.5 * before);
}

TEST_CASE("color augmentation matches a recolored dataset") {
  model::GbtModel<float> m(small_config(model::Variant::kGbt), 5);
  TrainingSample aug{0, {0, 3, 6}, 1};
  aug.channel_order = {2, 0, 1};
  aug.channel_gain = {0.5f, 0.75f, 0.625f};
  synth::Dataset recolored = tiny_data();
  for (auto& view : recolored.scenes[0].views) {
    const nn::Tensor<float> src = view.image;
    const std::size_t plane = src.size() / 3;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        view.image[c * plane + i] = src[static_cast<std::size_t>(aug.channel_order[c]) * plane + i] * aug.channel_gain[c];
      }
    }
  }
  const Trainer on_original(m, tiny_data(), tiny_train());
  const Trainer on_recolored(m, recolored, tiny_train());
  std::mt19937_64 rng_a(9), rng_b(9);
  const double a = on_original.sample_loss(aug, rng_a);
  const double b = on_recolored.sample_loss({0, {0, 3, 6}, 1}, rng_b);
  CHECK(a == b);
  std::mt19937_64 rng_c(9);
  CHECK(on_original.sample_loss({0, {0, 3, 6}, 1}, rng_c) != a);
}

TEST_CASE("training is bit-reproducible") {
  auto run = [] {
    model::GbtModel<float> m(small_config(model::Variant::kGbt), 7);
    Trainer tr(m, tiny_data(), tiny_train());
    std::ostringstream log;
    tr.run(&log);
    return std::make_tuple(tr.losses(), flat_params(m), log.str());
  };
  const auto a = run();
  const auto b = run();
  CHECK(std::get<0>(a).size() == 50);
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
  CHECK(std::get<2>(a).rfind("step,loss\n10,", 0) == 0);
}

TEST_CASE("evaluation splits and tables") {
  const auto splits = eval_splits(tiny_data(), 3, 4, 9);
  REQUIRE(splits.size() == 3);
  for (const EvalSplit& s : splits) {
    CHECK(s.context.size() == 3);
    CHECK(s.queries.size() == 4);
    std::set<int> all(s.context.begin(), s.context.end());
    all.insert(s.queries.begin(), s.queries.end());
    CHECK(all.size() == 7);
  }
  CHECK(eval_splits(tiny_data(), 3, 4, 9)[1].queries == splits[1].queries);
  CHECK(eval_splits(tiny_data(), 3, 20, 9)[0].queries.size() == 5);
  CHECK_THROWS_AS(eval_splits(tiny_data(), 8, 1, 9), Error);

  EvalTable table;
  table.rows = {{0, 1, 10.0}, {0, 2, 20.0}, {1, 4, 30.0}};
  const auto means = table.scene_means();
  REQUIRE(means.size() == 2);
  CHECK(means[0].second == 15.0);
  CHECK(table.mean() == doctest::Approx(22.5));
  std::ostringstream csv;
  table.write_csv(csv);
  CHECK(csv.str().rfind("scene,query_index,psnr\n0,1,", 0) == 0);
}

TEST_CASE("evaluation is deterministic and leaves the model untouched") {
  const model::GbtModel<float> m(small_config(model::Variant::kGbt), 8);
  const std::vector<float> before = flat_params(m);
  EvalOptions opts;
  opts.num_queries = 2;
  opts.seed = 3;
  opts.threads = 2;
  const EvalTable a = evaluate(m, tiny_data(), opts);
  opts.threads = 1;
  const EvalTable b = evaluate(m, tiny_data(), opts);
  CHECK(flat_params(m) == before);
  REQUIRE(a.rows.size() == 6);
  for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].psnr == b.rows[i].psnr);

  const auto noise = run_noise_sweep(m, tiny_data(), {0.0, 0.1}, opts);
  REQUIRE(noise.size() == 2);
  CHECK(noise[0].psnr_mean == doctest::Approx(a.mean()).epsilon(1e-12));
  CHECK(noise[1].psnr_mean != noise[0].psnr_mean);
  std::ostringstream csv;
  write_noise_csv(csv, noise);
  CHECK(csv.str().rfind("sigma,psnr_mean\n0", 0) == 0);
}

TEST_CASE("viewpoint sweep and cyclic distance") {
  CHECK(cyclic_distance(0, {10, 20, 30}, 40) == 10);
  CHECK(cyclic_distance(11, {10, 20, 30}, 40) == 1);
  CHECK(cyclic_distance(39, {10, 20, 30}, 40) == 9);
  CHECK(cyclic_distance(35, {10, 20, 30}, 40) == 5);
  CHECK(cyclic_distance(1, {39}, 40) == 2);

  const model::GbtModel<float> m(small_config(model::Variant::kGbt), 9);
  const auto points = run_viewpoint_sweep(m, tiny_data().scenes[0], {1, 4, 6}, 1);
  REQUIRE(points.size() == 5);
  CHECK(points[0].index == 0);
  CHECK(points[1].index == 2);
  for (const SweepPoint& p : points) CHECK(std::isfinite(p.psnr));
  std::ostringstream csv;
  write_sweep_csv(csv, points);
  CHECK(csv.str().rfind("index,psnr\n0,", 0) == 0);
}

TEST_CASE("ablation runs every variant on shared data") {
  TrainConfig t = tiny_train();
  t.max_steps = 2;
  EvalOptions opts;
  opts.num_queries = 1;
  const std::vector<model::Variant> variants{model::Variant::kGbt, model::Variant::kSrtStar};
  const AblationResult r = run_ablation(tiny_data(), tiny_data(), variants, small_config(model::Variant::kGbtNoBias), t,
                                        opts, 1);
  CHECK(r.rows.size() == 6);
  CHECK(std::isfinite(r.mean(model::Variant::kGbt)));
  CHECK(r.mean(model::Variant::kGbt) != r.mean(model::Variant::kSrtStar));
  std::ostringstream csv;
  r.write_csv(csv);
  CHECK(csv.str().rfind("variant,scene,psnr_mean\ngbt,0,", 0) == 0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const Checkpoint ckpt = trained_checkpoint();
  const std::vector<std::uint8_t> bytes = serialize(ckpt);
  CHECK(bytes == serialize(trained_checkpoint()));
  const Checkpoint back = deserialize(bytes);
  CHECK(serialize(back) == bytes);
  CHECK(back.config == ckpt.config);
  CHECK(back.step == 3);
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step_count == 3);

  model::GbtModel<float> m(small_config(model::Variant::kGbt), 99);
  nn::AdamState<float> opt;
  apply_checkpoint(back, m, &opt);
  CHECK(serialize(make_checkpoint(m, 3, &opt)) == bytes);

  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", ckpt);
  CHECK(load_checkpoint(dir / "a.ckpt").tensors.size() == ckpt.tensors.size());
  CHECK(testing::read_file(dir / "a.ckpt") == std::string(bytes.begin(), bytes.end()));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const std::vector<std::uint8_t> bytes = serialize(make_checkpoint(model::GbtModel<float>(small_config(model::Variant::kGbt), 1), 0));
  auto code_of = [](const std::vector<std::uint8_t>& b) {
    try {
      deserialize(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kNumericFailure;
  };
  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  CHECK(code_of(bad) == ErrorCode::kBadMagic);
  bad = bytes;
  bad[4] = 7;
  CHECK(code_of(bad) == ErrorCode::kUnsupportedVersion);
  CHECK(code_of({bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2)}) == ErrorCode::kIoError);
  CHECK(code_of({bytes.begin(), bytes.begin() + 2}) == ErrorCode::kBadMagic);
  bad = bytes;
  bad.push_back(0);
  CHECK(code_of(bad) == ErrorCode::kIoError);
}

TEST_CASE("applying a checkpoint to a different model fails") {
  const Checkpoint ckpt = make_checkpoint(model::GbtModel<float>(small_config(model::Variant::kGbt), 1), 0);
  model::GbtModel<float> nb(small_config(model::Variant::kGbtNoBias), 1);
  try {
    apply_checkpoint(ckpt, nb);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatchOnLoad);
  }
  Checkpoint edited = ckpt;
  edited.tensors[0].tensor = nn::Tensor<float>({1});
  model::GbtModel<float> same(small_config(model::Variant::kGbt), 1);
  CHECK_THROWS_AS(apply_checkpoint(edited, same), Error);
}
