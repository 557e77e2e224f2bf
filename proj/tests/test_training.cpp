// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gtex/boxcar.hpp"
#include "gtex/gradcheck.hpp"
#include "gtex/train.hpp"

using namespace gtex;
using ad::Tape;
using ad::Tensor;

namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.dims = Dims{.shape = 8, .tex = 8, .pose = 4, .lift = 8, .loc = 4};
  c.mlp_warp = c.mlp_sdf = c.mlp_tex = MlpSpec{16, 2};
  c.batch = BatchConfig{.sdf_points = 64, .surface_points = 32, .template_points = 32};
  c.seed = 7;
  c.steps = 4;
  return c;
}

/// Small prepared boxcar family, built once.
const TrainingSet& family_set() {
  static TrainingSet set = [] {
    const fs::path raw = fs::temp_directory_path() / "gtex_train_raw";
    const fs::path prep = fs::temp_directory_path() / "gtex_train_prep";
    fs::remove_all(raw);
    fs::remove_all(prep);
    write_family(generate_family(5, 2, {}, 12), raw);
    prepare_dataset(raw, prep, PrepareOptions{.sdf_count = 1500, .surface_count = 800, .seed = 3});
    return load_training_set(load_manifest(prep));
  }();
  return set;
}

LatentCode make_code(CodeKind kind, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal(0, 0.01);
  return LatentCode{kind, Tensor({dim}, std::move(v), true)};
}

}  // namespace

TEST(LossGeo, PerfectPredictionIsZeroAndOracleMatches) {
  TrainConfig cfg = tiny_config();
  ImplicitModel model = cfg.build_model();
  const TrainingInstance& inst = family_set().instances[0];
  LatentCode zs = make_code(CodeKind::Shape, 8, 1);

  std::vector<std::size_t> batch = {0, 3, 5, 11, 42, 99};
  Tensor points = Tensor::zeros({batch.size(), 3});
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int k = 0; k < 3; ++k) points.at(i, k) = inst.sdf.points[batch[i]][k];
  Tensor pred = model.instance_sdf(nullptr, points, zs);

  // perfect: targets equal to the model's own (clamped) predictions
  SdfSamples perfect = inst.sdf;
  for (std::size_t i = 0; i < batch.size(); ++i) perfect.sdf[batch[i]] = pred.value()[i];
  EXPECT_DOUBLE_EQ(loss_geo(nullptr, model, perfect, batch, zs, 0.1).item(), 0.0);

  // loop oracle on the real targets
  double expect = 0;
  auto clampv = [](double v) { return std::clamp(v, -0.1, 0.1); };
  for (std::size_t i = 0; i < batch.size(); ++i)
    expect += std::abs(clampv(pred.value()[i]) - clampv(inst.sdf.sdf[batch[i]]));
  expect /= static_cast<double>(batch.size());
  EXPECT_NEAR(loss_geo(nullptr, model, inst.sdf, batch, zs, 0.1).item(), expect, 1e-12);

  EXPECT_THROW(loss_geo(nullptr, model, inst.sdf, {}, zs, 0.1), Error);
}

TEST(LossTex, PerfectPredictionIsZeroAndOracleMatches) {
  TrainConfig cfg = tiny_config();
  ImplicitModel model = cfg.build_model();
  const TrainingInstance& inst = family_set().instances[0];
  LatentCode zs = make_code(CodeKind::Shape, 8, 2);
  LatentCode zt = make_code(CodeKind::Texture, 8, 3);
  LocalFeature zl = LocalFeature::zero(4);

  std::vector<std::size_t> batch = {1, 2, 8, 13};
  Tensor points = Tensor::zeros({batch.size(), 3});
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int k = 0; k < 3; ++k) points.at(i, k) = inst.surface.points[batch[i]][k];
  Tensor pred = model.surface_color(nullptr, points, zs, zt, nullptr, zl, false);

  SurfaceSamples perfect = inst.surface;
  for (std::size_t i = 0; i < batch.size(); ++i)
    perfect.colors[batch[i]] = {pred.at(i, 0), pred.at(i, 1), pred.at(i, 2)};
  EXPECT_DOUBLE_EQ(loss_tex(nullptr, model, perfect, batch, zs, zt, nullptr, zl).item(), 0.0);

  double expect = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int k = 0; k < 3; ++k)
      expect += std::abs(pred.at(i, k) - inst.surface.colors[batch[i]][k]);
  expect /= static_cast<double>(batch.size());
  EXPECT_NEAR(loss_tex(nullptr, model, inst.surface, batch, zs, zt, nullptr, zl).item(),
              expect, 1e-12);
}

TEST(LossTpSdf, OracleMatchesAndWarpNeverTouched) {
  TrainConfig cfg = tiny_config();
  ImplicitModel model = cfg.build_model();
  const TrainingInstance& tmpl = family_set().tmpl();

  std::vector<std::size_t> batch = {0, 7, 21, 33, 60};
  Tensor points = Tensor::zeros({batch.size(), 3});
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int k = 0; k < 3; ++k) points.at(i, k) = tmpl.sdf.points[batch[i]][k];
  Tensor pred = model.template_sdf(nullptr, points);
  double expect = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    expect += std::abs(pred.value()[i] - tmpl.sdf.sdf[batch[i]]);
  expect /= static_cast<double>(batch.size());

  Tape tape;
  Tensor loss = loss_tp_sdf(&tape, model, tmpl.sdf, batch);
  EXPECT_NEAR(loss.item(), expect, 1e-12);

  ad::backward(loss, tape);
  for (const auto& p : model.parameters()) {
    if (p.name().rfind("warp.", 0) == 0) {
      for (double g : p.grad()) EXPECT_EQ(g, 0.0) << p.name();
    }
  }
}

TEST(LossKps, OracleAndNameMismatch) {
  TrainConfig cfg = tiny_config();
  ImplicitModel model = cfg.build_model();
  const TrainingInstance& inst = family_set().instances[1];
  const TrainingInstance& tmpl = family_set().tmpl();
  LatentCode zs = make_code(CodeKind::Shape, 8, 4);

  Tensor points = Tensor::zeros({inst.keypoints.size(), 3});
  for (std::size_t i = 0; i < inst.keypoints.size(); ++i)
    for (int k = 0; k < 3; ++k) points.at(i, k) = inst.keypoints.positions[i][k];
  Tensor warped = model.warp(nullptr, points, zs);
  double expect = 0;
  for (std::size_t i = 0; i < inst.keypoints.size(); ++i)
    for (int k = 0; k < 3; ++k)
      expect += std::abs(warped.at(i, k) - tmpl.keypoints.positions[i][k]);
  expect /= static_cast<double>(inst.keypoints.size());
  EXPECT_NEAR(loss_kps(nullptr, model, inst.keypoints, tmpl.keypoints, zs).item(), expect,
              1e-12);

  // near-identity warp on identical keypoint sets: loss within init tolerance
  EXPECT_LE(loss_kps(nullptr, model, tmpl.keypoints, tmpl.keypoints, zs).item(), 3e-3);

  Keypoints renamed = inst.keypoints;
  renamed.names[0] = "not_a_template_name";
  EXPECT_THROW(loss_kps(nullptr, model, renamed, tmpl.keypoints, zs), Error);
}

TEST(LossPose, HandValuesAndSymmetry) {
  Tensor perfect({2}, {std::sin(0.7), std::cos(0.7)});
  EXPECT_NEAR(loss_pose(nullptr, perfect, 0.7).item(), 0.0, 1e-15);

  Tensor o({2}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(loss_pose(nullptr, o, M_PI).item(), 2.0);

  // reflecting prediction and truth together (yaw -> -yaw flips the sin
  // component) leaves the loss unchanged
  Tensor skew({2}, {0.3, 0.8});
  Tensor mirrored({2}, {-0.3, 0.8});
  EXPECT_NEAR(loss_pose(nullptr, skew, 0.4).item(),
              loss_pose(nullptr, mirrored, -0.4).item(), 1e-12);
}

TEST(TotalLoss, WeightedSumArithmetic) {
  auto c = [](double v) { return Tensor::scalar(v); };
  LossComponents parts{c(1), c(2), c(3), c(4), c(5)};
  EXPECT_DOUBLE_EQ(total_loss(nullptr, parts, LossWeights{1, 1, 1, 1}).item(), 15.0);
  EXPECT_DOUBLE_EQ(total_loss(nullptr, parts, LossWeights{0, 0, 0, 0}).item(), 1.0);
  EXPECT_DOUBLE_EQ(total_loss(nullptr, parts, LossWeights{0.5, 0.25, 0.25, 0}).item(), 3.75);

  LossComponents bad{c(1), c(std::numeric_limits<double>::infinity()), c(3), c(4), c(5)};
  try {
    total_loss(nullptr, bad, LossWeights{});
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("geo"), std::string::npos);
  }
}

TEST(Gradients, CodeDisentanglementExactZeros) {
  TrainConfig cfg = tiny_config();
  ImplicitModel model = cfg.build_model();
  const TrainingSet& set = family_set();
  const TrainingInstance& inst = set.instances[0];
  LatentCode zs = make_code(CodeKind::Shape, 8, 5);
  LatentCode zt = make_code(CodeKind::Texture, 8, 6);
  Tensor o({2}, {0.1, 0.9}, true);
  std::vector<std::size_t> batch = {0, 1, 2, 3};

  auto grads_all_zero = [](const Tensor& t) {
    for (double g : t.grad())
      if (g != 0.0) return false;
    return true;
  };

  {  // geo + kps + tp_sdf must not reach z_tex
    Tape tape;
    Tensor loss = ad::add(
        &tape,
        ad::add(&tape, loss_geo(&tape, model, inst.sdf, batch, zs, cfg.clamp),
                loss_kps(&tape, model, inst.keypoints, set.tmpl().keypoints, zs)),
        loss_tp_sdf(&tape, model, set.tmpl().sdf, batch));
    ad::backward(loss, tape);
    EXPECT_TRUE(grads_all_zero(zt.vector));
    EXPECT_FALSE(grads_all_zero(zs.vector));
    zs.vector.zero_grad();
  }
  {  // tp_sdf + pose must not reach z_shape
    Tape tape;
    Tensor loss = ad::add(&tape, loss_tp_sdf(&tape, model, set.tmpl().sdf, batch),
                          loss_pose(&tape, o, 0.25));
    ad::backward(loss, tape);
    EXPECT_TRUE(grads_all_zero(zs.vector));
    EXPECT_FALSE(grads_all_zero(o));
  }
}

TEST(Gradients, FullObjectivePassesFiniteDifferenceCheck) {
  TrainConfig cfg = tiny_config();
  cfg.pose_conditioning = true;
  ImplicitModel model = cfg.build_model();
  const TrainingSet& set = family_set();

  LatentCode zs = make_code(CodeKind::Shape, 8, 11);
  LatentCode zt = make_code(CodeKind::Texture, 8, 12);
  Tensor o({2}, {0.05, 0.9}, true);
  LocalFeature zl = LocalFeature::zero(4);
  std::vector<std::size_t> sdf_batch = {2, 9, 17, 31, 44, 58};
  std::vector<std::size_t> surf_batch = {1, 6, 23, 40};
  std::vector<std::size_t> tp_batch = {3, 12, 29};
  const TrainingInstance& inst = set.instances[1];

  // Generic keypoint targets: the boxcar's mirror symmetry parks several
  // residual coordinates exactly on the L1 kink under the near-identity
  // warp, where central differences are not a valid gradient estimate.
  Keypoints generic_kps = inst.keypoints;
  Keypoints generic_targets = set.tmpl().keypoints;
  Rng kp_rng(31);
  for (std::size_t i = 0; i < generic_targets.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      generic_kps.positions[i][k] += kp_rng.uniform(-0.05, 0.05);
      generic_targets.positions[i][k] += kp_rng.uniform(-0.05, 0.05);
    }
  }

  auto objective = [&](Tape* tape) {
    LatentCode zp = model.lift_pose(tape, o);
    LossComponents parts;
    // clamp 0: the untrained field saturates a 0.1 band, which would zero the
    // geometry gradients and make this check vacuous for them
    parts.geo = loss_geo(tape, model, inst.sdf, sdf_batch, zs, 0.0);
    parts.tex = loss_tex(tape, model, inst.surface, surf_batch, zs, zt, &zp, zl);
    parts.kps = loss_kps(tape, model, generic_kps, generic_targets, zs);
    parts.tp_sdf = loss_tp_sdf(tape, model, set.tmpl().sdf, tp_batch);
    parts.pose = loss_pose(tape, o, inst.yaw);
    return total_loss(tape, parts, cfg.weights);
  };

  std::vector<Tensor> params = model.parameters();
  params.push_back(zs.vector);
  params.push_back(zt.vector);
  params.push_back(o);
  // stride keeps the unit test quick; the acceptance suite sweeps every coordinate
  EXPECT_LE(ad::grad_check_params(objective, params, 1e-5, 3), 1e-5);
}

TEST(Train, StepsZeroEqualsInitialization) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 0;
  const TrainingSet& set = family_set();
  TrainResult r = train(set.instances, set.tmpl(), cfg);
  ImplicitModel fresh = cfg.build_model();
  auto a = r.model.parameters();
  auto b = fresh.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j)
      EXPECT_EQ(a[i].value()[j], b[i].value()[j]);
  }
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, DeterministicBitIdenticalCheckpoints) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 3;
  const TrainingSet& set = family_set();
  const fs::path dir = fs::temp_directory_path() / "gtex_determinism";
  fs::create_directories(dir);

  auto run = [&](const fs::path& out) {
    TrainResult r = train(set.instances, set.tmpl(), cfg);
    save_checkpoint(make_checkpoint(r.model, r.registry, cfg, set.tmpl().instance_id,
                                    cfg.steps),
                    out);
  };
  run(dir / "a.ckpt");
  run(dir / "b.ckpt");

  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  EXPECT_EQ(sa, sb);
  EXPECT_FALSE(sa.empty());
}

TEST(Train, AbsentInstanceCodesUntouched) {
  TrainConfig cfg = tiny_config();
  cfg.batch.instances_per_step = 1;
  cfg.steps = 1;
  const TrainingSet& set = family_set();

  cfg.steps = 0;
  TrainResult init = train(set.instances, set.tmpl(), cfg);
  cfg.steps = 1;
  TrainResult stepped = train(set.instances, set.tmpl(), cfg);

  const auto ids = init.registry.ids();
  ASSERT_EQ(ids.size(), 3u);  // template + 2 instances
  int changed = 0, unchanged = 0;
  for (const auto& id : ids) {
    const auto before = init.registry.shape(id).vector;
    const auto after = stepped.registry.shape(id).vector;
    bool same = true;
    for (std::size_t i = 0; i < before.size(); ++i)
      same &= before.value()[i] == after.value()[i];
    same ? ++unchanged : ++changed;
  }
  EXPECT_EQ(changed, 1);
  EXPECT_EQ(unchanged, 2);
}

TEST(Train, LossLogHasAllColumnsAndFiniteValues) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 4;
  const TrainingSet& set = family_set();
  TrainResult r = train(set.instances, set.tmpl(), cfg);
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_EQ(loss_csv_header(), "step,loss_total,loss_tex,loss_geo,loss_kps,loss_tp_sdf,loss_pose");
  for (const auto& row : r.log) {
    EXPECT_TRUE(std::isfinite(row.total));
    EXPECT_NEAR(row.total,
                row.tex + cfg.weights.w_g * row.geo + cfg.weights.w_k * row.kps +
                    cfg.weights.w_t * row.tp_sdf + cfg.weights.w_p * row.pose,
                1e-12);
  }
}

TEST(Checkpoint, RoundTripBitExact) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 2;
  const TrainingSet& set = family_set();
  TrainResult r = train(set.instances, set.tmpl(), cfg);
  Checkpoint ckpt = make_checkpoint(r.model, r.registry, cfg, set.tmpl().instance_id, 2);

  const fs::path path = fs::temp_directory_path() / "gtex_rt.ckpt";
  save_checkpoint(ckpt, path);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.step, 2u);
  EXPECT_EQ(back.template_id, set.tmpl().instance_id);
  ASSERT_EQ(back.tensors.size(), ckpt.tensors.size());
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].first, ckpt.tensors[i].first);
    const auto& a = ckpt.tensors[i].second;
    const auto& b = back.tensors[i].second;
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(a.value()[j], b.value()[j]);
  }

  RestoredModel restored = restore_model(back);
  Tensor probe({2, 3}, {0.1, 0.2, 0.3, -0.4, 0.0, 0.5});
  Tensor expect = r.model.instance_sdf(nullptr, probe, r.registry.shape("car_000"));
  Tensor got = restored.model.instance_sdf(nullptr, probe, restored.registry.shape("car_000"));
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(expect.value()[i], got.value()[i]);
}

TEST(Checkpoint, CorruptedByteRejectedByChecksum) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 0;
  const TrainingSet& set = family_set();
  TrainResult r = train(set.instances, set.tmpl(), cfg);
  const fs::path path = fs::temp_directory_path() / "gtex_corrupt.ckpt";
  save_checkpoint(make_checkpoint(r.model, r.registry, cfg, set.tmpl().instance_id, 0), path);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(200);
  char byte;
  f.seekg(200);
  f.read(&byte, 1);
  byte ^= 0x40;
  f.seekp(200);
  f.write(&byte, 1);
  f.close();

  try {
    load_checkpoint(path);
    FAIL() << "expected checksum error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(SampleCache, RoundTripAndCorruptionDetection) {
  const TrainingInstance& inst = family_set().instances[0];
  InstanceSamples s{99, inst.sdf, inst.surface};
  const fs::path path = fs::temp_directory_path() / "gtex_cache.samples";
  save_samples(s, path);
  InstanceSamples back = load_samples(path);
  EXPECT_EQ(back.seed, 99u);
  ASSERT_EQ(back.sdf.size(), inst.sdf.size());
  for (std::size_t i = 0; i < inst.sdf.size(); ++i) {
    EXPECT_EQ(back.sdf.sdf[i], inst.sdf.sdf[i]);
    EXPECT_EQ(back.sdf.points[i].x, inst.sdf.points[i].x);
  }
  ASSERT_EQ(back.surface.size(), inst.surface.size());
  EXPECT_EQ(back.surface.colors[5].y, inst.surface.colors[5].y);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(64);
  f.write("\x7f", 1);
  f.close();
  EXPECT_THROW(load_samples(path), Error);
}

TEST(Config, JsonRoundTripAndDefaults) {
  TrainConfig c;
  c.dims.shape = 48;
  c.weights.w_k = 0.75;
  c.batch.sdf_points = 1234;
  c.pose_conditioning = true;
  nlohmann::json j = config_to_json(c);
  TrainConfig back = config_from_json(j);
  EXPECT_EQ(back.dims.shape, 48u);
  EXPECT_DOUBLE_EQ(back.weights.w_k, 0.75);
  EXPECT_EQ(back.batch.sdf_points, 1234u);
  EXPECT_TRUE(back.pose_conditioning);

  TrainConfig partial = config_from_json(nlohmann::json{{"seed", 9}});
  EXPECT_EQ(partial.seed, 9u);
  EXPECT_EQ(partial.dims.shape, 64u);  // untouched defaults
  EXPECT_DOUBLE_EQ(partial.clamp, 0.1);
}

TEST(Train, DivergenceGuardNamesStep) {
  TrainConfig cfg = tiny_config();
  cfg.optimizer.lr = 1e12;  // force blowup
  cfg.steps = 50;
  const TrainingSet& set = family_set();
  try {
    train(set.instances, set.tmpl(), cfg);
    SUCCEED() << "did not diverge; acceptable";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}
