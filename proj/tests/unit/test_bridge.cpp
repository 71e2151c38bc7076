#include <doctest.h>

#include <filesystem>

#include "balign/bridge.hpp"
#include "balign/errors.hpp"
#include "support.hpp"

using namespace balign;

namespace {

EstimatorConfig small_estimator() {
  EstimatorConfig c;
  c.stacks = 1;
  c.channels = 4;
  c.group_channels = 1;
  c.hourglass_depth = 1;
  return c;
}

RegressorConfig small_regressor(int landmarks, bool fused) {
  RegressorConfig c;
  c.landmarks = landmarks;
  c.channels = 2;
  c.blocks_per_stage = 1;
  if (fused) c.fusion_levels = {FusionLevel::Input, FusionLevel::Stage1};
  return c;
}

std::vector<Sample> pick(const std::vector<MultiSchemeSample>& all, int scheme, int begin, int end) {
  std::vector<Sample> out;
  for (int i = begin; i < end; ++i)
    out.push_back(Sample{all[i].image, all[i].landmarks[scheme], all[i].source_id, false, all[i].occluded});
  return out;
}

}  // namespace

TEST_CASE("same scheme bridge is the standard pipeline") {
  const Estimator g(small_estimator(), 1);
  const Regressor r(small_regressor(68, true), 2);
  std::mt19937_64 rng(3);
  const Tensor images = testutil::random_tensor({3, 3, 64, 64}, rng, 0, 1);
  const Tensor a = bridge_forward(images, g, r, false);
  const Tensor b = predict_coords(r, images, predict_heatmaps(g, images));
  CHECK(testutil::max_abs_diff(a, b) == 0.0);
  const Tensor first({3, 64, 64}, std::vector<double>(images.storage().begin(), images.storage().begin() + 3 * 64 * 64));
  const Tensor one = bridge_forward(first, g, r, false);
  CHECK(one.shape() == Shape{1, 136});
}

TEST_CASE("68-point estimator feeds a 29-point regressor") {
  const Estimator g(small_estimator(), 1);
  const Regressor r(small_regressor(29, true), 2);
  std::mt19937_64 rng(4);
  const Tensor images = testutil::random_tensor({2, 3, 64, 64}, rng, 0, 1);
  CHECK(bridge_forward(images, g, r, false).shape() == Shape{2, 58});
}

TEST_CASE("without boundary the regressor sees zero maps") {
  const Estimator g(small_estimator(), 1);
  const Regressor r(small_regressor(29, true), 2);
  std::mt19937_64 rng(5);
  const Tensor images = testutil::random_tensor({2, 3, 64, 64}, rng, 0, 1);
  const Tensor a = bridge_forward(images, g, r, true);
  const Tensor b = predict_coords(r, images, Tensor({2, 13, 16, 16}));
  CHECK(testutil::max_abs_diff(a, b) == 0.0);
  CHECK(testutil::max_abs_diff(a, bridge_forward(images, g, r, false)) > 0.0);
}

TEST_CASE("boundary names must agree") {
  const auto a = scheme_by_id("300w_68");
  auto b = scheme_by_id("cofw_29");
  CHECK_NOTHROW(check_shared_boundaries(a, b));
  std::swap(b.boundaries[1], b.boundaries[2]);
  CHECK_THROWS_AS(check_shared_boundaries(a, b), ConfigError);
  b.boundaries.pop_back();
  CHECK_THROWS_AS(check_shared_boundaries(a, b), ConfigError);
}

TEST_CASE("bridge config json") {
  BridgeConfig c;
  c.estimator_checkpoint = "g.json";
  c.source_scheme = "300w_68";
  c.target_scheme = "cofw_29";
  c.regressor = small_regressor(29, true);
  c.without_boundary = true;
  CHECK_NOTHROW(c.validate());
  const BridgeConfig back = bridge_config_from_json(to_json(c), "/runs");
  CHECK(back.estimator_checkpoint == std::filesystem::path("/runs/g.json"));
  CHECK(back.without_boundary);
  CHECK(to_json(back.regressor) == to_json(c.regressor));
  auto j = to_json(c);
  j["extra"] = 0;
  CHECK_THROWS_AS(bridge_config_from_json(j), ConfigError);
  CHECK_THROWS_AS(bridge_config_from_json(nlohmann::json{{"source_scheme", "300w_68"}}), ConfigError);
  c.regressor.landmarks = 68;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("estimator loads from a run checkpoint") {
  TrainConfig cfg;
  cfg.estimator = small_estimator();
  cfg.regressor = small_regressor(68, true);
  cfg.discriminator.channels = 2;
  Networks nets = make_networks(cfg);
  const auto path = std::filesystem::temp_directory_path() / "balign_bridge_ck.json";
  save_checkpoint(path, make_checkpoint(nets, cfg, 0));
  const Estimator g = load_estimator(path);
  std::filesystem::remove(path);
  for (const auto& [name, v] : nets.estimator->params().entries())
    CHECK(testutil::max_abs_diff(v.value(), g.params().get(name).value()) == 0.0);
  CHECK_THROWS_AS(load_estimator("/nonexistent/ck.json"), DataError);
}

TEST_CASE("bridged heatmaps beat zero heatmaps on the target scheme") {
  const auto s68 = scheme_by_id("300w_68"), s29 = scheme_by_id("cofw_29");
  const auto all = synth_faces_multi(160, 31, {s68, s29});

  // source estimator trained under the 68-point scheme
  TrainConfig src;
  src.estimator.stacks = 1;
  src.estimator.channels = 16;
  src.regressor.channels = 4;
  src.adversarial = false;
  src.max_epochs = 10;
  const TrainingSet src_train = make_training_set(pick(all, 0, 0, 120), s68, src.sigma);
  const TrainingSet src_val = make_training_set(pick(all, 0, 120, 160), s68, src.sigma);
  Networks source = make_networks(src);
  train(source, src, src_train, src_val);

  const TrainingSet tgt_train = make_training_set(pick(all, 1, 0, 120), s29, src.sigma);
  const TrainingSet tgt_val = make_training_set(pick(all, 1, 120, 160), s29, src.sigma);
  TrainConfig tgt;
  tgt.regressor = small_regressor(29, true);
  tgt.regressor.channels = 4;
  tgt.regressor.fusion_levels = {FusionLevel::Input, FusionLevel::Stage1, FusionLevel::Stage2, FusionLevel::Stage3,
                                 FusionLevel::Stage4};
  tgt.max_epochs = 8;
  tgt.patience = 8;
  TrainConfig bridged = tgt;
  Networks with = make_bridge_networks(*source.estimator, bridged);
  const TrainResult a = train(with, bridged, tgt_train, tgt_val);

  TrainConfig zeroed = tgt;
  zeroed.mode = TrainMode::Regressor;
  zeroed.zero_heatmaps = true;
  zeroed.estimator = bridged.estimator;
  zeroed.discriminator = bridged.discriminator;
  Networks without = make_networks(zeroed);
  CHECK_FALSE(without.estimator);
  const TrainResult b = train(without, zeroed, tgt_train, tgt_val);
  MESSAGE("bridged ", a.best_val_nme, " zero maps ", b.best_val_nme);
  CHECK(a.best_val_nme < b.best_val_nme);
}
