#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "balign/errors.hpp"
#include "balign/models.hpp"
#include "support.hpp"

using namespace balign;
using testutil::random_tensor;
using testutil::parameter_gradient_check;

namespace {

Var random_input(const Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return constant(random_tensor(shape, rng, lo, hi));
}

double nonzero_grad_fraction(const nn::ParamStore& ps) {
  std::size_t nonzero = 0, total = 0;
  for (const auto& [name, v] : ps.entries()) {
    total += v.value().size();
    if (!v.has_grad()) continue;
    for (double g : v.grad().storage()) nonzero += g != 0.0;
  }
  return static_cast<double>(nonzero) / static_cast<double>(total);
}

std::vector<Var> split(const Var& x, int groups) {
  const int g = x.shape()[1] / groups;
  std::vector<Var> out;
  for (int k = 0; k < groups; ++k) out.push_back(slice_channels(x, k * g, g));
  return out;
}

}  // namespace

TEST_CASE("estimator shape contract over the test matrix") {
  for (int S : {64, 128})
    for (int stacks : {1, 2})
      for (int C : {4, 8}) {
        EstimatorConfig cfg;
        cfg.input_side = S;
        cfg.stacks = stacks;
        cfg.channels = C;
        Estimator g(cfg, 1);
        const auto out = g.forward(random_input({1, 3, S, S}, 2));
        REQUIRE(out.size() == static_cast<std::size_t>(stacks));
        for (const auto& m : out) {
          CHECK(m.shape() == Shape{1, 13, S / 4, S / 4});
          for (double v : m.value().storage()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
          }
        }
      }
}

TEST_CASE("four stacks at 256 give four 13x64x64 maps") {
  EstimatorConfig cfg;
  cfg.input_side = 256;
  cfg.stacks = 4;
  cfg.channels = 4;
  cfg.group_channels = 1;
  Estimator g(cfg, 3);
  const auto out = g.forward(random_input({1, 3, 256, 256}, 4));
  REQUIRE(out.size() == 4);
  for (const auto& m : out) CHECK(m.shape() == Shape{1, 13, 64, 64});
}

TEST_CASE("zero-initialised estimator heads output 0.5") {
  EstimatorConfig cfg;
  cfg.channels = 4;
  cfg.zero_init_heads = true;
  Estimator g(cfg, 5);
  const auto out = g.forward(random_input({2, 3, 64, 64}, 6));
  for (const auto& m : out)
    for (double v : m.value().storage()) CHECK(v == 0.5);
}

TEST_CASE("estimator rejects bad shapes and configs") {
  EstimatorConfig cfg;
  cfg.channels = 4;
  Estimator g(cfg, 1);
  CHECK_THROWS_AS(g.forward(random_input({1, 3, 32, 32}, 1)), DimensionError);
  CHECK_THROWS_AS(g.forward(random_input({1, 1, 64, 64}, 1)), DimensionError);
  cfg.stacks = 0;
  CHECK_THROWS_AS(Estimator(cfg, 1), ConfigError);
  cfg.stacks = 1;
  cfg.input_side = 62;
  CHECK_THROWS_AS(Estimator(cfg, 1), ConfigError);
}

TEST_CASE("default message tree spans the thirteen boundaries") {
  const auto tree = default_message_tree();
  CHECK(tree.size() == 12);
  CHECK_NOTHROW(validate_tree(tree, 13));
  // contour is the root
  for (const auto& e : tree) CHECK(e.to != 0);
}

TEST_CASE("tree validation") {
  CHECK_THROWS_AS(validate_tree({{0, 1}}, 3), ConfigError);                  // node 2 unreachable
  CHECK_THROWS_AS(validate_tree({{0, 1}, {1, 2}, {2, 0}}, 3), ConfigError);  // cycle
  CHECK_THROWS_AS(validate_tree({{0, 1}, {0, 1}}, 3), ConfigError);
  CHECK_THROWS_AS(validate_tree({{0, 1}, {0, 5}}, 3), ConfigError);
  CHECK_THROWS_AS(validate_tree({{0, 1}, {2, 1}}, 3), ConfigError);  // two parents
  CHECK_NOTHROW(validate_tree({{2, 0}, {2, 1}}, 3));
  EstimatorConfig cfg;
  cfg.tree = {{0, 1}};
  CHECK_THROWS_AS(Estimator(cfg, 1), ConfigError);
}

TEST_CASE("zeroed message passing is the identity") {
  nn::ParamStore ps;
  nn::Init init(7);
  MessagePassing mp(ps, init, "mp", 13, 2, default_message_tree(), true);
  mp.zero();
  const Var x = random_input({2, 26, 8, 8}, 8, -1, 1);
  const auto groups = split(x, 13);
  const auto prev = split(random_input({2, 26, 8, 8}, 9, -1, 1), 13);
  const auto out = mp(groups, &prev);
  REQUIRE(out.size() == 13);
  for (int k = 0; k < 13; ++k) {
    CHECK(out[k].shape() == Shape{2, 2, 8, 8});
    CHECK(testutil::max_abs_diff(out[k].value(), groups[k].value()) == 0.0);
  }
}

TEST_CASE("message passing only reaches the receiver of a live edge") {
  nn::ParamStore ps;
  nn::Init init(10);
  MessagePassing mp(ps, init, "mp", 3, 2, {{0, 1}, {0, 2}}, false);
  mp.zero();
  // revive only the upward transform of edge 0 -> 1
  std::mt19937_64 rng(11);
  mp.upward(0).weight.mutable_value() = random_tensor(mp.upward(0).weight.shape(), rng);
  const auto groups = split(random_input({1, 6, 5, 5}, 12, -1, 1), 3);
  auto doubled = groups;
  doubled[1] = scale(groups[1], 2.0);
  const auto a = mp(groups, nullptr);
  const auto b = mp(doubled, nullptr);
  CHECK(testutil::max_abs_diff(a[0].value(), b[0].value()) > 1e-6);
  CHECK(testutil::max_abs_diff(a[2].value(), b[2].value()) == 0.0);
  // the difference at the receiver is the message carried by the extra copy
  const Var message = mp.upward(0)(groups[1]);
  CHECK(testutil::max_abs_diff(sub(b[0], a[0]).value(), message.value()) < 1e-12);
}

TEST_CASE("input fusion layout") {
  const Var image = random_input({2, 3, 8, 8}, 13);
  Tensor ones({2, 13, 8, 8});
  ones.fill(1.0);
  const Var all = input_fusion(image, constant(ones));
  CHECK(all.shape() == Shape{2, 42, 8, 8});
  for (int k = 0; k <= 13; ++k)
    CHECK(testutil::max_abs_diff(slice_channels(all, 3 * k, 3).value(), image.value()) == 0.0);
  const Var none = input_fusion(image, constant(Tensor({2, 13, 8, 8})));
  CHECK(testutil::max_abs_diff(slice_channels(none, 0, 3).value(), image.value()) == 0.0);
  const Var rest = slice_channels(none, 3, 39);
  for (double v : rest.value().storage()) CHECK(v == 0.0);
  // block i holds M_i times I
  const Var maps = random_input({2, 13, 8, 8}, 14);
  const Var fused = input_fusion(image, maps);
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 13; ++k)
      for (int c = 0; c < 3; ++c)
        CHECK(fused.value().at(n, 3 + 3 * k + c, 2, 5) ==
              doctest::Approx(maps.value().at(n, k, 2, 5) * image.value().at(n, c, 2, 5)));
  CHECK_THROWS_AS(input_fusion(image, random_input({2, 13, 4, 4}, 1)), DimensionError);
}

TEST_CASE("feature fusion with forced gates") {
  const Var f = random_input({1, 8, 16, 16}, 15, -1, 1);
  Tensor ones({1, 8, 16, 16});
  ones.fill(1.0);
  const Var full = fuse_features(f, constant(ones));
  CHECK(full.shape() == Shape{1, 16, 16, 16});
  CHECK(testutil::max_abs_diff(slice_channels(full, 8, 8).value(), f.value()) == 0.0);
  const Var empty = fuse_features(f, constant(Tensor({1, 8, 16, 16})));
  CHECK(testutil::max_abs_diff(slice_channels(empty, 0, 8).value(), f.value()) == 0.0);
  const Var gated = slice_channels(empty, 8, 8);
  for (double v : gated.value().storage()) CHECK(v == 0.0);
  CHECK_THROWS_AS(fuse_features(f, random_input({1, 8, 8, 8}, 1)), DimensionError);
}

TEST_CASE("fusion transform keeps size and gates into (0,1)") {
  for (auto kind : {FusionKind::Hourglass, FusionKind::Conv, FusionKind::HourglassNoBoundary}) {
    nn::ParamStore ps;
    nn::Init init(16);
    FusionTransform t(ps, init, "t", kind, 13, 8, 16);
    const Var gate = t(random_input({1, 8, 16, 16}, 17), random_input({1, 13, 16, 16}, 18));
    CHECK(gate.shape() == Shape{1, 8, 16, 16});
    for (double v : gate.value().storage()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("resize maps by powers of two") {
  const Var m = random_input({1, 13, 16, 16}, 19);
  CHECK(resize_maps(m, 64).shape() == Shape{1, 13, 64, 64});
  CHECK(resize_maps(m, 4).shape() == Shape{1, 13, 4, 4});
  CHECK(testutil::max_abs_diff(resize_maps(m, 16).value(), m.value()) == 0.0);
  CHECK(resize_maps(m, 32).value().at(0, 3, 5, 7) == m.value().at(0, 3, 2, 3));
}

TEST_CASE("regressor output length and fusion levels") {
  const std::set<FusionLevel> all{FusionLevel::Input, FusionLevel::Stage1, FusionLevel::Stage2, FusionLevel::Stage3,
                                  FusionLevel::Stage4};
  for (int S : {64, 128})
    for (int C : {4, 8})
      for (const auto& levels : {std::set<FusionLevel>{}, all}) {
        RegressorConfig cfg;
        cfg.input_side = S;
        cfg.channels = C;
        cfg.fusion_levels = levels;
        Regressor r(cfg, 20);
        const Var y = r.forward(random_input({2, 3, S, S}, 21), random_input({2, 13, S / 4, S / 4}, 22));
        CHECK(y.shape() == Shape{2, 136});
        CHECK(cfg.uses_heatmaps() == !levels.empty());
      }
}

TEST_CASE("plain regressor ignores heatmaps") {
  RegressorConfig cfg;
  cfg.channels = 4;
  Regressor r(cfg, 23);
  const Var img = random_input({1, 3, 64, 64}, 24);
  const Var a = r.forward(img, random_input({1, 13, 16, 16}, 25));
  const Var b = r.forward(img, random_input({1, 13, 16, 16}, 26));
  CHECK(testutil::max_abs_diff(a.value(), b.value()) == 0.0);
  cfg.fusion_levels = {FusionLevel::Stage2};
  Regressor fused(cfg, 23);
  const Var c = fused.forward(img, random_input({1, 13, 16, 16}, 25));
  const Var d = fused.forward(img, random_input({1, 13, 16, 16}, 26));
  CHECK(testutil::max_abs_diff(c.value(), d.value()) > 0.0);
}

TEST_CASE("regressor stage geometry") {
  RegressorConfig cfg;
  cfg.channels = 8;
  CHECK(cfg.stage_side(1) == 32);
  CHECK(cfg.stage_side(2) == 16);
  CHECK(cfg.stage_side(3) == 8);
  CHECK(cfg.stage_side(4) == 4);
  CHECK(cfg.stage_channels(1) == 8);
  CHECK(cfg.stage_channels(4) == 32);
  cfg.input_side = 48;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("discriminator scores") {
  DiscriminatorConfig cfg;
  Discriminator d(cfg, 27);
  const Var s = d.forward(random_input({3, 13, 16, 16}, 28));
  CHECK(s.shape() == Shape{3, 13});
  for (double v : s.value().storage()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  d.zero_head();
  const Var half = d.forward(random_input({3, 13, 16, 16}, 29));
  for (double v : half.value().storage()) CHECK(v == 0.5);
  cfg.head = DiscriminatorHead::Global;
  Discriminator g(cfg, 27);
  CHECK(g.forward(random_input({3, 13, 16, 16}, 28)).shape() == Shape{3, 1});
}

TEST_CASE("shared-head discriminator is permutation equivariant") {
  DiscriminatorConfig cfg;
  cfg.head = DiscriminatorHead::Shared;
  Discriminator d(cfg, 30);
  std::mt19937_64 rng(31);
  const Tensor m = random_tensor({2, 13, 16, 16}, rng, 0, 1);
  Tensor swapped = m;
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) std::swap(swapped.at(n, 4, y, x), swapped.at(n, 9, y, x));
  const Tensor a = d.forward(constant(m)).value();
  const Tensor b = d.forward(constant(swapped)).value();
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 13; ++k) {
      const int j = k == 4 ? 9 : k == 9 ? 4 : k;
      CHECK(b[n * 13 + j] == doctest::Approx(a[n * 13 + k]).epsilon(1e-12));
    }
}

TEST_CASE("micro estimator gradients match finite differences") {
  EstimatorConfig cfg;
  cfg.input_side = 16;
  cfg.channels = 2;
  cfg.group_channels = 1;
  cfg.boundaries = 3;
  cfg.tree = {{0, 1}, {0, 2}};
  cfg.hourglass_depth = 1;
  Estimator g(cfg, 32);
  const Var img = random_input({1, 3, 16, 16}, 33);
  auto loss = [&] {
    const auto out = g.forward(img);
    return add(testutil::probe(out[0], 1), testutil::probe(out[1], 2));
  };
  CHECK(parameter_gradient_check(g.params(), loss) <= 1e-4);
  CHECK(testutil::gradient_check([&](const std::vector<Var>& v) { return testutil::probe(g.forward(v[0])[1]); },
                                 {img.value()}) <= 1e-4);
}

TEST_CASE("micro regressor gradients match finite differences") {
  for (auto kind : {FusionKind::Conv, FusionKind::HourglassNoBoundary}) {
    RegressorConfig cfg;
    cfg.input_side = 32;
    cfg.channels = 1;
    cfg.blocks_per_stage = 1;
    cfg.landmarks = 2;
    cfg.boundaries = 2;
    cfg.fusion_kind = kind;
    cfg.fusion_levels = {FusionLevel::Input, FusionLevel::Stage1, FusionLevel::Stage3};
    Regressor r(cfg, 34);
    const Var img = random_input({1, 3, 32, 32}, 35);
    const Var maps = random_input({1, 2, 8, 8}, 36);
    CHECK(parameter_gradient_check(r.params(), [&] { return testutil::probe(r.forward(img, maps)); }) <= 1e-4);
    CHECK(testutil::gradient_check([&](const std::vector<Var>& v) { return testutil::probe(r.forward(img, v[0])); },
                                   {maps.value()}) <= 1e-4);
  }
}

TEST_CASE("micro discriminator gradients match finite differences") {
  for (auto head : {DiscriminatorHead::PerBoundary, DiscriminatorHead::Shared, DiscriminatorHead::Global}) {
    DiscriminatorConfig cfg;
    cfg.boundaries = 3;
    cfg.channels = 2;
    cfg.heatmap_side = 8;
    cfg.head = head;
    Discriminator d(cfg, 37);
    const Var maps = random_input({2, 3, 8, 8}, 38);
    CHECK(parameter_gradient_check(d.params(), [&] { return testutil::probe(d.forward(maps)); }) <= 1e-4);
    CHECK(testutil::gradient_check([&](const std::vector<Var>& v) { return testutil::probe(d.forward(v[0])); },
                                   {maps.value()}) <= 1e-4);
  }
}

TEST_CASE("gradients reach nearly every parameter") {
  EstimatorConfig gc;
  gc.channels = 8;
  Estimator g(gc, 39);
  const Var img = random_input({2, 3, 64, 64}, 40);
  backward(testutil::probe(g.forward(img).back()));
  CHECK(nonzero_grad_fraction(g.params()) >= 0.99);

  RegressorConfig rc;
  rc.fusion_levels = {FusionLevel::Input, FusionLevel::Stage1, FusionLevel::Stage2, FusionLevel::Stage3,
                      FusionLevel::Stage4};
  Regressor r(rc, 41);
  backward(testutil::probe(r.forward(img, random_input({2, 13, 16, 16}, 42))));
  CHECK(nonzero_grad_fraction(r.params()) >= 0.99);

  Discriminator d(DiscriminatorConfig{}, 43);
  backward(testutil::probe(d.forward(random_input({2, 13, 16, 16}, 44))));
  CHECK(nonzero_grad_fraction(d.params()) >= 0.99);
}

TEST_CASE("same seed builds identical networks") {
  EstimatorConfig cfg;
  cfg.channels = 4;
  Estimator a(cfg, 45), b(cfg, 45), c(cfg, 46);
  const Var img = random_input({1, 3, 64, 64}, 47);
  CHECK(testutil::max_abs_diff(a.forward(img)[1].value(), b.forward(img)[1].value()) == 0.0);
  CHECK(testutil::max_abs_diff(a.forward(img)[1].value(), c.forward(img)[1].value()) > 0.0);
}

TEST_CASE("config json round trip") {
  EstimatorConfig e;
  e.stacks = 3;
  e.message_passing = false;
  CHECK(to_json(estimator_config_from_json(to_json(e))) == to_json(e));
  RegressorConfig r;
  r.fusion_levels = {FusionLevel::Input, FusionLevel::Stage3};
  r.fusion_kind = FusionKind::Conv;
  r.head = RegressorHead::Gap;
  const RegressorConfig r2 = regressor_config_from_json(to_json(r));
  CHECK(r2.fusion_levels == r.fusion_levels);
  CHECK(r2.fusion_kind == FusionKind::Conv);
  CHECK(r2.head == RegressorHead::Gap);
  DiscriminatorConfig d;
  d.head = DiscriminatorHead::Shared;
  CHECK(discriminator_config_from_json(to_json(d)).head == DiscriminatorHead::Shared);

  CHECK(estimator_config_from_json(nlohmann::json::object()).stacks == 2);
  CHECK_THROWS_AS(estimator_config_from_json({{"stack", 2}}), ConfigError);
  CHECK_THROWS_AS(estimator_config_from_json({{"stacks", "two"}}), ConfigError);
  CHECK_THROWS_AS(regressor_config_from_json({{"fusion_levels", {"s9"}}}), ConfigError);
  CHECK_THROWS_AS(regressor_config_from_json({{"head", "mlp"}}), ConfigError);
  CHECK_THROWS_AS(discriminator_config_from_json({{"head", "pairwise"}}), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "balign_test_models";
  std::filesystem::remove_all(dir);
  RegressorConfig cfg;
  cfg.channels = 4;
  cfg.fusion_levels = {FusionLevel::Stage1};
  Regressor a(cfg, 48);
  Discriminator d(DiscriminatorConfig{}, 49);
  const Checkpoint ck{"test", 17, to_json(cfg), parameters_json({{"R", &a.params()}, {"D", &d.params()}})};
  save_checkpoint(dir / "ck.json", ck);
  const Checkpoint back = load_checkpoint(dir / "ck.json");
  CHECK(back.kind == "test");
  CHECK(back.step == 17);
  Regressor b(regressor_config_from_json(back.config), 99);
  load_parameters(back.parameters, "R", b.params());
  const Var img = random_input({1, 3, 64, 64}, 50);
  const Var maps = random_input({1, 13, 16, 16}, 51);
  CHECK(testutil::max_abs_diff(a.forward(img, maps).value(), b.forward(img, maps).value()) == 0.0);

  DiscriminatorConfig small;
  small.boundaries = 3;
  Discriminator wrong(small, 1);
  CHECK_THROWS_AS(load_parameters(back.parameters, "D", wrong.params()), ConfigError);

  auto j = nlohmann::json::parse(std::ifstream(dir / "ck.json"));
  j["format_version"] = 99;
  write_file_atomic(dir / "bad.json", j.dump());
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), DataError);
  write_file_atomic(dir / "junk.json", "{not json");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.json"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), DataError);
  std::filesystem::remove_all(dir);
}
