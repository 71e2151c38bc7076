#include <cmath>

#include "balign/errors.hpp"
#include "balign/models.hpp"

namespace balign {

std::string to_string(FusionLevel level) {
  switch (level) {
    case FusionLevel::Input: return "input";
    case FusionLevel::Stage1: return "s1";
    case FusionLevel::Stage2: return "s2";
    case FusionLevel::Stage3: return "s3";
    case FusionLevel::Stage4: return "s4";
  }
  return "input";
}

FusionLevel fusion_level_from_string(const std::string& s) {
  for (FusionLevel l : {FusionLevel::Input, FusionLevel::Stage1, FusionLevel::Stage2, FusionLevel::Stage3, FusionLevel::Stage4})
    if (to_string(l) == s) return l;
  throw ConfigError("unknown fusion level '" + s + "' (expected input, s1, s2, s3 or s4)");
}

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::Hourglass: return "hourglass";
    case FusionKind::Conv: return "conv";
    case FusionKind::HourglassNoBoundary: return "hourglass_no_boundary";
  }
  return "hourglass";
}

FusionKind fusion_kind_from_string(const std::string& s) {
  for (FusionKind k : {FusionKind::Hourglass, FusionKind::Conv, FusionKind::HourglassNoBoundary})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown fusion kind '" + s + "' (expected hourglass, conv or hourglass_no_boundary)");
}

bool RegressorConfig::uses_heatmaps() const {
  if (fusion_levels.count(FusionLevel::Input)) return true;
  return !fusion_levels.empty() && fusion_kind != FusionKind::HourglassNoBoundary;
}

int RegressorConfig::stage_channels(int stage) const {
  static constexpr int mult[5] = {1, 1, 2, 2, 4};
  return channels * mult[stage];
}

int RegressorConfig::stage_side(int stage) const { return stage <= 1 ? input_side / 2 : input_side >> stage; }

void RegressorConfig::validate() const {
  if (landmarks < 1) throw ConfigError("regressor needs at least one landmark");
  if (channels < 1 || blocks_per_stage < 1 || boundaries < 1) throw ConfigError("regressor widths must be positive");
  if (input_side < 32 || input_side % 32 != 0) throw ConfigError("regressor input side must be a multiple of 32");
}

Var input_fusion(const Var& image, const Var& maps) {
  const auto& is = image.shape();
  const auto& ms = maps.shape();
  if (is.size() != 4 || ms.size() != 4 || is[0] != ms[0] || is[2] != ms[2] || is[3] != ms[3])
    throw DimensionError("input fusion needs image and maps of equal batch and size, got " + shape_str(is) + " and " +
                         shape_str(ms));
  std::vector<Var> parts{image};
  for (int k = 0; k < ms[1]; ++k) parts.push_back(mul(image, slice_channels(maps, k, 1)));
  return concat(parts);
}

Var fuse_features(const Var& features, const Var& gate) {
  if (features.shape() != gate.shape())
    throw DimensionError("feature fusion gate " + shape_str(gate.shape()) + " does not match features " +
                         shape_str(features.shape()));
  const Var parts[] = {features, mul(features, gate)};
  return concat(parts);
}

Var resize_maps(const Var& maps, int side) {
  Var m = maps;
  int cur = m.shape().at(2);
  while (cur < side) {
    m = upsample2(m);
    cur *= 2;
  }
  while (cur > side) {
    m = maxpool2(m);
    cur /= 2;
  }
  if (cur != side) throw DimensionError("cannot resize maps of side " + std::to_string(maps.shape()[2]) + " to " +
                                        std::to_string(side));
  return m;
}

FusionTransform::FusionTransform(nn::ParamStore& ps, nn::Init& init, const std::string& name, FusionKind kind,
                                 int boundaries, int channels, int side)
    : kind_(kind) {
  const int in = kind == FusionKind::HourglassNoBoundary ? channels : boundaries + channels;
  in_ = nn::Conv(ps, init, name + ".in", in, channels, 3);
  if (kind == FusionKind::Conv) {
    mid_ = nn::Conv(ps, init, name + ".mid", channels, channels, 3);
  } else {
    int depth = 0;
    while (depth < 2 && (side >> (depth + 1)) >= 2 && (side >> depth) % 2 == 0) ++depth;
    if (depth < 1) throw ConfigError("feature map of side " + std::to_string(side) + " is too small for an hourglass");
    hourglass_.emplace(ps, init, name + ".hg", channels, depth);
  }
  out_ = nn::Conv(ps, init, name + ".out", channels, channels, 1);
}

Var FusionTransform::operator()(const Var& features, const Var& maps) const {
  Var x;
  if (kind_ == FusionKind::HourglassNoBoundary) {
    x = features;
  } else {
    if (maps.shape()[2] != features.shape()[2])
      throw DimensionError("fusion maps " + shape_str(maps.shape()) + " do not match features " +
                           shape_str(features.shape()));
    const Var parts[] = {maps, features};
    x = concat(parts);
  }
  Var h = nn::act(in_(x));
  h = hourglass_ ? (*hourglass_)(h) : nn::act(mid_(h));
  return sigmoid(out_(h));
}

Regressor::Regressor(const RegressorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  nn::Init init(seed);
  const int K = config_.boundaries;
  const int in = config_.fusion_levels.count(FusionLevel::Input) ? 3 * (K + 1) : 3;
  stem_ = nn::Conv(params_, init, "stem", in, config_.stage_channels(1), 3, 2);
  int prev = config_.stage_channels(1);
  transforms_.resize(5);
  stages_.resize(5);
  for (int s = 1; s <= 4; ++s) {
    const int width = config_.stage_channels(s);
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      const int stride = (b == 0 && s > 1) ? 2 : 1;
      stages_[s].emplace_back(params_, init, "s" + std::to_string(s) + ".b" + std::to_string(b), b == 0 ? prev : width,
                              width, stride);
    }
    prev = width;
    if (config_.fusion_levels.count(static_cast<FusionLevel>(s))) {
      transforms_[s].emplace(params_, init, "s" + std::to_string(s) + ".fusion", config_.fusion_kind, K, width,
                             config_.stage_side(s));
      prev = 2 * width;
    }
  }
  const int side4 = config_.stage_side(4);
  const int features = config_.head == RegressorHead::Flatten ? prev * side4 * side4 : prev;
  fc_w_ = params_.add("fc.w", init.he({2 * config_.landmarks, features}, features, 0.1));
  fc_b_ = params_.add("fc.b", Tensor({2 * config_.landmarks}, 0.5));
}

Var Regressor::forward(const Var& images, const Var& maps) const {
  const auto& sh = images.shape();
  const int S = config_.input_side;
  if (sh.size() != 4 || sh[1] != 3 || sh[2] != S || sh[3] != S)
    throw DimensionError("regressor expects [N,3," + std::to_string(S) + "," + std::to_string(S) + "], got " +
                         shape_str(sh));
  if (config_.uses_heatmaps()) {
    if (!maps.defined()) throw UsageError("regressor with boundary fusion needs heatmaps");
    const auto& ms = maps.shape();
    if (ms.size() != 4 || ms[0] != sh[0] || ms[1] != config_.boundaries)
      throw DimensionError("regressor heatmaps must be [N," + std::to_string(config_.boundaries) + ",s,s], got " +
                           shape_str(ms));
  }
  Var x = images;
  if (config_.fusion_levels.count(FusionLevel::Input)) x = input_fusion(images, resize_maps(maps, S));
  x = nn::act(stem_(x));
  for (int s = 1; s <= 4; ++s) {
    for (const auto& block : stages_[s]) x = block(x);
    if (transforms_[s]) {
      const Var m = config_.fusion_kind == FusionKind::HourglassNoBoundary ? Var() : resize_maps(maps, config_.stage_side(s));
      x = fuse_features(x, (*transforms_[s])(x, m));
    }
  }
  const int n = x.shape()[0];
  const Var flat = config_.head == RegressorHead::Flatten ? reshape(x, {n, static_cast<int>(x.value().size()) / n})
                                                          : global_avg_pool(x);
  return linear(flat, fc_w_, fc_b_);
}

std::string to_string(DiscriminatorHead head) {
  switch (head) {
    case DiscriminatorHead::PerBoundary: return "per_boundary";
    case DiscriminatorHead::Shared: return "shared";
    case DiscriminatorHead::Global: return "global";
  }
  return "per_boundary";
}

DiscriminatorHead discriminator_head_from_string(const std::string& s) {
  for (DiscriminatorHead h : {DiscriminatorHead::PerBoundary, DiscriminatorHead::Shared, DiscriminatorHead::Global})
    if (to_string(h) == s) return h;
  throw ConfigError("unknown discriminator head '" + s + "' (expected per_boundary, shared or global)");
}

void DiscriminatorConfig::validate() const {
  if (boundaries < 1 || channels < 1) throw ConfigError("discriminator widths must be positive");
  if (heatmap_side < 4) throw ConfigError("discriminator heatmap side must be >= 4");
}

Discriminator::Discriminator(const DiscriminatorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  nn::Init init(seed);
  const int c = config_.channels;
  c1_ = nn::Conv(params_, init, "c1", 1, c, 3, 2);
  c2_ = nn::Conv(params_, init, "c2", c, 2 * c, 3, 2);
  const int rows = config_.head == DiscriminatorHead::PerBoundary ? config_.boundaries : 1;
  head_w_ = params_.add("head.w", init.he({rows, 2 * c}, 2 * c, 0.5));
  head_b_ = params_.add("head.b", Tensor({rows}));
}

Var Discriminator::forward(const Var& maps) const {
  const auto& ms = maps.shape();
  if (ms.size() != 4 || ms[1] != config_.boundaries)
    throw DimensionError("discriminator expects [N," + std::to_string(config_.boundaries) + ",s,s], got " + shape_str(ms));
  const int n = ms[0], K = ms[1], c2 = 2 * config_.channels;
  const Var x = reshape(maps, {n * K, 1, ms[2], ms[3]});
  const Var g = global_avg_pool(nn::act(c2_(nn::act(c1_(x)))));  // [N*K, 2c]
  switch (config_.head) {
    case DiscriminatorHead::PerBoundary: return sigmoid(slot_linear(reshape(g, {n, K, c2}), head_w_, head_b_));
    case DiscriminatorHead::Shared: return sigmoid(reshape(linear(g, head_w_, head_b_), {n, K}));
    case DiscriminatorHead::Global: return sigmoid(linear(mean_axis1(reshape(g, {n, K, c2})), head_w_, head_b_));
  }
  return {};
}

void Discriminator::zero_head() {
  head_w_.mutable_value().fill(0.0);
  head_b_.mutable_value().fill(0.0);
}

}  // namespace balign
