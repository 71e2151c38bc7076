#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/nn.hpp"
#include "balign/scheme.hpp"

namespace balign {

// ---- estimator (G) ------------------------------------------------------------

// Directed tree edge between boundary branches, parent -> child.
struct MessageEdge {
  int from = 0;
  int to = 0;
  bool operator==(const MessageEdge&) const = default;
};

// Facial-adjacency tree rooted at the outer contour (channel indices of
// boundary_names()).
std::vector<MessageEdge> default_message_tree();
// Throws ConfigError unless the edges form a tree spanning all `nodes`.
void validate_tree(const std::vector<MessageEdge>& edges, int nodes);

struct EstimatorConfig {
  int stacks = 2;
  int channels = 32;        // hourglass width
  int group_channels = 2;   // channels per boundary branch
  int boundaries = kNumBoundaries;
  int input_side = 64;
  int hourglass_depth = 2;
  bool message_passing = true;
  std::vector<MessageEdge> tree = default_message_tree();
  bool zero_init_heads = false;

  int heatmap_side() const { return input_side / 4; }
  void validate() const;
};

// Intra-level passing over the tree (leaf-to-root sweep, then root-to-leaf),
// optionally preceded by inter-level messages from the previous stack's
// branches. Each edge direction owns a 3x3 conv; messages are added to the
// receiver.
class MessagePassing {
 public:
  MessagePassing(nn::ParamStore& ps, nn::Init& init, const std::string& name, int nodes, int group_channels,
                 std::vector<MessageEdge> tree, bool inter_level);

  std::vector<Var> operator()(std::vector<Var> groups, const std::vector<Var>* previous) const;
  // Zero every transform: passing becomes the identity.
  void zero();
  nn::Conv& upward(int edge) { return up_[edge]; }
  nn::Conv& downward(int edge) { return down_[edge]; }

 private:
  int nodes_;
  std::vector<MessageEdge> tree_;
  std::vector<int> order_;  // breadth-first from the root
  std::vector<nn::Conv> up_, down_, inter_;
};

class Estimator {
 public:
  Estimator(const EstimatorConfig& config, std::uint64_t seed);

  // images [N,3,S,S] -> one [N,K,S/4,S/4] sigmoid map per stack
  std::vector<Var> forward(const Var& images) const;

  const EstimatorConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  MessagePassing* message_passing(int stack) { return mp_.empty() ? nullptr : &mp_[stack]; }

 private:
  EstimatorConfig config_;
  nn::ParamStore params_;
  nn::Conv stem1_, stem2_;
  std::vector<nn::Hourglass> hourglass_;
  std::vector<nn::Conv> to_branches_;
  std::vector<MessagePassing> mp_;
  std::vector<std::vector<nn::Conv>> heads_;  // [stack][boundary]
  std::vector<nn::Conv> remap_features_, remap_maps_;
};

// ---- regressor (R) ------------------------------------------------------------

enum class FusionLevel { Input = 0, Stage1, Stage2, Stage3, Stage4 };
enum class FusionKind { Hourglass, Conv, HourglassNoBoundary };
enum class RegressorHead { Gap, Flatten };

std::string to_string(FusionLevel level);
FusionLevel fusion_level_from_string(const std::string& s);
std::string to_string(FusionKind kind);
FusionKind fusion_kind_from_string(const std::string& s);

struct RegressorConfig {
  int landmarks = 68;
  int input_side = 64;
  int channels = 8;  // stage widths c, 2c, 2c, 4c
  int blocks_per_stage = 2;
  int boundaries = kNumBoundaries;
  std::set<FusionLevel> fusion_levels;
  FusionKind fusion_kind = FusionKind::Hourglass;
  RegressorHead head = RegressorHead::Flatten;

  bool uses_heatmaps() const;
  int stage_channels(int stage) const;  // stage in 1..4
  int stage_side(int stage) const;
  void validate() const;
};

// H = I (+) (M_1 (x) I) (+) ... (+) (M_K (x) I); `maps` already at image size.
Var input_fusion(const Var& image, const Var& maps);
// H = F (+) (F (x) gate)
Var fuse_features(const Var& features, const Var& gate);
// Nearest upsampling or 2x2 max pooling by powers of two.
Var resize_maps(const Var& maps, int side);

// T of the feature fusion: (K + C) -> C channels at unchanged size, sigmoid gate.
class FusionTransform {
 public:
  FusionTransform(nn::ParamStore& ps, nn::Init& init, const std::string& name, FusionKind kind, int boundaries,
                  int channels, int side);
  Var operator()(const Var& features, const Var& maps) const;

 private:
  FusionKind kind_;
  nn::Conv in_, out_, mid_;
  std::optional<nn::Hourglass> hourglass_;
};

class Regressor {
 public:
  Regressor(const RegressorConfig& config, std::uint64_t seed);

  // images [N,3,S,S], maps [N,K,S/4,S/4] (ignored without fusion) -> [N,2L] in
  // normalised image coordinates, (x0, y0, x1, y1, ...).
  Var forward(const Var& images, const Var& maps) const;

  const RegressorConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  RegressorConfig config_;
  nn::ParamStore params_;
  nn::Conv stem_;
  std::vector<std::vector<nn::Residual>> stages_;
  std::vector<std::optional<FusionTransform>> transforms_;  // index = stage 1..4
  Var fc_w_, fc_b_;
};

// ---- discriminator (D) --------------------------------------------------------

enum class DiscriminatorHead { PerBoundary, Shared, Global };
std::string to_string(DiscriminatorHead head);
DiscriminatorHead discriminator_head_from_string(const std::string& s);

struct DiscriminatorConfig {
  int boundaries = kNumBoundaries;
  int channels = 8;
  int heatmap_side = 16;
  DiscriminatorHead head = DiscriminatorHead::PerBoundary;
  void validate() const;
};

// Each heatmap runs through the same conv trunk; heads score each boundary.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

  // [N,K,s,s] -> [N,K] scores in (0,1) ([N,1] for the global head)
  Var forward(const Var& maps) const;
  void zero_head();

  const DiscriminatorConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  DiscriminatorConfig config_;
  nn::ParamStore params_;
  nn::Conv c1_, c2_;
  Var head_w_, head_b_;
};

// ---- configuration files ------------------------------------------------------

nlohmann::json to_json(const EstimatorConfig& c);
nlohmann::json to_json(const RegressorConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
// Missing keys keep their defaults; unknown keys are a ConfigError.
EstimatorConfig estimator_config_from_json(const nlohmann::json& j);
RegressorConfig regressor_config_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

// ---- checkpoints --------------------------------------------------------------

// {"format_version": 1, "kind": ..., "step": ..., "config": {...},
//  "parameters": {"<net>/<name>": {"shape": [...], "data": [...]}}}
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  long step = 0;
  nlohmann::json config;
  nlohmann::json parameters;  // name -> {shape, data}
};

nlohmann::json parameters_json(const std::vector<std::pair<std::string, const nn::ParamStore*>>& nets);
// Loads the "<prefix>/" entries into `store`.
void load_parameters(const nlohmann::json& parameters, const std::string& prefix, nn::ParamStore& store);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Write to a temporary sibling and rename over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace balign
