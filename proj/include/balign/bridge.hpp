#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "balign/models.hpp"
#include "balign/training.hpp"

namespace balign {

// An estimator trained under one landmark scheme feeding a regressor for another.
struct BridgeConfig {
  std::filesystem::path estimator_checkpoint;
  std::string source_scheme;
  std::string target_scheme;
  RegressorConfig regressor;
  bool without_boundary = false;  // regressor sees all-zero heatmaps

  void validate() const;
};

nlohmann::json to_json(const BridgeConfig& c);
// Relative checkpoint paths resolve against `base_dir`.
BridgeConfig bridge_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

// ConfigError unless both schemes list the same boundary names in the same order.
void check_shared_boundaries(const BoundaryScheme& source, const BoundaryScheme& target);

// The "G/" networks of a training checkpoint.
Estimator load_estimator(const std::filesystem::path& checkpoint);

// [N,3,S,S] or [3,S,S] images -> [N,2L] normalised target coordinates.
Tensor bridge_forward(const Tensor& images, const Estimator& source, const Regressor& target, bool without_boundary,
                      int batch = 16);

// Regressor-mode networks whose frozen estimator is a copy of `source`.
// `config` is updated to match the estimator.
Networks make_bridge_networks(const Estimator& source, TrainConfig& config);

}  // namespace balign
