#include "balign/bridge.hpp"

#include "balign/errors.hpp"

namespace balign {
using nlohmann::json;

void BridgeConfig::validate() const {
  regressor.validate();
  const BoundaryScheme source = scheme_by_id(source_scheme), target = scheme_by_id(target_scheme);
  check_shared_boundaries(source, target);
  if (regressor.landmarks != target.landmark_count)
    throw ConfigError("regressor predicts " + std::to_string(regressor.landmarks) + " landmarks, target scheme " +
                      target.scheme_id + " has " + std::to_string(target.landmark_count));
  if (regressor.boundaries != target.boundary_count())
    throw ConfigError("regressor expects " + std::to_string(regressor.boundaries) + " boundaries");
}

json to_json(const BridgeConfig& c) {
  return {{"estimator_checkpoint", c.estimator_checkpoint.string()},
          {"source_scheme", c.source_scheme},
          {"target_scheme", c.target_scheme},
          {"regressor", to_json(c.regressor)},
          {"without_boundary", c.without_boundary}};
}

BridgeConfig bridge_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("bridge config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "estimator_checkpoint" && key != "source_scheme" && key != "target_scheme" && key != "regressor" &&
        key != "without_boundary")
      throw ConfigError("unknown key '" + key + "' in bridge config");
  BridgeConfig c;
  try {
    std::filesystem::path ck = j.at("estimator_checkpoint").get<std::string>();
    c.estimator_checkpoint = ck.is_relative() && !base_dir.empty() ? base_dir / ck : ck;
    c.source_scheme = j.at("source_scheme").get<std::string>();
    c.target_scheme = j.at("target_scheme").get<std::string>();
    if (j.contains("regressor")) c.regressor = regressor_config_from_json(j["regressor"]);
    c.without_boundary = j.value("without_boundary", false);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bridge config: ") + e.what());
  }
  return c;
}

void check_shared_boundaries(const BoundaryScheme& source, const BoundaryScheme& target) {
  if (source.boundary_count() != target.boundary_count())
    throw ConfigError("schemes " + source.scheme_id + " and " + target.scheme_id + " declare " +
                      std::to_string(source.boundary_count()) + " and " + std::to_string(target.boundary_count()) +
                      " boundaries");
  for (int k = 0; k < source.boundary_count(); ++k)
    if (source.boundaries[k].name != target.boundaries[k].name)
      throw ConfigError("boundary " + std::to_string(k) + " is '" + source.boundaries[k].name + "' in " +
                        source.scheme_id + " but '" + target.boundaries[k].name + "' in " + target.scheme_id);
}

Estimator load_estimator(const std::filesystem::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (!ck.config.is_object() || !ck.config.contains("estimator"))
    throw DataError(checkpoint.string() + " carries no estimator config");
  Estimator g(estimator_config_from_json(ck.config["estimator"]), 0);
  load_parameters(ck.parameters, "G", g.params());
  return g;
}

Tensor bridge_forward(const Tensor& images, const Estimator& source, const Regressor& target, bool without_boundary,
                      int batch) {
  Tensor x = images;
  if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (source.config().boundaries != target.config().boundaries)
    throw ConfigError("estimator emits " + std::to_string(source.config().boundaries) + " maps, regressor expects " +
                      std::to_string(target.config().boundaries));
  if (!target.config().uses_heatmaps()) return predict_coords(target, x, {}, batch);
  const int s = source.config().heatmap_side();
  const Tensor maps = without_boundary ? Tensor({x.dim(0), source.config().boundaries, s, s})
                                       : predict_heatmaps(source, x, batch);
  return predict_coords(target, x, maps, batch);
}

Networks make_bridge_networks(const Estimator& source, TrainConfig& config) {
  config.mode = TrainMode::Regressor;
  config.adversarial = false;
  config.estimator = source.config();
  config.discriminator.heatmap_side = source.config().heatmap_side();
  Networks nets = make_networks(config);
  if (nets.estimator) nets.estimator->params().restore(source.params().snapshot());
  return nets;
}

}  // namespace balign
