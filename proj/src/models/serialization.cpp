#include <fstream>
#include <sstream>
#include <unistd.h>

#include "balign/errors.hpp"
#include "balign/models.hpp"

namespace balign {
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string("unknown key '") + key + "' in " + what + " config");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(what) + " config key '" + key + "' has the wrong type");
  }
}

}  // namespace

json to_json(const EstimatorConfig& c) {
  json tree = json::array();
  for (const auto& e : c.tree) tree.push_back({e.from, e.to});
  return {{"stacks", c.stacks},
          {"channels", c.channels},
          {"group_channels", c.group_channels},
          {"boundaries", c.boundaries},
          {"input_side", c.input_side},
          {"hourglass_depth", c.hourglass_depth},
          {"message_passing", c.message_passing},
          {"tree", tree},
          {"zero_init_heads", c.zero_init_heads}};
}

EstimatorConfig estimator_config_from_json(const json& j) {
  const char* what = "estimator";
  check_keys(j,
             {"stacks", "channels", "group_channels", "boundaries", "input_side", "hourglass_depth", "message_passing",
              "tree", "zero_init_heads"},
             what);
  EstimatorConfig c;
  read(j, "stacks", c.stacks, what);
  read(j, "channels", c.channels, what);
  read(j, "group_channels", c.group_channels, what);
  read(j, "boundaries", c.boundaries, what);
  read(j, "input_side", c.input_side, what);
  read(j, "hourglass_depth", c.hourglass_depth, what);
  read(j, "message_passing", c.message_passing, what);
  read(j, "zero_init_heads", c.zero_init_heads, what);
  if (j.contains("tree")) {
    std::vector<std::array<int, 2>> edges;
    read(j, "tree", edges, what);
    c.tree.clear();
    for (auto [a, b] : edges) c.tree.push_back({a, b});
  }
  c.validate();
  return c;
}

json to_json(const RegressorConfig& c) {
  json levels = json::array();
  for (auto l : c.fusion_levels) levels.push_back(to_string(l));
  return {{"landmarks", c.landmarks},
          {"input_side", c.input_side},
          {"channels", c.channels},
          {"blocks_per_stage", c.blocks_per_stage},
          {"boundaries", c.boundaries},
          {"fusion_levels", levels},
          {"fusion_kind", to_string(c.fusion_kind)},
          {"head", c.head == RegressorHead::Flatten ? "flatten" : "gap"}};
}

RegressorConfig regressor_config_from_json(const json& j) {
  const char* what = "regressor";
  check_keys(j, {"landmarks", "input_side", "channels", "blocks_per_stage", "boundaries", "fusion_levels", "fusion_kind", "head"},
             what);
  RegressorConfig c;
  read(j, "landmarks", c.landmarks, what);
  read(j, "input_side", c.input_side, what);
  read(j, "channels", c.channels, what);
  read(j, "blocks_per_stage", c.blocks_per_stage, what);
  read(j, "boundaries", c.boundaries, what);
  if (j.contains("fusion_levels")) {
    std::vector<std::string> levels;
    read(j, "fusion_levels", levels, what);
    for (const auto& l : levels) c.fusion_levels.insert(fusion_level_from_string(l));
  }
  if (j.contains("fusion_kind")) {
    std::string k;
    read(j, "fusion_kind", k, what);
    c.fusion_kind = fusion_kind_from_string(k);
  }
  if (j.contains("head")) {
    std::string h;
    read(j, "head", h, what);
    if (h == "flatten") c.head = RegressorHead::Flatten;
    else if (h == "gap") c.head = RegressorHead::Gap;
    else throw ConfigError("unknown regressor head '" + h + "' (expected flatten or gap)");
  }
  c.validate();
  return c;
}

json to_json(const DiscriminatorConfig& c) {
  return {{"boundaries", c.boundaries}, {"channels", c.channels}, {"heatmap_side", c.heatmap_side}, {"head", to_string(c.head)}};
}

DiscriminatorConfig discriminator_config_from_json(const json& j) {
  const char* what = "discriminator";
  check_keys(j, {"boundaries", "channels", "heatmap_side", "head"}, what);
  DiscriminatorConfig c;
  read(j, "boundaries", c.boundaries, what);
  read(j, "channels", c.channels, what);
  read(j, "heatmap_side", c.heatmap_side, what);
  if (j.contains("head")) {
    std::string h;
    read(j, "head", h, what);
    c.head = discriminator_head_from_string(h);
  }
  c.validate();
  return c;
}

json parameters_json(const std::vector<std::pair<std::string, const nn::ParamStore*>>& nets) {
  json out = json::object();
  for (const auto& [prefix, store] : nets)
    for (const auto& [name, v] : store->entries())
      out[prefix + "/" + name] = {{"shape", v.shape()}, {"data", v.value().storage()}};
  return out;
}

void load_parameters(const json& parameters, const std::string& prefix, nn::ParamStore& store) {
  json sub = json::object();
  const std::string p = prefix + "/";
  for (const auto& [name, entry] : parameters.items())
    if (name.rfind(p, 0) == 0) sub[name.substr(p.size())] = entry;
  store.load_json(sub);
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  const json j = {{"format_version", kCheckpointVersion},
                  {"kind", ck.kind},
                  {"step", ck.step},
                  {"config", ck.config},
                  {"parameters", ck.parameters}};
  write_file_atomic(path, j.dump());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw DataError("checkpoint " + path.string() + " has format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
    return {j.at("kind").get<std::string>(), j.at("step").get<long>(), j.at("config"), j.at("parameters")};
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path.string() + " is malformed: " + e.what());
  }
}

}  // namespace balign
