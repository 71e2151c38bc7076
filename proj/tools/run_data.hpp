#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "balign/training.hpp"

namespace cli {

// Where a command's samples come from: two manifests, or a synthetic corpus.
struct DataSpec {
  std::string scheme = "300w_68";
  int side = 64;
  std::optional<std::filesystem::path> train_manifest, val_manifest;
  int synth_train = 200, synth_val = 50;
  double occlusion = 0.0;
  std::uint64_t synth_seed = 1;

  bool synthetic() const { return !train_manifest && !val_manifest; }
};

nlohmann::json to_json(const DataSpec& d);
DataSpec data_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

struct RunData {
  balign::TrainingSet train, val;
};
// Only the validation split is loaded when `val_only` is set.
RunData load_run_data(const DataSpec& d, double sigma, bool val_only = false);

// Reads a JSON file; ConfigError when unreadable or malformed.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cli
