#include "run_data.hpp"

#include <fstream>

#include "balign/errors.hpp"
#include "balign/models.hpp"

namespace cli {
using nlohmann::json;
using namespace balign;

json to_json(const DataSpec& d) {
  json j{{"scheme", d.scheme}, {"side", d.side}};
  if (d.synthetic()) {
    j["synthetic"] = {{"train", d.synth_train}, {"val", d.synth_val}, {"occlusion", d.occlusion}, {"seed", d.synth_seed}};
  } else {
    if (d.train_manifest) j["train_manifest"] = d.train_manifest->string();
    if (d.val_manifest) j["val_manifest"] = d.val_manifest->string();
  }
  return j;
}

DataSpec data_spec_from_json(const json& j, const std::filesystem::path& base_dir) {
  DataSpec d;
  if (j.is_null()) return d;
  if (!j.is_object()) throw ConfigError("'data' must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "scheme" && key != "side" && key != "train_manifest" && key != "val_manifest" && key != "synthetic")
      throw ConfigError("unknown key '" + key + "' in data section");
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_relative() ? base_dir / path : path;
  };
  try {
    d.scheme = j.value("scheme", d.scheme);
    d.side = j.value("side", d.side);
    if (j.contains("train_manifest")) d.train_manifest = resolve(j["train_manifest"].get<std::string>());
    if (j.contains("val_manifest")) d.val_manifest = resolve(j["val_manifest"].get<std::string>());
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      for (const auto& [key, _] : s.items())
        if (key != "train" && key != "val" && key != "occlusion" && key != "seed")
          throw ConfigError("unknown key '" + key + "' in data.synthetic");
      d.synth_train = s.value("train", d.synth_train);
      d.synth_val = s.value("val", d.synth_val);
      d.occlusion = s.value("occlusion", d.occlusion);
      d.synth_seed = s.value("seed", d.synth_seed);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data section: ") + e.what());
  }
  if (d.side <= 0 || d.side % 4 != 0) throw ConfigError("data.side must be a positive multiple of 4");
  if (d.synth_train < 1 || d.synth_val < 1) throw ConfigError("synthetic split sizes must be positive");
  if (!(d.occlusion >= 0.0 && d.occlusion <= 1.0)) throw ConfigError("occlusion must lie in [0, 1]");
  return d;
}

RunData load_run_data(const DataSpec& d, double sigma, bool val_only) {
  const BoundaryScheme scheme = scheme_by_id(d.scheme);
  RunData out;
  if (d.synthetic()) {
    SynthOptions o;
    o.image_side = d.side;
    o.occlusion_fraction = d.occlusion;
    // validation faces continue the training sequence
    const auto all = synth_faces(d.synth_train + d.synth_val, d.synth_seed, scheme, o);
    const std::vector<Sample> tr(all.begin(), all.begin() + d.synth_train), va(all.begin() + d.synth_train, all.end());
    if (!val_only) out.train = make_training_set(tr, scheme, sigma);
    out.val = make_training_set(va, scheme, sigma);
    return out;
  }
  if (!d.val_manifest) throw ConfigError("a validation manifest is required");
  if (!val_only) {
    if (!d.train_manifest) throw ConfigError("a training manifest is required");
    out.train = make_training_set(load_samples(load_manifest(*d.train_manifest), scheme, d.side), scheme, sigma);
  }
  out.val = make_training_set(load_samples(load_manifest(*d.val_manifest), scheme, d.side), scheme, sigma);
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

}  // namespace cli
