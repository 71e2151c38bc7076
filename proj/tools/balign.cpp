// balign: synth, gen-heatmaps, train, eval, ablate, plot-ced, bridge.
// Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "balign/ablation.hpp"
#include "balign/boundary.hpp"
#include "balign/bridge.hpp"
#include "balign/errors.hpp"
#include "run_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace balign;
using cli::DataSpec;

namespace {

void log(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string sanitize(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '_';
  return out;
}

// Flags shared by the training commands. Unset flags leave the file's values.
struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> epochs;
  std::optional<std::string> train_manifest, val_manifest;
  std::optional<double> occlusion;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "JSON run config");
  cmd->add_option("--seed", f.seed, "training seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--epochs", f.epochs, "maximum epochs");
  cmd->add_option("--train-manifest", f.train_manifest, "training manifest (else synthetic)");
  cmd->add_option("--val-manifest", f.val_manifest, "validation manifest (else synthetic)");
  cmd->add_option("--occlusion", f.occlusion, "occluded fraction of synthetic faces");
}

struct RunConfig {
  TrainConfig training;
  DataSpec data;
  json extra;  // command-specific keys
};

// Training nets follow the data: input side, landmark count, heatmap side.
void fit_to_data(TrainConfig& c, const DataSpec& d) {
  const BoundaryScheme scheme = scheme_by_id(d.scheme);
  c.estimator.input_side = c.regressor.input_side = d.side;
  c.discriminator.heatmap_side = d.side / 4;
  c.regressor.landmarks = scheme.landmark_count;
}

RunConfig resolve_run(const RunFlags& f, std::initializer_list<const char*> extra_keys) {
  json file = json::object();
  fs::path base = fs::current_path();
  if (!f.config.empty()) {
    file = cli::read_json_file(f.config);
    base = fs::absolute(f.config).parent_path();
  }
  if (!file.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig rc;
  for (const auto& [key, value] : file.items()) {
    if (key == "training" || key == "data") continue;
    if (std::find_if(extra_keys.begin(), extra_keys.end(), [&](const char* k) { return key == k; }) == extra_keys.end())
      throw ConfigError("unknown key '" + key + "' in run config");
    rc.extra[key] = value;
  }
  rc.training = file.contains("training") ? train_config_from_json(file["training"]) : TrainConfig{};
  rc.data = cli::data_spec_from_json(file.contains("data") ? file["data"] : json(), base);
  if (f.seed) rc.training.seed = *f.seed;
  if (f.epochs) rc.training.max_epochs = *f.epochs;
  if (f.train_manifest) rc.data.train_manifest = *f.train_manifest;
  if (f.val_manifest) rc.data.val_manifest = *f.val_manifest;
  if (f.occlusion) rc.data.occlusion = *f.occlusion;
  fit_to_data(rc.training, rc.data);
  rc.training.validate();
  return rc;
}

json resolved(const std::string& command, const RunConfig& rc) {
  json j{{"command", command}, {"training", to_json(rc.training)}, {"data", cli::to_json(rc.data)}};
  for (const auto& [k, v] : rc.extra.items()) j[k] = v;
  return j;
}

json history_json(const TrainResult& r) {
  json h = json::array();
  for (const auto& e : r.history) h.push_back(to_json(e));
  return h;
}

// ---- synth --------------------------------------------------------------------

struct SynthFlags {
  std::string scheme = "300w_68", split = "train", out = "corpus";
  int count = 100, side = 64;
  double occlusion = 0.0;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthFlags& f) {
  const BoundaryScheme scheme = scheme_by_id(f.scheme);
  SynthOptions o;
  o.image_side = f.side;
  o.occlusion_fraction = f.occlusion;
  if (f.count < 1) throw UsageError("--count must be positive");
  const auto samples = synth_faces(f.count, f.seed, scheme, o);
  write_corpus(samples, scheme.scheme_id, split_from_string(f.split), f.out);
  cli::write_json(fs::path(f.out) / "config.json", {{"command", "synth"},
                                                    {"scheme", scheme.scheme_id},
                                                    {"split", f.split},
                                                    {"count", f.count},
                                                    {"side", f.side},
                                                    {"occlusion", f.occlusion},
                                                    {"seed", f.seed}});
  log("wrote " + std::to_string(f.count) + " faces to " + f.out);
  return 0;
}

// ---- gen-heatmaps -------------------------------------------------------------

struct HeatmapFlags {
  std::string manifest, out = "heatmaps";
  int side = 256;
  double sigma = 0.0;
  bool previews = false;
};

int cmd_gen_heatmaps(const HeatmapFlags& f) {
  const DatasetManifest manifest = load_manifest(f.manifest);
  const BoundaryScheme scheme = scheme_by_id(manifest.scheme_id);
  if (f.side <= 0 || f.side % 4 != 0) throw UsageError("--side must be a positive multiple of 4");
  const double sigma = f.sigma > 0 ? f.sigma : default_sigma(f.side / 4);
  fs::create_directories(f.out);
  cli::write_json(fs::path(f.out) / "config.json", {{"command", "gen-heatmaps"},
                                                    {"manifest", fs::absolute(f.manifest).string()},
                                                    {"scheme", scheme.scheme_id},
                                                    {"side", f.side},
                                                    {"sigma", sigma},
                                                    {"previews", f.previews}});
  int failed = 0;
  bool data_failure = false;
  for (const auto& item : manifest.items) {
    DatasetManifest one = manifest;
    one.items = {item};
    try {
      const Sample s = load_samples(one, scheme, f.side).front();
      const HeatmapStack h = generate_heatmaps(s.landmarks, scheme, f.side, sigma);
      const std::string stem = sanitize(item.source_id);
      write_heatmap_archive(fs::path(f.out) / (stem + ".bhm"), h.maps);
      if (f.previews) {
        // boundaries side by side
        const int K = h.maps.dim(0), s4 = h.side();
        Tensor strip({s4, K * s4});
        for (int k = 0; k < K; ++k)
          for (int y = 0; y < s4; ++y)
            for (int x = 0; x < s4; ++x) strip[y * K * s4 + k * s4 + x] = h.maps[(k * s4 + y) * s4 + x];
        write_png(fs::path(f.out) / (stem + ".png"), strip);
      }
    } catch (const DataError& e) {
      log("error: " + std::string(e.what()));
      ++failed;
      data_failure = true;
    }
  }
  log(std::to_string(manifest.items.size() - failed) + " of " + std::to_string(manifest.items.size()) +
      " archives written to " + f.out);
  return data_failure ? 2 : 0;
}

// ---- train --------------------------------------------------------------------

int cmd_train(const RunFlags& f) {
  const RunConfig rc = resolve_run(f, {});
  const fs::path out(f.out);
  fs::create_directories(out);
  cli::write_json(out / "config.json", resolved("train", rc));
  const cli::RunData data = cli::load_run_data(rc.data, rc.training.resolved_sigma());
  Networks nets = make_networks(rc.training);
  std::string metrics;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    metrics += to_json(r).dump() + "\n";
    char line[160];
    std::snprintf(line, sizeof line, "epoch %d  loss_R %.5f  val_nme %.5f", r.epoch, r.loss_r, r.val_nme);
    log(line);
  };
  const TrainResult res = train(nets, rc.training, data.train, data.val, hooks);
  cli::write_text(out / "metrics.jsonl", metrics);
  save_checkpoint(out / "checkpoint.json", make_checkpoint(nets, rc.training, res.steps));
  cli::write_json(out / "summary.json", {{"initial_val_nme", res.initial_val_nme},
                                         {"best_val_nme", res.best_val_nme},
                                         {"best_epoch", res.best_epoch},
                                         {"steps", res.steps}});
  log("best val NME " + std::to_string(res.best_val_nme) + " at epoch " + std::to_string(res.best_epoch));
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalFlags {
  std::string checkpoint, manifest, out = "eval", norms = "inter_ocular,inter_pupil,face_size";
  std::string config;
};

int cmd_eval(const EvalFlags& f) {
  TrainConfig cfg;
  Networks nets = networks_from_checkpoint(load_checkpoint(f.checkpoint), &cfg);
  DataSpec d;
  if (!f.config.empty()) {
    const json file = cli::read_json_file(f.config);
    if (file.contains("data")) d = cli::data_spec_from_json(file["data"], fs::absolute(f.config).parent_path());
  }
  if (!f.manifest.empty()) {
    d.val_manifest = f.manifest;
    d.train_manifest.reset();
  }
  if (d.val_manifest) d.scheme = load_manifest(*d.val_manifest).scheme_id;
  d.side = cfg.regressor.input_side;
  const BoundaryScheme scheme = scheme_by_id(d.scheme);
  if (scheme.landmark_count != cfg.regressor.landmarks)
    throw ConfigError("checkpoint predicts " + std::to_string(cfg.regressor.landmarks) + " landmarks, scheme " +
                      scheme.scheme_id + " has " + std::to_string(scheme.landmark_count));
  const TrainingSet val = cli::load_run_data(d, cfg.resolved_sigma(), true).val;

  const fs::path out(f.out);
  fs::create_directories(out);
  const Tensor maps = regressor_maps(nets, cfg, val);
  const auto points = coords_to_points(predict_coords(nets.regressor, val.images, maps), val.input_side);
  json columns = json::object();
  std::vector<std::pair<std::string, std::vector<double>>> table;
  for (const auto& name : split_list(f.norms)) {
    const NormKind kind = norm_kind_from_string(name);
    std::vector<double> errors(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) errors[i] = nme(points[i], val.landmarks[i], scheme, kind);
    const MetricsReport r = make_report(kind, val.ids, errors);
    columns[name] = report_to_json(r);
    cli::write_json(out / ("report_" + name + ".json"), report_to_json(r));
    table.emplace_back(name, errors);
    log(name + ": mean " + std::to_string(r.mean) + "  auc@0.1 " + std::to_string(r.auc) + "  failure@0.1 " +
        std::to_string(r.failure_rate));
  }
  if (table.empty()) throw UsageError("--norms selects no normalisation");
  json report{{"checkpoint", fs::absolute(f.checkpoint).string()}, {"data", cli::to_json(d)}, {"columns", columns}};
  if (nets.estimator && cfg.mode != TrainMode::Oracle) report["heatmap_error"] = heatmap_error(maps, val.heatmaps);
  cli::write_json(out / "report.json", report);
  std::string csv = "sample";
  for (const auto& [name, _] : table) csv += "," + name;
  csv += "\n";
  for (std::size_t i = 0; i < val.ids.size(); ++i) {
    csv += val.ids[i];
    for (const auto& [_, e] : table) {
      char v[32];
      std::snprintf(v, sizeof v, ",%.6f", e[i]);
      csv += v;
    }
    csv += "\n";
  }
  cli::write_text(out / "nme.csv", csv);
  cli::write_json(out / "config.json", {{"command", "eval"},
                                        {"checkpoint", fs::absolute(f.checkpoint).string()},
                                        {"data", cli::to_json(d)},
                                        {"norms", split_list(f.norms)}});
  return 0;
}

// ---- ablate -------------------------------------------------------------------

int cmd_ablate(const RunFlags& f, const std::string& variants_flag) {
  RunConfig rc = resolve_run(f, {"variants"});
  std::vector<std::string> variants;
  if (!variants_flag.empty())
    variants = split_list(variants_flag);
  else if (rc.extra.contains("variants"))
    variants = rc.extra["variants"].get<std::vector<std::string>>();
  else
    variants = ablation_labels();
  for (const auto& v : variants) ablation_variant(v);
  rc.extra["variants"] = variants;
  const fs::path out(f.out);
  fs::create_directories(out);
  cli::write_json(out / "config.json", resolved("ablate", rc));
  const cli::RunData data = cli::load_run_data(rc.data, rc.training.resolved_sigma());
  const auto rows = run_ablation(variants, rc.training, data.train, data.val, [](const std::string& l, const EpochRecord& r) {
    char line[160];
    std::snprintf(line, sizeof line, "%s  epoch %d  val_nme %.5f", l.c_str(), r.epoch, r.val_nme);
    log(line);
  });
  json j = json::array();
  std::string csv = "variant,val_nme,heatmap_error,best_epoch\n";
  for (const auto& r : rows) {
    j.push_back(to_json(r));
    char line[160];
    std::snprintf(line, sizeof line, "%s,%.6f,%s,%d\n", r.label.c_str(), r.val_nme,
                  std::isnan(r.heatmap_error) ? "" : std::to_string(r.heatmap_error).c_str(), r.best_epoch);
    csv += line;
  }
  cli::write_json(out / "ablation.json", {{"config", resolved("ablate", rc)}, {"rows", j}});
  cli::write_text(out / "ablation.csv", csv);
  const std::string table = ablation_table(rows);
  cli::write_text(out / "ablation.txt", table);
  std::printf("%s", table.c_str());
  return 0;
}

// ---- plot-ced -----------------------------------------------------------------

int cmd_plot_ced(const std::vector<std::string>& reports, const std::vector<std::string>& labels, const std::string& out_dir) {
  if (reports.empty()) throw UsageError("at least one --report is needed");
  if (!labels.empty() && labels.size() != reports.size()) throw UsageError("give one --label per --report or none");
  std::vector<std::pair<std::string, MetricsReport>> curves;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    json j;
    try {
      j = cli::read_json_file(reports[i]);
    } catch (const ConfigError& e) {
      throw DataError(e.what());
    }
    const std::string base = labels.empty() ? fs::path(reports[i]).stem().string() : labels[i];
    if (j.contains("columns")) {
      for (const auto& [norm, r] : j["columns"].items()) curves.emplace_back(base + ":" + norm, report_from_json(r));
    } else {
      curves.emplace_back(base, report_from_json(j));
    }
  }
  const fs::path out(out_dir);
  fs::create_directories(out);
  std::string summary = "curve,mean_nme,auc,failure_rate\n";
  for (const auto& [name, r] : curves) {
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f\n", name.c_str(), r.mean, r.auc, r.failure_rate);
    summary += line;
    cli::write_text(out / ("ced_" + sanitize(name) + ".csv"), ced_csv(r));
  }
  cli::write_text(out / "summary.csv", summary);
  cli::write_text(out / "ced.svg", ced_svg(curves));
  json cfg{{"command", "plot-ced"}, {"reports", reports}};
  if (!labels.empty()) cfg["labels"] = labels;
  cli::write_json(out / "config.json", cfg);
  return 0;
}

// ---- bridge -------------------------------------------------------------------

int cmd_bridge(const RunFlags& f) {
  RunConfig rc = resolve_run(f, {"bridge"});
  if (!rc.extra.contains("bridge")) throw ConfigError("run config needs a 'bridge' section");
  const fs::path base = f.config.empty() ? fs::current_path() : fs::absolute(f.config).parent_path();
  BridgeConfig bc = bridge_config_from_json(rc.extra["bridge"], base);
  if (bc.target_scheme != rc.data.scheme) throw ConfigError("bridge target scheme differs from data.scheme");
  bc.regressor.input_side = rc.data.side;
  bc.validate();
  const Estimator source = load_estimator(bc.estimator_checkpoint);
  if (source.config().input_side != rc.data.side) throw ConfigError("estimator input side differs from data.side");

  TrainConfig cfg = rc.training;
  cfg.regressor = bc.regressor;
  cfg.mode = TrainMode::Regressor;
  cfg.zero_heatmaps = bc.without_boundary;
  auto build = [&]() -> Networks {
    if (!bc.without_boundary) return make_bridge_networks(source, cfg);
    cfg.estimator = source.config();
    cfg.discriminator.heatmap_side = source.config().heatmap_side();
    return make_networks(cfg);
  };
  Networks nets = build();
  rc.training = cfg;
  rc.extra["bridge"] = to_json(bc);
  const fs::path out(f.out);
  fs::create_directories(out);
  cli::write_json(out / "config.json", resolved("bridge", rc));
  const cli::RunData data = cli::load_run_data(rc.data, cfg.resolved_sigma());
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r) {
    char line[128];
    std::snprintf(line, sizeof line, "epoch %d  val_nme %.5f", r.epoch, r.val_nme);
    log(line);
  };
  const TrainResult res = train(nets, cfg, data.train, data.val, hooks);
  save_checkpoint(out / "checkpoint.json", make_checkpoint(nets, cfg, res.steps));
  cli::write_json(out / "summary.json", {{"source_scheme", bc.source_scheme},
                                         {"target_scheme", bc.target_scheme},
                                         {"without_boundary", bc.without_boundary},
                                         {"best_val_nme", res.best_val_nme},
                                         {"best_epoch", res.best_epoch},
                                         {"history", history_json(res)}});
  return 0;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    log(std::string("numerical failure: ") + e.what());
    return 3;
  } catch (const DataError& e) {
    log(std::string("data error: ") + e.what());
    return 2;
  } catch (const Error& e) {
    log(std::string("error: ") + e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    log(std::string("config error: ") + e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    log(std::string("io error: ") + e.what());
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary-aware face alignment toolkit"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic corpus (PNG + .pts + manifest)");
  c_synth->add_option("--scheme", synth.scheme, "landmark scheme id");
  c_synth->add_option("--count", synth.count, "number of faces");
  c_synth->add_option("--split", synth.split, "train, val or test");
  c_synth->add_option("--side", synth.side, "image side");
  c_synth->add_option("--occlusion", synth.occlusion, "occluded fraction");
  c_synth->add_option("--seed", synth.seed, "corpus seed");
  c_synth->add_option("--out", synth.out, "output directory");

  HeatmapFlags hm;
  auto* c_hm = app.add_subcommand("gen-heatmaps", "render boundary heatmap archives for a manifest");
  c_hm->add_option("--manifest", hm.manifest, "dataset manifest")->required();
  c_hm->add_option("--side", hm.side, "crop side; maps are a quarter of it");
  c_hm->add_option("--sigma", hm.sigma, "Gaussian sigma in heatmap pixels (default side/64 of the map)");
  c_hm->add_flag("--previews", hm.previews, "also write PNG strips");
  c_hm->add_option("--out", hm.out, "output directory");

  RunFlags tr;
  auto* c_train = app.add_subcommand("train", "train estimator, discriminator and regressor");
  add_run_flags(c_train, tr);

  EvalFlags ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint under one or more normalisations");
  c_eval->add_option("--checkpoint", ev.checkpoint, "training checkpoint")->required();
  c_eval->add_option("--manifest", ev.manifest, "evaluation manifest (else the synthetic validation split)");
  c_eval->add_option("--config", ev.config, "run config whose data section to use");
  c_eval->add_option("--norms", ev.norms, "comma-separated normalisations");
  c_eval->add_option("--out", ev.out, "output directory");

  RunFlags ab;
  std::string variants;
  auto* c_ablate = app.add_subcommand("ablate", "train and score ablation variants");
  add_run_flags(c_ablate, ab);
  c_ablate->add_option("--variants", variants, "comma-separated labels: BL,BL+L1,...,HBL+MP+AL,+Oracle");

  std::vector<std::string> reports, labels;
  std::string ced_out = "ced";
  auto* c_ced = app.add_subcommand("plot-ced", "CED curves as CSV and SVG");
  c_ced->add_option("--report", reports, "report JSON (repeatable)");
  c_ced->add_option("--label", labels, "curve label per report");
  c_ced->add_option("--out", ced_out, "output directory");

  RunFlags br;
  auto* c_bridge = app.add_subcommand("bridge", "train a regressor for one scheme on another scheme's estimator");
  add_run_flags(c_bridge, br);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*c_synth) return guarded([&] { return cmd_synth(synth); });
  if (*c_hm) return guarded([&] { return cmd_gen_heatmaps(hm); });
  if (*c_train) return guarded([&] { return cmd_train(tr); });
  if (*c_eval) return guarded([&] { return cmd_eval(ev); });
  if (*c_ablate) return guarded([&] { return cmd_ablate(ab, variants); });
  if (*c_ced) return guarded([&] { return cmd_plot_ced(reports, labels, ced_out); });
  if (*c_bridge) return guarded([&] { return cmd_bridge(br); });
  return 1;
}
