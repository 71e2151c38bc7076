#include "balign/ablation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "balign/errors.hpp"

namespace balign {

namespace {

const std::set<FusionLevel> kAllLevels{FusionLevel::Input, FusionLevel::Stage1, FusionLevel::Stage2,
                                       FusionLevel::Stage3, FusionLevel::Stage4};

std::set<FusionLevel> levels_up_to(int stage) {
  std::set<FusionLevel> s{FusionLevel::Input};
  for (int i = 1; i <= stage; ++i) s.insert(static_cast<FusionLevel>(i));
  return s;
}

const char* kFull = "HBL+MP+AL";

}  // namespace

const std::vector<std::string>& ablation_labels() {
  static const std::vector<std::string> labels{"BL",      "BL+L1",  "BL+L1&2", "BL+L1&2&3", "BL+L1&2&3&4",
                                               "BL+HG/B", "BL+CL",  "BL+HG",   "HBL",       "HBL+MP",
                                               "HBL+MP+AL", "+Oracle"};
  return labels;
}

AblationVariant ablation_variant(const std::string& label) {
  AblationVariant v;
  v.label = label;
  if (label == "BL") return v;
  if (label.rfind("BL+L1", 0) == 0) {
    static const std::map<std::string, int> stages{{"BL+L1", 1}, {"BL+L1&2", 2}, {"BL+L1&2&3", 3}, {"BL+L1&2&3&4", 4}};
    const auto it = stages.find(label);
    if (it == stages.end()) throw ConfigError("unknown ablation variant '" + label + "'");
    v.levels = levels_up_to(it->second);
    v.frozen_estimator = true;
    return v;
  }
  if (label == "BL+HG/B" || label == "BL+CL" || label == "BL+HG") {
    v.levels = kAllLevels;
    v.kind = label == "BL+HG/B" ? FusionKind::HourglassNoBoundary
             : label == "BL+CL" ? FusionKind::Conv
                                : FusionKind::Hourglass;
    v.frozen_estimator = true;
    return v;
  }
  if (label == "HBL" || label == "HBL+MP" || label == kFull) {
    v.mode = TrainMode::Joint;
    v.levels = kAllLevels;
    v.message_passing = label != "HBL";
    v.adversarial = label == kFull;
    return v;
  }
  if (label == "+Oracle") {
    v.mode = TrainMode::Oracle;
    v.levels = kAllLevels;
    return v;
  }
  throw ConfigError("unknown ablation variant '" + label + "'");
}

TrainConfig variant_config(const AblationVariant& v, const TrainConfig& base) {
  TrainConfig c = base;
  c.mode = v.mode;
  c.adversarial = v.adversarial;
  c.zero_heatmaps = false;
  c.estimator.message_passing = v.message_passing;
  c.regressor.fusion_levels = v.levels;
  c.regressor.fusion_kind = v.kind;
  return c;
}

nlohmann::json to_json(const AblationRow& r) {
  nlohmann::json j{{"label", r.label},     {"val_nme", r.val_nme}, {"best_epoch", r.best_epoch},
                   {"epochs", r.epochs},   {"seconds", r.seconds}};
  j["heatmap_error"] = std::isnan(r.heatmap_error) ? nlohmann::json(nullptr) : nlohmann::json(r.heatmap_error);
  return j;
}

std::vector<AblationRow> run_ablation(const std::vector<std::string>& labels, const TrainConfig& base,
                                      const TrainingSet& train_set, const TrainingSet& val_set, const AblationLog& log) {
  std::vector<AblationVariant> variants;
  bool need_full = false;
  for (const auto& l : labels) {
    variants.push_back(ablation_variant(l));
    need_full |= variants.back().frozen_estimator;
  }
  const BoundaryScheme scheme = scheme_by_id(train_set.scheme_id);

  std::map<std::string, AblationRow> done;
  std::optional<Estimator> full_estimator;

  auto run = [&](const AblationVariant& v) {
    const TrainConfig cfg = variant_config(v, base);
    Networks nets = make_networks(cfg);
    if (v.frozen_estimator) nets.estimator->params().restore(full_estimator->params().snapshot());
    TrainHooks hooks;
    if (log) hooks.on_epoch = [&](const EpochRecord& r) { log(v.label, r); };
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = train(nets, cfg, train_set, val_set, hooks);
    AblationRow row;
    row.label = v.label;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.best_epoch = res.best_epoch;
    row.epochs = res.history.back().epoch;
    const Evaluation ev = evaluate(nets, cfg, val_set, scheme, cfg.val_norm);
    row.val_nme = ev.mean_nme;
    row.heatmap_error = ev.heatmap_error;
    if (v.label == kFull) full_estimator.emplace(*nets.estimator);
    done[v.label] = row;
  };

  if (need_full) run(ablation_variant(kFull));
  for (const auto& v : variants)
    if (!done.count(v.label)) run(v);

  std::vector<AblationRow> rows;
  for (const auto& l : labels) rows.push_back(done.at(l));
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "variant          val_nme   heatmap_err  best_epoch\n";
  char line[128];
  for (const auto& r : rows) {
    if (std::isnan(r.heatmap_error))
      std::snprintf(line, sizeof line, "%-15s  %.5f   %-11s  %d\n", r.label.c_str(), r.val_nme, "-", r.best_epoch);
    else
      std::snprintf(line, sizeof line, "%-15s  %.5f   %.5f      %d\n", r.label.c_str(), r.val_nme, r.heatmap_error,
                    r.best_epoch);
    out += line;
  }
  return out;
}

}  // namespace balign
