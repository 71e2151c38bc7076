#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/training.hpp"

namespace balign {

// One row of the ablation matrix.
//   BL                 regressor alone
//   BL+L1 .. BL+L1&2&3&4  fusion at {input,s1} growing to {input..s4}, frozen HBL+MP+AL estimator
//   BL+HG/B, BL+CL, BL+HG  full fusion with each transform kind, frozen HBL+MP+AL estimator
//   HBL, HBL+MP, HBL+MP+AL joint training without MP and AL, with MP, with both
//   +Oracle            full fusion on ground-truth heatmaps
struct AblationVariant {
  std::string label;
  TrainMode mode = TrainMode::Regressor;
  std::set<FusionLevel> levels;
  FusionKind kind = FusionKind::Hourglass;
  bool message_passing = true;
  bool adversarial = false;
  bool frozen_estimator = false;  // heatmaps from the HBL+MP+AL estimator
};

const std::vector<std::string>& ablation_labels();
// ConfigError for an unknown label.
AblationVariant ablation_variant(const std::string& label);
// `base` with the variant's switches applied.
TrainConfig variant_config(const AblationVariant& v, const TrainConfig& base);

struct AblationRow {
  std::string label;
  double val_nme = 0.0;
  double heatmap_error = 0.0;  // NaN when the row has no estimator
  int best_epoch = 0;
  int epochs = 0;
  double seconds = 0.0;
};
nlohmann::json to_json(const AblationRow& r);

using AblationLog = std::function<void(const std::string& label, const EpochRecord& rec)>;

// Rows in the order of `labels`. The HBL+MP+AL run is shared by every
// frozen-estimator row.
std::vector<AblationRow> run_ablation(const std::vector<std::string>& labels, const TrainConfig& base,
                                      const TrainingSet& train_set, const TrainingSet& val_set,
                                      const AblationLog& log = {});

// Fixed-width text table.
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace balign
