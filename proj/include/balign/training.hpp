#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/autograd.hpp"
#include "balign/boundary.hpp"
#include "balign/datasets.hpp"
#include "balign/evaluation.hpp"
#include "balign/models.hpp"

namespace balign {

// ---- losses -------------------------------------------------------------------

inline constexpr double kScoreEpsilon = 1e-7;

// Bilinear sample of a [s,s] distance plane at a real-valued heatmap
// position. Outside the map the edge value plus the distance to the edge is
// returned (an upper bound by the triangle inequality).
double sample_distance(const double* plane, int side, Point p);

// Per-boundary effectiveness labels for one sample. `pred` is in heatmap
// pixels; `distances` is [K,s,s]. Boundary k is 1 iff the fraction of its
// landmarks with Dist < theta is at least delta.
std::vector<int> fake_label(const std::vector<Point>& pred, const Tensor& distances, const BoundaryScheme& scheme,
                            double theta, double delta);

// Elementwise log x where label is 1, log(1 - x) where label is 0, with x
// clamped to [eps, 1 - eps]. This is log(1 - |x - label|) evaluated per branch.
Var discriminator_fake_term(const Var& scores, const Tensor& labels);
// -(mean log D(M) + mean fake term)
Var loss_discriminator(const Var& real_scores, const Var& fake_scores, const Tensor& labels);
Var loss_discriminator_real(const Var& real_scores);
Var loss_discriminator_fake(const Var& fake_scores, const Tensor& labels);
// mean log(1 - D(G(I))); the estimator minimises it.
Var loss_adversarial(const Var& fake_scores);
// Mean over stacks of the per-stack mean squared error.
Var loss_heatmap(const std::vector<Var>& stacks, const Tensor& gt);
// Mean squared coordinate error.
Var loss_regression(const Var& pred, const Tensor& gt);

// ---- data ---------------------------------------------------------------------

// A corpus rendered into dense tensors once.
struct TrainingSet {
  std::string scheme_id;
  int input_side = 0;
  double sigma = 1.0;
  Tensor images;     // [N,3,S,S]
  Tensor heatmaps;   // [N,K,S/4,S/4]
  Tensor distances;  // [N,K,S/4,S/4]
  Tensor coords;     // [N,2L], image pixels / S
  std::vector<LandmarkSet> landmarks;
  std::vector<std::string> ids;
  std::vector<bool> occluded;

  int size() const { return static_cast<int>(ids.size()); }
  // Rows `idx` of a leading-axis tensor.
  static Tensor gather(const Tensor& t, const std::vector<int>& idx);
};

// sigma <= 0 selects default_sigma of the heatmap side.
TrainingSet make_training_set(const std::vector<Sample>& samples, const BoundaryScheme& scheme, double sigma = 0.0);

// [N,2L] normalised coordinates -> points in image pixels.
std::vector<std::vector<Point>> coords_to_points(const Tensor& coords, int input_side);

// ---- training -----------------------------------------------------------------

enum class TrainMode {
  Joint,      // estimator, discriminator and regressor alternate
  Oracle,     // regressor consumes ground-truth heatmaps
  Regressor,  // regressor only; heatmaps from a frozen estimator if it fuses
};
std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  EstimatorConfig estimator;
  RegressorConfig regressor;
  DiscriminatorConfig discriminator;
  TrainMode mode = TrainMode::Joint;
  bool adversarial = true;
  double lambda_adv = 0.01;
  double theta = 0.25;  // heatmap pixels; <= 0 means 3 sigma
  double delta = 0.8;
  double sigma = 1.0;  // heatmap pixels; <= 0 means default_sigma(side)
  double lr_estimator = 1e-3, lr_regressor = 1e-3, lr_discriminator = 1e-3;
  int batch_size = 8;
  int max_epochs = 30;
  int patience = 5;
  double gt_mix = 0.0;  // fraction of regressor inputs that see ground-truth heatmaps
  bool zero_heatmaps = false;  // regressor mode only: a fusing regressor sees all-zero maps
  NormKind val_norm = NormKind::InterOcular;
  std::uint64_t seed = 1;

  void validate() const;
  double resolved_sigma() const;
  double resolved_theta() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double loss_g = 0.0, loss_d = 0.0, loss_r = 0.0;
  double val_nme = 0.0;
  double val_heatmap_error = 0.0;  // NaN when no heatmaps are involved
};
nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> history;  // history[0] is the untrained model
  double initial_val_nme = 0.0;
  double best_val_nme = 0.0;
  int best_epoch = 0;
  long steps = 0;
};

// Networks for one run. The estimator is absent when nothing consumes it.
struct Networks {
  std::optional<Estimator> estimator;
  std::optional<Discriminator> discriminator;
  Regressor regressor;
  bool estimator_frozen = false;
};

// Builds the networks the mode needs, seeded from config.seed.
Networks make_networks(const TrainConfig& config);

// Called around each optimisation step: "G", "D_real", "D_fake", "R".
using StepObserver = std::function<void(const std::string& step, const Networks& nets)>;

struct TrainHooks {
  StepObserver on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Alternating loop with early stopping on validation NME. On return the
// networks hold the best-epoch parameters.
TrainResult train(Networks& nets, const TrainConfig& config, const TrainingSet& train_set, const TrainingSet& val_set,
                  const TrainHooks& hooks = {});

// ---- inference ----------------------------------------------------------------

// Final-stack heatmaps, batched. [N,K,s,s]
Tensor predict_heatmaps(const Estimator& g, const Tensor& images, int batch = 16);
// [N,2L] normalised coordinates. `maps` may be empty for a plain regressor.
Tensor predict_coords(const Regressor& r, const Tensor& images, const Tensor& maps, int batch = 16);

// Heatmaps the regressor should see for `set` under `config.mode`.
Tensor regressor_maps(const Networks& nets, const TrainConfig& config, const TrainingSet& set);

struct Evaluation {
  std::vector<double> nme;
  double mean_nme = 0.0;
  double heatmap_error = 0.0;  // NaN without an estimator
};
Evaluation evaluate(const Networks& nets, const TrainConfig& config, const TrainingSet& set, const BoundaryScheme& scheme,
                    NormKind norm);

// ---- checkpoints of a run -----------------------------------------------------

Checkpoint make_checkpoint(const Networks& nets, const TrainConfig& config, long step);
// Rebuilds networks from a "train" checkpoint.
Networks networks_from_checkpoint(const Checkpoint& ck, TrainConfig* config_out = nullptr);

}  // namespace balign
