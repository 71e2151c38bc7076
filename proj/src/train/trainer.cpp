#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "balign/errors.hpp"
#include "balign/optim.hpp"
#include "balign/training.hpp"

namespace balign {
using nlohmann::json;

// ---- data ---------------------------------------------------------------------

Tensor TrainingSet::gather(const Tensor& t, const std::vector<int>& idx) {
  Shape shape = t.shape();
  const std::size_t row = t.size() / static_cast<std::size_t>(shape[0]);
  shape[0] = static_cast<int>(idx.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.storage().begin() + idx[i] * row, row, out.storage().begin() + i * row);
  return out;
}

TrainingSet make_training_set(const std::vector<Sample>& samples, const BoundaryScheme& scheme, double sigma) {
  if (samples.empty()) throw DataError("training set is empty");
  TrainingSet set;
  set.scheme_id = scheme.scheme_id;
  const int S = samples[0].image.dim(1);
  const int side = S / 4, K = scheme.boundary_count(), L = scheme.landmark_count;
  set.input_side = S;
  set.sigma = sigma > 0.0 ? sigma : default_sigma(side);
  const int N = static_cast<int>(samples.size());
  set.images = Tensor({N, 3, S, S});
  set.heatmaps = Tensor({N, K, side, side});
  set.distances = Tensor({N, K, side, side});
  set.coords = Tensor({N, 2 * L});
  const std::size_t img = 3ul * S * S, maps = static_cast<std::size_t>(K) * side * side;
  for (int n = 0; n < N; ++n) {
    const Sample& s = samples[n];
    if (s.image.shape() != Shape{3, S, S})
      throw DimensionError("sample " + s.source_id + " has image " + shape_str(s.image.shape()) + ", expected [3," +
                           std::to_string(S) + "," + std::to_string(S) + "]");
    if (s.landmarks.scheme_id != scheme.scheme_id)
      throw DataError("sample " + s.source_id + " uses scheme " + s.landmarks.scheme_id + ", expected " +
                      scheme.scheme_id);
    std::copy(s.image.storage().begin(), s.image.storage().end(), set.images.storage().begin() + n * img);
    const HeatmapStack h = generate_heatmaps(s.landmarks, scheme, S, set.sigma);
    std::copy(h.maps.storage().begin(), h.maps.storage().end(), set.heatmaps.storage().begin() + n * maps);
    std::copy(h.distances.storage().begin(), h.distances.storage().end(), set.distances.storage().begin() + n * maps);
    for (int i = 0; i < L; ++i) {
      set.coords[n * 2 * L + 2 * i] = s.landmarks.points[i].x / S;
      set.coords[n * 2 * L + 2 * i + 1] = s.landmarks.points[i].y / S;
    }
    set.landmarks.push_back(s.landmarks);
    set.ids.push_back(s.source_id);
    set.occluded.push_back(s.occluded);
  }
  return set;
}

std::vector<std::vector<Point>> coords_to_points(const Tensor& coords, int input_side) {
  const int N = coords.dim(0), L = coords.dim(1) / 2;
  std::vector<std::vector<Point>> out(N, std::vector<Point>(L));
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < L; ++i)
      out[n][i] = {coords[n * 2 * L + 2 * i] * input_side, coords[n * 2 * L + 2 * i + 1] * input_side};
  return out;
}

// ---- config -------------------------------------------------------------------

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Joint: return "joint";
    case TrainMode::Oracle: return "oracle";
    case TrainMode::Regressor: return "regressor";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "joint") return TrainMode::Joint;
  if (s == "oracle") return TrainMode::Oracle;
  if (s == "regressor") return TrainMode::Regressor;
  throw ConfigError("unknown training mode '" + s + "' (expected joint, oracle or regressor)");
}

void TrainConfig::validate() const {
  estimator.validate();
  regressor.validate();
  discriminator.validate();
  if (estimator.input_side != regressor.input_side)
    throw ConfigError("estimator and regressor input sides differ");
  if (estimator.boundaries != regressor.boundaries || estimator.boundaries != discriminator.boundaries)
    throw ConfigError("estimator, regressor and discriminator disagree on the boundary count");
  if (discriminator.heatmap_side != estimator.heatmap_side())
    throw ConfigError("discriminator heatmap side " + std::to_string(discriminator.heatmap_side) +
                      " does not match the estimator's " + std::to_string(estimator.heatmap_side()));
  if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in (0, 1]");
  if (lambda_adv < 0.0) throw ConfigError("lambda_adv must be non-negative");
  if (batch_size < 1 || max_epochs < 0 || patience < 1) throw ConfigError("batch_size and patience must be positive");
  if (!(lr_estimator > 0 && lr_regressor > 0 && lr_discriminator > 0)) throw ConfigError("learning rates must be positive");
  if (!(gt_mix >= 0.0 && gt_mix <= 1.0)) throw ConfigError("gt_mix must lie in [0, 1]");
  if (zero_heatmaps && mode != TrainMode::Regressor) throw ConfigError("zero_heatmaps needs regressor mode");
}

double TrainConfig::resolved_sigma() const {
  return sigma > 0.0 ? sigma : default_sigma(estimator.heatmap_side());
}

double TrainConfig::resolved_theta() const { return theta > 0.0 ? theta : 3.0 * resolved_sigma(); }

json to_json(const TrainConfig& c) {
  return {{"estimator", to_json(c.estimator)},
          {"regressor", to_json(c.regressor)},
          {"discriminator", to_json(c.discriminator)},
          {"mode", to_string(c.mode)},
          {"adversarial", c.adversarial},
          {"lambda_adv", c.lambda_adv},
          {"theta", c.theta},
          {"delta", c.delta},
          {"sigma", c.sigma},
          {"lr_estimator", c.lr_estimator},
          {"lr_regressor", c.lr_regressor},
          {"lr_discriminator", c.lr_discriminator},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"gt_mix", c.gt_mix},
          {"zero_heatmaps", c.zero_heatmaps},
          {"val_norm", to_string(c.val_norm)},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const char* keys[] = {"estimator", "regressor",     "discriminator", "mode",         "adversarial",
                               "lambda_adv", "theta",        "delta",         "sigma",        "lr_estimator",
                               "lr_regressor", "lr_discriminator", "batch_size", "max_epochs", "patience",
                               "gt_mix",    "val_norm",      "seed",         "zero_heatmaps"};
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(keys), std::end(keys), key) == std::end(keys))
      throw ConfigError("unknown key '" + key + "' in training config");
  TrainConfig c;
  try {
    if (j.contains("estimator")) c.estimator = estimator_config_from_json(j["estimator"]);
    if (j.contains("regressor")) c.regressor = regressor_config_from_json(j["regressor"]);
    if (j.contains("discriminator")) c.discriminator = discriminator_config_from_json(j["discriminator"]);
    if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
    if (j.contains("val_norm")) c.val_norm = norm_kind_from_string(j["val_norm"].get<std::string>());
    c.adversarial = j.value("adversarial", c.adversarial);
    c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
    c.theta = j.value("theta", c.theta);
    c.delta = j.value("delta", c.delta);
    c.sigma = j.value("sigma", c.sigma);
    c.lr_estimator = j.value("lr_estimator", c.lr_estimator);
    c.lr_regressor = j.value("lr_regressor", c.lr_regressor);
    c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.gt_mix = j.value("gt_mix", c.gt_mix);
    c.zero_heatmaps = j.value("zero_heatmaps", c.zero_heatmaps);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const EpochRecord& r) {
  json j = {{"epoch", r.epoch}, {"step", r.step},       {"loss_G", r.loss_g},
            {"loss_D", r.loss_d}, {"loss_R", r.loss_r}, {"val_nme", r.val_nme}};
  if (!std::isnan(r.val_heatmap_error)) j["val_heatmap_error"] = r.val_heatmap_error;
  return j;
}

// ---- networks -----------------------------------------------------------------

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

bool needs_estimator(const TrainConfig& c) {
  return c.mode == TrainMode::Joint ||
         (c.mode == TrainMode::Regressor && c.regressor.uses_heatmaps() && !c.zero_heatmaps);
}

}  // namespace

Networks make_networks(const TrainConfig& config) {
  config.validate();
  Networks nets{std::nullopt, std::nullopt, Regressor(config.regressor, derive_seed(config.seed, 2)), false};
  if (needs_estimator(config)) nets.estimator.emplace(config.estimator, derive_seed(config.seed, 1));
  if (config.mode == TrainMode::Joint && config.adversarial)
    nets.discriminator.emplace(config.discriminator, derive_seed(config.seed, 3));
  nets.estimator_frozen = config.mode == TrainMode::Regressor;
  return nets;
}

// ---- inference ----------------------------------------------------------------

Tensor predict_heatmaps(const Estimator& g, const Tensor& images, int batch) {
  const int N = images.dim(0);
  const int K = g.config().boundaries, s = g.config().heatmap_side();
  Tensor out({N, K, s, s});
  const std::size_t row = static_cast<std::size_t>(K) * s * s;
  for (int b = 0; b < N; b += batch) {
    std::vector<int> idx(std::min(batch, N - b));
    std::iota(idx.begin(), idx.end(), b);
    const Var m = g.forward(constant(TrainingSet::gather(images, idx))).back();
    std::copy(m.value().storage().begin(), m.value().storage().end(), out.storage().begin() + b * row);
  }
  return out;
}

Tensor predict_coords(const Regressor& r, const Tensor& images, const Tensor& maps, int batch) {
  const int N = images.dim(0), L2 = 2 * r.config().landmarks;
  Tensor out({N, L2});
  const bool fused = r.config().uses_heatmaps();
  for (int b = 0; b < N; b += batch) {
    std::vector<int> idx(std::min(batch, N - b));
    std::iota(idx.begin(), idx.end(), b);
    const Var m = fused ? constant(TrainingSet::gather(maps, idx)) : Var();
    const Var y = r.forward(constant(TrainingSet::gather(images, idx)), m);
    std::copy(y.value().storage().begin(), y.value().storage().end(), out.storage().begin() + b * L2);
  }
  return out;
}

Tensor regressor_maps(const Networks& nets, const TrainConfig& config, const TrainingSet& set) {
  if (config.mode == TrainMode::Oracle) return set.heatmaps;
  if (config.zero_heatmaps && config.regressor.uses_heatmaps()) return Tensor(set.heatmaps.shape());
  if (!config.regressor.uses_heatmaps() && config.mode != TrainMode::Joint) return {};
  if (!nets.estimator) throw UsageError("heatmaps requested without an estimator");
  return predict_heatmaps(*nets.estimator, set.images);
}

namespace {

Evaluation evaluate_with_maps(const Networks& nets, const TrainingSet& set, const Tensor& maps,
                              const BoundaryScheme& scheme, NormKind norm, bool maps_from_estimator) {
  Evaluation ev;
  const Tensor coords = predict_coords(nets.regressor, set.images, maps);
  const auto points = coords_to_points(coords, set.input_side);
  ev.nme.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) ev.nme[i] = nme(points[i], set.landmarks[i], scheme, norm);
  ev.mean_nme = std::accumulate(ev.nme.begin(), ev.nme.end(), 0.0) / static_cast<double>(ev.nme.size());
  ev.heatmap_error = maps_from_estimator ? heatmap_error(maps, set.heatmaps) : std::numeric_limits<double>::quiet_NaN();
  return ev;
}

}  // namespace

Evaluation evaluate(const Networks& nets, const TrainConfig& config, const TrainingSet& set, const BoundaryScheme& scheme,
                    NormKind norm) {
  const Tensor maps = regressor_maps(nets, config, set);
  return evaluate_with_maps(nets, set, maps, scheme, norm, config.mode != TrainMode::Oracle && nets.estimator.has_value());
}

// ---- training -----------------------------------------------------------------

namespace {

struct Snapshot {
  std::map<std::string, Tensor> g, d, r;
};

Snapshot take_snapshot(const Networks& nets) {
  Snapshot s;
  if (nets.estimator) s.g = nets.estimator->params().snapshot();
  if (nets.discriminator) s.d = nets.discriminator->params().snapshot();
  s.r = nets.regressor.params().snapshot();
  return s;
}

void restore_snapshot(Networks& nets, const Snapshot& s) {
  if (nets.estimator) nets.estimator->params().restore(s.g);
  if (nets.discriminator) nets.discriminator->params().restore(s.d);
  nets.regressor.params().restore(s.r);
}

void require_finite_loss(double v, const char* what, long step) {
  if (!std::isfinite(v))
    throw NumericalError(std::string(what) + " diverged at step " + std::to_string(step) + " (value " +
                         std::to_string(v) + ")");
}

}  // namespace

TrainResult train(Networks& nets, const TrainConfig& config, const TrainingSet& train_set, const TrainingSet& val_set,
                  const TrainHooks& hooks) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw DataError("training and validation sets must be non-empty");
  if (train_set.input_side != config.regressor.input_side)
    throw ConfigError("corpus side " + std::to_string(train_set.input_side) + " does not match the configured " +
                      std::to_string(config.regressor.input_side));
  const BoundaryScheme scheme = scheme_by_id(train_set.scheme_id);
  if (scheme.landmark_count != config.regressor.landmarks)
    throw ConfigError("regressor predicts " + std::to_string(config.regressor.landmarks) + " landmarks, scheme " +
                      scheme.scheme_id + " has " + std::to_string(scheme.landmark_count));
  const bool joint = config.mode == TrainMode::Joint;
  if (joint && !nets.estimator) throw UsageError("joint training needs an estimator");
  const bool adversarial = joint && config.adversarial && nets.discriminator;
  const bool fused = config.regressor.uses_heatmaps();
  const int side = train_set.input_side / 4;
  if (std::abs(config.resolved_sigma() - train_set.sigma) > 1e-12 || std::abs(val_set.sigma - train_set.sigma) > 1e-12)
    throw ConfigError("heatmap sigma of the corpus (" + std::to_string(train_set.sigma) +
                      ") does not match the configured " + std::to_string(config.resolved_sigma()));
  const double theta = config.resolved_theta();

  std::optional<Adam> opt_g, opt_d;
  if (joint) opt_g.emplace(nets.estimator->params().vars(), AdamOptions{config.lr_estimator});
  if (adversarial) opt_d.emplace(nets.discriminator->params().vars(), AdamOptions{config.lr_discriminator});
  Adam opt_r(nets.regressor.params().vars(), AdamOptions{config.lr_regressor});

  // frozen or ground-truth heatmaps never change: render them once
  Tensor fixed_train_maps, fixed_val_maps;
  const bool fixed_maps = !joint;
  if (fixed_maps) {
    fixed_train_maps = regressor_maps(nets, config, train_set);
    fixed_val_maps = regressor_maps(nets, config, val_set);
  }
  const bool maps_from_estimator = config.mode != TrainMode::Oracle && nets.estimator.has_value();

  auto validate_now = [&] {
    const Tensor maps = fixed_maps ? fixed_val_maps : predict_heatmaps(*nets.estimator, val_set.images);
    return evaluate_with_maps(nets, val_set, maps, scheme, config.val_norm, maps_from_estimator);
  };

  auto observe = [&](const char* step) {
    if (hooks.on_step) hooks.on_step(step, nets);
  };

  TrainResult result;
  EpochRecord first;
  {
    const Evaluation ev = validate_now();
    first.val_nme = ev.mean_nme;
    first.val_heatmap_error = ev.heatmap_error;
  }
  result.history.push_back(first);
  result.initial_val_nme = result.best_val_nme = first.val_nme;
  if (hooks.on_epoch) hooks.on_epoch(first);
  Snapshot best = take_snapshot(nets);

  std::mt19937_64 rng(derive_seed(config.seed, 4));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int N = train_set.size();
  const int K = scheme.boundary_count();
  long step = 0;
  int stale = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double sum_g = 0, sum_d = 0, sum_r = 0;
    int batches = 0;

    for (int b = 0; b < N; b += config.batch_size) {
      const std::vector<int> idx(order.begin() + b, order.begin() + std::min(N, b + config.batch_size));
      const int n = static_cast<int>(idx.size());
      const Var images = constant(TrainingSet::gather(train_set.images, idx));
      const Tensor gt_maps = TrainingSet::gather(train_set.heatmaps, idx);
      const Tensor gt_coords = TrainingSet::gather(train_set.coords, idx);
      Tensor maps_hat;

      if (joint) {
        // 1. estimator: MSE (+ lambda * adversarial)
        const std::vector<Var> stacks = nets.estimator->forward(images);
        Var loss_g = loss_heatmap(stacks, gt_maps);
        if (adversarial) loss_g = add(loss_g, scale(loss_adversarial(nets.discriminator->forward(stacks.back())), config.lambda_adv));
        require_finite_loss(loss_g.value()[0], "estimator loss", step);
        backward(loss_g);
        opt_g->step();
        opt_g->zero_grad();
        if (adversarial) nets.discriminator->params().zero_grad();
        sum_g += loss_g.value()[0];
        maps_hat = stacks.back().value();
        observe("G");
      } else if (fused) {
        maps_hat = TrainingSet::gather(fixed_train_maps, idx);
      }

      Tensor regressor_in = maps_hat;
      if (fused && config.gt_mix > 0.0) {
        const std::size_t row = gt_maps.size() / n;
        for (int i = 0; i < n; ++i)
          if (unit(rng) < config.gt_mix)
            std::copy_n(gt_maps.storage().begin() + i * row, row, regressor_in.storage().begin() + i * row);
      }
      // R's prediction before its update; it also carries the R step's graph
      const Var pred = nets.regressor.forward(images, fused ? constant(regressor_in) : Var());

      if (adversarial) {
        // 2. discriminator on ground truth
        const Var loss_real = loss_discriminator_real(nets.discriminator->forward(constant(gt_maps)));
        require_finite_loss(loss_real.value()[0], "discriminator loss", step);
        backward(loss_real);
        opt_d->step();
        opt_d->zero_grad();
        observe("D_real");

        // 3. discriminator on generated maps, labelled through R's landmarks
        const auto points = coords_to_points(pred.value(), side);
        const bool global = nets.discriminator->config().head == DiscriminatorHead::Global;
        Tensor labels({n, global ? 1 : K});
        for (int i = 0; i < n; ++i) {
          Tensor dist({K, side, side});
          const std::size_t row = dist.size();
          std::copy_n(train_set.distances.storage().begin() + idx[i] * row, row, dist.storage().begin());
          const auto l = fake_label(points[i], dist, scheme, theta, config.delta);
          if (global)
            labels[i] = std::all_of(l.begin(), l.end(), [](int v) { return v == 1; }) ? 1.0 : 0.0;
          else
            for (int k = 0; k < K; ++k) labels[i * K + k] = l[k];
        }
        const Var loss_fake = loss_discriminator_fake(nets.discriminator->forward(constant(maps_hat)), labels);
        require_finite_loss(loss_fake.value()[0], "discriminator loss", step);
        backward(loss_fake);
        opt_d->step();
        opt_d->zero_grad();
        sum_d += loss_real.value()[0] + loss_fake.value()[0];
        observe("D_fake");
      }

      // 4. regressor on detached heatmaps
      const Var loss_r = loss_regression(pred, gt_coords);
      require_finite_loss(loss_r.value()[0], "regressor loss", step);
      backward(loss_r);
      opt_r.step();
      opt_r.zero_grad();
      sum_r += loss_r.value()[0];
      observe("R");
      ++step;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.loss_g = joint ? sum_g / batches : 0.0;
    rec.loss_d = adversarial ? sum_d / batches : 0.0;
    rec.loss_r = sum_r / batches;
    const Evaluation ev = validate_now();
    rec.val_nme = ev.mean_nme;
    rec.val_heatmap_error = ev.heatmap_error;
    require_finite_loss(rec.val_nme, "validation NME", step);
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (rec.val_nme < result.best_val_nme) {
      result.best_val_nme = rec.val_nme;
      result.best_epoch = epoch;
      best = take_snapshot(nets);
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  result.steps = step;
  restore_snapshot(nets, best);
  return result;
}

// ---- checkpoints --------------------------------------------------------------

Checkpoint make_checkpoint(const Networks& nets, const TrainConfig& config, long step) {
  std::vector<std::pair<std::string, const nn::ParamStore*>> stores{{"R", &nets.regressor.params()}};
  if (nets.estimator) stores.emplace_back("G", &nets.estimator->params());
  if (nets.discriminator) stores.emplace_back("D", &nets.discriminator->params());
  return {"train", step, to_json(config), parameters_json(stores)};
}

Networks networks_from_checkpoint(const Checkpoint& ck, TrainConfig* config_out) {
  if (ck.kind != "train") throw DataError("checkpoint kind '" + ck.kind + "' is not a training checkpoint");
  const TrainConfig config = train_config_from_json(ck.config);
  Networks nets = make_networks(config);
  load_parameters(ck.parameters, "R", nets.regressor.params());
  if (nets.estimator) load_parameters(ck.parameters, "G", nets.estimator->params());
  if (nets.discriminator) load_parameters(ck.parameters, "D", nets.discriminator->params());
  if (config_out) *config_out = config;
  return nets;
}

}  // namespace balign
