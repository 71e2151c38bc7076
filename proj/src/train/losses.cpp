#include <algorithm>
#include <cmath>

#include "balign/errors.hpp"
#include "balign/training.hpp"

namespace balign {

double sample_distance(const double* plane, int side, Point p) {
  const double max = side - 1;
  const Point c{std::clamp(p.x, 0.0, max), std::clamp(p.y, 0.0, max)};
  const int x0 = std::min(static_cast<int>(std::floor(c.x)), side - 2);
  const int y0 = std::min(static_cast<int>(std::floor(c.y)), side - 2);
  const double fx = c.x - x0, fy = c.y - y0;
  auto at = [&](int x, int y) { return plane[static_cast<std::size_t>(y) * side + x]; };
  const double top = at(x0, y0) * (1 - fx) + at(x0 + 1, y0) * fx;
  const double bottom = at(x0, y0 + 1) * (1 - fx) + at(x0 + 1, y0 + 1) * fx;
  return top * (1 - fy) + bottom * fy + distance(p, c);
}

std::vector<int> fake_label(const std::vector<Point>& pred, const Tensor& distances, const BoundaryScheme& scheme,
                            double theta, double delta) {
  const auto& s = distances.shape();
  if (s.size() != 3 || s[0] != scheme.boundary_count() || s[1] != s[2] || s[1] < 2)
    throw DimensionError("distance maps " + shape_str(s) + " do not match scheme " + scheme.scheme_id);
  if (static_cast<int>(pred.size()) != scheme.landmark_count)
    throw DimensionError("expected " + std::to_string(scheme.landmark_count) + " predicted landmarks, got " +
                         std::to_string(pred.size()));
  const int side = s[1];
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  std::vector<int> labels(s[0]);
  for (int k = 0; k < s[0]; ++k) {
    const auto& idx = scheme.boundaries[k].indices;
    if (idx.empty()) throw ConfigError("boundary '" + scheme.boundaries[k].name + "' has no landmarks");
    int close = 0;
    for (int i : idx) close += sample_distance(distances.storage().data() + k * plane, side, pred[i]) < theta;
    // Pr(Dist < theta) < delta gives 0
    labels[k] = static_cast<double>(close) / static_cast<double>(idx.size()) < delta ? 0 : 1;
  }
  return labels;
}

namespace {

Var clamped(const Var& scores) { return clamp(scores, kScoreEpsilon, 1.0 - kScoreEpsilon); }

Var one_minus(const Var& x) { return add_scalar(scale(x, -1.0), 1.0); }

}  // namespace

Var discriminator_fake_term(const Var& scores, const Tensor& labels) {
  if (scores.shape() != labels.shape())
    throw DimensionError("labels " + shape_str(labels.shape()) + " do not match scores " + shape_str(scores.shape()));
  Tensor inverse(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw UsageError("effectiveness labels must be 0 or 1");
    inverse[i] = 1.0 - labels[i];
  }
  const Var x = clamped(scores);
  return add(mul(constant(labels), log(x)), mul(constant(inverse), log(one_minus(x))));
}

Var loss_discriminator_real(const Var& real_scores) { return scale(mean(log(clamped(real_scores))), -1.0); }

Var loss_discriminator_fake(const Var& fake_scores, const Tensor& labels) {
  return scale(mean(discriminator_fake_term(fake_scores, labels)), -1.0);
}

Var loss_discriminator(const Var& real_scores, const Var& fake_scores, const Tensor& labels) {
  return add(loss_discriminator_real(real_scores), loss_discriminator_fake(fake_scores, labels));
}

Var loss_adversarial(const Var& fake_scores) { return mean(log(one_minus(clamped(fake_scores)))); }

Var loss_heatmap(const std::vector<Var>& stacks, const Tensor& gt) {
  if (stacks.empty()) throw UsageError("no heatmap stacks to supervise");
  const Var target = constant(gt);
  Var total;
  for (const auto& m : stacks) {
    if (m.shape() != gt.shape())
      throw DimensionError("heatmaps " + shape_str(m.shape()) + " do not match ground truth " + shape_str(gt.shape()));
    const Var l = mean(square(sub(m, target)));
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(stacks.size()));
}

Var loss_regression(const Var& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw DimensionError("prediction " + shape_str(pred.shape()) + " does not match target " + shape_str(gt.shape()));
  return mean(square(sub(pred, constant(gt))));
}

}  // namespace balign
