#include <algorithm>
#include <cmath>
#include <numeric>

#include "balign/errors.hpp"
#include "balign/evaluation.hpp"

namespace balign {

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::InterOcular: return "inter_ocular";
    case NormKind::InterPupil: return "inter_pupil";
    case NormKind::FaceSize: return "face_size";
  }
  return "?";
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "inter_ocular") return NormKind::InterOcular;
  if (s == "inter_pupil") return NormKind::InterPupil;
  if (s == "face_size") return NormKind::FaceSize;
  throw ConfigError("unknown normalisation '" + s + "' (expected inter_ocular, inter_pupil or face_size)");
}

namespace {

Point centroid(const std::vector<Point>& pts, const std::vector<int>& idx) {
  Point c;
  for (int i : idx) {
    c.x += pts[i].x;
    c.y += pts[i].y;
  }
  c.x /= static_cast<double>(idx.size());
  c.y /= static_cast<double>(idx.size());
  return c;
}

void require_errors(const std::vector<double>& errors) {
  if (errors.empty()) throw DataError("no errors to summarise");
  for (double e : errors)
    if (!(e >= 0.0) || !std::isfinite(e)) throw DataError("errors must be finite and non-negative");
}

}  // namespace

double normalizer(const LandmarkSet& gt, const BoundaryScheme& scheme, NormKind kind) {
  gt.validate(scheme);
  double d = 0.0;
  switch (kind) {
    case NormKind::InterOcular: {
      const auto [a, b] = scheme.normalization.outer_eye_corners;
      d = distance(gt.points[a], gt.points[b]);
      break;
    }
    case NormKind::InterPupil: {
      const auto& g = scheme.normalization.eye_groups;
      if (g[0].empty() || g[1].empty()) throw ConfigError("scheme " + scheme.scheme_id + " has no eye groups");
      d = distance(centroid(gt.points, g[0]), centroid(gt.points, g[1]));
      break;
    }
    case NormKind::FaceSize:
      d = std::sqrt(gt.bbox.w * gt.bbox.h);
      break;
  }
  if (!(d > 0.0) || !std::isfinite(d)) throw DataError(to_string(kind) + " normaliser is not positive");
  return d;
}

double nme(const std::vector<Point>& pred, const LandmarkSet& gt, const BoundaryScheme& scheme, NormKind kind) {
  if (pred.size() != gt.points.size())
    throw DimensionError("prediction has " + std::to_string(pred.size()) + " landmarks, ground truth " +
                         std::to_string(gt.points.size()));
  const double norm = normalizer(gt, scheme, kind);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += distance(pred[i], gt.points[i]);
  return total / static_cast<double>(pred.size()) / norm;
}

std::vector<double> ced(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  require_errors(errors);
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back(static_cast<double>(n) / static_cast<double>(sorted.size()));
  }
  return out;
}

double auc(const std::vector<double>& errors, double max_t) {
  require_errors(errors);
  if (!(max_t > 0.0)) throw UsageError("AUC needs a positive maximum threshold");
  // Each sample contributes the length of [e, max_t] over which it is counted.
  double area = 0.0;
  for (double e : errors) area += std::max(0.0, max_t - e);
  return area / (max_t * static_cast<double>(errors.size()));
}

double failure_rate(const std::vector<double>& errors, double t) {
  require_errors(errors);
  if (!(t > 0.0)) throw UsageError("failure threshold must be positive");
  // complement of the CED so the two agree bit for bit
  return 1.0 - ced(errors, {t})[0];
}

double heatmap_error(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw DimensionError("heatmap shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  const auto& s = pred.shape();
  if (s.size() != 3 && s.size() != 4) throw DimensionError("heatmaps must be [K,s,s] or [N,K,s,s]");
  const int K = s[s.size() - 3];
  const std::size_t plane = static_cast<std::size_t>(s[s.size() - 2]) * s[s.size() - 1];
  const std::size_t n = pred.size() / (plane * K);
  std::vector<double> per_boundary(K, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (int k = 0; k < K; ++k) {
      const std::size_t off = (b * K + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) per_boundary[k] += std::abs(pred[off + i] - gt[off + i]);
    }
  double total = 0.0;
  for (double v : per_boundary) total += v / static_cast<double>(n * plane);
  return total / K;
}

}  // namespace balign
