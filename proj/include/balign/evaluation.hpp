#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "balign/scheme.hpp"
#include "balign/tensor.hpp"

namespace balign {

enum class NormKind { InterOcular, InterPupil, FaceSize };
std::string to_string(NormKind kind);
NormKind norm_kind_from_string(const std::string& s);

// Distance between outer eye corners, between eye-group centroids, or
// sqrt(w * h) of the ground-truth bbox. Throws DataError unless positive.
double normalizer(const LandmarkSet& gt, const BoundaryScheme& scheme, NormKind kind);

// Mean point-to-point distance over all landmarks divided by the normalizer.
double nme(const std::vector<Point>& pred, const LandmarkSet& gt, const BoundaryScheme& scheme, NormKind kind);

// Fraction of errors <= t at each threshold.
std::vector<double> ced(const std::vector<double>& errors, const std::vector<double>& thresholds);
// Exact area under the CED step function on [0, max_t], divided by max_t.
double auc(const std::vector<double>& errors, double max_t = 0.1);
// Fraction of errors strictly above t.
double failure_rate(const std::vector<double>& errors, double t = 0.1);

// Mean absolute pixel difference per boundary map, averaged over boundaries.
// Maps are [K,s,s] or [N,K,s,s]; values have unit dynamic range.
double heatmap_error(const Tensor& pred, const Tensor& gt);

inline constexpr double kFailureThreshold = 0.1;

struct MetricsReport {
  NormKind norm = NormKind::InterOcular;
  std::vector<std::string> sample_ids;
  std::vector<double> errors;
  double mean = 0.0;
  double auc = 0.0;           // @0.1
  double failure_rate = 0.0;  // @0.1
  std::vector<double> ced_thresholds;
  std::vector<double> ced_values;
};

// Thresholds 0, 0.001, ..., `max_t` for the emitted CED curve.
MetricsReport make_report(NormKind norm, std::vector<std::string> sample_ids, std::vector<double> errors,
                          double max_t = kFailureThreshold);

nlohmann::json report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
// "threshold,fraction" rows.
std::string ced_csv(const MetricsReport& r);
// Standalone SVG step plot of one or more CED curves with a legend.
std::string ced_svg(const std::vector<std::pair<std::string, MetricsReport>>& curves);

}  // namespace balign
