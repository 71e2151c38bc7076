#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "balign/errors.hpp"
#include "balign/evaluation.hpp"

namespace balign {
using nlohmann::json;

MetricsReport make_report(NormKind norm, std::vector<std::string> sample_ids, std::vector<double> errors, double max_t) {
  if (sample_ids.size() != errors.size()) throw UsageError("sample ids and errors differ in length");
  MetricsReport r;
  r.norm = norm;
  r.sample_ids = std::move(sample_ids);
  r.errors = std::move(errors);
  r.mean = std::accumulate(r.errors.begin(), r.errors.end(), 0.0) / static_cast<double>(r.errors.size());
  r.auc = auc(r.errors, kFailureThreshold);
  r.failure_rate = failure_rate(r.errors, kFailureThreshold);
  const int steps = static_cast<int>(std::lround(max_t / 0.001));
  for (int i = 0; i <= steps; ++i) r.ced_thresholds.push_back(i * 0.001);
  r.ced_values = ced(r.errors, r.ced_thresholds);
  return r;
}

json report_to_json(const MetricsReport& r) {
  return {{"norm", to_string(r.norm)},
          {"mean_nme", r.mean},
          {"auc@0.1", r.auc},
          {"failure_rate@0.1", r.failure_rate},
          {"samples", r.sample_ids},
          {"nme", r.errors},
          {"ced", {{"threshold", r.ced_thresholds}, {"fraction", r.ced_values}}}};
}

MetricsReport report_from_json(const json& j) {
  try {
    return make_report(norm_kind_from_string(j.at("norm").get<std::string>()),
                       j.at("samples").get<std::vector<std::string>>(), j.at("nme").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string ced_csv(const MetricsReport& r) {
  std::string out = "threshold,fraction\n";
  char line[64];
  for (std::size_t i = 0; i < r.ced_thresholds.size(); ++i) {
    std::snprintf(line, sizeof line, "%.4f,%.6f\n", r.ced_thresholds[i], r.ced_values[i]);
    out += line;
  }
  return out;
}

namespace {

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string ced_svg(const std::vector<std::pair<std::string, MetricsReport>>& curves) {
  constexpr double W = 480, H = 360, L = 60, R = 20, T = 20, B = 50;
  constexpr double max_t = kFailureThreshold;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  auto px = [&](double t) { return L + (W - L - R) * t / max_t; };
  auto py = [&](double f) { return H - B - (H - T - B) * f; };
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" "
    << "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double t = max_t * i / 5, f = i / 5.0;
    s << "<line x1=\"" << px(t) << "\" y1=\"" << py(0) << "\" x2=\"" << px(t) << "\" y2=\"" << py(1)
      << "\" stroke=\"#ddd\"/>\n<text x=\"" << px(t) << "\" y=\"" << py(0) + 16 << "\" text-anchor=\"middle\">" << t
      << "</text>\n";
    s << "<line x1=\"" << px(0) << "\" y1=\"" << py(f) << "\" x2=\"" << px(max_t) << "\" y2=\"" << py(f)
      << "\" stroke=\"#ddd\"/>\n<text x=\"" << px(0) - 6 << "\" y=\"" << py(f) + 4 << "\" text-anchor=\"end\">" << f
      << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">normalised error</text>\n";
  s << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 14 " << (T + H - B) / 2
    << ")\" text-anchor=\"middle\">fraction of samples</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& [label, r] = curves[c];
    std::vector<double> sorted = r.errors;
    std::sort(sorted.begin(), sorted.end());
    // exact step function: rises by 1/n at each error value
    s << "<path fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colors[c % 7] << "\" d=\"M" << px(0) << " ";
    std::size_t k = 0;
    while (k < sorted.size() && sorted[k] <= 0.0) ++k;
    double frac = static_cast<double>(k) / sorted.size();
    s << py(frac);
    for (; k < sorted.size() && sorted[k] <= max_t;) {
      const double e = sorted[k];
      while (k < sorted.size() && sorted[k] == e) ++k;
      s << " H" << px(e);
      frac = static_cast<double>(k) / sorted.size();
      s << " V" << py(frac);
    }
    s << " H" << px(max_t) << "\"/>\n";
    s << "<text x=\"" << L + 10 << "\" y=\"" << T + 14 * (c + 1) << "\" fill=\"" << colors[c % 7] << "\">" << xml_escape(label)
      << " (AUC " << std::setprecision(3) << r.auc << std::setprecision(2) << ")</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace balign
