#include "balign/scheme.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "balign/errors.hpp"

#ifndef BALIGN_DEFAULT_SCHEME_DIR
#define BALIGN_DEFAULT_SCHEME_DIR "data/schemes"
#endif

namespace balign {

const std::array<std::string, kNumBoundaries>& boundary_names() {
  static const std::array<std::string, kNumBoundaries> names = {
      "facial outer contour",   "left eyebrow",           "right eyebrow",           "nose bridge",
      "nose boundary",          "left upper eyelid",      "left lower eyelid",       "right upper eyelid",
      "right lower eyelid",     "upper side of upper lip", "lower side of upper lip", "upper side of lower lip",
      "lower side of lower lip"};
  return names;
}

BBox bounding_box(const std::vector<Point>& points) {
  if (points.empty()) return {};
  double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
  for (const Point& p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

void BoundaryScheme::validate() const {
  const auto fail = [&](const std::string& what) { throw ConfigError("scheme '" + scheme_id + "': " + what); };
  if (landmark_count < 2) fail("landmark_count must be >= 2");
  if (boundary_count() != kNumBoundaries) fail("expected 13 boundaries, got " + std::to_string(boundary_count()));
  for (int k = 0; k < kNumBoundaries; ++k) {
    const BoundaryDef& b = boundaries[k];
    if (b.name != boundary_names()[k]) {
      fail("boundary " + std::to_string(k) + " is '" + b.name + "', expected '" + boundary_names()[k] + "'");
    }
    if (b.indices.size() < 2) fail("boundary '" + b.name + "' has fewer than 2 indices");
    for (int idx : b.indices) {
      if (idx < 0 || idx >= landmark_count) fail("boundary '" + b.name + "' index " + std::to_string(idx) + " out of range");
    }
  }
  for (int idx : normalization.outer_eye_corners) {
    if (idx < 0 || idx >= landmark_count) fail("inter-ocular index out of range");
  }
  for (const auto& group : normalization.eye_groups) {
    if (group.empty()) fail("empty eye group");
    for (int idx : group) {
      if (idx < 0 || idx >= landmark_count) fail("eye group index out of range");
    }
  }
}

void LandmarkSet::validate(const BoundaryScheme& scheme) const {
  if (static_cast<int>(points.size()) != scheme.landmark_count) {
    throw DataError("landmark set has " + std::to_string(points.size()) + " points, scheme '" + scheme.scheme_id +
                    "' expects " + std::to_string(scheme.landmark_count));
  }
  for (const Point& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DataError("non-finite landmark coordinate");
  }
}

BoundaryScheme scheme_from_json(const nlohmann::json& j) {
  try {
    BoundaryScheme s;
    s.scheme_id = j.at("scheme_id").get<std::string>();
    s.landmark_count = j.at("landmark_count").get<int>();
    for (const auto& b : j.at("boundaries")) {
      BoundaryDef def;
      def.name = b.at("name").get<std::string>();
      def.indices = b.at("indices").get<std::vector<int>>();
      def.closed = b.value("closed", false);
      s.boundaries.push_back(std::move(def));
    }
    const auto& norm = j.at("normalization");
    s.normalization.outer_eye_corners = norm.at("inter_ocular").get<std::array<int, 2>>();
    const auto groups = norm.at("inter_pupil").get<std::vector<std::vector<int>>>();
    if (groups.size() != 2) throw ConfigError("inter_pupil must list exactly two eye groups");
    s.normalization.eye_groups = {groups[0], groups[1]};
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scheme JSON: ") + e.what());
  }
}

nlohmann::json scheme_to_json(const BoundaryScheme& scheme) {
  nlohmann::json j;
  j["scheme_id"] = scheme.scheme_id;
  j["landmark_count"] = scheme.landmark_count;
  j["boundaries"] = nlohmann::json::array();
  for (const BoundaryDef& b : scheme.boundaries) {
    j["boundaries"].push_back({{"name", b.name}, {"indices", b.indices}, {"closed", b.closed}});
  }
  j["normalization"] = {{"inter_ocular", scheme.normalization.outer_eye_corners},
                        {"inter_pupil", {scheme.normalization.eye_groups[0], scheme.normalization.eye_groups[1]}}};
  return j;
}

BoundaryScheme load_scheme(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scheme file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scheme file " + path.string() + ": " + e.what());
  }
  return scheme_from_json(j);
}

std::filesystem::path scheme_directory() {
  if (const char* env = std::getenv("BALIGN_SCHEME_DIR"); env && *env) return env;
  return BALIGN_DEFAULT_SCHEME_DIR;
}

BoundaryScheme scheme_by_id(std::string_view scheme_id) {
  const auto path = scheme_directory() / ("scheme_" + std::string(scheme_id) + ".json");
  if (!std::filesystem::exists(path)) throw ConfigError("unknown scheme '" + std::string(scheme_id) + "' (" + path.string() + ")");
  BoundaryScheme s = load_scheme(path);
  if (s.scheme_id != scheme_id) throw ConfigError("scheme file " + path.string() + " declares id " + s.scheme_id);
  return s;
}

}  // namespace balign
