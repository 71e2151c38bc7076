#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "balign/geometry.hpp"

namespace balign {

inline constexpr int kNumBoundaries = 13;

// The thirteen boundary lines, in channel order.
const std::array<std::string, kNumBoundaries>& boundary_names();

struct BoundaryDef {
  std::string name;
  std::vector<int> indices;
  bool closed = false;
};

// Landmark indices used by the normalisations of the metric suite.
struct NormalizationIndices {
  std::array<int, 2> outer_eye_corners{};      // inter-ocular
  std::array<std::vector<int>, 2> eye_groups;  // inter-pupil: centroid of each group
};

struct BoundaryScheme {
  std::string scheme_id;
  int landmark_count = 0;
  std::vector<BoundaryDef> boundaries;
  NormalizationIndices normalization;

  // Throws ConfigError unless K = 13 with canonical names in canonical order,
  // every boundary has >= 2 indices and every index < landmark_count.
  void validate() const;
  int boundary_count() const { return static_cast<int>(boundaries.size()); }
};

struct LandmarkSet {
  std::string scheme_id;
  std::vector<Point> points;
  BBox bbox;

  // Throws DataError on count mismatch or non-finite coordinates.
  void validate(const BoundaryScheme& scheme) const;
};

BoundaryScheme scheme_from_json(const nlohmann::json& j);
nlohmann::json scheme_to_json(const BoundaryScheme& scheme);
BoundaryScheme load_scheme(const std::filesystem::path& path);

// Directory holding the shipped scheme files: $BALIGN_SCHEME_DIR if set,
// otherwise the install-time default.
std::filesystem::path scheme_directory();
// Loads scheme_<id>.json from scheme_directory(); shipped ids are "300w_68",
// "wflw_98", "cofw_29" and "aflw_19".
BoundaryScheme scheme_by_id(std::string_view scheme_id);

}  // namespace balign
