#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "balign/geometry.hpp"
#include "balign/scheme.hpp"
#include "balign/tensor.hpp"

namespace balign {

struct Sample {
  Tensor image;  // [3, S, S] in [0, 1]
  LandmarkSet landmarks;
  std::string source_id;
  bool clamped = false;   // some landmark was pulled back inside [0, S)
  bool occluded = false;  // synthetic occluder present
};

// ---- annotation formats ----------------------------------------------------

// 300W .pts: "version: 1", "n_points: N", "{", N lines "x y", "}". File
// coordinates are 1-based and are returned 0-based.
std::vector<Point> parse_pts(std::string_view text);
std::string write_pts(const std::vector<Point>& points);

struct WflwRecord {
  std::vector<Point> points;        // 98
  std::array<int, 4> rect{};        // x_min y_min x_max y_max
  std::array<int, 6> attributes{};  // pose expression illumination make-up occlusion blur
  std::string filename;

  BBox bbox() const {
    return {double(rect[0]), double(rect[1]), double(rect[2] - rect[0]), double(rect[3] - rect[1])};
  }
};

inline constexpr int kWflwLandmarks = 98;
inline constexpr int kWflwFields = 2 * kWflwLandmarks + 4 + 6 + 1;

WflwRecord parse_wflw_line(std::string_view line);
std::string write_wflw_line(const WflwRecord& record);

struct AflwRecord {
  std::string path;
  std::vector<Point> points;
  BBox bbox;
};

// Header "path,l0x,l0y,...,bx,by,bw,bh"; landmark count taken from the header.
std::vector<AflwRecord> parse_aflw_csv(std::string_view text);

// ---- manifests --------------------------------------------------------------

enum class Split { Train, Val, Test };
Split split_from_string(std::string_view s);
std::string_view to_string(Split s);

struct ManifestItem {
  std::filesystem::path image;
  std::optional<std::filesystem::path> annotation;  // .pts file
  std::vector<Point> inline_points;                 // used when no annotation file
  std::optional<BBox> bbox;                         // defaults to the landmark bounding box
  std::string source_id;                            // defaults to the image path
};

struct DatasetManifest {
  std::string scheme_id;
  Split split = Split::Train;
  std::vector<ManifestItem> items;
};

// Relative paths are resolved against `base_dir`. Throws ConfigError on
// malformed JSON or duplicate source ids.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
DatasetManifest load_manifest(const std::filesystem::path& path);
nlohmann::json manifest_to_json(const DatasetManifest& manifest);

// Throws DataError naming the first missing file.
void check_manifest_files(const DatasetManifest& manifest);

// ---- images and cropping ----------------------------------------------------

// RGB image as [3, H, W] in [0, 1]. Throws DataError naming the path.
Tensor read_image(const std::filesystem::path& path);
// Writes [3,H,W] or [1,H,W] / [H,W] values in [0,1] as PNG.
void write_png(const std::filesystem::path& path, const Tensor& image);

// Maps source pixels to crop pixels: p' = (p - origin) * scale.
struct CropTransform {
  Point origin;
  double scale = 1.0;

  Point apply(Point p) const { return {(p.x - origin.x) * scale, (p.y - origin.y) * scale}; }
  Point invert(Point p) const { return {p.x / scale + origin.x, p.y / scale + origin.y}; }
};

inline constexpr double kDefaultCropExpand = 1.25;

CropTransform crop_transform(const BBox& bbox, int out_side, double expand);

struct CropResult {
  Sample sample;
  CropTransform transform;
};

// Square crop of side expand * max(w, h) centred on the bbox, zero padded,
// resampled bilinearly to out_side. Throws DataError for a degenerate bbox.
CropResult crop_sample(const Tensor& image, const LandmarkSet& landmarks, const BBox& bbox, int out_side,
                       double expand = kDefaultCropExpand);

// Bilinear sample of one channel plane at continuous pixel coordinates;
// zero outside.
double sample_bilinear(const Tensor& image, int channel, double x, double y);

// Loads, crops and validates every manifest item (parallel over items; output
// in manifest order). Throws DataError listing the failing items.
std::vector<Sample> load_samples(const DatasetManifest& manifest, const BoundaryScheme& scheme, int out_side,
                                 double expand = kDefaultCropExpand);

// ---- synthetic faces --------------------------------------------------------

struct SynthOptions {
  int image_side = 64;
  double occlusion_fraction = 0.0;
  double max_rotation_deg = 30.0;
  double scale_jitter = 0.2;
  double noise = 0.03;
};

// Procedural faces with the scheme's landmark semantics. Sample i depends only
// on (seed, i), so any prefix of a larger corpus is identical.
std::vector<Sample> synth_faces(int n, std::uint64_t seed, const BoundaryScheme& scheme, const SynthOptions& options = {});

// Same faces annotated under several schemes at once.
struct MultiSchemeSample {
  Tensor image;
  std::vector<LandmarkSet> landmarks;  // one per requested scheme, same order
  std::string source_id;
  bool occluded = false;
};
std::vector<MultiSchemeSample> synth_faces_multi(int n, std::uint64_t seed, const std::vector<BoundaryScheme>& schemes,
                                                 const SynthOptions& options = {});

// Writes a synthetic corpus to disk as PNG + .pts with a manifest.json.
void write_corpus(const std::vector<Sample>& samples, const std::string& scheme_id, Split split,
                  const std::filesystem::path& dir);

// ---- heatmap archives -------------------------------------------------------

// "BHM1", then K, H, W as little-endian int32, then K*H*W little-endian
// float32 values in row-major order. Written atomically.
void write_heatmap_archive(const std::filesystem::path& path, const Tensor& maps);
// Throws DataError on a bad magic, truncated payload or trailing bytes.
Tensor read_heatmap_archive(const std::filesystem::path& path);

}  // namespace balign
