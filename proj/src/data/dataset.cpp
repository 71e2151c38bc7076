#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "balign/datasets.hpp"
#include "balign/errors.hpp"

namespace balign {
namespace fs = std::filesystem;
using nlohmann::json;

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

}  // namespace

DatasetManifest manifest_from_json(const json& j, const fs::path& base_dir) {
  DatasetManifest m;
  try {
    m.scheme_id = j.at("scheme_id").get<std::string>();
    m.split = split_from_string(j.at("split").get<std::string>());
    std::set<std::string> seen;
    for (const auto& it : j.at("items")) {
      ManifestItem item;
      item.image = resolve(it.at("image").get<std::string>(), base_dir);
      if (it.contains("annotation")) {
        item.annotation = resolve(it.at("annotation").get<std::string>(), base_dir);
      } else if (it.contains("inline")) {
        for (const auto& p : it.at("inline")) item.inline_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      } else {
        throw ConfigError("manifest item " + it.at("image").get<std::string>() + " has neither annotation nor inline");
      }
      if (it.contains("bbox")) {
        const auto& b = it.at("bbox");
        item.bbox = BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
      }
      item.source_id = it.contains("source_id") ? it.at("source_id").get<std::string>() : it.at("image").get<std::string>();
      if (!seen.insert(item.source_id).second) throw ConfigError("duplicate source_id '" + item.source_id + "' in manifest");
      m.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

json manifest_to_json(const DatasetManifest& manifest) {
  json items = json::array();
  for (const auto& item : manifest.items) {
    json it{{"image", item.image.string()}, {"source_id", item.source_id}};
    if (item.annotation) {
      it["annotation"] = item.annotation->string();
    } else {
      json pts = json::array();
      for (const auto& p : item.inline_points) pts.push_back({p.x, p.y});
      it["inline"] = pts;
    }
    if (item.bbox) it["bbox"] = {item.bbox->x, item.bbox->y, item.bbox->w, item.bbox->h};
    items.push_back(std::move(it));
  }
  return {{"scheme_id", manifest.scheme_id}, {"split", std::string(to_string(manifest.split))}, {"items", items}};
}

void check_manifest_files(const DatasetManifest& manifest) {
  for (const auto& item : manifest.items) {
    if (!fs::exists(item.image)) throw DataError("missing image file " + item.image.string());
    if (item.annotation && !fs::exists(*item.annotation))
      throw DataError("missing annotation file " + item.annotation->string());
  }
}

Tensor read_image(const fs::path& path) {
  const cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("cannot read image " + path.string());
  const int h = img.rows, w = img.cols;
  Tensor t({3, h, w});
  for (int y = 0; y < h; ++y) {
    const auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)  // BGR -> RGB
        t[(static_cast<std::size_t>(c) * h + y) * w + x] = row[x][2 - c] / 255.0;
  }
  return t;
}

void write_png(const fs::path& path, const Tensor& image) {
  int c = 1, h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    c = image.dim(0);
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw DimensionError("write_png expects [H,W], [1,H,W] or [3,H,W], got " + shape_str(image.shape()));
  }
  cv::Mat mat(h, w, c == 3 ? CV_8UC3 : CV_8UC1);
  auto to_byte = [](double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (c == 3) {
        auto& px = mat.at<cv::Vec3b>(y, x);
        for (int k = 0; k < 3; ++k) px[2 - k] = to_byte(image[(static_cast<std::size_t>(k) * h + y) * w + x]);
      } else {
        mat.at<unsigned char>(y, x) = to_byte(image[static_cast<std::size_t>(y) * w + x]);
      }
    }
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw DataError("cannot write " + path.string());
}

CropTransform crop_transform(const BBox& bbox, int out_side, double expand) {
  if (!(bbox.w > 0) || !(bbox.h > 0) || !std::isfinite(bbox.x) || !std::isfinite(bbox.y))
    throw DataError("degenerate bounding box (w=" + std::to_string(bbox.w) + ", h=" + std::to_string(bbox.h) + ")");
  if (out_side <= 0) throw ConfigError("crop side must be positive");
  if (!(expand > 0)) throw ConfigError("crop expansion must be positive");
  const double side = expand * std::max(bbox.w, bbox.h);
  const double cx = bbox.x + bbox.w / 2, cy = bbox.y + bbox.h / 2;
  return {{cx - side / 2, cy - side / 2}, out_side / side};
}

double sample_bilinear(const Tensor& image, int channel, double x, double y) {
  const int h = image.dim(1), w = image.dim(2);
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  const double* plane = image.data().data() + static_cast<std::size_t>(channel) * h * w;
  auto px = [&](int xx, int yy) { return (xx < 0 || yy < 0 || xx >= w || yy >= h) ? 0.0 : plane[static_cast<std::size_t>(yy) * w + xx]; };
  return (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) + ay * ((1 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1));
}

CropResult crop_sample(const Tensor& image, const LandmarkSet& landmarks, const BBox& bbox, int out_side,
                       double expand) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("crop_sample expects [3,H,W], got " + shape_str(image.shape()));
  const CropTransform tf = crop_transform(bbox, out_side, expand);
  CropResult res;
  res.transform = tf;
  Tensor out({3, out_side, out_side});
  for (int c = 0; c < 3; ++c)
    for (int v = 0; v < out_side; ++v)
      for (int u = 0; u < out_side; ++u) {
        const Point src = tf.invert({double(u), double(v)});
        out[(static_cast<std::size_t>(c) * out_side + v) * out_side + u] = sample_bilinear(image, c, src.x, src.y);
      }
  res.sample.image = std::move(out);
  res.sample.landmarks.scheme_id = landmarks.scheme_id;
  const double hi = std::nextafter(static_cast<double>(out_side), 0.0);
  for (const auto& p : landmarks.points) {
    Point q = tf.apply(p);
    const Point clamped{std::clamp(q.x, 0.0, hi), std::clamp(q.y, 0.0, hi)};
    if (clamped.x != q.x || clamped.y != q.y) res.sample.clamped = true;
    res.sample.landmarks.points.push_back(clamped);
  }
  res.sample.landmarks.bbox = {(bbox.x - tf.origin.x) * tf.scale, (bbox.y - tf.origin.y) * tf.scale, bbox.w * tf.scale,
                               bbox.h * tf.scale};
  return res;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const BoundaryScheme& scheme, int out_side,
                                 double expand) {
  if (manifest.scheme_id != scheme.scheme_id)
    throw ConfigError("manifest scheme '" + manifest.scheme_id + "' does not match '" + scheme.scheme_id + "'");
  check_manifest_files(manifest);
  const int n = static_cast<int>(manifest.items.size());
  std::vector<Sample> out(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const auto& item = manifest.items[i];
    try {
      LandmarkSet lm;
      lm.scheme_id = manifest.scheme_id;
      lm.points = item.annotation ? parse_pts(read_text(*item.annotation)) : item.inline_points;
      lm.validate(scheme);
      const BBox box = item.bbox ? *item.bbox : bounding_box(lm.points);
      lm.bbox = box;
      auto res = crop_sample(read_image(item.image), lm, box, out_side, expand);
      res.sample.source_id = item.source_id;
      out[i] = std::move(res.sample);
    } catch (const std::exception& e) {
      errors[i] = item.source_id + ": " + e.what();
    }
  }
  std::string msg;
  int failed = 0;
  for (const auto& e : errors)
    if (!e.empty()) {
      if (failed < 5) msg += "\n  " + e;
      ++failed;
    }
  if (failed) throw DataError(std::to_string(failed) + " of " + std::to_string(n) + " items failed to load:" + msg);
  return out;
}

void write_corpus(const std::vector<Sample>& samples, const std::string& scheme_id, Split split, const fs::path& dir) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.scheme_id = scheme_id;
  m.split = split;
  for (const auto& s : samples) {
    const std::string stem = s.source_id;
    write_png(dir / (stem + ".png"), s.image);
    std::ofstream(dir / (stem + ".pts")) << write_pts(s.landmarks.points);
    ManifestItem item;
    item.image = stem + ".png";
    item.annotation = fs::path(stem + ".pts");
    item.bbox = s.landmarks.bbox;
    item.source_id = s.source_id;
    m.items.push_back(std::move(item));
  }
  std::ofstream(dir / "manifest.json") << manifest_to_json(m).dump(2) << "\n";
}

}  // namespace balign
