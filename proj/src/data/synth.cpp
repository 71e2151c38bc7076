#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "balign/datasets.hpp"
#include "balign/errors.hpp"

namespace balign {
namespace {

constexpr double kPi = std::numbers::pi;

// Per-face shape parameters in a canonical frame: x to the image right, y
// down, half face width = 1.
struct FaceShape {
  double jaw = 1.0;          // contour half width
  double chin = 1.0;         // chin depth
  double brow_y = -0.55;
  double brow_arch = 0.12;
  double eye_y = -0.28;
  double eye_width = 0.40;
  double eye_open = 0.09;
  double nose_len = 0.46;
  double nose_width = 0.20;
  double mouth_y = 0.52;
  double mouth_width = 0.40;
  double lip_thickness = 0.11;
  double mouth_open = 0.0;
};

struct Curve {
  Point a, b;
  double bulge;  // perpendicular bump along +y, scaled by sin(pi t)
};

// Point on canonical curve `k` (boundary channel order) at parameter t.
Point curve_point(const FaceShape& f, int k, double t) {
  const double s = std::sin(kPi * t);
  auto lerp_bump = [&](Point a, Point b, double bump) {
    return Point{a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t + bump * s};
  };
  const double eo = 0.28 + f.eye_width;  // outer eye corner |x|
  const double ei = 0.28;
  const double mw_in = f.mouth_width * 0.8;
  const double gap = f.mouth_open / 2;
  switch (k) {
    case 0: return {-f.jaw * std::cos(kPi * t), -0.15 + (f.chin + 0.15) * s};
    case 1: return lerp_bump({-0.80, f.brow_y + 0.05}, {-0.20, f.brow_y - 0.03}, -f.brow_arch);
    case 2: {
      const double u = 1.0 - t, su = std::sin(kPi * u);
      return {-(-0.80 + 0.60 * u), f.brow_y + 0.05 - 0.08 * u - f.brow_arch * su};
    }
    case 3: return {0.0, -0.38 + f.nose_len * t};
    case 4: return lerp_bump({-f.nose_width, -0.38 + f.nose_len + 0.04}, {f.nose_width, -0.38 + f.nose_len + 0.04}, 0.10);
    case 5: return lerp_bump({-eo, f.eye_y}, {-ei, f.eye_y}, -f.eye_open);
    case 6: return lerp_bump({-ei, f.eye_y}, {-eo, f.eye_y}, 0.75 * f.eye_open);
    case 7: return lerp_bump({ei, f.eye_y}, {eo, f.eye_y}, -f.eye_open);
    case 8: return lerp_bump({eo, f.eye_y}, {ei, f.eye_y}, 0.75 * f.eye_open);
    case 9: return lerp_bump({-f.mouth_width, f.mouth_y}, {f.mouth_width, f.mouth_y}, -f.lip_thickness);
    case 10: return lerp_bump({-mw_in, f.mouth_y}, {mw_in, f.mouth_y}, -0.03 - gap);
    case 11: return lerp_bump({mw_in, f.mouth_y}, {-mw_in, f.mouth_y}, 0.03 + gap);
    case 12: return lerp_bump({f.mouth_width, f.mouth_y}, {-f.mouth_width, f.mouth_y}, 1.2 * f.lip_thickness + gap);
    default: return {};
  }
}

// A landmark is a curve parameter, or one of the derived centres.
enum Special { kLeftPupil = -1, kRightPupil = -2, kMouthCentre = -3 };
struct Placement {
  int curve;
  double t;
};

Point place(const FaceShape& f, Placement p) {
  switch (p.curve) {
    case kLeftPupil: {
      const Point a = curve_point(f, 5, 0), b = curve_point(f, 5, 1);
      return {(a.x + b.x) / 2, (a.y + b.y) / 2};
    }
    case kRightPupil: {
      const Point a = curve_point(f, 7, 0), b = curve_point(f, 7, 1);
      return {(a.x + b.x) / 2, (a.y + b.y) / 2};
    }
    case kMouthCentre: {
      const Point a = curve_point(f, 10, 0.5), b = curve_point(f, 11, 0.5);
      return {(a.x + b.x) / 2, (a.y + b.y) / 2};
    }
    default: return curve_point(f, p.curve, p.t);
  }
}

void add_run(std::vector<Placement>& out, int curve, int count, double t0 = 0.0, double t1 = 1.0) {
  for (int i = 0; i < count; ++i) out.push_back({curve, count == 1 ? t0 : t0 + (t1 - t0) * i / (count - 1)});
}

std::vector<Placement> placements_300w_68() {
  std::vector<Placement> p;
  add_run(p, 0, 17);
  add_run(p, 1, 5);
  add_run(p, 2, 5);
  add_run(p, 3, 4);
  add_run(p, 4, 5);
  p.push_back({5, 0.0});
  p.push_back({5, 1.0 / 3});
  p.push_back({5, 2.0 / 3});
  p.push_back({5, 1.0});
  p.push_back({6, 1.0 / 3});
  p.push_back({6, 2.0 / 3});
  p.push_back({7, 0.0});
  p.push_back({7, 1.0 / 3});
  p.push_back({7, 2.0 / 3});
  p.push_back({7, 1.0});
  p.push_back({8, 1.0 / 3});
  p.push_back({8, 2.0 / 3});
  add_run(p, 9, 7);
  for (int i = 1; i <= 5; ++i) p.push_back({12, i / 6.0});
  add_run(p, 10, 5);
  for (int i = 1; i <= 3; ++i) p.push_back({11, i / 4.0});
  return p;
}

std::vector<Placement> placements_wflw_98() {
  std::vector<Placement> p;
  add_run(p, 0, 33);
  add_run(p, 1, 5);
  for (double t : {7.0 / 8, 5.0 / 8, 3.0 / 8, 1.0 / 8}) p.push_back({1, t});
  add_run(p, 2, 5);
  for (double t : {7.0 / 8, 5.0 / 8, 3.0 / 8, 1.0 / 8}) p.push_back({2, t});
  add_run(p, 3, 4);
  add_run(p, 4, 5);
  add_run(p, 5, 5);
  for (int i = 1; i <= 3; ++i) p.push_back({6, i / 4.0});
  add_run(p, 7, 5);
  for (int i = 1; i <= 3; ++i) p.push_back({8, i / 4.0});
  add_run(p, 9, 7);
  for (int i = 1; i <= 5; ++i) p.push_back({12, i / 6.0});
  add_run(p, 10, 5);
  for (int i = 1; i <= 3; ++i) p.push_back({11, i / 4.0});
  p.push_back({kLeftPupil, 0});
  p.push_back({kRightPupil, 0});
  return p;
}

std::vector<Placement> placements_cofw_29() {
  return {{1, 0.0},  {1, 0.5},          {1, 1.0},  {1, 0.5},  {2, 0.0},  {2, 0.5},          {2, 1.0},  {2, 0.5},
          {5, 0.0},  {5, 0.5},          {5, 1.0},  {6, 0.5},  {7, 0.0},  {7, 0.5},          {7, 1.0},  {8, 0.5},
          {kLeftPupil, 0}, {kRightPupil, 0}, {3, 0.0}, {4, 0.5}, {4, 0.0}, {4, 1.0}, {9, 0.0}, {9, 1.0},
          {9, 0.5},  {10, 0.5},         {11, 0.5}, {12, 0.5}, {0, 0.5}};
}

std::vector<Placement> placements_aflw_19() {
  return {{1, 0.0}, {1, 0.5}, {1, 1.0},        {2, 0.0}, {2, 0.5}, {2, 1.0},           {5, 0.0},
          {kLeftPupil, 0},    {5, 1.0},        {7, 0.0}, {kRightPupil, 0}, {7, 1.0},   {4, 0.0},
          {4, 0.5}, {4, 1.0}, {9, 0.0},        {kMouthCentre, 0}, {9, 1.0}, {0, 0.5}};
}

std::vector<Placement> placements_for(const BoundaryScheme& scheme) {
  std::vector<Placement> p;
  if (scheme.scheme_id == "300w_68") p = placements_300w_68();
  else if (scheme.scheme_id == "wflw_98") p = placements_wflw_98();
  else if (scheme.scheme_id == "cofw_29") p = placements_cofw_29();
  else if (scheme.scheme_id == "aflw_19") p = placements_aflw_19();
  else throw ConfigError("synthetic faces are not available for scheme '" + scheme.scheme_id + "'");
  if (static_cast<int>(p.size()) != scheme.landmark_count)
    throw ConfigError("scheme '" + scheme.scheme_id + "' landmark count does not match the generator");
  return p;
}

struct Pose {
  double cx, cy, scale, cos_r, sin_r;
  Point map(Point q) const {
    const double y = q.y - 0.17;  // centre the face vertically
    return {cx + scale * (cos_r * q.x - sin_r * y), cy + scale * (sin_r * q.x + cos_r * y)};
  }
};

struct Occluder {
  bool present = false;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::array<double, 3> colour{};
};

struct Face {
  FaceShape shape;
  Pose pose;
  std::array<double, 3> skin{}, background{}, feature{}, lip{};
  double bg_gradient = 0.0;
  Occluder occluder;
  std::uint64_t noise_seed = 0;
};

std::mt19937_64 sample_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  return std::mt19937_64(seq);
}

Face draw_face(std::uint64_t seed, int index, const SynthOptions& opt) {
  auto rng = sample_rng(seed, index);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  Face f;
  auto& s = f.shape;
  s.jaw = range(0.92, 1.05);
  s.chin = range(0.92, 1.08);
  s.brow_y = range(-0.60, -0.50);
  s.brow_arch = range(0.06, 0.16);
  s.eye_y = range(-0.31, -0.25);
  s.eye_width = range(0.34, 0.44);
  s.eye_open = range(0.05, 0.12);
  s.nose_len = range(0.40, 0.52);
  s.nose_width = range(0.16, 0.24);
  s.mouth_y = range(0.48, 0.56);
  s.mouth_width = range(0.32, 0.46);
  s.lip_thickness = range(0.08, 0.13);
  s.mouth_open = u(rng) < 0.4 ? range(0.02, 0.10) : 0.0;

  const int side = opt.image_side;
  const double rot = range(-opt.max_rotation_deg, opt.max_rotation_deg) * kPi / 180.0;
  f.pose.scale = 0.30 * side * (1.0 + range(-opt.scale_jitter, opt.scale_jitter));
  f.pose.cx = side / 2.0 + range(-0.04, 0.04) * side;
  f.pose.cy = side / 2.0 + range(-0.04, 0.04) * side;
  f.pose.cos_r = std::cos(rot);
  f.pose.sin_r = std::sin(rot);

  const double tone = range(0.55, 0.85);
  f.skin = {tone, tone * range(0.75, 0.9), tone * range(0.6, 0.8)};
  for (auto& c : f.background) c = range(0.05, 0.45);
  f.bg_gradient = range(-0.15, 0.15);
  const double dark = range(0.05, 0.2);
  f.feature = {dark, dark * 0.9, dark * 0.8};
  f.lip = {range(0.5, 0.7), range(0.15, 0.3), range(0.2, 0.3)};

  // the occlusion draw happens for every face so that the other parameters do
  // not depend on the occlusion fraction
  const double occ_u = u(rng);
  const double ow = range(0.7, 1.1), oh = range(0.5, 0.9);
  const double ox = range(-0.8, 0.8), oy = range(-0.4, 0.6);
  std::array<double, 3> oc{range(0, 1), range(0, 1), range(0, 1)};
  if (occ_u < opt.occlusion_fraction) {
    f.occluder.present = true;
    const Point c = f.pose.map({ox, oy});
    const double hw = ow * f.pose.scale / 2, hh = oh * f.pose.scale / 2;
    f.occluder.x0 = c.x - hw;
    f.occluder.x1 = c.x + hw;
    f.occluder.y0 = c.y - hh;
    f.occluder.y1 = c.y + hh;
    f.occluder.colour = oc;
  }
  f.noise_seed = rng();
  return f;
}

// Dense image-space polyline for a curve.
std::vector<Point> dense_curve(const Face& f, int k, int samples) {
  std::vector<Point> pts(samples + 1);
  for (int i = 0; i <= samples; ++i) pts[i] = f.pose.map(curve_point(f.shape, k, double(i) / samples));
  return pts;
}

// Lower envelope of distances from each pixel to the union of polylines,
// restricted to a band of `reach` pixels.
void stamp_distance(Grid<double>& dist, const std::vector<Point>& line, double reach) {
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Point a = line[i], b = line[i + 1];
    const int x0 = std::max(0, int(std::floor(std::min(a.x, b.x) - reach)));
    const int x1 = std::min(dist.width - 1, int(std::ceil(std::max(a.x, b.x) + reach)));
    const int y0 = std::max(0, int(std::floor(std::min(a.y, b.y) - reach)));
    const int y1 = std::min(dist.height - 1, int(std::ceil(std::max(a.y, b.y) + reach)));
    const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double d = std::hypot(x - (a.x + t * dx), y - (a.y + t * dy));
        double& cell = dist.at(x, y);
        cell = std::min(cell, d);
      }
  }
}

Tensor render(const Face& f, int side, double noise) {
  Tensor img({3, side, side});
  const double inf = 1e9;
  auto put = [&](int x, int y, const std::array<double, 3>& c, double alpha) {
    for (int ch = 0; ch < 3; ++ch) {
      double& v = img[(static_cast<std::size_t>(ch) * side + y) * side + x];
      v = (1 - alpha) * v + alpha * c[ch];
    }
  };

  // background with a linear shading ramp
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double g = f.bg_gradient * (double(x) / side - 0.5);
      for (int ch = 0; ch < 3; ++ch) img[(static_cast<std::size_t>(ch) * side + y) * side + x] = f.background[ch] + g;
    }

  // head: the contour closed by an upper ellipse
  std::vector<Point> head = dense_curve(f, 0, 96);
  for (int i = 1; i < 48; ++i) {
    const double a = kPi * i / 48;
    head.push_back(f.pose.map({f.shape.jaw * std::cos(a), -0.15 - 1.2 * std::sin(a)}));
  }
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      bool inside = false;
      for (std::size_t i = 0, j = head.size() - 1; i < head.size(); j = i++) {
        const Point a = head[i], b = head[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
      }
      if (inside) put(x, y, f.skin, 1.0);
    }

  // lips filled between the outer arcs
  {
    std::vector<Point> lips = dense_curve(f, 9, 32);
    const auto lower = dense_curve(f, 12, 32);
    lips.insert(lips.end(), lower.begin() + 1, lower.end());
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        bool inside = false;
        for (std::size_t i = 0, j = lips.size() - 1; i < lips.size(); j = i++) {
          const Point a = lips[i], b = lips[j];
          if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
        }
        if (inside) put(x, y, f.lip, 0.8);
      }
  }

  // pupils
  const double pupil_r = 0.07 * f.pose.scale;
  for (Special sp : {kLeftPupil, kRightPupil}) {
    const Point c = f.pose.map(place(f.shape, {sp, 0}));
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double d = std::hypot(x - c.x, y - c.y);
        if (d < pupil_r + 0.5) put(x, y, f.feature, std::clamp(pupil_r + 0.5 - d, 0.0, 1.0));
      }
  }

  // strokes: anti-aliased lines along every boundary curve
  const double width = std::max(0.6, 0.025 * f.pose.scale);
  for (int k = 0; k < kNumBoundaries; ++k) {
    Grid<double> dist(side, side, inf);
    stamp_distance(dist, dense_curve(f, k, 48), width + 1.0);
    const auto& colour = (k >= 9) ? f.lip : f.feature;
    const double strength = (k == 0) ? 0.6 : (k >= 9 ? 0.9 : 1.0);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double a = std::clamp(width + 0.5 - dist.at(x, y), 0.0, 1.0) * strength;
        if (a > 0) put(x, y, k >= 9 ? std::array<double, 3>{colour[0] * 0.5, colour[1] * 0.5, colour[2] * 0.5} : colour, a);
      }
  }

  if (f.occluder.present) {
    const auto& o = f.occluder;
    for (int y = std::max(0, int(std::ceil(o.y0))); y <= std::min(side - 1, int(std::floor(o.y1))); ++y)
      for (int x = std::max(0, int(std::ceil(o.x0))); x <= std::min(side - 1, int(std::floor(o.x1))); ++x)
        put(x, y, {o.colour[0] * (0.8 + 0.2 * ((x + y) % 2)), o.colour[1], o.colour[2]}, 1.0);
  }

  std::mt19937_64 nrng(f.noise_seed);
  std::normal_distribution<double> gauss(0.0, noise);
  for (auto& v : img.storage()) v = std::clamp(v + (noise > 0 ? gauss(nrng) : 0.0), 0.0, 1.0);
  return img;
}

LandmarkSet annotate(const Face& f, const BoundaryScheme& scheme, const std::vector<Placement>& placements, int side,
                     bool& clamped) {
  LandmarkSet lm;
  lm.scheme_id = scheme.scheme_id;
  const double hi = std::nextafter(static_cast<double>(side), 0.0);
  for (const auto& p : placements) {
    const Point q = f.pose.map(place(f.shape, p));
    const Point c{std::clamp(q.x, 0.0, hi), std::clamp(q.y, 0.0, hi)};
    if (c.x != q.x || c.y != q.y) clamped = true;
    lm.points.push_back(c);
  }
  lm.bbox = bounding_box(lm.points);
  return lm;
}

void check_options(int n, const SynthOptions& opt) {
  if (n < 1) throw ConfigError("synthetic corpus size must be at least 1");
  if (opt.image_side < 16 || opt.image_side % 4 != 0) throw ConfigError("synthetic image side must be a multiple of 4, >= 16");
  if (opt.occlusion_fraction < 0 || opt.occlusion_fraction > 1) throw ConfigError("occlusion fraction must lie in [0,1]");
}

}  // namespace

std::vector<Sample> synth_faces(int n, std::uint64_t seed, const BoundaryScheme& scheme, const SynthOptions& options) {
  check_options(n, options);
  const auto placements = placements_for(scheme);
  std::vector<Sample> out(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const Face f = draw_face(seed, i, options);
    Sample& s = out[i];
    s.image = render(f, options.image_side, options.noise);
    s.landmarks = annotate(f, scheme, placements, options.image_side, s.clamped);
    s.source_id = "synth_" + std::to_string(seed) + "_" + std::to_string(i);
    s.occluded = f.occluder.present;
  }
  return out;
}

std::vector<MultiSchemeSample> synth_faces_multi(int n, std::uint64_t seed, const std::vector<BoundaryScheme>& schemes,
                                                 const SynthOptions& options) {
  check_options(n, options);
  std::vector<std::vector<Placement>> placements;
  for (const auto& s : schemes) placements.push_back(placements_for(s));
  std::vector<MultiSchemeSample> out(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const Face f = draw_face(seed, i, options);
    auto& s = out[i];
    s.image = render(f, options.image_side, options.noise);
    bool clamped = false;
    for (std::size_t k = 0; k < schemes.size(); ++k)
      s.landmarks.push_back(annotate(f, schemes[k], placements[k], options.image_side, clamped));
    s.source_id = "synth_" + std::to_string(seed) + "_" + std::to_string(i);
    s.occluded = f.occluder.present;
  }
  return out;
}

}  // namespace balign
