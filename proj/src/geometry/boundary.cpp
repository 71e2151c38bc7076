#include "balign/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "balign/errors.hpp"

namespace balign {

namespace {

Point lerp(Point a, Point b, double ta, double tb, double t) {
  // point at parameter t on the line through (ta, a) and (tb, b)
  if (tb == ta) return b;
  const double u = (t - ta) / (tb - ta);
  return {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
}

double knot_step(Point a, Point b) { return std::sqrt(distance(a, b)); }

// Barry-Goldman evaluation of the centripetal segment p1 -> p2.
void emit_segment(Point p0, Point p1, Point p2, Point p3, int density, std::vector<Point>& out) {
  const double t0 = 0.0;
  const double t1 = t0 + knot_step(p0, p1);
  const double t2 = t1 + knot_step(p1, p2);
  const double t3 = t2 + knot_step(p2, p3);
  for (int j = 0; j < density; ++j) {
    if (t2 == t1) {
      out.push_back(p1);
      continue;
    }
    const double t = t1 + (t2 - t1) * j / density;
    const Point a1 = t1 == t0 ? p1 : lerp(p0, p1, t0, t1, t);
    const Point a2 = lerp(p1, p2, t1, t2, t);
    const Point a3 = t3 == t2 ? p2 : lerp(p2, p3, t2, t3, t);
    const Point b1 = lerp(a1, a2, t0, t2, t);
    const Point b2 = lerp(a2, a3, t1, t3, t);
    out.push_back(lerp(b1, b2, t1, t2, t));
  }
}

}  // namespace

std::vector<Point> catmull_rom(const std::vector<Point>& control, bool closed, int density) {
  if (control.size() < 2) throw DegenerateBoundaryError("boundary needs at least 2 control points");
  if (density < 1) throw UsageError("interpolation density must be >= 1");
  const int n = static_cast<int>(control.size());
  std::vector<Point> out;
  const auto at = [&](int i) -> Point {
    if (closed) return control[((i % n) + n) % n];
    return control[std::clamp(i, 0, n - 1)];
  };
  const int segments = closed ? n : n - 1;
  out.reserve(static_cast<std::size_t>(segments) * density + 1);
  for (int i = 0; i < segments; ++i) emit_segment(at(i - 1), at(i), at(i + 1), at(i + 2), density, out);
  out.push_back(closed ? control.front() : control.back());
  return out;
}

std::vector<Point> interpolate_boundary(const std::vector<Point>& landmarks, const BoundaryDef& boundary, int density) {
  if (boundary.indices.size() < 2) {
    throw DegenerateBoundaryError("boundary '" + boundary.name + "' has fewer than 2 control points");
  }
  std::vector<Point> control;
  control.reserve(boundary.indices.size());
  for (int idx : boundary.indices) {
    if (idx < 0 || idx >= static_cast<int>(landmarks.size())) {
      throw DataError("boundary '" + boundary.name + "' references landmark " + std::to_string(idx));
    }
    control.push_back(landmarks[idx]);
  }
  return catmull_rom(control, boundary.closed, density);
}

namespace {

// Liang-Barsky clip of a -> b to the closed box [lo_x, hi_x] x [lo_y, hi_y].
std::optional<std::pair<Point, Point>> clip(Point a, Point b, double lo_x, double hi_x, double lo_y, double hi_y) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - lo_x, hi_x - a.x, a.y - lo_y, hi_y - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
    } else {
      const double r = q[i] / p[i];
      if (p[i] < 0.0) {
        t0 = std::max(t0, r);
      } else {
        t1 = std::min(t1, r);
      }
    }
  }
  if (t0 > t1) return std::nullopt;
  return std::make_pair(Point{a.x + t0 * dx, a.y + t0 * dy}, Point{a.x + t1 * dx, a.y + t1 * dy});
}

int cell_of(double v, int extent) { return std::clamp(static_cast<int>(std::floor(v + 0.5)), 0, extent - 1); }

// Grid traversal over pixel cells crossed by a -> b (both inside the map).
void trace(Point a, Point b, BinaryMap& map) {
  int cx = cell_of(a.x, map.width), cy = cell_of(a.y, map.height);
  const int ex = cell_of(b.x, map.width), ey = cell_of(b.y, map.height);
  map.at(cx, cy) = 1;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const int sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double step_x = dx != 0.0 ? std::abs(1.0 / dx) : inf;
  const double step_y = dy != 0.0 ? std::abs(1.0 / dy) : inf;
  // parameter at which the segment crosses the next cell border
  double next_x = dx != 0.0 ? ((cx + 0.5 * sx) - a.x) / dx : inf;
  double next_y = dy != 0.0 ? ((cy + 0.5 * sy) - a.y) / dy : inf;
  int budget = std::abs(ex - cx) + std::abs(ey - cy);
  while ((cx != ex || cy != ey) && budget-- > 0) {
    if (next_x < next_y) {
      cx += sx;
      next_x += step_x;
    } else {
      cy += sy;
      next_y += step_y;
    }
    cx = std::clamp(cx, 0, map.width - 1);
    cy = std::clamp(cy, 0, map.height - 1);
    map.at(cx, cy) = 1;
  }
  map.at(ex, ey) = 1;
}

}  // namespace

BinaryMap rasterize(const std::vector<Point>& polyline, int height, int width) {
  if (height < 2 || width < 2) throw DimensionError("rasterize: map extents must be >= 2");
  BinaryMap map(height, width, 0);
  const double lo_x = -0.5, hi_x = width - 0.5, lo_y = -0.5, hi_y = height - 0.5;
  bool any = false;
  const auto draw = [&](Point a, Point b) {
    if (auto seg = clip(a, b, lo_x, hi_x, lo_y, hi_y)) {
      trace(seg->first, seg->second, map);
      any = true;
    }
  };
  if (polyline.size() == 1) draw(polyline[0], polyline[0]);
  for (std::size_t i = 1; i < polyline.size(); ++i) draw(polyline[i - 1], polyline[i]);
  if (!any) throw EmptyBoundaryError("boundary lies entirely outside the map");
  return map;
}

namespace {

constexpr double kFar = 1e20;

// 1-D squared distance transform (lower envelope of parabolas) over f[0..n).
void squared_dt_1d(const double* f, double* out, int n, std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kFar;
  z[1] = kFar;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everything so far
      v[0] = q;
      z[0] = -kFar;
      z[1] = kFar;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kFar;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double d = q - v[k];
    out[q] = d * d + f[v[k]];
  }
}

DistanceMap edt(const BinaryMap& boundary, bool parallel) {
  const int H = boundary.height, W = boundary.width;
  if (std::none_of(boundary.data.begin(), boundary.data.end(), [](std::uint8_t b) { return b != 0; })) {
    throw EmptyBoundaryError("distance transform of an empty boundary map");
  }
  std::vector<double> cols(static_cast<std::size_t>(H) * W);
  // columns, stored transposed so each column is contiguous
#pragma omp parallel for schedule(static) if (parallel)
  for (int x = 0; x < W; ++x) {
    std::vector<double> f(H), out(H);
    std::vector<int> v;
    std::vector<double> z;
    for (int y = 0; y < H; ++y) f[y] = boundary.at(x, y) ? 0.0 : kFar;
    squared_dt_1d(f.data(), out.data(), H, v, z);
    std::copy(out.begin(), out.end(), cols.begin() + static_cast<std::ptrdiff_t>(x) * H);
  }
  DistanceMap result(H, W, 0.0);
#pragma omp parallel for schedule(static) if (parallel)
  for (int y = 0; y < H; ++y) {
    std::vector<double> f(W), out(W);
    std::vector<int> v;
    std::vector<double> z;
    for (int x = 0; x < W; ++x) f[x] = cols[static_cast<std::size_t>(x) * H + y];
    squared_dt_1d(f.data(), out.data(), W, v, z);
    for (int x = 0; x < W; ++x) result.at(x, y) = std::sqrt(out[x]);
  }
  return result;
}

HeatmapStack make_heatmaps(const LandmarkSet& landmarks, const BoundaryScheme& scheme, int input_side, double sigma,
                           int density, bool parallel) {
  if (input_side <= 0 || input_side % 4 != 0) {
    throw DimensionError("input side " + std::to_string(input_side) + " is not divisible by 4");
  }
  if (!(sigma > 0.0)) throw UsageError("sigma must be positive");
  landmarks.validate(scheme);
  const int side = input_side / 4;
  const int K = scheme.boundary_count();
  std::vector<Point> scaled(landmarks.points.size());
  std::transform(landmarks.points.begin(), landmarks.points.end(), scaled.begin(),
                 [](Point p) { return Point{p.x / 4.0, p.y / 4.0}; });

  HeatmapStack stack;
  stack.sigma = sigma;
  stack.maps = Tensor({K, side, side});
  stack.distances = Tensor({K, side, side});
  std::vector<std::string> errors(K);
  const std::size_t plane = static_cast<std::size_t>(side) * side;

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int k = 0; k < K; ++k) {
    try {
      const auto line = interpolate_boundary(scaled, scheme.boundaries[k], density);
      const DistanceMap dist = parallel ? distance_transform(rasterize(line, side, side))
                                        : reference::distance_transform(rasterize(line, side, side));
      for (std::size_t i = 0; i < plane; ++i) {
        stack.distances[k * plane + i] = dist.data[i];
        stack.maps[k * plane + i] = boundary_response(dist.data[i], sigma);
      }
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (int k = 0; k < K; ++k) {
    if (!errors[k].empty()) throw DataError("boundary '" + scheme.boundaries[k].name + "': " + errors[k]);
  }
  return stack;
}

}  // namespace

DistanceMap distance_transform(const BinaryMap& boundary) { return edt(boundary, true); }

double boundary_response(double distance, double sigma) {
  if (distance < 3.0 * sigma) return std::exp(-(distance * distance) / (2.0 * sigma * sigma));
  return 0.0;
}

Grid<double> heatmap_from_distance(const DistanceMap& distance, double sigma) {
  if (!(sigma > 0.0)) throw UsageError("sigma must be positive");
  Grid<double> out(distance.height, distance.width, 0.0);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = boundary_response(distance.data[i], sigma);
  return out;
}

HeatmapStack generate_heatmaps(const LandmarkSet& landmarks, const BoundaryScheme& scheme, int input_side, double sigma,
                               int density) {
  return make_heatmaps(landmarks, scheme, input_side, sigma, density, true);
}

namespace reference {

DistanceMap distance_transform(const BinaryMap& boundary) { return edt(boundary, false); }

HeatmapStack generate_heatmaps(const LandmarkSet& landmarks, const BoundaryScheme& scheme, int input_side,
                               double sigma, int density) {
  return make_heatmaps(landmarks, scheme, input_side, sigma, density, false);
}

}  // namespace reference

}  // namespace balign
