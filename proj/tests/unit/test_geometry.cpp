#include <doctest.h>

#include <cmath>
#include <random>

#include "balign/boundary.hpp"
#include "balign/datasets.hpp"
#include "balign/errors.hpp"
#include "balign/scheme.hpp"

using namespace balign;

namespace {

DistanceMap brute_distance(const BinaryMap& b) {
  DistanceMap d(b.height, b.width, 0.0);
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      double best = 1e300;
      for (int v = 0; v < b.height; ++v)
        for (int u = 0; u < b.width; ++u)
          if (b.at(u, v)) best = std::min(best, double((u - x) * (u - x) + (v - y) * (v - y)));
      d.at(x, y) = std::sqrt(best);
    }
  return d;
}

// [K, s, s] element
double hm(const Tensor& t, int k, int y, int x) { return t[(static_cast<std::size_t>(k) * t.dim(1) + y) * t.dim(2) + x]; }

double gaussian_band(double d, double sigma) { return d < 3 * sigma ? std::exp(-d * d / (2 * sigma * sigma)) : 0.0; }

double point_segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y, l2 = dx * dx + dy * dy;
  const double t = l2 > 0 ? std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / l2, 0.0, 1.0) : 0.0;
  return std::hypot(p.x - a.x - t * dx, p.y - a.y - t * dy);
}

LandmarkSet random_landmarks(const BoundaryScheme& scheme, int side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, side - 1.0);
  LandmarkSet lm;
  lm.scheme_id = scheme.scheme_id;
  for (int i = 0; i < scheme.landmark_count; ++i) lm.points.push_back({u(rng), u(rng)});
  lm.bbox = bounding_box(lm.points);
  return lm;
}

double ncc(const Tensor& a, const Tensor& b, int k) {
  const int n = a.dim(1) * a.dim(2);
  const double* pa = a.data().data() + static_cast<std::size_t>(k) * n;
  const double* pb = b.data().data() + static_cast<std::size_t>(k) * n;
  double ma = 0, mb = 0;
  for (int i = 0; i < n; ++i) ma += pa[i], mb += pb[i];
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    sab += (pa[i] - ma) * (pb[i] - mb);
    saa += (pa[i] - ma) * (pa[i] - ma);
    sbb += (pb[i] - mb) * (pb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("shipped schemes load and validate") {
  const std::pair<const char*, int> ids[] = {{"300w_68", 68}, {"wflw_98", 98}, {"cofw_29", 29}, {"aflw_19", 19}};
  for (auto [id, count] : ids) {
    const BoundaryScheme s = scheme_by_id(id);
    CHECK(s.scheme_id == id);
    CHECK(s.landmark_count == count);
    CHECK(s.boundary_count() == kNumBoundaries);
    for (int k = 0; k < kNumBoundaries; ++k) {
      CHECK(s.boundaries[k].name == boundary_names()[k]);
      CHECK_FALSE(s.boundaries[k].closed);
    }
    // JSON round trip
    const BoundaryScheme again = scheme_from_json(scheme_to_json(s));
    for (int k = 0; k < kNumBoundaries; ++k) CHECK(again.boundaries[k].indices == s.boundaries[k].indices);
  }
  const BoundaryScheme s68 = scheme_by_id("300w_68");
  CHECK(s68.boundaries[6].indices == std::vector<int>{39, 40, 41, 36});
  CHECK(s68.boundaries[12].indices == std::vector<int>{54, 55, 56, 57, 58, 59, 48});
  CHECK_THROWS_AS(scheme_by_id("nope_1"), ConfigError);
}

TEST_CASE("scheme validation rejects malformed schemes") {
  BoundaryScheme s = scheme_by_id("300w_68");
  auto bad = s;
  bad.boundaries[3].indices = {27};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.boundaries[0].indices.push_back(68);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  std::swap(bad.boundaries[1], bad.boundaries[2]);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.boundaries.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("landmark set validation") {
  const BoundaryScheme s = scheme_by_id("aflw_19");
  LandmarkSet lm{"aflw_19", std::vector<Point>(19), {}};
  CHECK_NOTHROW(lm.validate(s));
  lm.points.pop_back();
  CHECK_THROWS_AS(lm.validate(s), DataError);
  lm.points.push_back({std::nan(""), 0});
  CHECK_THROWS_AS(lm.validate(s), DataError);
}

TEST_CASE("interpolation: two points give a straight segment") {
  for (int density : {1, 3, 10}) {
    const auto pts = catmull_rom({{1, 2}, {7, 5}}, false, density);
    CHECK(pts.front().x == doctest::Approx(1));
    CHECK(pts.back().y == doctest::Approx(5));
    CHECK(pts.size() == static_cast<std::size_t>(density + 1));
    for (const auto& p : pts) CHECK(point_segment_distance(p, {1, 2}, {7, 5}) <= 1e-9);
  }
}

TEST_CASE("interpolation: collinear controls stay collinear and pass through every control") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const Point a{u(rng) * 10, u(rng) * 10}, dir{u(rng) - 0.5, u(rng) - 0.5};
    std::vector<Point> ctrl;
    double t = 0;
    for (int i = 0; i < 5; ++i) {
      t += 0.2 + u(rng) * 3;
      ctrl.push_back({a.x + t * dir.x, a.y + t * dir.y});
    }
    const auto pts = catmull_rom(ctrl, false, 10);
    const double n = std::hypot(dir.x, dir.y);
    for (const auto& p : pts) CHECK(std::abs((p.x - a.x) * dir.y - (p.y - a.y) * dir.x) / n <= 1e-9);
    for (std::size_t i = 0; i < ctrl.size(); ++i) {
      CHECK(pts[i * 10].x == doctest::Approx(ctrl[i].x).epsilon(1e-12));
      CHECK(pts[i * 10].y == doctest::Approx(ctrl[i].y).epsilon(1e-12));
    }
  }
}

TEST_CASE("interpolation: closed circle stays within 2% of the radius") {
  const double r = 10, cx = 3, cy = -2;
  std::vector<Point> ctrl;
  for (int i = 0; i < 8; ++i) ctrl.push_back({cx + r * std::cos(i * M_PI / 4), cy + r * std::sin(i * M_PI / 4)});
  const auto pts = catmull_rom(ctrl, true, 10);
  CHECK(pts.size() == 81u);  // closes back onto the first control point
  double worst = 0;
  for (const auto& p : pts) worst = std::max(worst, std::abs(std::hypot(p.x - cx, p.y - cy) - r));
  CHECK(worst <= 0.02 * r);
}

TEST_CASE("interpolation errors and repeated points") {
  BoundaryDef def{"x", {0}, false};
  CHECK_THROWS_AS(interpolate_boundary({{1, 1}}, def, 10), DegenerateBoundaryError);
  const auto pts = catmull_rom({{2, 2}, {2, 2}, {2, 2}}, false, 4);
  for (const auto& p : pts) {
    CHECK(std::isfinite(p.x));
    CHECK(p.x == 2.0);
  }
}

TEST_CASE("rasterize: horizontal segment and single point") {
  const BinaryMap b = rasterize({{1, 3}, {5, 3}}, 8, 8);
  int ones = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      ones += b.at(x, y);
      if (y == 3 && x >= 1 && x <= 5) CHECK(b.at(x, y) == 1);
    }
  CHECK(ones == 5);
  const BinaryMap p = rasterize({{4.2, 2.9}, {4.2, 2.9}, {4.2, 2.9}}, 8, 8);
  int count = 0;
  for (auto v : p.data) count += v;
  CHECK(count == 1);
  CHECK(p.at(4, 3) == 1);
  CHECK_THROWS_AS(rasterize({{-10, -10}, {-20, -3}}, 8, 8), EmptyBoundaryError);
  CHECK_THROWS_AS(rasterize({{0, 0}, {1, 1}}, 1, 8), DimensionError);
}

TEST_CASE("rasterize: random polylines are covered and 8-connected") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-4, 36);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Point> line;
    const int n = 2 + trial % 6;
    for (int i = 0; i < n; ++i) line.push_back({u(rng), u(rng)});
    BinaryMap b;
    try {
      b = rasterize(line, 32, 32);
    } catch (const EmptyBoundaryError&) {
      continue;
    }
    for (int i = 0; i + 1 < n; ++i) {
      const Point m{(line[i].x + line[i + 1].x) / 2, (line[i].y + line[i + 1].y) / 2};
      if (m.x < -0.5 || m.y < -0.5 || m.x > 31.5 || m.y > 31.5) continue;
      double best = 1e9;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (b.at(x, y)) best = std::min(best, std::hypot(x - m.x, y - m.y));
      CHECK(best <= std::sqrt(2.0) / 2 + 1e-12);
    }
  }
  // a fully visible polyline gives one 8-connected component
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_real_distribution<double> in(0, 31);
    std::vector<Point> line;
    for (int i = 0; i < 4; ++i) line.push_back({in(rng), in(rng)});
    const BinaryMap b = rasterize(line, 32, 32);
    BinaryMap seen(32, 32, 0);
    int total = 0, start = -1;
    for (int i = 0; i < 32 * 32; ++i)
      if (b.data[i]) {
        ++total;
        if (start < 0) start = i;
      }
    std::vector<int> stack{start};
    seen.data[start] = 1;
    int reached = 0;
    while (!stack.empty()) {
      const int c = stack.back();
      stack.pop_back();
      ++reached;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = c % 32 + dx, y = c / 32 + dy;
          if (b.contains(x, y) && b.at(x, y) && !seen.at(x, y)) {
            seen.at(x, y) = 1;
            stack.push_back(y * 32 + x);
          }
        }
    }
    CHECK(reached == total);
  }
}

TEST_CASE("distance transform: analytic cases") {
  BinaryMap b(3, 3, 0);
  b.at(0, 0) = 1;
  const DistanceMap d = distance_transform(b);
  const double expect[3][3] = {{0, 1, 2}, {1, std::sqrt(2.0), std::sqrt(5.0)}, {2, std::sqrt(5.0), std::sqrt(8.0)}};
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) CHECK(d.at(x, y) == expect[y][x]);
  const DistanceMap z = distance_transform(BinaryMap(5, 4, 1));
  for (double v : z.data) CHECK(v == 0.0);
  CHECK_THROWS_AS(distance_transform(BinaryMap(4, 4, 0)), EmptyBoundaryError);
}

TEST_CASE("distance transform matches brute force exactly") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = trial % 3 == 0 ? 32 : 5 + trial % 17, w = trial % 3 == 0 ? 32 : 3 + (trial * 7) % 23;
    std::bernoulli_distribution on(trial % 2 ? 0.02 : 0.2);
    BinaryMap b(h, w, 0);
    for (auto& v : b.data) v = on(rng);
    b.data[rng() % b.data.size()] = 1;
    const DistanceMap d = distance_transform(b), r = reference::distance_transform(b), bf = brute_distance(b);
    CHECK(d.data == bf.data);
    CHECK(r.data == bf.data);
  }
}

TEST_CASE("heatmap from distance follows the thresholded Gaussian") {
  const double sigma = 1.3;
  CHECK(boundary_response(0.0, sigma) == 1.0);
  CHECK(boundary_response(3 * sigma, sigma) == 0.0);
  CHECK(boundary_response(1.0, 1.0) == doctest::Approx(0.606531).epsilon(1e-6));
  CHECK(boundary_response(std::nextafter(3 * sigma, 0.0), sigma) > 0.0);
  // strictly decreasing within the band
  double prev = 2.0;
  for (double d = 0; d < 3 * sigma; d += 0.01) {
    const double v = boundary_response(d, sigma);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("generate_heatmaps sizes") {
  const BoundaryScheme s = scheme_by_id("300w_68");
  const auto faces = synth_faces(1, 5, s, SynthOptions{.image_side = 256});
  const HeatmapStack h = generate_heatmaps(faces[0].landmarks, s, 256, default_sigma(64));
  CHECK(h.maps.shape() == Shape{13, 64, 64});
  CHECK(h.sigma == 1.0);
  const auto small = synth_faces(1, 5, s, SynthOptions{.image_side = 64});
  CHECK(generate_heatmaps(small[0].landmarks, s, 64, default_sigma(16)).maps.shape() == Shape{13, 16, 16});
  CHECK_THROWS_AS(generate_heatmaps(small[0].landmarks, s, 62, 1.0), DimensionError);
}

TEST_CASE("generate_heatmaps: straight boundary peaks on the rasterized line") {
  BoundaryScheme s = scheme_by_id("aflw_19");
  LandmarkSet lm{"aflw_19", std::vector<Point>(19, Point{32, 32}), {}};
  // spread every control point out so that no boundary collapses off the map
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(4, 60);
  for (auto& p : lm.points) p = {u(rng), u(rng)};
  lm.points[12] = {8, 40};
  lm.points[13] = {32, 40};
  lm.points[14] = {56, 40};  // nose boundary: horizontal line at heatmap row 10
  const HeatmapStack h = generate_heatmaps(lm, s, 64, 1.0);
  double best = -1;
  int bx = -1, by = -1;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (hm(h.maps, 4, y, x) > best) best = hm(h.maps, 4, y, x), bx = x, by = y;
  CHECK(best == 1.0);
  CHECK(by == 10);
  for (int x = 2; x <= 14; ++x) CHECK(hm(h.maps, 4, 10, x) == 1.0);
  CHECK(hm(h.maps, 4, 9, 8) == doctest::Approx(std::exp(-0.5)));
  (void)bx;
}

TEST_CASE("generate_heatmaps equals the brute-force composition") {
  std::mt19937_64 rng(25);
  for (const char* id : {"300w_68", "wflw_98", "cofw_29", "aflw_19"}) {
    const BoundaryScheme s = scheme_by_id(id);
    for (int trial = 0; trial < 3; ++trial) {
      const LandmarkSet lm = random_landmarks(s, 64, rng);
      const double sigma = 0.5 + trial * 0.4;
      const HeatmapStack h = generate_heatmaps(lm, s, 64, sigma);
      const HeatmapStack r = reference::generate_heatmaps(lm, s, 64, sigma);
      CHECK(h.maps.storage() == r.maps.storage());
      std::vector<Point> quarter;
      for (auto p : lm.points) quarter.push_back({p.x / 4, p.y / 4});
      for (int k = 0; k < kNumBoundaries; ++k) {
        const BinaryMap b = rasterize(interpolate_boundary(quarter, s.boundaries[k], 10), 16, 16);
        const DistanceMap d = brute_distance(b);
        double worst = 0;
        for (int y = 0; y < 16; ++y)
          for (int x = 0; x < 16; ++x) {
            worst = std::max(worst, std::abs(hm(h.maps, k, y, x) - gaussian_band(d.at(x, y), sigma)));
            CHECK(hm(h.distances, k, y, x) == d.at(x, y));
          }
        CHECK(worst <= 1e-9);
      }
    }
  }
}

TEST_CASE("heatmap invariants: range, peak only on the line, exact zeros beyond 3 sigma") {
  std::mt19937_64 rng(26);
  const BoundaryScheme s = scheme_by_id("300w_68");
  for (int trial = 0; trial < 5; ++trial) {
    const HeatmapStack h = generate_heatmaps(random_landmarks(s, 128, rng), s, 128, 0.75);
    for (std::size_t i = 0; i < h.maps.size(); ++i) {
      const double m = h.maps[i], d = h.distances[i];
      CHECK(m >= 0.0);
      CHECK(m <= 1.0);
      CHECK((m == 1.0) == (d == 0.0));
      if (d >= 3 * 0.75) CHECK(m == 0.0);
    }
  }
}

TEST_CASE("heatmaps translate with the landmarks") {
  std::mt19937_64 rng(27);
  const BoundaryScheme s = scheme_by_id("300w_68");
  std::uniform_real_distribution<double> u(16, 80);
  for (int trial = 0; trial < 5; ++trial) {
    LandmarkSet lm{"300w_68", {}, {}};
    for (int i = 0; i < 68; ++i) lm.points.push_back({u(rng), u(rng)});
    const int tx = 4 * (1 + trial % 3), ty = -4 * (trial % 2);
    LandmarkSet moved = lm;
    for (auto& p : moved.points) p = {p.x + tx, p.y + ty};
    const HeatmapStack a = generate_heatmaps(lm, s, 128, 1.0), b = generate_heatmaps(moved, s, 128, 1.0);
    const int dx = tx / 4, dy = ty / 4;
    for (int k = 0; k < 13; ++k)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          const int x2 = x + dx, y2 = y + dy;
          if (x2 < 0 || y2 < 0 || x2 >= 32 || y2 >= 32) continue;
          // interior pixels: the distance band cannot reach the map border
          if (hm(a.distances, k, y, x) + 3 > std::min({x, y, 31 - x, 31 - y, x2, y2, 31 - x2, 31 - y2}) * 1.0) continue;
          CHECK(hm(a.maps, k, y, x) == hm(b.maps, k, y2, x2));
        }
  }
}

TEST_CASE("68-point and 98-point annotations of the same face give matching heatmaps") {
  const std::vector<BoundaryScheme> schemes{scheme_by_id("300w_68"), scheme_by_id("wflw_98")};
  const auto faces = synth_faces_multi(10, 77, schemes, SynthOptions{.image_side = 256});
  double worst = 1.0;
  for (const auto& f : faces) {
    const HeatmapStack a = generate_heatmaps(f.landmarks[0], schemes[0], 256, 1.0);
    const HeatmapStack b = generate_heatmaps(f.landmarks[1], schemes[1], 256, 1.0);
    for (int k = 0; k < 13; ++k) worst = std::min(worst, ncc(a.maps, b.maps, k));
  }
  MESSAGE("worst per-boundary NCC: " << worst);
  CHECK(worst >= 0.8);
}
