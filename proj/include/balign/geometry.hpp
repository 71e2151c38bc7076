#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace balign {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct BBox {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
};

// Row-major 2-D grid.
template <class T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

using BinaryMap = Grid<std::uint8_t>;
using DistanceMap = Grid<double>;

// Pixel centres sit at integer coordinates; pixel (i, j) covers
// [i - 0.5, i + 0.5) x [j - 0.5, j + 0.5).
inline double distance(Point a, Point b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

BBox bounding_box(const std::vector<Point>& points);

}  // namespace balign
