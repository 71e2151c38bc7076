#pragma once

#include <vector>

#include "balign/geometry.hpp"
#include "balign/scheme.hpp"
#include "balign/tensor.hpp"

namespace balign {

inline constexpr int kDefaultDensity = 10;

// Dense polyline through the boundary's control landmarks (centripetal
// Catmull-Rom). Open boundaries duplicate their end control points; closed ones
// wrap. Emits `density` samples per control segment plus the final point for
// open curves. Throws DegenerateBoundaryError for < 2 control points.
std::vector<Point> interpolate_boundary(const std::vector<Point>& landmarks, const BoundaryDef& boundary,
                                        int density = kDefaultDensity);
std::vector<Point> catmull_rom(const std::vector<Point>& control, bool closed, int density);

// Marks every pixel cell the polyline passes through (a 4-connected, hence
// 8-connected, chain). Segments are clipped to the map. Throws
// EmptyBoundaryError when nothing lands on the map.
BinaryMap rasterize(const std::vector<Point>& polyline, int height, int width);

// Exact Euclidean distance from every pixel centre to the nearest set pixel
// centre (separable lower-envelope transform, OpenMP over rows and columns).
// Throws EmptyBoundaryError for an all-zero map.
DistanceMap distance_transform(const BinaryMap& boundary);

// exp(-d^2 / 2 sigma^2) where d < 3 sigma, exactly 0 otherwise.
double boundary_response(double distance, double sigma);
Grid<double> heatmap_from_distance(const DistanceMap& distance, double sigma);

// sigma in heatmap pixels for a heatmap side, scaled from 1.0 at side 64.
inline double default_sigma(int heatmap_side) { return heatmap_side / 64.0; }

struct HeatmapStack {
  Tensor maps;       // [K, side, side], values in [0, 1]
  Tensor distances;  // [K, side, side], heatmap pixels
  double sigma = 1.0;
  int side() const { return maps.dim(1); }
};

// Ground-truth boundary heatmaps at a quarter of the input side. Landmarks are
// given in input-image pixels and scaled by 1/4 before interpolation.
// Boundaries are processed in parallel.
HeatmapStack generate_heatmaps(const LandmarkSet& landmarks, const BoundaryScheme& scheme, int input_side, double sigma,
                               int density = kDefaultDensity);

namespace reference {

DistanceMap distance_transform(const BinaryMap& boundary);
HeatmapStack generate_heatmaps(const LandmarkSet& landmarks, const BoundaryScheme& scheme, int input_side,
                               double sigma, int density = kDefaultDensity);

}  // namespace reference

}  // namespace balign
