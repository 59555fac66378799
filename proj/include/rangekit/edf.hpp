#pragma once

#include <string>
#include <vector>

#include "rangekit/geo.hpp"
#include "rangekit/parallel.hpp"

// Euclidean-distance-field cost maps: cubic-spline route densification,
// rasterization on a lat/lon lattice, an exact separable EDT, Gaussian
// smoothing and differentiable bilinear sampling. Maps are immutable once
// built and safe for concurrent sampling.

namespace rangekit::edf {

struct RoutePolyline {
  std::vector<geo::GeodeticPosition> waypoints;  // altitude ignored
};

// Occupancy grid over a geodetic bounding box. `origin` is the center of
// cell (0,0); row index follows latitude, column index longitude.
struct BinaryGrid {
  geo::GeodeticPosition origin;
  double lat_res_deg = 0.0;
  double lon_res_deg = 0.0;
  double meters_per_cell_lat = 1.0;
  double meters_per_cell_lon = 1.0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> cells;  // row-major

  std::uint8_t at(int r, int c) const { return cells[static_cast<size_t>(r) * cols + c]; }
};

struct EdfCostMap {
  geo::GeodeticPosition origin;  // center of cell (0,0)
  double lat_res_deg = 0.0;
  double lon_res_deg = 0.0;
  double meters_per_cell_lat = 1.0;
  double meters_per_cell_lon = 1.0;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // meters, row-major
  bool smoothed = false;

  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
};

// Natural cubic spline through the waypoints (arc-length parameterized),
// resampled so consecutive samples are at most `spacing` meters apart. The
// original waypoints are reproduced exactly.
RoutePolyline interpolate_route(const RoutePolyline& route, double spacing_m);

// Cells containing any route sample are set to 1; the bounding box is the
// route extent plus `margin` meters. Resolution is meters per cell,
// converted per axis at the route's mean latitude.
BinaryGrid rasterize(const RoutePolyline& route, double resolution_m, double margin_m);

// Exact Euclidean distance transform (two-pass parabolic envelope) of the
// occupied cells, in meters. Throws if no cell is occupied.
EdfCostMap edt(const BinaryGrid& grid, Exec policy = Exec::Parallel);

// 5x5 Gaussian (sigma 1, kernel normalized to sum 1) with replicate padding.
// Throws if the map is already smoothed.
EdfCostMap smooth(const EdfCostMap& map);

struct CostSample {
  double cost = 0.0;    // meters
  double d_lat = 0.0;   // d cost / d latitude  [m/rad]
  double d_lon = 0.0;   // d cost / d longitude [m/rad]
};

// Bilinear interpolation over the four surrounding cell centers with the
// analytic gradient. Out-of-bounds points clamp to the border; the gradient
// component in a clamped direction is zero.
CostSample sample_cost(const EdfCostMap& map, const geo::GeodeticPosition& p);

// Waypoint ingestion: CSV (lat_deg,lon_deg per line, optional header) or KML
// (first LineString coordinates element).
RoutePolyline load_route_csv(const std::string& path);
RoutePolyline load_route_kml(const std::string& path);
RoutePolyline load_route(const std::string& path);  // dispatch on extension

// Map persistence: little-endian header + row-major float64 grid.
void save_map(const std::string& path, const EdfCostMap& map);
EdfCostMap load_map(const std::string& path);

// meters per degree of latitude/longitude at a given latitude
double meters_per_degree_lat(double lat_rad);
double meters_per_degree_lon(double lat_rad);

}  // namespace rangekit::edf
