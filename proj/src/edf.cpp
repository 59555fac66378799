#include "rangekit/edf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rangekit::edf {

namespace {

constexpr double kDeg = M_PI / 180.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

double to_deg(double rad) { return rad / kDeg; }

// Natural cubic spline through (t_i, y_i); second derivatives via the
// standard tridiagonal solve with M_0 = M_n = 0.
class NaturalSpline {
 public:
  NaturalSpline(std::vector<double> t, std::vector<double> y)
      : t_(std::move(t)), y_(std::move(y)) {
    const int n = static_cast<int>(t_.size());
    m_.assign(n, 0.0);
    if (n < 3) return;
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
    for (int i = 1; i + 1 < n; ++i) {
      const double h0 = t_[i] - t_[i - 1];
      const double h1 = t_[i + 1] - t_[i];
      a[i] = h0 / 6.0;
      b[i] = (h0 + h1) / 3.0;
      c[i] = h1 / 6.0;
      d[i] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
    }
    // Thomas sweep over interior nodes
    for (int i = 2; i + 1 < n; ++i) {
      const double w = a[i] / b[i - 1];
      b[i] -= w * c[i - 1];
      d[i] -= w * d[i - 1];
    }
    for (int i = n - 2; i >= 1; --i) {
      m_[i] = (d[i] - c[i] * (i + 2 < n ? m_[i + 1] : 0.0)) / b[i];
    }
  }

  double eval(double t) const {
    const int n = static_cast<int>(t_.size());
    int seg = static_cast<int>(std::upper_bound(t_.begin(), t_.end(), t) - t_.begin()) - 1;
    seg = std::clamp(seg, 0, n - 2);
    const double h = t_[seg + 1] - t_[seg];
    const double u = (t - t_[seg]) / h;
    const double v = 1.0 - u;
    return v * y_[seg] + u * y_[seg + 1] +
           h * h / 6.0 * ((v * v * v - v) * m_[seg] + (u * u * u - u) * m_[seg + 1]);
  }

 private:
  std::vector<double> t_, y_, m_;
};

}  // namespace

double meters_per_degree_lat(double lat_rad) {
  const double s2 = geo::kWgs84E2 * std::sin(lat_rad) * std::sin(lat_rad);
  return kDeg * geo::kWgs84A * (1.0 - geo::kWgs84E2) / std::pow(1.0 - s2, 1.5);
}

double meters_per_degree_lon(double lat_rad) {
  const double s2 = geo::kWgs84E2 * std::sin(lat_rad) * std::sin(lat_rad);
  return kDeg * geo::kWgs84A * std::cos(lat_rad) / std::sqrt(1.0 - s2);
}

RoutePolyline interpolate_route(const RoutePolyline& route, double spacing_m) {
  if (!(spacing_m > 0.0)) throw std::invalid_argument("interpolate_route: spacing must be > 0");
  const auto& wp = route.waypoints;
  if (wp.size() < 2) throw std::invalid_argument("interpolate_route: need >= 2 waypoints");

  double mean_lat = 0.0;
  for (const auto& p : wp) mean_lat += p.latitude;
  mean_lat /= static_cast<double>(wp.size());
  const double ml = meters_per_degree_lat(mean_lat) / kDeg;  // meters per radian
  const double mo = meters_per_degree_lon(mean_lat) / kDeg;

  const auto gap_m = [&](const geo::GeodeticPosition& a, const geo::GeodeticPosition& b) {
    return std::hypot((b.latitude - a.latitude) * ml, (b.longitude - a.longitude) * mo);
  };

  std::vector<double> t(wp.size());
  t[0] = 0.0;
  for (size_t i = 1; i < wp.size(); ++i) {
    const double chord = gap_m(wp[i - 1], wp[i]);
    if (chord <= 0.0) throw std::invalid_argument("interpolate_route: duplicate waypoints");
    t[i] = t[i - 1] + chord;
  }

  std::vector<double> lats(wp.size()), lons(wp.size());
  for (size_t i = 0; i < wp.size(); ++i) {
    lats[i] = wp[i].latitude;
    lons[i] = wp[i].longitude;
  }
  const NaturalSpline slat(t, lats);
  const NaturalSpline slon(t, lons);

  RoutePolyline dense;
  dense.waypoints.push_back(wp.front());
  for (size_t i = 1; i < wp.size(); ++i) {
    int subdiv = std::max(1, static_cast<int>(std::ceil((t[i] - t[i - 1]) / spacing_m)));
    for (int attempt = 0; attempt < 8; ++attempt) {
      std::vector<geo::GeodeticPosition> seg;
      for (int j = 1; j <= subdiv; ++j) {
        const double tt = t[i - 1] + (t[i] - t[i - 1]) * j / subdiv;
        geo::GeodeticPosition p;
        p.latitude = slat.eval(tt);
        p.longitude = slon.eval(tt);
        seg.push_back(p);
      }
      seg.back() = wp[i];  // knots are reproduced exactly
      bool ok = gap_m(dense.waypoints.back(), seg.front()) <= spacing_m;
      for (size_t j = 0; ok && j + 1 < seg.size(); ++j) {
        ok = gap_m(seg[j], seg[j + 1]) <= spacing_m;
      }
      if (ok || attempt == 7) {
        dense.waypoints.insert(dense.waypoints.end(), seg.begin(), seg.end());
        break;
      }
      subdiv *= 2;  // spline arc exceeded the chord; densify further
    }
  }
  return dense;
}

BinaryGrid rasterize(const RoutePolyline& route, double resolution_m, double margin_m) {
  if (route.waypoints.empty()) throw std::invalid_argument("rasterize: empty route");
  if (!(resolution_m > 0.0)) throw std::invalid_argument("rasterize: resolution must be > 0");

  double min_lat = kInf, max_lat = -kInf, min_lon = kInf, max_lon = -kInf, mean_lat = 0.0;
  for (const auto& p : route.waypoints) {
    min_lat = std::min(min_lat, p.latitude);
    max_lat = std::max(max_lat, p.latitude);
    min_lon = std::min(min_lon, p.longitude);
    max_lon = std::max(max_lon, p.longitude);
    mean_lat += p.latitude;
  }
  mean_lat /= static_cast<double>(route.waypoints.size());

  BinaryGrid grid;
  grid.meters_per_cell_lat = resolution_m;
  grid.meters_per_cell_lon = resolution_m;
  grid.lat_res_deg = resolution_m / meters_per_degree_lat(mean_lat);
  grid.lon_res_deg = resolution_m / meters_per_degree_lon(mean_lat);

  const double margin_lat = margin_m / meters_per_degree_lat(mean_lat);
  const double margin_lon = margin_m / meters_per_degree_lon(mean_lat);
  const double corner_lat = to_deg(min_lat) - margin_lat;
  const double corner_lon = to_deg(min_lon) - margin_lon;
  grid.rows = static_cast<int>(
                  std::floor((to_deg(max_lat) + margin_lat - corner_lat) / grid.lat_res_deg)) + 1;
  grid.cols = static_cast<int>(
                  std::floor((to_deg(max_lon) + margin_lon - corner_lon) / grid.lon_res_deg)) + 1;
  grid.origin.latitude = (corner_lat + 0.5 * grid.lat_res_deg) * kDeg;
  grid.origin.longitude = (corner_lon + 0.5 * grid.lon_res_deg) * kDeg;
  grid.cells.assign(static_cast<size_t>(grid.rows) * grid.cols, 0);

  for (const auto& p : route.waypoints) {
    int r = static_cast<int>(std::floor((to_deg(p.latitude) - corner_lat) / grid.lat_res_deg));
    int c = static_cast<int>(std::floor((to_deg(p.longitude) - corner_lon) / grid.lon_res_deg));
    r = std::clamp(r, 0, grid.rows - 1);
    c = std::clamp(c, 0, grid.cols - 1);
    grid.cells[static_cast<size_t>(r) * grid.cols + c] = 1;
  }
  return grid;
}

namespace {

// 1D squared-distance lower envelope (Felzenszwalb-Huttenlocher) with
// anisotropic weight w2 = (cell size)^2; f may contain +inf.
void envelope_1d(const double* f, int n, double w2, double* out, int* v, double* z,
                 double* fq) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    fq[q] = f[q] + w2 * q * q;
    while (k >= 0) {
      const double s = (fq[q] - fq[v[k]]) / (2.0 * w2 * (q - v[k]));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = (k == 0) ? -kInf : (fq[q] - fq[v[k - 1]]) / (2.0 * w2 * (q - v[k - 1]));
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (j < k && z[j + 1] < q) ++j;
    const double d = static_cast<double>(q - v[j]);
    out[q] = w2 * d * d + f[v[j]];
  }
}

}  // namespace

EdfCostMap edt(const BinaryGrid& grid, Exec policy) {
  bool any = false;
  for (auto c : grid.cells) {
    if (c) {
      any = true;
      break;
    }
  }
  if (!any) throw std::invalid_argument("edt: grid has no occupied cell");

  const int rows = grid.rows, cols = grid.cols;
  const double wlat = grid.meters_per_cell_lat;
  const double wlon = grid.meters_per_cell_lon;

  // pass 1: per column, distance along the row axis (meters)
  std::vector<double> stage(static_cast<size_t>(rows) * cols, kInf);
  parallel_for(cols, policy, [&](int c) {
    double d = kInf;
    for (int r = 0; r < rows; ++r) {
      if (grid.at(r, c)) {
        d = 0.0;
      } else if (d != kInf) {
        d += wlat;
      }
      stage[static_cast<size_t>(r) * cols + c] = d;
    }
    d = kInf;
    for (int r = rows - 1; r >= 0; --r) {
      if (grid.at(r, c)) {
        d = 0.0;
      } else if (d != kInf) {
        d += wlat;
      }
      auto& cell = stage[static_cast<size_t>(r) * cols + c];
      cell = std::min(cell, d);
    }
  });

  EdfCostMap map;
  map.origin = grid.origin;
  map.lat_res_deg = grid.lat_res_deg;
  map.lon_res_deg = grid.lon_res_deg;
  map.meters_per_cell_lat = wlat;
  map.meters_per_cell_lon = wlon;
  map.rows = rows;
  map.cols = cols;
  map.values.assign(static_cast<size_t>(rows) * cols, 0.0);

  // pass 2: per row, parabolic envelope over squared stage distances
  parallel_for(rows, policy, [&](int r) {
    std::vector<double> f(cols), out(cols), z(cols + 1), fq(cols);
    std::vector<int> v(cols);
    for (int c = 0; c < cols; ++c) {
      const double d = stage[static_cast<size_t>(r) * cols + c];
      f[c] = (d == kInf) ? kInf : d * d;
    }
    envelope_1d(f.data(), cols, wlon * wlon, out.data(), v.data(), z.data(), fq.data());
    for (int c = 0; c < cols; ++c) {
      map.values[static_cast<size_t>(r) * cols + c] = std::sqrt(out[c]);
    }
  });
  return map;
}

EdfCostMap smooth(const EdfCostMap& map) {
  if (map.smoothed) throw std::invalid_argument("smooth: map is already smoothed");

  double kernel[5][5];
  double sum = 0.0;
  for (int i = -2; i <= 2; ++i) {
    for (int j = -2; j <= 2; ++j) {
      kernel[i + 2][j + 2] = std::exp(-0.5 * (i * i + j * j));
      sum += kernel[i + 2][j + 2];
    }
  }
  for (auto& row : kernel) {
    for (auto& w : row) w /= sum;
  }

  EdfCostMap out = map;
  out.smoothed = true;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) {
        for (int j = -2; j <= 2; ++j) {
          const int rr = std::clamp(r + i, 0, map.rows - 1);  // replicate padding
          const int cc = std::clamp(c + j, 0, map.cols - 1);
          acc += kernel[i + 2][j + 2] * map.at(rr, cc);
        }
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

CostSample sample_cost(const EdfCostMap& map, const geo::GeodeticPosition& p) {
  // cell coordinates relative to the center of cell (0,0)
  double u = (to_deg(p.latitude) - to_deg(map.origin.latitude)) / map.lat_res_deg;
  double v = (to_deg(p.longitude) - to_deg(map.origin.longitude)) / map.lon_res_deg;

  const bool clamp_u = u <= 0.0 || u >= map.rows - 1 || map.rows == 1;
  const bool clamp_v = v <= 0.0 || v >= map.cols - 1 || map.cols == 1;
  u = std::clamp(u, 0.0, static_cast<double>(map.rows - 1));
  v = std::clamp(v, 0.0, static_cast<double>(map.cols - 1));

  const int r0 = std::min(static_cast<int>(u), map.rows - 2 >= 0 ? map.rows - 2 : 0);
  const int c0 = std::min(static_cast<int>(v), map.cols - 2 >= 0 ? map.cols - 2 : 0);
  const double fu = u - r0;
  const double fv = v - c0;
  const int r1 = std::min(r0 + 1, map.rows - 1);
  const int c1 = std::min(c0 + 1, map.cols - 1);

  const double v00 = map.at(r0, c0), v01 = map.at(r0, c1);
  const double v10 = map.at(r1, c0), v11 = map.at(r1, c1);

  CostSample s;
  s.cost = (1.0 - fu) * ((1.0 - fv) * v00 + fv * v01) + fu * ((1.0 - fv) * v10 + fv * v11);
  const double dcost_du = (1.0 - fv) * (v10 - v00) + fv * (v11 - v01);
  const double dcost_dv = (1.0 - fu) * (v01 - v00) + fu * (v11 - v10);
  if (!clamp_u) s.d_lat = dcost_du / (map.lat_res_deg * kDeg);
  if (!clamp_v) s.d_lon = dcost_dv / (map.lon_res_deg * kDeg);
  return s;
}

RoutePolyline load_route_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("route: cannot open " + path);
  RoutePolyline route;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double lat_deg = 0.0, lon_deg = 0.0;
    if (!(ss >> lat_deg >> lon_deg)) {
      if (route.waypoints.empty()) continue;  // header row
      throw std::runtime_error("route: malformed line in " + path + ": " + line);
    }
    route.waypoints.push_back({lat_deg * kDeg, lon_deg * kDeg, 0.0});
  }
  if (route.waypoints.empty()) throw std::runtime_error("route: no waypoints in " + path);
  return route;
}

RoutePolyline load_route_kml(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("route: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  const auto open = text.find("<coordinates>");
  const auto close = text.find("</coordinates>", open);
  if (open == std::string::npos || close == std::string::npos) {
    throw std::runtime_error("route: no <coordinates> element in " + path);
  }
  std::istringstream coords(text.substr(open + 13, close - open - 13));
  RoutePolyline route;
  std::string tuple;
  while (coords >> tuple) {
    std::replace(tuple.begin(), tuple.end(), ',', ' ');
    std::istringstream ss(tuple);
    double lon_deg = 0.0, lat_deg = 0.0, alt = 0.0;
    if (!(ss >> lon_deg >> lat_deg)) {
      throw std::runtime_error("route: malformed coordinate tuple in " + path);
    }
    ss >> alt;  // optional
    route.waypoints.push_back({lat_deg * kDeg, lon_deg * kDeg, alt});
  }
  if (route.waypoints.empty()) throw std::runtime_error("route: no waypoints in " + path);
  return route;
}

RoutePolyline load_route(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".kml") return load_route_kml(path);
  return load_route_csv(path);
}

namespace {
constexpr char kMapMagic[8] = {'R', 'K', 'E', 'D', 'F', '0', '0', '1'};
}

void save_map(const std::string& path, const EdfCostMap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("map: cannot open " + path + " for writing");
  out.write(kMapMagic, sizeof(kMapMagic));
  const double header[6] = {to_deg(map.origin.latitude), to_deg(map.origin.longitude),
                            map.lat_res_deg,             map.lon_res_deg,
                            map.meters_per_cell_lat,     map.meters_per_cell_lon};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(map.rows),
                                 static_cast<std::uint32_t>(map.cols)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const std::uint8_t smoothed = map.smoothed ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&smoothed), 1);
  out.write(reinterpret_cast<const char*>(map.values.data()),
            static_cast<std::streamsize>(map.values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("map: write failed for " + path);
}

EdfCostMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("map: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMapMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("map: bad magic in " + path);
  }
  double header[6];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  std::uint32_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  std::uint8_t smoothed = 0;
  in.read(reinterpret_cast<char*>(&smoothed), 1);
  if (!in) throw std::runtime_error("map: truncated header in " + path);

  EdfCostMap map;
  map.origin.latitude = header[0] * kDeg;
  map.origin.longitude = header[1] * kDeg;
  map.lat_res_deg = header[2];
  map.lon_res_deg = header[3];
  map.meters_per_cell_lat = header[4];
  map.meters_per_cell_lon = header[5];
  map.rows = static_cast<int>(dims[0]);
  map.cols = static_cast<int>(dims[1]);
  map.smoothed = smoothed != 0;
  map.values.resize(static_cast<size_t>(map.rows) * map.cols);
  in.read(reinterpret_cast<char*>(map.values.data()),
          static_cast<std::streamsize>(map.values.size() * sizeof(double)));
  if (!in) throw std::runtime_error("map: truncated grid in " + path);
  return map;
}

}  // namespace rangekit::edf
