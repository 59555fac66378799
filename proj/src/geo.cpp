#include "rangekit/geo.hpp"

#include <Eigen/LU>
#include <cmath>

namespace rangekit::geo {

GeodeticPosition ecef_to_lla(const EcefPosition& p) {
  // Vermeille (2011) closed form. Exact for every point we care about
  // (geocentric radius in [6.2e6, 2.7e7] m) and smooth away from the axis,
  // so it can sit inside a gradient chain.
  const double x = p.x, y = p.y, z = p.z;
  const double e2 = kWgs84E2;
  const double e4 = e2 * e2;
  const double a2 = kWgs84A * kWgs84A;

  const double pp = (x * x + y * y) / a2;
  const double q = (1.0 - e2) * z * z / a2;
  const double r = (pp + q - e4) / 6.0;

  double u;
  if (pp > 0.0) {
    const double s = e4 * pp * q / (4.0 * r * r * r);
    const double t = std::cbrt(1.0 + s + std::sqrt(s * (2.0 + s)));
    u = r * (1.0 + t + 1.0 / t);
  } else {
    // polar axis: the cubic degenerates, u = 2r works exactly
    u = 2.0 * r;
  }

  const double v = std::sqrt(u * u + e4 * q);
  const double w = e2 * (u + v - q) / (2.0 * v);
  const double k = std::sqrt(u + v + w * w) - w;
  const double hypot_xy = std::hypot(x, y);
  const double big_d = k * hypot_xy / (k + e2);
  const double hypot_dz = std::hypot(big_d, z);

  GeodeticPosition g;
  g.latitude = 2.0 * std::atan2(z, big_d + hypot_dz);
  g.longitude = (hypot_xy > 0.0) ? std::atan2(y, x) : 0.0;
  g.altitude = (k + e2 - 1.0) / k * hypot_dz;
  return g;
}

EcefPosition lla_to_ecef(const GeodeticPosition& g) {
  const double sin_lat = std::sin(g.latitude);
  const double cos_lat = std::cos(g.latitude);
  const double n = kWgs84A / std::sqrt(1.0 - kWgs84E2 * sin_lat * sin_lat);
  EcefPosition p;
  p.x = (n + g.altitude) * cos_lat * std::cos(g.longitude);
  p.y = (n + g.altitude) * cos_lat * std::sin(g.longitude);
  p.z = (n * (1.0 - kWgs84E2) + g.altitude) * sin_lat;
  return p;
}

Eigen::Matrix3d ecef_to_lla_jacobian(const EcefPosition& p) {
  // Invert the analytic forward Jacobian d(x,y,z)/d(lat,lon,alt).
  const GeodeticPosition g = ecef_to_lla(p);
  const double sin_lat = std::sin(g.latitude);
  const double cos_lat = std::cos(g.latitude);
  const double sin_lon = std::sin(g.longitude);
  const double cos_lon = std::cos(g.longitude);
  const double w = 1.0 - kWgs84E2 * sin_lat * sin_lat;
  const double n = kWgs84A / std::sqrt(w);
  const double dn = kWgs84A * kWgs84E2 * sin_lat * cos_lat / (w * std::sqrt(w));

  Eigen::Matrix3d fwd;  // columns: d/dlat, d/dlon, d/dalt
  fwd(0, 0) = (dn + 0.0) * cos_lat * cos_lon - (n + g.altitude) * sin_lat * cos_lon;
  fwd(1, 0) = dn * cos_lat * sin_lon - (n + g.altitude) * sin_lat * sin_lon;
  fwd(2, 0) = dn * (1.0 - kWgs84E2) * sin_lat + (n * (1.0 - kWgs84E2) + g.altitude) * cos_lat;
  fwd(0, 1) = -(n + g.altitude) * cos_lat * sin_lon;
  fwd(1, 1) = (n + g.altitude) * cos_lat * cos_lon;
  fwd(2, 1) = 0.0;
  fwd(0, 2) = cos_lat * cos_lon;
  fwd(1, 2) = cos_lat * sin_lon;
  fwd(2, 2) = sin_lat;
  return fwd.inverse();
}

Eigen::Matrix3d ned_rotation(const GeodeticPosition& origin) {
  const double sin_lat = std::sin(origin.latitude);
  const double cos_lat = std::cos(origin.latitude);
  const double sin_lon = std::sin(origin.longitude);
  const double cos_lon = std::cos(origin.longitude);
  Eigen::Matrix3d r;
  r << -sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat,
       -sin_lon,            cos_lon,           0.0,
       -cos_lat * cos_lon, -cos_lat * sin_lon, -sin_lat;
  return r;
}

NedVector ecef_vector_to_ned(const Eigen::Vector3d& v, const GeodeticPosition& origin) {
  const Eigen::Vector3d ned = ned_rotation(origin) * v;
  return {ned.x(), ned.y(), ned.z()};
}

double geodesic_distance(const GeodeticPosition& a, const GeodeticPosition& b) {
  const double big_l = b.longitude - a.longitude;
  const double u1 = std::atan((1.0 - kWgs84F) * std::tan(a.latitude));
  const double u2 = std::atan((1.0 - kWgs84F) * std::tan(b.latitude));
  const double su1 = std::sin(u1), cu1 = std::cos(u1);
  const double su2 = std::sin(u2), cu2 = std::cos(u2);

  double lambda = big_l;
  double sin_sigma = 0.0, cos_sigma = 0.0, sigma = 0.0;
  double sin_alpha = 0.0, cos2_alpha = 0.0, cos_2sm = 0.0;
  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    const double sl = std::sin(lambda), cl = std::cos(lambda);
    const double t1 = cu2 * sl;
    const double t2 = cu1 * su2 - su1 * cu2 * cl;
    sin_sigma = std::sqrt(t1 * t1 + t2 * t2);
    if (sin_sigma == 0.0) return 0.0;  // coincident points
    cos_sigma = su1 * su2 + cu1 * cu2 * cl;
    sigma = std::atan2(sin_sigma, cos_sigma);
    sin_alpha = cu1 * cu2 * sl / sin_sigma;
    cos2_alpha = 1.0 - sin_alpha * sin_alpha;
    cos_2sm = (cos2_alpha != 0.0) ? cos_sigma - 2.0 * su1 * su2 / cos2_alpha : 0.0;
    const double c = kWgs84F / 16.0 * cos2_alpha * (4.0 + kWgs84F * (4.0 - 3.0 * cos2_alpha));
    const double prev = lambda;
    lambda = big_l + (1.0 - c) * kWgs84F * sin_alpha *
                         (sigma + c * sin_sigma *
                                      (cos_2sm + c * cos_sigma * (-1.0 + 2.0 * cos_2sm * cos_2sm)));
    if (std::abs(lambda - prev) < 1e-13) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw GeodesicNonConvergence("vincenty inverse did not converge (near-antipodal pair?)");
  }

  const double u_sq = cos2_alpha * (kWgs84A * kWgs84A - kWgs84B * kWgs84B) / (kWgs84B * kWgs84B);
  const double big_a = 1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)));
  const double big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)));
  const double d_sigma =
      big_b * sin_sigma *
      (cos_2sm + big_b / 4.0 *
                     (cos_sigma * (-1.0 + 2.0 * cos_2sm * cos_2sm) -
                      big_b / 6.0 * cos_2sm * (-3.0 + 4.0 * sin_sigma * sin_sigma) *
                          (-3.0 + 4.0 * cos_2sm * cos_2sm)));
  return kWgs84B * big_a * (sigma - d_sigma);
}

std::pair<Eigen::Vector3d, double> unit_geometry_vector(const EcefPosition& user,
                                                        const EcefPosition& sat) {
  const Eigen::Vector3d d = user.vec() - sat.vec();
  const double range = d.norm();
  if (range == 0.0) {
    throw std::invalid_argument("unit_geometry_vector: user and satellite coincide");
  }
  return {d / range, range};
}

}  // namespace rangekit::geo
