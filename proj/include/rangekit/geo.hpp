#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <utility>

// WGS-84 coordinate frames, differentiable frame conversions, and geodesic
// distance. All functions here are pure and safe for concurrent use.

namespace rangekit::geo {

constexpr double kWgs84A = 6378137.0;                 // semi-major axis [m]
constexpr double kWgs84F = 1.0 / 298.257223563;       // flattening
constexpr double kWgs84E2 = kWgs84F * (2.0 - kWgs84F);  // first eccentricity^2
constexpr double kWgs84B = kWgs84A * (1.0 - kWgs84F);   // semi-minor axis [m]

struct EcefPosition {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  static EcefPosition from_vec(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
};

// latitude [-pi/2, pi/2], longitude (-pi, pi], altitude in meters
struct GeodeticPosition {
  double latitude = 0.0;
  double longitude = 0.0;
  double altitude = 0.0;
};

struct NedVector {
  double north = 0.0;
  double east = 0.0;
  double down = 0.0;

  Eigen::Vector3d vec() const { return {north, east, down}; }
};

// Thrown when the Vincenty iteration fails (near-antipodal pairs).
struct GeodesicNonConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Closed-form (Vermeille) ECEF -> geodetic conversion. Smooth away from the
// polar axis; x=y=0 yields longitude 0 by convention.
GeodeticPosition ecef_to_lla(const EcefPosition& p);

EcefPosition lla_to_ecef(const GeodeticPosition& g);

// d(lat,lon,alt)/d(x,y,z), exact (inverse of the forward-map Jacobian).
// Undefined on the polar axis (cos(lat) == 0).
Eigen::Matrix3d ecef_to_lla_jacobian(const EcefPosition& p);

// Rotation whose rows are the local north/east/down axes expressed in ECEF.
Eigen::Matrix3d ned_rotation(const GeodeticPosition& origin);

NedVector ecef_vector_to_ned(const Eigen::Vector3d& v, const GeodeticPosition& origin);

// Vincenty inverse on the WGS-84 ellipsoid; altitude is ignored.
double geodesic_distance(const GeodeticPosition& a, const GeodeticPosition& b);

// g = (user - sat)/|user - sat| and the geometric range. Throws
// std::invalid_argument for coincident points.
std::pair<Eigen::Vector3d, double> unit_geometry_vector(const EcefPosition& user,
                                                        const EcefPosition& sat);

}  // namespace rangekit::geo
