#include <doctest.h>

#include <cmath>
#include <random>

#include "rangekit/geo.hpp"

using namespace rangekit;

namespace {
constexpr double kDeg = M_PI / 180.0;
}

TEST_CASE("lla_to_ecef reference points") {
  // equator / prime meridian
  const auto p0 = geo::lla_to_ecef({0.0, 0.0, 0.0});
  CHECK(p0.x == doctest::Approx(6378137.0).epsilon(1e-12));
  CHECK(std::abs(p0.y) < 1e-9);
  CHECK(std::abs(p0.z) < 1e-9);

  // pole sits at the semi-minor axis
  const auto pole = geo::lla_to_ecef({M_PI / 2.0, 0.0, 0.0});
  CHECK(std::abs(pole.z - 6356752.3142) < 1e-3);

  // frozen forward value (independent evaluation of the WGS-84 formula)
  const auto p = geo::lla_to_ecef({0.5, 1.0, 100.0});
  CHECK(p.x == doctest::Approx(3026633.4955051164).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(4713702.385598936).epsilon(1e-12));
  CHECK(p.z == doctest::Approx(3039758.849405686).epsilon(1e-12));
}

TEST_CASE("ecef_to_lla closed form") {
  const auto g0 = geo::ecef_to_lla({6378137.0, 0.0, 0.0});
  CHECK(std::abs(g0.latitude) < 1e-12);
  CHECK(std::abs(g0.longitude) < 1e-12);
  CHECK(std::abs(g0.altitude) < 1e-6);

  const auto g90 = geo::ecef_to_lla({0.0, 6378137.0, 0.0});
  CHECK(std::abs(g90.latitude) < 1e-12);
  CHECK(g90.longitude == doctest::Approx(M_PI / 2.0).epsilon(1e-12));

  // frozen against an independent iterative geodetic solver
  const auto g = geo::ecef_to_lla({4198945.0, 174747.8, 4781887.2});
  CHECK(std::abs(g.latitude - 0.853116923604060) < 1e-6);
  CHECK(std::abs(g.longitude - 0.041593071140942) < 1e-6);
  CHECK(std::abs(g.altitude - 125.019932314) < 1e-3);

  // polar axis: longitude 0 by convention
  const auto axis = geo::ecef_to_lla({0.0, 0.0, 6356752.3142});
  CHECK(axis.longitude == 0.0);
  CHECK(axis.latitude == doctest::Approx(M_PI / 2.0).epsilon(1e-9));
}

TEST_CASE("ecef/lla round trip over random valid positions") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lat(-1.55, 1.55);
  std::uniform_real_distribution<double> lon(-M_PI + 1e-6, M_PI);
  std::uniform_real_distribution<double> alt(-5000.0, 3e7 - 6.4e6);
  for (int i = 0; i < 10000; ++i) {
    const geo::GeodeticPosition g{lat(rng), lon(rng), alt(rng)};
    const auto p = geo::lla_to_ecef(g);
    const auto p2 = geo::lla_to_ecef(geo::ecef_to_lla(p));
    CHECK(std::abs(p.x - p2.x) < 1e-6);
    CHECK(std::abs(p.y - p2.y) < 1e-6);
    CHECK(std::abs(p.z - p2.z) < 1e-6);
  }
}

TEST_CASE("ecef_to_lla jacobian matches central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lat(-1.2, 1.2);
  std::uniform_real_distribution<double> lon(-3.0, 3.0);
  std::uniform_real_distribution<double> alt(-100.0, 20000.0);
  for (int i = 0; i < 50; ++i) {
    const auto p = geo::lla_to_ecef({lat(rng), lon(rng), alt(rng)});
    const Eigen::Matrix3d j = geo::ecef_to_lla_jacobian(p);
    const double h = 0.5;
    for (int c = 0; c < 3; ++c) {
      geo::EcefPosition hi = p, lo = p;
      (c == 0 ? hi.x : c == 1 ? hi.y : hi.z) += h;
      (c == 0 ? lo.x : c == 1 ? lo.y : lo.z) -= h;
      const auto ghi = geo::ecef_to_lla(hi);
      const auto glo = geo::ecef_to_lla(lo);
      const Eigen::Vector3d fd((ghi.latitude - glo.latitude) / (2 * h),
                               (ghi.longitude - glo.longitude) / (2 * h),
                               (ghi.altitude - glo.altitude) / (2 * h));
      for (int r = 0; r < 3; ++r) {
        const double scale = std::max(std::abs(fd[r]), 1e-12);
        CHECK(std::abs(j(r, c) - fd[r]) / scale < 1e-5);
      }
    }
  }
}

TEST_CASE("ned rotation") {
  SUBCASE("local up maps to -down") {
    const geo::GeodeticPosition origin{0.7, -1.9, 120.0};
    const auto up_ecef = geo::lla_to_ecef({origin.latitude, origin.longitude, 1120.0}).vec() -
                         geo::lla_to_ecef(origin).vec();
    const auto ned = geo::ecef_vector_to_ned(up_ecef, origin);
    CHECK(std::abs(ned.north) < 1e-3);
    CHECK(std::abs(ned.east) < 1e-3);
    CHECK(ned.down == doctest::Approx(-up_ecef.norm()).epsilon(1e-6));
  }
  SUBCASE("zero maps to zero") {
    const auto ned = geo::ecef_vector_to_ned(Eigen::Vector3d::Zero(), {0.3, 0.4, 0.0});
    CHECK(ned.north == 0.0);
    CHECK(ned.east == 0.0);
    CHECK(ned.down == 0.0);
  }
  SUBCASE("ecef z is north at the equator/prime meridian") {
    const auto ned = geo::ecef_vector_to_ned(Eigen::Vector3d(0, 0, 1), {0.0, 0.0, 0.0});
    CHECK(ned.north == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(ned.east) < 1e-12);
    CHECK(std::abs(ned.down) < 1e-12);
  }
  SUBCASE("rotation preserves norms") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (int i = 0; i < 200; ++i) {
      const Eigen::Vector3d v(n(rng), n(rng), n(rng));
      const geo::GeodeticPosition origin{n(rng) * 0.4, n(rng), 0.0};
      const auto ned = geo::ecef_vector_to_ned(v, origin);
      CHECK(std::abs(ned.vec().norm() - v.norm()) < 1e-12 * std::max(1.0, v.norm()));
    }
  }
}

TEST_CASE("vincenty geodesic distance") {
  SUBCASE("identical points") {
    CHECK(geo::geodesic_distance({0.4, 0.5, 10.0}, {0.4, 0.5, 500.0}) == 0.0);
  }
  SUBCASE("one degree of longitude at the equator") {
    const double d = geo::geodesic_distance({0.0, 0.0, 0.0}, {0.0, kDeg, 0.0});
    CHECK(std::abs(d - 111319.491) < 0.01);
  }
  SUBCASE("one degree of latitude from the equator") {
    const double d = geo::geodesic_distance({0.0, 0.0, 0.0}, {kDeg, 0.0, 0.0});
    CHECK(std::abs(d - 110574.389) < 0.01);
  }
  SUBCASE("symmetry and triangle inequality on sampled triples") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> lat(-1.2, 1.2);
    std::uniform_real_distribution<double> lon(-2.5, 2.5);
    for (int i = 0; i < 100; ++i) {
      const geo::GeodeticPosition a{lat(rng), lon(rng), 0.0};
      const geo::GeodeticPosition b{a.latitude + 0.02 * lat(rng), a.longitude + 0.02 * lon(rng),
                                    0.0};
      const geo::GeodeticPosition c{a.latitude - 0.02 * lat(rng), a.longitude + 0.01 * lon(rng),
                                    0.0};
      const double ab = geo::geodesic_distance(a, b);
      const double ba = geo::geodesic_distance(b, a);
      const double ac = geo::geodesic_distance(a, c);
      const double cb = geo::geodesic_distance(c, b);
      CHECK(std::abs(ab - ba) < 1e-6);
      CHECK(ab <= ac + cb + 1e-6);
    }
  }
}

TEST_CASE("unit_geometry_vector") {
  const geo::EcefPosition sat{2.0e7, 1.0e7, 1.2e7};
  SUBCASE("axis-aligned offsets") {
    const auto [g1, r1] = geo::unit_geometry_vector({sat.x + 5.0e6, sat.y, sat.z}, sat);
    CHECK(g1.isApprox(Eigen::Vector3d::UnitX(), 1e-15));
    CHECK(r1 == doctest::Approx(5.0e6));
    const auto [g2, r2] = geo::unit_geometry_vector({sat.x, sat.y - 3.0e6, sat.z}, sat);
    CHECK(g2.isApprox(-Eigen::Vector3d::UnitY(), 1e-15));
    CHECK(r2 == doctest::Approx(3.0e6));
  }
  SUBCASE("random pairs: unit norm and euclidean range") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 1e6);
    for (int i = 0; i < 200; ++i) {
      const geo::EcefPosition user{6.4e6 + n(rng), n(rng), n(rng)};
      const auto [g, range] = geo::unit_geometry_vector(user, sat);
      CHECK(std::abs(g.norm() - 1.0) < 1e-12);
      CHECK(range == doctest::Approx((user.vec() - sat.vec()).norm()).epsilon(1e-14));
    }
  }
  SUBCASE("coincident points throw") {
    CHECK_THROWS_AS(geo::unit_geometry_vector(sat, sat), std::invalid_argument);
  }
}
