#pragma once

// Shared helpers for constructing epochs with controlled geometry.

#include <cmath>
#include <random>
#include <vector>

#include "rangekit/estimate.hpp"
#include "rangekit/geo.hpp"
#include "rangekit/model.hpp"

namespace testutil {

using namespace rangekit;

// Satellite position on the nominal GPS shell along a given azimuth/elevation
// ray from the user.
inline geo::EcefPosition satellite_at(const Eigen::Vector3d& user_ecef,
                                      const geo::GeodeticPosition& user_lla, double azimuth,
                                      double elevation, double shell_radius = 26560e3) {
  const Eigen::Vector3d dir_ned(std::cos(elevation) * std::cos(azimuth),
                                std::cos(elevation) * std::sin(azimuth), -std::sin(elevation));
  const Eigen::Vector3d dir = geo::ned_rotation(user_lla).transpose() * dir_ned;
  // |user + t dir| = shell_radius
  const double b = user_ecef.dot(dir);
  const double c = user_ecef.squaredNorm() - shell_radius * shell_radius;
  const double t = -b + std::sqrt(b * b - c);
  return geo::EcefPosition::from_vec(user_ecef + t * dir);
}

struct EpochSpec {
  model::StateVector truth = model::StateVector::Zero();
  std::vector<std::pair<double, double>> az_el;  // per satellite
  double range_sigma = 1.0;
  double rate_sigma = 0.1;
  double range_noise = 0.0;  // sigma of injected noise
  double rate_noise = 0.0;
  double timestamp = 0.0;
  std::uint64_t noise_seed = 0;
  std::vector<double> biases;  // optional per-satellite extra range error
};

// Noiseless-by-default epoch whose measurements follow the forward model
// exactly at the truth state.
inline model::Epoch make_epoch(const EpochSpec& spec) {
  std::mt19937_64 rng(spec.noise_seed);
  std::normal_distribution<double> normal;

  const Eigen::Vector3d pos = model::state_position(spec.truth);
  const Eigen::Vector3d vel = model::state_velocity(spec.truth);
  const geo::GeodeticPosition lla = geo::ecef_to_lla(geo::EcefPosition::from_vec(pos));

  model::Epoch epoch;
  epoch.timestamp = spec.timestamp;
  for (size_t i = 0; i < spec.az_el.size(); ++i) {
    const auto [az, el] = spec.az_el[i];
    auto& obs = epoch.observations[i];
    obs.visible = true;
    obs.prn = static_cast<int>(i) + 1;
    obs.sat_position = satellite_at(pos, lla, az, el);
    obs.sat_velocity = Eigen::Vector3d::Zero();
    obs.elevation = el;
    obs.cn0 = 40.0;
    obs.range_sigma = spec.range_sigma;
    obs.rate_sigma = spec.rate_sigma;
    const auto [g, range] =
        geo::unit_geometry_vector(geo::EcefPosition::from_vec(pos), obs.sat_position);
    const double bias = i < spec.biases.size() ? spec.biases[i] : 0.0;
    obs.pseudorange = range + spec.truth[model::sx::kClk] + bias +
                      spec.range_noise * normal(rng);
    obs.pseudorange_rate =
        (vel - obs.sat_velocity).dot(g) + spec.truth[model::sx::kDrift] +
        spec.rate_noise * normal(rng);
  }
  return epoch;
}

inline std::vector<std::pair<double, double>> open_sky_geometry(int count) {
  // spread satellites over azimuth at mixed elevations
  std::vector<std::pair<double, double>> az_el;
  for (int i = 0; i < count; ++i) {
    const double az = 2.0 * M_PI * i / count;
    const double el = (i % 3 == 0) ? 1.2 : (i % 3 == 1 ? 0.6 : 0.3);
    az_el.emplace_back(az, el);
  }
  return az_el;
}

inline model::StateVector state_at(const geo::GeodeticPosition& lla, const Eigen::Vector3d& vel,
                                   double clk, double drift) {
  return model::make_state(geo::lla_to_ecef(lla).vec(), vel, clk, drift);
}

inline model::CovarianceMatrix random_psd(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n;
  Eigen::Matrix<double, 8, 8> g;
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) g(r, c) = n(rng);
  }
  model::CovarianceMatrix p = scale * (g * g.transpose());
  return 0.5 * (p + p.transpose());
}

}  // namespace testutil
