#include "rangekit/sim.hpp"

#include <cmath>
#include <stdexcept>

namespace rangekit::sim {

namespace {

constexpr double kRepeatPeriod = 86400.0;            // s
constexpr double kOrbitPeriod = kRepeatPeriod / 2.0;  // two revolutions per day
constexpr double kOrbitRadius = 26560e3;             // m
constexpr double kInclination = 55.0 * M_PI / 180.0;
constexpr int kPlanes = 6;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 step keeps day streams decorrelated
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

// elevation/azimuth of a satellite from a site
std::pair<double, double> look_angles(const geo::GeodeticPosition& site_lla,
                                      const Eigen::Vector3d& site_ecef,
                                      const Eigen::Vector3d& sat_ecef) {
  const Eigen::Vector3d los = sat_ecef - site_ecef;
  const geo::NedVector ned = geo::ecef_vector_to_ned(los.normalized(), site_lla);
  const double el = std::atan2(-ned.down, std::hypot(ned.north, ned.east));
  const double az = std::atan2(ned.east, ned.north);
  return {el, az};
}

}  // namespace

double Rng::uniform() {
  // 53-bit mantissa draw
  return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(2.0 * M_PI * u2);
  have_spare_ = true;
  return mag * std::cos(2.0 * M_PI * u2);
}

ErrorField::ErrorField(std::uint64_t seed, int bumps_per_sat, double amp, double max_abs)
    : max_abs_(max_abs) {
  Rng rng(mix_seed(seed, 0xe44f));
  for (int s = 0; s < model::kSvCount; ++s) {
    for (int b = 0; b < bumps_per_sat; ++b) {
      Bump bump;
      bump.amp = amp * (2.0 * rng.uniform() - 1.0);
      bump.el_center = rng.uniform() * M_PI / 2.0;
      bump.az_center = rng.uniform() * 2.0 * M_PI - M_PI;
      bump.el_sigma = 0.08 + 0.25 * rng.uniform();
      bump.az_sigma = 0.15 + 0.6 * rng.uniform();
      bumps_[s].push_back(bump);
    }
  }
}

double ErrorField::bias(int prn, double elevation, double azimuth) const {
  const auto& bumps = bumps_[prn - 1];
  double sum = 0.0;
  for (const auto& b : bumps) {
    const double de = (elevation - b.el_center) / b.el_sigma;
    const double da = wrap_angle(azimuth - b.az_center) / b.az_sigma;
    sum += b.amp * std::exp(-0.5 * (de * de + da * da));
  }
  return std::clamp(sum, -max_abs_, max_abs_);
}

Constellation::Constellation(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xc057));
  const int per_plane = (model::kSvCount + kPlanes - 1) / kPlanes;
  for (int s = 0; s < model::kSvCount; ++s) {
    const int plane = s % kPlanes;
    const int slot = s / kPlanes;
    raan_[s] = 2.0 * M_PI * plane / kPlanes;
    phase0_[s] = 2.0 * M_PI * slot / per_plane + 0.35 * plane + 0.2 * rng.uniform();
  }
}

std::pair<geo::EcefPosition, Eigen::Vector3d> Constellation::at(double t, int prn) const {
  const int s = prn - 1;
  const double omega = 2.0 * M_PI / kOrbitPeriod;
  const double theta = phase0_[s] + omega * std::fmod(t, kRepeatPeriod);
  const double cr = std::cos(raan_[s]), sr = std::sin(raan_[s]);
  const double ci = std::cos(kInclination), si = std::sin(kInclination);
  const Eigen::Vector3d ex(cr, sr, 0.0);
  const Eigen::Vector3d ey(-sr * ci, cr * ci, si);
  const Eigen::Vector3d pos = kOrbitRadius * (std::cos(theta) * ex + std::sin(theta) * ey);
  const Eigen::Vector3d vel = kOrbitRadius * omega * (-std::sin(theta) * ex + std::cos(theta) * ey);
  return {geo::EcefPosition::from_vec(pos), vel};
}

std::array<std::pair<geo::EcefPosition, Eigen::Vector3d>, model::kSvCount> constellation_at(
    double t, std::uint64_t seed) {
  Constellation c(seed);
  std::array<std::pair<geo::EcefPosition, Eigen::Vector3d>, model::kSvCount> out;
  for (int prn = 1; prn <= model::kSvCount; ++prn) out[prn - 1] = c.at(t, prn);
  return out;
}

SimResult synthesize_trace(const ScenarioConfig& cfg) {
  if (!(cfg.duration > 0.0) || !(cfg.rate > 0.0)) {
    throw std::invalid_argument("synthesize_trace: duration and rate must be positive");
  }
  if (cfg.sigma_range < 0.0 || cfg.sigma_rate < 0.0) {
    throw std::invalid_argument("synthesize_trace: sigmas must be >= 0");
  }
  if (cfg.trajectory == TrajectoryKind::Waypoints && cfg.waypoints.size() < 2) {
    throw std::invalid_argument("synthesize_trace: waypoint trajectory needs >= 2 waypoints");
  }

  const Constellation constellation(cfg.seed);
  const ErrorField field(cfg.seed, cfg.bias_bumps_per_sat, cfg.bias_amp, cfg.bias_max);
  Rng noise(mix_seed(cfg.seed, 0xd0 + static_cast<std::uint64_t>(cfg.day_index)));

  const double dt = 1.0 / cfg.rate;
  const int n_epochs = static_cast<int>(std::floor(cfg.duration * cfg.rate));

  // precompute waypoint arc lengths in a local tangent frame
  std::vector<Eigen::Vector3d> wp_ecef;
  std::vector<double> wp_arc;
  if (cfg.trajectory == TrajectoryKind::Waypoints) {
    double arc = 0.0;
    for (size_t i = 0; i < cfg.waypoints.size(); ++i) {
      wp_ecef.push_back(geo::lla_to_ecef(cfg.waypoints[i]).vec());
      if (i > 0) arc += (wp_ecef[i] - wp_ecef[i - 1]).norm();
      wp_arc.push_back(arc);
    }
  }
  const Eigen::Vector3d site_ecef = geo::lla_to_ecef(cfg.site).vec();
  const Eigen::Matrix3d ned_to_ecef = geo::ned_rotation(cfg.site).transpose();
  const Eigen::Vector3d vel_ecef = ned_to_ecef * cfg.velocity_ned.vec();

  SimResult out;
  out.trace.epochs.reserve(n_epochs);
  out.truth.reserve(n_epochs);
  bool low_coverage = false;

  for (int k = 0; k < n_epochs; ++k) {
    const double tod = cfg.start_time_of_day + k * dt;
    const double utc = cfg.day_index * kRepeatPeriod + tod;

    // truth kinematics
    Eigen::Vector3d pos, vel;
    switch (cfg.trajectory) {
      case TrajectoryKind::Static:
        pos = site_ecef;
        vel = Eigen::Vector3d::Zero();
        break;
      case TrajectoryKind::ConstantVelocity:
        pos = site_ecef + vel_ecef * (k * dt);
        vel = vel_ecef;
        break;
      case TrajectoryKind::Waypoints: {
        const double s = std::min(cfg.speed * k * dt, wp_arc.back());
        size_t seg = 1;
        while (seg + 1 < wp_arc.size() && wp_arc[seg] < s) ++seg;
        const double seg_len = wp_arc[seg] - wp_arc[seg - 1];
        const double f = seg_len > 0.0 ? (s - wp_arc[seg - 1]) / seg_len : 0.0;
        const Eigen::Vector3d dir = (wp_ecef[seg] - wp_ecef[seg - 1]) / seg_len;
        pos = wp_ecef[seg - 1] + f * (wp_ecef[seg] - wp_ecef[seg - 1]);
        vel = (s < wp_arc.back()) ? Eigen::Vector3d(cfg.speed * dir) : Eigen::Vector3d::Zero();
        break;
      }
    }
    const double clk = cfg.clock_offset0 + cfg.clock_drift * (k * dt);

    TruthRecord truth;
    truth.timestamp = utc;
    truth.state = model::make_state(pos, vel, clk, cfg.clock_drift);

    model::Epoch epoch;
    epoch.timestamp = utc;
    epoch.sampling_interval_to_next = dt;
    const geo::GeodeticPosition here = geo::ecef_to_lla(geo::EcefPosition::from_vec(pos));

    for (int prn = 1; prn <= model::kSvCount; ++prn) {
      const auto [sat_pos, sat_vel] = constellation.at(tod, prn);
      const auto [el, az] = look_angles(here, pos, sat_pos.vec());
      if (el < cfg.elevation_mask) continue;

      auto& obs = epoch.observations[prn - 1];
      obs.visible = true;
      obs.prn = prn;
      obs.sat_position = sat_pos;
      obs.sat_velocity = sat_vel;
      obs.elevation = el;

      const auto [g, range] = geo::unit_geometry_vector(geo::EcefPosition::from_vec(pos), sat_pos);
      const double bias =
          cfg.bias_bumps_per_sat > 0 ? field.bias(prn, el, az) : 0.0;
      obs.pseudorange = range + clk + bias + cfg.sigma_range * noise.normal();
      obs.pseudorange_rate =
          (vel - sat_vel).dot(g) + cfg.clock_drift + cfg.sigma_rate * noise.normal();
      obs.cn0 = 30.0 + 18.0 * std::sin(el) + 0.7 * noise.normal();
      obs.range_sigma = cfg.sigma_range > 0.0 ? cfg.sigma_range : 1.0;
      obs.rate_sigma = cfg.sigma_rate > 0.0 ? cfg.sigma_rate : 1.0;
      truth.bias[prn - 1] = bias;
    }

    if (epoch.visible_count() < 4) low_coverage = true;

    out.trace.labels.push_back({utc, here});
    out.trace.epochs.push_back(std::move(epoch));
    out.truth.push_back(std::move(truth));
  }

  if (low_coverage && cfg.trajectory != TrajectoryKind::Static) {
    out.trace.warnings.push_back("fewer than 4 visible satellites at some epochs");
  }
  return out;
}

DaySplit split_days(std::vector<SimResult> days) {
  if (days.size() < 2) throw std::invalid_argument("split_days: need at least 2 days");
  DaySplit split;
  split.test = std::move(days.back());
  days.pop_back();
  split.train = std::move(days);
  return split;
}

}  // namespace rangekit::sim
