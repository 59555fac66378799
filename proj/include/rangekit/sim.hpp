#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "rangekit/geo.hpp"
#include "rangekit/model.hpp"
#include "rangekit/trace.hpp"

// Synthetic GNSS scenario generator: ground-truth states, repeatable
// site-dependent ranging-error fields, and noiseless/noisy epochs. This is
// the oracle behind every end-to-end test, so determinism matters more than
// orbital fidelity.

namespace rangekit::sim {

// Deterministic normal/uniform source (own Box-Muller so streams are
// bit-identical across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform();              // [0, 1)
  double normal();               // N(0, 1)

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

enum class TrajectoryKind { Static, ConstantVelocity, Waypoints };

struct ScenarioConfig {
  double duration = 120.0;       // s
  double rate = 1.0;             // Hz
  TrajectoryKind trajectory = TrajectoryKind::Static;
  geo::GeodeticPosition site{0.65, -2.13, 30.0};  // start / static position
  geo::NedVector velocity_ned{1.0, 0.5, 0.0};     // m/s, ConstantVelocity only
  std::vector<geo::GeodeticPosition> waypoints;   // Waypoints only
  double speed = 1.4;            // m/s along waypoints
  double sigma_range = 0.0;      // m
  double sigma_rate = 0.0;       // m/s
  double clock_offset0 = 0.0;    // m
  double clock_drift = 0.0;      // m/s
  double elevation_mask = 10.0 * M_PI / 180.0;
  // error-field spec
  int bias_bumps_per_sat = 0;    // 0 disables the field
  double bias_max = 50.0;        // |bias| clamp, m
  double bias_amp = 30.0;        // bump amplitude scale, m
  std::uint64_t seed = 1;
  int day_index = 0;             // shifts timestamps by whole days
  double start_time_of_day = 0.0;  // s into the (86400 s) repeat period
};

// Per-PRN deterministic bias as a smooth function of the satellite's
// elevation/azimuth as seen from the site. Same seed + same time-of-day
// phase => identical biases, which is the repeatability the learner exploits.
class ErrorField {
 public:
  ErrorField(std::uint64_t seed, int bumps_per_sat, double amp, double max_abs);

  double bias(int prn, double elevation, double azimuth) const;

 private:
  struct Bump {
    double amp, el_center, az_center, el_sigma, az_sigma;
  };
  std::array<std::vector<Bump>, model::kSvCount> bumps_;
  double max_abs_ = 50.0;
};

// Circular-orbit constellation: radius 26560 km, inclination 55 deg, six
// planes, two revolutions per 86400 s so geometry repeats exactly day to day.
class Constellation {
 public:
  explicit Constellation(std::uint64_t seed);

  // position [m] and velocity [m/s]; t is time-of-day seconds
  std::pair<geo::EcefPosition, Eigen::Vector3d> at(double t, int prn) const;

 private:
  std::array<double, model::kSvCount> phase0_;
  std::array<double, model::kSvCount> raan_;
};

std::array<std::pair<geo::EcefPosition, Eigen::Vector3d>, model::kSvCount> constellation_at(
    double t, std::uint64_t seed);

struct TruthRecord {
  double timestamp = 0.0;
  model::StateVector state;
  std::array<double, model::kSvCount> bias{};  // injected, 0 for invisible
};

struct SimResult {
  Trace trace;
  std::vector<TruthRecord> truth;
};

SimResult synthesize_trace(const ScenarioConfig& cfg);

// Day-indexed split: identical route and error field, last day held out.
struct DaySplit {
  std::vector<SimResult> train;
  SimResult test;
};
DaySplit split_days(std::vector<SimResult> days);

}  // namespace rangekit::sim
