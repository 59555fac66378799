#pragma once

#include <Eigen/Core>
#include <array>
#include <vector>

#include "rangekit/geo.hpp"

// The GNSS state-space system: constant-velocity dynamics, pseudorange /
// pseudorange-rate measurement prediction, Jacobians, noise covariances and
// the Riccati arrival-cost recursion. Everything is a pure function.

namespace rangekit::model {

// GPS L1 constellation; PRNs 1..32 map to slots 0..31.
constexpr int kSvCount = 32;

// State layout: [x, vx, y, vy, z, vz, clock_offset, clock_drift].
// Clock offset is kept in meters (c * dt) so every measurement equation is
// unit-homogeneous; clock drift in m/s.
using StateVector = Eigen::Matrix<double, 8, 1>;
using CovarianceMatrix = Eigen::Matrix<double, 8, 8>;

namespace sx {
constexpr int kX = 0, kVx = 1, kY = 2, kVy = 3, kZ = 4, kVz = 5, kClk = 6, kDrift = 7;
}

inline Eigen::Vector3d state_position(const StateVector& s) {
  return {s[sx::kX], s[sx::kY], s[sx::kZ]};
}
inline Eigen::Vector3d state_velocity(const StateVector& s) {
  return {s[sx::kVx], s[sx::kVy], s[sx::kVz]};
}
StateVector make_state(const Eigen::Vector3d& pos, const Eigen::Vector3d& vel,
                       double clock_offset, double clock_drift);

struct SatelliteObservation {
  int prn = 0;                         // 1..kSvCount
  geo::EcefPosition sat_position;
  Eigen::Vector3d sat_velocity = Eigen::Vector3d::Zero();
  double pseudorange = 0.0;            // m, preprocessed (sat clock/atmo/rel removed)
  double pseudorange_rate = 0.0;       // m/s
  double cn0 = 0.0;                    // dB-Hz
  double elevation = 0.0;              // rad
  double range_sigma = 1.0;            // m, 1-sigma
  double rate_sigma = 1.0;             // m/s, 1-sigma
  bool visible = false;
};

struct Epoch {
  double timestamp = 0.0;              // s, monotone within a trace
  double sampling_interval_to_next = 1.0;
  std::array<SatelliteObservation, kSvCount> observations{};

  int visible_count() const;
  std::vector<int> visible_slots() const;  // slot order defines measurement order
};

// Spectral densities of the white-noise double-integrator blocks.
struct NoiseModel {
  double q_pos = 1.0;    // m^2/s^3, per spatial axis
  double q_clock = 1.0;  // m^2/s^3, clock offset/drift pair
};

// Block-diagonal of four [[1,T],[0,1]] blocks.
Eigen::Matrix<double, 8, 8> dynamics_matrix(double T);

// Zero-noise mean propagation x' = A(T) x.
StateVector propagate(const StateVector& x, double T);

// Interleaved prediction (rho_1, rhodot_1, rho_2, ...) over visible
// satellites in slot order. The geometry vector for the rate rows is
// evaluated at `linearization` (defaults to x itself).
Eigen::VectorXd predict_measurements(const StateVector& x, const Epoch& epoch);
Eigen::VectorXd predict_measurements(const StateVector& x, const Epoch& epoch,
                                     const StateVector& linearization);

// 2M x 8 Jacobian with geometry frozen at x_lin: range rows
// (gx,0,gy,0,gz,0,1,0), rate rows (0,gx,0,gy,0,gz,0,1).
Eigen::MatrixXd measurement_jacobian(const StateVector& x_lin, const Epoch& epoch);

// Block-diagonal process covariance; each two-state block is
// q * [[T^3/3, T^2/2], [T^2/2, T]].
Eigen::Matrix<double, 8, 8> process_covariance(double T, const NoiseModel& nm);

// diag(range_sigma^2, rate_sigma^2, ...) in measurement order.
Eigen::MatrixXd measurement_covariance(const Epoch& epoch);
// Just the interleaved sigma vector (cheaper; same ordering).
Eigen::VectorXd measurement_sigmas(const Epoch& epoch);

// P' = Q + A [P - P C^T (C P C^T + R)^-1 C P] A^T, symmetrized.
// Throws SolverError if the innovation matrix is singular.
CovarianceMatrix riccati_update(const CovarianceMatrix& p, const Eigen::Matrix<double, 8, 8>& a,
                                const Eigen::MatrixXd& c, const CovarianceMatrix& q,
                                const Eigen::MatrixXd& r);

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rangekit::model
