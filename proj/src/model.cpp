#include "rangekit/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <sstream>

namespace rangekit::model {

StateVector make_state(const Eigen::Vector3d& pos, const Eigen::Vector3d& vel,
                       double clock_offset, double clock_drift) {
  StateVector s;
  s << pos.x(), vel.x(), pos.y(), vel.y(), pos.z(), vel.z(), clock_offset, clock_drift;
  return s;
}

int Epoch::visible_count() const {
  int n = 0;
  for (const auto& o : observations) n += o.visible ? 1 : 0;
  return n;
}

std::vector<int> Epoch::visible_slots() const {
  std::vector<int> slots;
  slots.reserve(16);
  for (int i = 0; i < kSvCount; ++i) {
    if (observations[i].visible) slots.push_back(i);
  }
  return slots;
}

Eigen::Matrix<double, 8, 8> dynamics_matrix(double T) {
  if (!(T > 0.0)) throw std::invalid_argument("dynamics_matrix: T must be > 0");
  Eigen::Matrix<double, 8, 8> a = Eigen::Matrix<double, 8, 8>::Identity();
  for (int b = 0; b < 4; ++b) a(2 * b, 2 * b + 1) = T;
  return a;
}

StateVector propagate(const StateVector& x, double T) { return dynamics_matrix(T) * x; }

Eigen::VectorXd predict_measurements(const StateVector& x, const Epoch& epoch) {
  return predict_measurements(x, epoch, x);
}

Eigen::VectorXd predict_measurements(const StateVector& x, const Epoch& epoch,
                                     const StateVector& linearization) {
  const auto slots = epoch.visible_slots();
  if (slots.empty()) throw std::invalid_argument("predict_measurements: no visible satellites");

  const Eigen::Vector3d pos = state_position(x);
  const Eigen::Vector3d vel = state_velocity(x);
  const Eigen::Vector3d lin_pos = state_position(linearization);

  Eigen::VectorXd y(2 * static_cast<int>(slots.size()));
  int row = 0;
  for (int slot : slots) {
    const auto& obs = epoch.observations[slot];
    const double range = (pos - obs.sat_position.vec()).norm();
    const auto [g, lin_range] =
        geo::unit_geometry_vector(geo::EcefPosition::from_vec(lin_pos), obs.sat_position);
    (void)lin_range;
    y[row++] = range + x[sx::kClk];
    y[row++] = (vel - obs.sat_velocity).dot(g) + x[sx::kDrift];
  }
  return y;
}

Eigen::MatrixXd measurement_jacobian(const StateVector& x_lin, const Epoch& epoch) {
  const auto slots = epoch.visible_slots();
  if (slots.empty()) throw std::invalid_argument("measurement_jacobian: no visible satellites");
  const Eigen::Vector3d pos = state_position(x_lin);

  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2 * static_cast<int>(slots.size()), 8);
  int row = 0;
  for (int slot : slots) {
    const auto& obs = epoch.observations[slot];
    const auto [g, range] =
        geo::unit_geometry_vector(geo::EcefPosition::from_vec(pos), obs.sat_position);
    (void)range;
    c(row, sx::kX) = g.x();
    c(row, sx::kY) = g.y();
    c(row, sx::kZ) = g.z();
    c(row, sx::kClk) = 1.0;
    ++row;
    c(row, sx::kVx) = g.x();
    c(row, sx::kVy) = g.y();
    c(row, sx::kVz) = g.z();
    c(row, sx::kDrift) = 1.0;
    ++row;
  }
  return c;
}

Eigen::Matrix<double, 8, 8> process_covariance(double T, const NoiseModel& nm) {
  if (!(T > 0.0)) throw std::invalid_argument("process_covariance: T must be > 0");
  const double t3 = T * T * T / 3.0;
  const double t2 = T * T / 2.0;
  Eigen::Matrix<double, 8, 8> q = Eigen::Matrix<double, 8, 8>::Zero();
  for (int b = 0; b < 4; ++b) {
    const double qd = (b < 3) ? nm.q_pos : nm.q_clock;
    q(2 * b, 2 * b) = qd * t3;
    q(2 * b, 2 * b + 1) = qd * t2;
    q(2 * b + 1, 2 * b) = qd * t2;
    q(2 * b + 1, 2 * b + 1) = qd * T;
  }
  return q;
}

Eigen::VectorXd measurement_sigmas(const Epoch& epoch) {
  const auto slots = epoch.visible_slots();
  Eigen::VectorXd s(2 * static_cast<int>(slots.size()));
  int row = 0;
  for (int slot : slots) {
    const auto& obs = epoch.observations[slot];
    if (!(obs.range_sigma > 0.0) || !(obs.rate_sigma > 0.0)) {
      throw std::invalid_argument("measurement sigma must be positive for visible satellites");
    }
    s[row++] = obs.range_sigma;
    s[row++] = obs.rate_sigma;
  }
  return s;
}

Eigen::MatrixXd measurement_covariance(const Epoch& epoch) {
  const Eigen::VectorXd s = measurement_sigmas(epoch);
  return s.array().square().matrix().asDiagonal();
}

CovarianceMatrix riccati_update(const CovarianceMatrix& p, const Eigen::Matrix<double, 8, 8>& a,
                                const Eigen::MatrixXd& c, const CovarianceMatrix& q,
                                const Eigen::MatrixXd& r) {
  CovarianceMatrix filtered;
  if (c.rows() == 0) {
    filtered = p;  // pure prediction
  } else {
    const Eigen::MatrixXd s = c * p * c.transpose() + r;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
      std::ostringstream msg;
      msg << "riccati_update: singular innovation matrix (min pivot "
          << (ldlt.info() == Eigen::Success ? ldlt.vectorD().minCoeff() : 0.0) << ")";
      throw SolverError(msg.str());
    }
    const Eigen::MatrixXd pct = p * c.transpose();
    filtered = p - pct * ldlt.solve(pct.transpose());
  }
  CovarianceMatrix next = q + a * filtered * a.transpose();
  return 0.5 * (next + next.transpose());
}

}  // namespace rangekit::model
