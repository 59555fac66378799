#include "rangekit/estimate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <sstream>

namespace rangekit::estimate {

using Matrix8 = Eigen::Matrix<double, 8, 8>;
using Vector8 = Eigen::Matrix<double, 8, 1>;
using model::SolverError;

namespace {

// L^-1 of an SPD covariance, for whitening residual blocks.
Matrix8 inverse_cholesky_factor(const Matrix8& cov, const char* what) {
  Eigen::LLT<Matrix8> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw SolverError(std::string(what) + ": covariance is not positive definite");
  }
  return llt.matrixL().solve(Matrix8::Identity());
}

Eigen::VectorXd corrected_measurements(const model::Epoch& epoch, const CorrectionSet& corr) {
  const auto slots = epoch.visible_slots();
  Eigen::VectorXd y(2 * static_cast<int>(slots.size()));
  int row = 0;
  for (int slot : slots) {
    const auto& obs = epoch.observations[slot];
    y[row++] = obs.pseudorange - corr[slot];
    y[row++] = obs.pseudorange_rate;
  }
  return y;
}

}  // namespace

double ResidualStack::objective() const {
  double f = 0.0;
  if (has_arrival) f += arrival_r.squaredNorm();
  for (const auto& r : trans_r) f += r.squaredNorm();
  for (const auto& r : meas_r) f += r.squaredNorm();
  return f;
}

int ResidualStack::total_rows() const {
  int rows = has_arrival ? 8 : 0;
  rows += 8 * static_cast<int>(trans_r.size());
  for (const auto& r : meas_r) rows += static_cast<int>(r.size());
  return rows;
}

Eigen::VectorXd ResidualStack::stacked_residual() const {
  Eigen::VectorXd r(total_rows());
  int at = 0;
  if (has_arrival) {
    r.segment<8>(at) = arrival_r;
    at += 8;
  }
  for (const auto& rb : trans_r) {
    r.segment<8>(at) = rb;
    at += 8;
  }
  for (const auto& rb : meas_r) {
    r.segment(at, rb.size()) = rb;
    at += static_cast<int>(rb.size());
  }
  return r;
}

Eigen::MatrixXd ResidualStack::dense_jacobian() const {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(total_rows(), 8 * n_states);
  int at = 0;
  if (has_arrival) {
    j.block<8, 8>(at, 0) = arrival_j;
    at += 8;
  }
  for (size_t t = 0; t < trans_r.size(); ++t) {
    j.block<8, 8>(at, 8 * static_cast<int>(t)) = trans_j_lo[t];
    j.block<8, 8>(at, 8 * static_cast<int>(t) + 8) = trans_j_hi[t];
    at += 8;
  }
  for (size_t m = 0; m < meas_r.size(); ++m) {
    j.block(at, 8 * static_cast<int>(m), meas_r[m].size(), 8) = meas_j[m];
    at += static_cast<int>(meas_r[m].size());
  }
  return j;
}

ResidualStack build_horizon_costs(const HorizonProblem& p,
                                  const std::vector<StateVector>& trajectory) {
  const int n = static_cast<int>(p.epochs.size());
  if (n == 0) throw std::invalid_argument("build_horizon_costs: empty horizon");
  if (static_cast<int>(p.corrections.size()) != n ||
      static_cast<int>(trajectory.size()) != n) {
    throw std::invalid_argument("build_horizon_costs: corrections/trajectory misaligned");
  }

  ResidualStack stack;
  stack.n_states = n;

  if (p.include_arrival_cost) {
    stack.has_arrival = true;
    stack.arrival_j = inverse_cholesky_factor(p.prior_covariance, "arrival");
    stack.arrival_r = stack.arrival_j * (trajectory.front() - p.prior_state);
  }

  stack.trans_r.reserve(n - 1);
  for (int j = 0; j + 1 < n; ++j) {
    const double dt = p.epochs[j + 1].timestamp - p.epochs[j].timestamp;
    if (!(dt > 0.0)) throw std::invalid_argument("build_horizon_costs: non-increasing timestamps");
    const Matrix8 a = model::dynamics_matrix(dt);
    const Matrix8 lq = inverse_cholesky_factor(model::process_covariance(dt, p.noise), "process");
    stack.trans_r.push_back(lq * (trajectory[j + 1] - a * trajectory[j]));
    stack.trans_j_lo.push_back(-lq * a);
    stack.trans_j_hi.push_back(lq);
  }

  stack.meas_r.reserve(n);
  for (int j = 0; j < n; ++j) {
    if (p.epochs[j].visible_count() == 0) {
      throw std::invalid_argument("build_horizon_costs: epoch without visible satellites");
    }
    const Eigen::VectorXd sigma = model::measurement_sigmas(p.epochs[j]);
    const Eigen::VectorXd y = corrected_measurements(p.epochs[j], p.corrections[j]);
    const Eigen::VectorXd h = model::predict_measurements(trajectory[j], p.epochs[j]);
    const Eigen::MatrixXd c = model::measurement_jacobian(trajectory[j], p.epochs[j]);
    stack.meas_r.push_back(((y - h).array() / sigma.array()).matrix());
    stack.meas_j.push_back(-(c.array().colwise() / sigma.array()).matrix());
    stack.meas_sigma.push_back(sigma);
  }
  return stack;
}

NormalEquations assemble_normal_equations(const ResidualStack& stack) {
  const int n = stack.n_states;
  NormalEquations ne;
  ne.diag.assign(n, Matrix8::Zero());
  ne.upper.assign(n > 0 ? n - 1 : 0, Matrix8::Zero());
  ne.gradient = Eigen::VectorXd::Zero(8 * n);

  if (stack.has_arrival) {
    ne.diag[0] += stack.arrival_j.transpose() * stack.arrival_j;
    ne.gradient.segment<8>(0) += stack.arrival_j.transpose() * stack.arrival_r;
  }
  for (size_t t = 0; t < stack.trans_r.size(); ++t) {
    const auto& lo = stack.trans_j_lo[t];
    const auto& hi = stack.trans_j_hi[t];
    ne.diag[t] += lo.transpose() * lo;
    ne.diag[t + 1] += hi.transpose() * hi;
    ne.upper[t] += lo.transpose() * hi;
    ne.gradient.segment<8>(8 * t) += lo.transpose() * stack.trans_r[t];
    ne.gradient.segment<8>(8 * (t + 1)) += hi.transpose() * stack.trans_r[t];
  }
  for (size_t m = 0; m < stack.meas_r.size(); ++m) {
    ne.diag[m] += stack.meas_j[m].transpose() * stack.meas_j[m];
    ne.gradient.segment<8>(8 * m) += stack.meas_j[m].transpose() * stack.meas_r[m];
  }
  return ne;
}

BlockTridiagonalCholesky::BlockTridiagonalCholesky(
    const std::vector<Matrix8>& diag, const std::vector<Matrix8>& upper) {
  const int n = static_cast<int>(diag.size());
  chol_.resize(n);
  sub_.resize(n > 0 ? n - 1 : 0);
  Matrix8 pivot;
  for (int j = 0; j < n; ++j) {
    pivot = diag[j];
    if (j > 0) pivot -= sub_[j - 1] * sub_[j - 1].transpose();
    Eigen::LLT<Matrix8> llt(pivot);
    if (llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "singular normal equations at state block " << j
          << " (pivot diagonal min " << pivot.diagonal().minCoeff() << ", max "
          << pivot.diagonal().maxCoeff() << ")";
      throw SolverError(msg.str());
    }
    chol_[j] = llt.matrixL();
    if (j + 1 < n) {
      // H[j][j+1] = L_j B_j^T  =>  B_j = (L_j^-1 U_j)^T
      sub_[j] = chol_[j].triangularView<Eigen::Lower>().solve(upper[j]).transpose();
    }
  }
}

Eigen::VectorXd BlockTridiagonalCholesky::solve(const Eigen::VectorXd& rhs) const {
  const int n = static_cast<int>(chol_.size());
  Eigen::VectorXd y(8 * n);
  for (int j = 0; j < n; ++j) {
    Vector8 b = rhs.segment<8>(8 * j);
    if (j > 0) b -= sub_[j - 1] * y.segment<8>(8 * (j - 1));
    y.segment<8>(8 * j) = chol_[j].triangularView<Eigen::Lower>().solve(b);
  }
  Eigen::VectorXd x(8 * n);
  for (int j = n - 1; j >= 0; --j) {
    Vector8 b = y.segment<8>(8 * j);
    if (j + 1 < n) b -= sub_[j].transpose() * x.segment<8>(8 * (j + 1));
    x.segment<8>(8 * j) = chol_[j].transpose().triangularView<Eigen::Upper>().solve(b);
  }
  return x;
}

SolveReport gauss_newton(const StackBuilder& builder, std::vector<StateVector> warm_start,
                         const GnOptions& opts) {
  for (const auto& s : warm_start) {
    if (!s.allFinite()) throw std::invalid_argument("gauss_newton: warm start is not finite");
  }

  SolveReport report;
  ResidualStack stack = builder(warm_start);
  double objective = stack.objective();
  report.objective_history.push_back(objective);

  std::vector<StateVector> traj = std::move(warm_start);
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const NormalEquations ne = assemble_normal_equations(stack);
    const BlockTridiagonalCholesky factor(ne.diag, ne.upper);
    const Eigen::VectorXd delta = -factor.solve(ne.gradient);

    for (size_t i = 0; i < traj.size(); ++i) {
      traj[i] += opts.step_size * delta.segment<8>(8 * static_cast<int>(i));
    }
    stack = builder(traj);
    const double next = stack.objective();
    if (next > objective) ++report.objective_increases;
    objective = next;
    report.objective_history.push_back(objective);
    report.iterations = it;
    report.final_step_norm = delta.norm();
    if (report.final_step_norm < opts.step_tolerance) {
      report.converged = true;
      break;
    }
  }
  report.final_objective = objective;
  report.trajectory = std::move(traj);
  return report;
}

SolveReport mhe_solve(const HorizonProblem& p, const GnOptions& opts) {
  if (p.warm_start.size() != p.epochs.size()) {
    throw std::invalid_argument("mhe_solve: warm start does not match horizon length");
  }
  return gauss_newton(
      [&p](const std::vector<StateVector>& traj) { return build_horizon_costs(p, traj); },
      p.warm_start, opts);
}

StateVector wls_solve(const model::Epoch& epoch, const CorrectionSet& corrections,
                      const Eigen::Vector3d& init_position, double init_clock) {
  const auto slots = epoch.visible_slots();
  const int m = static_cast<int>(slots.size());
  if (m < 4) throw std::invalid_argument("wls_solve: needs at least 4 visible satellites");

  Eigen::Vector3d pos = init_position;
  double clk = init_clock;

  for (int it = 0; it < 20; ++it) {
    Eigen::Matrix4d h = Eigen::Matrix4d::Zero();
    Eigen::Vector4d g = Eigen::Vector4d::Zero();
    for (int slot : slots) {
      const auto& obs = epoch.observations[slot];
      const Eigen::Vector3d d = pos - obs.sat_position.vec();
      const double range = d.norm();
      const Eigen::Vector3d u = range > 0.0 ? Eigen::Vector3d(d / range)
                                            : Eigen::Vector3d::UnitX();
      const double w = 1.0 / (obs.range_sigma * obs.range_sigma);
      Eigen::Vector4d row;
      row << u.x(), u.y(), u.z(), 1.0;
      const double res = (obs.pseudorange - corrections[slot]) - (range + clk);
      h += w * row * row.transpose();
      g += w * row * res;
    }
    Eigen::LDLT<Eigen::Matrix4d> ldlt(h);
    if (ldlt.info() != Eigen::Success) throw SolverError("wls_solve: singular geometry");
    const Eigen::Vector4d delta = ldlt.solve(g);
    if (!delta.allFinite() || delta.head<3>().norm() > 1e7) {
      throw SolverError("wls_solve: diverged");
    }
    pos += delta.head<3>();
    clk += delta[3];
    if (delta.head<3>().norm() < 1e-4) break;
  }

  // velocity + drift: single linear solve from the rate rows
  Eigen::Matrix4d hv = Eigen::Matrix4d::Zero();
  Eigen::Vector4d gv = Eigen::Vector4d::Zero();
  for (int slot : slots) {
    const auto& obs = epoch.observations[slot];
    const auto [u, range] =
        geo::unit_geometry_vector(geo::EcefPosition::from_vec(pos), obs.sat_position);
    (void)range;
    const double w = 1.0 / (obs.rate_sigma * obs.rate_sigma);
    Eigen::Vector4d row;
    row << u.x(), u.y(), u.z(), 1.0;
    const double res = obs.pseudorange_rate + obs.sat_velocity.dot(u);
    hv += w * row * row.transpose();
    gv += w * row * res;
  }
  Eigen::LDLT<Eigen::Matrix4d> ldlt(hv);
  if (ldlt.info() != Eigen::Success) throw SolverError("wls_solve: singular rate geometry");
  const Eigen::Vector4d vel = ldlt.solve(gv);

  return model::make_state(pos, vel.head<3>(), clk, vel[3]);
}

std::pair<StateVector, CovarianceMatrix> ekf_update(const StateVector& x_pred,
                                                    const CovarianceMatrix& p_pred,
                                                    const model::Epoch& epoch,
                                                    const CorrectionSet& corrections) {
  const Eigen::MatrixXd c = model::measurement_jacobian(x_pred, epoch);
  const Eigen::MatrixXd r = model::measurement_covariance(epoch);
  const Eigen::VectorXd innovation =
      corrected_measurements(epoch, corrections) - model::predict_measurements(x_pred, epoch);

  const Eigen::MatrixXd s = c * p_pred * c.transpose() + r;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) throw SolverError("ekf_update: singular innovation matrix");
  const Eigen::MatrixXd gain = llt.solve(c * p_pred).transpose();

  const StateVector x = x_pred + gain * innovation;
  const Matrix8 ikc = Matrix8::Identity() - gain * c;
  CovarianceMatrix p = ikc * p_pred * ikc.transpose() + gain * r * gain.transpose();
  p = 0.5 * (p + p.transpose());
  return {x, p};
}

std::pair<StateVector, CovarianceMatrix> ekf_step(const StateVector& x,
                                                  const CovarianceMatrix& p, double dt,
                                                  const model::NoiseModel& noise,
                                                  const model::Epoch& epoch,
                                                  const CorrectionSet& corrections) {
  const Matrix8 a = model::dynamics_matrix(dt);
  const StateVector x_pred = a * x;
  CovarianceMatrix p_pred = a * p * a.transpose() + model::process_covariance(dt, noise);
  p_pred = 0.5 * (p_pred + p_pred.transpose());
  if (epoch.visible_count() == 0) return {x_pred, p_pred};  // pure prediction
  return ekf_update(x_pred, p_pred, epoch, corrections);
}

MovingHorizonSession::MovingHorizonSession(EngineConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.horizon < 0) throw std::invalid_argument("horizon must be >= 0");
}

void MovingHorizonSession::reset() {
  epochs_.clear();
  corrections_.clear();
  p_ring_.clear();
  last_trajectory_.clear();
  head_history_.clear();
  bootstrapped_ = false;
}

FixResult MovingHorizonSession::bootstrap(const model::Epoch& epoch,
                                          const CorrectionSet& corrections, bool was_reset) {
  StateVector x0;
  try {
    x0 = wls_solve(epoch, corrections);
  } catch (const std::exception& e) {
    return {StateVector::Zero(), FixStatus::Error, false,
            std::string("bootstrap failed: ") + e.what()};
  }
  epochs_.push_back(epoch);
  corrections_.push_back(corrections);
  p_ring_.push_back(cfg_.prior_p0 * CovarianceMatrix::Identity());
  prior_state_ = x0;
  last_trajectory_.assign(1, x0);
  bootstrapped_ = true;
  last_utc_ = epoch.timestamp;
  return solve_window(was_reset);
}

FixResult MovingHorizonSession::solve_window(bool was_reset) {
  HorizonProblem problem;
  problem.epochs.assign(epochs_.begin(), epochs_.end());
  problem.corrections.assign(corrections_.begin(), corrections_.end());
  problem.prior_state = prior_state_;
  problem.prior_covariance = p_ring_.front();
  problem.noise = cfg_.noise;
  problem.warm_start = last_trajectory_;
  problem.include_arrival_cost = cfg_.kind != EngineKind::MheNoArrival;

  SolveReport report;
  try {
    report = mhe_solve(problem, cfg_.gn);
  } catch (const std::exception& e) {
    reset();
    return {StateVector::Zero(), FixStatus::Error, false,
            std::string("window solve failed: ") + e.what()};
  }
  last_trajectory_ = report.trajectory;
  head_history_.push_back(report.trajectory.back());

  FixResult fix;
  fix.state = report.trajectory.back();
  fix.solver_converged = report.converged;
  fix.status = was_reset ? FixStatus::Reset
                         : (cache_size() < cfg_.horizon + 1 ? FixStatus::Warmup : FixStatus::Ok);
  return fix;
}

FixResult MovingHorizonSession::push(const model::Epoch& epoch,
                                     const CorrectionSet& corrections) {
  if (bootstrapped_ && !(epoch.timestamp > last_utc_)) {
    return {StateVector::Zero(), FixStatus::Error, false, "non-monotone timestamp rejected"};
  }
  bool was_reset = false;
  if (bootstrapped_ && epoch.timestamp - last_utc_ > cfg_.gap_threshold) {
    reset();
    was_reset = true;
  }
  if (!bootstrapped_) return bootstrap(epoch, corrections, was_reset);

  const double dt = epoch.timestamp - last_utc_;

  // Complete the Riccati recursion for the newly arrived epoch: the latest
  // window produced the linearization point for the previous epoch.
  const model::Epoch& prev = epochs_.back();
  const StateVector& lin = last_trajectory_.back();
  CovarianceMatrix p_next;
  try {
    p_next = model::riccati_update(p_ring_.back(), model::dynamics_matrix(dt),
                                   model::measurement_jacobian(lin, prev),
                                   model::process_covariance(dt, cfg_.noise),
                                   model::measurement_covariance(prev));
  } catch (const std::exception& e) {
    reset();
    return {StateVector::Zero(), FixStatus::Error, false,
            std::string("covariance update failed: ") + e.what()};
  }

  epochs_.push_back(epoch);
  corrections_.push_back(corrections);
  p_ring_.push_back(p_next);

  // Warm start: shift the historical estimates, propagate the head forward.
  last_trajectory_.push_back(model::propagate(last_trajectory_.back(), dt));

  if (cache_size() > cfg_.horizon + 1) {
    const double front_dt = epochs_[1].timestamp - epochs_[0].timestamp;
    // Arrival prior for the new window: the estimate of the dropped epoch,
    // propagated one step (head_history_ holds x̂ from its own solve).
    prior_state_ = model::propagate(head_history_.front(), front_dt);
    head_history_.pop_front();
    epochs_.pop_front();
    corrections_.pop_front();
    p_ring_.pop_front();
    last_trajectory_.erase(last_trajectory_.begin());
  }

  last_utc_ = epoch.timestamp;
  FixResult fix = solve_window(was_reset);
  return fix;
}

RunResult run_trace(const std::vector<model::Epoch>& epochs,
                    const std::vector<CorrectionSet>& corrections, const EngineConfig& cfg) {
  if (epochs.size() != corrections.size()) {
    throw std::invalid_argument("run_trace: corrections must align with epochs");
  }
  RunResult out;
  out.states.reserve(epochs.size());
  out.statuses.reserve(epochs.size());

  switch (cfg.kind) {
    case EngineKind::Wls: {
      for (size_t k = 0; k < epochs.size(); ++k) {
        try {
          out.states.push_back(wls_solve(epochs[k], corrections[k]));
          out.statuses.push_back(FixStatus::Ok);
        } catch (const std::exception&) {
          out.states.push_back(StateVector::Zero());
          out.statuses.push_back(FixStatus::Error);
          ++out.failures;
        }
      }
      return out;
    }
    case EngineKind::Ekf: {
      bool active = false;
      StateVector x = StateVector::Zero();
      CovarianceMatrix p = CovarianceMatrix::Identity();
      double last_utc = 0.0;
      for (size_t k = 0; k < epochs.size(); ++k) {
        bool was_reset = false;
        if (active && epochs[k].timestamp - last_utc > cfg.gap_threshold) {
          active = false;
          was_reset = true;
        }
        try {
          if (!active) {
            x = wls_solve(epochs[k], corrections[k]);
            p = cfg.prior_p0 * CovarianceMatrix::Identity();
            std::tie(x, p) = ekf_update(x, p, epochs[k], corrections[k]);
            active = true;
          } else {
            std::tie(x, p) = ekf_step(x, p, epochs[k].timestamp - last_utc, cfg.noise,
                                      epochs[k], corrections[k]);
          }
          out.states.push_back(x);
          out.statuses.push_back(was_reset ? FixStatus::Reset : FixStatus::Ok);
          last_utc = epochs[k].timestamp;
        } catch (const std::exception&) {
          out.states.push_back(StateVector::Zero());
          out.statuses.push_back(FixStatus::Error);
          ++out.failures;
          active = false;
        }
      }
      return out;
    }
    case EngineKind::MheFiltering:
      return mhe_filtering(epochs, corrections, cfg);
    case EngineKind::MheArrival:
    case EngineKind::MheNoArrival: {
      MovingHorizonSession session(cfg);
      for (size_t k = 0; k < epochs.size(); ++k) {
        const FixResult fix = session.push(epochs[k], corrections[k]);
        out.states.push_back(fix.state);
        out.statuses.push_back(fix.status);
        if (fix.status == FixStatus::Error) ++out.failures;
      }
      return out;
    }
  }
  throw std::logic_error("run_trace: unknown engine");
}

RunResult mhe_filtering(const std::vector<model::Epoch>& epochs,
                        const std::vector<CorrectionSet>& corrections,
                        const EngineConfig& cfg) {
  // Recursive form: per epoch one arrival-cost N=0 Gauss-Newton step (full
  // step, single iteration) from the predicted state, with the predicted
  // covariance advanced by the Riccati recursion. The horizon size parameter
  // deliberately does not appear.
  RunResult out;
  out.states.reserve(epochs.size());
  const GnOptions recursion_opts{1.0, 1, 0.0};

  bool active = false;
  StateVector x_pred = StateVector::Zero();
  CovarianceMatrix p_pred = CovarianceMatrix::Identity();
  StateVector x_filt = StateVector::Zero();
  double last_utc = 0.0;
  int last_index = -1;

  for (size_t k = 0; k < epochs.size(); ++k) {
    bool was_reset = false;
    if (active && epochs[k].timestamp - last_utc > cfg.gap_threshold) {
      active = false;
      was_reset = true;
    }
    try {
      if (!active) {
        x_pred = wls_solve(epochs[k], corrections[k]);
        p_pred = cfg.prior_p0 * CovarianceMatrix::Identity();
      } else {
        const double dt = epochs[k].timestamp - last_utc;
        const StateVector lin = x_pred;  // linearization of the previous update
        p_pred = model::riccati_update(
            p_pred, model::dynamics_matrix(dt),
            model::measurement_jacobian(lin, epochs[last_index]),
            model::process_covariance(dt, cfg.noise),
            model::measurement_covariance(epochs[last_index]));
        x_pred = model::propagate(x_filt, dt);
      }

      HorizonProblem step;
      step.epochs = {epochs[k]};
      step.corrections = {corrections[k]};
      step.prior_state = x_pred;
      step.prior_covariance = p_pred;
      step.noise = cfg.noise;
      step.warm_start = {x_pred};
      step.include_arrival_cost = true;
      const SolveReport rep = mhe_solve(step, recursion_opts);
      x_filt = rep.trajectory.front();

      out.states.push_back(x_filt);
      out.statuses.push_back(was_reset ? FixStatus::Reset : FixStatus::Ok);
      active = true;
      last_utc = epochs[k].timestamp;
      last_index = static_cast<int>(k);
    } catch (const std::exception&) {
      out.states.push_back(StateVector::Zero());
      out.statuses.push_back(FixStatus::Error);
      ++out.failures;
      active = false;
    }
  }
  return out;
}

}  // namespace rangekit::estimate
