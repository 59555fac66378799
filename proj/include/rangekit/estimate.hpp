#pragma once

#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rangekit/model.hpp"
#include "rangekit/trace.hpp"

// Forward localization engines: single-epoch WLS, EKF, filtering-based MHE
// and optimization-based MHE with/without the arrival cost, all sharing one
// Gauss-Newton core over a square-root (Cholesky-whitened) residual stack.

namespace rangekit::estimate {

using model::CovarianceMatrix;
using model::StateVector;

// Per-epoch pseudorange corrections, slot-indexed (zeros at invisible slots).
using CorrectionSet = std::array<double, model::kSvCount>;

inline CorrectionSet zero_corrections() { return CorrectionSet{}; }

// The N+1 epoch window the optimization-based MHE solves.
struct HorizonProblem {
  std::vector<model::Epoch> epochs;
  std::vector<CorrectionSet> corrections;
  StateVector prior_state = StateVector::Zero();
  CovarianceMatrix prior_covariance = CovarianceMatrix::Identity();
  model::NoiseModel noise;
  std::vector<StateVector> warm_start;
  bool include_arrival_cost = true;

  int horizon() const { return static_cast<int>(epochs.size()) - 1; }
};

struct GnOptions {
  double step_size = 0.5;
  int max_iterations = 10;
  double step_tolerance = 1e-6;
};

struct SolveReport {
  std::vector<StateVector> trajectory;
  int iterations = 0;
  double final_objective = 0.0;
  bool converged = false;
  double final_step_norm = std::numeric_limits<double>::infinity();
  std::vector<double> objective_history;  // objective before iterating, then per step
  int objective_increases = 0;            // damped steps applied despite an increase
};

// Whitened residual blocks in window order: arrival (optional), transitions
// x N, measurements x (N+1). Weights are Cholesky factors of the inverse
// covariances, folded into the stored residuals/jacobians.
struct ResidualStack {
  int n_states = 0;
  bool has_arrival = false;

  Eigen::Matrix<double, 8, 1> arrival_r;
  Eigen::Matrix<double, 8, 8> arrival_j;                 // d r_arr / d x_0

  std::vector<Eigen::Matrix<double, 8, 1>> trans_r;      // j = 0..N-1
  std::vector<Eigen::Matrix<double, 8, 8>> trans_j_lo;   // d r_j / d x_j
  std::vector<Eigen::Matrix<double, 8, 8>> trans_j_hi;   // d r_j / d x_{j+1}

  std::vector<Eigen::VectorXd> meas_r;                   // j = 0..N, 2M_j rows
  std::vector<Eigen::MatrixXd> meas_j;                   // d r_j / d x_j
  std::vector<Eigen::VectorXd> meas_sigma;               // interleaved sigmas

  double objective() const;
  int total_rows() const;
  Eigen::VectorXd stacked_residual() const;
  Eigen::MatrixXd dense_jacobian() const;  // reference path for tests/benchmarks
};

ResidualStack build_horizon_costs(const HorizonProblem& p,
                                  const std::vector<StateVector>& trajectory);
inline ResidualStack build_horizon_costs(const HorizonProblem& p) {
  return build_horizon_costs(p, p.warm_start);
}

// Normal equations of the stack in block-tridiagonal form (diag[i] is the
// 8x8 block for state i, upper[i] couples states i and i+1).
struct NormalEquations {
  std::vector<Eigen::Matrix<double, 8, 8>> diag;
  std::vector<Eigen::Matrix<double, 8, 8>> upper;
  Eigen::VectorXd gradient;  // J^T r, stacked
};
NormalEquations assemble_normal_equations(const ResidualStack& stack);

// Cholesky factorization of a symmetric positive-definite block-tridiagonal
// matrix; throws model::SolverError with pivot diagnostics when singular.
class BlockTridiagonalCholesky {
 public:
  BlockTridiagonalCholesky(const std::vector<Eigen::Matrix<double, 8, 8>>& diag,
                           const std::vector<Eigen::Matrix<double, 8, 8>>& upper);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

 private:
  std::vector<Eigen::Matrix<double, 8, 8>> chol_;  // lower-triangular diagonal blocks
  std::vector<Eigen::Matrix<double, 8, 8>> sub_;   // sub-diagonal blocks of L
};

using StackBuilder = std::function<ResidualStack(const std::vector<StateVector>&)>;

SolveReport gauss_newton(const StackBuilder& builder, std::vector<StateVector> warm_start,
                         const GnOptions& opts);

SolveReport mhe_solve(const HorizonProblem& p, const GnOptions& opts = GnOptions{});

// Single-epoch weighted least squares: iterated Gauss-Newton on position and
// clock from corrected pseudoranges, then one linear solve for velocity and
// drift from the rates. Throws on <4 visible satellites or divergence.
StateVector wls_solve(const model::Epoch& epoch, const CorrectionSet& corrections,
                      const Eigen::Vector3d& init_position = Eigen::Vector3d::Zero(),
                      double init_clock = 0.0);

// Standard EKF measurement update at the given predicted state.
std::pair<StateVector, CovarianceMatrix> ekf_update(const StateVector& x_pred,
                                                    const CovarianceMatrix& p_pred,
                                                    const model::Epoch& epoch,
                                                    const CorrectionSet& corrections);

// Predict over dt, then update with the epoch.
std::pair<StateVector, CovarianceMatrix> ekf_step(const StateVector& x,
                                                  const CovarianceMatrix& p, double dt,
                                                  const model::NoiseModel& noise,
                                                  const model::Epoch& epoch,
                                                  const CorrectionSet& corrections);

enum class EngineKind { Wls, Ekf, MheFiltering, MheArrival, MheNoArrival };

struct EngineConfig {
  EngineKind kind = EngineKind::MheArrival;
  int horizon = 5;                  // N; the window holds N+1 epochs
  model::NoiseModel noise;
  GnOptions gn;                     // step 0.5, 10 iterations
  double gap_threshold = 10.0;      // s; strictly greater resets the window
  double prior_p0 = 0.05;           // P_0 diagonal
};

enum class FixStatus { Ok, Warmup, Reset, Error };

struct FixResult {
  StateVector state = StateVector::Zero();
  FixStatus status = FixStatus::Error;
  bool solver_converged = false;
  std::string message;
};

// One sliding-window estimation session. Owns the mutable ring state (epoch
// cache, Riccati-updated P ring, warm starts); one thread of control at a
// time. Shared by run_trace and the inference service so that online and
// offline fixes are identical.
class MovingHorizonSession {
 public:
  explicit MovingHorizonSession(EngineConfig cfg);

  FixResult push(const model::Epoch& epoch, const CorrectionSet& corrections);
  void reset();
  int cache_size() const { return static_cast<int>(epochs_.size()); }
  double last_timestamp() const { return last_utc_; }
  bool active() const { return bootstrapped_; }

 private:
  FixResult bootstrap(const model::Epoch& epoch, const CorrectionSet& corrections,
                      bool was_reset);
  FixResult solve_window(bool was_reset);

  EngineConfig cfg_;
  std::deque<model::Epoch> epochs_;
  std::deque<CorrectionSet> corrections_;
  std::deque<CovarianceMatrix> p_ring_;       // predicted covariance per cached epoch
  std::vector<StateVector> last_trajectory_;  // aligned with the cache
  std::deque<StateVector> head_history_;      // x̂_{j|j} per cached epoch (arrival priors)
  StateVector prior_state_ = StateVector::Zero();
  double last_utc_ = 0.0;
  bool bootstrapped_ = false;
};

struct RunResult {
  std::vector<StateVector> states;      // one per input epoch
  std::vector<FixStatus> statuses;
  int failures = 0;
};

// Slide an engine over a full trace. Per-horizon failures are recorded and
// the estimator re-bootstraps from WLS at the next epoch.
RunResult run_trace(const std::vector<model::Epoch>& epochs,
                    const std::vector<CorrectionSet>& corrections, const EngineConfig& cfg);

// Filtering-based MHE: recursive single-pass estimator (one N=0 arrival-cost
// Gauss-Newton step per epoch plus the Riccati covariance recursion). The
// nominal horizon size does not enter the recursion.
RunResult mhe_filtering(const std::vector<model::Epoch>& epochs,
                        const std::vector<CorrectionSet>& corrections, const EngineConfig& cfg);

}  // namespace rangekit::estimate
