#include "rangekit/diff.hpp"

#include <stdexcept>

namespace rangekit::diff {

using estimate::CorrectionSet;
using model::StateVector;

CorrectionGradient mhe_adjoint(const estimate::HorizonProblem& p,
                               const estimate::SolveReport& solution, const AdjointSeed& seed) {
  const int n = static_cast<int>(p.epochs.size());
  if (static_cast<int>(seed.size()) != n || static_cast<int>(solution.trajectory.size()) != n) {
    throw std::invalid_argument("mhe_adjoint: seed/solution do not match the horizon");
  }
  if (!solution.converged) {
    throw model::SolverError("mhe_adjoint: solution is not converged; gradients would be biased");
  }

  // Stationarity J^T r = 0 at the solution; differentiate implicitly with the
  // Gauss-Newton Hessian H = J^T J:
  //   dx*/deps = -H^-1 J^T (dr/deps),   dJ/deps = seed . dx*/deps
  const estimate::ResidualStack stack = estimate::build_horizon_costs(p, solution.trajectory);
  const estimate::NormalEquations ne = estimate::assemble_normal_equations(stack);
  const estimate::BlockTridiagonalCholesky factor(ne.diag, ne.upper);  // throws if singular

  Eigen::VectorXd s(8 * n);
  for (int j = 0; j < n; ++j) s.segment<8>(8 * j) = seed[j];
  const Eigen::VectorXd lambda = factor.solve(s);

  // eps enters only the whitened pseudorange rows, through y - eps, with
  // coefficient -1/sigma. Rate rows never depend on eps.
  CorrectionGradient grad(n, estimate::zero_corrections());
  for (int j = 0; j < n; ++j) {
    const Eigen::Matrix<double, 8, 1> lam = lambda.segment<8>(8 * j);
    const Eigen::VectorXd jl = stack.meas_j[j] * lam;  // J̌ lambda at this epoch's rows
    const auto slots = p.epochs[j].visible_slots();
    for (size_t i = 0; i < slots.size(); ++i) {
      const int row = 2 * static_cast<int>(i);  // range row
      grad[j][slots[i]] = jl[row] / stack.meas_sigma[j][row];
    }
  }
  return grad;
}

CorrectionGradient finite_diff_gradient(const HorizonSolver& solver,
                                        const estimate::HorizonProblem& p,
                                        const AdjointSeed& seed, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be > 0");
  const int n = static_cast<int>(p.epochs.size());

  const auto composed = [&seed](const std::vector<StateVector>& traj) {
    double v = 0.0;
    for (size_t j = 0; j < traj.size(); ++j) v += seed[j].dot(traj[j]);
    return v;
  };

  CorrectionGradient grad(n, estimate::zero_corrections());
  estimate::HorizonProblem work = p;
  for (int j = 0; j < n; ++j) {
    for (int slot : p.epochs[j].visible_slots()) {
      const double base = p.corrections[j][slot];
      work.corrections[j][slot] = base + h;
      const double up = composed(solver(work).trajectory);
      work.corrections[j][slot] = base - h;
      const double down = composed(solver(work).trajectory);
      work.corrections[j][slot] = base;
      grad[j][slot] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

CorrectionGradient chain_to_loss(const estimate::HorizonProblem& p,
                                 const estimate::SolveReport& solution,
                                 const LossGradient& loss_gradient) {
  return mhe_adjoint(p, solution, loss_gradient(solution.trajectory));
}

}  // namespace rangekit::diff
