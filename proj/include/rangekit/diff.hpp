#pragma once

#include <functional>
#include <vector>

#include "rangekit/estimate.hpp"

// Reverse-mode differentiation through the MHE solve: given upstream
// gradients over the horizon trajectory, produce gradients with respect to
// the per-satellite pseudorange corrections. Implicit differentiation at the
// converged stationary point; the Gauss-Newton Hessian defines the adjoint
// system and the finite-difference oracle bounds the induced bias.

namespace rangekit::diff {

// dJ/dx̂ per horizon epoch.
using AdjointSeed = std::vector<model::StateVector>;

// dJ/dε̂ per (epoch, satellite slot); exactly zero at invisible slots.
using CorrectionGradient = std::vector<estimate::CorrectionSet>;

CorrectionGradient mhe_adjoint(const estimate::HorizonProblem& p,
                               const estimate::SolveReport& solution, const AdjointSeed& seed);

// Central differences of the full solve composed with the seed; the
// validation oracle for mhe_adjoint.
using HorizonSolver = std::function<estimate::SolveReport(const estimate::HorizonProblem&)>;
CorrectionGradient finite_diff_gradient(const HorizonSolver& solver,
                                        const estimate::HorizonProblem& p,
                                        const AdjointSeed& seed, double h);

// Evaluate dJ/dx̂ from a loss-gradient functional, then run the adjoint.
using LossGradient = std::function<AdjointSeed(const std::vector<model::StateVector>&)>;
CorrectionGradient chain_to_loss(const estimate::HorizonProblem& p,
                                 const estimate::SolveReport& solution,
                                 const LossGradient& loss_gradient);

}  // namespace rangekit::diff
