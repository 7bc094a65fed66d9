#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sotcal/grid.hpp"
#include "sotcal/instruments.hpp"
#include "sotcal/optimisers.hpp"
#include "sotcal/pde_solvers.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal {

class PolicyIterationError : public std::runtime_error {
 public:
  PolicyIterationError(const std::string& what, std::size_t step, double last_change)
      : std::runtime_error(what), step_(step), last_change_(last_change) {}
  std::size_t step() const noexcept { return step_; }
  double last_change() const noexcept { return last_change_; }

 private:
  std::size_t step_;
  double last_change_;
};

/// Everything the backward HJB sweep needs apart from the multipliers.
struct DualProblem {
  StateSpace state;  // grid.n_steps is the last maturity
  Variant variant = Variant::Joint;
  Bounds bounds;
  double barrier_power = kDefaultBarrierPower;
  ModelSurfaces reference;  // for Sequential, beta12 holds the pinned value
  std::vector<ScalarField> payoffs;  // vega-scaled payoffs
  std::vector<std::size_t> maturity_steps;
  std::vector<double> targets;       // vega-scaled market prices
  std::vector<double> rate;          // unscaled discount rate per node
  std::vector<bool> resets;          // curvature anchor resets per step
  TimeScheme time_scheme = TimeScheme::CrankNicolson;

  std::size_t size() const { return payoffs.size(); }
  std::size_t n_steps() const { return state.grid.n_steps; }
  void validate() const;
};

/// Step index of a maturity; throws when it is not a whole number of steps.
std::size_t maturity_step(double maturity_days, double dt_days);

/// Builds the problem from prepared quotes. `state.grid.n_steps` is replaced
/// by the last maturity step. The reference must cover that many steps.
DualProblem make_dual_problem(StateSpace state, Variant variant, const Bounds& bounds,
                              ModelSurfaces reference, const QuoteSet& quotes,
                              double barrier_power = kDefaultBarrierPower);

struct HjbOptions {
  double tolerance = 1e-12;          // sup-norm change between policy iterates
  std::size_t max_inner_iterations = 200;
  bool store_phi = false;            // keep phi on every step
  bool boundary_controls = true;     // also evaluate the optimiser on boundary nodes
};

/// phi + lambda * payoff, the maturity jump.
ScalarField add_jump(const ScalarField& phi, double lambda, const ScalarField& scaled_payoff);

struct PolicyStep {
  ScalarField phi;
  SurfaceSlice controls;
  std::size_t iterations = 0;
  std::size_t strict_violations = 0;
  bool monotone = true;              // change decreased after the first iterate
  std::vector<double> changes;
};

/// Policy iteration for one backward step from `phi_next` (which already
/// includes any jump at t_{k+1}). `phi_guess` seeds the iteration.
/// Under Crank-Nicolson the iteration runs on the backward-Euler half step
/// x = (phi_k + phi_{k+1}) / 2, the controls are those of x, and the
/// returned phi is 2x - phi_next. Changes are reported on phi.
PolicyStep policy_iteration_step(const DualProblem& problem, ImplicitStepper& stepper,
                                 std::size_t step, const ScalarField& phi_next,
                                 const ScalarField& phi_guess, std::span<const double> kappa,
                                 const HjbOptions& opts);

struct HjbSolution {
  ScalarField phi0;
  std::vector<ScalarField> phi;        // phi at t_k before the jump at t_k (if stored)
  ModelSurfaces controls;              // slice k used on step k
  std::vector<std::size_t> inner_iterations;
  std::size_t strict_violations = 0;
  std::size_t monotonicity_violations = 0;
  double value = 0.0;                  // phi(0, x0)
};

HjbSolution hjb_solve(const DualProblem& problem, const std::vector<double>& lambda,
                      const HjbOptions& opts = {});

/// Optimal controls on every node of a slice from phi (one-sided derivatives
/// on the boundary).
SurfaceSlice controls_from_phi(const DualProblem& problem, std::size_t step, const ScalarField& phi,
                               std::size_t* strict_violations = nullptr);

}  // namespace sotcal
