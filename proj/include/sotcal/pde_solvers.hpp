#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sotcal/grid.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal {

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class MassLeakError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Frozen coefficients of L = alpha.grad + beta:hess/2 - rate on one step.
/// `rate` is the unscaled discount rate per node.
struct LinearCoefficients {
  const SurfaceSlice& slice;
  std::span<const double> rate;
};

/// Backward-Euler stepper for (I - dt L) u = rhs on the interior nodes.
///
/// Boundary nodes are eliminated through the frozen-curvature relation
/// u_b = 2 u_b' - u_b'' + kappa_b, so only interior unknowns are solved.
/// The system is solved in defect-correction form from the initial guess
/// with BiCGSTAB (Jacobi preconditioned), falling back to a sparse LU.
class ImplicitStepper {
 public:
  explicit ImplicitStepper(const Grid& grid);
  ~ImplicitStepper();
  ImplicitStepper(ImplicitStepper&&) noexcept;
  ImplicitStepper& operator=(ImplicitStepper&&) noexcept;

  const Grid& grid() const { return grid_; }

  /// Assembles the matrix from node-wise coefficients. `alpha1` ... `rate`
  /// are full-grid arrays; only interior entries are read.
  void assemble(const LinearCoefficients& coeffs, double dt);
  void assemble(std::span<const double> alpha1, std::span<const double> alpha2,
                std::span<const double> beta11, std::span<const double> beta12,
                std::span<const double> beta22, std::span<const double> rate, double dt);

  /// Solves with `u` as the initial guess; on return every node of `u` is
  /// set (boundary nodes by the curvature relation).
  void solve(ScalarField& u, const ScalarField& rhs, std::span<const double> kappa);

  double relative_tolerance = 1e-10;
  double last_residual() const { return last_residual_; }
  long last_iterations() const { return last_iterations_; }
  std::size_t fallback_count() const { return fallbacks_; }

 private:
  struct Impl;
  Grid grid_;
  std::unique_ptr<Impl> impl_;
  double last_residual_ = 0.0;
  long last_iterations_ = 0;
  std::size_t fallbacks_ = 0;
};

/// Time stepping of the implicit pricer and the HJB sweep. A Crank-Nicolson
/// step is a backward-Euler half step x followed by u = 2x - u_next.
enum class TimeScheme { BackwardEuler, CrankNicolson };

std::string to_string(TimeScheme s);
TimeScheme time_scheme_from_string(const std::string& s);

/// One backward step of the linear problem with zero source.
ScalarField implicit_backward_step(const ScalarField& next, const LinearCoefficients& coeffs,
                                   double dt, const ScalarField& anchor);

/// Steps (0-based, counted from t = 0) at which the curvature anchor resets:
/// every calibrating maturity and the horizon.
std::vector<bool> anchor_resets(std::size_t n_steps, const std::vector<std::size_t>& maturity_steps);

/// Backward pricing with the time stepping used by the HJB solver, so that
/// prices are the exact derivative of the discrete dual value.
/// Returns psi(0, .) for every payoff; payoff i is inserted at maturity_steps[i].
std::vector<ScalarField> implicit_price_all(const ModelSurfaces& surfaces, std::span<const double> rate,
                                            const std::vector<ScalarField>& payoffs,
                                            const std::vector<std::size_t>& maturity_steps,
                                            const std::vector<bool>& resets,
                                            TimeScheme scheme = TimeScheme::CrankNicolson);

struct AdiOptions {
  double theta = 0.5;
  bool corrector = true;  // Craig-Sneyd corrector pass; false gives plain Douglas
};

/// Craig-Sneyd ADI: cross derivative explicit, one implicit tridiagonal sweep
/// per direction, plus one corrector pass. Returns psi(0, .).
ScalarField adi_forward_price(const ModelSurfaces& surfaces, std::span<const double> rate,
                              const ScalarField& payoff, std::size_t maturity_step,
                              const std::vector<bool>& resets, const AdiOptions& opts = {});

struct FokkerPlanckOptions {
  bool clip_negative = true;
  double leak_tolerance = 0.01;
  std::size_t store_every = 1;  // keep every k-th slice plus the requested ones
  TimeScheme time_scheme = TimeScheme::CrankNicolson;
  std::size_t rannacher_steps = 2;  // CN only: leading steps taken as two implicit half steps
};

struct DensityPath {
  std::vector<ScalarField> mass;   // node masses, index = step
  std::vector<bool> stored;        // whether mass[k] was kept
  std::size_t clipped_steps = 0;
  double clipped_mass = 0.0;
  double max_leak = 0.0;

  double total_mass(std::size_t step) const;
  /// Sum of payoff times node mass at a stored step.
  double expectation(const ScalarField& payoff, std::size_t step) const;
};

/// Finite-volume solve of the discounted forward equation
/// d_t m + div(alpha m - div(beta m)/2) + rate m = 0, zero flux at the edges,
/// started from a unit mass split bilinearly around (z0, y0).
DensityPath fokker_planck_forward(const ModelSurfaces& surfaces, std::span<const double> rate,
                                  double z0, double y0, std::size_t n_steps,
                                  const std::vector<std::size_t>& keep_steps = {},
                                  const FokkerPlanckOptions& opts = {});

}  // namespace sotcal
