#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sotcal/hjb.hpp"
#include "sotcal/instruments.hpp"
#include "sotcal/optimisers.hpp"
#include "sotcal/reference_models.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal {

/// How model prices entering the dual gradient are computed.
/// Implicit reuses the HJB time stepping and is the exact derivative of the
/// discrete dual value; Adi is the independent splitting scheme.
enum class GradientBackend { Implicit, Adi };

std::string to_string(GradientBackend b);
GradientBackend gradient_backend_from_string(const std::string& s);

/// Pinned correlation term of the sequential variant.
/// from_reference: beta12 is the reference's own beta12 at every node.
/// Otherwise beta12 = rho_ref * sigma_r^2 (unscaled), i.e. rho_ref * beta22 / R in grid units.
struct CorrelationPin {
  bool from_reference = false;
  double rho_ref = 0.0;
  bool operator==(const CorrelationPin&) const = default;
};

struct CalibrationConfig {
  Variant variant = Variant::Joint;
  double eps1 = 1e-4;  // dual gradient sup-norm (vega-scaled, so IV units)
  double eps2 = 1e-12; // policy iteration tolerance
  Bounds bounds;
  double barrier_power = kDefaultBarrierPower;
  std::optional<CorrelationPin> rho_ref;  // required by Sequential

  std::size_t max_evaluations = 150;  // L-BFGS budget per epoch
  std::size_t max_iterations = 1000;
  std::size_t max_inner_iterations = 200;
  double initial_step = 1.0;

  std::size_t smoothing_iterations = 0;      // reference-model iterations after the first run
  std::size_t min_smoothing_iterations = 0;  // run at least this many even if calibrated
  double smoothing_radius = 2.0;             // truncated Gaussian radius in cells
  bool warm_start = true;                    // keep lambda across epochs

  GradientBackend backend = GradientBackend::Implicit;
  TimeScheme time_scheme = TimeScheme::CrankNicolson;
  bool verbose = false;

  void validate() const;
  bool operator==(const CalibrationConfig&) const = default;
};

/// Value, gradient and optimal controls of the dual at one lambda.
struct DualEvaluation {
  std::vector<double> lambda;
  double value = 0.0;                       // L(lambda) = lambda.u - phi(0, x0)
  std::vector<double> gradient;             // u_i - model price_i, vega-scaled
  std::vector<double> model_prices_scaled;
  HjbSolution hjb;
};

/// L(lambda) from a solved HJB.
double dual_objective(const DualProblem& problem, const std::vector<double>& lambda, const HjbSolution& sol);

/// Vega-scaled model prices of every instrument under `surfaces`.
std::vector<double> model_prices_scaled(const DualProblem& problem, const ModelSurfaces& surfaces,
                                        GradientBackend backend = GradientBackend::Implicit);

/// Gradient of L: scaled market price minus scaled model price under the
/// optimal controls of `sol`.
std::vector<double> dual_gradient(const DualProblem& problem, const HjbSolution& sol,
                                  GradientBackend backend = GradientBackend::Implicit);

DualEvaluation evaluate_dual(const DualProblem& problem, const std::vector<double>& lambda,
                             const HjbOptions& hjb_opts = {},
                             GradientBackend backend = GradientBackend::Implicit);

/// Reference surfaces prepared for a variant: expanded over the horizon and,
/// for Sequential, with beta12 set from the correlation pin. Throws when the
/// sequential barrier has an empty domain (beta11 <= beta12^2 / beta22).
ModelSurfaces prepare_reference(const CalibrationConfig& cfg, const ModelSurfaces& reference,
                                const StateSpace& state);

/// Truncated Gaussian (sigma = radius / 2, cut at `radius` cells), renormalised
/// near the edges so constants are preserved.
ScalarField gaussian_smooth(const ScalarField& field, double radius);

/// Smooths every slice of `controls` and projects back onto the admissible
/// set of the variant. Pinned terms are copied from `pinned`.
ModelSurfaces smooth_reference_iteration(const ModelSurfaces& controls, const ModelSurfaces& pinned,
                                         const DualProblem& problem, double radius);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::size_t policy_iterations = 0;  // inner iterations summed over every HJB solve
  double gradient_norm = 0.0;
  double dual_value = 0.0;
  bool converged = false;
  std::string status;
  double seconds = 0.0;
};

struct CalibrationResult {
  Variant variant = Variant::Joint;
  std::vector<double> lambda;
  ModelSurfaces surfaces;               // controls of the final, unsmoothed run
  bool surfaces_smoothed = false;       // always false for a returned result
  std::vector<double> model_prices;     // currency, from the gradient backend
  std::vector<double> model_ivs;        // NaN where the price is outside the band
  std::vector<double> market_prices;
  std::vector<double> market_ivs;
  std::vector<double> gradient;         // vega-scaled
  std::vector<double> gradient_history; // sup-norm per accepted iterate over all epochs
  double gradient_norm = 0.0;
  double dual_value = 0.0;
  bool calibrated = false;
  std::size_t strict_violations = 0;
  std::size_t monotonicity_violations = 0;
  std::size_t policy_iterations = 0;    // total over all epochs; a machine-independent cost measure
  double wall_seconds = 0.0;
  std::vector<EpochLog> epochs;
  std::string message;
};

/// Maximises L over lambda with L-BFGS from lambda = 0 and, when configured,
/// reruns with smoothed outputs as the new reference.
CalibrationResult calibrate(const CalibrationConfig& cfg, const QuoteSet& quotes, const ModelSurfaces& reference,
                            const StateSpace& state, const QuoteConventions& conv);
CalibrationResult calibrate(const CalibrationConfig& cfg, const QuoteSet& quotes, const ReferenceModel& reference,
                            const StateSpace& state, const QuoteConventions& conv);

/// The state with grid.n_steps set to the last maturity of the quotes.
StateSpace state_for_quotes(StateSpace state, const QuoteSet& quotes);

}  // namespace sotcal
