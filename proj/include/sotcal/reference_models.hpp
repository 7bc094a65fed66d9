#pragma once

#include <json.hpp>

#include <string>
#include <variant>
#include <vector>

#include "sotcal/instruments.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal {

/// CEV log-price with a Vasicek short rate.
struct CevVasicekParams {
  double sigma = 0.4;
  double gamma = 0.9;
  double rho = -0.2;
  double sigma_r = 0.03;
  double a = 0.5;
  double b = 0.03;

  void validate() const;
  bool operator==(const CevVasicekParams&) const = default;
};

/// CEV log-price with a Hull-White short rate whose reversion level is
/// b(t) = a r0 + sigma_r^2 / (2a) (1 - exp(-2at)), all unscaled.
struct HullWhiteCevParams {
  double sigma = 0.6;
  double gamma = 0.95;
  double rho = -0.4;
  double sigma_r = 0.04;
  double a = 0.05;
  double r0 = 0.025;

  double b(double t) const;
  void validate() const;
  bool operator==(const HullWhiteCevParams&) const = default;
};

/// Heston over (log-price, variance); no rates.
struct HestonParams {
  double kappa = 1.0;
  double theta = 0.05;
  double xi = 0.2;
  double rho = -0.4;

  void validate() const;
  bool operator==(const HestonParams&) const = default;
};

/// A parametric family or an explicit surface set (used by the reference-model iteration).
using ReferenceModel = std::variant<CevVasicekParams, HullWhiteCevParams, HestonParams, ModelSurfaces>;

std::string family_name(const ReferenceModel& m);

Characteristics cev_vasicek_at(const CevVasicekParams& p, double z, double r_scaled, double rate_scale);
Characteristics hw_cev_at(const HullWhiteCevParams& p, double t, double z, double r_scaled, double rate_scale);
Characteristics heston_at(const HestonParams& p, double z, double v);

/// Time-homogeneous single slice.
ModelSurfaces characteristics_cev_vasicek(const CevVasicekParams& p, const StateSpace& state);
/// Slice at time t.
SurfaceSlice hw_cev_slice(const HullWhiteCevParams& p, const StateSpace& state, double t);
/// One slice per step of state.grid, slice k at t_k.
ModelSurfaces characteristics_hw_cev(const HullWhiteCevParams& p, const StateSpace& state);
ModelSurfaces characteristics_heston(const HestonParams& p, const StateSpace& state);

/// Surfaces of any reference model on the state's lattice.
ModelSurfaces build_surfaces(const ReferenceModel& m, const StateSpace& state);

enum class PricingScheme { Implicit, Adi };

/// Currency prices at the initial state. The lattice is extended to the last
/// maturity if needed; anchors reset at every maturity of the set.
std::vector<double> price_instruments(const ReferenceModel& model, StateSpace state, const QuoteSet& quotes,
                                      PricingScheme scheme = PricingScheme::Implicit);
std::vector<double> price_instruments(const ModelSurfaces& surfaces, const StateSpace& state,
                                      const QuoteSet& quotes, PricingScheme scheme = PricingScheme::Implicit);

/// Flat parameter vector in declaration order.
std::vector<double> to_vector(const ReferenceModel& m);
ReferenceModel with_vector(const ReferenceModel& like, const std::vector<double>& x);
std::vector<std::string> parameter_names(const ReferenceModel& m);

struct ParametricFitOptions {
  double gradient_tolerance = 1e-3;
  double relative_step = 1e-4;
  std::size_t max_iterations = 200;
  std::size_t max_evaluations = 400;
  std::vector<bool> free;  // empty: all parameters free
  bool vega_scaled = false;  // divide errors by the vega weights
  PricingScheme scheme = PricingScheme::Adi;
};

struct ParametricFit {
  ReferenceModel model;
  double objective = 0.0;  // mean squared price error
  bool converged = false;
  std::size_t iterations = 0;
  std::string warning;
  std::vector<double> prices;
};

/// Least squares on prices with central-difference gradients and
/// box-projected L-BFGS. Returns the best point found; `warning` is set when
/// the stopping rule was not met.
ParametricFit parametric_calibrate(const ReferenceModel& init, const QuoteSet& quotes, const StateSpace& state,
                                   const ParametricFitOptions& opts = {});

void to_json(nlohmann::json& j, const CevVasicekParams& p);
void from_json(const nlohmann::json& j, CevVasicekParams& p);
void to_json(nlohmann::json& j, const HullWhiteCevParams& p);
void from_json(const nlohmann::json& j, HullWhiteCevParams& p);
void to_json(nlohmann::json& j, const HestonParams& p);
void from_json(const nlohmann::json& j, HestonParams& p);

/// {"family": "cev-vasicek" | "hull-white-cev" | "heston", ...parameters}
nlohmann::json reference_to_json(const ReferenceModel& m);
ReferenceModel reference_from_json(const nlohmann::json& j);

}  // namespace sotcal
