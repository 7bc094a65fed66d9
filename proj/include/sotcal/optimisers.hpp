#pragma once

#include <string>

#include "sotcal/surfaces.hpp"

namespace sotcal {

/// Calibration variants. They differ in which characteristics are free.
enum class Variant {
  Joint,           // alpha2, beta11, beta12, beta22 free
  Sequential,      // beta11 free under the barrier cost H; beta12, beta22 pinned
  FullSequential,  // beta11, beta12 free; alpha2, beta22 pinned to the reference
  Lsv              // as FullSequential over (log-price, variance) without rates
};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Variance bounds in grid units (beta22 carries the rate rescaling).
struct Bounds {
  double beta11_lo = 0.05;
  double beta11_hi = 1.0;
  double beta22_lo = 8.0;
  double beta22_hi = 32.0;

  void validate() const;
  bool operator==(const Bounds&) const = default;
};

/// The dual variables at one node: a = grad(phi), b = hess(phi) / 2, plus the
/// unscaled short rate that pins alpha1 = rate - beta11 / 2.
struct DualDerivatives {
  double a1 = 0.0;
  double a2 = 0.0;
  double b11 = 0.0;
  double b22 = 0.0;
  double b12 = 0.0;
  double rate = 0.0;

  static DualDerivatives from_phi(double phi_z, double phi_r, double phi_zz, double phi_rr,
                                  double phi_zr, double rate);
  void require_finite() const;
};

/// Exponent of the sequential barrier cost.
inline constexpr double kDefaultBarrierPower = 4.0;

struct OptimalControl {
  Characteristics c;
  bool strict_interior = true;
  double cost = 0.0;  // F at the optimum, the HJB source term
};

/// Squared distance with the off-diagonal counted twice; +inf outside the
/// joint admissible set (alpha1 pinned, variance bounds, positive semidefinite).
double cost_joint(const Characteristics& c, const Characteristics& ref, const Bounds& bounds,
                  double rate);

/// Barrier cost (p-1)u^{1+p} + (p+1)u^{1-p} - 2p with u = (x-s)/(xbar-s); +inf unless x, xbar > s.
double barrier_cost(double x, double xbar, double s, double p = kDefaultBarrierPower);

/// Cost of a variant; +inf outside its admissible set. For the sequential
/// variant the pinned beta12, beta22 are those of `ref`.
double variant_cost(Variant v, const Characteristics& c, const Characteristics& ref,
                    const Bounds& bounds, double rate, double p = kDefaultBarrierPower);

/// a.alpha + b:beta - F, the quantity maximised pointwise in the HJB.
double dual_bracket(Variant v, const DualDerivatives& d, const Characteristics& c,
                    const Characteristics& ref, const Bounds& bounds,
                    double p = kDefaultBarrierPower);

OptimalControl optimal_joint(const DualDerivatives& d, const Characteristics& ref, const Bounds& bounds);

/// Maximiser of beta11 * g - H(beta11, xbar, s) with g = b11 - a1 / 2,
/// xbar = ref.beta11 and s = ref.beta12^2 / ref.beta22.
/// Throws std::domain_error when xbar <= s.
double optimal_seq_beta11(const DualDerivatives& d, const Characteristics& ref,
                          double p = kDefaultBarrierPower);
OptimalControl optimal_seq(const DualDerivatives& d, const Characteristics& ref,
                           double p = kDefaultBarrierPower);

/// beta22 stays at ref.beta22 (sigma_r^2 scaled, or xi^2 v); beta12 is clamped to
/// +-sqrt(beta11 * beta22).
OptimalControl optimal_full_seq(const DualDerivatives& d, const Characteristics& ref, const Bounds& bounds);
OptimalControl optimal_lsv(const DualDerivatives& d, const Characteristics& ref, const Bounds& bounds);

OptimalControl optimal_control(Variant v, const DualDerivatives& d, const Characteristics& ref,
                               const Bounds& bounds, double p = kDefaultBarrierPower);

/// Brute-force maximiser of dual_bracket over the variant's admissible set:
/// a 61-point lattice per free variable with explicit PSD filtering, then
/// coordinate-wise golden-section polish. Slow; meant as a test oracle.
Characteristics lf_bruteforce(Variant v, const DualDerivatives& d, const Characteristics& ref,
                              const Bounds& bounds, double p = kDefaultBarrierPower);

}  // namespace sotcal
