#include "sotcal/optimisers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace sotcal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); }

bool psd_ok(double b11, double b12, double b22) {
  return b11 >= 0.0 && b22 >= 0.0 && b12 * b12 <= b11 * b22 * (1.0 + 1e-12) + 1e-300;
}

double clamp_band(double x, double half_width, bool& strict) {
  strict = -half_width < x && x < half_width;
  return std::clamp(x, -half_width, half_width);
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Joint: return "joint";
    case Variant::Sequential: return "seq";
    case Variant::FullSequential: return "full-seq";
    case Variant::Lsv: return "lsv";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  if (s == "joint") return Variant::Joint;
  if (s == "seq" || s == "sequential") return Variant::Sequential;
  if (s == "full-seq" || s == "full_seq" || s == "full-sequential") return Variant::FullSequential;
  if (s == "lsv") return Variant::Lsv;
  throw std::invalid_argument("unknown variant '" + s + "' (expected joint, seq, full-seq or lsv)");
}

void Bounds::validate() const {
  if (!(beta11_lo > 0.0 && beta11_lo < beta11_hi) || !(beta22_lo > 0.0 && beta22_lo < beta22_hi) ||
      !std::isfinite(beta11_hi) || !std::isfinite(beta22_hi)) {
    throw std::invalid_argument("variance bounds need 0 < lower < upper for beta11 and beta22");
  }
}

DualDerivatives DualDerivatives::from_phi(double phi_z, double phi_r, double phi_zz, double phi_rr,
                                          double phi_zr, double rate) {
  return {phi_z, phi_r, 0.5 * phi_zz, 0.5 * phi_rr, 0.5 * phi_zr, rate};
}

void DualDerivatives::require_finite() const {
  if (!std::isfinite(a1) || !std::isfinite(a2) || !std::isfinite(b11) || !std::isfinite(b22) ||
      !std::isfinite(b12) || !std::isfinite(rate)) {
    throw std::domain_error("non-finite derivative passed to the optimiser");
  }
}

double cost_joint(const Characteristics& c, const Characteristics& ref, const Bounds& bounds,
                  double rate) {
  if (!close(c.alpha1, rate - 0.5 * c.beta11)) return kInf;
  if (c.beta11 < bounds.beta11_lo || c.beta11 > bounds.beta11_hi) return kInf;
  if (c.beta22 < bounds.beta22_lo || c.beta22 > bounds.beta22_hi) return kInf;
  if (!psd_ok(c.beta11, c.beta12, c.beta22)) return kInf;
  const double d1 = c.alpha1 - ref.alpha1;
  const double d2 = c.alpha2 - ref.alpha2;
  const double e11 = c.beta11 - ref.beta11;
  const double e12 = c.beta12 - ref.beta12;
  const double e22 = c.beta22 - ref.beta22;
  return d1 * d1 + d2 * d2 + e11 * e11 + 2.0 * e12 * e12 + e22 * e22;
}

double barrier_cost(double x, double xbar, double s, double p) {
  if (!(x > s) || !(xbar > s)) return kInf;
  const double u = (x - s) / (xbar - s);
  return (p - 1.0) * std::pow(u, 1.0 + p) + (p + 1.0) * std::pow(u, 1.0 - p) - 2.0 * p;
}

double variant_cost(Variant v, const Characteristics& c, const Characteristics& ref,
                    const Bounds& bounds, double rate, double p) {
  if (v == Variant::Joint) return cost_joint(c, ref, bounds, rate);
  if (!close(c.alpha1, rate - 0.5 * c.beta11) || !close(c.alpha2, ref.alpha2) ||
      !close(c.beta22, ref.beta22)) {
    return kInf;
  }
  if (v == Variant::Sequential) {
    if (!close(c.beta12, ref.beta12)) return kInf;
    return barrier_cost(c.beta11, ref.beta11, ref.beta12 * ref.beta12 / ref.beta22, p);
  }
  if (c.beta11 < bounds.beta11_lo || c.beta11 > bounds.beta11_hi) return kInf;
  if (!psd_ok(c.beta11, c.beta12, c.beta22)) return kInf;
  const double e11 = c.beta11 - ref.beta11;
  const double e12 = c.beta12 - ref.beta12;
  return 1.25 * e11 * e11 + 2.0 * e12 * e12;
}

double dual_bracket(Variant v, const DualDerivatives& d, const Characteristics& c,
                    const Characteristics& ref, const Bounds& bounds, double p) {
  const double cost = variant_cost(v, c, ref, bounds, d.rate, p);
  if (!std::isfinite(cost)) return -kInf;
  return d.a1 * c.alpha1 + d.a2 * c.alpha2 + d.b11 * c.beta11 + 2.0 * d.b12 * c.beta12 +
         d.b22 * c.beta22 - cost;
}

OptimalControl optimal_joint(const DualDerivatives& d, const Characteristics& ref, const Bounds& bounds) {
  d.require_finite();
  OptimalControl out;
  auto& c = out.c;
  c.beta11 = std::clamp(ref.beta11 + 0.2 * (2.0 * d.b11 - d.a1), bounds.beta11_lo, bounds.beta11_hi);
  c.beta22 = std::clamp(ref.beta22 + 0.5 * d.b22, bounds.beta22_lo, bounds.beta22_hi);
  c.beta12 = clamp_band(ref.beta12 + 0.5 * d.b12, std::sqrt(c.beta11 * c.beta22), out.strict_interior);
  c.alpha2 = ref.alpha2 + 0.5 * d.a2;
  c.alpha1 = d.rate - 0.5 * c.beta11;
  out.cost = cost_joint(c, ref, bounds, d.rate);
  return out;
}

double optimal_seq_beta11(const DualDerivatives& d, const Characteristics& ref, double p) {
  d.require_finite();
  if (!(ref.beta22 > 0.0)) throw std::domain_error("sequential variant needs a positive beta22");
  const double s = ref.beta12 * ref.beta12 / ref.beta22;
  const double span = ref.beta11 - s;
  if (!(span > 0.0)) {
    throw std::domain_error("sequential variant needs beta11 above beta12^2/beta22 in the reference");
  }
  // Stationarity: g = H'(x) = (p^2-1)(u^p - u^-p)/(xbar - s), solved for w = u^p.
  const double g = d.b11 - 0.5 * d.a1;
  const double c = g * span / (p * p - 1.0);
  const double root = std::sqrt(c * c + 4.0);
  const double w = c >= 0.0 ? 0.5 * (c + root) : 2.0 / (root - c);
  return s + span * std::pow(w, 1.0 / p);
}

OptimalControl optimal_seq(const DualDerivatives& d, const Characteristics& ref, double p) {
  OptimalControl out;
  auto& c = out.c;
  c.beta11 = optimal_seq_beta11(d, ref, p);
  c.beta12 = ref.beta12;
  c.beta22 = ref.beta22;
  c.alpha2 = ref.alpha2;
  c.alpha1 = d.rate - 0.5 * c.beta11;
  out.cost = barrier_cost(c.beta11, ref.beta11, ref.beta12 * ref.beta12 / ref.beta22, p);
  return out;
}

OptimalControl optimal_full_seq(const DualDerivatives& d, const Characteristics& ref, const Bounds& bounds) {
  d.require_finite();
  OptimalControl out;
  auto& c = out.c;
  c.beta11 = std::clamp(ref.beta11 + 0.2 * (2.0 * d.b11 - d.a1), bounds.beta11_lo, bounds.beta11_hi);
  c.beta22 = ref.beta22;
  c.beta12 = clamp_band(ref.beta12 + 0.5 * d.b12, std::sqrt(c.beta11 * std::max(c.beta22, 0.0)),
                        out.strict_interior);
  c.alpha2 = ref.alpha2;
  c.alpha1 = d.rate - 0.5 * c.beta11;
  const double e11 = c.beta11 - ref.beta11;
  const double e12 = c.beta12 - ref.beta12;
  out.cost = 1.25 * e11 * e11 + 2.0 * e12 * e12;
  return out;
}

OptimalControl optimal_lsv(const DualDerivatives& d, const Characteristics& ref, const Bounds& bounds) {
  return optimal_full_seq(d, ref, bounds);
}

OptimalControl optimal_control(Variant v, const DualDerivatives& d, const Characteristics& ref,
                               const Bounds& bounds, double p) {
  switch (v) {
    case Variant::Joint: return optimal_joint(d, ref, bounds);
    case Variant::Sequential: return optimal_seq(d, ref, p);
    case Variant::FullSequential: return optimal_full_seq(d, ref, bounds);
    case Variant::Lsv: return optimal_lsv(d, ref, bounds);
  }
  throw std::logic_error("unhandled variant");
}

// ---------------------------------------------------------------------------
// Brute-force oracle

namespace {

constexpr int kLattice = 61;

std::vector<double> lattice(double lo, double hi) {
  std::vector<double> v(kLattice);
  for (int k = 0; k < kLattice; ++k) v[k] = lo + (hi - lo) * k / (kLattice - 1);
  return v;
}

// Maximises a unimodal f on [lo, hi]; finishes with a parabolic step when it helps.
double golden_max(const std::function<double(double)>& f, double lo, double hi) {
  if (!(hi > lo)) return lo;
  const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - ratio * (b - a), x2 = a + ratio * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 200 && (b - a) > 1e-15 * std::max(1.0, std::abs(a) + std::abs(b)); ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + ratio * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - ratio * (b - a);
      f1 = f(x1);
    }
  }
  double best = f1 > f2 ? x1 : x2;
  double fbest = std::max(f1, f2);
  for (double x : {lo, hi}) {
    const double fx = f(x);
    if (fx > fbest) {
      best = x;
      fbest = fx;
    }
  }
  return best;
}

Characteristics assemble(const DualDerivatives& d, double alpha2,
                         double b11, double b12, double b22) {
  return {d.rate - 0.5 * b11, alpha2, b11, b12, b22};
}

}  // namespace

Characteristics lf_bruteforce(Variant v, const DualDerivatives& d, const Characteristics& ref,
                              const Bounds& bounds, double p) {
  d.require_finite();
  auto value = [&](const Characteristics& c) { return dual_bracket(v, d, c, ref, bounds, p); };

  if (v == Variant::Sequential) {
    const double s = ref.beta12 * ref.beta12 / ref.beta22;
    const double span = ref.beta11 - s;
    if (!(span > 0.0)) throw std::domain_error("sequential oracle needs beta11 above beta12^2/beta22");
    // Lattice in log u, u = (x - s) / (xbar - s).
    auto at = [&](double log_u) {
      return value(assemble(d, ref.alpha2, s + span * std::exp(log_u), ref.beta12, ref.beta22));
    };
    const auto grid = lattice(-9.0, 9.0);
    int best = 0;
    for (int k = 1; k < kLattice; ++k) {
      if (at(grid[k]) > at(grid[best])) best = k;
    }
    const double lo = grid[std::max(best - 1, 0)];
    const double hi = grid[std::min(best + 1, kLattice - 1)];
    const double lu = golden_max(at, lo, hi);
    return assemble(d, ref.alpha2, s + span * std::exp(lu), ref.beta12, ref.beta22);
  }

  const bool joint = v == Variant::Joint;
  double alpha2 = ref.alpha2;
  if (joint) {
    const double width = 2.0 * (1.0 + std::abs(d.a2));
    alpha2 = golden_max(
        [&](double a2) {
          return value(assemble(d, a2, ref.beta11, ref.beta12,
                                std::clamp(ref.beta22, bounds.beta22_lo, bounds.beta22_hi)));
        },
        ref.alpha2 - width, ref.alpha2 + width);
  }

  const double lo11 = bounds.beta11_lo, hi11 = bounds.beta11_hi;
  const double lo22 = joint ? bounds.beta22_lo : ref.beta22;
  const double hi22 = joint ? bounds.beta22_hi : ref.beta22;
  const double m12 = std::sqrt(hi11 * std::max(hi22, 0.0));

  double b11 = ref.beta11, b12 = 0.0, b22 = lo22;
  double best = -kInf;
  const auto g11 = lattice(lo11, hi11);
  const auto g12 = lattice(-m12, m12);
  const auto g22 = joint ? lattice(lo22, hi22) : std::vector<double>{ref.beta22};
  for (double x22 : g22) {
    for (double x11 : g11) {
      for (double x12 : g12) {
        if (x12 * x12 > x11 * x22) continue;  // PSD filter
        const double f = value(assemble(d, alpha2, x11, x12, x22));
        if (f > best) {
          best = f;
          b11 = x11;
          b12 = x12;
          b22 = x22;
        }
      }
    }
  }

  // Coordinate-wise polish inside the feasible slices.
  for (int sweep = 0; sweep < 500; ++sweep) {
    const double p11 = b11, p12 = b12, p22 = b22;
    const double floor11 = b22 > 0.0 ? std::max(lo11, b12 * b12 / b22) : lo11;
    b11 = golden_max([&](double x) { return value(assemble(d, alpha2, x, b12, b22)); },
                     std::min(floor11, hi11), hi11);
    if (joint) {
      const double floor22 = std::max(lo22, b12 * b12 / b11);
      b22 = golden_max([&](double x) { return value(assemble(d, alpha2, b11, b12, x)); },
                       std::min(floor22, hi22), hi22);
    }
    const double band = std::sqrt(b11 * b22);
    b12 = golden_max([&](double x) { return value(assemble(d, alpha2, b11, x, b22)); }, -band, band);
    if (std::abs(b11 - p11) + std::abs(b12 - p12) + std::abs(b22 - p22) < 1e-14) break;
  }
  return assemble(d, alpha2, b11, b12, b22);
}

}  // namespace sotcal
