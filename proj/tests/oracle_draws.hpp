#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "sotcal/optimisers.hpp"

namespace sotcal::testing {

struct OracleCase {
  DualDerivatives d;
  Characteristics ref;
  Bounds bounds;
};

/// Random reference, bounds and dual derivatives at the scales each variant
/// meets on its grids (scaled rates for the hybrid variants, variance for LSV).
inline OracleCase draw_case(Variant v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  OracleCase c;
  c.d.rate = -0.05 + 0.15 * u(rng);
  c.d.a1 = 0.5 * n(rng);
  c.d.b11 = 0.5 * n(rng);
  c.d.b12 = n(rng);
  if (v == Variant::Lsv) {
    c.bounds = {0.01, 1.0, 1e-6, 1.0};
    const double xi = 0.1 + 0.4 * u(rng), var = 0.02 + 0.6 * u(rng), rho = -0.9 + 1.8 * u(rng);
    c.ref.beta11 = var;
    c.ref.beta22 = xi * xi * var;
    c.ref.beta12 = rho * xi * var;
    c.ref.alpha2 = 1.5 * (0.07 - var);
    c.d.b12 = 0.05 * n(rng);
    c.d.rate = 0.0;
  } else {
    c.bounds = {0.05, 1.0, 8.0, 32.0};
    c.ref.beta11 = 0.08 + 0.85 * u(rng);
    c.ref.beta22 = v == Variant::Joint ? 9.0 + 22.0 * u(rng) : 4.0 + 21.0 * u(rng);
    const double rho = -0.9 + 1.8 * u(rng);
    c.ref.beta12 = rho * std::sqrt(c.ref.beta11 * c.ref.beta22);
    c.ref.alpha2 = 5.0 * n(rng);
  }
  c.ref.alpha1 = c.d.rate - 0.5 * c.ref.beta11;
  if (v == Variant::Joint) {
    c.d.a2 = 5.0 * n(rng);
    c.d.b22 = 10.0 * n(rng);
  }
  return c;
}

inline double max_component_deviation(const Characteristics& a, const Characteristics& b) {
  return std::max({std::abs(a.alpha1 - b.alpha1), std::abs(a.alpha2 - b.alpha2), std::abs(a.beta11 - b.beta11),
                   std::abs(a.beta12 - b.beta12), std::abs(a.beta22 - b.beta22)});
}

struct OracleReport {
  std::size_t accepted = 0;
  std::size_t drawn = 0;
  double max_deviation = 0.0;
};

/// Closed form versus brute force on `count` draws whose closed-form optimum is
/// strictly inside the correlation band.
inline OracleReport oracle_sweep(Variant v, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  OracleReport rep;
  while (rep.accepted < count) {
    ++rep.drawn;
    const auto c = draw_case(v, rng);
    const auto closed = optimal_control(v, c.d, c.ref, c.bounds);
    if (!closed.strict_interior) continue;
    const auto brute = lf_bruteforce(v, c.d, c.ref, c.bounds);
    rep.max_deviation = std::max(rep.max_deviation, max_component_deviation(closed.c, brute));
    ++rep.accepted;
  }
  return rep;
}

}  // namespace sotcal::testing
