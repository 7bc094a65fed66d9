#pragma once

#include <cmath>
#include <vector>

#include "sotcal/dual_calibration.hpp"
#include "sotcal/instruments.hpp"
#include "sotcal/reference_models.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal::testing {

inline constexpr double kSpot = 92.0;
inline constexpr double kShortRate = 0.025;

/// Log-price window of +-1.2 around the spot and rates in [-7.5%, 12.5%].
inline StateSpace hybrid_state(std::size_t n, std::size_t n_steps = 120) {
  StateSpace s;
  s.grid.z_min = std::log(kSpot) - 1.2;
  s.grid.z_max = std::log(kSpot) + 1.2;
  s.grid.r_min = -7.5;
  s.grid.r_max = 12.5;
  s.grid.nz = n;
  s.grid.nr = n;
  s.grid.dt = 1.0 / 365.0;
  s.grid.n_steps = n_steps;
  s.rate_scale = 100.0;
  s.z0 = std::log(kSpot);
  s.y0 = kShortRate * 100.0;
  return s;
}

/// (log-price, variance) lattice of the local-stochastic-volatility runs.
inline StateSpace lsv_state(std::size_t n, std::size_t n_steps = 120) {
  StateSpace s;
  s.grid.z_min = std::log(kSpot) - 1.2;
  s.grid.z_max = std::log(kSpot) + 1.2;
  s.grid.r_min = 0.02;
  s.grid.r_max = 0.62;
  s.grid.nz = n;
  s.grid.nr = n;
  s.grid.dt = 1.0 / 365.0;
  s.grid.n_steps = n_steps;
  s.rate_scale = 1.0;
  s.discounting = false;
  s.z0 = std::log(kSpot);
  s.y0 = 0.25;
  return s;
}

inline HullWhiteCevParams hw_generating() { return {0.6, 0.95, -0.4, 0.04, 0.05, kShortRate}; }
inline HullWhiteCevParams hw_reference() { return {0.9, 0.89, -0.2, 0.04, 0.05, kShortRate}; }
inline HestonParams heston_generating() { return {1.0, 0.05, 0.2, -0.4}; }
inline HestonParams heston_good() { return {1.5, 0.07, 0.15, -0.2}; }
inline HestonParams heston_bad() { return {2.0, 0.09, 0.3, 0.2}; }

inline QuoteConventions hybrid_conventions() {
  QuoteConventions c;
  c.spot = kSpot;
  c.short_rate = kShortRate;
  c.year_days = 360.0;
  return c;
}

inline QuoteConventions lsv_conventions() {
  QuoteConventions c;
  c.spot = kSpot;
  c.year_days = 360.0;
  return c;
}

inline QuoteSet call_lattice(const std::vector<double>& strikes, const std::vector<double>& maturities_days,
                             double rate_scale) {
  QuoteSet q;
  q.rate_scale = rate_scale;
  for (double t : maturities_days) {
    for (double k : strikes) {
      Instrument in;
      in.kind = InstrumentKind::EquityCall;
      in.maturity_days = t;
      in.strike = k;
      q.instruments.push_back(in);
    }
  }
  return q;
}

inline std::vector<double> table_strikes() { return {85, 92, 99, 106, 113, 120}; }

/// Quotes priced by `model` with the splitting scheme and prepared for calibration.
inline QuoteSet synthetic_quotes(const ReferenceModel& model, const StateSpace& state, QuoteSet raw,
                                 const QuoteConventions& conv) {
  const auto prices = price_instruments(model, state, raw, PricingScheme::Adi);
  for (std::size_t i = 0; i < prices.size(); ++i) raw.instruments[i].market_price = prices[i];
  return prepare_quotes(raw, conv);
}

}  // namespace sotcal::testing
