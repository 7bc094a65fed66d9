#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sotcal/grid.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal {

class PricingError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Price outside the no-arbitrage band of the pricing formula.
class OutOfBandError : public PricingError {
 public:
  using PricingError::PricingError;
};

class QuoteError : public std::invalid_argument {
 public:
  QuoteError(const std::string& what, std::size_t index)
      : std::invalid_argument(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

enum class InstrumentKind { EquityCall, RateCap };

/// A calibrating option: a call on the equity or a cap on the short rate.
struct Instrument {
  InstrumentKind kind = InstrumentKind::EquityCall;
  double maturity_days = 0.0;
  double strike = 0.0;    // price units for calls, absolute rate for caps
  double notional = 1.0;  // 1 for calls
  double market_price = 0.0;
  std::optional<double> market_iv;
  double vega_weight = 1.0;

  double maturity() const { return maturity_days / 365.0; }
  /// Target price in vega units.
  double scaled_price() const { return market_price / vega_weight; }

  bool operator==(const Instrument&) const = default;
};

/// Ordered calibrating instruments plus the rate rescaling they are quoted against.
struct QuoteSet {
  std::vector<Instrument> instruments;
  double rate_scale = 100.0;

  std::size_t size() const { return instruments.size(); }
  void validate() const;
  std::vector<double> scaled_prices() const;

  bool operator==(const QuoteSet&) const = default;
};

/// Undiscounted payoff at log-price z and rescaled rate r_scaled.
double payoff(const Instrument& instr, double z, double r_scaled, double rate_scale);

/// CellAverage integrates the payoff over the node's cell in its own variable
/// (exact for the piecewise exponential/linear payoffs), which removes the
/// strike-position noise of sampling the kink. Pointwise samples the node.
enum class PayoffSampling { CellAverage, Pointwise };

/// Mean of the payoff over [z - hz/2, z + hz/2] x [r - hr/2, r + hr/2].
double cell_average_payoff(const Instrument& instr, double z, double r_scaled, double hz, double hr,
                           double rate_scale);

/// Payoff on every grid node. The truncated domain makes it bounded.
ScalarField payoff_field(const Instrument& instr, const Grid& grid, double rate_scale,
                         PayoffSampling sampling = PayoffSampling::CellAverage);

/// Payoff divided by the instrument's vega weight.
ScalarField scaled_payoff_field(const Instrument& instr, const Grid& grid, double rate_scale,
                                PayoffSampling sampling = PayoffSampling::CellAverage);

/// Black formula on the forward.
double bs_price(double forward, double strike, double maturity, double vol, double discount);
double bs_vega(double forward, double strike, double maturity, double vol, double discount);
double bs_implied_vol(double price, double forward, double strike, double maturity,
                      double discount);

/// Bachelier (normal) formula on the forward, per unit notional and accrual.
double normal_price(double forward, double strike, double maturity, double vol, double discount);
double normal_vega(double forward, double strike, double maturity, double vol, double discount);
double normal_implied_vol(double price, double forward, double strike, double maturity,
                          double discount);

enum class CapVolModel { Normal, Lognormal };

/// Deterministic quoting conventions used only for implied vols and vega weights.
struct QuoteConventions {
  double spot = 1.0;
  double short_rate = 0.0;  // unscaled r0
  CapVolModel cap_model = CapVolModel::Normal;
  bool unit_weights = false;
  double year_days = 365.0;  // day count of the quoting time to expiry
};

/// Model-independent implied volatility of a price for this instrument.
double implied_vol(const Instrument& instr, double price, const QuoteConventions& conv);

/// Vega (price change per unit of volatility) at volatility `vol`.
double instrument_vega(const Instrument& instr, double vol, const QuoteConventions& conv);

/// Sets market_iv (when absent) and the vega weight of every instrument.
/// Throws QuoteError naming the instrument whose vega is zero or undefined.
QuoteSet prepare_quotes(QuoteSet raw, const QuoteConventions& conv);

/// Reads the `kind,maturity_days,strike,notional,price,iv` file format.
/// Instruments are returned sorted by maturity (stable).
QuoteSet read_instruments(std::istream& in, double rate_scale);
QuoteSet read_instruments_file(const std::string& path, double rate_scale);
void write_instruments(std::ostream& out, const QuoteSet& quotes);

std::string to_string(InstrumentKind kind);
InstrumentKind instrument_kind_from_string(const std::string& s);

}  // namespace sotcal
