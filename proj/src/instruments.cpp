#include "sotcal/instruments.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace sotcal {

namespace {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw PricingError(std::string(name) + " must be positive and finite");
  }
}

// Safeguarded Newton on a price that is increasing in vol.
template <class Price, class Vega>
double invert_price(double target, Price price, Vega vega, double guess) {
  double lo = 0.0;
  double hi = std::max(1.0, 2.0 * guess);
  for (int k = 0; k < 60 && price(hi) < target; ++k) hi *= 2.0;
  if (price(hi) < target) throw OutOfBandError("implied volatility above search range");
  double v = std::clamp(guess, 1e-6, hi);
  const double tol = 1e-13 * std::max(1.0, std::abs(target));
  for (int it = 0; it < 300; ++it) {
    const double f = price(v) - target;
    if (std::abs(f) < tol) return v;
    if (f > 0.0) hi = v; else lo = v;
    const double d = vega(v);
    double next = (d > 0.0) ? v - f / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo < 1e-16 * std::max(1.0, hi)) return next;
    v = next;
  }
  return v;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(InstrumentKind kind) {
  return kind == InstrumentKind::EquityCall ? "call" : "cap";
}

InstrumentKind instrument_kind_from_string(const std::string& s) {
  const auto k = lower(trim(s));
  if (k == "call") return InstrumentKind::EquityCall;
  if (k == "cap") return InstrumentKind::RateCap;
  throw std::invalid_argument("unknown instrument kind '" + s + "'");
}

void QuoteSet::validate() const {
  if (instruments.empty()) throw QuoteError("quote set is empty", 0);
  if (!(rate_scale > 0.0)) throw QuoteError("rate scale must be positive", 0);
  for (std::size_t i = 0; i < instruments.size(); ++i) {
    const auto& q = instruments[i];
    auto fail = [&](const std::string& why) {
      throw QuoteError("instrument " + std::to_string(i) + ": " + why, i);
    };
    if (!(q.maturity_days > 0.0)) fail("maturity must be positive");
    if (q.kind == InstrumentKind::EquityCall && !(q.strike > 0.0)) fail("call strike must be positive");
    if (!(q.notional > 0.0)) fail("notional must be positive");
    if (!(q.market_price >= 0.0)) fail("price must be non-negative");
    if (i > 0 && q.maturity_days < instruments[i - 1].maturity_days) fail("maturities must be sorted");
  }
}

std::vector<double> QuoteSet::scaled_prices() const {
  std::vector<double> u;
  u.reserve(instruments.size());
  for (const auto& q : instruments) u.push_back(q.scaled_price());
  return u;
}

double payoff(const Instrument& instr, double z, double r_scaled, double rate_scale) {
  if (instr.kind == InstrumentKind::EquityCall) return std::max(std::exp(z) - instr.strike, 0.0);
  return instr.notional * instr.maturity() * std::max(r_scaled / rate_scale - instr.strike, 0.0);
}

double cell_average_payoff(const Instrument& instr, double z, double r_scaled, double hz, double hr,
                           double rate_scale) {
  if (instr.kind == InstrumentKind::EquityCall) {
    if (!(hz > 0)) return payoff(instr, z, r_scaled, rate_scale);
    const double hi = z + 0.5 * hz;
    const double k = std::log(instr.strike);
    if (hi <= k) return 0.0;
    const double a = std::max(z - 0.5 * hz, k);
    return (std::exp(hi) - std::exp(a) - instr.strike * (hi - a)) / hz;
  }
  if (!(hr > 0)) return payoff(instr, z, r_scaled, rate_scale);
  const double hi = r_scaled + 0.5 * hr;
  const double k = instr.strike * rate_scale;
  if (hi <= k) return 0.0;
  const double a = std::max(r_scaled - 0.5 * hr, k);
  // integral of (y/R - K) over [a, hi], per unit length
  const double mean = ((hi * hi - a * a) / (2.0 * rate_scale) - instr.strike * (hi - a)) / hr;
  return instr.notional * instr.maturity() * mean;
}

ScalarField payoff_field(const Instrument& instr, const Grid& grid, double rate_scale, PayoffSampling sampling) {
  ScalarField g(grid);
  const bool avg = sampling == PayoffSampling::CellAverage;
  for (std::size_t j = 0; j < grid.nr; ++j) {
    for (std::size_t i = 0; i < grid.nz; ++i) {
      g(i, j) = avg ? cell_average_payoff(instr, grid.z(i), grid.r(j), grid.hz(), grid.hr(), rate_scale)
                    : payoff(instr, grid.z(i), grid.r(j), rate_scale);
    }
  }
  return g;
}

ScalarField scaled_payoff_field(const Instrument& instr, const Grid& grid, double rate_scale,
                                PayoffSampling sampling) {
  auto g = payoff_field(instr, grid, rate_scale, sampling);
  g *= 1.0 / instr.vega_weight;
  return g;
}

double bs_price(double forward, double strike, double maturity, double vol, double discount) {
  require_positive(forward, "forward");
  require_positive(strike, "strike");
  require_positive(maturity, "maturity");
  require_positive(vol, "volatility");
  require_positive(discount, "discount factor");
  const double sd = vol * std::sqrt(maturity);
  const double d1 = std::log(forward / strike) / sd + 0.5 * sd;
  return discount * (forward * norm_cdf(d1) - strike * norm_cdf(d1 - sd));
}

double bs_vega(double forward, double strike, double maturity, double vol, double discount) {
  require_positive(forward, "forward");
  require_positive(strike, "strike");
  require_positive(maturity, "maturity");
  require_positive(vol, "volatility");
  require_positive(discount, "discount factor");
  const double sd = vol * std::sqrt(maturity);
  const double d1 = std::log(forward / strike) / sd + 0.5 * sd;
  return discount * forward * norm_pdf(d1) * std::sqrt(maturity);
}

double bs_implied_vol(double price, double forward, double strike, double maturity,
                      double discount) {
  require_positive(forward, "forward");
  require_positive(strike, "strike");
  require_positive(maturity, "maturity");
  require_positive(discount, "discount factor");
  const double lower = discount * std::max(forward - strike, 0.0);
  const double upper = discount * forward;
  if (!(price > lower) || !(price < upper)) {
    std::ostringstream msg;
    msg << "price " << price << " outside the no-arbitrage band (" << lower << ", " << upper << ")";
    throw OutOfBandError(msg.str());
  }
  const double guess = std::sqrt(2.0 * std::numbers::pi / maturity) * price / upper;
  return invert_price(
      price, [&](double v) { return v > 0.0 ? bs_price(forward, strike, maturity, v, discount) : lower; },
      [&](double v) { return v > 0.0 ? bs_vega(forward, strike, maturity, v, discount) : 0.0; },
      std::max(guess, 0.05));
}

double normal_price(double forward, double strike, double maturity, double vol, double discount) {
  require_positive(maturity, "maturity");
  require_positive(vol, "volatility");
  require_positive(discount, "discount factor");
  const double sd = vol * std::sqrt(maturity);
  const double d = (forward - strike) / sd;
  return discount * ((forward - strike) * norm_cdf(d) + sd * norm_pdf(d));
}

double normal_vega(double forward, double strike, double maturity, double vol, double discount) {
  require_positive(maturity, "maturity");
  require_positive(vol, "volatility");
  require_positive(discount, "discount factor");
  const double sd = vol * std::sqrt(maturity);
  return discount * std::sqrt(maturity) * norm_pdf((forward - strike) / sd);
}

double normal_implied_vol(double price, double forward, double strike, double maturity,
                          double discount) {
  require_positive(maturity, "maturity");
  require_positive(discount, "discount factor");
  const double lower = discount * std::max(forward - strike, 0.0);
  if (!(price > lower) || !std::isfinite(price)) {
    std::ostringstream msg;
    msg << "price " << price << " at or below intrinsic value " << lower;
    throw OutOfBandError(msg.str());
  }
  const double guess = price / (discount * std::sqrt(maturity) * 0.3989422804014327);
  return invert_price(
      price,
      [&](double v) { return v > 0.0 ? normal_price(forward, strike, maturity, v, discount) : lower; },
      [&](double v) { return v > 0.0 ? normal_vega(forward, strike, maturity, v, discount) : 0.0; },
      guess);
}

namespace {

struct Quoting {
  double forward;
  double discount;
  double accrual;  // notional * maturity for caps, 1 for calls
};

double quote_time(const Instrument& instr, const QuoteConventions& conv) {
  if (!(conv.year_days > 0.0)) throw std::invalid_argument("year_days must be positive");
  return instr.maturity_days / conv.year_days;
}

Quoting quoting(const Instrument& instr, const QuoteConventions& conv) {
  const double t = quote_time(instr, conv);
  const double discount = std::exp(-conv.short_rate * t);
  if (instr.kind == InstrumentKind::EquityCall) return {conv.spot / discount, discount, 1.0};
  return {conv.short_rate, discount, instr.notional * instr.maturity()};
}

}  // namespace

double implied_vol(const Instrument& instr, double price, const QuoteConventions& conv) {
  const auto q = quoting(instr, conv);
  const double t = quote_time(instr, conv);
  if (instr.kind == InstrumentKind::RateCap && conv.cap_model == CapVolModel::Normal) {
    return normal_implied_vol(price / q.accrual, q.forward, instr.strike, t, q.discount);
  }
  return bs_implied_vol(price / q.accrual, q.forward, instr.strike, t, q.discount);
}

double instrument_vega(const Instrument& instr, double vol, const QuoteConventions& conv) {
  const auto q = quoting(instr, conv);
  const double t = quote_time(instr, conv);
  if (instr.kind == InstrumentKind::RateCap && conv.cap_model == CapVolModel::Normal) {
    return q.accrual * normal_vega(q.forward, instr.strike, t, vol, q.discount);
  }
  return q.accrual * bs_vega(q.forward, instr.strike, t, vol, q.discount);
}

QuoteSet prepare_quotes(QuoteSet raw, const QuoteConventions& conv) {
  raw.validate();
  for (std::size_t i = 0; i < raw.instruments.size(); ++i) {
    auto& q = raw.instruments[i];
    auto reject = [&](const std::string& why) {
      throw QuoteError("instrument " + std::to_string(i) + " rejected: " + why, i);
    };
    if (!q.market_iv) {
      try {
        q.market_iv = implied_vol(q, q.market_price, conv);
      } catch (const std::exception& e) {
        reject(std::string("no implied volatility (") + e.what() + ")");
      }
    }
    if (conv.unit_weights) {
      q.vega_weight = 1.0;
      continue;
    }
    double vega = 0.0;
    try {
      vega = instrument_vega(q, *q.market_iv, conv);
    } catch (const std::exception& e) {
      reject(std::string("vega undefined (") + e.what() + ")");
    }
    if (!(vega > 0.0) || !std::isfinite(vega)) reject("zero vega");
    q.vega_weight = vega;
  }
  return raw;
}

QuoteSet read_instruments(std::istream& in, double rate_scale) {
  QuoteSet quotes;
  quotes.rate_scale = rate_scale;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(t);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!t.empty() && t.back() == ',') cells.emplace_back();
    if (!header_seen) {
      const std::vector<std::string> expected{"kind", "maturity_days", "strike", "notional", "price", "iv"};
      for (auto& c : cells) c = lower(c);
      if (cells != expected) {
        throw std::invalid_argument("instrument file header must be kind,maturity_days,strike,notional,price,iv");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 6) {
      throw std::invalid_argument("instrument file line " + std::to_string(line_no) + ": expected 6 columns");
    }
    try {
      Instrument q;
      q.kind = instrument_kind_from_string(cells[0]);
      q.maturity_days = std::stod(cells[1]);
      q.strike = std::stod(cells[2]);
      q.notional = cells[3].empty() ? 1.0 : std::stod(cells[3]);
      q.market_price = std::stod(cells[4]);
      if (!cells[5].empty()) q.market_iv = std::stod(cells[5]);
      quotes.instruments.push_back(q);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("instrument file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header_seen) throw std::invalid_argument("instrument file is empty");
  std::stable_sort(quotes.instruments.begin(), quotes.instruments.end(),
                   [](const Instrument& a, const Instrument& b) { return a.maturity_days < b.maturity_days; });
  quotes.validate();
  return quotes;
}

QuoteSet read_instruments_file(const std::string& path, double rate_scale) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open instrument file " + path);
  return read_instruments(in, rate_scale);
}

void write_instruments(std::ostream& out, const QuoteSet& quotes) {
  out << "kind,maturity_days,strike,notional,price,iv\n";
  out << std::setprecision(17);
  for (const auto& q : quotes.instruments) {
    out << to_string(q.kind) << ',' << q.maturity_days << ',' << q.strike << ',' << q.notional << ','
        << q.market_price << ',';
    if (q.market_iv) out << *q.market_iv;
    out << '\n';
  }
}

}  // namespace sotcal
