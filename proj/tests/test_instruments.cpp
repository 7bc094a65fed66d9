#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sotcal/instruments.hpp"

using namespace sotcal;

namespace {

Instrument call(double maturity_days, double strike, double price = 0.0) {
  Instrument in;
  in.kind = InstrumentKind::EquityCall;
  in.maturity_days = maturity_days;
  in.strike = strike;
  in.market_price = price;
  return in;
}

Instrument cap(double maturity_days, double strike, double notional, double price = 0.0) {
  Instrument in;
  in.kind = InstrumentKind::RateCap;
  in.maturity_days = maturity_days;
  in.strike = strike;
  in.notional = notional;
  in.market_price = price;
  return in;
}

QuoteConventions table_conventions() {
  QuoteConventions c;
  c.spot = 92.0;
  c.short_rate = 0.025;
  c.year_days = 360.0;
  return c;
}

}  // namespace

TEST(Instruments, PayoffExamples) {
  EXPECT_NEAR(payoff(call(60, 92), std::log(99.0), 0.0, 100.0), 7.0, 1e-12);
  EXPECT_EQ(payoff(call(60, 92), std::log(85.0), 0.0, 100.0), 0.0);
  EXPECT_NEAR(payoff(cap(91.25, 0.025, 1e7), 0.0, 3.0, 100.0), 12500.0, 1e-6);
  EXPECT_EQ(payoff(cap(91.25, 0.025, 1e7), 0.0, 2.0, 100.0), 0.0);
}

TEST(Instruments, CellAverageMatchesQuadrature) {
  const double hz = 0.05, hr = 0.4;
  auto numeric = [&](const Instrument& in, double z, double r, bool along_z) {
    const int n = 20000;
    double s = 0;
    for (int k = 0; k < n; ++k) {
      const double u = (k + 0.5) / n - 0.5;
      s += along_z ? payoff(in, z + u * hz, r, 100.0) : payoff(in, z, r + u * hr, 100.0);
    }
    return s / n;
  };
  const auto c = call(60, 92);
  for (double z : {std::log(92.0) - 0.03, std::log(92.0), std::log(92.0) + 0.01, std::log(120.0), std::log(60.0)}) {
    EXPECT_NEAR(cell_average_payoff(c, z, 0.0, hz, hr, 100.0), numeric(c, z, 0.0, true), 1e-7);
  }
  const auto k = cap(92, 0.01, 1e7);
  for (double r : {0.9, 1.0, 1.15, 3.0, -1.0}) {
    EXPECT_NEAR(cell_average_payoff(k, 0.0, r, hz, hr, 100.0), numeric(k, 0.0, r, false), 1e-4);
  }
}

TEST(Instruments, PayoffFieldSamplingModes) {
  Grid g;
  g.z_min = std::log(50.0);
  g.z_max = std::log(150.0);
  g.r_min = -1;
  g.r_max = 5;
  g.nz = 40;
  g.nr = 7;
  const auto c = call(60, 92);
  const auto point = payoff_field(c, g, 100.0, PayoffSampling::Pointwise);
  const auto avg = payoff_field(c, g, 100.0);
  for (std::size_t j = 0; j < g.nr; ++j) {
    for (std::size_t i = 0; i < g.nz; ++i) {
      EXPECT_EQ(point(i, j), payoff(c, g.z(i), g.r(j), 100.0));
      EXPECT_GE(avg(i, j), point(i, j) - 1e-12);  // Jensen: the payoff is convex
    }
  }
  auto w = c;
  w.vega_weight = 4.0;
  EXPECT_LT(max_abs_diff(scaled_payoff_field(w, g, 100.0), 0.25 * avg), 1e-12);
}

TEST(Instruments, BlackLimits) {
  const double d = std::exp(-0.02);
  EXPECT_NEAR(bs_price(100, 90, 1.0, 1e-9, d), d * 10.0, 1e-9);
  EXPECT_NEAR(bs_price(100, 110, 1.0, 1e-9, d), 0.0, 1e-12);
  EXPECT_NEAR(bs_price(100, 1e-12, 1.0, 0.3, d), d * 100.0, 1e-9);
  EXPECT_THROW(bs_price(100, 90, 1.0, 0.0, d), std::domain_error);
  EXPECT_THROW(bs_price(-1, 90, 1.0, 0.2, d), std::domain_error);
}

TEST(Instruments, ImpliedVolOfTableQuote) {
  const auto conv = table_conventions();
  EXPECT_NEAR(implied_vol(call(60, 92), 7.3755, conv), 0.4811, 5e-5);

  const double t = 60.0 / 365.0;
  const double disc = std::exp(-0.025 * t);
  const double fwd = 92.0 / disc;
  const double p = bs_price(fwd, 92, t, 0.4811, disc);
  EXPECT_NEAR(bs_implied_vol(p, fwd, 92, t, disc), 0.4811, 1e-10);
}

TEST(Instruments, ImpliedVolRoundTrip) {
  for (double k : {60.0, 85.0, 92.0, 120.0, 160.0}) {
    for (double vol : {0.05, 0.2, 0.4811, 0.9}) {
      for (double t : {10.0 / 365, 0.25, 2.0}) {
        const double disc = std::exp(-0.03 * t);
        const double p = bs_price(92.0 / disc, k, t, vol, disc);
        if (p - disc * std::max(92.0 / disc - k, 0.0) < 1e-10) continue;  // no information left
        EXPECT_NEAR(bs_implied_vol(p, 92.0 / disc, k, t, disc), vol, 1e-8) << k << ' ' << vol << ' ' << t;
      }
    }
  }
}

TEST(Instruments, ImpliedVolBandEdges) {
  const double t = 60.0 / 365.0, disc = std::exp(-0.025 * t), fwd = 92.0 / disc;
  EXPECT_THROW(bs_implied_vol(disc * (fwd - 85.0), fwd, 85.0, t, disc), OutOfBandError);
  EXPECT_THROW(bs_implied_vol(disc * fwd, fwd, 85.0, t, disc), OutOfBandError);
  EXPECT_THROW(normal_implied_vol(0.0, 0.01, 0.02, t, disc), OutOfBandError);
}

TEST(Instruments, VegaMatchesFiniteDifference) {
  const double h = 1e-5;
  for (double k : {70.0, 92.0, 115.0}) {
    for (double vol : {0.15, 0.4811}) {
      const double t = 0.33, d = 0.99, f = 93.0;
      const double fd = (bs_price(f, k, t, vol + h, d) - bs_price(f, k, t, vol - h, d)) / (2 * h);
      EXPECT_NEAR(bs_vega(f, k, t, vol, d), fd, 1e-6);
      EXPECT_GE(bs_vega(f, k, t, vol, d), 0.0);
    }
  }
  for (double k : {0.005, 0.01, 0.02}) {
    const double vol = 0.006, t = 0.25, d = 0.997, f = 0.01;
    const double fd = (normal_price(f, k, t, vol + 1e-7, d) - normal_price(f, k, t, vol - 1e-7, d)) / 2e-7;
    EXPECT_NEAR(normal_vega(f, k, t, vol, d), fd, 1e-6);
    const double p = normal_price(f, k, t, vol, d);
    EXPECT_NEAR(normal_implied_vol(p, f, k, t, d), vol, 1e-10);
  }
}

TEST(Instruments, VegaVanishesFarFromTheMoney) {
  const double v_atm = bs_vega(100, 100, 1.0, 0.2, 1.0);
  EXPECT_LT(bs_vega(100, 1e-3, 1.0, 0.2, 1.0), 1e-12 * v_atm);
  EXPECT_LT(bs_vega(100, 1e5, 1.0, 0.2, 1.0), 1e-12 * v_atm);
}

TEST(Instruments, PrepareQuotesWeights) {
  auto conv = table_conventions();
  QuoteSet raw;
  raw.instruments = {call(60, 92, 7.3755), call(60, 92, 7.3755)};
  const auto q = prepare_quotes(raw, conv);
  EXPECT_EQ(q.instruments[0].vega_weight, q.instruments[1].vega_weight);
  const double vega = instrument_vega(q.instruments[0], *q.instruments[0].market_iv, conv);
  EXPECT_DOUBLE_EQ(q.instruments[0].vega_weight, vega);
  EXPECT_DOUBLE_EQ(q.instruments[0].scaled_price(), 7.3755 / vega);

  // A price error worth dv of implied volatility is dv in scaled units.
  const double dv = 1e-4;
  auto bumped = q.instruments[0];
  const double t = 60.0 / 360.0, disc = std::exp(-0.025 * t);
  bumped.market_price = bs_price(92.0 / disc, 92.0, t, *bumped.market_iv + dv, disc);
  EXPECT_NEAR(bumped.scaled_price() - q.instruments[0].scaled_price(), dv, 1e-8);

  EXPECT_EQ(prepare_quotes(q, conv), q);  // idempotent

  conv.unit_weights = true;
  const auto u = prepare_quotes(raw, conv);
  EXPECT_EQ(u.instruments[0].vega_weight, 1.0);
  EXPECT_EQ(u.instruments[0].scaled_price(), 7.3755);
}

TEST(Instruments, PrepareQuotesRejectsWithIndex) {
  QuoteSet raw;
  raw.instruments = {call(60, 92, 7.3755), call(60, 85, 0.0)};
  try {
    (void)prepare_quotes(raw, table_conventions());
    FAIL() << "expected QuoteError";
  } catch (const QuoteError& e) {
    EXPECT_EQ(e.index(), 1u);
  }
  raw.instruments = {call(120, 92, 1.0), call(60, 92, 1.0)};
  EXPECT_THROW(prepare_quotes(raw, table_conventions()), QuoteError);
}

TEST(Instruments, CapQuotingUsesNormalVols) {
  QuoteConventions conv;
  conv.spot = 3973;
  conv.short_rate = 0.01;
  auto in = cap(92, 0.01, 1e7);
  const double t = 92.0 / 365.0, disc = std::exp(-0.01 * t);
  in.market_price = 1e7 * t * normal_price(0.01, 0.01, t, 0.004, disc);
  EXPECT_NEAR(implied_vol(in, in.market_price, conv), 0.004, 1e-10);
  conv.cap_model = CapVolModel::Lognormal;
  EXPECT_NO_THROW(implied_vol(in, in.market_price, conv));
}

TEST(Instruments, YearDaysChangesOnlyQuoting) {
  auto conv = table_conventions();
  const double iv360 = implied_vol(call(60, 92), 7.3755, conv);
  conv.year_days = 365.0;
  const double iv365 = implied_vol(call(60, 92), 7.3755, conv);
  EXPECT_GT(iv365, iv360);
  EXPECT_NEAR(iv365 / iv360, std::sqrt(365.0 / 360.0), 2e-3);
  conv.year_days = 0.0;
  EXPECT_THROW(implied_vol(call(60, 92), 7.3755, conv), std::invalid_argument);
}

TEST(Instruments, FileRoundTrip) {
  QuoteSet q;
  q.instruments = {call(60, 92, 7.3755), cap(92, 0.0125, 1e7, 1234.5), call(120, 99, 4.1)};
  q.instruments[0].market_iv = 0.4811;
  std::stringstream ss;
  write_instruments(ss, q);
  const auto back = read_instruments(ss, 100.0);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.instruments[0], q.instruments[0]);
  EXPECT_EQ(back.instruments[1], q.instruments[1]);
  EXPECT_EQ(back.instruments[2].strike, 99.0);
  EXPECT_FALSE(back.instruments[1].market_iv.has_value());
}

TEST(Instruments, ReaderSortsAndRejects) {
  std::stringstream ok("# comment\nkind,maturity_days,strike,notional,price,iv\ncall,120,92,1,9.1,\ncap,92,0.01,1e7,1500,\n");
  const auto q = read_instruments(ok, 100.0);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q.instruments[0].kind, InstrumentKind::RateCap);
  EXPECT_EQ(q.instruments[1].maturity_days, 120.0);

  std::stringstream bad_kind("kind,maturity_days,strike,notional,price,iv\nput,60,92,1,1,\n");
  EXPECT_ANY_THROW(read_instruments(bad_kind, 100.0));
  std::stringstream bad_header("kind,strike\ncall,92\n");
  EXPECT_ANY_THROW(read_instruments(bad_header, 100.0));
}
