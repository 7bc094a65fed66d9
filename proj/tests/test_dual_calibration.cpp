#include <gtest/gtest.h>

#include <cmath>

#include "sotcal/dual_calibration.hpp"
#include "sotcal/reference_models.hpp"
#include "support.hpp"

using namespace sotcal;
using namespace sotcal::testing;

namespace {

struct Setup {
  StateSpace state;
  QuoteSet quotes;
  ModelSurfaces reference;
};

Setup small_setup(std::size_t n = 30, PricingScheme scheme = PricingScheme::Adi,
                  const ReferenceModel& quote_model = ReferenceModel(hw_generating())) {
  Setup s;
  s.state = hybrid_state(n, 20);
  auto raw = call_lattice({85, 99}, {10, 20}, 100.0);
  const auto prices = price_instruments(quote_model, s.state, raw, scheme);
  for (std::size_t i = 0; i < prices.size(); ++i) raw.instruments[i].market_price = prices[i];
  s.quotes = prepare_quotes(raw, hybrid_conventions());
  s.reference = characteristics_hw_cev(hw_reference(), s.state);
  return s;
}

DualProblem problem_for(const Setup& s, Variant v) {
  CalibrationConfig cfg;
  cfg.variant = v;
  if (v == Variant::Sequential) cfg.rho_ref = CorrelationPin{true, 0.0};
  return make_dual_problem(s.state, v, cfg.bounds, prepare_reference(cfg, s.reference, s.state), s.quotes);
}

double h1_seminorm(const ScalarField& f) {
  const Grid& g = f.grid();
  double s = 0;
  for (std::size_t j = 0; j < g.nr; ++j) {
    for (std::size_t i = 0; i < g.nz; ++i) {
      if (i + 1 < g.nz) s += std::pow(f(i + 1, j) - f(i, j), 2);
      if (j + 1 < g.nr) s += std::pow(f(i, j + 1) - f(i, j), 2);
    }
  }
  return s;
}

}  // namespace

TEST(DualCalibration, ZeroMultipliers) {
  const auto s = small_setup();
  const auto p = problem_for(s, Variant::Joint);
  const auto ev = evaluate_dual(p, std::vector<double>(p.size(), 0.0));
  EXPECT_EQ(ev.value, 0.0);
  const auto ref_prices = model_prices_scaled(p, p.reference);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(ev.gradient[i], p.targets[i] - ref_prices[i]);
    EXPECT_EQ(p.targets[i], s.quotes.instruments[i].scaled_price());
  }
}

TEST(DualCalibration, FirstOrderExpansionOfTheObjective) {
  const auto s = small_setup();
  const auto p = problem_for(s, Variant::Joint);
  const std::vector<double> dir{1.0, -0.5, 0.25, 2.0};
  const auto ref_prices = model_prices_scaled(p, p.reference);
  double slope = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) slope += dir[i] * (p.targets[i] - ref_prices[i]);
  const double eps = 1e-7;
  std::vector<double> lambda(dir);
  for (auto& l : lambda) l *= eps;
  HjbOptions opts;
  opts.tolerance = 1e-16;
  const auto ev = evaluate_dual(p, lambda, opts);
  EXPECT_NEAR(ev.value / eps, slope, 1e-4 * std::max(1.0, std::abs(slope)));
}

TEST(DualCalibration, GradientMatchesFiniteDifferences) {
  const auto s = small_setup();
  for (auto v : {Variant::Joint, Variant::FullSequential}) {
    const auto p = problem_for(s, v);
    const std::vector<double> lambda{0.02, -0.03, 0.05, 0.01};
    HjbOptions opts;
    opts.tolerance = 1e-13;
    const auto ev = evaluate_dual(p, lambda, opts);
    const double h = 1e-4;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto up = lambda, dn = lambda;
      up[i] += h;
      dn[i] -= h;
      const double fd = (evaluate_dual(p, up, opts).value - evaluate_dual(p, dn, opts).value) / (2 * h);
      EXPECT_NEAR(ev.gradient[i], fd, 1e-3 * std::abs(fd)) << to_string(v) << ' ' << i;
    }
  }
}

TEST(DualCalibration, CalibratedReferenceReturnsImmediately) {
  // Quotes priced by the reference itself with the scheme the gradient uses.
  const auto s = small_setup(30, PricingScheme::Implicit, ReferenceModel(hw_reference()));
  CalibrationConfig cfg;
  cfg.eps1 = 1e-8;
  const auto res = calibrate(cfg, s.quotes, s.reference, s.state, hybrid_conventions());
  EXPECT_TRUE(res.calibrated) << res.message;
  ASSERT_EQ(res.epochs.size(), 1u);
  EXPECT_EQ(res.epochs[0].iterations, 0u);
  for (double l : res.lambda) EXPECT_EQ(l, 0.0);
  EXPECT_EQ(res.dual_value, 0.0);
}

TEST(DualCalibration, SmallJointRunCalibrates) {
  const auto s = small_setup();
  CalibrationConfig cfg;
  cfg.eps1 = 1e-4;
  const auto conv = hybrid_conventions();
  const auto res = calibrate(cfg, s.quotes, s.reference, s.state, conv);
  ASSERT_TRUE(res.calibrated) << res.message;
  EXPECT_FALSE(res.surfaces_smoothed);
  EXPECT_LT(res.gradient_norm, 1e-4);
  EXPECT_NO_THROW(res.surfaces.check_psd(1e-12));
  for (std::size_t i = 0; i < s.quotes.size(); ++i) {
    const auto& q = s.quotes.instruments[i];
    // Vega scaling: an IV tolerance eps1 is a price tolerance vega * eps1.
    EXPECT_LE(std::abs(res.model_prices[i] - q.market_price), q.vega_weight * cfg.eps1 * (1 + 1e-9));
    EXPECT_NEAR(res.model_ivs[i], *q.market_iv, 2e-4);
  }
  // The history holds the projected-gradient norm of every accepted iterate.
  EXPECT_FALSE(res.gradient_history.empty());
  EXPECT_LT(res.gradient_history.back(), 1e-4);
}

TEST(DualCalibration, SequentialVariantsPinRateDynamics) {
  const auto s = small_setup();
  for (auto v : {Variant::Sequential, Variant::FullSequential}) {
    const auto p = problem_for(s, v);
    const auto ev = evaluate_dual(p, {0.05, -0.02, 0.04, 0.03});
    for (std::size_t k = 0; k < p.n_steps(); ++k) {
      EXPECT_EQ(ev.hjb.controls.at(k).alpha2, p.reference.at(k).alpha2) << to_string(v);
      EXPECT_EQ(ev.hjb.controls.at(k).beta22, p.reference.at(k).beta22) << to_string(v);
      if (v == Variant::Sequential) EXPECT_EQ(ev.hjb.controls.at(k).beta12, p.reference.at(k).beta12);
    }
    const auto smoothed = smooth_reference_iteration(ev.hjb.controls, p.reference, p, 2.0);
    for (std::size_t k = 0; k < p.n_steps(); ++k) {
      EXPECT_EQ(smoothed.at(k).alpha2, p.reference.at(k).alpha2);
      EXPECT_EQ(smoothed.at(k).beta22, p.reference.at(k).beta22);
    }
    EXPECT_NO_THROW(smoothed.check_psd());
  }
}

TEST(DualCalibration, SequentialNeedsCorrelationPin) {
  const auto s = small_setup();
  CalibrationConfig cfg;
  cfg.variant = Variant::Sequential;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW(calibrate(cfg, s.quotes, s.reference, s.state, hybrid_conventions()), std::invalid_argument);
  cfg.rho_ref = CorrelationPin{false, -0.2};
  EXPECT_NO_THROW(cfg.validate());
  const auto pinned = prepare_reference(cfg, s.reference, s.state);
  const auto& sl = pinned.at(3);
  EXPECT_NEAR(sl.beta12[10], -0.2 * sl.beta22[10] / 100.0, 1e-15);
  // A node whose variance sits below beta12^2 / beta22 leaves the barrier no room.
  auto thin = s.reference;
  thin.mutable_at(3).beta11[10] = 1e-6;
  EXPECT_THROW(prepare_reference(cfg, thin, s.state), std::domain_error);
}

TEST(DualCalibration, SmoothingKeepsConstantsAndFlattensSpikes) {
  const Grid g = hybrid_state(21).grid;
  const ScalarField flat(g, 0.42);
  EXPECT_LT(max_abs_diff(gaussian_smooth(flat, 2.0), flat), 1e-15);

  ScalarField spike(g, 0.0);
  spike(10, 10) = 1.0;
  const auto out = gaussian_smooth(spike, 2.0);
  const double w1 = std::exp(-0.5);  // sigma = 1 cell
  const double w2 = std::exp(-2.0);
  const double norm = std::pow(1 + 2 * w1 + 2 * w2, 2);
  EXPECT_NEAR(out(10, 10), 1.0 / norm, 1e-14);
  EXPECT_GT(out(11, 10), 0.0);
  EXPECT_GT(out(10, 12), 0.0);
  EXPECT_EQ(out(13, 10), 0.0);
  EXPECT_LT(h1_seminorm(out), h1_seminorm(spike));
  EXPECT_EQ(gaussian_smooth(spike, 0.0), spike);
}

TEST(DualCalibration, ConfigValidation) {
  CalibrationConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.eps1 = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.min_smoothing_iterations = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(gradient_backend_from_string(to_string(GradientBackend::Adi)), GradientBackend::Adi);
}

TEST(DualCalibration, SmoothingEpochsReportUnsmoothedSurfaces) {
  const auto s = small_setup();
  CalibrationConfig cfg;
  cfg.eps1 = 1e-4;
  cfg.variant = Variant::FullSequential;
  cfg.smoothing_iterations = 2;
  cfg.min_smoothing_iterations = 2;
  const auto res = calibrate(cfg, s.quotes, s.reference, s.state, hybrid_conventions());
  EXPECT_EQ(res.epochs.size(), 3u);
  EXPECT_TRUE(res.calibrated) << res.message;
  EXPECT_FALSE(res.surfaces_smoothed);
  // The warm start makes later epochs cheap.
  EXPECT_LE(res.epochs[2].evaluations, res.epochs[0].evaluations);
}
