#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracle_draws.hpp"
#include "sotcal/optimisers.hpp"

using namespace sotcal;
using namespace sotcal::testing;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Characteristics hybrid_ref(double rate = 0.025) {
  Characteristics c;
  c.beta11 = 0.36;
  c.beta22 = 16.0;
  c.beta12 = -0.4 * 0.6 * 4.0;
  c.alpha1 = rate - 0.18;
  c.alpha2 = 0.3;
  return c;
}

DualDerivatives zero_derivs(double rate = 0.025) {
  DualDerivatives d;
  d.rate = rate;
  return d;
}

// One-dimensional golden-section maximiser used as an independent oracle.
template <class F>
double golden(F f, double lo, double hi) {
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  for (int k = 0; k < 300; ++k) {
    const double x1 = b - g * (b - a), x2 = a + g * (b - a);
    if (f(x1) < f(x2)) a = x1; else b = x2;
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST(Optimisers, JointCostExamples) {
  const auto ref = hybrid_ref();
  const Bounds b;
  EXPECT_EQ(cost_joint(ref, ref, b, 0.025), 0.0);
  auto c = ref;
  c.beta11 = b.beta11_hi + 1e-9;
  c.alpha1 = 0.025 - 0.5 * c.beta11;
  EXPECT_EQ(cost_joint(c, ref, b, 0.025), kInf);
  c = ref;
  c.beta12 += 0.1;
  EXPECT_NEAR(cost_joint(c, ref, b, 0.025), 0.02, 1e-14);
  c = ref;
  c.alpha1 += 0.01;  // alpha1 off its pinned value
  EXPECT_EQ(cost_joint(c, ref, b, 0.025), kInf);
  c = ref;
  c.beta12 = 3.0;  // beyond sqrt(0.36 * 16) = 2.4
  EXPECT_EQ(cost_joint(c, ref, b, 0.025), kInf);
}

TEST(Optimisers, BarrierCostExamples) {
  EXPECT_NEAR(barrier_cost(0.3, 0.3, 0.1), 0.0, 1e-14);
  EXPECT_EQ(barrier_cost(0.1, 0.3, 0.1), kInf);
  EXPECT_EQ(barrier_cost(0.05, 0.3, 0.1), kInf);
  EXPECT_NEAR(barrier_cost(0.5, 0.3, 0.1, 4.0), 88.625, 1e-12);
  for (double x : {0.12, 0.2, 0.29, 0.31, 0.6}) EXPECT_GT(barrier_cost(x, 0.3, 0.1), 0.0);
}

TEST(Optimisers, ZeroDerivativesRecoverReference) {
  const auto ref = hybrid_ref();
  const Bounds b;
  for (auto v : {Variant::Joint, Variant::Sequential, Variant::FullSequential}) {
    const auto o = optimal_control(v, zero_derivs(), ref, b);
    EXPECT_NEAR(max_component_deviation(o.c, ref), 0.0, 1e-14) << to_string(v);
    EXPECT_TRUE(o.strict_interior);
    EXPECT_NEAR(o.cost, 0.0, 1e-14);
    const auto brute = lf_bruteforce(v, zero_derivs(), ref, b);
    EXPECT_LT(max_component_deviation(brute, ref), 1e-6) << to_string(v);
  }
}

TEST(Optimisers, JointClosedFormExamples) {
  auto ref = hybrid_ref();
  const Bounds b;
  const auto d = DualDerivatives::from_phi(0.05, 0.0, 0.1, 0.0, 0.0, 0.025);
  EXPECT_NEAR(optimal_joint(d, ref, b).c.beta11, 0.37, 1e-14);

  // Clamp branch of the correlation term.
  Bounds loose{0.01, 1.0, 1e-4, 1.0};
  ref.beta11 = 0.04;
  ref.beta22 = 0.0004;
  ref.beta12 = 0.0;
  ref.alpha1 = 0.025 - 0.02;
  const auto clamp = optimal_joint(DualDerivatives::from_phi(0, 0, 0, 0, 4.0, 0.025), ref, loose);
  EXPECT_NEAR(clamp.c.beta12, 0.004, 1e-15);
  EXPECT_FALSE(clamp.strict_interior);
  const auto fs = optimal_full_seq(DualDerivatives::from_phi(0, 0, 0, 0, 4.0, 0.025), ref, loose);
  EXPECT_NEAR(fs.c.beta12, 0.004, 1e-15);
  EXPECT_FALSE(fs.strict_interior);
}

TEST(Optimisers, JointDriftAndMonotoneClamp) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 200; ++k) {
    const auto c = draw_case(Variant::Joint, rng);
    const auto o = optimal_joint(c.d, c.ref, c.bounds);
    EXPECT_EQ(o.c.alpha2, c.ref.alpha2 + 0.5 * c.d.a2);
    EXPECT_EQ(o.c.alpha1, c.d.rate - 0.5 * o.c.beta11);
    auto up = c.d;
    up.b11 += 0.3;
    EXPECT_GE(optimal_joint(up, c.ref, c.bounds).c.beta11, o.c.beta11);
  }
}

TEST(Optimisers, EmittedControlsAdmissible) {
  std::mt19937_64 rng(11);
  for (auto v : {Variant::Joint, Variant::FullSequential, Variant::Lsv, Variant::Sequential}) {
    for (int k = 0; k < 500; ++k) {
      auto c = draw_case(v, rng);
      c.d.b12 *= 20.0;  // push into the clamp branch as well
      const auto o = optimal_control(v, c.d, c.ref, c.bounds);
      EXPECT_TRUE(is_psd(o.c, 1e-12)) << to_string(v);
      EXPECT_TRUE(std::isfinite(variant_cost(v, o.c, c.ref, c.bounds, c.d.rate))) << to_string(v);
      if (v != Variant::Sequential) {
        EXPECT_GE(o.c.beta11, c.bounds.beta11_lo);
        EXPECT_LE(o.c.beta11, c.bounds.beta11_hi);
        EXPECT_LE(std::abs(o.c.beta12), std::sqrt(o.c.beta11 * o.c.beta22) * (1 + 1e-15));
      }
    }
  }
}

TEST(Optimisers, SequentialMatchesGoldenSection) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 200; ++k) {
    const auto c = draw_case(Variant::Sequential, rng);
    const double s = c.ref.beta12 * c.ref.beta12 / c.ref.beta22;
    const double g = c.d.b11 - 0.5 * c.d.a1;
    const double x = optimal_seq_beta11(c.d, c.ref);
    EXPECT_GT(x, s);
    const double oracle = golden([&](double y) { return y * g - barrier_cost(y, c.ref.beta11, s); },
                                 s + 1e-12, s + 50.0 * (c.ref.beta11 - s));
    EXPECT_NEAR(x, oracle, 1e-8);
  }
  auto ref = hybrid_ref();
  ref.beta12 = 2.4;  // beta11 equals beta12^2 / beta22: empty barrier domain
  EXPECT_THROW(optimal_seq_beta11(zero_derivs(), ref), std::domain_error);
}

TEST(Optimisers, LsvDegenerateVariance) {
  Characteristics ref;
  ref.beta11 = 0.0;
  ref.beta22 = 0.0;
  ref.beta12 = 0.0;
  const Bounds b{0.01, 1.0, 1e-6, 1.0};
  const auto o = optimal_lsv(DualDerivatives::from_phi(0.2, 0.0, 0.4, 0.0, 0.7, 0.0), ref, b);
  EXPECT_EQ(o.c.beta22, 0.0);
  EXPECT_EQ(o.c.beta12, 0.0);
}

TEST(Optimisers, ClosedFormMatchesBruteForce) {
  for (auto v : {Variant::Joint, Variant::Sequential, Variant::FullSequential, Variant::Lsv}) {
    const auto rep = oracle_sweep(v, 100, 20240601);
    EXPECT_EQ(rep.accepted, 100u);
    EXPECT_LE(rep.max_deviation, 1e-6) << to_string(v);
  }
}

TEST(Optimisers, BruteForceAgreesOnClampedBeta11) {
  auto ref = hybrid_ref();
  const Bounds b;
  const auto d = DualDerivatives::from_phi(0.0, 0.0, 10.0, 0.0, 0.0, 0.025);  // pushes beta11 past its cap
  const auto o = optimal_joint(d, ref, b);
  EXPECT_EQ(o.c.beta11, b.beta11_hi);
  EXPECT_NEAR(lf_bruteforce(Variant::Joint, d, ref, b).beta11, b.beta11_hi, 1e-9);
}

TEST(Optimisers, ConcavityCertificate) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto v : {Variant::Joint, Variant::Sequential, Variant::FullSequential, Variant::Lsv}) {
    for (int k = 0; k < 50; ++k) {
      const auto c = draw_case(v, rng);
      const auto o = optimal_control(v, c.d, c.ref, c.bounds);
      if (!o.strict_interior) continue;  // the closed form is only optimal inside the band
      const double best = dual_bracket(v, c.d, o.c, c.ref, c.bounds);
      ASSERT_TRUE(std::isfinite(best));
      int feasible = 0;
      for (int t = 0; t < 100; ++t) {
        auto x = o.c;
        const double scale = v == Variant::Lsv ? 0.01 : 0.05;
        x.beta11 = std::max(1e-9, x.beta11 + scale * n(rng));
        if (v == Variant::Joint) {
          x.beta22 += 2.0 * n(rng);
          x.alpha2 += n(rng);
        }
        if (v != Variant::Sequential) x.beta12 += scale * n(rng);
        x.alpha1 = c.d.rate - 0.5 * x.beta11;
        const double val = dual_bracket(v, c.d, x, c.ref, c.bounds);
        if (!std::isfinite(val)) continue;
        ++feasible;
        EXPECT_LE(val, best + 1e-12) << to_string(v);
      }
      EXPECT_GT(feasible, 0);
    }
  }
}

TEST(Optimisers, VariantNamesRoundTrip) {
  for (auto v : {Variant::Joint, Variant::Sequential, Variant::FullSequential, Variant::Lsv})
    EXPECT_EQ(variant_from_string(to_string(v)), v);
  EXPECT_THROW(variant_from_string("simplex"), std::invalid_argument);
  Bounds bad{0.5, 0.1, 8, 32};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
