#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <map>
#include <sstream>
#include <string>

#include "sotcal/io.hpp"
#include "support.hpp"

using namespace sotcal;
using namespace sotcal::testing;

namespace {

const std::string kSource = SOTCAL_SOURCE_DIR;

CalibrationResult sample_result(const StateSpace& s) {
  CalibrationResult r;
  r.variant = Variant::FullSequential;
  r.lambda = {0.1, -0.2};
  r.model_prices = {7.1, 3.2};
  r.model_ivs = {0.48, std::nan("")};
  r.market_prices = {7.0, 3.3};
  r.market_ivs = {0.47, 0.46};
  r.gradient = {1e-5, -2e-5};
  r.gradient_history = {0.1, 1e-3, 2e-5};
  r.gradient_norm = 2e-5;
  r.dual_value = 0.0123;
  r.calibrated = true;
  r.strict_violations = 3;
  r.policy_iterations = 4321;
  r.wall_seconds = 1.5;
  r.message = "calibrated";
  r.epochs.push_back({0, 7, 9, 4321, 2e-5, 0.0123, true, "converged", 1.4});
  r.surfaces = characteristics_hw_cev(hw_generating(), s);
  return r;
}

}  // namespace

TEST(Io, BundledConfigsParse) {
  for (const char* name : {"synthetic_hwcev.json", "lsv_good.json", "lsv_bad.json", "market_like.json"}) {
    const auto c = read_run_config(kSource + "/config/" + name);
    EXPECT_TRUE(c.reference.has_value()) << name;
    EXPECT_FALSE(c.instruments.empty()) << name;
  }
  const auto hw = read_run_config(kSource + "/config/synthetic_hwcev.json");
  EXPECT_NEAR(hw.state.z0, std::log(92.0), 1e-15);
  EXPECT_NEAR(hw.state.y0, 2.5, 1e-15);
  EXPECT_EQ(hw.state.grid.nz, 50u);
  EXPECT_NEAR(hw.state.grid.dt, 1.0 / 365.0, 1e-18);
  EXPECT_EQ(hw.year_days, 360.0);
  EXPECT_TRUE(hw.calibration.rho_ref.has_value());
  EXPECT_TRUE(hw.calibration.rho_ref->from_reference);
}

TEST(Io, RunConfigRoundTrip) {
  const auto c = read_run_config(kSource + "/config/market_like.json");
  const auto j = run_config_to_json(c);
  const auto back = run_config_from_json(j);
  EXPECT_EQ(run_config_to_json(back), j);
  EXPECT_EQ(back.calibration, c.calibration);
  EXPECT_EQ(back.synthetic, c.synthetic);
  EXPECT_EQ(back.state, c.state);
}

TEST(Io, ConfigErrors) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::object()), ConfigError);
  auto j = read_json_file(kSource + "/config/synthetic_hwcev.json");
  j["quoting"]["cap_model"] = "sabr";
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  j = read_json_file(kSource + "/config/synthetic_hwcev.json");
  j["calibration"]["variant"] = "simplex";
  EXPECT_ANY_THROW(run_config_from_json(j));
  j = read_json_file(kSource + "/config/synthetic_hwcev.json");
  j["quoting"]["year_days"] = -1;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
}

TEST(Io, ConfigHashIsStableAndSensitive) {
  const auto a = nlohmann::json::parse(R"({"b": 1, "a": [1, 2]})");
  const auto b = nlohmann::json::parse(R"({"a": [1, 2], "b": 1})");
  const auto c = nlohmann::json::parse(R"({"a": [1, 2], "b": 2})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(hash_hex(0xabcULL), "0000000000000abc");
}

TEST(Io, GridAndStateRoundTrip) {
  const auto s = hybrid_state(37, 45);
  const auto back = state_from_json(state_to_json(s));
  EXPECT_EQ(back, s);
  EXPECT_EQ(grid_from_json(grid_to_json(s.grid)), s.grid);
}

TEST(Io, ResultRoundTrip) {
  const auto s = hybrid_state(12, 5);
  const auto r = sample_result(s);
  const auto j = result_to_json(r, s, "deadbeef");
  EXPECT_EQ(j.at("config_hash"), "deadbeef");
  const auto back = result_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.lambda, r.lambda);
  EXPECT_EQ(back.model_prices, r.model_prices);
  EXPECT_TRUE(std::isnan(back.model_ivs[1]));
  EXPECT_EQ(back.model_ivs[0], r.model_ivs[0]);
  EXPECT_EQ(back.gradient_history, r.gradient_history);
  EXPECT_EQ(back.calibrated, r.calibrated);
  EXPECT_EQ(back.variant, r.variant);
  EXPECT_EQ(back.strict_violations, 3u);
  EXPECT_EQ(back.policy_iterations, 4321u);
  ASSERT_EQ(back.epochs.size(), 1u);
  EXPECT_EQ(back.epochs[0].status, "converged");
  EXPECT_EQ(result_to_json(back, s, "deadbeef"), j);
}

TEST(Io, SurfacesCsvRoundTrip) {
  const auto s = hybrid_state(12, 5);
  const auto surfaces = characteristics_hw_cev(hw_generating(), s);
  std::stringstream out;
  write_surfaces_csv(out, surfaces, s, 1, "cafe");
  const std::string text = out.str();
  EXPECT_EQ(text.rfind("# config_hash cafe\n", 0), 0u);
  EXPECT_NE(text.find("t_days,z,r_unscaled,alpha1,alpha2,beta11,beta12,beta22,rho\n"), std::string::npos);
  std::stringstream in(text);
  const auto back = read_surfaces_csv(in, s);
  ASSERT_EQ(back.slice_count(), surfaces.slice_count());
  for (std::size_t k = 0; k < back.slice_count(); ++k) {
    for (std::size_t q = 0; q < s.grid.size(); ++q) {
      const auto a = back.at(k).at(q), b = surfaces.at(k).at(q);
      EXPECT_NEAR(a.alpha1, b.alpha1, 1e-14 * std::max(1.0, std::abs(b.alpha1)));
      EXPECT_NEAR(a.alpha2, b.alpha2, 1e-14 * std::max(1.0, std::abs(b.alpha2)));
      EXPECT_NEAR(a.beta11, b.beta11, 1e-14);
      EXPECT_NEAR(a.beta12, b.beta12, 1e-14 * std::max(1.0, std::abs(b.beta12)));
      EXPECT_NEAR(a.beta22, b.beta22, 1e-14 * b.beta22);
    }
  }
}

TEST(Io, SurfaceCsvUsesPlottingUnits) {
  const auto s = hybrid_state(12, 2);
  const auto surfaces = characteristics_hw_cev(hw_generating(), s);
  std::stringstream out;
  write_surfaces_csv(out, surfaces, s);
  std::string line;
  std::getline(out, line);
  std::getline(out, line);  // first node of slice 0
  std::stringstream row(line);
  std::vector<double> v;
  for (std::string cell; std::getline(row, cell, ',');) v.push_back(std::stod(cell));
  ASSERT_EQ(v.size(), 9u);
  EXPECT_EQ(v[0], 0.0);
  EXPECT_NEAR(v[2], -0.075, 1e-15);
  EXPECT_NEAR(v[7], 0.04 * 0.04, 1e-15);  // beta22 back in unscaled rate units
  EXPECT_NEAR(v[8], -0.4, 1e-12);         // rho = beta12 / sqrt(beta11 beta22)
}

TEST(Io, CompareWithItselfIsZero) {
  const auto s = hybrid_state(12, 5);
  const auto a = characteristics_hw_cev(hw_generating(), s);
  for (double n : surface_difference_norms(a, a, s)) EXPECT_EQ(n, 0.0);
  std::stringstream out;
  write_surface_difference_csv(out, a, a, s);
  std::string line;
  std::getline(out, line);
  while (std::getline(out, line)) {
    std::stringstream row(line);
    std::vector<double> v;
    for (std::string cell; std::getline(row, cell, ',');) v.push_back(std::stod(cell));
    for (std::size_t c = 3; c < v.size(); ++c) ASSERT_EQ(v[c], 0.0) << line;
  }
  const auto b = characteristics_hw_cev(hw_reference(), s);
  EXPECT_GT(surface_difference_norms(a, b, s)[2], 0.0);
}

TEST(Io, PriceTableLayout) {
  const auto s = hybrid_state(12, 5);
  auto r = sample_result(s);
  QuoteSet q = call_lattice({92, 99}, {60}, 100.0);
  std::stringstream out;
  write_price_table_csv(out, q, r, "beef");
  std::string line;
  std::getline(out, line);
  EXPECT_EQ(line, "# config_hash beef");
  std::getline(out, line);
  EXPECT_NE(line.find("strike"), std::string::npos);
  EXPECT_NE(line.find("model_iv"), std::string::npos);
  int rows = 0;
  while (std::getline(out, line)) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST(Io, MarketLikeFileHasTheExpectedStructure) {
  const auto q = read_instruments_file(kSource + "/data/market_like_32.csv", 100.0);
  ASSERT_EQ(q.size(), 32u);
  std::map<std::pair<int, double>, int> groups;
  for (const auto& in : q.instruments) ++groups[{static_cast<int>(in.kind), in.maturity_days}];
  std::vector<int> counts;
  for (const auto& [key, n] : groups) counts.push_back(n);
  std::sort(counts.begin(), counts.end());
  EXPECT_EQ(counts, (std::vector<int>{6, 6, 10, 10}));
}
