#pragma once

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sotcal/dual_calibration.hpp"
#include "sotcal/instruments.hpp"
#include "sotcal/mc_validator.hpp"
#include "sotcal/reference_models.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Strike/maturity lattice priced by gen-synthetic.
struct SyntheticSpec {
  std::vector<double> call_strikes;
  std::vector<double> call_maturities_days;
  std::vector<double> cap_strikes;  // absolute rates
  std::vector<double> cap_maturities_days;
  double cap_notional = 1e7;
  bool operator==(const SyntheticSpec&) const = default;
};

/// Everything a CLI run needs, parsed from one JSON document.
struct RunConfig {
  StateSpace state;            // grid.n_steps is set later from the quotes
  double spot = 1.0;
  CapVolModel cap_model = CapVolModel::Normal;
  bool unit_weights = false;
  double year_days = 365.0;
  std::optional<ReferenceModel> reference;
  std::optional<ReferenceModel> generating;
  SyntheticSpec synthetic;
  CalibrationConfig calibration;
  McConfig mc;
  std::size_t surface_stride = 1;  // export every k-th slice
  std::string instruments;         // optional path to the instrument file

  QuoteConventions conventions() const;
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig read_run_config(const std::string& path);

/// FNV-1a (64 bit) of the compact JSON dump; keys are sorted by the library.
std::uint64_t config_hash(const nlohmann::json& j);
std::string hash_hex(std::uint64_t h);

nlohmann::json calibration_config_to_json(const CalibrationConfig& c);
CalibrationConfig calibration_config_from_json(const nlohmann::json& j);
nlohmann::json grid_to_json(const Grid& g);
Grid grid_from_json(const nlohmann::json& j);
nlohmann::json state_to_json(const StateSpace& s);
StateSpace state_from_json(const nlohmann::json& j);

/// Result metadata (everything except the surfaces).
nlohmann::json result_to_json(const CalibrationResult& r, const StateSpace& state, const std::string& hash);
/// Inverse of result_to_json; the surfaces are left empty.
CalibrationResult result_from_json(const nlohmann::json& j);

/// Surface CSV in plotting units: header
/// t_days,z,r_unscaled,alpha1,alpha2,beta11,beta12,beta22,rho
/// where alpha2, beta12 and beta22 have the rate scaling undone and
/// rho = beta12 / sqrt(beta11 beta22). Every `stride`-th slice is written.
void write_surfaces_csv(std::ostream& out, const ModelSurfaces& s, const StateSpace& state, std::size_t stride = 1,
                        const std::string& hash = "");
/// Reads a stride-1 export back onto `state`'s grid.
ModelSurfaces read_surfaces_csv(std::istream& in, const StateSpace& state);

/// Node-wise a - b in the same layout; rho is the difference of correlations.
void write_surface_difference_csv(std::ostream& out, const ModelSurfaces& a, const ModelSurfaces& b,
                                  const StateSpace& state, std::size_t stride = 1, const std::string& hash = "");

/// Sup-norm of a - b per characteristic in plotting units: alpha1, alpha2, beta11, beta12, beta22, rho.
std::vector<double> surface_difference_norms(const ModelSurfaces& a, const ModelSurfaces& b, const StateSpace& state);

/// Per-instrument table mirroring the generating/calibrated price and IV layout.
void write_price_table_csv(std::ostream& out, const QuoteSet& quotes, const CalibrationResult& r,
                           const std::string& hash = "");

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace sotcal
