#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "sotcal/instruments.hpp"
#include "sotcal/surfaces.hpp"

namespace sotcal {

struct McConfig {
  std::size_t paths = 100000;
  std::uint64_t seed = 20240601;
  std::size_t substeps = 4;  // Euler substeps per time step of the grid
  bool antithetic = true;    // paths come in (+W, -W) pairs; `paths` is rounded up to even
  std::size_t threads = 0;   // 0: hardware concurrency

  void validate() const;
};

/// Counter-based generator: SplitMix64 over a per-stream counter. Stream k
/// depends only on (seed, k), so estimates do not depend on chunking.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  SplitMix64(std::uint64_t seed, std::uint64_t stream);
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()();

 private:
  std::uint64_t state_;
};

/// Simulated states at the recorded steps. Entry (p, s) lives at p * steps.size() + s.
struct PathEnsemble {
  std::size_t n_paths = 0;
  std::size_t group_size = 1;  // 2 for antithetic pairs
  std::vector<std::size_t> steps;
  std::vector<double> z;
  std::vector<double> y;         // second state coordinate (scaled rate or variance)
  std::vector<double> discount;  // exp(-int r ds), unscaled rate
  std::size_t reflections = 0;
  std::size_t psd_repairs = 0;
  double dt = 0.0;
  double rate_scale = 1.0;

  std::size_t at(std::size_t path, std::size_t s) const { return path * steps.size() + s; }
};

/// Euler-Maruyama paths of dX = alpha dt + beta^{1/2} dW with coefficients
/// interpolated bilinearly in space and piecewise constant in time, reflected
/// at the domain edges. `record_steps` must not exceed the surfaces' horizon
/// (state.grid.n_steps).
PathEnsemble simulate_paths(const ModelSurfaces& surfaces, const StateSpace& state,
                            std::vector<std::size_t> record_steps, const McConfig& cfg);

struct McEstimate {
  double price = 0.0;
  double standard_error = 0.0;
};

/// Discounted payoff mean and standard error (antithetic pairs count as one sample).
McEstimate mc_price(const PathEnsemble& paths, const Instrument& instr, std::size_t maturity_step);
McEstimate mc_price(const ModelSurfaces& surfaces, const StateSpace& state, const Instrument& instr,
                    const McConfig& cfg);
/// All instruments from one ensemble.
std::vector<McEstimate> mc_price_all(const ModelSurfaces& surfaces, const StateSpace& state,
                                     const QuoteSet& quotes, const McConfig& cfg);

/// path,step,t_days,z,spot,y,short_rate,discount (short_rate is y / rate_scale) for the first `max_paths` paths.
void write_paths_csv(std::ostream& out, const PathEnsemble& paths, std::size_t max_paths);

}  // namespace sotcal
