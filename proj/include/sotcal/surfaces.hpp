#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sotcal/grid.hpp"

namespace sotcal {

/// The computational state space: lattice, rate rescaling and initial state.
///
/// For the hybrid equity/rates models the second coordinate is the short rate
/// multiplied by `rate_scale`; for the local-stochastic-volatility model it is
/// the variance, `rate_scale` is 1 and there is no discounting.
struct StateSpace {
  Grid grid;
  double rate_scale = 100.0;
  bool discounting = true;
  double z0 = 0.0;
  double y0 = 0.0;

  void validate() const;

  /// Unscaled short rate at r-index j (zero without discounting).
  double short_rate(std::size_t j) const {
    return discounting ? grid.r(j) / rate_scale : 0.0;
  }
  double initial_rate() const { return discounting ? y0 / rate_scale : 0.0; }
  /// Unscaled short rate per node.
  std::vector<double> rate_field() const;

  bool operator==(const StateSpace&) const = default;
};

/// Drift and covariance of (z, r) at one node, in grid units.
struct Characteristics {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double beta11 = 0.0;
  double beta12 = 0.0;
  double beta22 = 0.0;

  bool operator==(const Characteristics&) const = default;
};

/// The five characteristic fields over the grid at one time step.
struct SurfaceSlice {
  ScalarField alpha1;
  ScalarField alpha2;
  ScalarField beta11;
  ScalarField beta12;
  ScalarField beta22;

  SurfaceSlice() = default;
  explicit SurfaceSlice(const Grid& grid);

  const Grid& grid() const { return beta11.grid(); }
  Characteristics at(std::size_t k) const {
    return {alpha1[k], alpha2[k], beta11[k], beta12[k], beta22[k]};
  }
  void set(std::size_t k, const Characteristics& c);

  friend bool operator==(const SurfaceSlice&, const SurfaceSlice&) = default;
};

class SurfaceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Characteristic surfaces along the time lattice.
///
/// Slice k holds the coefficients used on the step between t_k and t_{k+1}.
/// A single slice denotes a time-homogeneous model.
class ModelSurfaces {
 public:
  ModelSurfaces() = default;
  explicit ModelSurfaces(SurfaceSlice homogeneous);
  explicit ModelSurfaces(std::vector<SurfaceSlice> slices);

  const SurfaceSlice& at(std::size_t step) const {
    return slices_.size() == 1 ? slices_.front() : slices_.at(step);
  }
  SurfaceSlice& mutable_at(std::size_t step) { return slices_.at(step); }
  std::size_t slice_count() const { return slices_.size(); }
  bool time_homogeneous() const { return slices_.size() == 1; }
  bool empty() const { return slices_.empty(); }
  const Grid& grid() const { return slices_.front().grid(); }
  const std::vector<SurfaceSlice>& slices() const { return slices_; }

  /// One slice per step, copying a homogeneous model if needed.
  ModelSurfaces expanded(std::size_t n_steps) const;

  /// Throws SurfaceError at the first node where beta is not positive
  /// semidefinite (beta12^2 > beta11 * beta22 beyond `tol`, or a negative variance).
  void check_psd(double tol = 1e-12) const;

  friend bool operator==(const ModelSurfaces&, const ModelSurfaces&) = default;

 private:
  std::vector<SurfaceSlice> slices_;
};

bool is_psd(const Characteristics& c, double tol = 1e-12);

}  // namespace sotcal
