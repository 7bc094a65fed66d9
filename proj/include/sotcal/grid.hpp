#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sotcal {

/// Raised when a grid is malformed or two fields live on different grids.
class GridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a field carries a NaN or infinity; `node` is the flat index.
class NonFiniteError : public std::domain_error {
 public:
  NonFiniteError(const std::string& what, std::size_t node)
      : std::domain_error(what), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// Uniform space-time lattice over (log-price z, rescaled rate r).
///
/// Nodes are stored row-major with z varying fastest: flat index = j * nz + i.
/// The second coordinate is the rescaled short rate for the hybrid models and
/// the instantaneous variance for the local-stochastic-volatility model.
struct Grid {
  double z_min = 0.0;
  double z_max = 1.0;
  double r_min = 0.0;
  double r_max = 1.0;
  std::size_t nz = 3;
  std::size_t nr = 3;
  double dt = 1.0 / 365.0;
  std::size_t n_steps = 1;

  void validate() const;

  double hz() const { return (z_max - z_min) / static_cast<double>(nz - 1); }
  double hr() const { return (r_max - r_min) / static_cast<double>(nr - 1); }
  std::size_t size() const { return nz * nr; }
  std::size_t index(std::size_t i, std::size_t j) const { return j * nz + i; }
  double z(std::size_t i) const { return z_min + static_cast<double>(i) * hz(); }
  double r(std::size_t j) const { return r_min + static_cast<double>(j) * hr(); }
  double time(std::size_t k) const { return static_cast<double>(k) * dt; }
  double horizon() const { return time(n_steps); }

  bool is_boundary(std::size_t i, std::size_t j) const {
    return i == 0 || j == 0 || i + 1 == nz || j + 1 == nr;
  }
  bool contains(double z_val, double r_val) const {
    return z_val >= z_min && z_val <= z_max && r_val >= r_min && r_val <= r_max;
  }
  /// Same spatial lattice (time step data is ignored).
  bool same_space(const Grid& other) const;

  bool operator==(const Grid&) const = default;
};

/// One real value per grid node.
class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(const Grid& grid, double value = 0.0);
  ScalarField(const Grid& grid, std::vector<double> values);

  const Grid& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return values_[grid_.index(i, j)]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[grid_.index(i, j)]; }
  double& operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  /// Throws NonFiniteError naming the first offending node.
  void require_finite(const char* what) const;

  /// Bilinear interpolation; points outside the domain are clamped onto it.
  double interpolate(double z_val, double r_val) const;

  double max_abs() const;

  ScalarField& operator+=(const ScalarField& other);
  ScalarField& operator-=(const ScalarField& other);
  ScalarField& operator*=(double s);

  friend bool operator==(const ScalarField&, const ScalarField&) = default;

 private:
  Grid grid_;
  std::vector<double> values_;
};

ScalarField operator+(ScalarField a, const ScalarField& b);
ScalarField operator-(ScalarField a, const ScalarField& b);
ScalarField operator*(double s, ScalarField a);

double max_abs_diff(const ScalarField& a, const ScalarField& b);

/// Bilinear weights of a point over its enclosing cell.
struct BilinearStencil {
  std::size_t nodes[4];
  double weights[4];
};
BilinearStencil bilinear_stencil(const Grid& grid, double z_val, double r_val);

struct Gradient {
  ScalarField dz;
  ScalarField dr;
};

struct Hessian {
  ScalarField dzz;
  ScalarField drr;
  ScalarField dzr;
};

/// Central differences inside, second-order one-sided differences on the boundary.
Gradient fd_gradient(const ScalarField& field);

/// Three-point second differences (the frozen-curvature quantity on the
/// boundary rows) and the four-point cross stencil, composed from first
/// differences near edges.
Hessian fd_hessian(const ScalarField& field);

/// Unnormalised second difference normal to the boundary at boundary node
/// (i, j). Corners and z-edges use the z direction, the remaining r-edges the
/// r direction.
double boundary_curvature(const ScalarField& field, std::size_t i, std::size_t j);

/// Overwrites the boundary nodes of `field` so that their normal second
/// difference equals the anchor's. Interior nodes are untouched.
ScalarField apply_frozen_curvature_boundary(ScalarField field, const ScalarField& anchor);
void apply_frozen_curvature_boundary_inplace(ScalarField& field, const ScalarField& anchor);

/// Same as above with precomputed anchor curvatures (one per node, only
/// boundary entries are read).
void apply_boundary_curvatures(ScalarField& field, std::span<const double> curvature);
std::vector<double> boundary_curvatures(const ScalarField& anchor);

}  // namespace sotcal
