#include "sotcal/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sotcal {

void Grid::validate() const {
  std::ostringstream msg;
  if (nz < 3 || nr < 3) {
    msg << "grid needs at least 3 nodes per axis (nz=" << nz << ", nr=" << nr << ")";
  } else if (!(z_max > z_min) || !(r_max > r_min)) {
    msg << "grid bounds must be increasing: z [" << z_min << ", " << z_max << "], r [" << r_min
        << ", " << r_max << "]";
  } else if (!(dt > 0.0) || !std::isfinite(dt)) {
    msg << "time step must be positive, got " << dt;
  } else if (n_steps == 0) {
    msg << "grid needs at least one time step";
  } else {
    return;
  }
  throw GridError(msg.str());
}

bool Grid::same_space(const Grid& other) const {
  return nz == other.nz && nr == other.nr && z_min == other.z_min && z_max == other.z_max &&
         r_min == other.r_min && r_max == other.r_max;
}

ScalarField::ScalarField(const Grid& grid, double value)
    : grid_(grid), values_(grid.size(), value) {}

ScalarField::ScalarField(const Grid& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    throw GridError("field has " + std::to_string(values_.size()) + " values for a grid of " +
                    std::to_string(grid_.size()) + " nodes");
  }
}

void ScalarField::require_finite(const char* what) const {
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (!std::isfinite(values_[k])) {
      std::ostringstream msg;
      msg << what << ": non-finite value at node " << k << " (i=" << k % grid_.nz
          << ", j=" << k / grid_.nz << ")";
      throw NonFiniteError(msg.str(), k);
    }
  }
}

BilinearStencil bilinear_stencil(const Grid& grid, double z_val, double r_val) {
  const double hz = grid.hz();
  const double hr = grid.hr();
  const double sz = std::clamp((z_val - grid.z_min) / hz, 0.0, static_cast<double>(grid.nz - 1));
  const double sr = std::clamp((r_val - grid.r_min) / hr, 0.0, static_cast<double>(grid.nr - 1));
  const std::size_t i = std::min(static_cast<std::size_t>(sz), grid.nz - 2);
  const std::size_t j = std::min(static_cast<std::size_t>(sr), grid.nr - 2);
  const double wz = sz - static_cast<double>(i);
  const double wr = sr - static_cast<double>(j);
  return BilinearStencil{
      {grid.index(i, j), grid.index(i + 1, j), grid.index(i, j + 1), grid.index(i + 1, j + 1)},
      {(1 - wz) * (1 - wr), wz * (1 - wr), (1 - wz) * wr, wz * wr}};
}

double ScalarField::interpolate(double z_val, double r_val) const {
  const auto s = bilinear_stencil(grid_, z_val, r_val);
  double v = 0.0;
  for (int k = 0; k < 4; ++k) v += s.weights[k] * values_[s.nodes[k]];
  return v;
}

double ScalarField::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

static void require_same_grid(const ScalarField& a, const ScalarField& b) {
  if (!a.grid().same_space(b.grid())) throw GridError("fields live on different grids");
}

ScalarField& ScalarField::operator+=(const ScalarField& other) {
  require_same_grid(*this, other);
  for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += other.values_[k];
  return *this;
}

ScalarField& ScalarField::operator-=(const ScalarField& other) {
  require_same_grid(*this, other);
  for (std::size_t k = 0; k < values_.size(); ++k) values_[k] -= other.values_[k];
  return *this;
}

ScalarField& ScalarField::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
ScalarField operator*(double s, ScalarField a) { return a *= s; }

double max_abs_diff(const ScalarField& a, const ScalarField& b) {
  require_same_grid(a, b);
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

namespace {

// First derivative along one axis of a strided line of n values.
template <class Get>
double first_derivative(Get f, std::size_t k, std::size_t n, double h) {
  if (k == 0) return (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h);
  if (k + 1 == n) return (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h);
  return (f(k + 1) - f(k - 1)) / (2.0 * h);
}

template <class Get>
double second_derivative(Get f, std::size_t k, std::size_t n, double h) {
  if (k == 0) return (f(0) - 2.0 * f(1) + f(2)) / (h * h);
  if (k + 1 == n) return (f(n - 1) - 2.0 * f(n - 2) + f(n - 3)) / (h * h);
  return (f(k + 1) - 2.0 * f(k) + f(k - 1)) / (h * h);
}

ScalarField derivative_z(const ScalarField& f) {
  const Grid& g = f.grid();
  ScalarField out(g);
  const double h = g.hz();
  for (std::size_t j = 0; j < g.nr; ++j) {
    auto line = [&](std::size_t i) { return f(i, j); };
    for (std::size_t i = 0; i < g.nz; ++i) out(i, j) = first_derivative(line, i, g.nz, h);
  }
  return out;
}

ScalarField derivative_r(const ScalarField& f) {
  const Grid& g = f.grid();
  ScalarField out(g);
  const double h = g.hr();
  for (std::size_t i = 0; i < g.nz; ++i) {
    auto line = [&](std::size_t j) { return f(i, j); };
    for (std::size_t j = 0; j < g.nr; ++j) out(i, j) = first_derivative(line, j, g.nr, h);
  }
  return out;
}

void require_boundary_capable(const Grid& g) {
  if (g.nz < 4 || g.nr < 4) {
    throw GridError("frozen-curvature boundary needs at least 4 nodes per axis");
  }
}

}  // namespace

Gradient fd_gradient(const ScalarField& field) {
  field.require_finite("fd_gradient");
  return Gradient{derivative_z(field), derivative_r(field)};
}

Hessian fd_hessian(const ScalarField& field) {
  field.require_finite("fd_hessian");
  const Grid& g = field.grid();
  Hessian h{ScalarField(g), ScalarField(g), derivative_r(derivative_z(field))};
  const double hz = g.hz();
  const double hr = g.hr();
  for (std::size_t j = 0; j < g.nr; ++j) {
    auto line = [&](std::size_t i) { return field(i, j); };
    for (std::size_t i = 0; i < g.nz; ++i) h.dzz(i, j) = second_derivative(line, i, g.nz, hz);
  }
  for (std::size_t i = 0; i < g.nz; ++i) {
    auto line = [&](std::size_t j) { return field(i, j); };
    for (std::size_t j = 0; j < g.nr; ++j) h.drr(i, j) = second_derivative(line, j, g.nr, hr);
  }
  return h;
}

double boundary_curvature(const ScalarField& f, std::size_t i, std::size_t j) {
  const Grid& g = f.grid();
  if (i == 0) return f(0, j) - 2.0 * f(1, j) + f(2, j);
  if (i + 1 == g.nz) return f(g.nz - 1, j) - 2.0 * f(g.nz - 2, j) + f(g.nz - 3, j);
  if (j == 0) return f(i, 0) - 2.0 * f(i, 1) + f(i, 2);
  if (j + 1 == g.nr) return f(i, g.nr - 1) - 2.0 * f(i, g.nr - 2) + f(i, g.nr - 3);
  return 0.0;
}

std::vector<double> boundary_curvatures(const ScalarField& anchor) {
  const Grid& g = anchor.grid();
  require_boundary_capable(g);
  std::vector<double> kappa(g.size(), 0.0);
  for (std::size_t j = 0; j < g.nr; ++j) {
    for (std::size_t i = 0; i < g.nz; ++i) {
      if (g.is_boundary(i, j)) kappa[g.index(i, j)] = boundary_curvature(anchor, i, j);
    }
  }
  return kappa;
}

void apply_boundary_curvatures(ScalarField& f, std::span<const double> kappa) {
  const Grid& g = f.grid();
  require_boundary_capable(g);
  const std::size_t nz = g.nz;
  const std::size_t nr = g.nr;
  // r-edges first: the z-edge rule at the corners reads them.
  for (std::size_t i = 1; i + 1 < nz; ++i) {
    f(i, 0) = 2.0 * f(i, 1) - f(i, 2) + kappa[g.index(i, 0)];
    f(i, nr - 1) = 2.0 * f(i, nr - 2) - f(i, nr - 3) + kappa[g.index(i, nr - 1)];
  }
  for (std::size_t j = 0; j < nr; ++j) {
    f(0, j) = 2.0 * f(1, j) - f(2, j) + kappa[g.index(0, j)];
    f(nz - 1, j) = 2.0 * f(nz - 2, j) - f(nz - 3, j) + kappa[g.index(nz - 1, j)];
  }
}

void apply_frozen_curvature_boundary_inplace(ScalarField& field, const ScalarField& anchor) {
  if (!field.grid().same_space(anchor.grid())) {
    throw GridError("frozen-curvature anchor lives on a different grid");
  }
  const auto kappa = boundary_curvatures(anchor);
  apply_boundary_curvatures(field, kappa);
}

ScalarField apply_frozen_curvature_boundary(ScalarField field, const ScalarField& anchor) {
  apply_frozen_curvature_boundary_inplace(field, anchor);
  return field;
}

}  // namespace sotcal
