#include "sotcal/surfaces.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sotcal {

void StateSpace::validate() const {
  grid.validate();
  if (!(rate_scale > 0.0)) throw GridError("rate scale must be positive");
  if (!grid.contains(z0, y0)) {
    std::ostringstream msg;
    msg << "initial state (" << z0 << ", " << y0 << ") lies outside the grid";
    throw GridError(msg.str());
  }
}

std::vector<double> StateSpace::rate_field() const {
  std::vector<double> rate(grid.size());
  for (std::size_t j = 0; j < grid.nr; ++j) {
    const double r = short_rate(j);
    for (std::size_t i = 0; i < grid.nz; ++i) rate[grid.index(i, j)] = r;
  }
  return rate;
}

SurfaceSlice::SurfaceSlice(const Grid& grid)
    : alpha1(grid), alpha2(grid), beta11(grid), beta12(grid), beta22(grid) {}

void SurfaceSlice::set(std::size_t k, const Characteristics& c) {
  alpha1[k] = c.alpha1;
  alpha2[k] = c.alpha2;
  beta11[k] = c.beta11;
  beta12[k] = c.beta12;
  beta22[k] = c.beta22;
}

ModelSurfaces::ModelSurfaces(SurfaceSlice homogeneous) { slices_.push_back(std::move(homogeneous)); }

ModelSurfaces::ModelSurfaces(std::vector<SurfaceSlice> slices) : slices_(std::move(slices)) {
  if (slices_.empty()) throw SurfaceError("model surfaces need at least one slice");
  for (const auto& s : slices_) {
    if (!s.grid().same_space(slices_.front().grid())) {
      throw GridError("surface slices live on different grids");
    }
  }
}

ModelSurfaces ModelSurfaces::expanded(std::size_t n_steps) const {
  if (!time_homogeneous()) {
    if (slices_.size() != n_steps) throw SurfaceError("surface path length does not match the lattice");
    return *this;
  }
  return ModelSurfaces(std::vector<SurfaceSlice>(n_steps, slices_.front()));
}

bool is_psd(const Characteristics& c, double tol) {
  const double scale = std::max({1.0, std::abs(c.beta11), std::abs(c.beta22)});
  return c.beta11 >= -tol && c.beta22 >= -tol &&
         c.beta12 * c.beta12 <= c.beta11 * c.beta22 + tol * scale * scale;
}

void ModelSurfaces::check_psd(double tol) const {
  for (std::size_t s = 0; s < slices_.size(); ++s) {
    const auto& slice = slices_[s];
    for (std::size_t k = 0; k < slice.beta11.size(); ++k) {
      const auto c = slice.at(k);
      if (!is_psd(c, tol)) {
        std::ostringstream msg;
        msg << "covariance not positive semidefinite at slice " << s << ", node " << k
            << " (beta11=" << c.beta11 << ", beta12=" << c.beta12 << ", beta22=" << c.beta22 << ")";
        throw SurfaceError(msg.str());
      }
    }
  }
}

}  // namespace sotcal
