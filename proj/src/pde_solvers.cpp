#include "sotcal/pde_solvers.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sotcal {

namespace {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using ColMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

struct Term {
  std::size_t node;
  double w;
};

// Every node as an affine combination of interior nodes plus boundary
// curvatures, following the order used by apply_boundary_curvatures.
struct Affine {
  std::vector<Term> interior;
  std::vector<Term> kappa;
};

void add_scaled(std::vector<Term>& into, const std::vector<Term>& from, double s) {
  for (const auto& t : from) {
    auto it = std::find_if(into.begin(), into.end(), [&](const Term& x) { return x.node == t.node; });
    if (it == into.end()) {
      into.push_back({t.node, s * t.w});
    } else {
      it->w += s * t.w;
    }
  }
}

Affine extrapolate(const Affine& near, const Affine& far, std::size_t self) {
  Affine out;
  add_scaled(out.interior, near.interior, 2.0);
  add_scaled(out.interior, far.interior, -1.0);
  add_scaled(out.kappa, near.kappa, 2.0);
  add_scaled(out.kappa, far.kappa, -1.0);
  out.kappa.push_back({self, 1.0});
  return out;
}

std::vector<Affine> boundary_affine(const Grid& g) {
  const std::size_t nz = g.nz, nr = g.nr;
  std::vector<Affine> aff(g.size());
  for (std::size_t j = 1; j + 1 < nr; ++j) {
    for (std::size_t i = 1; i + 1 < nz; ++i) aff[g.index(i, j)].interior.push_back({g.index(i, j), 1.0});
  }
  for (std::size_t i = 1; i + 1 < nz; ++i) {
    aff[g.index(i, 0)] = extrapolate(aff[g.index(i, 1)], aff[g.index(i, 2)], g.index(i, 0));
    aff[g.index(i, nr - 1)] =
        extrapolate(aff[g.index(i, nr - 2)], aff[g.index(i, nr - 3)], g.index(i, nr - 1));
  }
  for (std::size_t j = 0; j < nr; ++j) {
    aff[g.index(0, j)] = extrapolate(aff[g.index(1, j)], aff[g.index(2, j)], g.index(0, j));
    aff[g.index(nz - 1, j)] =
        extrapolate(aff[g.index(nz - 2, j)], aff[g.index(nz - 3, j)], g.index(nz - 1, j));
  }
  return aff;
}

// Nine-point coefficients of L at one node, ordered s = (dj+1)*3 + (di+1).
void stencil(double a1, double a2, double b11, double b12, double b22, double r, double hz,
             double hr, double c[9]) {
  const double zz = 0.5 * b11 / (hz * hz);
  const double rr = 0.5 * b22 / (hr * hr);
  const double zr = 0.25 * b12 / (hz * hr);
  const double z1 = 0.5 * a1 / hz;
  const double r1 = 0.5 * a2 / hr;
  c[0] = zr;        // (-1,-1)
  c[1] = rr - r1;   // ( 0,-1)
  c[2] = -zr;       // (+1,-1)
  c[3] = zz - z1;   // (-1, 0)
  c[4] = -2.0 * zz - 2.0 * rr - r;
  c[5] = zz + z1;   // (+1, 0)
  c[6] = -zr;       // (-1,+1)
  c[7] = rr + r1;   // ( 0,+1)
  c[8] = zr;        // (+1,+1)
}

}  // namespace

struct ImplicitStepper::Impl {
  std::size_t nz = 0, nr = 0, n = 0;
  std::vector<std::size_t> row_node;          // interior row -> grid node
  std::vector<long> node_row;                 // grid node -> interior row or -1
  struct Slot {
    std::size_t slot;
    double w;
  };
  // Per row and stencil position: matrix slots and curvature terms.
  std::vector<std::vector<Slot>> slots;       // index = row * 9 + s
  std::vector<std::vector<Term>> kappa_terms; // index = row * 9 + s
  std::vector<std::size_t> diag_slot;
  std::vector<double> dtc;                    // dt * stencil coefficient, row * 9 + s
  SpMat a;
  Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> bicg;
  Vec b, x, r0;
};

ImplicitStepper::ImplicitStepper(const Grid& grid) : grid_(grid), impl_(std::make_unique<Impl>()) {
  grid_.validate();
  if (grid_.nz < 4 || grid_.nr < 4) throw GridError("implicit stepper needs at least 4 nodes per axis");
  auto& m = *impl_;
  m.nz = grid_.nz;
  m.nr = grid_.nr;
  m.n = (m.nz - 2) * (m.nr - 2);
  m.node_row.assign(grid_.size(), -1);
  for (std::size_t j = 1; j + 1 < m.nr; ++j) {
    for (std::size_t i = 1; i + 1 < m.nz; ++i) {
      m.node_row[grid_.index(i, j)] = static_cast<long>(m.row_node.size());
      m.row_node.push_back(grid_.index(i, j));
    }
  }
  const auto aff = boundary_affine(grid_);

  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t p = 0; p < m.n; ++p) {
    const std::size_t node = m.row_node[p];
    const std::size_t i = node % m.nz, j = node / m.nz;
    for (int s = 0; s < 9; ++s) {
      const std::size_t nb = grid_.index(i + s % 3 - 1, j + s / 3 - 1);
      for (const auto& t : aff[nb].interior) {
        trip.emplace_back(static_cast<int>(p), static_cast<int>(m.node_row[t.node]), 0.0);
      }
    }
  }
  m.a.resize(static_cast<long>(m.n), static_cast<long>(m.n));
  m.a.setFromTriplets(trip.begin(), trip.end());
  m.a.makeCompressed();

  auto slot_of = [&](std::size_t row, long col) {
    const int* inner = m.a.innerIndexPtr();
    const int beg = m.a.outerIndexPtr()[row], end = m.a.outerIndexPtr()[row + 1];
    const int* it = std::lower_bound(inner + beg, inner + end, static_cast<int>(col));
    return static_cast<std::size_t>(it - inner);
  };

  m.slots.resize(m.n * 9);
  m.kappa_terms.resize(m.n * 9);
  m.diag_slot.resize(m.n);
  m.dtc.assign(m.n * 9, 0.0);
  for (std::size_t p = 0; p < m.n; ++p) {
    const std::size_t node = m.row_node[p];
    const std::size_t i = node % m.nz, j = node / m.nz;
    m.diag_slot[p] = slot_of(p, static_cast<long>(p));
    for (int s = 0; s < 9; ++s) {
      const std::size_t nb = grid_.index(i + s % 3 - 1, j + s / 3 - 1);
      for (const auto& t : aff[nb].interior) m.slots[p * 9 + s].push_back({slot_of(p, m.node_row[t.node]), t.w});
      m.kappa_terms[p * 9 + s] = aff[nb].kappa;
    }
  }
  m.b.resize(static_cast<long>(m.n));
  m.x.resize(static_cast<long>(m.n));
  m.r0.resize(static_cast<long>(m.n));
}

ImplicitStepper::~ImplicitStepper() = default;
ImplicitStepper::ImplicitStepper(ImplicitStepper&&) noexcept = default;
ImplicitStepper& ImplicitStepper::operator=(ImplicitStepper&&) noexcept = default;

void ImplicitStepper::assemble(const LinearCoefficients& coeffs, double dt) {
  const auto& s = coeffs.slice;
  assemble(s.alpha1.values(), s.alpha2.values(), s.beta11.values(), s.beta12.values(),
           s.beta22.values(), coeffs.rate, dt);
}

void ImplicitStepper::assemble(std::span<const double> alpha1, std::span<const double> alpha2,
                               std::span<const double> beta11, std::span<const double> beta12,
                               std::span<const double> beta22, std::span<const double> rate, double dt) {
  auto& m = *impl_;
  if (rate.size() != grid_.size() || alpha1.size() != grid_.size()) {
    throw GridError("coefficient arrays do not match the stepper grid");
  }
  const double hz = grid_.hz(), hr = grid_.hr();
  double* val = m.a.valuePtr();
  std::fill(val, val + m.a.nonZeros(), 0.0);
  double c[9];
  for (std::size_t p = 0; p < m.n; ++p) {
    const std::size_t k = m.row_node[p];
    stencil(alpha1[k], alpha2[k], beta11[k], beta12[k], beta22[k], rate[k], hz, hr, c);
    val[m.diag_slot[p]] += 1.0;
    for (int s = 0; s < 9; ++s) {
      const double d = dt * c[s];
      m.dtc[p * 9 + s] = d;
      for (const auto& sl : m.slots[p * 9 + s]) val[sl.slot] -= d * sl.w;
    }
  }
  m.bicg.compute(m.a);
}

void ImplicitStepper::solve(ScalarField& u, const ScalarField& rhs, std::span<const double> kappa) {
  auto& m = *impl_;
  for (std::size_t p = 0; p < m.n; ++p) {
    double extra = 0.0;
    for (int s = 0; s < 9; ++s) {
      const auto& terms = m.kappa_terms[p * 9 + s];
      if (terms.empty()) continue;
      double kv = 0.0;
      for (const auto& t : terms) kv += t.w * kappa[t.node];
      extra += m.dtc[p * 9 + s] * kv;
    }
    m.b[static_cast<long>(p)] = rhs[m.row_node[p]] + extra;
    m.x[static_cast<long>(p)] = u[m.row_node[p]];
  }
  m.r0 = m.b - m.a * m.x;
  const double r0n = m.r0.norm();
  const double bn = std::max(m.b.norm(), 1e-300);
  last_iterations_ = 0;
  if (r0n > 0.0) {
    m.bicg.setTolerance(relative_tolerance);
    Vec delta = m.bicg.solve(m.r0);
    const double res = (m.r0 - m.a * delta).norm();
    if (m.bicg.info() == Eigen::Success && std::isfinite(res) && res <= 10.0 * relative_tolerance * r0n) {
      m.x += delta;
      last_iterations_ = static_cast<long>(m.bicg.iterations());
    } else {
      ++fallbacks_;
      ColMat ac(m.a);
      Eigen::SparseLU<ColMat> lu;
      lu.compute(ac);
      if (lu.info() != Eigen::Success) {
        throw SolverError("implicit step: sparse LU factorisation failed", res / bn);
      }
      m.x = lu.solve(m.b);
    }
  }
  last_residual_ = (m.b - m.a * m.x).norm() / bn;
  if (!std::isfinite(last_residual_) || last_residual_ > 1e-8) {
    std::ostringstream msg;
    msg << "implicit step did not converge (relative residual " << last_residual_ << ")";
    throw SolverError(msg.str(), last_residual_);
  }
  for (std::size_t p = 0; p < m.n; ++p) u[m.row_node[p]] = m.x[static_cast<long>(p)];
  apply_boundary_curvatures(u, kappa);
}

ScalarField implicit_backward_step(const ScalarField& next, const LinearCoefficients& coeffs,
                                   double dt, const ScalarField& anchor) {
  if (!next.grid().same_space(coeffs.slice.grid())) throw GridError("coefficients live on a different grid");
  ImplicitStepper stepper(next.grid());
  stepper.assemble(coeffs, dt);
  const auto kappa = boundary_curvatures(anchor);
  ScalarField u = next;
  stepper.solve(u, next, kappa);
  return u;
}

std::vector<bool> anchor_resets(std::size_t n_steps, const std::vector<std::size_t>& maturity_steps) {
  std::vector<bool> resets(n_steps + 1, false);
  resets[n_steps] = true;
  for (auto k : maturity_steps) {
    if (k == 0 || k > n_steps) throw std::invalid_argument("maturity step outside the time lattice");
    resets[k] = true;
  }
  return resets;
}

std::string to_string(TimeScheme s) {
  return s == TimeScheme::BackwardEuler ? "backward-euler" : "crank-nicolson";
}

TimeScheme time_scheme_from_string(const std::string& s) {
  if (s == "backward-euler") return TimeScheme::BackwardEuler;
  if (s == "crank-nicolson") return TimeScheme::CrankNicolson;
  throw std::invalid_argument("unknown time scheme '" + s + "'");
}

std::vector<ScalarField> implicit_price_all(const ModelSurfaces& surfaces, std::span<const double> rate,
                                            const std::vector<ScalarField>& payoffs,
                                            const std::vector<std::size_t>& maturity_steps,
                                            const std::vector<bool>& resets, TimeScheme scheme) {
  if (payoffs.size() != maturity_steps.size()) throw std::invalid_argument("one maturity per payoff required");
  if (payoffs.empty()) return {};
  const Grid& g = payoffs.front().grid();
  const std::size_t top = *std::max_element(maturity_steps.begin(), maturity_steps.end());
  if (top == 0 || top >= resets.size()) throw std::invalid_argument("maturity step outside the time lattice");
  ImplicitStepper stepper(g);
  std::vector<ScalarField> psi(payoffs.size(), ScalarField(g));
  std::vector<std::vector<double>> kappa(payoffs.size());
  for (std::size_t k = top; k-- > 0;) {
    for (std::size_t i = 0; i < payoffs.size(); ++i) {
      if (maturity_steps[i] == k + 1) psi[i] = payoffs[i];
      if (maturity_steps[i] >= k + 1 && resets[k + 1]) kappa[i] = boundary_curvatures(psi[i]);
    }
    const bool cn = scheme == TimeScheme::CrankNicolson;
    stepper.assemble(LinearCoefficients{surfaces.at(k), rate}, cn ? 0.5 * g.dt : g.dt);
    for (std::size_t i = 0; i < payoffs.size(); ++i) {
      if (maturity_steps[i] < k + 1) continue;
      const ScalarField next = psi[i];
      stepper.solve(psi[i], next, kappa[i]);
      if (cn) {
        for (std::size_t q = 0; q < psi[i].size(); ++q) psi[i][q] = 2.0 * psi[i][q] - next[q];
      }
    }
  }
  return psi;
}

// ---------------------------------------------------------------------------
// ADI

namespace {

void thomas(std::vector<double>& lo, std::vector<double>& di, std::vector<double>& up,
            std::vector<double>& rhs) {
  const std::size_t n = di.size();
  for (std::size_t k = 1; k < n; ++k) {
    const double m = lo[k] / di[k - 1];
    di[k] -= m * up[k - 1];
    rhs[k] -= m * rhs[k - 1];
  }
  rhs[n - 1] /= di[n - 1];
  for (std::size_t k = n - 1; k-- > 0;) rhs[k] = (rhs[k] - up[k] * rhs[k + 1]) / di[k];
}

struct AdiOps {
  const Grid& g;
  const SurfaceSlice& s;
  std::span<const double> rate;
  double hz, hr;

  double a1(const ScalarField& u, std::size_t i, std::size_t j) const {
    const std::size_t k = g.index(i, j);
    return s.alpha1[k] * (u(i + 1, j) - u(i - 1, j)) / (2 * hz) +
           0.5 * s.beta11[k] * (u(i + 1, j) - 2 * u(i, j) + u(i - 1, j)) / (hz * hz) - 0.5 * rate[k] * u(i, j);
  }
  double a2(const ScalarField& u, std::size_t i, std::size_t j) const {
    const std::size_t k = g.index(i, j);
    return s.alpha2[k] * (u(i, j + 1) - u(i, j - 1)) / (2 * hr) +
           0.5 * s.beta22[k] * (u(i, j + 1) - 2 * u(i, j) + u(i, j - 1)) / (hr * hr) - 0.5 * rate[k] * u(i, j);
  }
  double a0(const ScalarField& u, std::size_t i, std::size_t j) const {
    const std::size_t k = g.index(i, j);
    return s.beta12[k] * (u(i + 1, j + 1) - u(i + 1, j - 1) - u(i - 1, j + 1) + u(i - 1, j - 1)) / (4 * hz * hr);
  }
};

// (I - w A1) y = rhs along each interior row; boundary ends eliminated.
void sweep_z(const AdiOps& op, double w, const ScalarField& rhs, ScalarField& y,
             std::span<const double> kappa) {
  const Grid& g = op.g;
  const std::size_t m = g.nz - 2;
  std::vector<double> lo(m), di(m), up(m), b(m);
  for (std::size_t j = 1; j + 1 < g.nr; ++j) {
    for (std::size_t q = 0; q < m; ++q) {
      const std::size_t i = q + 1, k = g.index(i, j);
      const double zz = 0.5 * op.s.beta11[k] / (op.hz * op.hz);
      const double z1 = 0.5 * op.s.alpha1[k] / op.hz;
      lo[q] = -w * (zz - z1);
      up[q] = -w * (zz + z1);
      di[q] = 1.0 - w * (-2.0 * zz - 0.5 * op.rate[k]);
      b[q] = rhs(i, j);
    }
    // u0 = 2u1 - u2 + k0 and u_{n-1} = 2u_{n-2} - u_{n-3} + k_{n-1}.
    di[0] += 2.0 * lo[0];
    up[0] -= lo[0];
    b[0] -= lo[0] * kappa[g.index(0, j)];
    di[m - 1] += 2.0 * up[m - 1];
    lo[m - 1] -= up[m - 1];
    b[m - 1] -= up[m - 1] * kappa[g.index(g.nz - 1, j)];
    lo[0] = 0.0;
    up[m - 1] = 0.0;
    thomas(lo, di, up, b);
    for (std::size_t q = 0; q < m; ++q) y(q + 1, j) = b[q];
  }
  apply_boundary_curvatures(y, kappa);
}

void sweep_r(const AdiOps& op, double w, const ScalarField& rhs, ScalarField& y,
             std::span<const double> kappa) {
  const Grid& g = op.g;
  const std::size_t m = g.nr - 2;
  std::vector<double> lo(m), di(m), up(m), b(m);
  for (std::size_t i = 1; i + 1 < g.nz; ++i) {
    for (std::size_t q = 0; q < m; ++q) {
      const std::size_t j = q + 1, k = g.index(i, j);
      const double rr = 0.5 * op.s.beta22[k] / (op.hr * op.hr);
      const double r1 = 0.5 * op.s.alpha2[k] / op.hr;
      lo[q] = -w * (rr - r1);
      up[q] = -w * (rr + r1);
      di[q] = 1.0 - w * (-2.0 * rr - 0.5 * op.rate[k]);
      b[q] = rhs(i, j);
    }
    di[0] += 2.0 * lo[0];
    up[0] -= lo[0];
    b[0] -= lo[0] * kappa[g.index(i, 0)];
    di[m - 1] += 2.0 * up[m - 1];
    lo[m - 1] -= up[m - 1];
    b[m - 1] -= up[m - 1] * kappa[g.index(i, g.nr - 1)];
    lo[0] = 0.0;
    up[m - 1] = 0.0;
    thomas(lo, di, up, b);
    for (std::size_t q = 0; q < m; ++q) y(i, q + 1) = b[q];
  }
  apply_boundary_curvatures(y, kappa);
}

void adi_step(const AdiOps& op, double dt, double theta, bool corrector, ScalarField& v,
              std::span<const double> kappa) {
  const Grid& g = op.g;
  ScalarField y0(g), rhs(g), y1(g), y2(g);
  ScalarField a1v(g), a2v(g), a0v(g);
  for (std::size_t j = 1; j + 1 < g.nr; ++j) {
    for (std::size_t i = 1; i + 1 < g.nz; ++i) {
      a0v(i, j) = op.a0(v, i, j);
      a1v(i, j) = op.a1(v, i, j);
      a2v(i, j) = op.a2(v, i, j);
      y0(i, j) = v(i, j) + dt * (a0v(i, j) + a1v(i, j) + a2v(i, j));
    }
  }
  apply_boundary_curvatures(y0, kappa);
  auto implicit_pair = [&](const ScalarField& start) {
    for (std::size_t k = 0; k < g.size(); ++k) rhs[k] = start[k] - theta * dt * a1v[k];
    y1 = start;
    sweep_z(op, theta * dt, rhs, y1, kappa);
    for (std::size_t k = 0; k < g.size(); ++k) rhs[k] = y1[k] - theta * dt * a2v[k];
    y2 = y1;
    sweep_r(op, theta * dt, rhs, y2, kappa);
  };
  implicit_pair(y0);
  if (corrector) {
    ScalarField c0 = y0;
    for (std::size_t j = 1; j + 1 < g.nr; ++j) {
      for (std::size_t i = 1; i + 1 < g.nz; ++i) c0(i, j) += 0.5 * dt * (op.a0(y2, i, j) - a0v(i, j));
    }
    apply_boundary_curvatures(c0, kappa);
    implicit_pair(c0);
  }
  v = y2;
}

}  // namespace

ScalarField adi_forward_price(const ModelSurfaces& surfaces, std::span<const double> rate,
                              const ScalarField& payoff, std::size_t maturity_step,
                              const std::vector<bool>& resets, const AdiOptions& opts) {
  const Grid& g = payoff.grid();
  if (g.nz < 4 || g.nr < 4) throw GridError("ADI pricing needs at least 4 nodes per axis");
  if (maturity_step == 0 || maturity_step >= resets.size()) {
    throw std::invalid_argument("maturity is not on the time lattice");
  }
  if (rate.size() != g.size()) throw GridError("rate array does not match the grid");
  ScalarField v = payoff;
  std::vector<double> kappa;
  for (std::size_t k = maturity_step; k-- > 0;) {
    if (resets[k + 1]) kappa = boundary_curvatures(v);
    AdiOps op{g, surfaces.at(k), rate, g.hz(), g.hr()};
    adi_step(op, g.dt, opts.theta, opts.corrector, v, kappa);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Fokker-Planck

double DensityPath::total_mass(std::size_t step) const {
  if (step >= mass.size() || !stored[step]) throw std::out_of_range("density slice not stored");
  double s = 0.0;
  for (double v : mass[step].values()) s += v;
  return s;
}

double DensityPath::expectation(const ScalarField& payoff, std::size_t step) const {
  if (step >= mass.size() || !stored[step]) throw std::out_of_range("density slice not stored");
  double s = 0.0;
  for (std::size_t k = 0; k < payoff.size(); ++k) s += payoff[k] * mass[step][k];
  return s;
}

namespace {

ColMat fp_matrix(const SurfaceSlice& s, std::span<const double> rate, double dt) {
  const Grid& g = s.grid();
  const std::size_t nz = g.nz, nr = g.nr;
  const double hz = g.hz(), hr = g.hr();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(g.size() * 20);
  for (std::size_t k = 0; k < g.size(); ++k) trip.emplace_back(k, k, 1.0 + dt * rate[k]);

  // A face flux is sum c_n m_n; it leaves `from` and enters `to`.
  auto flux = [&](std::size_t from, std::size_t to, std::size_t n, double c) {
    trip.emplace_back(from, n, dt * c);
    trip.emplace_back(to, n, -dt * c);
  };
  // d/dr of q = beta12 m at node (i, j), as weights on nodes.
  auto ddr = [&](std::size_t i, std::size_t j, double scale, std::size_t from, std::size_t to) {
    const std::size_t jl = j == 0 ? 0 : j - 1, jh = j + 1 == nr ? j : j + 1;
    const double h = hr * static_cast<double>(jh - jl);
    flux(from, to, g.index(i, jh), scale * s.beta12[g.index(i, jh)] / h);
    flux(from, to, g.index(i, jl), -scale * s.beta12[g.index(i, jl)] / h);
  };
  auto ddz = [&](std::size_t i, std::size_t j, double scale, std::size_t from, std::size_t to) {
    const std::size_t il = i == 0 ? 0 : i - 1, ih = i + 1 == nz ? i : i + 1;
    const double h = hz * static_cast<double>(ih - il);
    flux(from, to, g.index(ih, j), scale * s.beta12[g.index(ih, j)] / h);
    flux(from, to, g.index(il, j), -scale * s.beta12[g.index(il, j)] / h);
  };

  for (std::size_t j = 0; j < nr; ++j) {
    for (std::size_t i = 0; i + 1 < nz; ++i) {
      const std::size_t l = g.index(i, j), r = g.index(i + 1, j);
      const double w = 1.0 / hz;
      flux(l, r, l, w * (0.5 * s.alpha1[l] + 0.5 * s.beta11[l] / hz));
      flux(l, r, r, w * (0.5 * s.alpha1[r] - 0.5 * s.beta11[r] / hz));
      ddr(i, j, -0.25 * w, l, r);
      ddr(i + 1, j, -0.25 * w, l, r);
    }
  }
  for (std::size_t j = 0; j + 1 < nr; ++j) {
    for (std::size_t i = 0; i < nz; ++i) {
      const std::size_t d = g.index(i, j), u = g.index(i, j + 1);
      const double w = 1.0 / hr;
      flux(d, u, d, w * (0.5 * s.alpha2[d] + 0.5 * s.beta22[d] / hr));
      flux(d, u, u, w * (0.5 * s.alpha2[u] - 0.5 * s.beta22[u] / hr));
      ddz(i, j, -0.25 * w, d, u);
      ddz(i, j + 1, -0.25 * w, d, u);
    }
  }
  ColMat a(static_cast<long>(g.size()), static_cast<long>(g.size()));
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  return a;
}

}  // namespace

DensityPath fokker_planck_forward(const ModelSurfaces& surfaces, std::span<const double> rate,
                                  double z0, double y0, std::size_t n_steps,
                                  const std::vector<std::size_t>& keep_steps,
                                  const FokkerPlanckOptions& opts) {
  const Grid& g = surfaces.grid();
  if (!g.contains(z0, y0)) throw std::invalid_argument("initial point outside the grid");
  if (rate.size() != g.size()) throw GridError("rate array does not match the grid");
  DensityPath path;
  path.mass.resize(n_steps + 1);
  path.stored.assign(n_steps + 1, false);
  std::vector<bool> keep(n_steps + 1, false);
  for (auto k : keep_steps) {
    if (k <= n_steps) keep[k] = true;
  }
  const std::size_t every = std::max<std::size_t>(opts.store_every, 1);

  Vec m = Vec::Zero(static_cast<long>(g.size()));
  const auto st = bilinear_stencil(g, z0, y0);
  for (int q = 0; q < 4; ++q) m[static_cast<long>(st.nodes[q])] += st.weights[q];
  auto store = [&](std::size_t k) {
    if (k % every == 0 || keep[k] || k == n_steps) {
      path.mass[k] = ScalarField(g, std::vector<double>(m.data(), m.data() + m.size()));
      path.stored[k] = true;
    }
  };
  store(0);

  Eigen::SparseLU<ColMat> lu;
  bool pattern = false;
  long factored = -1;
  const bool cn = opts.time_scheme == TimeScheme::CrankNicolson;
  // Both the Crank-Nicolson step and the Rannacher half steps use I - (dt/2) A.
  const double h = cn ? 0.5 * g.dt : g.dt;
  Vec disc_new(static_cast<long>(g.size())), disc_old(static_cast<long>(g.size()));
  for (std::size_t k = 0; k < g.size(); ++k) {
    disc_new[static_cast<long>(k)] = 1.0 + h * rate[k];
    disc_old[static_cast<long>(k)] = cn ? 1.0 - h * rate[k] : 1.0;
  }
  for (std::size_t k = 0; k < n_steps; ++k) {
    const long slice_id = surfaces.time_homogeneous() ? 0 : static_cast<long>(k);
    if (slice_id != factored) {
      const ColMat a = fp_matrix(surfaces.at(k), rate, h);
      if (!pattern) {
        lu.analyzePattern(a);
        pattern = true;
      }
      lu.factorize(a);
      if (lu.info() != Eigen::Success) throw SolverError("Fokker-Planck factorisation failed", 0.0);
      factored = slice_id;
    }
    Vec next;
    double before = 0.0, after = 0.0;
    if (!cn) {
      before = m.sum();
      next = lu.solve(m);
      after = next.cwiseProduct(disc_new).sum();
    } else if (k < opts.rannacher_steps) {
      Vec half = lu.solve(m);
      next = lu.solve(half);
      // each half step conserves sum(old) = sum(new (1 + h r))
      before = m.sum() + half.sum();
      after = half.cwiseProduct(disc_new).sum() + next.cwiseProduct(disc_new).sum();
    } else {
      const Vec x = lu.solve(m);
      next = 2.0 * x - m;
      before = m.cwiseProduct(disc_old).sum();
      after = next.cwiseProduct(disc_new).sum();
    }
    const double leak = std::abs(after - before) / std::max(std::abs(before), 1e-300);
    path.max_leak = std::max(path.max_leak, leak);
    if (!(leak <= opts.leak_tolerance)) {
      std::ostringstream msg;
      msg << "Fokker-Planck mass leak " << leak << " at step " << k;
      throw MassLeakError(msg.str());
    }
    if (opts.clip_negative && next.minCoeff() < 0.0) {
      const double total = next.sum();
      double negative = 0.0;
      for (long q = 0; q < next.size(); ++q) {
        if (next[q] < 0.0) {
          negative -= next[q];
          next[q] = 0.0;
        }
      }
      const double kept = next.sum();
      if (kept > 0.0) next *= total / kept;
      ++path.clipped_steps;
      path.clipped_mass += negative;
    }
    m = std::move(next);
    store(k + 1);
  }
  return path;
}

}  // namespace sotcal
