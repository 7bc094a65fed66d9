#include "sotcal/hjb.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sotcal {

void DualProblem::validate() const {
  state.validate();
  if (variant != Variant::Sequential) bounds.validate();
  const std::size_t n = payoffs.size();
  if (n == 0) throw std::invalid_argument("dual problem has no instruments");
  if (maturity_steps.size() != n || targets.size() != n) {
    throw std::invalid_argument("dual problem: one maturity and one target per payoff required");
  }
  if (rate.size() != state.grid.size()) throw GridError("rate array does not match the grid");
  if (resets.size() != n_steps() + 1) throw std::invalid_argument("anchor resets do not cover the horizon");
  if (reference.empty() || !reference.grid().same_space(state.grid)) {
    throw GridError("reference surfaces live on a different grid");
  }
  if (!reference.time_homogeneous() && reference.slice_count() < n_steps()) {
    throw std::invalid_argument("reference surfaces do not cover every time step");
  }
  for (const auto& p : payoffs) {
    if (!p.grid().same_space(state.grid)) throw GridError("payoff lives on a different grid");
  }
}

std::size_t maturity_step(double maturity_days, double dt_days) {
  const double steps = maturity_days / dt_days;
  const double rounded = std::round(steps);
  if (rounded < 1.0 || std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
    std::ostringstream msg;
    msg << "maturity of " << maturity_days << " days is not on the " << dt_days << "-day time lattice";
    throw std::invalid_argument(msg.str());
  }
  return static_cast<std::size_t>(rounded);
}

DualProblem make_dual_problem(StateSpace state, Variant variant, const Bounds& bounds,
                              ModelSurfaces reference, const QuoteSet& quotes, double barrier_power) {
  quotes.validate();
  DualProblem p;
  const double dt_days = state.grid.dt * 365.0;
  std::size_t top = 0;
  for (const auto& q : quotes.instruments) {
    p.maturity_steps.push_back(maturity_step(q.maturity_days, dt_days));
    top = std::max(top, p.maturity_steps.back());
  }
  state.grid.n_steps = top;
  p.state = state;
  p.variant = variant;
  p.bounds = bounds;
  p.barrier_power = barrier_power;
  p.reference = std::move(reference);
  for (const auto& q : quotes.instruments) {
    p.payoffs.push_back(scaled_payoff_field(q, state.grid, quotes.rate_scale));
    p.targets.push_back(q.scaled_price());
  }
  p.rate = state.rate_field();
  p.resets = anchor_resets(top, p.maturity_steps);
  p.validate();
  return p;
}

ScalarField add_jump(const ScalarField& phi, double lambda, const ScalarField& scaled_payoff) {
  ScalarField out = phi;
  if (lambda == 0.0) return out;
  if (!phi.grid().same_space(scaled_payoff.grid())) throw GridError("payoff lives on a different grid");
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += lambda * scaled_payoff[k];
  return out;
}

namespace {

struct NodeArrays {
  std::vector<double> a1, a2, b11, b12, b22, cost;
  explicit NodeArrays(std::size_t n) : a1(n), a2(n), b11(n), b12(n), b22(n), cost(n) {}
};

void fill_boundary_controls(const DualProblem& problem, std::size_t step, const ScalarField& phi,
                            SurfaceSlice& slice) {
  const Grid& g = phi.grid();
  const auto grad = fd_gradient(phi);
  const auto hess = fd_hessian(phi);
  const auto& ref = problem.reference.at(step);
  for (std::size_t j = 0; j < g.nr; ++j) {
    for (std::size_t i = 0; i < g.nz; ++i) {
      if (!g.is_boundary(i, j)) continue;
      const std::size_t k = g.index(i, j);
      const auto d = DualDerivatives::from_phi(grad.dz[k], grad.dr[k], hess.dzz[k], hess.drr[k],
                                               hess.dzr[k], problem.rate[k]);
      slice.set(k, optimal_control(problem.variant, d, ref.at(k), problem.bounds, problem.barrier_power).c);
    }
  }
}

}  // namespace

PolicyStep policy_iteration_step(const DualProblem& problem, ImplicitStepper& stepper,
                                 std::size_t step, const ScalarField& phi_next,
                                 const ScalarField& phi_guess, std::span<const double> kappa,
                                 const HjbOptions& opts) {
  const Grid& g = problem.state.grid;
  const bool cn = problem.time_scheme == TimeScheme::CrankNicolson;
  const double hz = g.hz(), hr = g.hr(), dt = cn ? 0.5 * g.dt : g.dt;
  const double change_factor = cn ? 2.0 : 1.0;
  const auto& ref = problem.reference.at(step);
  NodeArrays arr(g.size());
  PolicyStep out;
  out.controls = ref;
  ScalarField old = phi_guess;
  ScalarField rhs(g);
  old.require_finite("policy iteration");

  for (std::size_t it = 1; it <= opts.max_inner_iterations; ++it) {
    std::size_t strict = 0;
    for (std::size_t j = 1; j + 1 < g.nr; ++j) {
      for (std::size_t i = 1; i + 1 < g.nz; ++i) {
        const std::size_t k = g.index(i, j);
        const double fz = (old(i + 1, j) - old(i - 1, j)) / (2 * hz);
        const double fr = (old(i, j + 1) - old(i, j - 1)) / (2 * hr);
        const double fzz = (old(i + 1, j) - 2 * old(i, j) + old(i - 1, j)) / (hz * hz);
        const double frr = (old(i, j + 1) - 2 * old(i, j) + old(i, j - 1)) / (hr * hr);
        const double fzr =
            (old(i + 1, j + 1) - old(i + 1, j - 1) - old(i - 1, j + 1) + old(i - 1, j - 1)) / (4 * hz * hr);
        const auto d = DualDerivatives::from_phi(fz, fr, fzz, frr, fzr, problem.rate[k]);
        const auto oc = optimal_control(problem.variant, d, ref.at(k), problem.bounds, problem.barrier_power);
        arr.a1[k] = oc.c.alpha1;
        arr.a2[k] = oc.c.alpha2;
        arr.b11[k] = oc.c.beta11;
        arr.b12[k] = oc.c.beta12;
        arr.b22[k] = oc.c.beta22;
        arr.cost[k] = oc.cost;
        if (!oc.strict_interior) ++strict;
      }
    }
    stepper.assemble(arr.a1, arr.a2, arr.b11, arr.b12, arr.b22, problem.rate, dt);
    for (std::size_t k = 0; k < g.size(); ++k) rhs[k] = phi_next[k] - dt * arr.cost[k];
    ScalarField next = old;
    stepper.solve(next, rhs, kappa);
    const double change = change_factor * max_abs_diff(next, old);
    if (!std::isfinite(change)) {
      throw PolicyIterationError("policy iteration produced a non-finite value at step " + std::to_string(step),
                                 step, change);
    }
    out.changes.push_back(change);
    if (out.changes.size() >= 3 && change > out.changes[out.changes.size() - 2] &&
        change > 100.0 * opts.tolerance) {
      out.monotone = false;
    }
    old = std::move(next);
    out.iterations = it;
    out.strict_violations = strict;
    if (change < opts.tolerance) {
      for (std::size_t j = 1; j + 1 < g.nr; ++j) {
        for (std::size_t i = 1; i + 1 < g.nz; ++i) {
          const std::size_t k = g.index(i, j);
          out.controls.set(k, {arr.a1[k], arr.a2[k], arr.b11[k], arr.b12[k], arr.b22[k]});
        }
      }
      if (cn) {
        for (std::size_t k = 0; k < old.size(); ++k) old[k] = 2.0 * old[k] - phi_next[k];
      }
      out.phi = std::move(old);
      return out;
    }
  }
  std::ostringstream msg;
  msg << "policy iteration did not reach " << opts.tolerance << " within " << opts.max_inner_iterations
      << " iterations at step " << step << " (last change " << out.changes.back() << ")";
  throw PolicyIterationError(msg.str(), step, out.changes.back());
}

HjbSolution hjb_solve(const DualProblem& problem, const std::vector<double>& lambda, const HjbOptions& opts) {
  if (lambda.size() != problem.size()) throw std::invalid_argument("one multiplier per instrument required");
  for (double l : lambda) {
    if (!std::isfinite(l)) throw std::domain_error("non-finite multiplier");
  }
  const Grid& g = problem.state.grid;
  const std::size_t n_steps = problem.n_steps();
  ImplicitStepper stepper(g);
  HjbSolution sol;
  std::vector<SurfaceSlice> slices(n_steps);
  sol.inner_iterations.assign(n_steps, 0);
  if (opts.store_phi) sol.phi.assign(n_steps + 1, ScalarField(g));

  ScalarField phi(g);  // phi(t_{k+1}) before its jump
  std::vector<double> kappa;
  for (std::size_t k = n_steps; k-- > 0;) {
    ScalarField next = phi;
    for (std::size_t i = 0; i < problem.size(); ++i) {
      if (problem.maturity_steps[i] == k + 1) next = add_jump(next, lambda[i], problem.payoffs[i]);
    }
    if (problem.resets[k + 1]) kappa = boundary_curvatures(next);
    auto step = policy_iteration_step(problem, stepper, k, next, next, kappa, opts);
    if (opts.boundary_controls) {
      if (problem.time_scheme == TimeScheme::CrankNicolson) {
        ScalarField mid = step.phi;
        for (std::size_t q = 0; q < mid.size(); ++q) mid[q] = 0.5 * (mid[q] + next[q]);
        fill_boundary_controls(problem, k, mid, step.controls);
      } else {
        fill_boundary_controls(problem, k, step.phi, step.controls);
      }
    }
    sol.inner_iterations[k] = step.iterations;
    sol.strict_violations += step.strict_violations;
    if (!step.monotone) ++sol.monotonicity_violations;
    slices[k] = std::move(step.controls);
    phi = std::move(step.phi);
    if (opts.store_phi) sol.phi[k] = phi;
  }
  sol.phi0 = phi;
  sol.controls = ModelSurfaces(std::move(slices));
  sol.value = phi.interpolate(problem.state.z0, problem.state.y0);
  return sol;
}

SurfaceSlice controls_from_phi(const DualProblem& problem, std::size_t step, const ScalarField& phi,
                               std::size_t* strict_violations) {
  const Grid& g = phi.grid();
  const auto grad = fd_gradient(phi);
  const auto hess = fd_hessian(phi);
  const auto& ref = problem.reference.at(step);
  SurfaceSlice out(g);
  std::size_t strict = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto d = DualDerivatives::from_phi(grad.dz[k], grad.dr[k], hess.dzz[k], hess.drr[k],
                                             hess.dzr[k], problem.rate[k]);
    const auto oc = optimal_control(problem.variant, d, ref.at(k), problem.bounds, problem.barrier_power);
    out.set(k, oc.c);
    if (!oc.strict_interior) ++strict;
  }
  if (strict_violations) *strict_violations = strict;
  return out;
}

}  // namespace sotcal
