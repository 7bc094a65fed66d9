#include "sotcal/dual_calibration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sotcal/lbfgs.hpp"
#include "sotcal/pde_solvers.hpp"

namespace sotcal {

std::string to_string(GradientBackend b) { return b == GradientBackend::Implicit ? "implicit" : "adi"; }

GradientBackend gradient_backend_from_string(const std::string& s) {
  if (s == "implicit") return GradientBackend::Implicit;
  if (s == "adi") return GradientBackend::Adi;
  throw std::invalid_argument("unknown gradient backend '" + s + "'");
}

void CalibrationConfig::validate() const {
  if (!(eps1 > 0) || !(eps2 > 0)) throw std::invalid_argument("eps1 and eps2 must be positive");
  if (variant != Variant::Sequential) bounds.validate();
  if (variant == Variant::Sequential) {
    if (!rho_ref) throw std::invalid_argument("the sequential variant needs rho_ref");
    if (!(barrier_power > 2)) throw std::invalid_argument("barrier power must exceed 2");
  }
  if (max_evaluations == 0) throw std::invalid_argument("max_evaluations must be positive");
  if (min_smoothing_iterations > smoothing_iterations) {
    throw std::invalid_argument("min_smoothing_iterations exceeds smoothing_iterations");
  }
  if (!(smoothing_radius >= 0)) throw std::invalid_argument("smoothing radius must be non-negative");
}

double dual_objective(const DualProblem& problem, const std::vector<double>& lambda, const HjbSolution& sol) {
  if (lambda.size() != problem.size()) throw std::invalid_argument("one multiplier per instrument required");
  double s = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) s += lambda[i] * problem.targets[i];
  return s - sol.value;
}

std::vector<double> model_prices_scaled(const DualProblem& problem, const ModelSurfaces& surfaces,
                                        GradientBackend backend) {
  const auto& st = problem.state;
  std::vector<double> out(problem.size());
  if (backend == GradientBackend::Implicit) {
    const auto psi = implicit_price_all(surfaces, problem.rate, problem.payoffs, problem.maturity_steps,
                                        problem.resets, problem.time_scheme);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = psi[i].interpolate(st.z0, st.y0);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = adi_forward_price(surfaces, problem.rate, problem.payoffs[i], problem.maturity_steps[i],
                                 problem.resets)
                   .interpolate(st.z0, st.y0);
    }
  }
  return out;
}

std::vector<double> dual_gradient(const DualProblem& problem, const HjbSolution& sol, GradientBackend backend) {
  auto g = model_prices_scaled(problem, sol.controls, backend);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = problem.targets[i] - g[i];
  return g;
}

DualEvaluation evaluate_dual(const DualProblem& problem, const std::vector<double>& lambda,
                             const HjbOptions& hjb_opts, GradientBackend backend) {
  DualEvaluation ev;
  ev.lambda = lambda;
  ev.hjb = hjb_solve(problem, lambda, hjb_opts);
  ev.value = dual_objective(problem, lambda, ev.hjb);
  ev.model_prices_scaled = model_prices_scaled(problem, ev.hjb.controls, backend);
  ev.gradient.resize(problem.size());
  for (std::size_t i = 0; i < problem.size(); ++i) ev.gradient[i] = problem.targets[i] - ev.model_prices_scaled[i];
  return ev;
}

ModelSurfaces prepare_reference(const CalibrationConfig& cfg, const ModelSurfaces& reference,
                                const StateSpace& state) {
  if (reference.empty()) throw std::invalid_argument("empty reference surfaces");
  if (cfg.variant != Variant::Sequential) return reference;
  if (!cfg.rho_ref) throw std::invalid_argument("the sequential variant needs rho_ref");
  ModelSurfaces out = reference;
  const std::size_t n = out.slice_count();
  for (std::size_t k = 0; k < n; ++k) {
    auto& s = out.mutable_at(k);
    for (std::size_t q = 0; q < s.beta11.size(); ++q) {
      if (!cfg.rho_ref->from_reference) s.beta12[q] = cfg.rho_ref->rho_ref * s.beta22[q] / state.rate_scale;
      const double shift = s.beta22[q] > 0 ? s.beta12[q] * s.beta12[q] / s.beta22[q] : 0.0;
      if (!(s.beta11[q] > shift)) {
        std::ostringstream msg;
        msg << "sequential barrier is empty at node " << q << " of slice " << k << ": beta11 " << s.beta11[q]
            << " <= " << shift;
        throw std::domain_error(msg.str());
      }
    }
  }
  return out;
}

ScalarField gaussian_smooth(const ScalarField& field, double radius) {
  const Grid& g = field.grid();
  const long rad = static_cast<long>(std::floor(radius));
  if (rad <= 0) return field;
  const double sigma = radius / 2.0;
  std::vector<double> w(static_cast<std::size_t>(2 * rad + 1));
  for (long d = -rad; d <= rad; ++d) w[static_cast<std::size_t>(d + rad)] = std::exp(-0.5 * d * d / (sigma * sigma));
  const long nz = static_cast<long>(g.nz), nr = static_cast<long>(g.nr);
  ScalarField out(g);
  for (long j = 0; j < nr; ++j) {
    for (long i = 0; i < nz; ++i) {
      double s = 0.0, ws = 0.0;
      for (long dj = -rad; dj <= rad; ++dj) {
        const long jj = j + dj;
        if (jj < 0 || jj >= nr) continue;
        for (long di = -rad; di <= rad; ++di) {
          const long ii = i + di;
          if (ii < 0 || ii >= nz) continue;
          const double wk = w[static_cast<std::size_t>(di + rad)] * w[static_cast<std::size_t>(dj + rad)];
          s += wk * field(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
          ws += wk;
        }
      }
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = s / ws;
    }
  }
  return out;
}

ModelSurfaces smooth_reference_iteration(const ModelSurfaces& controls, const ModelSurfaces& pinned,
                                         const DualProblem& problem, double radius) {
  const std::size_t n = problem.n_steps();
  if (!controls.time_homogeneous() && controls.slice_count() < n) {
    throw std::invalid_argument("controls do not cover the horizon");
  }
  const Bounds& bd = problem.bounds;
  std::vector<SurfaceSlice> slices;
  slices.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = controls.at(k);
    const auto& ref = pinned.at(k);
    SurfaceSlice s(c.grid());
    s.beta11 = gaussian_smooth(c.beta11, radius);
    switch (problem.variant) {
      case Variant::Joint:
        s.alpha2 = gaussian_smooth(c.alpha2, radius);
        s.beta22 = gaussian_smooth(c.beta22, radius);
        s.beta12 = gaussian_smooth(c.beta12, radius);
        break;
      case Variant::FullSequential:
      case Variant::Lsv:
        s.alpha2 = ref.alpha2;
        s.beta22 = ref.beta22;
        s.beta12 = gaussian_smooth(c.beta12, radius);
        break;
      case Variant::Sequential:
        s.alpha2 = ref.alpha2;
        s.beta22 = ref.beta22;
        s.beta12 = ref.beta12;
        break;
    }
    for (std::size_t q = 0; q < s.beta11.size(); ++q) {
      double b11 = s.beta11[q], b22 = s.beta22[q], b12 = s.beta12[q];
      if (problem.variant == Variant::Sequential) {
        const double shift = b22 > 0 ? b12 * b12 / b22 : 0.0;
        b11 = std::max(b11, shift + 1e-8 * std::max(1.0, shift));
      } else {
        b11 = std::clamp(b11, bd.beta11_lo, bd.beta11_hi);
        if (problem.variant == Variant::Joint) b22 = std::clamp(b22, bd.beta22_lo, bd.beta22_hi);
        const double band = std::sqrt(std::max(b11 * b22, 0.0));
        b12 = std::clamp(b12, -band, band);
      }
      s.set(q, {problem.rate[q] - 0.5 * b11, s.alpha2[q], b11, b12, b22});
      if (!is_psd(s.at(q), 1e-12)) throw SurfaceError("smoothed reference is not positive semidefinite");
    }
    slices.push_back(std::move(s));
  }
  return ModelSurfaces(std::move(slices));
}

StateSpace state_for_quotes(StateSpace state, const QuoteSet& quotes) {
  quotes.validate();
  std::size_t top = 0;
  for (const auto& q : quotes.instruments) top = std::max(top, maturity_step(q.maturity_days, state.grid.dt * 365.0));
  state.grid.n_steps = top;
  return state;
}

namespace {

double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

struct EpochOutcome {
  DualEvaluation eval;
  LbfgsResult lbfgs;
  std::size_t policy_iterations = 0;
};

std::size_t total_inner(const HjbSolution& s) {
  return std::accumulate(s.inner_iterations.begin(), s.inner_iterations.end(), std::size_t{0});
}

EpochOutcome run_epoch(const CalibrationConfig& cfg, const DualProblem& problem, const std::vector<double>& start,
                       std::vector<double>& history, std::size_t epoch) {
  HjbOptions hopts;
  hopts.tolerance = cfg.eps2;
  hopts.max_inner_iterations = cfg.max_inner_iterations;

  std::optional<DualEvaluation> last;
  std::size_t failures = 0;
  std::size_t work = 0;
  Objective f = [&](const std::vector<double>& lambda, std::vector<double>& grad) {
    try {
      last = evaluate_dual(problem, lambda, hopts, cfg.backend);
      work += total_inner(last->hjb);
    } catch (const PolicyIterationError& e) {
      ++failures;
      if (cfg.verbose) std::clog << "  evaluation failed: " << e.what() << '\n';
      last.reset();
      grad.assign(lambda.size(), 0.0);
      return std::numeric_limits<double>::infinity();
    } catch (const SolverError& e) {
      ++failures;
      if (cfg.verbose) std::clog << "  evaluation failed: " << e.what() << '\n';
      last.reset();
      grad.assign(lambda.size(), 0.0);
      return std::numeric_limits<double>::infinity();
    }
    grad.resize(lambda.size());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = -last->gradient[i];
    return -last->value;
  };

  LbfgsOptions lo;
  lo.gradient_tolerance = cfg.eps1;
  lo.max_evaluations = cfg.max_evaluations;
  lo.max_iterations = cfg.max_iterations;
  lo.initial_step = cfg.initial_step;
  auto callback = [&](const LbfgsResult& r) {
    if (cfg.verbose) {
      std::clog << "epoch " << epoch << " iter " << r.iterations << " evals " << r.evaluations << " L "
                << -r.f << " |grad| " << r.gradient_norms.back() << '\n';
    }
    return true;
  };
  EpochOutcome out;
  out.lbfgs = lbfgs_minimize(f, start, lo, callback);
  history.insert(history.end(), out.lbfgs.gradient_norms.begin(), out.lbfgs.gradient_norms.end());
  if (last && last->lambda == out.lbfgs.x) {
    out.eval = std::move(*last);
  } else {
    out.eval = evaluate_dual(problem, out.lbfgs.x, hopts, cfg.backend);
    work += total_inner(out.eval.hjb);
  }
  out.policy_iterations = work;
  return out;
}

}  // namespace

CalibrationResult calibrate(const CalibrationConfig& cfg, const QuoteSet& quotes, const ModelSurfaces& reference,
                            const StateSpace& state, const QuoteConventions& conv) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const StateSpace st = state_for_quotes(state, quotes);
  const ModelSurfaces pinned = prepare_reference(cfg, reference, st);
  DualProblem problem = make_dual_problem(st, cfg.variant, cfg.bounds, pinned, quotes, cfg.barrier_power);
  problem.time_scheme = cfg.time_scheme;

  CalibrationResult res;
  res.variant = cfg.variant;
  std::vector<double> lambda(problem.size(), 0.0);
  std::optional<EpochOutcome> chosen;
  bool chosen_converged = false;
  for (std::size_t epoch = 0; epoch <= cfg.smoothing_iterations; ++epoch) {
    const auto te = std::chrono::steady_clock::now();
    auto outcome = run_epoch(cfg, problem, lambda, res.gradient_history, epoch);
    EpochLog log;
    log.epoch = epoch;
    log.iterations = outcome.lbfgs.iterations;
    log.evaluations = outcome.lbfgs.evaluations;
    log.policy_iterations = outcome.policy_iterations;
    res.policy_iterations += outcome.policy_iterations;
    log.gradient_norm = sup_norm(outcome.eval.gradient);
    log.dual_value = outcome.eval.value;
    log.converged = outcome.lbfgs.converged() && log.gradient_norm <= cfg.eps1;
    log.status = to_string(outcome.lbfgs.status);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - te).count();
    res.epochs.push_back(log);
    if (cfg.verbose) {
      std::clog << "epoch " << epoch << " done: " << log.status << ", |grad| " << log.gradient_norm << '\n';
    }

    const bool last_epoch = epoch == cfg.smoothing_iterations;
    const bool done = log.converged && epoch >= cfg.min_smoothing_iterations;
    ModelSurfaces next_ref;
    if (!done && !last_epoch) {
      next_ref = smooth_reference_iteration(outcome.eval.hjb.controls, pinned, problem, cfg.smoothing_radius);
    }
    lambda = cfg.warm_start ? outcome.eval.lambda : std::vector<double>(problem.size(), 0.0);
    if (log.converged || !chosen_converged) {
      chosen = std::move(outcome);
      chosen_converged = log.converged;
    }
    if (done || last_epoch) break;
    problem.reference = std::move(next_ref);
  }

  auto& ev = chosen->eval;
  res.lambda = ev.lambda;
  res.surfaces = std::move(ev.hjb.controls);
  res.gradient = ev.gradient;
  res.gradient_norm = sup_norm(ev.gradient);
  res.dual_value = ev.value;
  res.calibrated = chosen_converged;
  res.strict_violations = ev.hjb.strict_violations;
  res.monotonicity_violations = ev.hjb.monotonicity_violations;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const auto& q = quotes.instruments[i];
    const double price = ev.model_prices_scaled[i] * q.vega_weight;
    res.model_prices.push_back(price);
    res.market_prices.push_back(q.market_price);
    double iv = std::numeric_limits<double>::quiet_NaN();
    try {
      iv = implied_vol(q, price, conv);
    } catch (const PricingError&) {
    }
    res.model_ivs.push_back(iv);
    res.market_ivs.push_back(q.market_iv ? *q.market_iv : std::numeric_limits<double>::quiet_NaN());
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream msg;
  if (res.calibrated) {
    msg << "calibrated: |grad L| = " << res.gradient_norm << " < " << cfg.eps1;
  } else {
    msg << "not calibrated: |grad L| = " << res.gradient_norm << " after " << res.epochs.size() << " epoch(s) ("
        << res.epochs.back().status << ")";
  }
  res.message = msg.str();
  return res;
}

CalibrationResult calibrate(const CalibrationConfig& cfg, const QuoteSet& quotes, const ReferenceModel& reference,
                            const StateSpace& state, const QuoteConventions& conv) {
  const StateSpace st = state_for_quotes(state, quotes);
  return calibrate(cfg, quotes, build_surfaces(reference, st), st, conv);
}

}  // namespace sotcal
