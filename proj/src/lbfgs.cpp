#include "sotcal/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sotcal {

std::string to_string(LbfgsStatus s) {
  switch (s) {
    case LbfgsStatus::Converged: return "converged";
    case LbfgsStatus::MaxIterations: return "max-iterations";
    case LbfgsStatus::MaxEvaluations: return "max-evaluations";
    case LbfgsStatus::LineSearchFailed: return "line-search-failed";
    case LbfgsStatus::Stopped: return "stopped";
  }
  return "unknown";
}

namespace {

double lo_of(const LbfgsOptions& o, std::size_t i) {
  return o.lower.empty() ? -std::numeric_limits<double>::infinity() : o.lower[i];
}
double hi_of(const LbfgsOptions& o, std::size_t i) {
  return o.upper.empty() ? std::numeric_limits<double>::infinity() : o.upper[i];
}

void project(std::vector<double>& x, const LbfgsOptions& o) {
  if (o.lower.empty() && o.upper.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo_of(o, i), hi_of(o, i));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct Pair {
  std::vector<double> s, y;
  double rho;
};

}  // namespace

double projected_gradient_norm(const std::vector<double>& x, const std::vector<double>& g,
                               const LbfgsOptions& opts) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = std::clamp(x[i] - g[i], lo_of(opts, i), hi_of(opts, i));
    m = std::max(m, std::abs(x[i] - p));
  }
  return m;
}

LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsOptions& opts,
                           const LbfgsCallback& callback) {
  const std::size_t n = x0.size();
  if ((!opts.lower.empty() && opts.lower.size() != n) || (!opts.upper.empty() && opts.upper.size() != n)) {
    throw std::invalid_argument("L-BFGS bounds do not match the problem dimension");
  }
  LbfgsResult res;
  project(x0, opts);
  res.x = std::move(x0);
  res.gradient.assign(n, 0.0);
  res.f = f(res.x, res.gradient);
  res.evaluations = 1;
  if (!std::isfinite(res.f)) throw std::domain_error("L-BFGS: objective is not finite at the start point");

  std::deque<Pair> memory;
  auto record = [&] {
    res.gradient_norms.push_back(projected_gradient_norm(res.x, res.gradient, opts));
    res.values.push_back(res.f);
  };
  record();

  std::vector<double> d(n), x_new(n), g_new(n), alpha(opts.memory);
  while (true) {
    if (res.gradient_norms.back() <= opts.gradient_tolerance) {
      res.status = LbfgsStatus::Converged;
      break;
    }
    if (res.iterations >= opts.max_iterations) {
      res.status = LbfgsStatus::MaxIterations;
      break;
    }
    if (res.evaluations >= opts.max_evaluations) {
      res.status = LbfgsStatus::MaxEvaluations;
      break;
    }

    // Variables held at a bound by the gradient stay fixed this iteration.
    std::vector<bool> active(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      active[i] = (res.x[i] <= lo_of(opts, i) && res.gradient[i] > 0.0) ||
                  (res.x[i] >= hi_of(opts, i) && res.gradient[i] < 0.0);
    }

    // Two-loop recursion.
    for (std::size_t i = 0; i < n; ++i) d[i] = active[i] ? 0.0 : -res.gradient[i];
    for (std::size_t k = memory.size(); k-- > 0;) {
      alpha[k] = memory[k].rho * dot(memory[k].s, d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * memory[k].y[i];
    }
    if (!memory.empty()) {
      const auto& last = memory.back();
      const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
      for (double& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const double beta = memory[k].rho * dot(memory[k].y, d);
      for (std::size_t i = 0; i < n; ++i) d[i] += memory[k].s[i] * (alpha[k] - beta);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i]) d[i] = 0.0;
    }

    double slope = dot(res.gradient, d);
    if (!(slope < 0.0)) {
      memory.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = active[i] ? 0.0 : -res.gradient[i];
      slope = dot(res.gradient, d);
      if (!(slope < 0.0)) {
        res.status = LbfgsStatus::Converged;
        break;
      }
    }

    double t = 1.0;
    if (memory.empty()) t = opts.initial_step / std::sqrt(dot(d, d));

    bool accepted = false;
    double f_new = 0.0;
    for (std::size_t bt = 0; bt <= opts.max_backtracks; ++bt) {
      if (res.evaluations >= opts.max_evaluations) break;
      for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + t * d[i];
      project(x_new, opts);
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) decrease += res.gradient[i] * (x_new[i] - res.x[i]);
      f_new = f(x_new, g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= res.f + opts.armijo * decrease) {
        accepted = true;
        break;
      }
      // Quadratic interpolation along the ray, safeguarded to [0.1t, 0.5t].
      double t_next = 0.5 * t;
      if (std::isfinite(f_new)) {
        const double denom = 2.0 * (f_new - res.f - t * slope);
        if (denom > 0.0) t_next = std::clamp(-slope * t * t / denom, 0.1 * t, 0.5 * t);
      }
      t = t_next;
    }
    if (!accepted) {
      res.status = res.evaluations >= opts.max_evaluations ? LbfgsStatus::MaxEvaluations
                                                          : LbfgsStatus::LineSearchFailed;
      break;
    }

    Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      p.s[i] = x_new[i] - res.x[i];
      p.y[i] = g_new[i] - res.gradient[i];
    }
    const double sy = dot(p.s, p.y);
    if (sy > 1e-12 * std::sqrt(dot(p.s, p.s) * dot(p.y, p.y))) {
      p.rho = 1.0 / sy;
      memory.push_back(std::move(p));
      if (memory.size() > opts.memory) memory.pop_front();
    }
    res.x = x_new;
    res.f = f_new;
    res.gradient = g_new;
    ++res.iterations;
    record();
    if (callback && !callback(res)) {
      res.status = LbfgsStatus::Stopped;
      break;
    }
  }
  return res;
}

}  // namespace sotcal
