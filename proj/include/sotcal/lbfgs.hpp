#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace sotcal {

/// Objective for minimisation: returns f(x) and writes the gradient into `grad`.
/// A non-finite return value makes the line search back off.
using Objective = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

struct LbfgsOptions {
  std::size_t memory = 10;
  double armijo = 1e-4;
  double gradient_tolerance = 1e-6;  // on the projected gradient, infinity norm
  std::size_t max_iterations = 500;
  std::size_t max_evaluations = 1000;
  std::size_t max_backtracks = 30;
  double initial_step = 1.0;  // first-iteration step length along -g/|g|_2
  /// Optional box; empty means unbounded. Infinite entries are allowed.
  std::vector<double> lower;
  std::vector<double> upper;
};

enum class LbfgsStatus { Converged, MaxIterations, MaxEvaluations, LineSearchFailed, Stopped };

std::string to_string(LbfgsStatus s);

struct LbfgsResult {
  std::vector<double> x;
  double f = 0.0;
  std::vector<double> gradient;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  /// Projected-gradient infinity norm at every accepted iterate (including the start).
  std::vector<double> gradient_norms;
  std::vector<double> values;

  bool converged() const { return status == LbfgsStatus::Converged; }
};

/// Called after every accepted iterate; returning false stops the run.
using LbfgsCallback = std::function<bool(const LbfgsResult& progress)>;

/// Limited-memory BFGS with projection onto an optional box and Armijo backtracking.
LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsOptions& opts,
                           const LbfgsCallback& callback = {});

/// Infinity norm of the projected gradient x - P(x - g).
double projected_gradient_norm(const std::vector<double>& x, const std::vector<double>& g,
                               const LbfgsOptions& opts);

}  // namespace sotcal
