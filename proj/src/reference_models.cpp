#include "sotcal/reference_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "sotcal/hjb.hpp"
#include "sotcal/lbfgs.hpp"
#include "sotcal/pde_solvers.hpp"

namespace sotcal {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

void CevVasicekParams::validate() const {
  require(sigma > 0 && sigma_r > 0 && a > 0 && b > 0, "CEV-Vasicek: sigma, sigma_r, a and b must be positive");
  require(gamma >= 0, "CEV-Vasicek: gamma must be non-negative");
  require(std::abs(rho) <= 1, "CEV-Vasicek: |rho| must not exceed 1");
}

double HullWhiteCevParams::b(double t) const {
  return a * r0 + sigma_r * sigma_r / (2 * a) * (1 - std::exp(-2 * a * t));
}

void HullWhiteCevParams::validate() const {
  require(sigma > 0 && sigma_r > 0 && a > 0, "Hull-White-CEV: sigma, sigma_r and a must be positive");
  require(gamma >= 0, "Hull-White-CEV: gamma must be non-negative");
  require(std::abs(rho) <= 1, "Hull-White-CEV: |rho| must not exceed 1");
  require(std::isfinite(r0), "Hull-White-CEV: r0 must be finite");
}

void HestonParams::validate() const {
  require(kappa > 0 && theta > 0 && xi > 0, "Heston: kappa, theta and xi must be positive");
  require(std::abs(rho) <= 1, "Heston: |rho| must not exceed 1");
}

std::string family_name(const ReferenceModel& m) {
  return std::visit(Overloaded{[](const CevVasicekParams&) { return std::string("cev-vasicek"); },
                               [](const HullWhiteCevParams&) { return std::string("hull-white-cev"); },
                               [](const HestonParams&) { return std::string("heston"); },
                               [](const ModelSurfaces&) { return std::string("surfaces"); }},
                    m);
}

Characteristics cev_vasicek_at(const CevVasicekParams& p, double z, double r_scaled, double R) {
  const double lv = p.sigma * std::exp((p.gamma - 1) * z);  // local vol
  Characteristics c;
  c.beta11 = lv * lv;
  c.beta22 = R * R * p.sigma_r * p.sigma_r;
  c.beta12 = R * p.rho * lv * p.sigma_r;
  c.alpha1 = r_scaled / R - 0.5 * c.beta11;
  c.alpha2 = R * p.a * (p.b - r_scaled / R);
  return c;
}

Characteristics hw_cev_at(const HullWhiteCevParams& p, double t, double z, double r_scaled, double R) {
  const double lv = p.sigma * std::exp((p.gamma - 1) * z);
  Characteristics c;
  c.beta11 = lv * lv;
  c.beta22 = R * R * p.sigma_r * p.sigma_r;
  c.beta12 = R * p.rho * lv * p.sigma_r;
  c.alpha1 = r_scaled / R - 0.5 * c.beta11;
  c.alpha2 = R * (p.b(t) - p.a * r_scaled / R);
  return c;
}

Characteristics heston_at(const HestonParams& p, double /*z*/, double v) {
  const double vp = std::max(v, 0.0);
  return {-0.5 * vp, p.kappa * (p.theta - v), vp, p.rho * p.xi * vp, p.xi * p.xi * vp};
}

namespace {

template <class F>
SurfaceSlice fill_slice(const StateSpace& state, F at) {
  const Grid& g = state.grid;
  SurfaceSlice s(g);
  for (std::size_t j = 0; j < g.nr; ++j) {
    for (std::size_t i = 0; i < g.nz; ++i) s.set(g.index(i, j), at(g.z(i), g.r(j)));
  }
  return s;
}

}  // namespace

ModelSurfaces characteristics_cev_vasicek(const CevVasicekParams& p, const StateSpace& state) {
  p.validate();
  state.validate();
  return ModelSurfaces(fill_slice(state, [&](double z, double r) {
    return cev_vasicek_at(p, z, r, state.rate_scale);
  }));
}

SurfaceSlice hw_cev_slice(const HullWhiteCevParams& p, const StateSpace& state, double t) {
  return fill_slice(state, [&](double z, double r) { return hw_cev_at(p, t, z, r, state.rate_scale); });
}

ModelSurfaces characteristics_hw_cev(const HullWhiteCevParams& p, const StateSpace& state) {
  p.validate();
  state.validate();
  std::vector<SurfaceSlice> slices;
  slices.reserve(state.grid.n_steps);
  for (std::size_t k = 0; k < state.grid.n_steps; ++k) slices.push_back(hw_cev_slice(p, state, state.grid.time(k)));
  return ModelSurfaces(std::move(slices));
}

ModelSurfaces characteristics_heston(const HestonParams& p, const StateSpace& state) {
  p.validate();
  state.validate();
  return ModelSurfaces(fill_slice(state, [&](double z, double v) { return heston_at(p, z, v); }));
}

ModelSurfaces build_surfaces(const ReferenceModel& m, const StateSpace& state) {
  return std::visit(Overloaded{[&](const CevVasicekParams& p) { return characteristics_cev_vasicek(p, state); },
                               [&](const HullWhiteCevParams& p) { return characteristics_hw_cev(p, state); },
                               [&](const HestonParams& p) { return characteristics_heston(p, state); },
                               [&](const ModelSurfaces& s) {
                                 if (!s.grid().same_space(state.grid)) {
                                   throw GridError("reference surfaces live on a different grid");
                                 }
                                 return s;
                               }},
                    m);
}

std::vector<double> price_instruments(const ModelSurfaces& surfaces, const StateSpace& state,
                                      const QuoteSet& quotes, PricingScheme scheme) {
  quotes.validate();
  const Grid& g = state.grid;
  const double dt_days = g.dt * 365.0;
  std::vector<std::size_t> steps;
  std::vector<ScalarField> payoffs;
  for (const auto& q : quotes.instruments) {
    steps.push_back(maturity_step(q.maturity_days, dt_days));
    payoffs.push_back(payoff_field(q, g, quotes.rate_scale));
  }
  const std::size_t top = *std::max_element(steps.begin(), steps.end());
  if (!surfaces.time_homogeneous() && surfaces.slice_count() < top) {
    throw std::invalid_argument("surfaces do not cover the last maturity");
  }
  const auto resets = anchor_resets(top, steps);
  const auto rate = state.rate_field();
  std::vector<double> prices(quotes.size());
  if (scheme == PricingScheme::Implicit) {
    const auto psi = implicit_price_all(surfaces, rate, payoffs, steps, resets);
    for (std::size_t i = 0; i < psi.size(); ++i) prices[i] = psi[i].interpolate(state.z0, state.y0);
  } else {
    for (std::size_t i = 0; i < payoffs.size(); ++i) {
      prices[i] = adi_forward_price(surfaces, rate, payoffs[i], steps[i], resets).interpolate(state.z0, state.y0);
    }
  }
  return prices;
}

std::vector<double> price_instruments(const ReferenceModel& model, StateSpace state, const QuoteSet& quotes,
                                      PricingScheme scheme) {
  std::size_t top = 0;
  for (const auto& q : quotes.instruments) top = std::max(top, maturity_step(q.maturity_days, state.grid.dt * 365.0));
  state.grid.n_steps = std::max(top, std::size_t{1});
  return price_instruments(build_surfaces(model, state), state, quotes, scheme);
}

std::vector<double> to_vector(const ReferenceModel& m) {
  return std::visit(
      Overloaded{[](const CevVasicekParams& p) { return std::vector<double>{p.sigma, p.gamma, p.rho, p.sigma_r, p.a, p.b}; },
                 [](const HullWhiteCevParams& p) {
                   return std::vector<double>{p.sigma, p.gamma, p.rho, p.sigma_r, p.a, p.r0};
                 },
                 [](const HestonParams& p) { return std::vector<double>{p.kappa, p.theta, p.xi, p.rho}; },
                 [](const ModelSurfaces&) -> std::vector<double> {
                   throw std::invalid_argument("surface references have no parameter vector");
                 }},
      m);
}

ReferenceModel with_vector(const ReferenceModel& like, const std::vector<double>& x) {
  auto need = [&](std::size_t n) {
    if (x.size() != n) throw std::invalid_argument("parameter vector has the wrong length");
  };
  return std::visit(Overloaded{[&](const CevVasicekParams&) -> ReferenceModel {
                                 need(6);
                                 return CevVasicekParams{x[0], x[1], x[2], x[3], x[4], x[5]};
                               },
                               [&](const HullWhiteCevParams&) -> ReferenceModel {
                                 need(6);
                                 return HullWhiteCevParams{x[0], x[1], x[2], x[3], x[4], x[5]};
                               },
                               [&](const HestonParams&) -> ReferenceModel {
                                 need(4);
                                 return HestonParams{x[0], x[1], x[2], x[3]};
                               },
                               [&](const ModelSurfaces&) -> ReferenceModel {
                                 throw std::invalid_argument("surface references have no parameter vector");
                               }},
                    like);
}

std::vector<std::string> parameter_names(const ReferenceModel& m) {
  return std::visit(Overloaded{[](const CevVasicekParams&) {
                                 return std::vector<std::string>{"sigma", "gamma", "rho", "sigma_r", "a", "b"};
                               },
                               [](const HullWhiteCevParams&) {
                                 return std::vector<std::string>{"sigma", "gamma", "rho", "sigma_r", "a", "r0"};
                               },
                               [](const HestonParams&) {
                                 return std::vector<std::string>{"kappa", "theta", "xi", "rho"};
                               },
                               [](const ModelSurfaces&) { return std::vector<std::string>{}; }},
                    m);
}

namespace {

// Box constraints per family, in vector order.
void parameter_box(const ReferenceModel& m, std::vector<double>& lo, std::vector<double>& hi) {
  constexpr double tiny = 1e-8;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::visit(Overloaded{[&](const CevVasicekParams&) {
                          lo = {tiny, 0.0, -1.0, tiny, tiny, tiny};
                          hi = {inf, inf, 1.0, inf, inf, inf};
                        },
                        [&](const HullWhiteCevParams&) {
                          lo = {tiny, 0.0, -1.0, tiny, tiny, -inf};
                          hi = {inf, inf, 1.0, inf, inf, inf};
                        },
                        [&](const HestonParams&) {
                          lo = {tiny, tiny, tiny, -1.0};
                          hi = {inf, inf, inf, 1.0};
                        },
                        [&](const ModelSurfaces&) {}},
             m);
}

}  // namespace

ParametricFit parametric_calibrate(const ReferenceModel& init, const QuoteSet& quotes, const StateSpace& state,
                                   const ParametricFitOptions& opts) {
  quotes.validate();
  const std::vector<double> x0 = to_vector(init);
  const std::size_t np = x0.size();
  std::vector<bool> free = opts.free.empty() ? std::vector<bool>(np, true) : opts.free;
  if (free.size() != np) throw std::invalid_argument("free-parameter mask has the wrong length");

  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < np; ++k) {
    if (free[k]) idx.push_back(k);
  }
  std::vector<double> lo_all, hi_all;
  parameter_box(init, lo_all, hi_all);
  LbfgsOptions lopts;
  lopts.gradient_tolerance = opts.gradient_tolerance;
  lopts.max_iterations = opts.max_iterations;
  lopts.max_evaluations = opts.max_evaluations;
  lopts.initial_step = 0.05;
  for (auto k : idx) {
    lopts.lower.push_back(lo_all[k]);
    lopts.upper.push_back(hi_all[k]);
  }

  auto full = [&](const std::vector<double>& y) {
    std::vector<double> x = x0;
    for (std::size_t q = 0; q < idx.size(); ++q) x[idx[q]] = y[q];
    return x;
  };
  auto mse = [&](const std::vector<double>& x) {
    const auto model = with_vector(init, x);
    const auto prices = price_instruments(model, state, quotes, opts.scheme);
    double s = 0.0;
    for (std::size_t i = 0; i < prices.size(); ++i) {
      double e = prices[i] - quotes.instruments[i].market_price;
      if (opts.vega_scaled) e /= quotes.instruments[i].vega_weight;
      s += e * e;
    }
    return s / static_cast<double>(prices.size());
  };

  ParametricFit best;
  best.model = init;
  best.objective = std::numeric_limits<double>::infinity();
  Objective f = [&](const std::vector<double>& y, std::vector<double>& grad) {
    auto x = full(y);
    double value;
    try {
      value = mse(x);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
    if (value < best.objective) {
      best.objective = value;
      best.model = with_vector(init, x);
    }
    grad.assign(y.size(), 0.0);
    for (std::size_t q = 0; q < idx.size(); ++q) {
      const std::size_t k = idx[q];
      const double h = opts.relative_step * std::max(std::abs(x[k]), 1e-2);
      auto xp = x, xm = x;
      xp[k] = std::min(x[k] + h, hi_all[k]);
      xm[k] = std::max(x[k] - h, lo_all[k]);
      grad[q] = (mse(xp) - mse(xm)) / (xp[k] - xm[k]);
    }
    return value;
  };

  std::vector<double> y0;
  for (auto k : idx) y0.push_back(x0[k]);
  if (y0.empty()) {
    best.objective = mse(x0);
    best.converged = true;
  } else {
    const auto res = lbfgs_minimize(f, y0, lopts);
    best.iterations = res.iterations;
    best.converged = res.converged();
    if (res.f <= best.objective) {
      best.objective = res.f;
      best.model = with_vector(init, full(res.x));
    }
    if (!best.converged) {
      best.warning = "parametric fit stopped before the first-order tolerance (" + to_string(res.status) + ")";
    }
  }
  best.prices = price_instruments(best.model, state, quotes, opts.scheme);
  return best;
}

void to_json(nlohmann::json& j, const CevVasicekParams& p) {
  j = {{"sigma", p.sigma}, {"gamma", p.gamma}, {"rho", p.rho}, {"sigma_r", p.sigma_r}, {"a", p.a}, {"b", p.b}};
}
void from_json(const nlohmann::json& j, CevVasicekParams& p) {
  p = {j.at("sigma"), j.at("gamma"), j.at("rho"), j.at("sigma_r"), j.at("a"), j.at("b")};
  p.validate();
}
void to_json(nlohmann::json& j, const HullWhiteCevParams& p) {
  j = {{"sigma", p.sigma}, {"gamma", p.gamma}, {"rho", p.rho}, {"sigma_r", p.sigma_r}, {"a", p.a}, {"r0", p.r0}};
}
void from_json(const nlohmann::json& j, HullWhiteCevParams& p) {
  p = {j.at("sigma"), j.at("gamma"), j.at("rho"), j.at("sigma_r"), j.at("a"), j.at("r0")};
  p.validate();
}
void to_json(nlohmann::json& j, const HestonParams& p) {
  j = {{"kappa", p.kappa}, {"theta", p.theta}, {"xi", p.xi}, {"rho", p.rho}};
}
void from_json(const nlohmann::json& j, HestonParams& p) {
  p = {j.at("kappa"), j.at("theta"), j.at("xi"), j.at("rho")};
  p.validate();
}

nlohmann::json reference_to_json(const ReferenceModel& m) {
  nlohmann::json j = std::visit(
      Overloaded{[](const CevVasicekParams& p) { return nlohmann::json(p); },
                 [](const HullWhiteCevParams& p) { return nlohmann::json(p); },
                 [](const HestonParams& p) { return nlohmann::json(p); },
                 [](const ModelSurfaces&) -> nlohmann::json {
                   throw std::invalid_argument("surface references are exported as CSV, not JSON");
                 }},
      m);
  j["family"] = family_name(m);
  return j;
}

ReferenceModel reference_from_json(const nlohmann::json& j) {
  const std::string fam = j.at("family").get<std::string>();
  if (fam == "cev-vasicek") return j.get<CevVasicekParams>();
  if (fam == "hull-white-cev") return j.get<HullWhiteCevParams>();
  if (fam == "heston") return j.get<HestonParams>();
  throw std::invalid_argument("unknown reference family '" + fam + "'");
}

}  // namespace sotcal
