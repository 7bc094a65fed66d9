#include "sotcal/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace sotcal {

using nlohmann::json;

namespace {

// NaN is written as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_of(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}
std::vector<double> nums_of(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(num_of(x));
  return v;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::pair<double, double> pair_of(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(what) + " must be a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

json grid_to_json(const Grid& g) {
  return {{"z_min", g.z_min}, {"z_max", g.z_max}, {"r_min", g.r_min}, {"r_max", g.r_max}, {"nz", g.nz},
          {"nr", g.nr},       {"dt_days", g.dt * 365.0}, {"n_steps", g.n_steps}};
}

Grid grid_from_json(const json& j) {
  Grid g;
  g.z_min = j.at("z_min");
  g.z_max = j.at("z_max");
  g.r_min = j.at("r_min");
  g.r_max = j.at("r_max");
  g.nz = j.at("nz");
  g.nr = j.at("nr");
  g.dt = get_or<double>(j, "dt_days", 1.0) / 365.0;
  g.n_steps = get_or<std::size_t>(j, "n_steps", 1);
  g.validate();
  return g;
}

json state_to_json(const StateSpace& s) {
  return {{"grid", grid_to_json(s.grid)}, {"rate_scale", s.rate_scale}, {"discounting", s.discounting},
          {"z0", s.z0},                   {"y0", s.y0}};
}

StateSpace state_from_json(const json& j) {
  StateSpace s;
  s.grid = grid_from_json(j.at("grid"));
  s.rate_scale = get_or<double>(j, "rate_scale", 100.0);
  s.discounting = get_or<bool>(j, "discounting", true);
  s.z0 = j.at("z0");
  s.y0 = j.at("y0");
  s.validate();
  return s;
}

json calibration_config_to_json(const CalibrationConfig& c) {
  json j = {{"variant", to_string(c.variant)},
            {"eps1", c.eps1},
            {"eps2", c.eps2},
            {"bounds",
             {{"beta11", {c.bounds.beta11_lo, c.bounds.beta11_hi}}, {"beta22", {c.bounds.beta22_lo, c.bounds.beta22_hi}}}},
            {"barrier_power", c.barrier_power},
            {"max_evaluations", c.max_evaluations},
            {"max_iterations", c.max_iterations},
            {"max_inner_iterations", c.max_inner_iterations},
            {"initial_step", c.initial_step},
            {"smoothing_iterations", c.smoothing_iterations},
            {"min_smoothing_iterations", c.min_smoothing_iterations},
            {"smoothing_radius", c.smoothing_radius},
            {"warm_start", c.warm_start},
            {"backend", to_string(c.backend)},
            {"time_scheme", to_string(c.time_scheme)}};
  if (c.rho_ref) {
    j["rho_ref"] = c.rho_ref->from_reference ? json("reference") : json(c.rho_ref->rho_ref);
  }
  return j;
}

CalibrationConfig calibration_config_from_json(const json& j) {
  CalibrationConfig c;
  c.variant = variant_from_string(get_or<std::string>(j, "variant", "joint"));
  c.eps1 = get_or<double>(j, "eps1", c.eps1);
  c.eps2 = get_or<double>(j, "eps2", c.eps2);
  if (j.contains("bounds")) {
    const auto& b = j.at("bounds");
    if (b.contains("beta11")) std::tie(c.bounds.beta11_lo, c.bounds.beta11_hi) = pair_of(b.at("beta11"), "beta11");
    if (b.contains("beta22")) std::tie(c.bounds.beta22_lo, c.bounds.beta22_hi) = pair_of(b.at("beta22"), "beta22");
  }
  c.barrier_power = get_or<double>(j, "barrier_power", c.barrier_power);
  if (j.contains("rho_ref") && !j.at("rho_ref").is_null()) {
    const auto& r = j.at("rho_ref");
    CorrelationPin pin;
    if (r.is_string()) {
      if (r.get<std::string>() != "reference") throw ConfigError("rho_ref must be a number or \"reference\"");
      pin.from_reference = true;
    } else {
      pin.rho_ref = r.get<double>();
    }
    c.rho_ref = pin;
  }
  c.max_evaluations = get_or<std::size_t>(j, "max_evaluations", c.max_evaluations);
  c.max_iterations = get_or<std::size_t>(j, "max_iterations", c.max_iterations);
  c.max_inner_iterations = get_or<std::size_t>(j, "max_inner_iterations", c.max_inner_iterations);
  c.initial_step = get_or<double>(j, "initial_step", c.initial_step);
  c.smoothing_iterations = get_or<std::size_t>(j, "smoothing_iterations", c.smoothing_iterations);
  c.min_smoothing_iterations = get_or<std::size_t>(j, "min_smoothing_iterations", c.min_smoothing_iterations);
  c.smoothing_radius = get_or<double>(j, "smoothing_radius", c.smoothing_radius);
  c.warm_start = get_or<bool>(j, "warm_start", c.warm_start);
  c.backend = gradient_backend_from_string(get_or<std::string>(j, "backend", "implicit"));
  c.time_scheme = time_scheme_from_string(get_or<std::string>(j, "time_scheme", "crank-nicolson"));
  return c;
}

QuoteConventions RunConfig::conventions() const {
  QuoteConventions q;
  q.spot = spot;
  q.short_rate = state.initial_rate();
  q.cap_model = cap_model;
  q.unit_weights = unit_weights;
  q.year_days = year_days;
  return q;
}

void RunConfig::validate() const {
  state.validate();
  if (!(spot > 0)) throw ConfigError("spot must be positive");
  if (!(year_days > 0)) throw ConfigError("year_days must be positive");
  if (surface_stride == 0) throw ConfigError("surface_stride must be positive");
  mc.validate();
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.state.grid = grid_from_json(j.at("grid"));
    const auto& st = j.at("state");
    c.state.rate_scale = get_or<double>(st, "rate_scale", 100.0);
    c.state.discounting = get_or<bool>(st, "discounting", true);
    if (st.contains("spot")) {
      c.spot = st.at("spot");
      c.state.z0 = std::log(c.spot);
    } else {
      c.state.z0 = st.at("z0");
      c.spot = std::exp(c.state.z0);
    }
    if (st.contains("short_rate")) {
      c.state.y0 = st.at("short_rate").get<double>() * c.state.rate_scale;
    } else {
      c.state.y0 = st.at("y0");
    }
    if (j.contains("quoting")) {
      const auto& q = j.at("quoting");
      const auto model = get_or<std::string>(q, "cap_model", "normal");
      if (model == "normal") c.cap_model = CapVolModel::Normal;
      else if (model == "lognormal") c.cap_model = CapVolModel::Lognormal;
      else throw ConfigError("cap_model must be normal or lognormal");
      c.unit_weights = get_or<bool>(q, "unit_weights", false);
      c.year_days = get_or<double>(q, "year_days", 365.0);
    }
    if (j.contains("reference")) c.reference = reference_from_json(j.at("reference"));
    if (j.contains("generating")) c.generating = reference_from_json(j.at("generating"));
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      c.synthetic.call_strikes = get_or<std::vector<double>>(s, "call_strikes", {});
      c.synthetic.call_maturities_days = get_or<std::vector<double>>(s, "call_maturities_days", {});
      c.synthetic.cap_strikes = get_or<std::vector<double>>(s, "cap_strikes", {});
      c.synthetic.cap_maturities_days = get_or<std::vector<double>>(s, "cap_maturities_days", {});
      c.synthetic.cap_notional = get_or<double>(s, "cap_notional", c.synthetic.cap_notional);
    }
    if (j.contains("calibration")) c.calibration = calibration_config_from_json(j.at("calibration"));
    if (j.contains("mc")) {
      const auto& m = j.at("mc");
      c.mc.paths = get_or<std::size_t>(m, "paths", c.mc.paths);
      c.mc.seed = get_or<std::uint64_t>(m, "seed", c.mc.seed);
      c.mc.substeps = get_or<std::size_t>(m, "substeps", c.mc.substeps);
      c.mc.antithetic = get_or<bool>(m, "antithetic", c.mc.antithetic);
      c.mc.threads = get_or<std::size_t>(m, "threads", c.mc.threads);
    }
    if (j.contains("output")) c.surface_stride = get_or<std::size_t>(j.at("output"), "surface_stride", 1);
    c.instruments = get_or<std::string>(j, "instruments", "");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json grid = grid_to_json(c.state.grid);
  grid.erase("n_steps");
  json j = {{"grid", grid},
            {"state",
             {{"z0", c.state.z0}, {"y0", c.state.y0}, {"rate_scale", c.state.rate_scale},
              {"discounting", c.state.discounting}}},
            {"quoting",
             {{"cap_model", c.cap_model == CapVolModel::Normal ? "normal" : "lognormal"},
              {"unit_weights", c.unit_weights},
              {"year_days", c.year_days}}},
            {"synthetic",
             {{"call_strikes", c.synthetic.call_strikes},
              {"call_maturities_days", c.synthetic.call_maturities_days},
              {"cap_strikes", c.synthetic.cap_strikes},
              {"cap_maturities_days", c.synthetic.cap_maturities_days},
              {"cap_notional", c.synthetic.cap_notional}}},
            {"calibration", calibration_config_to_json(c.calibration)},
            {"mc",
             {{"paths", c.mc.paths}, {"seed", c.mc.seed}, {"substeps", c.mc.substeps},
              {"antithetic", c.mc.antithetic}, {"threads", c.mc.threads}}},
            {"output", {{"surface_stride", c.surface_stride}}}};
  if (c.reference) j["reference"] = reference_to_json(*c.reference);
  if (c.generating) j["generating"] = reference_to_json(*c.generating);
  if (!c.instruments.empty()) j["instruments"] = c.instruments;
  return j;
}

RunConfig read_run_config(const std::string& path) {
  try {
    return run_config_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::uint64_t config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json result_to_json(const CalibrationResult& r, const StateSpace& state, const std::string& hash) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"iterations", e.iterations},
                      {"evaluations", e.evaluations},
                      {"policy_iterations", e.policy_iterations},
                      {"gradient_norm", num(e.gradient_norm)},
                      {"dual_value", num(e.dual_value)},
                      {"converged", e.converged},
                      {"status", e.status},
                      {"seconds", e.seconds}});
  }
  return {{"config_hash", hash},
          {"variant", to_string(r.variant)},
          {"state", state_to_json(state)},
          {"calibrated", r.calibrated},
          {"surfaces_smoothed", r.surfaces_smoothed},
          {"message", r.message},
          {"lambda", nums(r.lambda)},
          {"model_prices", nums(r.model_prices)},
          {"model_ivs", nums(r.model_ivs)},
          {"market_prices", nums(r.market_prices)},
          {"market_ivs", nums(r.market_ivs)},
          {"gradient", nums(r.gradient)},
          {"gradient_history", nums(r.gradient_history)},
          {"gradient_norm", num(r.gradient_norm)},
          {"dual_value", num(r.dual_value)},
          {"strict_violations", r.strict_violations},
          {"monotonicity_violations", r.monotonicity_violations},
          {"policy_iterations", r.policy_iterations},
          {"wall_seconds", r.wall_seconds},
          {"epochs", epochs}};
}

CalibrationResult result_from_json(const json& j) {
  CalibrationResult r;
  r.variant = variant_from_string(j.at("variant"));
  r.calibrated = j.at("calibrated");
  r.surfaces_smoothed = j.at("surfaces_smoothed");
  r.message = j.at("message");
  r.lambda = nums_of(j.at("lambda"));
  r.model_prices = nums_of(j.at("model_prices"));
  r.model_ivs = nums_of(j.at("model_ivs"));
  r.market_prices = nums_of(j.at("market_prices"));
  r.market_ivs = nums_of(j.at("market_ivs"));
  r.gradient = nums_of(j.at("gradient"));
  r.gradient_history = nums_of(j.at("gradient_history"));
  r.gradient_norm = num_of(j.at("gradient_norm"));
  r.dual_value = num_of(j.at("dual_value"));
  r.strict_violations = j.at("strict_violations");
  r.monotonicity_violations = j.at("monotonicity_violations");
  r.policy_iterations = j.value("policy_iterations", std::size_t{0});
  r.wall_seconds = j.at("wall_seconds");
  for (const auto& e : j.at("epochs")) {
    EpochLog l;
    l.epoch = e.at("epoch");
    l.iterations = e.at("iterations");
    l.evaluations = e.at("evaluations");
    l.policy_iterations = e.value("policy_iterations", std::size_t{0});
    l.gradient_norm = num_of(e.at("gradient_norm"));
    l.dual_value = num_of(e.at("dual_value"));
    l.converged = e.at("converged");
    l.status = e.at("status");
    l.seconds = e.at("seconds");
    r.epochs.push_back(l);
  }
  return r;
}

namespace {

constexpr const char* kSurfaceHeader = "t_days,z,r_unscaled,alpha1,alpha2,beta11,beta12,beta22,rho";

double correlation(double b11, double b12, double b22) {
  const double d = std::sqrt(b11 * b22);
  return d > 0 ? b12 / d : 0.0;
}

struct Plot {
  double a1, a2, b11, b12, b22, rho;
};

Plot plot_units(const Characteristics& c, double R) {
  return {c.alpha1, c.alpha2 / R, c.beta11, c.beta12 / R, c.beta22 / (R * R), correlation(c.beta11, c.beta12, c.beta22)};
}

std::size_t slice_count(const ModelSurfaces& s, const StateSpace& st) {
  return s.time_homogeneous() ? std::max<std::size_t>(st.grid.n_steps, 1) : s.slice_count();
}

void write_hash(std::ostream& out, const std::string& hash) {
  if (!hash.empty()) out << "# config_hash " << hash << '\n';
}

}  // namespace

void write_surfaces_csv(std::ostream& out, const ModelSurfaces& s, const StateSpace& state, std::size_t stride,
                        const std::string& hash) {
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  const Grid& g = state.grid;
  const double R = state.rate_scale;
  write_hash(out, hash);
  out << kSurfaceHeader << '\n' << std::setprecision(17);
  const std::size_t n = slice_count(s, state);
  for (std::size_t k = 0; k < n; k += stride) {
    const auto& sl = s.at(k);
    const double t = static_cast<double>(k) * g.dt * 365.0;
    for (std::size_t j = 0; j < g.nr; ++j) {
      for (std::size_t i = 0; i < g.nz; ++i) {
        const auto p = plot_units(sl.at(g.index(i, j)), R);
        out << t << ',' << g.z(i) << ',' << g.r(j) / R << ',' << p.a1 << ',' << p.a2 << ',' << p.b11 << ','
            << p.b12 << ',' << p.b22 << ',' << p.rho << '\n';
      }
    }
  }
}

ModelSurfaces read_surfaces_csv(std::istream& in, const StateSpace& state) {
  const Grid& g = state.grid;
  const double R = state.rate_scale;
  std::string line;
  bool header = false;
  std::vector<SurfaceSlice> slices;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kSurfaceHeader) throw std::invalid_argument("unexpected surface CSV header: " + line);
      header = true;
      continue;
    }
    double v[9];
    std::istringstream ls(line);
    std::string cell;
    for (int c = 0; c < 9; ++c) {
      if (!std::getline(ls, cell, ',')) throw std::invalid_argument("short surface CSV row");
      v[c] = std::stod(cell);
    }
    const std::size_t k = row / g.size();
    const std::size_t node = row % g.size();
    if (node == 0) slices.emplace_back(g);
    slices[k].set(node, {v[3], v[4] * R, v[5], v[6] * R, v[7] * R * R});
    ++row;
  }
  if (!header || row == 0 || row % g.size() != 0) throw std::invalid_argument("surface CSV does not fill whole slices");
  return ModelSurfaces(std::move(slices));
}

void write_surface_difference_csv(std::ostream& out, const ModelSurfaces& a, const ModelSurfaces& b,
                                  const StateSpace& state, std::size_t stride, const std::string& hash) {
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  if (!a.grid().same_space(b.grid())) throw GridError("surfaces live on different grids");
  const Grid& g = state.grid;
  const double R = state.rate_scale;
  write_hash(out, hash);
  out << kSurfaceHeader << '\n' << std::setprecision(17);
  const std::size_t n = std::max(slice_count(a, state), slice_count(b, state));
  for (std::size_t k = 0; k < n; k += stride) {
    const auto& sa = a.at(k);
    const auto& sb = b.at(k);
    const double t = static_cast<double>(k) * g.dt * 365.0;
    for (std::size_t j = 0; j < g.nr; ++j) {
      for (std::size_t i = 0; i < g.nz; ++i) {
        const auto q = g.index(i, j);
        const auto pa = plot_units(sa.at(q), R), pb = plot_units(sb.at(q), R);
        out << t << ',' << g.z(i) << ',' << g.r(j) / R << ',' << pa.a1 - pb.a1 << ',' << pa.a2 - pb.a2 << ','
            << pa.b11 - pb.b11 << ',' << pa.b12 - pb.b12 << ',' << pa.b22 - pb.b22 << ',' << pa.rho - pb.rho << '\n';
      }
    }
  }
}

std::vector<double> surface_difference_norms(const ModelSurfaces& a, const ModelSurfaces& b, const StateSpace& state) {
  if (!a.grid().same_space(b.grid())) throw GridError("surfaces live on different grids");
  const double R = state.rate_scale;
  std::vector<double> m(6, 0.0);
  const std::size_t n = std::max(slice_count(a, state), slice_count(b, state));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& sa = a.at(k);
    const auto& sb = b.at(k);
    for (std::size_t q = 0; q < sa.beta11.size(); ++q) {
      const auto pa = plot_units(sa.at(q), R), pb = plot_units(sb.at(q), R);
      const double d[6] = {pa.a1 - pb.a1, pa.a2 - pb.a2, pa.b11 - pb.b11, pa.b12 - pb.b12, pa.b22 - pb.b22,
                           pa.rho - pb.rho};
      for (int c = 0; c < 6; ++c) m[c] = std::max(m[c], std::abs(d[c]));
    }
  }
  return m;
}

void write_price_table_csv(std::ostream& out, const QuoteSet& quotes, const CalibrationResult& r,
                           const std::string& hash) {
  write_hash(out, hash);
  out << "kind,maturity_days,strike,market_price,market_iv,model_price,model_iv,iv_error\n" << std::setprecision(10);
  for (std::size_t i = 0; i < quotes.size(); ++i) {
    const auto& q = quotes.instruments[i];
    out << to_string(q.kind) << ',' << q.maturity_days << ',' << q.strike << ',' << r.market_prices.at(i) << ','
        << r.market_ivs.at(i) << ',' << r.model_prices.at(i) << ',' << r.model_ivs.at(i) << ','
        << r.model_ivs.at(i) - r.market_ivs.at(i) << '\n';
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  return json::parse(f);
}

}  // namespace sotcal
