#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sotcal/dual_calibration.hpp"
#include "sotcal/instruments.hpp"
#include "sotcal/io.hpp"
#include "sotcal/mc_validator.hpp"
#include "sotcal/pde_solvers.hpp"
#include "sotcal/reference_models.hpp"

namespace fs = std::filesystem;
using namespace sotcal;

namespace {

// Exit codes: 0 success, 1 bad input or runtime failure, 2 calibration did not converge.
constexpr int kExitError = 1;
constexpr int kExitNotCalibrated = 2;

struct Overrides {
  std::string grid;
  double dt_days = 0.0;
  std::string variant;
  double eps1 = 0.0;
  double eps2 = 0.0;
  std::string bounds;
  int smoothing_iters = -1;
  long long seed = -1;
  long long paths = -1;
};

std::vector<double> split_numbers(const std::string& s, std::size_t expected, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": not a number: " + cell);
    }
  }
  if (out.size() != expected) {
    throw ConfigError(std::string(flag) + " expects " + std::to_string(expected) + " comma-separated values");
  }
  return out;
}

void apply(const Overrides& o, RunConfig& cfg) {
  if (!o.grid.empty()) {
    const auto n = split_numbers(o.grid, 2, "--grid");
    if (n[0] < 3 || n[1] < 3 || n[0] != std::floor(n[0]) || n[1] != std::floor(n[1])) {
      throw ConfigError("--grid needs two integers >= 3");
    }
    cfg.state.grid.nz = static_cast<std::size_t>(n[0]);
    cfg.state.grid.nr = static_cast<std::size_t>(n[1]);
  }
  if (o.dt_days > 0) cfg.state.grid.dt = o.dt_days / 365.0;
  if (!o.variant.empty()) cfg.calibration.variant = variant_from_string(o.variant);
  if (o.eps1 > 0) cfg.calibration.eps1 = o.eps1;
  if (o.eps2 > 0) cfg.calibration.eps2 = o.eps2;
  if (!o.bounds.empty()) {
    const auto b = split_numbers(o.bounds, 4, "--bounds");
    cfg.calibration.bounds = {b[0], b[1], b[2], b[3]};
  }
  if (o.smoothing_iters >= 0) cfg.calibration.smoothing_iterations = static_cast<std::size_t>(o.smoothing_iters);
  if (o.seed >= 0) cfg.mc.seed = static_cast<std::uint64_t>(o.seed);
  if (o.paths > 0) cfg.mc.paths = static_cast<std::size_t>(o.paths);
  cfg.state.grid.validate();
  cfg.calibration.validate();
  cfg.validate();
}

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--grid", o.grid, "Override the lattice size as nz,nr");
  app->add_option("--dt-days", o.dt_days, "Override the time step in days");
}

QuoteSet quotes_from_spec(const RunConfig& cfg) {
  const auto& s = cfg.synthetic;
  QuoteSet q;
  q.rate_scale = cfg.state.rate_scale;
  if (s.call_strikes.empty() && s.cap_strikes.empty()) throw ConfigError("synthetic: the strike lists are empty");
  if (!s.call_strikes.empty() && s.call_maturities_days.empty()) throw ConfigError("synthetic: call maturities missing");
  if (!s.cap_strikes.empty() && s.cap_maturities_days.empty()) throw ConfigError("synthetic: cap maturities missing");
  for (double t : s.call_maturities_days) {
    for (double k : s.call_strikes) {
      Instrument in;
      in.kind = InstrumentKind::EquityCall;
      in.maturity_days = t;
      in.strike = k;
      q.instruments.push_back(in);
    }
  }
  for (double t : s.cap_maturities_days) {
    for (double k : s.cap_strikes) {
      Instrument in;
      in.kind = InstrumentKind::RateCap;
      in.maturity_days = t;
      in.strike = k;
      in.notional = s.cap_notional;
      q.instruments.push_back(in);
    }
  }
  std::stable_sort(q.instruments.begin(), q.instruments.end(),
                   [](const Instrument& a, const Instrument& b) { return a.maturity_days < b.maturity_days; });
  return q;
}

std::string resolve(const std::string& path, const std::string& config_path) {
  if (path.empty() || fs::path(path).is_absolute() || fs::exists(path)) return path;
  const auto rel = fs::path(config_path).parent_path() / path;
  return fs::exists(rel) ? rel.string() : path;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

int gen_synthetic(const std::string& config_path, const Overrides& o, const std::string& out) {
  auto cfg = read_run_config(config_path);
  apply(o, cfg);
  if (!cfg.generating) throw ConfigError("gen-synthetic needs a \"generating\" model");
  auto quotes = quotes_from_spec(cfg);
  const auto prices = price_instruments(*cfg.generating, cfg.state, quotes, PricingScheme::Adi);
  const auto conv = cfg.conventions();
  for (std::size_t i = 0; i < quotes.size(); ++i) {
    auto& q = quotes.instruments[i];
    q.market_price = prices[i];
    q.market_iv = implied_vol(q, prices[i], conv);
  }
  std::ostringstream text;
  text << "# config_hash " << hash_hex(config_hash(run_config_to_json(cfg))) << '\n';
  write_instruments(text, quotes);
  if (out.empty() || out == "-") {
    std::cout << text.str();
  } else {
    write_text(out, text.str());
    std::cerr << "wrote " << quotes.size() << " instruments to " << out << '\n';
  }
  return 0;
}

int calibrate_cmd(const std::string& config_path, std::string instruments, const Overrides& o, const std::string& out,
                  bool verbose) {
  auto cfg = read_run_config(config_path);
  apply(o, cfg);
  if (cfg.calibration.variant == Variant::Sequential && !cfg.calibration.rho_ref) {
    throw ConfigError("the seq variant needs calibration.rho_ref in the config");
  }
  if (!cfg.reference) throw ConfigError("calibrate needs a \"reference\" model");
  if (instruments.empty()) instruments = resolve(cfg.instruments, config_path);
  if (instruments.empty()) throw ConfigError("no instrument file given (--instruments or \"instruments\")");
  cfg.calibration.verbose = verbose;

  const auto conv = cfg.conventions();
  const auto quotes = prepare_quotes(read_instruments_file(instruments, cfg.state.rate_scale), conv);
  const auto state = state_for_quotes(cfg.state, quotes);
  const auto cfg_json = run_config_to_json(cfg);
  const auto hash = hash_hex(config_hash(cfg_json));

  const auto result = calibrate(cfg.calibration, quotes, *cfg.reference, state, conv);

  fs::create_directories(out);
  const fs::path dir(out);
  auto meta = result_to_json(result, state, hash);
  meta["config"] = cfg_json;
  write_json_file((dir / "result.json").string(), meta);
  {
    std::ofstream f(dir / "surfaces.csv");
    write_surfaces_csv(f, result.surfaces, state, cfg.surface_stride, hash);
  }
  {
    std::ofstream f(dir / "prices.csv");
    write_price_table_csv(f, quotes, result, hash);
  }
  {
    std::ofstream f(dir / "quotes.csv");
    f << "# config_hash " << hash << '\n';
    write_instruments(f, quotes);
  }

  std::printf("%-5s %8s %10s %12s %10s %12s %10s\n", "kind", "days", "strike", "market", "mkt_iv", "model", "model_iv");
  for (std::size_t i = 0; i < quotes.size(); ++i) {
    const auto& q = quotes.instruments[i];
    std::printf("%-5s %8g %10g %12.6f %10.5f %12.6f %10.5f\n", to_string(q.kind).c_str(), q.maturity_days, q.strike,
                result.market_prices[i], result.market_ivs[i], result.model_prices[i], result.model_ivs[i]);
  }
  std::printf("%s (%.1f s, config %s)\n", result.message.c_str(), result.wall_seconds, hash.c_str());
  return result.calibrated ? 0 : kExitNotCalibrated;
}

struct LoadedResult {
  RunConfig cfg;
  StateSpace state;
  QuoteSet quotes;
  ModelSurfaces surfaces;
  std::string hash;
};

LoadedResult load_result(const std::string& dir_name) {
  const fs::path dir(dir_name);
  const auto meta = read_json_file((dir / "result.json").string());
  LoadedResult r;
  try {
    r.cfg = run_config_from_json(meta.at("config"));
    r.state = state_from_json(meta.at("state"));
    r.hash = meta.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(dir_name + "/result.json: " + e.what());
  }
  if (r.cfg.surface_stride != 1) throw ConfigError(dir_name + ": surfaces were exported with a stride; rerun with stride 1");
  r.quotes = prepare_quotes(read_instruments_file((dir / "quotes.csv").string(), r.state.rate_scale), r.cfg.conventions());
  std::ifstream f(dir / "surfaces.csv");
  if (!f) throw ConfigError("cannot open " + (dir / "surfaces.csv").string());
  r.surfaces = read_surfaces_csv(f, r.state);
  return r;
}

int validate_mc(const std::string& result_dir, const Overrides& o, const std::string& out) {
  auto r = load_result(result_dir);
  if (o.seed >= 0) r.cfg.mc.seed = static_cast<std::uint64_t>(o.seed);
  if (o.paths > 0) r.cfg.mc.paths = static_cast<std::size_t>(o.paths);
  const auto adi = price_instruments(r.surfaces, r.state, r.quotes, PricingScheme::Adi);
  std::vector<std::size_t> steps;
  for (const auto& q : r.quotes.instruments) steps.push_back(maturity_step(q.maturity_days, r.state.grid.dt * 365.0));
  const auto paths = simulate_paths(r.surfaces, r.state, steps, r.cfg.mc);
  std::vector<McEstimate> mc;
  for (std::size_t i = 0; i < r.quotes.size(); ++i) mc.push_back(mc_price(paths, r.quotes.instruments[i], steps[i]));

  std::ostringstream text;
  text << "# config_hash " << r.hash << "\n# mc_paths " << paths.n_paths << " seed " << r.cfg.mc.seed
       << " reflections " << paths.reflections << " psd_repairs " << paths.psd_repairs << '\n';
  text << "kind,maturity_days,strike,adi,mc,se,z\n";
  text.precision(10);
  std::size_t outside = 0;
  for (std::size_t i = 0; i < r.quotes.size(); ++i) {
    const auto& q = r.quotes.instruments[i];
    const double z = mc[i].standard_error > 0 ? (mc[i].price - adi[i]) / mc[i].standard_error : 0.0;
    if (std::abs(z) > 3) ++outside;
    text << to_string(q.kind) << ',' << q.maturity_days << ',' << q.strike << ',' << adi[i] << ',' << mc[i].price << ','
         << mc[i].standard_error << ',' << z << '\n';
  }
  if (out.empty() || out == "-") {
    std::cout << text.str();
  } else {
    write_text(out, text.str());
  }
  std::cerr << outside << " of " << r.quotes.size() << " instruments outside 3 standard errors";
  if (paths.reflections > 0) std::cerr << " (" << paths.reflections << " boundary reflections: the domain may be too small)";
  std::cerr << '\n';
  return outside == 0 ? 0 : kExitError;
}

int compare(const std::string& a_dir, const std::string& b_dir, const std::string& out) {
  const auto a = load_result(a_dir);
  const auto b = load_result(b_dir);
  if (!a.state.grid.same_space(b.state.grid) || a.state.grid.n_steps != b.state.grid.n_steps) {
    throw ConfigError("the two results live on different grids");
  }
  std::ostringstream text;
  write_surface_difference_csv(text, a.surfaces, b.surfaces, a.state, 1, a.hash + " - " + b.hash);
  if (out.empty() || out == "-") {
    std::cout << text.str();
  } else {
    write_text(out, text.str());
  }
  const auto norms = surface_difference_norms(a.surfaces, b.surfaces, a.state);
  const char* names[] = {"alpha1", "alpha2", "beta11", "beta12", "beta22", "rho"};
  for (std::size_t k = 0; k < norms.size(); ++k) std::cerr << "max |d " << names[k] << "| = " << norms[k] << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semimartingale optimal transport calibration"};
  app.require_subcommand(1);
  Overrides o;
  std::string config, out, instruments, result_dir, a_dir, b_dir;
  bool verbose = false;

  auto* gen = app.add_subcommand("gen-synthetic", "Price a strike/maturity lattice under the generating model");
  gen->add_option("config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Instrument file to write ('-' for stdout)");
  add_common(gen, o);

  auto* cal = app.add_subcommand("calibrate", "Calibrate to an instrument file");
  cal->add_option("config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cal->add_option("--instruments", instruments, "Instrument file (overrides the config)")->check(CLI::ExistingFile);
  cal->add_option("--out", out, "Output directory")->required();
  cal->add_option("--variant", o.variant, "joint, seq, full-seq or lsv");
  cal->add_option("--eps1", o.eps1, "Dual gradient tolerance (implied vol units)");
  cal->add_option("--eps2", o.eps2, "Policy iteration tolerance");
  cal->add_option("--bounds", o.bounds, "beta11_lo,beta11_hi,beta22_lo,beta22_hi in grid units");
  cal->add_option("--smoothing-iters", o.smoothing_iters, "Reference-model iterations after the first run");
  cal->add_option("--seed", o.seed, "Monte Carlo seed recorded with the run");
  cal->add_flag("-v,--verbose", verbose, "Log every L-BFGS iterate");
  add_common(cal, o);

  auto* mc = app.add_subcommand("validate-mc", "Monte Carlo against ADI prices for a calibrated result");
  mc->add_option("result", result_dir, "Directory written by calibrate")->required()->check(CLI::ExistingDirectory);
  mc->add_option("--out", out, "CSV report ('-' for stdout)");
  mc->add_option("--seed", o.seed, "Override the Monte Carlo seed");
  mc->add_option("--paths", o.paths, "Override the path count");

  auto* cmp = app.add_subcommand("compare", "Node-wise surface differences of two results");
  cmp->add_option("a", a_dir, "First result directory")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("b", b_dir, "Second result directory")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--out", out, "CSV report ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_synthetic(config, o, out);
    if (*cal) return calibrate_cmd(config, instruments, o, out, verbose);
    if (*mc) return validate_mc(result_dir, o, out);
    if (*cmp) return compare(a_dir, b_dir, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
