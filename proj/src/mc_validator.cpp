#include "sotcal/mc_validator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>
#include <thread>

#include "sotcal/hjb.hpp"

namespace sotcal {

void McConfig::validate() const {
  if (paths == 0) throw std::invalid_argument("Monte Carlo needs at least one path");
  if (substeps == 0) throw std::invalid_argument("Monte Carlo needs at least one substep");
}

namespace {

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

SplitMix64::SplitMix64(std::uint64_t seed, std::uint64_t stream) : state_(mix(seed) ^ mix(stream + 0x632be59bd9b4e019ULL)) {}

SplitMix64::result_type SplitMix64::operator()() {
  state_ += 0x9e3779b97f4a7c15ULL;
  return mix(state_);
}

namespace {

struct Coeffs {
  double a1, a2, b11, b12, b22;
};

// Reflects x into [lo, hi]; returns whether it moved.
bool reflect(double& x, double lo, double hi) {
  bool moved = false;
  for (int k = 0; k < 8 && (x < lo || x > hi); ++k) {
    x = x < lo ? 2 * lo - x : 2 * hi - x;
    moved = true;
  }
  x = std::clamp(x, lo, hi);
  return moved;
}

Coeffs interpolate(const SurfaceSlice& s, const Grid& g, double z, double y) {
  const auto st = bilinear_stencil(g, z, y);
  Coeffs c{0, 0, 0, 0, 0};
  for (int q = 0; q < 4; ++q) {
    const auto k = st.nodes[q];
    const double w = st.weights[q];
    c.a1 += w * s.alpha1[k];
    c.a2 += w * s.alpha2[k];
    c.b11 += w * s.beta11[k];
    c.b12 += w * s.beta12[k];
    c.b22 += w * s.beta22[k];
  }
  return c;
}

struct PathState {
  double z, y, integral;
};

struct Counters {
  std::size_t reflections = 0;
  std::size_t repairs = 0;
};

}  // namespace

PathEnsemble simulate_paths(const ModelSurfaces& surfaces, const StateSpace& state,
                            std::vector<std::size_t> record_steps, const McConfig& cfg) {
  cfg.validate();
  state.validate();
  const Grid& g = state.grid;
  if (surfaces.empty() || !surfaces.grid().same_space(g)) throw GridError("surfaces live on a different grid");
  std::sort(record_steps.begin(), record_steps.end());
  record_steps.erase(std::unique(record_steps.begin(), record_steps.end()), record_steps.end());
  if (record_steps.empty() || record_steps.front() == 0) {
    throw std::invalid_argument("recorded steps must be positive");
  }
  const std::size_t horizon = record_steps.back();
  if (!surfaces.time_homogeneous() && surfaces.slice_count() < horizon) {
    throw std::invalid_argument("surfaces do not cover the last recorded step");
  }
  if (!g.contains(state.z0, state.y0)) throw std::invalid_argument("initial state is outside the grid");

  PathEnsemble ens;
  const std::size_t width = cfg.antithetic ? 2 : 1;
  const std::size_t groups = (cfg.paths + width - 1) / width;
  ens.n_paths = groups * width;
  ens.group_size = width;
  ens.steps = record_steps;
  ens.dt = g.dt;
  ens.rate_scale = state.rate_scale;
  const std::size_t ns = record_steps.size();
  ens.z.assign(ens.n_paths * ns, 0.0);
  ens.y.assign(ens.n_paths * ns, 0.0);
  ens.discount.assign(ens.n_paths * ns, 0.0);

  const double h = g.dt / static_cast<double>(cfg.substeps);
  const double sq = std::sqrt(h);
  const double inv_scale = state.discounting ? 1.0 / state.rate_scale : 0.0;

  auto run_groups = [&](std::size_t first, std::size_t last, Counters& cnt) {
    std::normal_distribution<double> normal;
    for (std::size_t grp = first; grp < last; ++grp) {
      SplitMix64 rng(cfg.seed, grp);
      normal.reset();
      PathState p[2];
      for (std::size_t w = 0; w < width; ++w) p[w] = {state.z0, state.y0, 0.0};
      std::size_t rec = 0;
      for (std::size_t k = 0; k < horizon; ++k) {
        const auto& slice = surfaces.at(k);
        for (std::size_t sub = 0; sub < cfg.substeps; ++sub) {
          const double e1 = normal(rng), e2 = normal(rng);
          for (std::size_t w = 0; w < width; ++w) {
            const double sign = w == 0 ? 1.0 : -1.0;
            auto& s = p[w];
            auto c = interpolate(slice, g, s.z, s.y);
            bool repaired = false;
            if (c.b11 < 0) c.b11 = 0, repaired = true;
            if (c.b22 < 0) c.b22 = 0, repaired = true;
            const double band = std::sqrt(c.b11 * c.b22);
            if (std::abs(c.b12) > band) c.b12 = std::copysign(band, c.b12), repaired = true;
            if (repaired) ++cnt.repairs;
            const double l11 = std::sqrt(c.b11);
            const double l21 = l11 > 0 ? c.b12 / l11 : 0.0;
            const double l22 = std::sqrt(std::max(c.b22 - l21 * l21, 0.0));
            const double r_old = s.y * inv_scale;
            s.z += c.a1 * h + l11 * sign * e1 * sq;
            s.y += c.a2 * h + (l21 * e1 + l22 * e2) * sign * sq;
            if (reflect(s.z, g.z_min, g.z_max)) ++cnt.reflections;
            if (reflect(s.y, g.r_min, g.r_max)) ++cnt.reflections;
            s.integral += 0.5 * (r_old + s.y * inv_scale) * h;
          }
        }
        if (k + 1 == record_steps[rec]) {
          for (std::size_t w = 0; w < width; ++w) {
            const std::size_t idx = ens.at(grp * width + w, rec);
            ens.z[idx] = p[w].z;
            ens.y[idx] = p[w].y;
            ens.discount[idx] = std::exp(-p[w].integral);
          }
          ++rec;
        }
      }
    }
  };

  std::size_t nthreads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  nthreads = std::min(nthreads, groups);
  std::vector<Counters> counters(nthreads);
  if (nthreads <= 1) {
    run_groups(0, groups, counters[0]);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (groups + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
      const std::size_t a = t * per, b = std::min(groups, a + per);
      if (a >= b) break;
      pool.emplace_back(run_groups, a, b, std::ref(counters[t]));
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& c : counters) {
    ens.reflections += c.reflections;
    ens.psd_repairs += c.repairs;
  }
  return ens;
}

McEstimate mc_price(const PathEnsemble& paths, const Instrument& instr, std::size_t maturity_step) {
  const auto it = std::find(paths.steps.begin(), paths.steps.end(), maturity_step);
  if (it == paths.steps.end()) throw std::invalid_argument("maturity step was not recorded");
  const std::size_t s = static_cast<std::size_t>(it - paths.steps.begin());
  const std::size_t w = std::max<std::size_t>(paths.group_size, 1);
  const std::size_t groups = paths.n_paths / w;
  // Fixed summation order; one sample per antithetic group.
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t grp = 0; grp < groups; ++grp) {
    double v = 0.0;
    for (std::size_t q = 0; q < w; ++q) {
      const auto k = paths.at(grp * w + q, s);
      v += paths.discount[k] * payoff(instr, paths.z[k], paths.y[k], paths.rate_scale);
    }
    v /= static_cast<double>(w);
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(groups);
  const double mean = sum / n;
  const double var = groups > 1 ? std::max(sum2 / n - mean * mean, 0.0) * n / (n - 1) : 0.0;
  return {mean, std::sqrt(var / n)};
}

std::vector<McEstimate> mc_price_all(const ModelSurfaces& surfaces, const StateSpace& state,
                                     const QuoteSet& quotes, const McConfig& cfg) {
  quotes.validate();
  const double dt_days = state.grid.dt * 365.0;
  std::vector<std::size_t> steps;
  for (const auto& q : quotes.instruments) steps.push_back(maturity_step(q.maturity_days, dt_days));
  const auto paths = simulate_paths(surfaces, state, steps, cfg);
  std::vector<McEstimate> out;
  for (std::size_t i = 0; i < quotes.size(); ++i) out.push_back(mc_price(paths, quotes.instruments[i], steps[i]));
  return out;
}

McEstimate mc_price(const ModelSurfaces& surfaces, const StateSpace& state, const Instrument& instr,
                    const McConfig& cfg) {
  QuoteSet one;
  one.instruments = {instr};
  one.rate_scale = state.rate_scale;
  return mc_price_all(surfaces, state, one, cfg).front();
}

void write_paths_csv(std::ostream& out, const PathEnsemble& paths, std::size_t max_paths) {
  out << "path,step,t_days,z,spot,y,short_rate,discount\n";
  out.precision(12);
  const std::size_t n = std::min(max_paths, paths.n_paths);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t s = 0; s < paths.steps.size(); ++s) {
      const auto k = paths.at(p, s);
      out << p << ',' << paths.steps[s] << ',' << paths.steps[s] * paths.dt * 365.0 << ',' << paths.z[k] << ','
          << std::exp(paths.z[k]) << ',' << paths.y[k] << ',' << paths.y[k] / paths.rate_scale << ','
          << paths.discount[k] << '\n';
    }
  }
}

}  // namespace sotcal
