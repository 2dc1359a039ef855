#include "crc/datagen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "crc/config.hpp"
#include "crc/errors.hpp"
#include "crc/parallel.hpp"

namespace crc {

namespace {

void check_range(const Range& r, const std::string& name, double min_lo = -INFINITY, double max_hi = INFINITY) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi)) throw DomainError("SamplingBounds: " + name + " must be finite");
  if (r.lo > r.hi) throw DomainError("SamplingBounds: " + name + " has lo > hi");
  if (r.lo < min_lo || r.hi > max_hi) throw DomainError("SamplingBounds: " + name + " outside admissible range");
}

double uniform01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

double draw(std::mt19937_64& g, const Range& r) { return r.lo + (r.hi - r.lo) * uniform01(g); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr int kMaxFellerAttempts = 1000;

}  // namespace

void SamplingBounds::validate() const {
  check_range(r, "r");
  check_range(q, "q");
  check_range(v0, "v0", 0.0);
  check_range(k, "k");
  check_range(theta, "theta");
  check_range(sigma, "sigma");
  check_range(rho, "rho", -1.0, 1.0);
  check_range(lambda, "lambda", 0.0);
  for (std::size_t b = 0; b < JumpSpec::kBuckets; ++b) {
    check_range(nu[b], "nu_" + std::to_string(b + 1));
    check_range(delta[b], "delta_" + std::to_string(b + 1), 0.0);
  }
  if (!(k.lo > 0.0) || !(theta.lo > 0.0) || !(sigma.lo > 0.0))
    throw DomainError("SamplingBounds: k, theta and sigma must be bounded away from 0");
  if (!(2.0 * k.hi * theta.hi > sigma.lo * sigma.lo))
    throw DomainError("SamplingBounds: Feller condition unattainable inside the box");
}

InputVector to_inputs(const ModelPoint& mp, const Grid& grid) {
  using namespace feature;
  InputVector x{};
  x[kR] = mp.p.r;
  x[kQ] = mp.p.q;
  for (std::size_t i = 0; i < Grid::kMaturities; ++i) x[kTau + i] = grid.maturities[i];
  for (std::size_t m = 0; m < Grid::kMoneyness; ++m) x[kMoneyness + m] = grid.moneyness[m];
  x[kV0] = mp.v0;
  x[kK] = mp.p.k;
  x[kTheta] = mp.p.theta;
  x[kSigma] = mp.p.sigma;
  x[kRho] = mp.p.rho;
  x[kLambda] = mp.j.lambda;
  for (std::size_t b = 0; b < JumpSpec::kBuckets; ++b) {
    x[kNu + b] = mp.j.buckets[b].nu;
    x[kDelta + b] = mp.j.buckets[b].delta;
  }
  return x;
}

Grid grid_from_inputs(std::span<const double> x) {
  using namespace feature;
  if (x.size() != kInputs) throw ShapeError("grid_from_inputs: expected 41 inputs");
  Grid g;
  for (std::size_t i = 0; i < Grid::kMaturities; ++i) g.maturities[i] = x[kTau + i];
  for (std::size_t m = 0; m < Grid::kMoneyness; ++m) g.moneyness[m] = x[kMoneyness + m];
  return g;
}

ModelPoint from_inputs(std::span<const double> x) {
  using namespace feature;
  if (x.size() != kInputs) throw ShapeError("from_inputs: expected 41 inputs");
  ModelPoint mp;
  mp.p = {x[kR], x[kQ], x[kK], x[kTheta], x[kSigma], x[kRho]};
  mp.v0 = x[kV0];
  mp.j.lambda = x[kLambda];
  for (std::size_t b = 0; b < JumpSpec::kBuckets; ++b) mp.j.buckets[b] = {x[kNu + b], x[kDelta + b]};
  mp.j.bucket_edges = default_bucket_edges(grid_from_inputs(x));
  return mp;
}

std::vector<std::string> dataset_columns() {
  std::vector<std::string> c{"r", "q"};
  for (std::size_t i = 1; i <= Grid::kMaturities; ++i) c.push_back("tau_" + std::to_string(i));
  for (std::size_t m = 1; m <= Grid::kMoneyness; ++m) c.push_back("m_" + std::to_string(m));
  for (const char* n : {"v0", "k", "theta", "sigma", "rho", "lambda"}) c.emplace_back(n);
  for (std::size_t b = 1; b <= JumpSpec::kBuckets; ++b) c.push_back("nu_" + std::to_string(b));
  for (std::size_t b = 1; b <= JumpSpec::kBuckets; ++b) c.push_back("delta_" + std::to_string(b));
  for (std::size_t i = 1; i <= Grid::kMaturities; ++i)
    for (std::size_t m = 1; m <= Grid::kMoneyness; ++m)
      c.push_back("iv_" + std::to_string(i) + "_" + std::to_string(m));
  return c;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

ModelPoint sample_params(std::uint64_t seed, const SamplingBounds& b,
                         const std::array<double, JumpSpec::kBuckets + 1>& edges) {
  b.validate();
  std::mt19937_64 g(seed);
  ModelPoint mp;
  mp.p.r = draw(g, b.r);
  mp.p.q = draw(g, b.q);
  mp.v0 = draw(g, b.v0);
  mp.p.rho = draw(g, b.rho);
  mp.j.lambda = draw(g, b.lambda);
  for (std::size_t i = 0; i < JumpSpec::kBuckets; ++i) mp.j.buckets[i].nu = draw(g, b.nu[i]);
  for (std::size_t i = 0; i < JumpSpec::kBuckets; ++i) mp.j.buckets[i].delta = draw(g, b.delta[i]);
  mp.j.bucket_edges = edges;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxFellerAttempts)
      throw DomainError("sample_params: Feller rejection rate above 99% for these bounds");
    mp.p.k = draw(g, b.k);
    mp.p.theta = draw(g, b.theta);
    mp.p.sigma = draw(g, b.sigma);
    if (mp.p.feller()) break;
  }
  return mp;
}

bool make_sample(std::uint64_t seed, std::uint64_t index, const SamplingBounds& bounds, const Grid& grid,
                 const DampingConfig& cfg, Sample& out, std::string& reason) {
  const ModelPoint mp = sample_params(sample_seed(seed, index), bounds, default_bucket_edges(grid));
  const MarketState state{std::log(100.0), mp.v0, 100.0};
  VolSurface surf;
  try {
    surf = build_surface(state, mp.p, mp.j, grid, cfg, 1);
  } catch (const Error&) {
    reason = "pricing";
    return false;
  }
  if (check_static_arbitrage(surf, mp.p.r, mp.p.q).max_violation >= kDatasetArbTolerance) {
    reason = "arbitrage";
    return false;
  }
  out.index = index;
  out.inputs = to_inputs(mp, grid);
  out.targets = std::move(surf.vols);
  return true;
}

Dataset generate_dataset(std::span<const std::uint64_t> indices, std::uint64_t seed, const SamplingBounds& bounds,
                         const Grid& grid, const DampingConfig& cfg, unsigned threads) {
  bounds.validate();
  grid.validate();
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::optional<Sample>> slots(indices.size());
  std::vector<std::string> reasons(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    Sample s;
    if (make_sample(seed, indices[i], bounds, grid, cfg, s, reasons[i])) slots[i] = std::move(s);
  });

  Dataset d;
  DatasetManifest& m = d.manifest;
  m.seed = seed;
  m.bounds = bounds;
  m.grid = grid;
  m.damping = cfg;
  m.n_requested = indices.size();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) {
      d.samples.push_back(std::move(*slots[i]));
    } else {
      ++m.drop_reasons[reasons[i]];
      m.dropped_indices.push_back(indices[i]);
    }
  }
  m.n_written = d.samples.size();
  m.n_dropped = m.dropped_indices.size();
  const double rate = m.n_requested ? static_cast<double>(m.n_dropped) / m.n_requested : 0.0;
  m.drop_warning = rate > 0.05;
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (rate > 0.5)
    throw DomainError("generate_dataset: " + std::to_string(m.n_dropped) + " of " + std::to_string(m.n_requested) +
                      " samples dropped");
  return d;
}

Dataset generate_dataset(std::size_t n, std::uint64_t seed, const SamplingBounds& bounds, const Grid& grid,
                         const DampingConfig& cfg, unsigned threads) {
  if (n == 0) throw DomainError("generate_dataset: n must be >= 1");
  std::vector<std::uint64_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return generate_dataset(idx, seed, bounds, grid, cfg, threads);
}

void write_dataset_csv(std::ostream& os, const Dataset& d) {
  const auto cols = dataset_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
  os << '\n';
  char buf[32];
  for (const Sample& s : d.samples) {
    std::string line;
    line.reserve(171 * 24);
    for (double v : s.inputs) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      line += buf;
    }
    for (std::size_t t = 0; t < s.targets.size(); ++t) {
      std::snprintf(buf, sizeof buf, t + 1 < s.targets.size() ? "%.17g," : "%.17g", s.targets[t]);
      line += buf;
    }
    os << line << '\n';
  }
}

void write_dataset(const Dataset& d, const std::string& csv_path, const std::string& manifest_path) {
  {
    std::ofstream os(csv_path, std::ios::binary);
    if (!os) throw IoError("cannot open " + csv_path + " for writing");
    write_dataset_csv(os, d);
    if (!os) throw IoError("write failed: " + csv_path);
  }
  std::ofstream ms(manifest_path, std::ios::binary);
  if (!ms) throw IoError("cannot open " + manifest_path + " for writing");
  ms << manifest_to_json(d.manifest).dump(2) << '\n';
  if (!ms) throw IoError("write failed: " + manifest_path);
}

std::vector<Sample> read_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError(path + ": empty dataset file");
  const auto cols = dataset_columns();
  {
    std::stringstream expected;
    for (std::size_t c = 0; c < cols.size(); ++c) expected << (c ? "," : "") << cols[c];
    if (line != expected.str()) throw IoError(path + ": unexpected header");
  }
  std::vector<Sample> out;
  std::vector<double> row(cols.size());
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.c_str();
    for (std::size_t c = 0; c < cols.size(); ++c) {
      char* end = nullptr;
      row[c] = std::strtod(p, &end);
      if (end == p) throw IoError(path + ": bad number on line " + std::to_string(line_no));
      p = end;
      if (c + 1 < cols.size()) {
        if (*p != ',') throw IoError(path + ": expected 171 columns on line " + std::to_string(line_no));
        ++p;
      }
    }
    if (*p != '\0' && *p != '\r') throw IoError(path + ": trailing data on line " + std::to_string(line_no));
    Sample s;
    s.index = out.size();
    std::copy_n(row.begin(), feature::kInputs, s.inputs.begin());
    s.targets.assign(row.begin() + feature::kInputs, row.end());
    out.push_back(std::move(s));
  }
  return out;
}

ScalingSpec ScalingSpec::from_bounds(const SamplingBounds& b, const Grid& grid) {
  using namespace feature;
  ScalingSpec s;
  auto set = [&](std::size_t i, const Range& r) {
    s.lo[i] = r.lo;
    s.hi[i] = r.hi;
  };
  set(kR, b.r);
  set(kQ, b.q);
  for (std::size_t i = 0; i < Grid::kMaturities; ++i) set(kTau + i, {grid.maturities.front(), grid.maturities.back()});
  for (std::size_t m = 0; m < Grid::kMoneyness; ++m)
    set(kMoneyness + m, {grid.moneyness.front(), grid.moneyness.back()});
  set(kV0, b.v0);
  set(kK, b.k);
  set(kTheta, b.theta);
  set(kSigma, b.sigma);
  set(kRho, b.rho);
  set(kLambda, b.lambda);
  for (std::size_t i = 0; i < JumpSpec::kBuckets; ++i) {
    set(kNu + i, b.nu[i]);
    set(kDelta + i, b.delta[i]);
  }
  return s;
}

double ScalingSpec::slope(std::size_t i) const { return hi[i] > lo[i] ? 1.0 / (hi[i] - lo[i]) : 0.0; }

double ScalingSpec::scale_one(std::size_t i, double x) const {
  // A pinned coordinate maps to the middle of the unit interval.
  return hi[i] > lo[i] ? (x - lo[i]) / (hi[i] - lo[i]) : 0.5;
}

double ScalingSpec::unscale_one(std::size_t i, double y) const { return lo[i] + (hi[i] - lo[i]) * y; }

InputVector ScalingSpec::scale(std::span<const double> x, bool* clamped) const {
  if (x.size() != feature::kInputs) throw ShapeError("ScalingSpec::scale: expected 41 inputs");
  InputVector y{};
  bool any = false;
  for (std::size_t i = 0; i < feature::kInputs; ++i) {
    double v = scale_one(i, x[i]);
    if (v < 0.0 || v > 1.0) {
      v = std::clamp(v, 0.0, 1.0);
      any = true;
    }
    y[i] = v;
  }
  if (clamped) *clamped = any;
  return y;
}

InputVector ScalingSpec::unscale(std::span<const double> y) const {
  if (y.size() != feature::kInputs) throw ShapeError("ScalingSpec::unscale: expected 41 inputs");
  InputVector x{};
  for (std::size_t i = 0; i < feature::kInputs; ++i) x[i] = unscale_one(i, y[i]);
  return x;
}

}  // namespace crc
