#include "crc/surface.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "crc/errors.hpp"
#include "crc/parallel.hpp"

namespace crc {

void Grid::validate() const {
  for (std::size_t i = 0; i < kMaturities; ++i) {
    if (!(maturities[i] > 0.0)) throw DomainError("Grid: maturities must be > 0");
    if (i > 0 && !(maturities[i] > maturities[i - 1])) throw DomainError("Grid: maturities must increase strictly");
  }
  for (std::size_t j = 0; j < kMoneyness; ++j) {
    if (!(moneyness[j] > 0.0)) throw DomainError("Grid: moneyness must be > 0");
    if (j > 0 && !(moneyness[j] > moneyness[j - 1])) throw DomainError("Grid: moneyness must increase strictly");
  }
}

Grid default_grid() {
  Grid g;
  const double lo = std::log(7.0), hi = std::log(440.0);
  for (std::size_t i = 0; i < Grid::kMaturities; ++i) {
    const double days = std::round(std::exp(lo + (hi - lo) * i / (Grid::kMaturities - 1)));
    g.maturities[i] = days / 365.0;
  }
  for (std::size_t j = 0; j < Grid::kMoneyness; ++j) g.moneyness[j] = 0.8 + j / 30.0;
  g.moneyness.back() = 1.2;
  return g;
}

std::array<double, JumpSpec::kBuckets + 1> default_bucket_edges(const Grid& grid) {
  return JumpSpec::edges_from_maturities(grid.maturities);
}

void VolSurface::validate() const {
  grid.validate();
  if (vols.size() != Grid::kPoints) throw ShapeError("VolSurface: expected 130 vols");
  for (double v : vols)
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("VolSurface: vols must be finite and > 0");
  if (!(spot > 0.0)) throw DomainError("VolSurface: spot must be > 0");
}

VolSurface build_surface(const MarketState& state, const HestonParams& p, const JumpSpec& j, const Grid& grid,
                         const DampingConfig& cfg, unsigned threads) {
  grid.validate();
  p.validate();
  j.validate();
  cfg.validate();
  VolSurface out;
  out.grid = grid;
  out.spot = state.spot();
  out.vols.assign(Grid::kPoints, 0.0);
  parallel_for(Grid::kPoints, threads, [&](std::size_t idx) {
    const std::size_t i = idx / Grid::kMoneyness, m = idx % Grid::kMoneyness;
    const double tau = grid.maturities[i];
    const double strike = grid.moneyness[m] * out.spot;
    const double fwd = out.spot * std::exp((p.r - p.q) * tau);
    const OptionKind kind = strike >= fwd ? OptionKind::Call : OptionKind::Put;
    try {
      const double price = fourier_price(state, p, j, strike, tau, kind, cfg);
      out.vols[idx] = implied_vol({strike, tau, price, kind}, out.spot, p.r, p.q);
    } catch (const Error& e) {
      throw SurfacePointError(i, m, e.what());
    }
  });
  return out;
}

std::vector<double> surface_call_prices(const VolSurface& s, double r, double q) {
  if (s.vols.size() != Grid::kPoints) throw ShapeError("surface_call_prices: expected 130 vols");
  std::vector<double> prices(Grid::kPoints);
  for (std::size_t i = 0; i < Grid::kMaturities; ++i)
    for (std::size_t m = 0; m < Grid::kMoneyness; ++m)
      prices[i * Grid::kMoneyness + m] =
          bs_price(s.spot, s.grid.moneyness[m] * s.spot, s.grid.maturities[i], s.at(i, m), r, q, OptionKind::Call);
  return prices;
}

double delta_c(const std::vector<double>& model_prices, const std::vector<double>& observed_prices) {
  if (model_prices.size() != observed_prices.size()) throw ShapeError("delta_c: grid mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < model_prices.size(); ++i) {
    const double d = model_prices[i] - observed_prices[i];
    acc += d * d;
  }
  return acc;
}

double delta_c(const VolSurface& model, const VolSurface& observed, double r, double q) {
  if (!(model.grid == observed.grid)) throw ShapeError("delta_c: grid mismatch");
  if (model.spot != observed.spot) throw ShapeError("delta_c: spot mismatch");
  return delta_c(surface_call_prices(model, r, q), surface_call_prices(observed, r, q));
}

ArbReport check_static_arbitrage(const VolSurface& s, double r, double q, double tol) {
  ArbReport rep;
  const auto prices = surface_call_prices(s, r, q);
  for (std::size_t i = 0; i < Grid::kMaturities; ++i) {
    for (std::size_t m = 1; m + 1 < Grid::kMoneyness; ++m) {
      const double k0 = s.grid.moneyness[m - 1], k1 = s.grid.moneyness[m], k2 = s.grid.moneyness[m + 1];
      const double w = (k2 - k1) / (k2 - k0);
      const double c0 = prices[i * Grid::kMoneyness + m - 1];
      const double c1 = prices[i * Grid::kMoneyness + m];
      const double c2 = prices[i * Grid::kMoneyness + m + 1];
      const double fly = w * c0 + (1.0 - w) * c2 - c1;
      if (fly < -tol) rep.butterfly_violations.push_back({i, m, -fly});
    }
  }
  // Calendar: total variance nondecreasing at equal forward log-moneyness. The
  // next maturity's smile is interpolated linearly in its own log-moneyness;
  // points outside its strike range are skipped.
  for (std::size_t i = 0; i + 1 < Grid::kMaturities; ++i) {
    const double t0 = s.grid.maturities[i], t1 = s.grid.maturities[i + 1];
    std::array<double, Grid::kMoneyness> k1{}, w1{};
    for (std::size_t m = 0; m < Grid::kMoneyness; ++m) {
      k1[m] = std::log(s.grid.moneyness[m]) - (r - q) * t1;
      w1[m] = s.at(i + 1, m) * s.at(i + 1, m) * t1;
    }
    for (std::size_t m = 0; m < Grid::kMoneyness; ++m) {
      const double k = std::log(s.grid.moneyness[m]) - (r - q) * t0;
      if (k < k1.front() || k > k1.back()) continue;
      const auto it = std::upper_bound(k1.begin(), k1.end(), k);
      const std::size_t hi = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - k1.begin(), 1), Grid::kMoneyness - 1);
      const double a = (k - k1[hi - 1]) / (k1[hi] - k1[hi - 1]);
      const double w_next = (1.0 - a) * w1[hi - 1] + a * w1[hi];
      const double w0 = s.at(i, m) * s.at(i, m) * t0;
      if (w_next - w0 < -tol) rep.calendar_violations.push_back({i, m, w0 - w_next});
    }
  }
  for (const auto& v : rep.butterfly_violations) rep.max_violation = std::max(rep.max_violation, v.magnitude);
  for (const auto& v : rep.calendar_violations) rep.max_violation = std::max(rep.max_violation, v.magnitude);
  return rep;
}

void write_surface_csv(std::ostream& os, const VolSurface& s) {
  os << "tau_days,moneyness,iv\n" << std::setprecision(17);
  for (std::size_t i = 0; i < Grid::kMaturities; ++i)
    for (std::size_t m = 0; m < Grid::kMoneyness; ++m)
      os << s.grid.maturities[i] * 365.0 << ',' << s.grid.moneyness[m] << ',' << s.at(i, m) << '\n';
}

void write_surface_csv(const std::string& path, const VolSurface& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_surface_csv(os, s);
  if (!os) throw IoError("write failed: " + path);
}

VolSurface read_surface_csv(std::istream& is, double spot) {
  std::string line;
  if (!std::getline(is, line) || line != "tau_days,moneyness,iv") throw IoError("surface csv: bad header");
  VolSurface s;
  s.spot = spot;
  s.vols.reserve(Grid::kPoints);
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (row >= Grid::kPoints) throw IoError("surface csv: too many rows");
    std::istringstream ls(line);
    double days, m, iv;
    char c1, c2;
    if (!(ls >> days >> c1 >> m >> c2 >> iv) || c1 != ',' || c2 != ',') throw IoError("surface csv: bad row");
    s.grid.maturities[row / Grid::kMoneyness] = days / 365.0;
    s.grid.moneyness[row % Grid::kMoneyness] = m;
    s.vols.push_back(iv);
    ++row;
  }
  if (row != Grid::kPoints) throw IoError("surface csv: expected 130 rows");
  return s;
}

}  // namespace crc
