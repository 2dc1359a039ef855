#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "crc/affine.hpp"
#include "crc/pricing.hpp"

namespace crc {

/// Fixed 10 x 13 maturity / moneyness grid (moneyness = strike / spot).
struct Grid {
  static constexpr std::size_t kMaturities = 10;
  static constexpr std::size_t kMoneyness = 13;
  static constexpr std::size_t kPoints = kMaturities * kMoneyness;

  std::array<double, kMaturities> maturities{};  // years
  std::array<double, kMoneyness> moneyness{};

  void validate() const;
  bool operator==(const Grid&) const = default;
};

/// 10 maturities log-spaced between 7 and 440 days, snapped to whole days;
/// 13 moneyness levels equally spaced on [0.8, 1.2].
Grid default_grid();

/// Jump bucket edges paired with a grid: {0, tau_2, tau_4, tau_6, tau_8, tau_10}.
std::array<double, JumpSpec::kBuckets + 1> default_bucket_edges(const Grid& grid = default_grid());

struct VolSurface {
  Grid grid;
  std::vector<double> vols;  // row-major, maturity-major: vols[i * 13 + j]
  double spot = 100.0;

  double at(std::size_t i, std::size_t j) const { return vols[i * Grid::kMoneyness + j]; }
  void validate() const;
};

struct ArbViolation {
  std::size_t i = 0;
  std::size_t j = 0;
  double magnitude = 0.0;
};

struct ArbReport {
  std::vector<ArbViolation> butterfly_violations;
  std::vector<ArbViolation> calendar_violations;
  double max_violation = 0.0;

  bool clean() const { return butterfly_violations.empty() && calendar_violations.empty(); }
};

/// Model implied-vol surface on `grid`. Points are evaluated in parallel over
/// `threads` workers (0 = hardware concurrency) and assembled in index order.
/// Each point is priced from its out-of-the-money leg. Errors carry the grid
/// coordinates of the failing point.
VolSurface build_surface(const MarketState& state, const HestonParams& p, const JumpSpec& j, const Grid& grid,
                         const DampingConfig& cfg = {}, unsigned threads = 1);

/// Call prices on the surface grid from its vols (row-major).
std::vector<double> surface_call_prices(const VolSurface& s, double r, double q);

/// Sum of squared call-price differences between two surfaces on the same grid.
double delta_c(const VolSurface& model, const VolSurface& observed, double r, double q);

/// Same functional on raw call-price vectors.
double delta_c(const std::vector<double>& model_prices, const std::vector<double>& observed_prices);

/// Static-arbitrage audit: butterfly convexity of call prices in strike, and
/// total implied variance nondecreasing in maturity at equal forward
/// log-moneyness (next smile interpolated linearly; off-range points skipped).
ArbReport check_static_arbitrage(const VolSurface& s, double r, double q, double tol = 1e-7);

/// CSV with header `tau_days,moneyness,iv`, 17 significant digits.
void write_surface_csv(std::ostream& os, const VolSurface& s);
void write_surface_csv(const std::string& path, const VolSurface& s);
VolSurface read_surface_csv(std::istream& is, double spot = 100.0);

}  // namespace crc
