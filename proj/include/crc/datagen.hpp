#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crc/affine.hpp"
#include "crc/pricing.hpp"
#include "crc/surface.hpp"

namespace crc {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Uniform sampling box for one dataset. Degenerate ranges (lo == hi) pin a
/// coordinate.
struct SamplingBounds {
  Range r{0.0, 0.06};
  Range q{0.0, 0.06};
  Range v0{1e-4, 0.5};
  Range k{1.0, 10.0};
  Range theta{0.01, 0.5};
  Range sigma{0.01, 0.5};
  Range rho{-0.95, 0.95};
  Range lambda{0.0, 1.0};
  std::array<Range, JumpSpec::kBuckets> nu{Range{-0.3, 0.3}, Range{-0.3, 0.3}, Range{-0.3, 0.3}, Range{-0.3, 0.3},
                                           Range{-0.3, 0.3}};
  std::array<Range, JumpSpec::kBuckets> delta{Range{0.01, 0.3}, Range{0.01, 0.3}, Range{0.01, 0.3},
                                              Range{0.01, 0.3}, Range{0.01, 0.3}};

  void validate() const;
};

/// One draw of everything a surface depends on besides the grid.
struct ModelPoint {
  HestonParams p;
  double v0 = 0.0;
  JumpSpec j;
};

// Layout of the 41 network inputs:
// r, q, tau_1..tau_10, m_1..m_13, v0, k, theta, sigma, rho, lambda, nu_1..nu_5, delta_1..delta_5.
namespace feature {
inline constexpr std::size_t kR = 0;
inline constexpr std::size_t kQ = 1;
inline constexpr std::size_t kTau = 2;
inline constexpr std::size_t kMoneyness = kTau + Grid::kMaturities;
inline constexpr std::size_t kV0 = kMoneyness + Grid::kMoneyness;
inline constexpr std::size_t kK = kV0 + 1;
inline constexpr std::size_t kTheta = kK + 1;
inline constexpr std::size_t kSigma = kTheta + 1;
inline constexpr std::size_t kRho = kSigma + 1;
inline constexpr std::size_t kLambda = kRho + 1;
inline constexpr std::size_t kNu = kLambda + 1;
inline constexpr std::size_t kDelta = kNu + JumpSpec::kBuckets;
inline constexpr std::size_t kInputs = kDelta + JumpSpec::kBuckets;  // 41
inline constexpr std::size_t kTargets = Grid::kPoints;               // 130
inline constexpr std::size_t kJumpOutputs = 2 * JumpSpec::kBuckets;   // 10
inline constexpr std::size_t kPassThrough = kInputs - kJumpOutputs;  // 31
}  // namespace feature

using InputVector = std::array<double, feature::kInputs>;

InputVector to_inputs(const ModelPoint& mp, const Grid& grid);
/// Inverse of to_inputs; bucket edges come from the grid.
ModelPoint from_inputs(std::span<const double> inputs);
Grid grid_from_inputs(std::span<const double> inputs);

/// Column names of the dataset CSV (41 inputs then 130 targets).
std::vector<std::string> dataset_columns();

/// Per-sample seed: a splitmix64 mix of (seed, index).
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index);

/// Uniform i.i.d. draw from the box, resampling (k, theta, sigma) until the
/// Feller condition holds. Throws DomainError when the rejection rate
/// exceeds 99%.
ModelPoint sample_params(std::uint64_t seed, const SamplingBounds& bounds,
                         const std::array<double, JumpSpec::kBuckets + 1>& edges);

struct Sample {
  std::uint64_t index = 0;
  InputVector inputs{};
  std::vector<double> targets;  // 130 implied vols
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;
  std::uint64_t seed = 0;
  std::size_t n_requested = 0;
  std::size_t n_written = 0;
  std::size_t n_dropped = 0;
  std::map<std::string, std::size_t> drop_reasons;
  std::vector<std::uint64_t> dropped_indices;
  double wall_seconds = 0.0;
  bool drop_warning = false;  // drop rate above 5%
  SamplingBounds bounds;
  Grid grid;
  DampingConfig damping;
};

struct Dataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;
};

/// Surface arbitrage tolerance a stored target row must meet.
inline constexpr double kDatasetArbTolerance = 1e-5;

/// Draws sample `index`, prices its surface and audits it. Returns false and
/// sets `reason` when the sample is dropped.
bool make_sample(std::uint64_t seed, std::uint64_t index, const SamplingBounds& bounds, const Grid& grid,
                 const DampingConfig& cfg, Sample& out, std::string& reason);

/// Samples for the given indices, in index order. Drops are counted in the
/// manifest; more than 50% dropped raises DomainError.
Dataset generate_dataset(std::span<const std::uint64_t> indices, std::uint64_t seed, const SamplingBounds& bounds,
                         const Grid& grid, const DampingConfig& cfg, unsigned threads = 1);
Dataset generate_dataset(std::size_t n, std::uint64_t seed, const SamplingBounds& bounds, const Grid& grid,
                         const DampingConfig& cfg, unsigned threads = 1);

void write_dataset_csv(std::ostream& os, const Dataset& d);
void write_dataset(const Dataset& d, const std::string& csv_path, const std::string& manifest_path);
/// Reads a dataset CSV; sample indices are positional.
std::vector<Sample> read_dataset_csv(const std::string& path);

/// Affine map of each input feature from its sampling range to [0, 1]. Grid
/// features share the span of the grid they come from. Implied vols are not
/// scaled.
struct ScalingSpec {
  InputVector lo{};
  InputVector hi{};

  static ScalingSpec from_bounds(const SamplingBounds& b, const Grid& grid);

  /// Scaled features; values outside the box are clamped and `clamped` set.
  InputVector scale(std::span<const double> x, bool* clamped = nullptr) const;
  InputVector unscale(std::span<const double> y) const;
  double scale_one(std::size_t i, double x) const;
  double unscale_one(std::size_t i, double y) const;
  /// d(scaled)/d(raw) for feature i (0 for degenerate ranges).
  double slope(std::size_t i) const;
};

}  // namespace crc
