#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "crc/affine.hpp"
#include "crc/datagen.hpp"
#include "crc/neural.hpp"
#include "crc/surface.hpp"

namespace crc {

struct ParamBox {
  Range theta{0.01, 0.5};
  Range sigma{0.01, 0.5};
  Range rho{-1.0, 1.0};
};

struct SimConfig {
  double dt = 1.0 / 365.0;
  int n_steps = 250;
  double eps = 0.0;  // Delta_C threshold; 0 recalibrates at every step
  // Noise standard deviation per step for (theta, sigma, rho), relative to the
  // parameter's current magnitude.
  std::array<double, 3> noise_scale{0.01, 0.01, 0.01};
  double rel_cap = 0.05;  // max relative change of each parameter per step
  ParamBox box;
  std::uint64_t seed = 7;
  Grid grid = default_grid();

  void validate() const;
};

struct SimState {
  double t = 0.0;
  MarketState market;
  HestonParams p;
  JumpSpec j;
  double last_recal = 0.0;
};

struct ArbSummary {
  std::size_t butterfly = 0;
  std::size_t calendar = 0;
  double max_violation = 0.0;
  bool operator==(const ArbSummary&) const = default;
};

struct SimRecord {
  int step = 0;
  double t = 0.0;
  double x = 0.0;
  double v = 0.0;
  HestonParams p;
  JumpSpec j;
  std::vector<double> vols;      // emitted surface (130)
  double delta_c_before = 0.0;  // new parameters with unchanged jumps vs IVS_new
  double delta_c_after = 0.0;   // after recalibration (= before when skipped)
  bool recalibrated = false;
  bool recal_failed = false;    // eps > 0 and Delta_C still above eps after recalibration
  bool inputs_clamped = false;  // some network input left its training box
  ArbSummary arb;

  bool operator==(const SimRecord&) const = default;
};

/// Full-truncation Euler step of the Bates dynamics driven by the first
/// bucket's jump law, with the jump compensator in the drift.
MarketState bates_step(const MarketState& s, const HestonParams& p, const JumpSpec& j, double dt,
                       std::mt19937_64& rng);

/// Gaussian noise on (theta, sigma, rho), capped to rel_cap relative change,
/// clipped to the box, then sigma shrunk until Feller holds.
HestonParams param_step(const HestonParams& p, const SimConfig& cfg, std::mt19937_64& rng);

/// Clip to the box ("collapse to the closest extreme").
HestonParams clip_to_box(const HestonParams& p, const ParamBox& box);

struct Recalibration {
  JumpSpec j;
  std::vector<double> vols;  // NN1 surface with the recalibrated jumps
  double delta_c = 0.0;
  bool clamped = false;
};

/// Everything the loop needs from the trained networks.
struct SimNetworks {
  const nn::Network& nn1;
  const nn::Network& nn2;
  ScalingSpec scaling;
};

/// NN1 surface at a model point.
std::vector<double> model_surface(const SimNetworks& nets, const MarketState& m, const HestonParams& p,
                                  const JumpSpec& j, const Grid& grid, bool* clamped = nullptr);

/// Replace the bucket laws via NN2 so that the NN1 surface with p_new matches
/// the target; lambda and k are unchanged.
Recalibration recalibrate(const SimState& state, const HestonParams& p_new, const VolSurface& target,
                          const SimNetworks& nets);

/// Algorithm 1. Emits the initial record and one record per step.
std::vector<SimRecord> run(const SimConfig& cfg, const SimState& initial, const SimNetworks& nets,
                           const std::function<void(const SimRecord&)>& on_record = {});

/// Run directory: surfaces/step_NNNN.csv per record, path.csv and manifest.json.
void write_run(const std::string& dir, const SimConfig& cfg, const SimState& initial,
               const std::vector<SimRecord>& records);

}  // namespace crc
