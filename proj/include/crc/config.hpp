#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crc/datagen.hpp"
#include "json.hpp"
#include "crc/neural.hpp"
#include "crc/sim.hpp"

namespace crc {

using json = nlohmann::ordered_json;

/// Network shape knobs exposed in the config; dims and bounds are implied.
struct NetworkShape {
  int width = 256;
  int n_main_layers = 2;
  bool residual = true;
  bool batch_norm = true;
  bool operator==(const NetworkShape&) const = default;
};

struct NetworkConfig {
  NetworkShape shape;
  nn::TrainConfig train;
};

/// Initial condition of a simulation run (defaults: reference set 1).
struct SimInitial {
  double spot = 100.0;
  double v0 = 0.0001;
  HestonParams p{0.0205, 0.03, 7.797, 0.247, 0.280, 0.042};
  double lambda = 0.081;
  std::array<double, JumpSpec::kBuckets> nu{0.159, 0.159, 0.159, 0.159, 0.159};
  std::array<double, JumpSpec::kBuckets> delta{0.205, 0.205, 0.205, 0.205, 0.205};

  SimState state(const Grid& grid) const;
};

struct Paths {
  std::string data;
  std::string nn1;
  std::string nn2;
  std::string out;
};

/// Everything a CLI command reads from the config file.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t n = 20000;
  unsigned threads = 0;  // 0 = hardware concurrency
  SamplingBounds sampling;
  DampingConfig damping = dataset_damping();
  NetworkConfig nn1 = default_nn1();
  NetworkConfig nn2 = default_nn2();
  SimConfig sim;
  SimInitial initial;
  Paths paths;

  /// Quadrature used for training data: looser than the pricing default,
  /// still far below network error.
  static DampingConfig dataset_damping();
  static NetworkConfig default_nn1();
  static NetworkConfig default_nn2();
  void validate() const;
};

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "CRC_CONFIG";

/// Strict parse: unknown keys and wrong types raise ConfigError naming the key.
RunConfig run_config_from_json(const json& j);
json to_json(const RunConfig& c);
RunConfig load_run_config(const std::string& path);
/// `path` when non-empty, else $CRC_CONFIG when set, else defaults.
RunConfig resolve_run_config(const std::string& path);

json to_json(const SamplingBounds& b);
json to_json(const DampingConfig& d);
json to_json(const Grid& g);
json to_json(const nn::TrainConfig& t);
json to_json(const SimConfig& s);
json to_json(const HestonParams& p);
json to_json(const JumpSpec& j);
json to_json(const nn::TrainHistory& h);

SamplingBounds sampling_from_json(const json& j, const SamplingBounds& base = {});
DampingConfig damping_from_json(const json& j, const DampingConfig& base = {});
nn::TrainConfig train_from_json(const json& j, const nn::TrainConfig& base = {});
SimConfig sim_from_json(const json& j, const SimConfig& base = {});

json manifest_to_json(const DatasetManifest& m);
json run_manifest_json(const SimConfig& cfg, const SimState& initial, const std::vector<SimRecord>& records);

}  // namespace crc
