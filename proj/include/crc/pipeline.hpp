#pragma once

#include <functional>
#include <vector>

#include "crc/config.hpp"
#include "crc/neural.hpp"

namespace crc {

struct TrainedNetwork {
  nn::Network net;
  nn::TrainHistory history;
  double val_rmse = 0.0;  // eval-mode RMSE on the held-out split (vol units)
};

using EpochCallback = std::function<void(int, double, double)>;

/// NN1 on a dataset: 41 scaled inputs -> 130 vols. The input scaling comes
/// from the sampling bounds and is stored in the weights' meta.
TrainedNetwork train_nn1(const std::vector<Sample>& samples, const SamplingBounds& bounds, const NetworkShape& shape,
                         const nn::TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// NN2 trained through NN3 = NN1(NN2(.)) with NN1 frozen. val_rmse is the
/// surface-reconstruction RMSE of NN3 on the held-out split.
TrainedNetwork train_nn2(const std::vector<Sample>& samples, const nn::Network& nn1, const SamplingBounds& bounds,
                         const NetworkShape& shape, const nn::TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Throws ConfigError unless the network carries an input scaling and a
/// training record.
void require_trained(const nn::Network& net, const std::string& what);

}  // namespace crc
