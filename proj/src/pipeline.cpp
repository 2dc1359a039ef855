#include "crc/pipeline.hpp"

#include <cmath>

#include "crc/errors.hpp"

namespace crc {

namespace {

nn::Matrix cols(const nn::Matrix& m, const std::vector<std::size_t>& idx) {
  nn::Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(idx[c]));
  return out;
}

template <class Model>
double holdout_rmse(const Model& m, const nn::Matrix& x, const nn::Matrix& y, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return std::sqrt(nn::mse(m.infer(x), y));
  return std::sqrt(nn::mse(m.infer(cols(x, idx)), cols(y, idx)));
}

// Output layer starts near the mean surface: small weights, bias at the mean
// target. From a unit-scale start most of a short run is spent finding the level.
void prime_output(nn::Network& net, const nn::Matrix& y) {
  auto ps = net.params();
  ps[ps.size() - 2]->value *= 0.1;
  ps[ps.size() - 1]->value = y.rowwise().mean();
}

Grid sample_grid(const std::vector<Sample>& samples) {
  if (samples.empty()) throw DomainError("training needs at least one sample");
  return grid_from_inputs(samples.front().inputs);
}

}  // namespace

TrainedNetwork train_nn1(const std::vector<Sample>& samples, const SamplingBounds& bounds, const NetworkShape& shape,
                         const nn::TrainConfig& cfg, const EpochCallback& on_epoch) {
  const ScalingSpec scaling = ScalingSpec::from_bounds(bounds, sample_grid(samples));
  nn::Matrix x, y;
  nn::nn1_matrices(samples, scaling, x, y);
  nn::NetworkSpec spec;
  spec.input_dim = static_cast<int>(feature::kInputs);
  spec.output_dim = static_cast<int>(feature::kTargets);
  spec.width = shape.width;
  spec.n_main_layers = shape.n_main_layers;
  spec.residual = shape.residual;
  spec.batch_norm = shape.batch_norm;
  TrainedNetwork t{nn::Network(spec, cfg.seed), {}, 0.0};
  prime_output(t.net, y);
  t.history = nn::train(t.net, x, y, cfg, on_epoch);
  nn::attach_scaling(t.net, scaling);
  t.net.meta["trained_epochs"] = {static_cast<double>(cfg.epochs)};
  t.val_rmse = holdout_rmse(t.net, x, y, t.history.validation_indices);
  return t;
}

TrainedNetwork train_nn2(const std::vector<Sample>& samples, const nn::Network& nn1, const SamplingBounds& bounds,
                         const NetworkShape& shape, const nn::TrainConfig& cfg, const EpochCallback& on_epoch) {
  require_trained(nn1, "nn1");
  const ScalingSpec scaling = nn::scaling_of(nn1);
  sample_grid(samples);
  nn::Matrix x, y;
  nn::nn3_matrices(samples, scaling, x, y);
  nn::NetworkSpec spec = nn::nn2_spec(bounds, shape.width, shape.n_main_layers);
  spec.residual = shape.residual;
  spec.batch_norm = shape.batch_norm;
  nn::Nn3 nn3(nn1, nn::Network(spec, cfg.seed + 1), scaling);
  nn::TrainHistory h = nn::train(nn3, x, y, cfg, on_epoch);
  TrainedNetwork t{nn3.nn2(), std::move(h), 0.0};
  nn::attach_scaling(t.net, scaling);
  t.net.meta["trained_epochs"] = {static_cast<double>(cfg.epochs)};
  t.val_rmse = holdout_rmse(nn3, x, y, t.history.validation_indices);
  return t;
}

void require_trained(const nn::Network& net, const std::string& what) {
  if (!net.meta.count("trained_epochs")) throw ConfigError(what + ": network has no training record");
  nn::scaling_of(net);
}

}  // namespace crc
