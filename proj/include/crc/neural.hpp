#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "crc/datagen.hpp"
#include "crc/surface.hpp"

namespace crc::nn {

/// Features x batch: one column per sample.
using Matrix = Eigen::MatrixXd;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;  // false for batch-norm running statistics
};

class Layer {
 public:
  virtual ~Layer() = default;
  /// Caches what backward needs. `train` selects batch statistics in batch norm.
  virtual Matrix forward(const Matrix& x, bool train) = 0;
  /// Accumulates parameter gradients and returns d loss / d input.
  virtual Matrix backward(const Matrix& dy) = 0;
  /// Eval-mode forward without touching any cache.
  virtual Matrix infer(const Matrix& x) const = 0;
  virtual void collect(std::vector<Param*>& out) { (void)out; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Dense : public Layer {
 public:
  Dense(int in, int out);
  /// Gaussian weights with standard deviation gain / sqrt(in); zero bias.
  void init(std::mt19937_64& rng, double gain);
  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Matrix infer(const Matrix& x) const override;
  void collect(std::vector<Param*>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  Param w;
  Param b;

 private:
  Matrix x_;
};

class Elu : public Layer {
 public:
  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Matrix infer(const Matrix& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Elu>(*this); }

 private:
  Matrix y_;
};

class BatchNorm : public Layer {
 public:
  static constexpr double kMomentum = 0.99;
  static constexpr double kEps = 1e-5;

  explicit BatchNorm(int dim);
  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Matrix infer(const Matrix& x) const override;
  void collect(std::vector<Param*>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Param gamma;
  Param beta;
  Param running_mean;
  Param running_var;

 private:
  Matrix xhat_;
  Eigen::VectorXd inv_std_;
  bool train_ = false;
};

/// out = act(BN(W2 act(BN(W1 x + b1)) + b2)) + x
class ResidualCell : public Layer {
 public:
  ResidualCell(int width, bool batch_norm);
  ResidualCell(const ResidualCell& other);
  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Matrix infer(const Matrix& x) const override;
  void collect(std::vector<Param*>& out) override;
  std::unique_ptr<Layer> clone() const override;

 private:
  std::vector<std::unique_ptr<Layer>> chain_;
};

/// y_i = lo_i + (hi_i - lo_i) * sigmoid(x_i); strictly inside (lo_i, hi_i).
class StretchedSigmoid : public Layer {
 public:
  StretchedSigmoid(std::vector<double> lo, std::vector<double> hi);
  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Matrix infer(const Matrix& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<StretchedSigmoid>(*this); }

 private:
  Eigen::VectorXd lo_;
  Eigen::VectorXd width_;
  Matrix s_;
};

/// Mean over all entries of (pred - target)^2; gradient written to `grad` when given.
double mse(const Matrix& pred, const Matrix& target, Matrix* grad = nullptr);

enum class OutputActivation { Linear, StretchedSigmoid };

struct NetworkSpec {
  int input_dim = 0;
  int output_dim = 0;
  int n_main_layers = 2;
  int width = 256;
  bool residual = true;
  bool batch_norm = true;
  OutputActivation output_activation = OutputActivation::Linear;
  std::vector<double> out_lo;  // stretched-sigmoid bounds, one per output
  std::vector<double> out_hi;

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

/// Anything the training loop can fit.
class Trainable {
 public:
  virtual ~Trainable() = default;
  virtual Matrix forward(const Matrix& x, bool train) = 0;
  virtual Matrix backward(const Matrix& dy) = 0;
  virtual Matrix infer(const Matrix& x) const = 0;
  virtual std::vector<Param*> trainable_params() = 0;
};

/// Stem (dense, BN, ELU), n_main_layers residual cells or plain dense/BN/ELU
/// layers, then a dense output with an optional stretched sigmoid.
class Network : public Trainable {
 public:
  explicit Network(const NetworkSpec& spec, std::uint64_t seed = 0);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Matrix infer(const Matrix& x) const override;
  std::vector<Param*> trainable_params() override;

  /// Every tensor (trainable and buffers) in declaration order.
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  void zero_grad();
  const NetworkSpec& spec() const { return spec_; }

  /// Free-form numeric side data persisted with the weights (scaling, grid).
  std::map<std::string, std::vector<double>> meta;

 private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

bool bitwise_equal(const Network& a, const Network& b);

struct TrainConfig {
  enum class Schedule {
    Plateau,  // halve after plateau_patience epochs without validation improvement
    Cosine,   // cosine decay from learning_rate to min_learning_rate over the run
  };
  int batch_size = 1000;
  int epochs = 200;
  double learning_rate = 1e-3;
  double min_learning_rate = 1e-6;
  Schedule schedule = Schedule::Plateau;
  int plateau_patience = 10;  // epochs without validation improvement before halving
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
  bool restore_best = true;  // keep the weights of the best validation epoch

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean batch loss per epoch (train mode)
  std::vector<double> val_loss;    // eval-mode loss on the held-out split
  std::vector<double> learning_rate;
  double final_train_loss = 0.0;
  std::vector<std::size_t> validation_indices;
};

/// Adam (0.9, 0.999, 1e-8) on MSE with seeded shuffling and a learning-rate schedule.
/// Columns of X / Y are samples. A NaN loss raises DivergenceError.
TrainHistory train(Trainable& model, const Matrix& x, const Matrix& y, const TrainConfig& cfg,
                   const std::function<void(int, double, double)>& on_epoch = {});

/// NN3 = NN1 o NN2 with NN1 frozen. Input rows: the 31 scaled non-jump NN1
/// features followed by the 130 implied vols; output: NN1's 130 vols.
class Nn3 : public Trainable {
 public:
  static constexpr int kInputDim = static_cast<int>(feature::kPassThrough + feature::kTargets);  // 161
  static constexpr int kNn2InputDim = static_cast<int>(3 + feature::kTargets);                  // 133

  Nn3(Network nn1, Network nn2, const ScalingSpec& scaling);

  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Matrix infer(const Matrix& x) const override;
  std::vector<Param*> trainable_params() override { return nn2_.trainable_params(); }

  const Network& nn1() const { return nn1_; }
  const Network& nn2() const { return nn2_; }
  Network& nn2() { return nn2_; }

  /// NN2 input block (scaled theta, sigma, rho then vols) from NN3 inputs.
  static Matrix nn2_input(const Matrix& x);

 private:
  Matrix nn1_input(const Matrix& x, const Matrix& jumps) const;

  Network nn1_;
  Network nn2_;
  ScalingSpec scaling_;
};

/// Spec of a default NN2 whose stretched-sigmoid box is the sampling box of
/// the jump parameters.
NetworkSpec nn2_spec(const SamplingBounds& bounds, int width, int n_main_layers);

/// Training matrices from samples: NN1 (41 scaled inputs -> 130 vols) and
/// NN3 (161 inputs -> 130 vols).
void nn1_matrices(const std::vector<Sample>& samples, const ScalingSpec& s, Matrix& x, Matrix& y);
void nn3_matrices(const std::vector<Sample>& samples, const ScalingSpec& s, Matrix& x, Matrix& y);

/// Jump laws (nu_1..nu_5, delta_1..delta_5) that NN2 reads off a surface.
std::array<double, feature::kJumpOutputs> invert(const Network& nn2, const VolSurface& surface, double theta,
                                                 double sigma, double rho, const ScalingSpec& scaling);

/// NN1 surface at one model point (vols on the inputs' grid).
std::vector<double> nn1_surface(const Network& nn1, const InputVector& inputs, const ScalingSpec& scaling,
                                bool* clamped = nullptr);

/// Versioned text container: header, spec, meta, %.17g tensors, FNV-1a checksum.
void save(const Network& net, std::ostream& os);
void save(const Network& net, const std::string& path);
Network load(std::istream& is);
Network load(const std::string& path);

/// Store / recover a ScalingSpec in Network::meta.
void attach_scaling(Network& net, const ScalingSpec& s);
ScalingSpec scaling_of(const Network& net);

}  // namespace crc::nn
