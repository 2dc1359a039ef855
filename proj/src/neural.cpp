#include "crc/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "crc/errors.hpp"

namespace crc::nn {

namespace {

Param make_param(std::string name, int rows, int cols, double fill, bool trainable = true) {
  Param p;
  p.name = std::move(name);
  p.value = Matrix::Constant(rows, cols, fill);
  p.grad = Matrix::Zero(rows, cols);
  p.trainable = trainable;
  return p;
}

void check_rows(const Matrix& x, Eigen::Index rows, const char* where) {
  if (x.rows() != rows)
    throw ShapeError(std::string(where) + ": expected " + std::to_string(rows) + " rows, got " +
                     std::to_string(x.rows()));
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(int in, int out) : w(make_param("w", out, in, 0.0)), b(make_param("b", out, 1, 0.0)) {}

void Dense::init(std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> n(0.0, gain / std::sqrt(static_cast<double>(w.value.cols())));
  for (Eigen::Index c = 0; c < w.value.cols(); ++c)
    for (Eigen::Index r = 0; r < w.value.rows(); ++r) w.value(r, c) = n(rng);
  b.value.setZero();
}

Matrix Dense::forward(const Matrix& x, bool) {
  x_ = x;
  return infer(x);
}

Matrix Dense::infer(const Matrix& x) const {
  check_rows(x, w.value.cols(), "Dense");
  Matrix y = w.value * x;
  y.colwise() += b.value.col(0);
  return y;
}

Matrix Dense::backward(const Matrix& dy) {
  w.grad.noalias() += dy * x_.transpose();
  b.grad += dy.rowwise().sum();
  return w.value.transpose() * dy;
}

void Dense::collect(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// ---------------------------------------------------------------- ELU

Matrix Elu::forward(const Matrix& x, bool) {
  y_ = infer(x);
  return y_;
}

Matrix Elu::infer(const Matrix& x) const {
  return x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}

Matrix Elu::backward(const Matrix& dy) {
  return dy.binaryExpr(y_, [](double g, double y) { return y > 0.0 ? g : g * (y + 1.0); });
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int dim)
    : gamma(make_param("gamma", dim, 1, 1.0)),
      beta(make_param("beta", dim, 1, 0.0)),
      running_mean(make_param("running_mean", dim, 1, 0.0, false)),
      running_var(make_param("running_var", dim, 1, 1.0, false)) {}

Matrix BatchNorm::forward(const Matrix& x, bool train) {
  check_rows(x, gamma.value.rows(), "BatchNorm");
  train_ = train;
  const double n = static_cast<double>(x.cols());
  Eigen::VectorXd mean, var;
  if (train) {
    mean = x.rowwise().mean();
    var = (x.colwise() - mean).array().square().rowwise().sum() / n;
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    running_mean.value.col(0) = kMomentum * running_mean.value.col(0) + (1.0 - kMomentum) * mean;
    running_var.value.col(0) = kMomentum * running_var.value.col(0) + (1.0 - kMomentum) * unbias * var;
  } else {
    mean = running_mean.value.col(0);
    var = running_var.value.col(0);
  }
  inv_std_ = (var.array() + kEps).rsqrt();
  xhat_ = (x.colwise() - mean).array().colwise() * inv_std_.array();
  Matrix y = xhat_.array().colwise() * gamma.value.col(0).array();
  y.colwise() += beta.value.col(0);
  return y;
}

Matrix BatchNorm::infer(const Matrix& x) const {
  check_rows(x, gamma.value.rows(), "BatchNorm");
  const Eigen::VectorXd scale = gamma.value.col(0).array() * (running_var.value.col(0).array() + kEps).rsqrt();
  Matrix y = (x.colwise() - running_mean.value.col(0)).array().colwise() * scale.array();
  y.colwise() += beta.value.col(0);
  return y;
}

Matrix BatchNorm::backward(const Matrix& dy) {
  gamma.grad.col(0) += (dy.array() * xhat_.array()).rowwise().sum().matrix();
  beta.grad.col(0) += dy.rowwise().sum();
  const Matrix dxhat = dy.array().colwise() * gamma.value.col(0).array();
  if (!train_) return dxhat.array().colwise() * inv_std_.array();
  const double n = static_cast<double>(dy.cols());
  const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dx = (dxhat.array() * xhat_.array()).rowwise().sum();
  Matrix dx = (n * dxhat.array() - xhat_.array().colwise() * sum_dx.array()).colwise() - sum_d.array();
  return dx.array().colwise() * (inv_std_.array() / n);
}

void BatchNorm::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------- ResidualCell

ResidualCell::ResidualCell(int width, bool batch_norm) {
  chain_.push_back(std::make_unique<Dense>(width, width));
  if (batch_norm) chain_.push_back(std::make_unique<BatchNorm>(width));
  chain_.push_back(std::make_unique<Elu>());
  chain_.push_back(std::make_unique<Dense>(width, width));
  if (batch_norm) chain_.push_back(std::make_unique<BatchNorm>(width));
  chain_.push_back(std::make_unique<Elu>());
}

void ResidualCell::init(std::mt19937_64& rng) {
  for (auto& l : chain_)
    if (auto* d = dynamic_cast<Dense*>(l.get())) d->init(rng, std::sqrt(2.0));
}

ResidualCell::ResidualCell(const ResidualCell& other) {
  for (const auto& l : other.chain_) chain_.push_back(l->clone());
}

std::unique_ptr<Layer> ResidualCell::clone() const { return std::make_unique<ResidualCell>(*this); }

Matrix ResidualCell::forward(const Matrix& x, bool train) {
  Matrix h = x;
  for (auto& l : chain_) h = l->forward(h, train);
  return h + x;
}

Matrix ResidualCell::infer(const Matrix& x) const {
  Matrix h = x;
  for (const auto& l : chain_) h = l->infer(h);
  return h + x;
}

Matrix ResidualCell::backward(const Matrix& dy) {
  Matrix g = dy;
  for (auto it = chain_.rbegin(); it != chain_.rend(); ++it) g = (*it)->backward(g);
  return g + dy;
}

void ResidualCell::collect(std::vector<Param*>& out) {
  for (auto& l : chain_) l->collect(out);
}

// ---------------------------------------------------------------- StretchedSigmoid

StretchedSigmoid::StretchedSigmoid(std::vector<double> lo, std::vector<double> hi) {
  if (lo.size() != hi.size()) throw ShapeError("StretchedSigmoid: bound sizes differ");
  lo_ = Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  width_ = Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size())) - lo_;
}

namespace {
// Logistic kept away from 0 and 1 so the stretched output never lands on a bound.
double logistic(double v) {
  constexpr double kEdge = 1e-12;
  return std::clamp(1.0 / (1.0 + std::exp(-v)), kEdge, 1.0 - kEdge);
}
}  // namespace

Matrix StretchedSigmoid::forward(const Matrix& x, bool) {
  check_rows(x, lo_.size(), "StretchedSigmoid");
  s_ = x.unaryExpr(&logistic);
  Matrix y = s_.array().colwise() * width_.array();
  y.colwise() += lo_;
  return y;
}

Matrix StretchedSigmoid::infer(const Matrix& x) const {
  check_rows(x, lo_.size(), "StretchedSigmoid");
  Matrix y = x.unaryExpr(&logistic).array().colwise() * width_.array();
  y.colwise() += lo_;
  return y;
}

Matrix StretchedSigmoid::backward(const Matrix& dy) {
  return (dy.array() * s_.array() * (1.0 - s_.array())).colwise() * width_.array();
}

double mse(const Matrix& pred, const Matrix& target, Matrix* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("mse: shape mismatch");
  const Matrix diff = pred - target;
  const double n = static_cast<double>(diff.size());
  if (grad) *grad = (2.0 / n) * diff;
  return diff.squaredNorm() / n;
}

// ---------------------------------------------------------------- Network

void NetworkSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0 || width <= 0) throw DomainError("NetworkSpec: dimensions must be > 0");
  if (n_main_layers < 0) throw DomainError("NetworkSpec: n_main_layers must be >= 0");
  if (output_activation == OutputActivation::StretchedSigmoid) {
    if (out_lo.size() != static_cast<std::size_t>(output_dim) || out_hi.size() != out_lo.size())
      throw ShapeError("NetworkSpec: stretched-sigmoid bounds must have output_dim entries");
    for (std::size_t i = 0; i < out_lo.size(); ++i)
      if (!(out_lo[i] < out_hi[i])) throw DomainError("NetworkSpec: stretched-sigmoid bounds need lo < hi");
  }
}

Network::Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec.validate();
  std::mt19937_64 rng(seed);
  auto stem = std::make_unique<Dense>(spec.input_dim, spec.width);
  stem->init(rng, std::sqrt(2.0));
  layers_.push_back(std::move(stem));
  if (spec.batch_norm) layers_.push_back(std::make_unique<BatchNorm>(spec.width));
  layers_.push_back(std::make_unique<Elu>());
  for (int l = 0; l < spec.n_main_layers; ++l) {
    if (spec.residual) {
      auto cell = std::make_unique<ResidualCell>(spec.width, spec.batch_norm);
      cell->init(rng);
      layers_.push_back(std::move(cell));
    } else {
      auto d = std::make_unique<Dense>(spec.width, spec.width);
      d->init(rng, std::sqrt(2.0));
      layers_.push_back(std::move(d));
      if (spec.batch_norm) layers_.push_back(std::make_unique<BatchNorm>(spec.width));
      layers_.push_back(std::make_unique<Elu>());
    }
  }
  auto out = std::make_unique<Dense>(spec.width, spec.output_dim);
  out->init(rng, 1.0);
  layers_.push_back(std::move(out));
  if (spec.output_activation == OutputActivation::StretchedSigmoid)
    layers_.push_back(std::make_unique<StretchedSigmoid>(spec.out_lo, spec.out_hi));
}

Network::Network(const Network& other) : meta(other.meta), spec_(other.spec_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Matrix Network::forward(const Matrix& x, bool train) {
  check_rows(x, spec_.input_dim, "Network::forward");
  Matrix h = x;
  for (auto& l : layers_) h = l->forward(h, train);
  return h;
}

Matrix Network::infer(const Matrix& x) const {
  check_rows(x, spec_.input_dim, "Network::infer");
  Matrix h = x;
  for (const auto& l : layers_) h = l->infer(h);
  return h;
}

Matrix Network::backward(const Matrix& dy) {
  check_rows(dy, spec_.output_dim, "Network::backward");
  Matrix g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param*> Network::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) l->collect(out);
  return out;
}

std::vector<const Param*> Network::params() const {
  std::vector<Param*> tmp;
  for (const auto& l : layers_) l->collect(tmp);
  return {tmp.begin(), tmp.end()};
}

std::vector<Param*> Network::trainable_params() {
  std::vector<Param*> all = params(), out;
  for (Param* p : all)
    if (p->trainable) out.push_back(p);
  return out;
}

void Network::zero_grad() {
  for (Param* p : params()) p->grad.setZero();
}

bool bitwise_equal(const Network& a, const Network& b) {
  if (!(a.spec() == b.spec())) return false;
  const auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Matrix& x = pa[i]->value;
    const Matrix& y = pb[i]->value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw DomainError("TrainConfig: epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw DomainError("TrainConfig: learning_rate must be > 0");
  if (!(min_learning_rate > 0.0)) throw DomainError("TrainConfig: min_learning_rate must be > 0");
  if (plateau_patience < 1) throw DomainError("TrainConfig: plateau_patience must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw DomainError("TrainConfig: validation_fraction must be in [0, 1)");
}

namespace {

Matrix gather_cols(const Matrix& m, const std::vector<std::size_t>& idx, std::size_t from, std::size_t to) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(to - from));
  for (std::size_t c = from; c < to; ++c) out.col(static_cast<Eigen::Index>(c - from)) = m.col(idx[c]);
  return out;
}

// Fisher-Yates with an explicit modulus-free draw so the permutation only
// depends on the engine's output sequence.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * i) >> 64);
    std::swap(v[i - 1], v[j]);
  }
}

double eval_loss(const Trainable& model, const Matrix& x, const Matrix& y, std::size_t chunk) {
  double acc = 0.0;
  for (Eigen::Index c = 0; c < x.cols(); c += static_cast<Eigen::Index>(chunk)) {
    const Eigen::Index n = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), x.cols() - c);
    acc += mse(model.infer(x.middleCols(c, n)), y.middleCols(c, n)) * static_cast<double>(n);
  }
  return acc / static_cast<double>(x.cols());
}

}  // namespace

TrainHistory train(Trainable& model, const Matrix& x, const Matrix& y, const TrainConfig& cfg,
                   const std::function<void(int, double, double)>& on_epoch) {
  cfg.validate();
  if (x.cols() == 0) throw DomainError("train: empty dataset");
  if (x.cols() != y.cols()) throw ShapeError("train: inputs and targets differ in sample count");

  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = static_cast<std::size_t>(x.cols());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  const std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
  const std::size_t n_train = n - n_val;
  if (n_train == 0) throw DomainError("train: validation split leaves no training samples");

  TrainHistory h;
  h.validation_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(h.validation_indices.begin(), h.validation_indices.end());
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(train_idx.begin(), train_idx.end());
  Matrix x_val, y_val;
  if (n_val > 0) {
    x_val = gather_cols(x, h.validation_indices, 0, n_val);
    y_val = gather_cols(y, h.validation_indices, 0, n_val);
  }

  std::vector<Param*> params = model.trainable_params();
  std::vector<Matrix> m1, m2, best;
  for (Param* p : params) {
    m1.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    m2.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  constexpr double kB1 = 0.9, kB2 = 0.999, kAdamEps = 1e-8;
  double lr = cfg.learning_rate;
  double best_metric = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.schedule == TrainConfig::Schedule::Cosine)
      lr = cfg.min_learning_rate + 0.5 * (cfg.learning_rate - cfg.min_learning_rate) *
                                       (1.0 + std::cos(M_PI * epoch / static_cast<double>(cfg.epochs)));
    shuffle(train_idx, rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
      const Matrix xb = gather_cols(x, train_idx, start, stop);
      const Matrix yb = gather_cols(y, train_idx, start, stop);
      for (Param* p : params) p->grad.setZero();
      Matrix grad;
      const double loss = mse(model.forward(xb, true), yb, &grad);
      if (!std::isfinite(loss)) throw DivergenceError("train: non-finite loss", epoch);
      model.backward(grad);
      ++step;
      const double c1 = 1.0 - std::pow(kB1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kB2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        m1[i] = kB1 * m1[i] + (1.0 - kB1) * params[i]->grad;
        m2[i] = kB2 * m2[i] + (1.0 - kB2) * params[i]->grad.cwiseProduct(params[i]->grad);
        params[i]->value.array() -= lr * (m1[i].array() / c1) / ((m2[i].array() / c2).sqrt() + kAdamEps);
      }
      sum += loss * static_cast<double>(stop - start);
    }
    const double train_loss = sum / static_cast<double>(n_train);
    const double val_loss = n_val > 0 ? eval_loss(model, x_val, y_val, 4096) : train_loss;
    if (!std::isfinite(val_loss)) throw DivergenceError("train: non-finite validation loss", epoch);
    h.train_loss.push_back(train_loss);
    h.val_loss.push_back(val_loss);
    h.learning_rate.push_back(lr);
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);

    if (val_loss < best_metric) {
      best_metric = val_loss;
      since_best = 0;
      if (cfg.restore_best) {
        best.clear();
        for (Param* p : model.trainable_params()) best.push_back(p->value);
      }
    } else if (++since_best >= cfg.plateau_patience && cfg.schedule == TrainConfig::Schedule::Plateau) {
      lr = std::max(cfg.min_learning_rate, 0.5 * lr);
      since_best = 0;
    }
  }
  if (cfg.restore_best && !best.empty()) {
    auto ps = model.trainable_params();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = best[i];
  }
  h.final_train_loss = h.train_loss.empty() ? eval_loss(model, x, y, 4096) : h.train_loss.back();
  return h;
}

// ---------------------------------------------------------------- NN3

namespace {
constexpr Eigen::Index kPass = static_cast<Eigen::Index>(feature::kPassThrough);
constexpr Eigen::Index kVols = static_cast<Eigen::Index>(feature::kTargets);
constexpr Eigen::Index kJumps = static_cast<Eigen::Index>(feature::kJumpOutputs);
}  // namespace

Nn3::Nn3(Network nn1, Network nn2, const ScalingSpec& scaling)
    : nn1_(std::move(nn1)), nn2_(std::move(nn2)), scaling_(scaling) {
  if (nn1_.spec().input_dim != static_cast<int>(feature::kInputs) ||
      nn1_.spec().output_dim != static_cast<int>(feature::kTargets))
    throw ShapeError("Nn3: nn1 must map 41 inputs to 130 vols");
  if (nn2_.spec().input_dim != kNn2InputDim || nn2_.spec().output_dim != static_cast<int>(feature::kJumpOutputs))
    throw ShapeError("Nn3: nn2 must map 133 inputs to 10 jump parameters");
}

Matrix Nn3::nn2_input(const Matrix& x) {
  check_rows(x, kInputDim, "Nn3");
  Matrix in(kNn2InputDim, x.cols());
  in.topRows(3) = x.middleRows(static_cast<Eigen::Index>(feature::kTheta), 3);
  in.bottomRows(kVols) = x.bottomRows(kVols);
  return in;
}

Matrix Nn3::nn1_input(const Matrix& x, const Matrix& jumps) const {
  Matrix in(static_cast<Eigen::Index>(feature::kInputs), x.cols());
  in.topRows(kPass) = x.topRows(kPass);
  for (Eigen::Index r = 0; r < kJumps; ++r) {
    const std::size_t f = feature::kNu + static_cast<std::size_t>(r);
    in.row(kPass + r) = ((jumps.row(r).array() - scaling_.lo[f]) * scaling_.slope(f)).matrix();
  }
  return in;
}

Matrix Nn3::forward(const Matrix& x, bool train) {
  const Matrix jumps = nn2_.forward(nn2_input(x), train);
  // NN1 is frozen: always evaluated with its running statistics.
  return nn1_.forward(nn1_input(x, jumps), false);
}

Matrix Nn3::infer(const Matrix& x) const { return nn1_.infer(nn1_input(x, nn2_.infer(nn2_input(x)))); }

Matrix Nn3::backward(const Matrix& dy) {
  const Matrix d_in1 = nn1_.backward(dy);
  Matrix d_jumps(kJumps, dy.cols());
  for (Eigen::Index r = 0; r < kJumps; ++r)
    d_jumps.row(r) = d_in1.row(kPass + r) * scaling_.slope(feature::kNu + static_cast<std::size_t>(r));
  nn2_.backward(d_jumps);
  // Gradients into NN1 are never applied; clear them to keep it inert.
  nn1_.zero_grad();
  return Matrix();
}

NetworkSpec nn2_spec(const SamplingBounds& bounds, int width, int n_main_layers) {
  NetworkSpec s;
  s.input_dim = Nn3::kNn2InputDim;
  s.output_dim = static_cast<int>(feature::kJumpOutputs);
  s.width = width;
  s.n_main_layers = n_main_layers;
  s.output_activation = OutputActivation::StretchedSigmoid;
  for (const Range& r : bounds.nu) s.out_lo.push_back(r.lo), s.out_hi.push_back(r.hi);
  for (const Range& r : bounds.delta) s.out_lo.push_back(r.lo), s.out_hi.push_back(r.hi);
  return s;
}

void nn1_matrices(const std::vector<Sample>& samples, const ScalingSpec& s, Matrix& x, Matrix& y) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  x.resize(static_cast<Eigen::Index>(feature::kInputs), n);
  y.resize(kVols, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const Sample& smp = samples[static_cast<std::size_t>(c)];
    if (smp.targets.size() != feature::kTargets) throw ShapeError("nn1_matrices: sample without 130 targets");
    const InputVector sc = s.scale(smp.inputs);
    for (std::size_t f = 0; f < feature::kInputs; ++f) x(static_cast<Eigen::Index>(f), c) = sc[f];
    for (Eigen::Index t = 0; t < kVols; ++t) y(t, c) = smp.targets[static_cast<std::size_t>(t)];
  }
}

void nn3_matrices(const std::vector<Sample>& samples, const ScalingSpec& s, Matrix& x, Matrix& y) {
  Matrix x1;
  nn1_matrices(samples, s, x1, y);
  x.resize(Nn3::kInputDim, x1.cols());
  x.topRows(kPass) = x1.topRows(kPass);
  x.bottomRows(kVols) = y;
}

std::array<double, feature::kJumpOutputs> invert(const Network& nn2, const VolSurface& surface, double theta,
                                                 double sigma, double rho, const ScalingSpec& scaling) {
  if (surface.vols.size() != feature::kTargets) throw ShapeError("invert: surface must hold 130 vols");
  if (nn2.spec().input_dim != Nn3::kNn2InputDim || nn2.spec().output_dim != static_cast<int>(feature::kJumpOutputs))
    throw ShapeError("invert: nn2 must map 133 inputs to 10 outputs");
  Matrix in(Nn3::kNn2InputDim, 1);
  in(0, 0) = std::clamp(scaling.scale_one(feature::kTheta, theta), 0.0, 1.0);
  in(1, 0) = std::clamp(scaling.scale_one(feature::kSigma, sigma), 0.0, 1.0);
  in(2, 0) = std::clamp(scaling.scale_one(feature::kRho, rho), 0.0, 1.0);
  for (Eigen::Index t = 0; t < kVols; ++t) in(3 + t, 0) = surface.vols[static_cast<std::size_t>(t)];
  const Matrix out = nn2.infer(in);
  std::array<double, feature::kJumpOutputs> r{};
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = out(static_cast<Eigen::Index>(i), 0);
  return r;
}

std::vector<double> nn1_surface(const Network& nn1, const InputVector& inputs, const ScalingSpec& scaling,
                                bool* clamped) {
  const InputVector sc = scaling.scale(inputs, clamped);
  Matrix in(static_cast<Eigen::Index>(feature::kInputs), 1);
  for (std::size_t f = 0; f < feature::kInputs; ++f) in(static_cast<Eigen::Index>(f), 0) = sc[f];
  const Matrix out = nn1.infer(in);
  return {out.data(), out.data() + out.size()};
}

// ---------------------------------------------------------------- persistence

namespace {

constexpr const char* kMagic = "crc-network";
constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_doubles(std::ostream& os, const double* v, std::size_t n) {
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    os << (i ? " " : "") << buf;
  }
  os << '\n';
}

std::vector<double> get_doubles(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  std::string tok;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(is >> tok)) throw CorruptionError("network file: truncated tensor data");
    char* end = nullptr;
    v[i] = std::strtod(tok.c_str(), &end);
    if (*end != '\0') throw CorruptionError("network file: bad number '" + tok + "'");
  }
  return v;
}

}  // namespace

void save(const Network& net, std::ostream& os) {
  std::ostringstream body;
  const NetworkSpec& s = net.spec();
  body << kMagic << ' ' << kFormatVersion << '\n';
  body << "spec " << s.input_dim << ' ' << s.output_dim << ' ' << s.n_main_layers << ' ' << s.width << ' '
       << (s.residual ? 1 : 0) << ' ' << (s.batch_norm ? 1 : 0) << ' '
       << (s.output_activation == OutputActivation::StretchedSigmoid ? "stretched_sigmoid" : "linear") << '\n';
  if (s.output_activation == OutputActivation::StretchedSigmoid) {
    body << "out_lo ";
    put_doubles(body, s.out_lo.data(), s.out_lo.size());
    body << "out_hi ";
    put_doubles(body, s.out_hi.data(), s.out_hi.size());
  }
  body << "meta " << net.meta.size() << '\n';
  for (const auto& [key, vals] : net.meta) {
    body << key << ' ' << vals.size() << ' ';
    put_doubles(body, vals.data(), vals.size());
  }
  const auto params = net.params();
  body << "tensors " << params.size() << '\n';
  for (const Param* p : params) {
    body << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    put_doubles(body, p->value.data(), static_cast<std::size_t>(p->value.size()));
  }
  const std::string text = body.str();
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  os << text << "checksum " << sum << '\n';
}

void save(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  save(net, os);
  if (!os) throw IoError("write failed: " + path);
}

Network load(std::istream& in) {
  const std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  {
    std::istringstream head(all);
    std::string magic;
    int version = 0;
    if (!(head >> magic >> version) || magic != kMagic) throw CorruptionError("network file: bad header");
    if (version != kFormatVersion)
      throw IoError("network file: unsupported format version " + std::to_string(version));
  }
  const auto pos = all.rfind("checksum ");
  if (pos == std::string::npos) throw CorruptionError("network file: missing checksum (truncated?)");
  const std::string text = all.substr(0, pos);
  std::istringstream tail(all.substr(pos + 9));
  std::string hex;
  tail >> hex;
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  if (hex != sum) throw CorruptionError("network file: checksum mismatch");

  std::istringstream is(text);
  std::string magic;
  int version = 0;
  is >> magic >> version;

  NetworkSpec s;
  std::string tag, act;
  int residual = 0, bn = 0;
  if (!(is >> tag >> s.input_dim >> s.output_dim >> s.n_main_layers >> s.width >> residual >> bn >> act) ||
      tag != "spec")
    throw CorruptionError("network file: bad spec line");
  s.residual = residual != 0;
  s.batch_norm = bn != 0;
  if (act == "stretched_sigmoid") {
    s.output_activation = OutputActivation::StretchedSigmoid;
    if (!(is >> tag) || tag != "out_lo") throw CorruptionError("network file: missing out_lo");
    s.out_lo = get_doubles(is, static_cast<std::size_t>(s.output_dim));
    if (!(is >> tag) || tag != "out_hi") throw CorruptionError("network file: missing out_hi");
    s.out_hi = get_doubles(is, static_cast<std::size_t>(s.output_dim));
  } else if (act != "linear") {
    throw CorruptionError("network file: unknown output activation " + act);
  }
  Network net(s, 0);

  std::size_t n_meta = 0;
  if (!(is >> tag >> n_meta) || tag != "meta") throw CorruptionError("network file: missing meta block");
  for (std::size_t i = 0; i < n_meta; ++i) {
    std::string key;
    std::size_t len = 0;
    if (!(is >> key >> len)) throw CorruptionError("network file: bad meta entry");
    net.meta[key] = get_doubles(is, len);
  }
  std::size_t n_tensors = 0;
  if (!(is >> tag >> n_tensors) || tag != "tensors") throw CorruptionError("network file: missing tensors");
  auto params = net.params();
  if (n_tensors != params.size()) throw CorruptionError("network file: tensor count does not match spec");
  for (Param* p : params) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols) || name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw CorruptionError("network file: tensor header mismatch at " + p->name);
    const auto v = get_doubles(is, static_cast<std::size_t>(rows * cols));
    p->value = Eigen::Map<const Matrix>(v.data(), rows, cols);
  }
  return net;
}

Network load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return load(is);
}

void attach_scaling(Network& net, const ScalingSpec& s) {
  net.meta["scaling_lo"] = {s.lo.begin(), s.lo.end()};
  net.meta["scaling_hi"] = {s.hi.begin(), s.hi.end()};
}

ScalingSpec scaling_of(const Network& net) {
  const auto lo = net.meta.find("scaling_lo");
  const auto hi = net.meta.find("scaling_hi");
  if (lo == net.meta.end() || hi == net.meta.end() || lo->second.size() != feature::kInputs ||
      hi->second.size() != feature::kInputs)
    throw ConfigError("network has no input scaling attached");
  ScalingSpec s;
  std::copy(lo->second.begin(), lo->second.end(), s.lo.begin());
  std::copy(hi->second.begin(), hi->second.end(), s.hi.begin());
  return s;
}

}  // namespace crc::nn
