#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "crc/errors.hpp"
#include "crc/neural.hpp"
#include "gradcheck.hpp"

using namespace crc;
using namespace crc::nn;
using gradcheck::grad_check;
using gradcheck::layer_check;
using gradcheck::randn;
using gradcheck::rel_err;

namespace {

NetworkSpec small_spec(int in, int out, bool bn = true) {
  NetworkSpec s;
  s.input_dim = in;
  s.output_dim = out;
  s.width = 8;
  s.n_main_layers = 2;
  s.batch_norm = bn;
  return s;
}

}  // namespace

TEST_CASE("dense gradient matches finite differences") {
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::mt19937_64 rng(100 + t);
    Dense d(5, 4);
    d.init(rng, 1.0);
    d.b.value = randn(4, 1, rng);
    worst = std::max(worst, layer_check(d, randn(5, 3, rng), rng, true));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("elu gradient matches finite differences") {
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::mt19937_64 rng(200 + t);
    Elu e;
    worst = std::max(worst, layer_check(e, randn(4, 5, rng, 2.0), rng, true));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("batch norm gradient matches finite differences in both modes") {
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::mt19937_64 rng(300 + t);
    BatchNorm bn(4);
    bn.gamma.value = randn(4, 1, rng).array() + 1.5;
    bn.beta.value = randn(4, 1, rng);
    bn.running_mean.value = randn(4, 1, rng);
    bn.running_var.value = randn(4, 1, rng).array().abs() + 0.5;
    worst = std::max(worst, layer_check(bn, randn(4, 6, rng), rng, true));
    worst = std::max(worst, layer_check(bn, randn(4, 6, rng), rng, false));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("residual cell gradient matches finite differences") {
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::mt19937_64 rng(400 + t);
    ResidualCell cell(4, t % 2 == 0);
    cell.init(rng);
    worst = std::max(worst, layer_check(cell, randn(4, 6, rng), rng, true));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("stretched sigmoid gradient matches finite differences") {
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::mt19937_64 rng(500 + t);
    StretchedSigmoid s({-0.3, -0.3, 0.01, 0.01}, {0.3, 0.3, 0.3, 0.3});
    worst = std::max(worst, layer_check(s, randn(4, 5, rng, 2.0), rng, true));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("mse gradient matches finite differences") {
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::mt19937_64 rng(600 + t);
    Matrix pred = randn(3, 4, rng);
    const Matrix target = randn(3, 4, rng);
    Matrix g;
    mse(pred, target, &g);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      const double p0 = pred.data()[i];
      pred.data()[i] = p0 + 1e-5;
      const double lp = mse(pred, target);
      pred.data()[i] = p0 - 1e-5;
      const double lm = mse(pred, target);
      pred.data()[i] = p0;
      worst = std::max(worst, rel_err(g.data()[i], (lp - lm) / 2e-5));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("whole network gradient matches finite differences") {
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    std::mt19937_64 rng(700 + t);
    NetworkSpec s = small_spec(3, 2, t % 2 == 0);
    if (t % 3 == 0) {
      s.output_activation = OutputActivation::StretchedSigmoid;
      s.out_lo = {-1.0, 0.0};
      s.out_hi = {1.0, 2.0};
    }
    Network net(s, 7 + t);
    const Matrix x = randn(3, 5, rng);
    const Matrix r = randn(2, 5, rng);
    worst = std::max(worst, grad_check(
                                x, r, [&](const Matrix& in) { return net.forward(in, true); },
                                [&](const Matrix& dy) { return net.backward(dy); }, net.params()));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("zero weights and linear output give zero") {
  Network net(small_spec(3, 2, false), 1);
  for (Param* p : net.params()) p->value.setZero();
  std::mt19937_64 rng(1);
  CHECK(net.infer(randn(3, 4, rng)).isZero(0.0));
}

TEST_CASE("identity single layer without batch norm is the ELU of the input") {
  NetworkSpec s;
  s.input_dim = s.output_dim = s.width = 4;
  s.n_main_layers = 0;
  s.batch_norm = false;
  Network net(s, 1);
  auto ps = net.params();
  REQUIRE(ps.size() == 4);
  ps[0]->value = Matrix::Identity(4, 4);
  ps[1]->value.setZero();
  ps[2]->value = Matrix::Identity(4, 4);
  ps[3]->value.setZero();
  std::mt19937_64 rng(2);
  const Matrix x = randn(4, 6, rng);
  const Matrix y = net.infer(x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    CHECK(y.data()[i] == doctest::Approx(v > 0 ? v : std::expm1(v)).epsilon(1e-15));
  }
}

TEST_CASE("shape mismatch raises ShapeError") {
  Network net(small_spec(3, 2), 1);
  CHECK_THROWS_AS(net.infer(Matrix::Zero(4, 1)), ShapeError);
  CHECK_THROWS_AS(mse(Matrix::Zero(2, 1), Matrix::Zero(2, 2)), ShapeError);
}

TEST_CASE("single sample is memorised") {
  NetworkSpec s = small_spec(3, 2, false);
  s.width = 16;
  Network net(s, 3);
  Matrix x(3, 1), y(2, 1);
  x << 0.2, -0.4, 0.7;
  y << 0.31, -0.12;
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.epochs = 3000;
  cfg.validation_fraction = 0.0;
  train(net, x, y, cfg);
  CHECK(mse(net.infer(x), y) < 1e-8);
}

TEST_CASE("training is deterministic for a fixed seed") {
  std::mt19937_64 rng(4);
  const Matrix x = randn(3, 200, rng);
  const Matrix y = x.topRows(2).array().sin().matrix();
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 5;
  Network a(small_spec(3, 2), 11), b(small_spec(3, 2), 11);
  const TrainHistory ha = train(a, x, y, cfg);
  const TrainHistory hb = train(b, x, y, cfg);
  CHECK(ha.train_loss == hb.train_loss);
  CHECK(ha.val_loss == hb.val_loss);
  CHECK(bitwise_equal(a, b));
  CHECK(ha.validation_indices.size() == 20);
}

TEST_CASE("zero epochs leave the initial weights") {
  std::mt19937_64 rng(5);
  const Matrix x = randn(3, 10, rng), y = randn(2, 10, rng);
  Network a(small_spec(3, 2), 12);
  const Network init = a;
  TrainConfig cfg;
  cfg.epochs = 0;
  train(a, x, y, cfg);
  CHECK(bitwise_equal(a, init));
}

TEST_CASE("non-finite loss raises DivergenceError with the epoch") {
  std::mt19937_64 rng(6);
  const Matrix x = randn(3, 10, rng);
  Matrix y = randn(2, 10, rng);
  y(0, 3) = std::numeric_limits<double>::quiet_NaN();
  Network net(small_spec(3, 2), 13);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.validation_fraction = 0.0;
  try {
    train(net, x, y, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() == 0);
  }
}

namespace {

Network make_nn1(std::uint64_t seed) {
  NetworkSpec s;
  s.input_dim = static_cast<int>(feature::kInputs);
  s.output_dim = static_cast<int>(feature::kTargets);
  s.width = 16;
  s.n_main_layers = 1;
  return Network(s, seed);
}

// NN3 inputs from raw model points with arbitrary vols.
Matrix nn3_inputs(const std::vector<InputVector>& raw, const ScalingSpec& sc, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uv(0.1, 0.5);
  Matrix x(Nn3::kInputDim, static_cast<Eigen::Index>(raw.size()));
  for (std::size_t c = 0; c < raw.size(); ++c) {
    const InputVector s = sc.scale(raw[c]);
    for (std::size_t f = 0; f < feature::kPassThrough; ++f) x(f, c) = s[f];
    for (std::size_t t = 0; t < feature::kTargets; ++t) x(feature::kPassThrough + t, c) = uv(rng);
  }
  return x;
}

}  // namespace

TEST_CASE("nn3 training leaves nn1 bitwise unchanged and only moves nn2") {
  const SamplingBounds bounds;
  const Grid grid = default_grid();
  const ScalingSpec sc = ScalingSpec::from_bounds(bounds, grid);
  std::vector<InputVector> raw;
  for (std::uint64_t i = 0; i < 40; ++i) raw.push_back(to_inputs(sample_params(i, bounds, default_bucket_edges(grid)), grid));
  std::mt19937_64 rng(7);
  const Matrix x = nn3_inputs(raw, sc, rng);
  const Matrix y = x.bottomRows(feature::kTargets);

  const Network nn1 = make_nn1(21);
  const Network nn2 = Network(nn2_spec(bounds, 16, 1), 22);
  Nn3 nn3(nn1, nn2, sc);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.epochs = 3;
  train(nn3, x, y, cfg);
  CHECK(bitwise_equal(nn3.nn1(), nn1));
  CHECK_FALSE(bitwise_equal(nn3.nn2(), nn2));
}

TEST_CASE("nn3 gradient into nn2 matches finite differences") {
  const SamplingBounds bounds;
  const Grid grid = default_grid();
  const ScalingSpec sc = ScalingSpec::from_bounds(bounds, grid);
  std::vector<InputVector> raw;
  for (std::uint64_t i = 0; i < 4; ++i) raw.push_back(to_inputs(sample_params(i, bounds, default_bucket_edges(grid)), grid));
  std::mt19937_64 rng(8);
  const Matrix x = nn3_inputs(raw, sc, rng);
  NetworkSpec s2 = nn2_spec(bounds, 6, 1);
  Nn3 nn3(make_nn1(31), Network(s2, 32), sc);
  const Matrix r = randn(static_cast<int>(feature::kTargets), 4, rng);
  auto ps = nn3.trainable_params();
  constexpr double h = 1e-5;
  auto loss = [&] { return (r.array() * nn3.forward(x, true).array()).sum(); };
  for (Param* p : ps) p->grad.setZero();
  nn3.forward(x, true);
  nn3.backward(r);
  double worst = 0.0;
  for (Param* p : ps) {
    const Matrix g = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); i += 7) {
      const double v0 = p->value.data()[i];
      p->value.data()[i] = v0 + h;
      const double lp = loss();
      p->value.data()[i] = v0 - h;
      const double lm = loss();
      p->value.data()[i] = v0;
      worst = std::max(worst, rel_err(g.data()[i], (lp - lm) / (2 * h)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("nn3 with nn2 emitting the generating jumps equals nn1") {
  const SamplingBounds bounds;
  const Grid grid = default_grid();
  const ScalingSpec sc = ScalingSpec::from_bounds(bounds, grid);
  const ModelPoint mp = sample_params(9, bounds, default_bucket_edges(grid));
  const InputVector raw = to_inputs(mp, grid);

  // Force NN2's output to the generating jump laws: zero output weights and
  // biases at the logit of each target inside its box.
  const NetworkSpec s2 = nn2_spec(bounds, 8, 1);
  Network nn2(s2, 41);
  auto ps = nn2.params();
  Param* w_out = ps[ps.size() - 2];
  Param* b_out = ps[ps.size() - 1];
  w_out->value.setZero();
  for (std::size_t i = 0; i < feature::kJumpOutputs; ++i) {
    const double target = raw[feature::kNu + i];
    const double u = (target - s2.out_lo[i]) / (s2.out_hi[i] - s2.out_lo[i]);
    b_out->value(static_cast<Eigen::Index>(i), 0) = std::log(u / (1.0 - u));
  }
  const Network nn1 = make_nn1(42);
  Nn3 nn3(nn1, nn2, sc);

  std::mt19937_64 rng(9);
  const Matrix x3 = nn3_inputs({raw}, sc, rng);
  const Matrix y3 = nn3.infer(x3);
  Matrix x1(feature::kInputs, 1);
  const InputVector s = sc.scale(raw);
  for (std::size_t f = 0; f < feature::kInputs; ++f) x1(f, 0) = s[f];
  const Matrix y1 = nn1.infer(x1);
  CHECK((y3 - y1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("invert stays strictly inside the stretched-sigmoid box") {
  const SamplingBounds bounds;
  const ScalingSpec sc = ScalingSpec::from_bounds(bounds, default_grid());
  NetworkSpec s2 = nn2_spec(bounds, 8, 1);
  Network nn2(s2, 51);
  auto ps = nn2.params();
  ps[ps.size() - 1]->value.setConstant(1e6);  // saturate every logistic
  VolSurface surf{default_grid(), std::vector<double>(feature::kTargets, 0.2), 100.0};
  const auto out = invert(nn2, surf, 0.1, 0.2, -0.5, sc);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i] > s2.out_lo[i]);
    CHECK(out[i] < s2.out_hi[i]);
  }
}

TEST_CASE("save and load round trip") {
  const SamplingBounds bounds;
  Network net(nn2_spec(bounds, 8, 2), 61);
  attach_scaling(net, ScalingSpec::from_bounds(bounds, default_grid()));
  std::mt19937_64 rng(10);
  const Matrix x = randn(Nn3::kNn2InputDim, 50, rng);
  // Move batch-norm running statistics away from their defaults.
  net.forward(x, true);
  std::stringstream ss;
  save(net, ss);
  const Network back = load(ss);
  CHECK(bitwise_equal(net, back));
  CHECK(back.spec() == net.spec());
  CHECK(back.meta == net.meta);
  CHECK((net.infer(x) - back.infer(x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("truncated, edited or future-version weight files are rejected") {
  Network net(small_spec(3, 2), 71);
  std::stringstream ss;
  save(net, ss);
  const std::string text = ss.str();

  std::istringstream cut(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(load(cut), CorruptionError);

  std::string edited = text;
  const auto pos = edited.find("tensors");
  edited[pos + 12] = edited[pos + 12] == '1' ? '2' : '1';
  std::istringstream bad(edited);
  CHECK_THROWS_AS(load(bad), CorruptionError);

  std::string future = text;
  future.replace(0, std::string("crc-network 1").size(), "crc-network 2");
  std::istringstream fut(future);
  try {
    load(fut);
    FAIL("expected IoError");
  } catch (const CorruptionError&) {
    FAIL("version mismatch reported as corruption");
  } catch (const IoError&) {
  }
}
