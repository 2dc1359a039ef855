// crc: dataset generation, network training, pricing and CRC simulation.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "crc/config.hpp"
#include "crc/errors.hpp"
#include "crc/pipeline.hpp"
#include "crc/pricing.hpp"
#include "crc/sim.hpp"
#include "crc/surface.hpp"

namespace fs = std::filesystem;
using namespace crc;

namespace {

enum Exit { kOk = 0, kIo = 1, kUsage = 2, kNumeric = 3 };

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Common {
  std::string config;
  bool json_out = false;
  int threads = -1;  // -1: keep the config value
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Config file (JSON); default $CRC_CONFIG, else built-in defaults");
  app->add_flag("--json", c.json_out, "Print a machine-readable JSON summary on stdout");
  app->add_option("--threads", c.threads, "Worker threads (0 = machine parallelism)")->check(CLI::NonNegativeNumber);
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = resolve_run_config(c.config);
  if (c.threads >= 0) cfg.threads = static_cast<unsigned>(c.threads);
  return cfg;
}

void emit(const Common& c, const json& summary, const std::string& human) {
  if (c.json_out)
    std::cout << summary.dump() << '\n';
  else
    std::cout << human;
}

// Model point given on the command line.
struct ModelArgs {
  double spot = 100.0, v0 = 0.04;
  double r = 0.0, q = 0.0, k = 1.0, theta = 0.04, sigma = 0.3, rho = 0.0;
  double lambda = 0.0;
  std::vector<double> nu{0.0}, delta{0.0};

  void add(CLI::App* app) {
    app->add_option("--spot", spot, "Spot price")->capture_default_str();
    app->add_option("--v0", v0, "Initial variance")->capture_default_str();
    app->add_option("--r", r, "Risk-free rate")->capture_default_str();
    app->add_option("--q", q, "Dividend yield")->capture_default_str();
    app->add_option("--k", k, "Mean-reversion speed")->capture_default_str();
    app->add_option("--theta", theta, "Long-run variance")->capture_default_str();
    app->add_option("--sigma", sigma, "Vol-of-vol")->capture_default_str();
    app->add_option("--rho", rho, "Spot/variance correlation")->capture_default_str();
    app->add_option("--lambda", lambda, "Jump intensity")->capture_default_str();
    app->add_option("--nu", nu, "Jump mean: one value or five per-bucket values")->delimiter(',');
    app->add_option("--delta", delta, "Jump std: one value or five per-bucket values")->delimiter(',');
  }

  std::array<double, JumpSpec::kBuckets> bucket(const std::vector<double>& v, const char* name) const {
    std::array<double, JumpSpec::kBuckets> out{};
    if (v.size() == 1)
      out.fill(v[0]);
    else if (v.size() == JumpSpec::kBuckets)
      std::copy(v.begin(), v.end(), out.begin());
    else
      throw ConfigError(std::string("--") + name + ": expected 1 or 5 values");
    return out;
  }

  SimState state(const Grid& grid) const {
    SimInitial init;
    init.spot = spot;
    init.v0 = v0;
    init.p = {r, q, k, theta, sigma, rho};
    init.lambda = lambda;
    init.nu = bucket(nu, "nu");
    init.delta = bucket(delta, "delta");
    SimState s = init.state(grid);
    s.p.validate();
    s.j.validate();
    return s;
  }
};

nn::Network load_trained(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + ": no weights given");
  if (!fs::exists(path)) throw ConfigError(what + ": weights file " + path + " does not exist");
  nn::Network net = nn::load(path);
  require_trained(net, what);
  return net;
}

void write_loss_csv(const std::string& path, const nn::TrainHistory& h) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  os << "epoch,train_loss,val_loss,learning_rate\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e)
    os << e << ',' << g17(h.train_loss[e]) << ',' << g17(h.val_loss[e]) << ',' << g17(h.learning_rate[e]) << '\n';
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistent recalibration models for implied-volatility surfaces"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "crc 0.1.0");

  // generate
  Common gen_c;
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Sample model points and write an implied-vol dataset (CSV + manifest)");
  add_common(gen, gen_c);
  auto* gen_n_opt = gen->add_option("--n", gen_n, "Number of samples (default: config n)");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Dataset seed (default: config seed)");
  gen->add_option("--out", gen_out, "Dataset CSV path; the manifest goes next to it as <stem>.manifest.json")->required();

  // train
  Common tr_c;
  std::string tr_mode, tr_data, tr_out, tr_nn1;
  int tr_epochs = -1;
  auto* tr = app.add_subcommand("train", "Train NN1 (forward map) or NN2 (inverse map through NN3 with NN1 frozen)");
  add_common(tr, tr_c);
  tr->add_option("mode", tr_mode, "nn1 or nn2")->required()->check(CLI::IsMember({"nn1", "nn2"}));
  tr->add_option("--data", tr_data, "Dataset CSV")->required();
  tr->add_option("--out", tr_out, "Output weights file; the loss history goes to <out>.loss.csv")->required();
  tr->add_option("--nn1", tr_nn1, "Trained NN1 weights (nn2 mode)");
  tr->add_option("--epochs", tr_epochs, "Override the configured epoch count")->check(CLI::NonNegativeNumber);

  // price
  Common pr_c;
  ModelArgs pr_m;
  double pr_strike = 100.0, pr_tau = 1.0;
  bool pr_put = false;
  auto* pr = app.add_subcommand("price", "Fourier price of a European option under the model");
  add_common(pr, pr_c);
  pr_m.add(pr);
  pr->add_option("--strike", pr_strike, "Strike")->capture_default_str();
  pr->add_option("--tau", pr_tau, "Time to maturity (years)")->capture_default_str();
  pr->add_flag("--put", pr_put, "Price a put instead of a call");

  // iv
  Common iv_c;
  double iv_price = 0.0, iv_spot = 100.0, iv_strike = 100.0, iv_tau = 1.0, iv_r = 0.0, iv_q = 0.0;
  bool iv_put = false;
  auto* iv = app.add_subcommand("iv", "Black-Scholes implied volatility of an option price");
  add_common(iv, iv_c);
  iv->add_option("--price", iv_price, "Option price")->required();
  iv->add_option("--spot", iv_spot, "Spot price")->capture_default_str();
  iv->add_option("--strike", iv_strike, "Strike")->capture_default_str();
  iv->add_option("--tau", iv_tau, "Time to maturity (years)")->capture_default_str();
  iv->add_option("--r", iv_r, "Risk-free rate")->capture_default_str();
  iv->add_option("--q", iv_q, "Dividend yield")->capture_default_str();
  iv->add_flag("--put", iv_put, "The price is a put price");

  // surface
  Common su_c;
  ModelArgs su_m;
  std::string su_out;
  auto* su = app.add_subcommand("surface", "Model implied-vol surface on the 10 x 13 grid");
  add_common(su, su_c);
  su_m.add(su);
  su->add_option("--out", su_out, "Surface CSV path (default: stdout)");

  // simulate
  Common si_c;
  std::string si_nn1, si_nn2, si_dir;
  int si_steps = -1;
  std::uint64_t si_seed = 0;
  double si_eps = -1.0;
  auto* si = app.add_subcommand("simulate", "Run the consistent-recalibration loop and write a run directory");
  add_common(si, si_c);
  si->add_option("--nn1", si_nn1, "Trained NN1 weights (default: config paths.nn1)");
  si->add_option("--nn2", si_nn2, "Trained NN2 weights (default: config paths.nn2)");
  si->add_option("--out-dir", si_dir, "Run directory (default: config paths.out)");
  si->add_option("--steps", si_steps, "Override the number of steps")->check(CLI::NonNegativeNumber);
  auto* si_seed_opt = si->add_option("--seed", si_seed, "Override the simulation seed");
  si->add_option("--eps", si_eps, "Override the recalibration threshold (0 = every step)")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = load_config(gen_c);
      if (*gen_n_opt) cfg.n = gen_n;
      if (*gen_seed_opt) cfg.seed = gen_seed;
      if (cfg.n == 0) throw ConfigError("--n must be >= 1");
      const Dataset d = generate_dataset(cfg.n, cfg.seed, cfg.sampling, cfg.sim.grid, cfg.damping, cfg.threads);
      const fs::path out(gen_out);
      const std::string manifest = (out.parent_path() / (out.stem().string() + ".manifest.json")).string();
      write_dataset(d, gen_out, manifest);
      json s = manifest_to_json(d.manifest);
      s.erase("bounds");
      s.erase("grid");
      s.erase("damping");
      s.erase("dropped_indices");
      s["out"] = gen_out;
      s["manifest"] = manifest;
      emit(gen_c, s,
           "wrote " + std::to_string(d.manifest.n_written) + " of " + std::to_string(d.manifest.n_requested) +
               " samples (" + std::to_string(d.manifest.n_dropped) + " dropped) to " + gen_out + " in " +
               g17(d.manifest.wall_seconds) + " s\n" + (d.manifest.drop_warning ? "warning: drop rate above 5%\n" : ""));
      return kOk;
    }

    if (tr->parsed()) {
      RunConfig cfg = load_config(tr_c);
      NetworkConfig& nc = tr_mode == "nn1" ? cfg.nn1 : cfg.nn2;
      if (tr_epochs >= 0) nc.train.epochs = tr_epochs;
      // Load NN1 first so a missing NN1 is reported before reading the data.
      std::optional<nn::Network> nn1;
      if (tr_mode == "nn2") nn1 = load_trained(tr_nn1.empty() ? cfg.paths.nn1 : tr_nn1, "nn1");
      if (!fs::exists(tr_data)) throw IoError("dataset " + tr_data + " does not exist");
      const std::vector<Sample> samples = read_dataset_csv(tr_data);
      auto log = [&](int e, double tl, double vl) {
        if (!tr_c.json_out) std::cerr << "epoch " << e << " train " << g17(tl) << " val " << g17(vl) << '\n';
      };
      TrainedNetwork t = tr_mode == "nn1" ? train_nn1(samples, cfg.sampling, nc.shape, nc.train, log)
                                          : train_nn2(samples, *nn1, cfg.sampling, nc.shape, nc.train, log);
      nn::save(t.net, tr_out);
      write_loss_csv(tr_out + ".loss.csv", t.history);
      const json s = {{"mode", tr_mode},
                      {"samples", samples.size()},
                      {"epochs", nc.train.epochs},
                      {"final_train_loss", t.history.final_train_loss},
                      {"val_rmse", t.val_rmse},
                      {"out", tr_out}};
      emit(tr_c, s, tr_mode + ": held-out RMSE " + g17(t.val_rmse) + ", weights written to " + tr_out + "\n");
      return kOk;
    }

    if (pr->parsed()) {
      const RunConfig cfg = load_config(pr_c);
      const SimState st = pr_m.state(cfg.sim.grid);
      const OptionKind kind = pr_put ? OptionKind::Put : OptionKind::Call;
      const double price = fourier_price(st.market, st.p, st.j, pr_strike, pr_tau, kind, DampingConfig{});
      emit(pr_c, {{"price", price}}, g17(price) + "\n");
      return kOk;
    }

    if (iv->parsed()) {
      load_config(iv_c);
      const OptionQuote quote{iv_strike, iv_tau, iv_price, iv_put ? OptionKind::Put : OptionKind::Call};
      const double vol = implied_vol(quote, iv_spot, iv_r, iv_q);
      emit(iv_c, {{"iv", vol}}, g17(vol) + "\n");
      return kOk;
    }

    if (su->parsed()) {
      const RunConfig cfg = load_config(su_c);
      const SimState st = su_m.state(cfg.sim.grid);
      const VolSurface s = build_surface(st.market, st.p, st.j, cfg.sim.grid, DampingConfig{}, cfg.threads);
      if (su_out.empty()) {
        write_surface_csv(std::cout, s);
      } else {
        write_surface_csv(su_out, s);
        const ArbReport rep = check_static_arbitrage(s, st.p.r, st.p.q);
        emit(su_c, {{"out", su_out}, {"max_violation", rep.max_violation}, {"clean", rep.clean()}},
             "surface written to " + su_out + "\n");
      }
      return kOk;
    }

    if (si->parsed()) {
      RunConfig cfg = load_config(si_c);
      if (si_steps >= 0) cfg.sim.n_steps = si_steps;
      if (*si_seed_opt) cfg.sim.seed = si_seed;
      if (si_eps >= 0.0) cfg.sim.eps = si_eps;
      const std::string dir = si_dir.empty() ? cfg.paths.out : si_dir;
      if (dir.empty()) throw ConfigError("simulate: no output directory (--out-dir or paths.out)");
      const nn::Network nn1 = load_trained(si_nn1.empty() ? cfg.paths.nn1 : si_nn1, "nn1");
      const nn::Network nn2 = load_trained(si_nn2.empty() ? cfg.paths.nn2 : si_nn2, "nn2");
      const SimNetworks nets{nn1, nn2, nn::scaling_of(nn1)};
      const SimState init = cfg.initial.state(cfg.sim.grid);
      const auto records = run(cfg.sim, init, nets);
      write_run(dir, cfg.sim, init, records);
      const json summary = run_manifest_json(cfg.sim, init, records)["summary"];
      json s = summary;
      s["out_dir"] = dir;
      emit(si_c, s,
           "simulated " + std::to_string(records.size() - 1) + " steps; surfaces with violations: " +
               std::to_string(summary["surfaces_with_violations"].get<std::size_t>()) + "; run written to " + dir +
               "\n");
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const BoundError& e) {
    std::cerr << "numeric domain error: " << e.what() << " [bound " << g17(e.bound()) << ", price " << g17(e.price())
              << "]\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "numeric domain error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}
