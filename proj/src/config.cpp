#include "crc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <set>

#include "crc/errors.hpp"

namespace crc {

namespace {

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  require_object(j, path);
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw ConfigError(path + ": unknown key '" + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

void read_range(const json& j, const char* key, Range& out, const std::string& path) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
    throw ConfigError(path + "." + key + ": expected [lo, hi]");
  out = {(*it)[0].get<double>(), (*it)[1].get<double>()};
}

template <std::size_t N>
void read_ranges(const json& j, const char* key, std::array<Range, N>& out, const std::string& path) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array()) throw ConfigError(path + "." + key + ": expected a list");
  // A single [lo, hi] pair applies to every bucket.
  if (it->size() == 2 && (*it)[0].is_number()) {
    Range r;
    read_range(j, key, r, path);
    out.fill(r);
    return;
  }
  if (it->size() != N) throw ConfigError(path + "." + key + ": expected " + std::to_string(N) + " ranges");
  for (std::size_t b = 0; b < N; ++b) {
    const json wrap = {{"r", (*it)[b]}};
    read_range(wrap, "r", out[b], path + "." + key + "[" + std::to_string(b) + "]");
  }
}

template <std::size_t N>
void read_array(const json& j, const char* key, std::array<double, N>& out, const std::string& path) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (it->is_number()) {
    out.fill(it->get<double>());
    return;
  }
  if (!it->is_array() || it->size() != N)
    throw ConfigError(path + "." + key + ": expected a number or " + std::to_string(N) + " numbers");
  read(j, key, out, path);
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

template <std::size_t N>
json ranges_json(const std::array<Range, N>& rs) {
  json a = json::array();
  for (const Range& r : rs) a.push_back(range_json(r));
  return a;
}

std::string mode_name(DampingConfig::Mode m) { return m == DampingConfig::Mode::Auto ? "auto" : "fixed"; }

// Validation failures of the library types become config errors.
template <class F>
void validated(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

NetworkShape shape_from_json(const json& j, NetworkShape s, const std::string& path) {
  check_keys(j, {"width", "n_main_layers", "residual", "batch_norm"}, path);
  read(j, "width", s.width, path);
  read(j, "n_main_layers", s.n_main_layers, path);
  read(j, "residual", s.residual, path);
  read(j, "batch_norm", s.batch_norm, path);
  if (s.width < 1 || s.n_main_layers < 0) throw ConfigError(path + ": width >= 1 and n_main_layers >= 0 required");
  return s;
}

json shape_json(const NetworkShape& s) {
  return {{"width", s.width}, {"n_main_layers", s.n_main_layers}, {"residual", s.residual}, {"batch_norm", s.batch_norm}};
}

NetworkConfig network_from_json(const json& j, NetworkConfig c, const std::string& path) {
  check_keys(j, {"network", "train"}, path);
  if (j.contains("network")) c.shape = shape_from_json(j["network"], c.shape, path + ".network");
  if (j.contains("train")) c.train = train_from_json(j["train"], c.train);
  return c;
}

json network_json(const NetworkConfig& c) { return {{"network", shape_json(c.shape)}, {"train", to_json(c.train)}}; }

SimInitial initial_from_json(const json& j, SimInitial s, const std::string& path) {
  check_keys(j, {"spot", "v0", "r", "q", "k", "theta", "sigma", "rho", "lambda", "nu", "delta"}, path);
  read(j, "spot", s.spot, path);
  read(j, "v0", s.v0, path);
  read(j, "r", s.p.r, path);
  read(j, "q", s.p.q, path);
  read(j, "k", s.p.k, path);
  read(j, "theta", s.p.theta, path);
  read(j, "sigma", s.p.sigma, path);
  read(j, "rho", s.p.rho, path);
  read(j, "lambda", s.lambda, path);
  read_array(j, "nu", s.nu, path);
  read_array(j, "delta", s.delta, path);
  if (!(s.spot > 0.0)) throw ConfigError(path + ".spot: must be > 0");
  if (!(s.v0 >= 0.0)) throw ConfigError(path + ".v0: must be >= 0");
  return s;
}

json initial_json(const SimInitial& s) {
  return {{"spot", s.spot},       {"v0", s.v0},         {"r", s.p.r},         {"q", s.p.q},
          {"k", s.p.k},           {"theta", s.p.theta}, {"sigma", s.p.sigma}, {"rho", s.p.rho},
          {"lambda", s.lambda},   {"nu", s.nu},         {"delta", s.delta}};
}

}  // namespace

SimState SimInitial::state(const Grid& grid) const {
  SimState s;
  s.market = {std::log(spot), v0, spot};
  s.p = p;
  s.j.lambda = lambda;
  s.j.bucket_edges = default_bucket_edges(grid);
  for (std::size_t b = 0; b < JumpSpec::kBuckets; ++b) s.j.buckets[b] = {nu[b], delta[b]};
  return s;
}

DampingConfig RunConfig::dataset_damping() {
  DampingConfig d;
  d.n_nodes = 64;
  d.abs_tol = 1e-8;
  d.rel_tol = 1e-8;
  return d;
}

NetworkConfig RunConfig::default_nn1() {
  NetworkConfig c;
  c.train.schedule = nn::TrainConfig::Schedule::Cosine;
  c.train.learning_rate = 3e-3;
  return c;
}

NetworkConfig RunConfig::default_nn2() {
  NetworkConfig c;
  c.shape.n_main_layers = 4;
  return c;
}

void RunConfig::validate() const {
  validated("sampling", [&] { sampling.validate(); });
  validated("damping", [&] { damping.validate(); });
  validated("nn1.train", [&] { nn1.train.validate(); });
  validated("nn2.train", [&] { nn2.train.validate(); });
  validated("sim", [&] { sim.validate(); });
  validated("initial", [&] {
    const SimState s = initial.state(sim.grid);
    s.p.validate(true);
    s.j.validate();
  });
}

json to_json(const SamplingBounds& b) {
  return {{"r", range_json(b.r)},         {"q", range_json(b.q)},         {"v0", range_json(b.v0)},
          {"k", range_json(b.k)},         {"theta", range_json(b.theta)}, {"sigma", range_json(b.sigma)},
          {"rho", range_json(b.rho)},     {"lambda", range_json(b.lambda)}, {"nu", ranges_json(b.nu)},
          {"delta", ranges_json(b.delta)}};
}

SamplingBounds sampling_from_json(const json& j, const SamplingBounds& base) {
  const std::string path = "sampling";
  check_keys(j, {"r", "q", "v0", "k", "theta", "sigma", "rho", "lambda", "nu", "delta"}, path);
  SamplingBounds b = base;
  read_range(j, "r", b.r, path);
  read_range(j, "q", b.q, path);
  read_range(j, "v0", b.v0, path);
  read_range(j, "k", b.k, path);
  read_range(j, "theta", b.theta, path);
  read_range(j, "sigma", b.sigma, path);
  read_range(j, "rho", b.rho, path);
  read_range(j, "lambda", b.lambda, path);
  read_ranges(j, "nu", b.nu, path);
  read_ranges(j, "delta", b.delta, path);
  validated(path, [&] { b.validate(); });
  return b;
}

json to_json(const DampingConfig& d) {
  return {{"mode", mode_name(d.mode)}, {"alpha", d.alpha},     {"trunc", d.trunc},
          {"n_nodes", d.n_nodes},      {"abs_tol", d.abs_tol}, {"rel_tol", d.rel_tol}};
}

DampingConfig damping_from_json(const json& j, const DampingConfig& base) {
  const std::string path = "damping";
  check_keys(j, {"mode", "alpha", "trunc", "n_nodes", "abs_tol", "rel_tol"}, path);
  DampingConfig d = base;
  std::string mode = mode_name(d.mode);
  read(j, "mode", mode, path);
  if (mode == "auto")
    d.mode = DampingConfig::Mode::Auto;
  else if (mode == "fixed")
    d.mode = DampingConfig::Mode::Fixed;
  else
    throw ConfigError(path + ".mode: expected 'auto' or 'fixed'");
  read(j, "alpha", d.alpha, path);
  read(j, "trunc", d.trunc, path);
  read(j, "n_nodes", d.n_nodes, path);
  read(j, "abs_tol", d.abs_tol, path);
  read(j, "rel_tol", d.rel_tol, path);
  validated(path, [&] { d.validate(); });
  return d;
}

json to_json(const Grid& g) {
  return {{"maturities", g.maturities}, {"moneyness", g.moneyness}};
}

json to_json(const nn::TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"min_learning_rate", t.min_learning_rate},
          {"schedule", t.schedule == nn::TrainConfig::Schedule::Cosine ? "cosine" : "plateau"},
          {"plateau_patience", t.plateau_patience},
          {"validation_fraction", t.validation_fraction},
          {"seed", t.seed},
          {"restore_best", t.restore_best}};
}

nn::TrainConfig train_from_json(const json& j, const nn::TrainConfig& base) {
  const std::string path = "train";
  check_keys(j,
             {"batch_size", "epochs", "learning_rate", "min_learning_rate", "schedule", "plateau_patience",
              "validation_fraction", "seed", "restore_best"},
             path);
  nn::TrainConfig t = base;
  read(j, "batch_size", t.batch_size, path);
  read(j, "epochs", t.epochs, path);
  read(j, "learning_rate", t.learning_rate, path);
  read(j, "min_learning_rate", t.min_learning_rate, path);
  std::string schedule = t.schedule == nn::TrainConfig::Schedule::Cosine ? "cosine" : "plateau";
  read(j, "schedule", schedule, path);
  if (schedule == "plateau")
    t.schedule = nn::TrainConfig::Schedule::Plateau;
  else if (schedule == "cosine")
    t.schedule = nn::TrainConfig::Schedule::Cosine;
  else
    throw ConfigError(path + ".schedule: expected 'plateau' or 'cosine'");
  read(j, "plateau_patience", t.plateau_patience, path);
  read(j, "validation_fraction", t.validation_fraction, path);
  read(j, "seed", t.seed, path);
  read(j, "restore_best", t.restore_best, path);
  validated(path, [&] { t.validate(); });
  return t;
}

json to_json(const SimConfig& s) {
  return {{"dt", s.dt},
          {"n_steps", s.n_steps},
          {"eps", s.eps},
          {"noise_scale", s.noise_scale},
          {"rel_cap", s.rel_cap},
          {"box", {{"theta", range_json(s.box.theta)}, {"sigma", range_json(s.box.sigma)}, {"rho", range_json(s.box.rho)}}},
          {"seed", s.seed}};
}

SimConfig sim_from_json(const json& j, const SimConfig& base) {
  const std::string path = "sim";
  check_keys(j, {"dt", "n_steps", "eps", "noise_scale", "rel_cap", "box", "seed"}, path);
  SimConfig s = base;
  read(j, "dt", s.dt, path);
  read(j, "n_steps", s.n_steps, path);
  read(j, "eps", s.eps, path);
  read_array(j, "noise_scale", s.noise_scale, path);
  read(j, "rel_cap", s.rel_cap, path);
  read(j, "seed", s.seed, path);
  if (j.contains("box")) {
    const json& b = j["box"];
    check_keys(b, {"theta", "sigma", "rho"}, path + ".box");
    read_range(b, "theta", s.box.theta, path + ".box");
    read_range(b, "sigma", s.box.sigma, path + ".box");
    read_range(b, "rho", s.box.rho, path + ".box");
  }
  validated(path, [&] { s.validate(); });
  return s;
}

json to_json(const HestonParams& p) {
  return {{"r", p.r}, {"q", p.q}, {"k", p.k}, {"theta", p.theta}, {"sigma", p.sigma}, {"rho", p.rho}};
}

json to_json(const JumpSpec& j) {
  json nu = json::array(), delta = json::array();
  for (const auto& b : j.buckets) {
    nu.push_back(b.nu);
    delta.push_back(b.delta);
  }
  return {{"lambda", j.lambda}, {"nu", nu}, {"delta", delta}, {"bucket_edges", j.bucket_edges}};
}

json to_json(const nn::TrainHistory& h) {
  return {{"train_loss", h.train_loss},
          {"val_loss", h.val_loss},
          {"learning_rate", h.learning_rate},
          {"final_train_loss", h.final_train_loss}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"seed", "n", "threads", "sampling", "damping", "nn1", "nn2", "sim", "initial", "paths"}, "config");
  RunConfig c;
  read(j, "seed", c.seed, "config");
  read(j, "n", c.n, "config");
  read(j, "threads", c.threads, "config");
  if (j.contains("sampling")) c.sampling = sampling_from_json(j["sampling"]);
  if (j.contains("damping")) c.damping = damping_from_json(j["damping"], c.damping);
  if (j.contains("nn1")) c.nn1 = network_from_json(j["nn1"], c.nn1, "nn1");
  if (j.contains("nn2")) c.nn2 = network_from_json(j["nn2"], c.nn2, "nn2");
  if (j.contains("sim")) c.sim = sim_from_json(j["sim"]);
  if (j.contains("initial")) c.initial = initial_from_json(j["initial"], c.initial, "initial");
  if (j.contains("paths")) {
    const json& p = j["paths"];
    check_keys(p, {"data", "nn1", "nn2", "out"}, "paths");
    read(p, "data", c.paths.data, "paths");
    read(p, "nn1", c.paths.nn1, "paths");
    read(p, "nn2", c.paths.nn2, "paths");
    read(p, "out", c.paths.out, "paths");
  }
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"n", c.n},
          {"threads", c.threads},
          {"sampling", to_json(c.sampling)},
          {"damping", to_json(c.damping)},
          {"nn1", network_json(c.nn1)},
          {"nn2", network_json(c.nn2)},
          {"sim", to_json(c.sim)},
          {"initial", initial_json(c.initial)},
          {"paths", {{"data", c.paths.data}, {"nn1", c.paths.nn1}, {"nn2", c.paths.nn2}, {"out", c.paths.out}}}};
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

RunConfig resolve_run_config(const std::string& path) {
  if (!path.empty()) return load_run_config(path);
  if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') return load_run_config(env);
  return RunConfig{};
}

json manifest_to_json(const DatasetManifest& m) {
  json reasons = json::object();
  for (const auto& [k, v] : m.drop_reasons) reasons[k] = v;
  return {{"format_version", DatasetManifest::kFormatVersion},
          {"seed", m.seed},
          {"n_requested", m.n_requested},
          {"n_written", m.n_written},
          {"n_dropped", m.n_dropped},
          {"drop_reasons", reasons},
          {"dropped_indices", m.dropped_indices},
          {"drop_warning", m.drop_warning},
          {"wall_seconds", m.wall_seconds},
          {"bounds", to_json(m.bounds)},
          {"grid", to_json(m.grid)},
          {"damping", to_json(m.damping)},
          {"columns", dataset_columns().size()}};
}

json run_manifest_json(const SimConfig& cfg, const SimState& initial, const std::vector<SimRecord>& records) {
  json steps = json::array();
  std::size_t n_recal = 0, n_failed = 0, n_arb = 0;
  double max_violation = 0.0;
  for (const SimRecord& r : records) {
    n_recal += r.recalibrated;
    n_failed += r.recal_failed;
    n_arb += (r.arb.butterfly + r.arb.calendar) > 0;
    max_violation = std::max(max_violation, r.arb.max_violation);
    steps.push_back({{"step", r.step},
                     {"t", r.t},
                     {"delta_c_before", r.delta_c_before},
                     {"delta_c_after", r.delta_c_after},
                     {"recalibrated", r.recalibrated},
                     {"recal_failed", r.recal_failed},
                     {"butterfly", r.arb.butterfly},
                     {"calendar", r.arb.calendar},
                     {"max_violation", r.arb.max_violation}});
  }
  return {{"config", to_json(cfg)},
          {"grid", to_json(cfg.grid)},
          {"initial",
           {{"x", initial.market.x}, {"v", initial.market.v}, {"params", to_json(initial.p)}, {"jumps", to_json(initial.j)}}},
          {"summary",
           {{"records", records.size()},
            {"recalibrations", n_recal},
            {"recal_failures", n_failed},
            {"surfaces_with_violations", n_arb},
            {"max_violation", max_violation}}},
          {"steps", steps}};
}

}  // namespace crc
