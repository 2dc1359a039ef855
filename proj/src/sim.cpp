#include "crc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "crc/config.hpp"
#include "crc/errors.hpp"

namespace crc {

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("SimConfig: dt must be > 0");
  if (n_steps < 0) throw ConfigError("SimConfig: n_steps must be >= 0");
  if (!(eps >= 0.0)) throw ConfigError("SimConfig: eps must be >= 0");
  if (!(rel_cap > 0.0 && rel_cap < 1.0)) throw ConfigError("SimConfig: rel_cap must be in (0, 1)");
  for (double s : noise_scale)
    if (!(s >= 0.0)) throw ConfigError("SimConfig: noise_scale must be >= 0");
  if (box.theta.lo > box.theta.hi || box.sigma.lo > box.sigma.hi || box.rho.lo > box.rho.hi)
    throw ConfigError("SimConfig: parameter box has lo > hi");
  if (!(box.theta.lo > 0.0) || !(box.sigma.lo > 0.0) || box.rho.lo < -1.0 || box.rho.hi > 1.0)
    throw ConfigError("SimConfig: parameter box outside the admissible set");
  grid.validate();
}

MarketState bates_step(const MarketState& s, const HestonParams& p, const JumpSpec& j, double dt,
                       std::mt19937_64& rng) {
  if (!(dt > 0.0)) throw DomainError("bates_step: dt must be > 0");
  std::normal_distribution<double> n01(0.0, 1.0);
  const double z1 = n01(rng);
  const double z2 = p.rho * z1 + std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho)) * n01(rng);
  const double vp = std::max(s.v, 0.0);
  const double sq = std::sqrt(vp * dt);

  const JumpBucket& b = j.buckets[0];
  const double comp = j.lambda * std::expm1(b.nu + 0.5 * b.delta * b.delta);
  double jump = 0.0;
  if (j.lambda > 0.0) {
    std::poisson_distribution<int> pois(j.lambda * dt);
    const int n_jumps = pois(rng);
    if (n_jumps > 0) jump = n_jumps * b.nu + std::sqrt(static_cast<double>(n_jumps)) * b.delta * n01(rng);
  }

  MarketState out = s;
  out.x = s.x + (p.r - p.q - 0.5 * vp - comp) * dt + sq * z1 + jump;
  out.v = s.v + p.k * (p.theta - vp) * dt + p.sigma * sq * z2;
  return out;
}

namespace {

// Move x by at most cap * |x0| away from x0, exactly.
double capped(double x0, double proposal, double cap) {
  const double limit = cap * std::abs(x0);
  double x = proposal;
  if (std::abs(x - x0) > limit) x = x0 + std::copysign(limit, x - x0);
  while (std::abs(x - x0) > limit) x = std::nextafter(x, x0);
  return x;
}

}  // namespace

HestonParams clip_to_box(const HestonParams& p, const ParamBox& box) {
  HestonParams out = p;
  out.theta = std::clamp(p.theta, box.theta.lo, box.theta.hi);
  out.sigma = std::clamp(p.sigma, box.sigma.lo, box.sigma.hi);
  out.rho = std::clamp(p.rho, box.rho.lo, box.rho.hi);
  return out;
}

HestonParams param_step(const HestonParams& p, const SimConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const double zt = n01(rng), zs = n01(rng), zr = n01(rng);
  HestonParams out = p;
  out.theta = capped(p.theta, p.theta + cfg.noise_scale[0] * std::abs(p.theta) * zt, cfg.rel_cap);
  out.sigma = capped(p.sigma, p.sigma + cfg.noise_scale[1] * std::abs(p.sigma) * zs, cfg.rel_cap);
  out.rho = capped(p.rho, p.rho + cfg.noise_scale[2] * std::abs(p.rho) * zr, cfg.rel_cap);
  out = clip_to_box(out, cfg.box);
  // Shrink sigma onto the Feller side; the cap is preserved whenever the
  // previous point satisfied Feller.
  while (!out.feller() && out.sigma > cfg.box.sigma.lo) {
    const double target = std::sqrt(2.0 * out.k * out.theta) * (1.0 - 1e-12);
    out.sigma = std::max(cfg.box.sigma.lo, std::min(target, std::nextafter(out.sigma, 0.0)));
  }
  return out;
}

std::vector<double> model_surface(const SimNetworks& nets, const MarketState& m, const HestonParams& p,
                                  const JumpSpec& j, const Grid& grid, bool* clamped) {
  const ModelPoint mp{p, m.v, j};
  return nn::nn1_surface(nets.nn1, to_inputs(mp, grid), nets.scaling, clamped);
}

Recalibration recalibrate(const SimState& state, const HestonParams& p_new, const VolSurface& target,
                          const SimNetworks& nets) {
  const auto out = nn::invert(nets.nn2, target, p_new.theta, p_new.sigma, p_new.rho, nets.scaling);
  Recalibration r;
  r.j = state.j;
  for (std::size_t b = 0; b < JumpSpec::kBuckets; ++b) r.j.buckets[b] = {out[b], out[JumpSpec::kBuckets + b]};
  r.vols = model_surface(nets, state.market, p_new, r.j, target.grid, &r.clamped);
  const VolSurface model{target.grid, r.vols, target.spot};
  r.delta_c = delta_c(model, target, p_new.r, p_new.q);
  return r;
}

namespace {

ArbSummary audit(const Grid& grid, const std::vector<double>& vols, double spot, double r, double q) {
  const ArbReport rep = check_static_arbitrage(VolSurface{grid, vols, spot}, r, q);
  return {rep.butterfly_violations.size(), rep.calendar_violations.size(), rep.max_violation};
}

SimRecord snapshot(int step, const SimState& s) {
  SimRecord rec;
  rec.step = step;
  rec.t = s.t;
  rec.x = s.market.x;
  rec.v = s.market.v;
  rec.p = s.p;
  rec.j = s.j;
  return rec;
}

}  // namespace

std::vector<SimRecord> run(const SimConfig& cfg, const SimState& initial, const SimNetworks& nets,
                           const std::function<void(const SimRecord&)>& on_record) {
  cfg.validate();
  initial.p.validate(true);
  initial.j.validate();
  std::mt19937_64 rng(cfg.seed);
  SimState s = initial;
  const Grid& grid = cfg.grid;
  std::vector<SimRecord> out;
  out.reserve(static_cast<std::size_t>(cfg.n_steps) + 1);

  SimRecord rec0 = snapshot(0, s);
  rec0.vols = model_surface(nets, s.market, s.p, s.j, grid, &rec0.inputs_clamped);
  rec0.arb = audit(grid, rec0.vols, s.market.spot(), s.p.r, s.p.q);
  if (on_record) on_record(rec0);
  out.push_back(std::move(rec0));

  for (int step = 1; step <= cfg.n_steps; ++step) {
    try {
      // Bates step, then IVS_new from the new state and the old parameters.
      s.market = bates_step(s.market, s.p, s.j, cfg.dt, rng);
      s.t += cfg.dt;
      bool clamped = false;
      const VolSurface target{grid, model_surface(nets, s.market, s.p, s.j, grid, &clamped), s.market.spot()};

      // Heston-parameter step; Delta_C of the new parameters with unchanged jumps.
      const HestonParams p_new = param_step(s.p, cfg, rng);
      bool naive_clamped = false;
      std::vector<double> naive = model_surface(nets, s.market, p_new, s.j, grid, &naive_clamped);
      const double dc_before = delta_c(VolSurface{grid, naive, target.spot}, target, p_new.r, p_new.q);

      SimRecord rec;
      if (cfg.eps == 0.0 || dc_before > cfg.eps) {
        Recalibration rc = recalibrate(s, p_new, target, nets);
        s.j = rc.j;
        s.last_recal = s.t;
        rec.vols = std::move(rc.vols);
        rec.delta_c_after = rc.delta_c;
        rec.recalibrated = true;
        rec.recal_failed = cfg.eps > 0.0 && rc.delta_c > cfg.eps;
        clamped = clamped || rc.clamped;
      } else {
        rec.vols = std::move(naive);
        rec.delta_c_after = dc_before;
        clamped = clamped || naive_clamped;
      }
      s.p = p_new;

      SimRecord snap = snapshot(step, s);
      snap.vols = std::move(rec.vols);
      snap.delta_c_before = dc_before;
      snap.delta_c_after = rec.delta_c_after;
      snap.recalibrated = rec.recalibrated;
      snap.recal_failed = rec.recal_failed;
      snap.inputs_clamped = clamped;
      snap.arb = audit(grid, snap.vols, s.market.spot(), s.p.r, s.p.q);
      if (on_record) on_record(snap);
      out.push_back(std::move(snap));
    } catch (const Error& e) {
      throw Error("simulation step " + std::to_string(step) + ": " + e.what());
    }
  }
  return out;
}

void write_run(const std::string& dir, const SimConfig& cfg, const SimState& initial,
               const std::vector<SimRecord>& records) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "surfaces", ec);
  if (ec) throw IoError("cannot create run directory " + dir + ": " + ec.message());

  for (const SimRecord& r : records) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%04d.csv", r.step);
    VolSurface s{cfg.grid, r.vols, std::exp(r.x)};
    write_surface_csv((fs::path(dir) / "surfaces" / name).string(), s);
  }

  const std::string path_csv = (fs::path(dir) / "path.csv").string();
  std::ofstream os(path_csv, std::ios::binary);
  if (!os) throw IoError("cannot open " + path_csv);
  os << "step,t,x,v,theta,sigma,rho,nu_1,nu_2,nu_3,nu_4,nu_5,delta_1,delta_2,delta_3,delta_4,delta_5,"
        "delta_c_before,delta_c_after,recalibrated,recal_failed,inputs_clamped,butterfly,calendar,max_violation\n";
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << ',';
  };
  for (const SimRecord& r : records) {
    os << r.step << ',';
    for (double v : {r.t, r.x, r.v, r.p.theta, r.p.sigma, r.p.rho}) num(v);
    for (const auto& b : r.j.buckets) num(b.nu);
    for (const auto& b : r.j.buckets) num(b.delta);
    num(r.delta_c_before);
    num(r.delta_c_after);
    os << r.recalibrated << ',' << r.recal_failed << ',' << r.inputs_clamped << ',' << r.arb.butterfly << ','
       << r.arb.calendar << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.arb.max_violation);
    os << buf << '\n';
  }
  if (!os) throw IoError("write failed: " + path_csv);

  const std::string manifest = (fs::path(dir) / "manifest.json").string();
  std::ofstream ms(manifest, std::ios::binary);
  if (!ms) throw IoError("cannot open " + manifest);
  ms << run_manifest_json(cfg, initial, records).dump(2) << '\n';
  if (!ms) throw IoError("write failed: " + manifest);
}

}  // namespace crc
