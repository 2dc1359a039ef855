// Python bindings: pricing, surfaces, dataset sampling, networks and the CRC loop.

#include <pybind11/complex.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "crc/affine.hpp"
#include "crc/config.hpp"
#include "crc/datagen.hpp"
#include "crc/errors.hpp"
#include "crc/neural.hpp"
#include "crc/pipeline.hpp"
#include "crc/pricing.hpp"
#include "crc/sim.hpp"
#include "crc/surface.hpp"

namespace py = pybind11;
using namespace crc;

namespace {

py::array_t<double> surface_array(const std::vector<double>& vols) {
  py::array_t<double> a({Grid::kMaturities, Grid::kMoneyness});
  std::copy(vols.begin(), vols.end(), a.mutable_data());
  return a;
}

std::vector<double> flat_vols(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.size() != static_cast<py::ssize_t>(Grid::kPoints)) throw ShapeError("expected 130 implied vols");
  return {a.data(), a.data() + a.size()};
}

py::dict arb_dict(const ArbReport& r) {
  py::dict d;
  d["butterfly"] = r.butterfly_violations.size();
  d["calendar"] = r.calendar_violations.size();
  d["max_violation"] = r.max_violation;
  d["clean"] = r.clean();
  return d;
}

JumpSpec make_jumps(double lambda, const std::vector<double>& nu, const std::vector<double>& delta) {
  auto fill = [](const std::vector<double>& v, const char* name) {
    std::array<double, JumpSpec::kBuckets> out{};
    if (v.size() == 1)
      out.fill(v[0]);
    else if (v.size() == JumpSpec::kBuckets)
      std::copy(v.begin(), v.end(), out.begin());
    else
      throw ConfigError(std::string(name) + ": expected 1 or 5 values");
    return out;
  };
  const auto n = fill(nu, "nu");
  const auto d = fill(delta, "delta");
  JumpSpec j;
  j.lambda = lambda;
  j.bucket_edges = default_bucket_edges();
  for (std::size_t b = 0; b < JumpSpec::kBuckets; ++b) j.buckets[b] = {n[b], d[b]};
  j.validate();
  return j;
}

}  // namespace

PYBIND11_MODULE(_crc, m) {
  m.doc() = "Consistent recalibration models for implied-volatility surfaces";

  auto base = py::register_exception<Error>(m, "CrcError");
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<NumericDomainError>(m, "NumericDomainError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<HestonParams>(m, "HestonParams")
      .def(py::init([](double r, double q, double k, double theta, double sigma, double rho) {
             return HestonParams{r, q, k, theta, sigma, rho};
           }),
           py::arg("r") = 0.0, py::arg("q") = 0.0, py::arg("k") = 1.0, py::arg("theta") = 0.04,
           py::arg("sigma") = 0.3, py::arg("rho") = 0.0)
      .def_readwrite("r", &HestonParams::r)
      .def_readwrite("q", &HestonParams::q)
      .def_readwrite("k", &HestonParams::k)
      .def_readwrite("theta", &HestonParams::theta)
      .def_readwrite("sigma", &HestonParams::sigma)
      .def_readwrite("rho", &HestonParams::rho)
      .def("feller", &HestonParams::feller)
      .def("__repr__", [](const HestonParams& p) { return "HestonParams(" + to_json(p).dump() + ")"; });

  py::class_<MarketState>(m, "MarketState")
      .def(py::init([](double spot, double v) { return MarketState{std::log(spot), v, spot}; }),
           py::arg("spot") = 100.0, py::arg("v") = 0.04)
      .def_readwrite("x", &MarketState::x)
      .def_readwrite("v", &MarketState::v)
      .def("spot", &MarketState::spot);

  py::class_<JumpSpec>(m, "JumpSpec")
      .def(py::init(&make_jumps), py::arg("lambda_") = 0.0, py::arg("nu") = std::vector<double>{0.0},
           py::arg("delta") = std::vector<double>{0.0},
           "Jumps on the default bucket edges; nu and delta take one value or five per-bucket values")
      .def_readwrite("lambda_", &JumpSpec::lambda)
      .def_property_readonly("nu",
                             [](const JumpSpec& j) {
                               std::vector<double> v;
                               for (const auto& b : j.buckets) v.push_back(b.nu);
                               return v;
                             })
      .def_property_readonly("delta",
                             [](const JumpSpec& j) {
                               std::vector<double> v;
                               for (const auto& b : j.buckets) v.push_back(b.delta);
                               return v;
                             })
      .def_readonly("bucket_edges", &JumpSpec::bucket_edges);

  m.def("char_fn", &char_fn, py::arg("u"), py::arg("tau"), py::arg("state"), py::arg("p"), py::arg("j"),
        "E[exp(i u X_tau)]");
  m.def("bs_price",
        [](double spot, double strike, double tau, double vol, double r, double q, bool put) {
          return bs_price(spot, strike, tau, vol, r, q, put ? OptionKind::Put : OptionKind::Call);
        },
        py::arg("spot"), py::arg("strike"), py::arg("tau"), py::arg("vol"), py::arg("r") = 0.0, py::arg("q") = 0.0,
        py::arg("put") = false);
  m.def("price",
        [](const MarketState& s, const HestonParams& p, const JumpSpec& j, double strike, double tau, bool put) {
          return fourier_price(s, p, j, strike, tau, put ? OptionKind::Put : OptionKind::Call);
        },
        py::arg("state"), py::arg("p"), py::arg("j"), py::arg("strike"), py::arg("tau"), py::arg("put") = false,
        "Fourier price of a European option");
  m.def("implied_vol",
        [](double price, double spot, double strike, double tau, double r, double q, bool put) {
          return implied_vol({strike, tau, price, put ? OptionKind::Put : OptionKind::Call}, spot, r, q);
        },
        py::arg("price"), py::arg("spot"), py::arg("strike"), py::arg("tau"), py::arg("r") = 0.0,
        py::arg("q") = 0.0, py::arg("put") = false);

  m.def("grid", [] {
    const Grid g = default_grid();
    return py::make_tuple(std::vector<double>(g.maturities.begin(), g.maturities.end()),
                          std::vector<double>(g.moneyness.begin(), g.moneyness.end()));
  }, "Default (maturities in years, moneyness) grid");
  m.def("surface",
        [](const MarketState& s, const HestonParams& p, const JumpSpec& j, unsigned threads) {
          return surface_array(build_surface(s, p, j, default_grid(), DampingConfig{}, threads).vols);
        },
        py::arg("state"), py::arg("p"), py::arg("j"), py::arg("threads") = 1,
        "10 x 13 implied-vol surface on the default grid");
  m.def("check_arbitrage",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& vols, double spot, double r,
           double q) { return arb_dict(check_static_arbitrage(VolSurface{default_grid(), flat_vols(vols), spot}, r, q)); },
        py::arg("vols"), py::arg("spot") = 100.0, py::arg("r") = 0.0, py::arg("q") = 0.0);
  m.def("delta_c",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b, double spot, double r, double q) {
          const Grid g = default_grid();
          return delta_c(VolSurface{g, flat_vols(a), spot}, VolSurface{g, flat_vols(b), spot}, r, q);
        },
        py::arg("model"), py::arg("observed"), py::arg("spot") = 100.0, py::arg("r") = 0.0, py::arg("q") = 0.0);

  m.def("generate",
        [](std::size_t n, std::uint64_t seed, unsigned threads) {
          const Dataset d =
              generate_dataset(n, seed, SamplingBounds{}, default_grid(), RunConfig::dataset_damping(), threads);
          py::array_t<double> x({d.samples.size(), feature::kInputs});
          py::array_t<double> y({d.samples.size(), feature::kTargets});
          for (std::size_t i = 0; i < d.samples.size(); ++i) {
            std::copy(d.samples[i].inputs.begin(), d.samples[i].inputs.end(), x.mutable_data(i, 0));
            std::copy(d.samples[i].targets.begin(), d.samples[i].targets.end(), y.mutable_data(i, 0));
          }
          return py::make_tuple(x, y, manifest_to_json(d.manifest).dump());
        },
        py::arg("n"), py::arg("seed") = 1, py::arg("threads") = 1,
        "Dataset with the default bounds: (inputs [n, 41], vols [n, 130], manifest JSON)");
  m.def("columns", &dataset_columns);

  py::class_<nn::Network>(m, "Network")
      .def_static("load", py::overload_cast<const std::string&>(&nn::load))
      .def("save", [](const nn::Network& n, const std::string& path) { nn::save(n, path); })
      .def_property_readonly("input_dim", [](const nn::Network& n) { return n.spec().input_dim; })
      .def_property_readonly("output_dim", [](const nn::Network& n) { return n.spec().output_dim; })
      .def("infer",
           [](const nn::Network& n, const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
             if (x.ndim() != 2 || x.shape(1) != n.spec().input_dim) throw ShapeError("infer: expected [batch, input_dim]");
             // Row-major [batch, in] is column-major [in, batch].
             const Eigen::Map<const nn::Matrix> in(x.data(), n.spec().input_dim, x.shape(0));
             const nn::Matrix out = n.infer(in);
             py::array_t<double> y({static_cast<py::ssize_t>(out.cols()), static_cast<py::ssize_t>(out.rows())});
             std::copy(out.data(), out.data() + out.size(), y.mutable_data());
             return y;
           },
           py::arg("x"), "Eval-mode forward pass of raw (already scaled) inputs");

  m.def("nn1_surface",
        [](const nn::Network& nn1, const MarketState& s, const HestonParams& p, const JumpSpec& j) {
          const ModelPoint mp{p, s.v, j};
          return surface_array(nn::nn1_surface(nn1, to_inputs(mp, default_grid()), nn::scaling_of(nn1)));
        },
        py::arg("nn1"), py::arg("state"), py::arg("p"), py::arg("j"), "NN1 surface at a model point");

  m.def("train",
        [](const std::string& mode, const std::string& data, const std::string& out, const std::string& config,
           const std::string& nn1_path) {
          const RunConfig cfg = resolve_run_config(config);
          const auto samples = read_dataset_csv(data);
          TrainedNetwork t = mode == "nn1"
                                 ? train_nn1(samples, cfg.sampling, cfg.nn1.shape, cfg.nn1.train)
                                 : train_nn2(samples, nn::load(nn1_path), cfg.sampling, cfg.nn2.shape, cfg.nn2.train);
          nn::save(t.net, out);
          return t.val_rmse;
        },
        py::arg("mode"), py::arg("data"), py::arg("out"), py::arg("config") = "", py::arg("nn1") = "",
        "Train nn1 or nn2 from a dataset CSV; returns the held-out RMSE");

  m.def("simulate",
        [](const nn::Network& nn1, const nn::Network& nn2, const std::string& config, int n_steps, std::uint64_t seed) {
          RunConfig cfg = resolve_run_config(config);
          if (n_steps >= 0) cfg.sim.n_steps = n_steps;
          cfg.sim.seed = seed;
          require_trained(nn1, "nn1");
          require_trained(nn2, "nn2");
          const auto recs = run(cfg.sim, cfg.initial.state(cfg.sim.grid), SimNetworks{nn1, nn2, nn::scaling_of(nn1)});
          py::list out;
          for (const SimRecord& r : recs) {
            py::dict d;
            d["step"] = r.step;
            d["t"] = r.t;
            d["x"] = r.x;
            d["v"] = r.v;
            d["theta"] = r.p.theta;
            d["sigma"] = r.p.sigma;
            d["rho"] = r.p.rho;
            d["vols"] = surface_array(r.vols);
            d["delta_c_before"] = r.delta_c_before;
            d["delta_c_after"] = r.delta_c_after;
            d["recalibrated"] = r.recalibrated;
            d["max_violation"] = r.arb.max_violation;
            out.append(d);
          }
          return out;
        },
        py::arg("nn1"), py::arg("nn2"), py::arg("config") = "", py::arg("n_steps") = -1, py::arg("seed") = 7,
        "Run the CRC loop; one dict per record");
}
