#include "spmix/cli.hpp"
#include "spmix/diagnostics.hpp"
#include "spmix/io.hpp"
#include "spmix/model.hpp"
#include "spmix/predict.hpp"
#include "spmix/sampler.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace spmix;

namespace {

StationSet make_stations(const Mat& coords, const Mat& Z) {
  StationSet s;
  s.coords = coords;
  s.Z = Z.size() == 0 ? Mat::Zero(coords.rows(), 0) : Z;
  for (Eigen::Index j = 0; j < coords.rows(); ++j) s.ids.push_back("s" + std::to_string(j + 1));
  return s;
}

Copula make_copula(const std::string& name, double nu) {
  if (name == "gaussian") return Copula::gaussian();
  if (name == "t") return Copula::student_t(nu);
  throw ContractError("unknown copula '" + name + "'");
}

HyperParams make_theta(const Vec& gamma, double beta1, double beta2, double beta3, double rho, const std::string& copula,
                       double nu) {
  HyperParams th;
  th.gamma = gamma;
  th.beta1 = beta1;
  th.beta2 = beta2;
  th.beta3 = beta3;
  th.rho = rho;
  th.copula = make_copula(copula, nu);
  th.validate();
  return th;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Spatial product-mixture model for threshold exceedances";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "simulate",
      [](const Mat& coords, const Mat& Z, const Vec& gamma, double beta1, double beta2, double beta3, double rho,
         long n, std::uint64_t seed, const std::string& copula, double nu) {
        const HyperParams th = make_theta(gamma, beta1, beta2, beta3, rho, copula, nu);
        const SimulatedField f = simulate_components(th, make_stations(coords, Z), n, seed);
        py::dict out;
        out["y"] = f.y;
        out["x1"] = f.x1;
        out["x2"] = f.x2;
        out["x3"] = f.x3;
        return out;
      },
      py::arg("coords"), py::arg("Z"), py::arg("gamma"), py::arg("beta1"), py::arg("beta2"), py::arg("beta3"),
      py::arg("rho"), py::arg("n"), py::arg("seed") = 1, py::arg("copula") = "gaussian", py::arg("nu") = 1.0,
      "Draw n replicates of Y = alpha x1 x2 x3 at the given sites.");

  m.def(
      "thresholds",
      [](const Mat& values, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& missing, double q,
         bool positive_only, const std::vector<Eigen::Index>& masked) {
        Observations obs;
        obs.values = values;
        obs.missing = missing.cast<std::uint8_t>();
        std::vector<std::string> ids;
        for (Eigen::Index j = 0; j < values.cols(); ++j) ids.push_back("s" + std::to_string(j + 1));
        const Thresholds th = build_thresholds(obs, ids, q, positive_only, masked);
        return py::make_tuple(th.data.u, th.site_threshold, th.masked);
      },
      py::arg("values"), py::arg("missing"), py::arg("q") = 0.75, py::arg("positive_only") = false,
      py::arg("masked") = std::vector<Eigen::Index>{},
      "Site-wise type-7 quantile thresholds; returns (u, site_threshold, masked_sites).");

  m.def(
      "fit",
      [](const Mat& y, const Mat& u, const Mat& coords, const Mat& Z, long iterations, long burn_in, long batch_size,
         long mh_interval, int chains, std::uint64_t seed, const std::string& copula, double nu, double delta,
         double discard) {
        const StationSet st = make_stations(coords, Z);
        const Bounds b{1.0, 1.0, delta > 0 ? delta : st.max_distance()};
        const Posterior post(ExceedanceDataset::from_thresholds(y, u), st, make_copula(copula, nu), b);
        SamplerConfig cfg;
        cfg.iterations = iterations;
        cfg.burn_in = burn_in;
        cfg.batch_size = batch_size;
        cfg.mh_interval = mh_interval;
        cfg.seed = seed;
        cfg.validate(post.num_times());
        std::vector<ChainTrace> traces;
        {
          py::gil_scoped_release release;
          for (int c = 0; c < chains; ++c) traces.push_back(run_chain(post, cfg, initial_state(post, cfg, c)));
        }
        py::list draws;
        for (const auto& t : traces) draws.append(t.draws());
        py::dict summary;
        for (const auto& s : summarize(traces, discard))
          summary[py::str(s.name)] = py::dict(py::arg("mean") = s.mean, py::arg("sd") = s.sd, py::arg("lower") = s.lower,
                                              py::arg("upper") = s.upper, py::arg("ess") = s.ess, py::arg("rhat") = s.rhat);
        py::dict out;
        out["names"] = traces.front().names;
        out["iterations"] = traces.front().iterations;
        out["draws"] = draws;
        out["summary"] = summary;
        return out;
      },
      py::arg("y"), py::arg("u"), py::arg("coords"), py::arg("Z"), py::arg("iterations") = 100000,
      py::arg("burn_in") = 50000, py::arg("batch_size") = 5, py::arg("mh_interval") = 25, py::arg("chains") = 2,
      py::arg("seed") = 1, py::arg("copula") = "gaussian", py::arg("nu") = 1.0, py::arg("delta") = 0.0,
      py::arg("discard") = 0.75, "Run MCMC chains; returns traces and a posterior summary.");

  m.def(
      "chi",
      [](double beta1, double beta2, double beta3, double rho, double distance, const std::vector<double>& u,
         long samples, std::uint64_t seed, const std::string& copula, double nu) {
        const HyperParams th = make_theta(Vec::Zero(1), beta1, beta2, beta3, rho, copula, nu);
        Mat coords = Mat::Zero(2, 2);
        coords(1, 0) = distance;
        const auto est = chi_u_model(th, make_stations(coords, Mat()), {0, 1}, u, samples, seed);
        std::vector<double> chi, se;
        for (const auto& e : est) chi.push_back(e.chi), se.push_back(e.mc_se);
        return py::make_tuple(chi, se);
      },
      py::arg("beta1"), py::arg("beta2"), py::arg("beta3"), py::arg("rho"), py::arg("distance"), py::arg("u"),
      py::arg("samples") = 1000000, py::arg("seed") = 1, py::arg("copula") = "gaussian", py::arg("nu") = 1.0,
      "Monte Carlo chi(u) for two sites; returns (chi, mc_se).");

  m.def("crps", [](const std::vector<double>& draws, double y) { return crps_sample(draws, y); }, py::arg("draws"),
        py::arg("y"));
  m.def(
      "twcrps",
      [](const std::vector<double>& draws, double y, double mean, double sd) { return twcrps(draws, y, mean, sd); },
      py::arg("draws"), py::arg("y"), py::arg("weight_mean"), py::arg("weight_sd") = 10.0);
  m.def("ess", [](const std::vector<double>& chain) { return ess(chain).value; }, py::arg("chain"));
  m.def("rhat", &rhat, py::arg("chains"));

  m.def(
      "main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "spmix");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Run the command-line tool in-process; returns the exit code.");
}
