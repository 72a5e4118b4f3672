#include "spmix/cli.hpp"

#include "spmix/diagnostics.hpp"
#include "spmix/io.hpp"
#include "spmix/model.hpp"
#include "spmix/predict.hpp"

#include <CLI11.hpp>
#include <boost/version.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

namespace spmix {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(s);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = cell.find_last_not_of(" \t");
    out.push_back(cell.substr(b, e - b + 1));
  }
  return out;
}

std::vector<double> parse_numbers(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    double v = 0.0;
    if (!parse_double(item, v)) throw UsageError(what + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

template <class F>
void write_with(const fs::path& path, F&& writer) {
  std::ostringstream ss;
  writer(ss);
  write_file(path, ss.str());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

json number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const json& config, std::uint64_t seed) {
  json m;
  m["tool"] = "spmix";
  m["version"] = kVersion;
  m["command"] = command;
  m["arguments"] = args;
  m["config"] = config;
  m["config_hash"] = config.contains("out_dir") ? RunConfig::from_json(config).hash() : fnv1a_hex(config.dump());
  m["seed"] = seed;
  m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
                    {"boost", BOOST_LIB_VERSION},
                    {"compiler", __VERSION__}};
  write_file(dir / ("manifest_" + command + ".json"), m.dump(2) + "\n");
}

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
  return p;
}

// Options shared by the fit command and the run configuration.
void bind_run_options(CLI::App* cmd, RunConfig& c, std::string& steps, std::string& freeze, std::string& mask) {
  SamplerConfig& s = c.sampler;
  cmd->add_option("--stations", c.stations, "stations CSV (id,x,y,covariates...)");
  cmd->add_option("--observations", c.observations, "observations CSV (time, one column per station id)");
  cmd->add_option("--out-dir", c.out_dir, "output directory");
  cmd->add_option("--formula", c.formula, "covariate terms, e.g. 'lat + lon + alt + lat^2 + lat:lon'; '1' for intercept only");
  cmd->add_option("--censor-quantile", c.censor_quantile, "site-wise threshold quantile");
  cmd->add_flag("--positive-only", c.positive_only, "thresholds from strictly positive values only");
  cmd->add_option("--copula", c.copula, "gaussian or t");
  cmd->add_option("--nu", c.nu, "t copula degrees of freedom");
  cmd->add_option("--mask", mask, "comma-separated station ids held out for prediction");
  cmd->add_option("--chains", c.chains, "number of chains");
  cmd->add_option("--delta1", c.delta1, "upper bound of beta1");
  cmd->add_option("--delta2", c.delta2, "upper bound of beta2");
  cmd->add_option("--delta", c.delta, "range scale; 0 uses the maximum station distance");
  cmd->add_option("--discard", c.discard, "fraction of each chain discarded in summaries");
  cmd->add_option("--checkpoint-every", c.checkpoint_every, "checkpoint stride in iterations (0: end only)");
  cmd->add_option("--batch-size", s.batch_size, "SGLD batch size b");
  cmd->add_option("--mh-interval", s.mh_interval, "iterations between MH corrections N_m");
  cmd->add_option("--iterations", s.iterations, "total iterations");
  cmd->add_option("--burn-in", s.burn_in, "adaptation period N_bn");
  cmd->add_option("--adapt", s.adapt, "adaptation interval");
  cmd->add_option("--theta-rate", s.theta_rate, "adaptation rate");
  cmd->add_option("--target-rw", s.target_rw, "target acceptance of the random-walk block");
  cmd->add_option("--target-sgld", s.target_sgld, "target acceptance of Langevin blocks");
  cmd->add_option("--step", steps, "six initial step sizes: gamma,beta1,beta2,beta3_rho,x2,x3");
  cmd->add_option("--freeze", freeze, "comma-separated blocks held fixed");
  cmd->add_option("--thin", s.thin, "trace stride (0: every MH correction)");
  cmd->add_option("--latent-thin", s.latent_thin, "latent snapshot stride (0: automatic)");
  cmd->add_option("--max-drift", s.max_drift, "cap on the SGLD drift norm of a hyperparameter block");
  cmd->add_option("--divergence-limit", s.divergence_limit, "abort when the state norm exceeds this");
  cmd->add_option("--seed", s.seed, "random seed");
}

void apply_lists(RunConfig& c, const std::string& steps, const std::string& freeze, const std::string& mask) {
  if (!steps.empty()) {
    const auto v = parse_numbers(steps, "--step");
    if (v.size() != kNumTuned) throw UsageError("--step needs 6 values, got " + std::to_string(v.size()));
    std::copy(v.begin(), v.end(), c.sampler.step.begin());
  }
  for (const auto& name : split_list(freeze)) {
    bool found = false;
    for (int k = 0; k < kNumTuned; ++k)
      if (name == slot_name(k)) c.sampler.update[static_cast<std::size_t>(k)] = false, found = true;
    if (!found) throw UsageError("--freeze: unknown block '" + name + "'");
  }
  if (!mask.empty()) c.mask = split_list(mask);
}

struct Problem {
  Ingested ingested;
  ModelFormula formula;
  StationSet stations;
  Thresholds thresholds;
  Bounds bounds;
  std::vector<Eigen::Index> masked;
};

Problem load_problem(const RunConfig& c) {
  Problem p;
  p.ingested = ingest(c.stations, c.observations);
  try {
    p.formula = c.formula.empty() ? ModelFormula::linear(p.ingested.table.covariate_names) : ModelFormula::parse(c.formula);
    p.stations = p.ingested.stations(p.formula);
    p.masked = site_indices(p.ingested.table.ids, c.mask);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  p.thresholds = build_thresholds(p.ingested.obs, p.ingested.table.ids, c.censor_quantile, c.positive_only, p.masked);
  p.bounds = {c.delta1, c.delta2, c.delta > 0 ? c.delta : p.stations.max_distance()};
  return p;
}

SamplerConfig effective_sampler(const RunConfig& c) {
  SamplerConfig s = c.sampler;
  const long from = static_cast<long>(std::floor(c.discard * static_cast<double>(s.iterations)));
  if (s.latent_thin == 0) {
    const long kept = std::max(1L, s.iterations - from);
    const long raw = std::max(s.mh_interval, kept / 1000);
    s.latent_thin = ((raw + s.mh_interval - 1) / s.mh_interval) * s.mh_interval;
  }
  s.latent_from = from + 1;
  return s;
}

fs::path chain_file(const fs::path& dir, const std::string& stem, int chain, const std::string& ext) {
  return dir / (stem + "_chain" + std::to_string(chain) + ext);
}

ChainTrace load_chain(const fs::path& dir, int chain, bool latents) {
  auto in = open_input(chain_file(dir, "trace", chain, ".csv"));
  ChainTrace tr = read_trace_csv(in);
  if (latents) {
    const fs::path lp = chain_file(dir, "latents", chain, ".csv");
    if (fs::exists(lp)) {
      auto li = open_input(lp);
      read_latents_csv(li, tr);
    }
  }
  return tr;
}

void save_chain(const fs::path& dir, int chain, const ChainTrace& tr) {
  write_with(chain_file(dir, "trace", chain, ".csv"), [&](std::ostream& o) { write_trace_csv(tr, o); });
  write_with(chain_file(dir, "latents", chain, ".csv"), [&](std::ostream& o) { write_latents_csv(tr, o); });
}

void print_summary(const std::vector<ParameterSummary>& summary) {
  std::cout << std::left << std::setw(10) << "param" << std::right << std::setw(11) << "mean" << std::setw(11) << "sd"
            << std::setw(11) << "2.5%" << std::setw(11) << "97.5%" << std::setw(9) << "ESS" << std::setw(8) << "Rhat"
            << '\n';
  for (const auto& s : summary)
    std::cout << std::left << std::setw(10) << s.name << std::right << std::fixed << std::setprecision(4) << std::setw(11)
              << s.mean << std::setw(11) << s.sd << std::setw(11) << s.lower << std::setw(11) << s.upper
              << std::setprecision(0) << std::setw(9) << s.ess << std::setprecision(3) << std::setw(8) << s.rhat << '\n';
  std::cout.unsetf(std::ios::floatfield);
}

// ---------------------------------------------------------------------------

int run_simulate(const std::string& out_dir, long sites, long times, std::uint64_t seed, const std::string& gamma_text,
                 HyperParams theta, double missing, const std::vector<std::string>& args) {
  if (sites < 2) throw UsageError("--sites must be >= 2");
  if (times < 1) throw UsageError("--times must be >= 1");
  if (!(missing >= 0 && missing < 1)) throw UsageError("--missing must lie in [0, 1)");
  const auto g = parse_numbers(gamma_text, "--gamma");
  if (g.empty()) throw UsageError("--gamma needs at least the intercept");
  theta.gamma = Eigen::Map<const Vec>(g.data(), static_cast<Eigen::Index>(g.size()));
  try {
    theta.validate();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = prepare_dir(out_dir);
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index p = theta.gamma.size() - 1;
  StationTable table;
  table.coords.resize(sites, 2);
  table.covariates.resize(sites, p);
  for (Eigen::Index l = 0; l < p; ++l) table.covariate_names.push_back("z" + std::to_string(l + 1));
  for (Eigen::Index j = 0; j < sites; ++j) {
    table.ids.push_back("s" + std::to_string(j + 1));
    table.coords(j, 0) = unif(rng);
    table.coords(j, 1) = unif(rng);
  }
  for (Eigen::Index j = 0; j < sites; ++j)
    for (Eigen::Index l = 0; l < p; ++l) table.covariates(j, l) = l < 2 ? table.coords(j, l) : normal(rng);
  StationSet st;
  st.ids = table.ids;
  st.coords = table.coords;
  st.Z = table.covariates;
  const SimulatedField sim = simulate_components(theta, st, times, rng());
  Observations obs;
  obs.values = sim.y;
  obs.missing = Mask::Zero(times, sites);
  for (Eigen::Index t = 0; t < times; ++t) {
    obs.times.push_back(std::to_string(t + 1));
    for (Eigen::Index j = 0; j < sites; ++j)
      if (missing > 0 && unif(rng) < missing) obs.missing(t, j) = 1, obs.values(t, j) = 0.0;
  }
  write_with(dir / "stations.csv", [&](std::ostream& o) { write_stations(table, o); });
  write_with(dir / "observations.csv", [&](std::ostream& o) { write_observations(obs, table.ids, o); });
  json truth;
  const auto names = theta.names();
  const Vec flat = theta.flatten();
  for (std::size_t k = 0; k < names.size(); ++k) truth["theta"][names[k]] = flat(static_cast<Eigen::Index>(k));
  truth["copula"] = theta.copula.name();
  truth["nu"] = theta.copula.nu;
  truth["covariates"] = "z1 = x, z2 = y, z3... ~ N(0,1); raw, not standardized";
  truth["seed"] = seed;
  write_file(dir / "truth.json", truth.dump(2) + "\n");
  json cfg = {{"sites", sites}, {"times", times}, {"seed", seed}, {"gamma", g}, {"beta1", theta.beta1},
              {"beta2", theta.beta2}, {"beta3", theta.beta3}, {"rho", theta.rho}, {"copula", theta.copula.name()},
              {"nu", theta.copula.nu}, {"missing", missing}};
  write_manifest(dir, "simulate", args, cfg, seed);
  std::cout << "wrote " << sites << " stations x " << times << " times to " << dir.string() << '\n';
  return 0;
}

int run_fit(RunConfig c, bool resume, long stop_after, int workers, const std::vector<std::string>& args) {
  c.validate();
  c.stations = fs::absolute(c.stations).string();
  c.observations = fs::absolute(c.observations).string();
  const Problem p = load_problem(c);
  const Posterior post(p.thresholds.data, p.stations, c.make_copula(), p.bounds);
  const SamplerConfig sc = effective_sampler(c);
  try {
    sc.validate(post.num_times());
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (c.checkpoint_every % sc.mh_interval != 0)
    throw UsageError("--checkpoint-every must be a multiple of --mh-interval");
  const fs::path dir = prepare_dir(c.out_dir);
  const auto chains = static_cast<std::size_t>(c.chains);
  std::vector<ChainTrace> traces(chains);
  std::vector<json> accept(chains);
  std::vector<std::exception_ptr> failure(chains);
  std::atomic<bool> stopped = false;
  auto worker = [&](int chain) {
    const auto k = static_cast<std::size_t>(chain);
    try {
      const fs::path ckpt = chain_file(dir, "checkpoint", chain, ".json");
      ChainState state;
      ChainTrace& trace = traces[k];
      if (resume && fs::exists(ckpt)) {
        state = load_checkpoint(ckpt.string());
        trace = load_chain(dir, chain, true);
      } else {
        state = initial_state(post, sc, chain);
      }
      Sampler sampler(post, sc, state);
      const long end = stop_after > 0 ? std::min(sc.iterations, sampler.state().iteration + stop_after) : sc.iterations;
      if (end < sc.iterations) stopped = true;
      while (sampler.state().iteration < end) {
        const long left = end - sampler.state().iteration;
        const long chunk = c.checkpoint_every > 0 ? std::min(left, c.checkpoint_every) : left;
        sampler.run(chunk, trace);
        if (c.checkpoint_every > 0) {
          save_checkpoint(sampler.state(), ckpt.string());
          save_chain(dir, chain, trace);
        }
      }
      save_checkpoint(sampler.state(), ckpt.string());
      save_chain(dir, chain, trace);
      json& a = accept[k];
      a["chain"] = chain;
      for (int b = 0; b < kNumTuned; ++b) {
        const auto s = static_cast<std::size_t>(b);
        a["blocks"][slot_name(b)] = {{"accepted", trace.accepted[s]},
                                     {"proposed", trace.proposed[s]},
                                     {"rate", number(trace.acceptance_rate(b))},
                                     {"final_step", sampler.state().step[s]}};
      }
      a["step_changes"] = trace.step_history.size();
    } catch (...) {
      failure[k] = std::current_exception();
    }
  };
  const int threads = std::clamp(workers, 1, c.chains);
  for (int first = 0; first < c.chains; first += threads) {
    std::vector<std::thread> pool;
    for (int chain = first; chain < std::min(c.chains, first + threads); ++chain) pool.emplace_back(worker, chain);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failure)
    if (f) std::rethrow_exception(f);
  for (int chain = 0; chain < c.chains; ++chain)
    std::cerr << "chain " << chain << ": " << traces[static_cast<std::size_t>(chain)].rows.size() << " rows in "
              << std::fixed << std::setprecision(1) << traces[static_cast<std::size_t>(chain)].seconds << " s\n";
  std::cerr.unsetf(std::ios::floatfield);
  json acceptance = accept;
  write_manifest(dir, "fit", args, c.to_json(), c.sampler.seed);
  if (stopped) {
    std::cout << "stopped early; continue with --resume\n";
    return 0;
  }
  const auto summary = summarize(traces, c.discard);
  json s = summary_json(summary, c);
  s["terms"] = p.formula.labels();
  s["terms"].insert(s["terms"].begin(), "(intercept)");
  s["masked_sites"] = json::array();
  for (Eigen::Index j : p.thresholds.masked) s["masked_sites"].push_back(p.ingested.table.ids[static_cast<std::size_t>(j)]);
  write_file(dir / "summary.json", s.dump(2) + "\n");
  json timing;
  for (const auto& tr : traces) timing["seconds"].push_back(tr.seconds);
  for (const auto& x : summary) timing["ess_per_minute"][x.name] = number(x.ess_per_minute);
  write_file(dir / "timing.json", timing.dump(2) + "\n");
  write_file(dir / "acceptance.json", acceptance.dump(2) + "\n");
  print_summary(summary);
  return 0;
}

RunConfig fit_config(const fs::path& fit_dir) {
  const json m = read_json(fit_dir / "manifest_fit.json");
  return RunConfig::from_json(m.at("config"));
}

int run_predict(const std::string& fit_dir_text, std::string out, std::uint64_t seed, const std::string& new_sites,
                const std::vector<std::string>& args) {
  const fs::path fit_dir(fit_dir_text);
  const RunConfig c = fit_config(fit_dir);
  const Problem p = load_problem(c);
  const Posterior post(p.thresholds.data, p.stations, c.make_copula(), p.bounds);
  if (out.empty()) out = (fit_dir / "predictive.csv").string();
  PredictiveDraws all;
  std::vector<std::string> ids = p.ingested.table.ids;
  StationSet fresh;
  if (!new_sites.empty()) {
    auto in = open_input(new_sites);
    const StationTable t = read_stations(in, new_sites);
    if (t.covariate_names != p.ingested.table.covariate_names)
      throw UsageError("new sites must have the covariate columns " + join(p.ingested.table.covariate_names));
    fresh.ids = t.ids;
    fresh.coords = t.coords;
    fresh.Z = p.formula.columns(p.ingested.standardization.apply(t.covariates), t.covariate_names);
    ids = t.ids;
  }
  const auto cells = censored_cells(p.thresholds.data, p.thresholds.masked);
  if (new_sites.empty() && cells.empty()) throw UsageError("the fit has no masked cells to predict");
  for (int chain = 0; chain < c.chains; ++chain) {
    const ChainTrace tr = load_chain(fit_dir, chain, true);
    const std::uint64_t s = seed + static_cast<std::uint64_t>(chain);
    all.append(new_sites.empty() ? posterior_predict(tr, post, cells, s) : predict_new_sites(tr, post, fresh, s));
  }
  write_with(out, [&](std::ostream& o) { write_predictive_csv(all, ids, o); });
  json cfg = c.to_json();
  cfg["predict_seed"] = seed;
  cfg["new_sites"] = new_sites;
  write_manifest(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path(), "predict", args, cfg,
                 seed);
  std::cout << "wrote " << all.num_draws() << " draws x " << all.num_cells() << " cells to " << out << '\n';
  return 0;
}

int run_score(const std::string& fit_dir_text, std::string predictive, std::string truth_path, std::string out,
              const std::string& predictor_name, double weight_sd, const std::vector<std::string>& args) {
  const fs::path fit_dir(fit_dir_text);
  const RunConfig c = fit_config(fit_dir);
  PointPredictor predictor;
  try {
    predictor = parse_point_predictor(predictor_name);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (!(weight_sd >= 0)) throw UsageError("--weight-sd must be >= 0");
  if (predictive.empty()) predictive = (fit_dir / "predictive.csv").string();
  if (truth_path.empty()) truth_path = c.observations;
  if (out.empty()) out = (fit_dir / "scores.json").string();
  auto sin = open_input(c.stations);
  const StationTable table = read_stations(sin, c.stations);
  auto tin = open_input(truth_path);
  const Observations truth = read_observations(tin, table.ids, truth_path);
  auto pin = open_input(predictive);
  const PredictiveDraws draws = read_predictive_csv(pin, table.ids);
  const Thresholds th = build_thresholds(truth, table.ids, c.censor_quantile, c.positive_only);

  PredictiveDraws kept;
  kept.iterations = draws.iterations;
  std::vector<Eigen::Index> cols;
  for (std::size_t k = 0; k < draws.cells.size(); ++k) {
    const Cell cell = draws.cells[k];
    if (cell.t < 0 || cell.t >= truth.values.rows()) throw DataError("predictive cell time outside the truth file");
    if (truth.missing(cell.t, cell.j)) continue;
    kept.cells.push_back(cell);
    cols.push_back(static_cast<Eigen::Index>(k));
  }
  if (cols.empty()) throw DataError("no predicted cell has an observed truth value");
  kept.draws.resize(draws.num_draws(), static_cast<Eigen::Index>(cols.size()));
  Vec y(static_cast<Eigen::Index>(cols.size())), w(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    kept.draws.col(kk) = draws.draws.col(cols[k]);
    y(kk) = truth.values(kept.cells[k].t, kept.cells[k].j);
    w(kk) = th.site_threshold(kept.cells[k].j);
  }
  const auto scores = score_cells(kept, y, w, weight_sd, predictor);
  json report;
  report["predictor"] = predictor_name;
  report["weight_sd"] = weight_sd;
  std::map<std::string, std::array<double, 4>> per_site;
  std::array<double, 4> total{};
  for (const auto& s : scores) {
    const double se = (s.prediction - s.truth) * (s.prediction - s.truth);
    auto& a = per_site[table.ids[static_cast<std::size_t>(s.cell.j)]];
    for (auto* acc : {&a, &total}) {
      (*acc)[0] += se;
      (*acc)[1] += s.crps;
      (*acc)[2] += s.twcrps;
      (*acc)[3] += 1.0;
    }
  }
  auto block = [](const std::array<double, 4>& a) {
    return json{{"mpe", a[0] / a[3]}, {"crps", a[1] / a[3]}, {"twcrps", a[2] / a[3]}, {"cells", static_cast<long>(a[3])}};
  };
  report["aggregate"] = block(total);
  for (const auto& [id, a] : per_site) report["stations"][id] = block(a);
  write_file(out, report.dump(2) + "\n");
  json cfg = {{"fit", c.to_json()}, {"predictive", predictive}, {"truth", truth_path}, {"predictor", predictor_name},
              {"weight_sd", weight_sd}};
  write_manifest(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path(), "score", args, cfg, 0);
  std::cout << report["aggregate"].dump() << '\n';
  return 0;
}

int run_chi(HyperParams theta, double distance, const std::string& grid_text, long samples, std::uint64_t seed,
            const std::string& out, const std::vector<std::string>& args) {
  theta.gamma = Vec::Zero(1);
  try {
    theta.validate();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
  if (!(distance >= 0)) throw UsageError("--distance must be >= 0");
  const auto grid = parse_numbers(grid_text, "--u");
  if (grid.empty()) throw UsageError("--u needs at least one level");
  StationSet st;
  st.coords = Mat::Zero(2, 2);
  st.coords(1, 0) = distance;
  st.Z = Mat::Zero(2, 0);
  st.ids = {"a", "b"};
  std::vector<ChiEstimate> est;
  try {
    est = chi_u_model(theta, st, {0, 1}, grid, samples, seed);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  write_with(out, [&](std::ostream& o) {
    o << "u,chi,mc_se\n";
    for (const auto& e : est) o << format_double(e.u) << ',' << format_double(e.chi) << ',' << format_double(e.mc_se) << '\n';
  });
  json cfg = {{"beta1", theta.beta1}, {"beta2", theta.beta2}, {"beta3", theta.beta3}, {"rho", theta.rho},
              {"copula", theta.copula.name()}, {"nu", theta.copula.nu}, {"distance", distance}, {"u", grid},
              {"samples", samples}};
  write_manifest(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path(), "chi", args, cfg, seed);
  for (const auto& e : est) std::cout << e.u << ' ' << e.chi << ' ' << e.mc_se << (e.low_count ? " (low count)" : "") << '\n';
  return 0;
}

int run_diag(const std::string& fit_dir_text, long thin, double discard, const std::vector<std::string>& args) {
  const fs::path fit_dir(fit_dir_text);
  RunConfig c = fit_config(fit_dir);
  if (discard >= 0) c.discard = discard;
  if (!(c.discard >= 0 && c.discard < 1)) throw UsageError("--discard must lie in [0, 1)");
  if (thin < 0) throw UsageError("--thin must be >= 0");
  std::vector<ChainTrace> traces;
  for (int chain = 0; chain < c.chains; ++chain) traces.push_back(load_chain(fit_dir, chain, false));
  const auto summary = summarize(traces, c.discard);
  json d;
  for (const auto& s : summary) d["parameters"][s.name] = {{"rhat", number(s.rhat)}, {"ess", s.ess}, {"constant", s.constant}};
  const fs::path acc = fit_dir / "acceptance.json";
  if (fs::exists(acc)) d["acceptance"] = read_json(acc);
  if (thin > 0) {
    for (int chain = 0; chain < c.chains; ++chain) {
      ChainTrace t;
      t.names = traces[static_cast<std::size_t>(chain)].names;
      const auto& src = traces[static_cast<std::size_t>(chain)];
      for (std::size_t i = 0; i < src.rows.size(); ++i)
        if (src.iterations[i] % thin == 0) {
          t.iterations.push_back(src.iterations[i]);
          t.rows.push_back(src.rows[i]);
        }
      write_with(chain_file(fit_dir, "trace", chain, "_thin" + std::to_string(thin) + ".csv"),
                 [&](std::ostream& o) { write_trace_csv(t, o); });
    }
    d["thin"] = thin;
  }
  write_file(fit_dir / "diag.json", d.dump(2) + "\n");
  json cfg = {{"fit", c.to_json()}, {"thin", thin}};
  write_manifest(fit_dir, "diag", args, cfg, c.sampler.seed);
  std::cout << std::left << std::setw(10) << "param" << std::right << std::setw(9) << "Rhat" << std::setw(10) << "ESS" << '\n';
  for (const auto& s : summary)
    std::cout << std::left << std::setw(10) << s.name << std::right << std::fixed << std::setprecision(3) << std::setw(9)
              << s.rhat << std::setprecision(0) << std::setw(10) << s.ess << '\n';
  std::cout.unsetf(std::ios::floatfield);
  return 0;
}

// Lets "spmix fit --config file" work: the config option lives on the root app.
std::vector<std::string> hoist_config(std::vector<std::string> args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      const std::string a = args[i], b = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      args.insert(args.begin() + 1, {a, b});
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      const std::string a = args[i];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      args.insert(args.begin() + 1, a);
      break;
    }
  }
  return args;
}

}  // namespace

// ---------------------------------------------------------------------------

Copula RunConfig::make_copula() const {
  if (copula == "gaussian") return Copula::gaussian();
  if (copula == "t") return Copula::student_t(nu);
  throw UsageError("unknown copula '" + copula + "' (expected gaussian or t)");
}

void RunConfig::validate() const {
  if (stations.empty() || observations.empty()) throw UsageError("--stations and --observations are required");
  if (!(censor_quantile > 0 && censor_quantile < 1)) throw UsageError("--censor-quantile must lie in (0, 1)");
  if (chains < 1) throw UsageError("--chains must be >= 1");
  if (!(delta1 > 0) || !(delta2 > 0) || !(delta >= 0)) throw UsageError("bounds must be positive");
  if (!(discard >= 0 && discard < 1)) throw UsageError("--discard must lie in [0, 1)");
  if (checkpoint_every < 0) throw UsageError("--checkpoint-every must be >= 0");
  try {
    make_copula();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

json RunConfig::to_json() const {
  const SamplerConfig& s = sampler;
  json j;
  j["stations"] = stations;
  j["observations"] = observations;
  j["out_dir"] = out_dir;
  j["formula"] = formula;
  j["censor_quantile"] = censor_quantile;
  j["positive_only"] = positive_only;
  j["copula"] = copula;
  j["nu"] = nu;
  j["mask"] = mask;
  j["chains"] = chains;
  j["delta1"] = delta1;
  j["delta2"] = delta2;
  j["delta"] = delta;
  j["discard"] = discard;
  j["checkpoint_every"] = checkpoint_every;
  j["sampler"] = {{"batch_size", s.batch_size},   {"mh_interval", s.mh_interval},
                  {"iterations", s.iterations},   {"burn_in", s.burn_in},
                  {"adapt", s.adapt},             {"theta_rate", s.theta_rate},
                  {"target_rw", s.target_rw},     {"target_sgld", s.target_sgld},
                  {"band_rw", {s.band_rw.lo, s.band_rw.hi}},
                  {"band_sgld", {s.band_sgld.lo, s.band_sgld.hi}},
                  {"step", s.step},               {"update", s.update},
                  {"thin", s.thin},               {"latent_thin", s.latent_thin},
                  {"max_drift", s.max_drift},     {"divergence_limit", s.divergence_limit},
                  {"seed", s.seed}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.stations = j.at("stations");
    c.observations = j.at("observations");
    c.out_dir = j.at("out_dir");
    c.formula = j.at("formula");
    c.censor_quantile = j.at("censor_quantile");
    c.positive_only = j.at("positive_only");
    c.copula = j.at("copula");
    c.nu = j.at("nu");
    c.mask = j.at("mask").get<std::vector<std::string>>();
    c.chains = j.at("chains");
    c.delta1 = j.at("delta1");
    c.delta2 = j.at("delta2");
    c.delta = j.at("delta");
    c.discard = j.at("discard");
    c.checkpoint_every = j.at("checkpoint_every");
    const json& s = j.at("sampler");
    SamplerConfig& sc = c.sampler;
    sc.batch_size = s.at("batch_size");
    sc.mh_interval = s.at("mh_interval");
    sc.iterations = s.at("iterations");
    sc.burn_in = s.at("burn_in");
    sc.adapt = s.at("adapt");
    sc.theta_rate = s.at("theta_rate");
    sc.target_rw = s.at("target_rw");
    sc.target_sgld = s.at("target_sgld");
    sc.band_rw = {s.at("band_rw").at(0), s.at("band_rw").at(1)};
    sc.band_sgld = {s.at("band_sgld").at(0), s.at("band_sgld").at(1)};
    sc.step = s.at("step").get<std::array<double, kNumTuned>>();
    sc.update = s.at("update").get<std::array<bool, kNumTuned>>();
    sc.thin = s.at("thin");
    sc.latent_thin = s.at("latent_thin");
    sc.max_drift = s.at("max_drift");
    sc.divergence_limit = s.at("divergence_limit");
    sc.seed = s.at("seed");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run configuration: ") + e.what());
  }
  return c;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");
  return fnv1a_hex(j.dump());
}

json summary_json(const std::vector<ParameterSummary>& summary, const RunConfig& config) {
  json s;
  s["chains"] = config.chains;
  s["iterations"] = config.sampler.iterations;
  s["discard"] = config.discard;
  s["config_hash"] = config.hash();
  for (const auto& x : summary) {
    s["parameters"].push_back({{"name", x.name},
                               {"mean", x.mean},
                               {"sd", x.sd},
                               {"ci_lower", x.lower},
                               {"ci_upper", x.upper},
                               {"ess", x.ess},
                               {"rhat", number(x.rhat)}});
  }
  return s;
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  args = hoist_config(args);

  CLI::App app{"spmix: spatial product-mixture model for threshold exceedances"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.set_config("--config", "", "key = value file with one [section] per subcommand");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // simulate
  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset and its truth");
  std::string sim_out;
  long sim_sites = 30, sim_times = 100;
  std::uint64_t sim_seed = 1;
  std::string sim_gamma = "0,1,1,1";
  HyperParams sim_theta;
  sim_theta.beta1 = 0.8;
  sim_theta.beta2 = 0.7;
  sim_theta.beta3 = 5.0;
  sim_theta.rho = 0.5;
  std::string sim_copula = "gaussian";
  double sim_nu = 1.0, sim_missing = 0.0;
  sim->add_option("--out-dir", sim_out, "output directory")->required();
  sim->add_option("--sites", sim_sites, "number of stations");
  sim->add_option("--times", sim_times, "number of time points");
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_option("--gamma", sim_gamma, "intercept and covariate coefficients (z1 = x, z2 = y, others N(0,1))");
  sim->add_option("--beta1", sim_theta.beta1);
  sim->add_option("--beta2", sim_theta.beta2);
  sim->add_option("--beta3", sim_theta.beta3);
  sim->add_option("--rho", sim_theta.rho);
  sim->add_option("--copula", sim_copula, "gaussian or t");
  sim->add_option("--nu", sim_nu);
  sim->add_option("--missing", sim_missing, "fraction of cells left blank");

  // fit
  auto* fit = app.add_subcommand("fit", "run MCMC chains and summarize the posterior");
  RunConfig run;
  std::string steps, freeze, mask;
  bool resume = false;
  long stop_after = 0;
  int workers = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  bind_run_options(fit, run, steps, freeze, mask);
  fit->add_flag("--resume", resume, "continue from checkpoints in the output directory");
  fit->add_option("--threads", workers, "chains run concurrently (results do not depend on it)");
  fit->add_option("--stop-after", stop_after, "checkpoint and stop after this many iterations per chain");

  // predict
  auto* pred = app.add_subcommand("predict", "posterior predictive draws at masked or new sites");
  std::string pred_fit, pred_out, pred_new;
  std::uint64_t pred_seed = 1;
  pred->add_option("--fit-dir", pred_fit, "directory written by fit")->required();
  pred->add_option("--out", pred_out, "output CSV (default <fit-dir>/predictive.csv)");
  pred->add_option("--new-sites", pred_new, "stations CSV of sites outside the fit");
  pred->add_option("--seed", pred_seed);

  // score
  auto* score = app.add_subcommand("score", "MPE, CRPS and twCRPS of predictive draws");
  std::string sc_fit, sc_pred, sc_truth, sc_out, sc_predictor = "mean";
  double sc_wsd = 10.0;
  score->add_option("--fit-dir", sc_fit, "directory written by fit")->required();
  score->add_option("--predictive", sc_pred, "predictive CSV (default <fit-dir>/predictive.csv)");
  score->add_option("--truth", sc_truth, "observations CSV with the held-out values (default: fit observations)");
  score->add_option("--out", sc_out, "output JSON (default <fit-dir>/scores.json)");
  score->add_option("--predictor", sc_predictor, "point predictor for MPE: mean or median");
  score->add_option("--weight-sd", sc_wsd, "sd of the Gaussian twCRPS weight");

  // chi
  auto* chi = app.add_subcommand("chi", "Monte Carlo chi(u) for a pair of sites");
  HyperParams chi_theta;
  chi_theta.beta1 = 0.25;
  chi_theta.beta2 = 0.75;
  chi_theta.beta3 = 5.0;
  chi_theta.rho = 1.0;
  std::string chi_copula = "gaussian", chi_u = "0.9,0.95,0.99,0.995,0.999", chi_out = "chi.csv";
  double chi_nu = 1.0, chi_dist = 0.5;
  long chi_samples = 1000000;
  std::uint64_t chi_seed = 1;
  chi->add_option("--beta1", chi_theta.beta1);
  chi->add_option("--beta2", chi_theta.beta2);
  chi->add_option("--beta3", chi_theta.beta3);
  chi->add_option("--rho", chi_theta.rho);
  chi->add_option("--copula", chi_copula, "gaussian or t");
  chi->add_option("--nu", chi_nu);
  chi->add_option("--distance", chi_dist, "distance between the two sites");
  chi->add_option("--u", chi_u, "comma-separated levels");
  chi->add_option("--samples", chi_samples);
  chi->add_option("--seed", chi_seed);
  chi->add_option("--out", chi_out, "output CSV");

  // diag
  auto* diag = app.add_subcommand("diag", "R-hat, ESS and acceptance report of a fit");
  std::string diag_fit;
  long diag_thin = 0;
  double diag_discard = -1.0;
  diag->add_option("--fit-dir", diag_fit, "directory written by fit")->required();
  diag->add_option("--thin", diag_thin, "also write traces keeping every k-th iteration");
  diag->add_option("--discard", diag_discard, "override the discarded fraction");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      try {
        sim_theta.copula = sim_copula == "t" ? Copula::student_t(sim_nu) : Copula::gaussian();
      } catch (const DomainError& e) {
        throw UsageError(e.what());
      }
      if (sim_copula != "t" && sim_copula != "gaussian") throw UsageError("unknown copula '" + sim_copula + "'");
      return run_simulate(sim_out, sim_sites, sim_times, sim_seed, sim_gamma, sim_theta, sim_missing, args);
    }
    if (*fit) {
      apply_lists(run, steps, freeze, mask);
      if (stop_after < 0 || stop_after % std::max(1L, run.sampler.mh_interval) != 0)
        throw UsageError("--stop-after must be a non-negative multiple of --mh-interval");
      return run_fit(run, resume, stop_after, workers, args);
    }
    if (*pred) return run_predict(pred_fit, pred_out, pred_seed, pred_new, args);
    if (*score) return run_score(sc_fit, sc_pred, sc_truth, sc_out, sc_predictor, sc_wsd, args);
    if (*chi) {
      if (chi_copula != "t" && chi_copula != "gaussian") throw UsageError("unknown copula '" + chi_copula + "'");
      try {
        chi_theta.copula = chi_copula == "t" ? Copula::student_t(chi_nu) : Copula::gaussian();
      } catch (const DomainError& e) {
        throw UsageError(e.what());
      }
      return run_chi(chi_theta, chi_dist, chi_u, chi_samples, chi_seed, chi_out, args);
    }
    if (*diag) return run_diag(diag_fit, diag_thin, diag_discard, args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace spmix
