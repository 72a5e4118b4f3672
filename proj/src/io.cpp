#include "spmix/io.hpp"

#include "spmix/diagnostics.hpp"
#include "spmix/predict.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace spmix {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA" || cell == "na" || cell == "NaN"; }

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

}  // namespace

CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw DataError(source + ": empty file");
  t.header = split(line, ',');
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != t.header.size())
      throw DataError(source + " row " + std::to_string(row) + ": " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

Standardization Standardization::fit(const Mat& raw, const std::vector<std::string>& names) {
  Standardization s;
  const Eigen::Index d = raw.rows();
  s.mean = raw.colwise().mean().transpose();
  s.sd.resize(raw.cols());
  for (Eigen::Index l = 0; l < raw.cols(); ++l) {
    const double var = d > 1 ? (raw.col(l).array() - s.mean(l)).square().sum() / static_cast<double>(d - 1) : 0.0;
    if (!(var > 0))
      throw DataError("covariate '" + names[static_cast<std::size_t>(l)] + "' has zero variance; cannot standardize");
    s.sd(l) = std::sqrt(var);
  }
  return s;
}

Mat Standardization::apply(const Mat& raw) const {
  if (raw.cols() != mean.size()) throw ContractError("covariate count differs from the standardization");
  Mat out = raw;
  for (Eigen::Index l = 0; l < raw.cols(); ++l) out.col(l) = (raw.col(l).array() - mean(l)) / sd(l);
  return out;
}

StationTable read_stations(std::istream& in, const std::string& source) {
  const CsvTable t = read_csv(in, source);
  if (t.header.size() < 3 || t.header[0] != "id" || t.header[1] != "x" || t.header[2] != "y")
    throw DataError(source + ": header must start with id,x,y");
  StationTable s;
  s.covariate_names.assign(t.header.begin() + 3, t.header.end());
  const auto d = static_cast<Eigen::Index>(t.rows.size());
  const auto p = static_cast<Eigen::Index>(s.covariate_names.size());
  if (d == 0) throw DataError(source + ": no stations");
  s.coords.resize(d, 2);
  s.covariates.resize(d, p);
  std::map<std::string, long> seen;
  for (Eigen::Index r = 0; r < d; ++r) {
    const auto& cells = t.rows[static_cast<std::size_t>(r)];
    const std::string& id = cells[0];
    if (id.empty()) throw DataError(source + " row " + std::to_string(r + 2) + ": empty station id");
    if (!seen.emplace(id, r).second) throw DataError(source + " row " + std::to_string(r + 2) + ": duplicate station id '" + id + "'");
    s.ids.push_back(id);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_double(cells[c], v) || !std::isfinite(v))
        throw DataError(source + " row " + std::to_string(r + 2) + ", column '" + t.header[c] + "': non-numeric value '" +
                        cells[c] + "'");
      if (c <= 2)
        s.coords(r, static_cast<Eigen::Index>(c - 1)) = v;
      else
        s.covariates(r, static_cast<Eigen::Index>(c - 3)) = v;
    }
  }
  return s;
}

void write_stations(const StationTable& table, std::ostream& out) {
  out << "id,x,y";
  for (const auto& n : table.covariate_names) out << ',' << n;
  out << '\n';
  for (std::size_t j = 0; j < table.ids.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    out << table.ids[j] << ',' << format_double(table.coords(r, 0)) << ',' << format_double(table.coords(r, 1));
    for (Eigen::Index l = 0; l < table.covariates.cols(); ++l) out << ',' << format_double(table.covariates(r, l));
    out << '\n';
  }
}

Observations read_observations(std::istream& in, const std::vector<std::string>& station_ids,
                               const std::string& source) {
  const CsvTable t = read_csv(in, source);
  std::map<std::string, Eigen::Index> col_of;
  for (std::size_t j = 0; j < station_ids.size(); ++j) col_of[station_ids[j]] = static_cast<Eigen::Index>(j);
  std::size_t first = 0;
  if (!t.header.empty() && !col_of.count(t.header[0])) first = 1;  // time label column
  std::vector<Eigen::Index> target(t.header.size(), -1);
  for (std::size_t c = first; c < t.header.size(); ++c) {
    const auto it = col_of.find(t.header[c]);
    if (it == col_of.end()) throw DataError(source + " column " + std::to_string(c + 1) + ": unknown station id '" + t.header[c] + "'");
    target[c] = it->second;
  }
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  const auto d = static_cast<Eigen::Index>(station_ids.size());
  if (n == 0) throw DataError(source + ": no observation rows");
  Observations obs;
  obs.values = Mat::Zero(n, d);
  obs.missing = Mask::Ones(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& cells = t.rows[static_cast<std::size_t>(r)];
    obs.times.push_back(first == 1 ? cells[0] : std::to_string(r + 1));
    for (std::size_t c = first; c < cells.size(); ++c) {
      if (is_missing(cells[c])) continue;
      double v = 0.0;
      const std::string where = source + " row " + std::to_string(r + 2) + ", column '" + t.header[c] + "'";
      if (!parse_double(cells[c], v) || !std::isfinite(v)) throw DataError(where + ": non-numeric value '" + cells[c] + "'");
      if (v < 0) throw DataError(where + ": negative value " + cells[c]);
      obs.values(r, target[c]) = v;
      obs.missing(r, target[c]) = 0;
    }
  }
  return obs;
}

void write_observations(const Observations& obs, const std::vector<std::string>& station_ids, std::ostream& out) {
  out << "time";
  for (const auto& id : station_ids) out << ',' << id;
  out << '\n';
  for (Eigen::Index t = 0; t < obs.values.rows(); ++t) {
    out << (static_cast<std::size_t>(t) < obs.times.size() ? obs.times[static_cast<std::size_t>(t)] : std::to_string(t + 1));
    for (Eigen::Index j = 0; j < obs.values.cols(); ++j) {
      out << ',';
      if (!obs.missing(t, j)) out << format_double(obs.values(t, j));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

std::string ModelFormula::Term::label() const {
  if (b.empty()) return a;
  if (a == b) return a + "^2";
  return a + ":" + b;
}

ModelFormula ModelFormula::parse(const std::string& text) {
  ModelFormula f;
  const std::string t = trim(text);
  if (t.empty() || t == "1") return f;
  for (const std::string& raw : split(t, '+')) {
    const std::string term = trim(raw);
    if (term.empty()) throw ContractError("formula '" + text + "' has an empty term");
    if (term == "1") continue;
    Term tm;
    if (const auto p = term.find('^'); p != std::string::npos) {
      if (trim(term.substr(p + 1)) != "2") throw ContractError("formula term '" + term + "': only ^2 is supported");
      tm.a = tm.b = trim(term.substr(0, p));
    } else if (const auto q = term.find(':'); q != std::string::npos) {
      tm.a = trim(term.substr(0, q));
      tm.b = trim(term.substr(q + 1));
      if (tm.b.find(':') != std::string::npos) throw ContractError("formula term '" + term + "': only two-way interactions");
    } else {
      tm.a = term;
    }
    if (tm.a.empty() || (term.find_first_of("^:") != std::string::npos && tm.b.empty()))
      throw ContractError("formula term '" + term + "' is malformed");
    const std::string label = tm.label();
    for (const auto& other : f.terms_)
      if (other.label() == label) throw ContractError("formula repeats term '" + label + "'");
    f.terms_.push_back(tm);
  }
  return f;
}

ModelFormula ModelFormula::linear(const std::vector<std::string>& covariates) {
  ModelFormula f;
  for (const auto& c : covariates) f.terms_.push_back({c, ""});
  return f;
}

std::vector<std::string> ModelFormula::labels() const {
  std::vector<std::string> out;
  for (const auto& t : terms_) out.push_back(t.label());
  return out;
}

std::string ModelFormula::text() const {
  if (terms_.empty()) return "1";
  std::string s;
  for (const auto& t : terms_) s += (s.empty() ? "" : " + ") + t.label();
  return s;
}

Mat ModelFormula::columns(const Mat& covariates, const std::vector<std::string>& names) const {
  auto col = [&](const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ContractError("formula references unknown covariate '" + name + "'");
    return covariates.col(it - names.begin());
  };
  Mat out(covariates.rows(), static_cast<Eigen::Index>(terms_.size()));
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const Term& t = terms_[k];
    out.col(static_cast<Eigen::Index>(k)) =
        t.b.empty() ? Vec(col(t.a)) : Vec(col(t.a).array() * col(t.b).array());
  }
  return out;
}

StationSet Ingested::stations(const ModelFormula& formula) const {
  StationSet s;
  s.ids = table.ids;
  s.coords = table.coords;
  s.Z = formula.columns(standardization.apply(table.covariates), table.covariate_names);
  return s;
}

Ingested ingest(std::istream& stations_csv, std::istream& observations_csv, const std::string& stations_source,
                const std::string& observations_source) {
  Ingested out;
  out.table = read_stations(stations_csv, stations_source);
  out.standardization = Standardization::fit(out.table.covariates, out.table.covariate_names);
  out.obs = read_observations(observations_csv, out.table.ids, observations_source);
  return out;
}

Ingested ingest(const std::string& stations_path, const std::string& observations_path) {
  auto s = open_input(stations_path);
  auto o = open_input(observations_path);
  return ingest(s, o, stations_path, observations_path);
}

std::vector<Eigen::Index> site_indices(const std::vector<std::string>& station_ids, const std::vector<std::string>& wanted) {
  std::vector<Eigen::Index> out;
  for (const auto& w : wanted) {
    const auto it = std::find(station_ids.begin(), station_ids.end(), w);
    if (it == station_ids.end()) throw ContractError("unknown station id '" + w + "'");
    out.push_back(it - station_ids.begin());
  }
  return out;
}

Thresholds build_thresholds(const Observations& obs, const std::vector<std::string>& station_ids, double q,
                            bool positive_only, const std::vector<Eigen::Index>& masked_sites) {
  if (!(q > 0 && q < 1)) throw DomainError("censor quantile must lie in (0, 1), got " + std::to_string(q));
  const Eigen::Index n = obs.values.rows();
  const Eigen::Index d = obs.values.cols();
  if (static_cast<Eigen::Index>(station_ids.size()) != d) throw ContractError("station ids do not match the observation columns");
  std::vector<bool> masked(static_cast<std::size_t>(d), false);
  for (Eigen::Index j : masked_sites) {
    if (j < 0 || j >= d) throw ContractError("masked site index " + std::to_string(j) + " is out of range");
    masked[static_cast<std::size_t>(j)] = true;
  }
  Thresholds out;
  out.site_threshold = Vec::Constant(d, std::numeric_limits<double>::quiet_NaN());
  Mat u = Mat::Constant(n, d, kInf);
  for (Eigen::Index j = 0; j < d; ++j) {
    std::vector<double> vals;
    bool any = false;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (obs.missing(t, j)) continue;
      any = true;
      if (!positive_only || obs.values(t, j) > 0) vals.push_back(obs.values(t, j));
    }
    const std::string& id = station_ids[static_cast<std::size_t>(j)];
    if (!any) {
      masked[static_cast<std::size_t>(j)] = true;
      continue;
    }
    if (vals.empty() || *std::max_element(vals.begin(), vals.end()) <= 0)
      throw DataError("site '" + id + "' has no positive observations");
    const double thr = empirical_quantile(vals, q);
    if (!(thr > 0)) throw DataError("site '" + id + "' has a zero threshold at q = " + std::to_string(q));
    out.site_threshold(j) = thr;
    if (masked[static_cast<std::size_t>(j)]) continue;
    for (Eigen::Index t = 0; t < n; ++t)
      if (!obs.missing(t, j)) u(t, j) = thr;
  }
  for (Eigen::Index j = 0; j < d; ++j)
    if (masked[static_cast<std::size_t>(j)]) out.masked.push_back(j);
  out.data = ExceedanceDataset::from_thresholds(obs.values, u);
  return out;
}

// ---------------------------------------------------------------------------

void write_latents_csv(const ChainTrace& trace, std::ostream& out) {
  const Eigen::Index d = trace.latents.empty() ? 0 : trace.latents.front().log_x3.cols();
  out << "iteration,t,log_x2";
  for (Eigen::Index j = 0; j < d; ++j) out << ",log_x3_" << j;
  out << '\n';
  for (std::size_t s = 0; s < trace.latents.size(); ++s) {
    const LatentState& l = trace.latents[s];
    for (Eigen::Index t = 0; t < l.log_x2.size(); ++t) {
      out << trace.latent_iterations[s] << ',' << t << ',' << format_double(l.log_x2(t));
      for (Eigen::Index j = 0; j < d; ++j) out << ',' << format_double(l.log_x3(t, j));
      out << '\n';
    }
  }
}

void read_latents_csv(std::istream& in, ChainTrace& trace) {
  const CsvTable t = read_csv(in, "latents");
  if (t.header.size() < 3 || t.header[0] != "iteration") throw DataError("latent file header must start with iteration,t,log_x2");
  const auto d = static_cast<Eigen::Index>(t.header.size()) - 3;
  trace.latents.clear();
  trace.latent_iterations.clear();
  std::vector<std::vector<double>> block;
  long current = -1;
  auto flush = [&]() {
    if (block.empty()) return;
    LatentState l{Vec(static_cast<Eigen::Index>(block.size())), Mat(static_cast<Eigen::Index>(block.size()), d)};
    for (std::size_t r = 0; r < block.size(); ++r) {
      l.log_x2(static_cast<Eigen::Index>(r)) = block[r][0];
      for (Eigen::Index j = 0; j < d; ++j) l.log_x3(static_cast<Eigen::Index>(r), j) = block[r][static_cast<std::size_t>(j + 1)];
    }
    trace.latents.push_back(std::move(l));
    trace.latent_iterations.push_back(current);
    block.clear();
  };
  long row = 1;
  for (const auto& cells : t.rows) {
    ++row;
    const long it = std::stol(cells[0]);
    const long tt = std::stol(cells[1]);
    if (it != current) {
      flush();
      current = it;
    }
    if (tt != static_cast<long>(block.size())) throw DataError("latent file row " + std::to_string(row) + ": times out of order");
    std::vector<double> v(cells.size() - 2);
    for (std::size_t c = 2; c < cells.size(); ++c)
      if (!parse_double(cells[c], v[c - 2])) throw DataError("latent file row " + std::to_string(row) + ": bad number");
    block.push_back(std::move(v));
  }
  flush();
}

void write_predictive_csv(const PredictiveDraws& draws, const std::vector<std::string>& site_ids, std::ostream& out) {
  out << "iteration";
  for (const Cell& c : draws.cells) out << ',' << site_ids.at(static_cast<std::size_t>(c.j)) << '@' << c.t;
  out << '\n';
  for (Eigen::Index r = 0; r < draws.num_draws(); ++r) {
    out << draws.iterations[static_cast<std::size_t>(r)];
    for (Eigen::Index k = 0; k < draws.num_cells(); ++k) out << ',' << format_double(draws.draws(r, k));
    out << '\n';
  }
}

PredictiveDraws read_predictive_csv(std::istream& in, const std::vector<std::string>& site_ids) {
  const CsvTable t = read_csv(in, "predictive draws");
  if (t.header.empty() || t.header[0] != "iteration") throw DataError("predictive file header must start with 'iteration'");
  PredictiveDraws p;
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    const auto at = t.header[c].rfind('@');
    if (at == std::string::npos) throw DataError("predictive column '" + t.header[c] + "' is not of the form id@t");
    const auto j = site_indices(site_ids, {t.header[c].substr(0, at)}).front();
    p.cells.push_back({std::stol(t.header[c].substr(at + 1)), j});
  }
  p.draws.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(p.cells.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    p.iterations.push_back(std::stol(t.rows[r][0]));
    for (std::size_t c = 1; c < t.rows[r].size(); ++c)
      if (!parse_double(t.rows[r][c], p.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1))))
        throw DataError("predictive row " + std::to_string(r + 2) + ": bad number");
  }
  return p;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spmix
