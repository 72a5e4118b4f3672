#pragma once

#include "spmix/predict.hpp"
#include "spmix/sampler.hpp"
#include "spmix/types.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace spmix {

// Shortest decimal form that reads back to the same double.
std::string format_double(double v);
// Full-string parse; false on any trailing characters.
bool parse_double(const std::string& s, double& out);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Comma-separated, no quoting. `source` names the input in error messages.
CsvTable read_csv(std::istream& in, const std::string& source);

struct Standardization {
  Vec mean;
  Vec sd;

  static Standardization fit(const Mat& raw, const std::vector<std::string>& names);
  Mat apply(const Mat& raw) const;
};

struct StationTable {
  std::vector<std::string> ids;
  Mat coords;  // d x 2
  std::vector<std::string> covariate_names;
  Mat covariates;  // d x p, raw
};

StationTable read_stations(std::istream& in, const std::string& source);
void write_stations(const StationTable& table, std::ostream& out);

struct Observations {
  std::vector<std::string> times;
  Mat values;    // n x d, 0 where missing
  Mask missing;  // n x d
};

// Columns follow `station_ids`; stations absent from the file are all missing.
// A first column whose header is not a station id holds the time labels.
Observations read_observations(std::istream& in, const std::vector<std::string>& station_ids,
                               const std::string& source);
void write_observations(const Observations& obs, const std::vector<std::string>& station_ids, std::ostream& out);

/// Covariate terms of the log-scale model: `name` (linear), `name^2`
/// (quadratic) and `a:b` (interaction), joined by `+`. "1" or an empty string
/// is the intercept-only model.
class ModelFormula {
 public:
  struct Term {
    std::string a;
    std::string b;  // empty for a linear term; equal to a for a quadratic term
    std::string label() const;
  };

  static ModelFormula parse(const std::string& text);
  // Every covariate, linear.
  static ModelFormula linear(const std::vector<std::string>& covariates);

  const std::vector<Term>& terms() const { return terms_; }
  std::vector<std::string> labels() const;
  std::string text() const;
  // d x terms matrix from (standardized) covariate columns.
  Mat columns(const Mat& covariates, const std::vector<std::string>& names) const;

 private:
  std::vector<Term> terms_;
};

struct Ingested {
  StationTable table;
  Standardization standardization;
  Observations obs;

  // Station set with standardized covariates expanded through the formula.
  StationSet stations(const ModelFormula& formula) const;
};

Ingested ingest(std::istream& stations_csv, std::istream& observations_csv, const std::string& stations_source = "stations.csv",
                const std::string& observations_source = "observations.csv");
Ingested ingest(const std::string& stations_path, const std::string& observations_path);

struct Thresholds {
  ExceedanceDataset data;
  Vec site_threshold;  // per site; NaN where no observation exists
  std::vector<Eigen::Index> masked;  // requested plus all-missing sites
};

/// Per-site type-7 quantile thresholds. Missing cells and every cell of a
/// masked site get u = +inf.
Thresholds build_thresholds(const Observations& obs, const std::vector<std::string>& station_ids, double q,
                            bool positive_only, const std::vector<Eigen::Index>& masked_sites = {});

std::vector<Eigen::Index> site_indices(const std::vector<std::string>& station_ids, const std::vector<std::string>& wanted);

// Latent snapshots: iteration, t, log_x2, log_x3 for every site.
void write_latents_csv(const ChainTrace& trace, std::ostream& out);
void read_latents_csv(std::istream& in, ChainTrace& trace);

void write_predictive_csv(const PredictiveDraws& draws, const std::vector<std::string>& site_ids,
                          std::ostream& out);
PredictiveDraws read_predictive_csv(std::istream& in, const std::vector<std::string>& site_ids);

// 64-bit FNV-1a hash as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace spmix
