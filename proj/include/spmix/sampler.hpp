#pragma once

#include "spmix/likelihood.hpp"
#include "spmix/types.hpp"

#include <array>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spmix {

// Step-size slots: the four hyperparameter blocks followed by the two latent blocks.
inline constexpr int kNumTuned = 6;
inline constexpr int kSlotX2 = 4;
inline constexpr int kSlotX3 = 5;
const char* slot_name(int slot);

struct AcceptanceBand {
  double lo;
  double hi;
};

struct SamplerConfig {
  long batch_size = 5;
  long mh_interval = 25;
  long iterations = 100000;
  long burn_in = 50000;
  long adapt = 500;
  double theta_rate = 1.0;
  double target_rw = 0.23;
  double target_sgld = 0.57;
  AcceptanceBand band_rw{0.15, 0.30};
  AcceptanceBand band_sgld{0.50, 0.65};
  // Gamma, beta1, beta2, (beta3, rho), x2, x3.
  std::array<double, kNumTuned> step{1e-4, 1e-4, 1e-4, 1e-3, 0.05, 0.005};
  std::array<bool, kNumTuned> update{true, true, true, true, true, true};
  long thin = 0;         // trace stride in iterations; 0 means one row per MH correction
  long latent_thin = 0;  // latent snapshot stride in iterations; 0 disables snapshots
  long latent_from = 0;  // first iteration eligible for a latent snapshot
  double max_drift = 1.0;  // cap on the SGLD drift norm of a hyperparameter block
  double divergence_limit = 1e6;
  std::uint64_t seed = 1;

  long trace_stride() const { return thin > 0 ? thin : mh_interval; }
  bool is_rw_slot(int slot) const { return slot == static_cast<int>(Block::ShapeRange); }
  double target(int slot) const { return is_rw_slot(slot) ? target_rw : target_sgld; }
  AcceptanceBand band(int slot) const { return is_rw_slot(slot) ? band_rw : band_sgld; }
  void validate(Eigen::Index num_times) const;
};

// Accept/reject outcomes of the most recent `span` iterations of one block.
class AcceptWindow {
 public:
  void record(long iteration, bool accepted);
  void prune(long iteration, long span);
  bool empty() const { return events_.empty(); }
  double rate() const;
  const std::deque<std::pair<long, bool>>& events() const { return events_; }
  void restore(std::deque<std::pair<long, bool>> events) { events_ = std::move(events); }

 private:
  std::deque<std::pair<long, bool>> events_;
};

// Everything needed to resume a chain bit-exactly.
struct ChainState {
  long iteration = 0;
  TransformedHyperParams tt;
  LatentState latent;
  std::array<double, kNumTuned> step{};
  std::array<AcceptWindow, kNumTuned> windows{};
  Rng rng;
};

struct StepSizeChange {
  long iteration;
  int slot;
  double accept_rate;
  double before;
  double after;
};

struct ChainTrace {
  std::vector<std::string> names;
  std::vector<long> iterations;
  std::vector<std::vector<double>> rows;  // natural scale, one per kept iteration
  std::vector<long> latent_iterations;
  std::vector<LatentState> latents;
  std::array<long, kNumTuned> accepted{};
  std::array<long, kNumTuned> proposed{};
  std::vector<StepSizeChange> step_history;
  std::vector<double> seconds_per_1000;
  double seconds = 0.0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(rows.size()); }
  Mat draws() const;
  // Rows with iteration strictly greater than fraction * last iteration.
  Mat draws_after(double fraction) const;
  Vec column(Eigen::Index k) const;
  double acceptance_rate(int slot) const;
  void append(const ChainTrace& more);
};

// z + (tau * n / (2b)) grad + N(0, tau I), with the drift rescaled to norm at
// most max_drift. Returns nullopt for a non-finite gradient.
std::optional<Vec> sgld_propose(const Vec& z, const Vec& grad, double tau, long n, long b, Rng& rng,
                                double max_drift = kInf);
// Log density of the Langevin kernel N(to; from + (tau/2) grad_from, tau I),
// drift capped as in sgld_propose.
double langevin_log_kernel(const Vec& to, const Vec& from, const Vec& grad_from, double tau,
                           double max_drift = kInf);

// MH ratio for a hyperparameter block move from current to proposed, given
// the log proposal densities q(proposed | current) and q(current | proposed).
double mh_ratio_hyper(const Posterior& post, const ParamCache& current, const ParamCache& proposed,
                      const LatentState& latent, Block block, double log_q_forward, double log_q_backward);
// Full-data gradient of a SGLD block (data + prior + Jacobian).
Vec full_gradient(const Posterior& post, const ParamCache& p, const LatentState& latent, Block block);

// Block-MALA ratios over the batch times. `proposed` may differ from
// `current` only in the block being updated at batch times.
double mh_ratio_latent_x2(const Posterior& post, const ParamCache& p, const LatentState& current,
                          const LatentState& proposed, std::span<const Eigen::Index> batch, double tau);
double mh_ratio_latent_x3(const Posterior& post, const ParamCache& p, const LatentState& current,
                          const LatentState& proposed, std::span<const Eigen::Index> batch, double tau);

double adapt_step(double tau_cur, double p_cur, double p_tar, double theta_rate);
// True when some element of {slot_index * adapt + 6k * adapt, k >= 0} lies in (lo, hi].
bool schedule_hits(int slot_index, long lo, long hi, long adapt);

// Starting point: hyperparameters at prior means with the intercept at the
// log mean of the finite positive observations. Chains with index > 0
// perturb every transformed coordinate by N(0, 1). Latents are a prior draw
// given these hyperparameters.
ChainState initial_state(const Posterior& post, const SamplerConfig& config, int chain_index = 0);

/// Stochastic-gradient Langevin sampler with periodic Metropolis-Hastings
/// correction of the hyperparameter trajectories and block MALA updates of
/// the latent factors.
class Sampler {
 public:
  Sampler(const Posterior& post, SamplerConfig config, ChainState state);

  // Advances by `iterations` (a multiple of the MH interval), appending to trace.
  void run(long iterations, ChainTrace& trace);
  ChainTrace run();

  const ChainState& state() const { return state_; }
  const SamplerConfig& config() const { return config_; }

 private:
  void outer_step(ChainTrace& trace);
  void inner_step(const ParamCache& saved, ParamCache& moving, ChainTrace& trace);
  bool latent_x2_step(const ParamCache& saved, std::span<const Eigen::Index> batch);
  bool latent_x3_step(const ParamCache& saved, std::span<const Eigen::Index> batch);
  void correct(const ParamCache& saved, const ParamCache& moving, ChainTrace& trace);
  void maybe_adapt(int slot, long lo, long hi, ChainTrace& trace);
  void record(ChainTrace& trace) const;
  void check_divergence() const;

  const Posterior& post_;
  SamplerConfig config_;
  ChainState state_;
  std::vector<Eigen::Index> order_;
};

ChainTrace run_chain(const Posterior& post, const SamplerConfig& config, const ChainState& init);

void save_checkpoint(const ChainState& state, const std::string& path);
ChainState load_checkpoint(const std::string& path);
void write_trace_csv(const ChainTrace& trace, std::ostream& out);
ChainTrace read_trace_csv(std::istream& in);

}  // namespace spmix
