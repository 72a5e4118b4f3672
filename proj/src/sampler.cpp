#include "spmix/sampler.hpp"

#include "spmix/io.hpp"
#include "spmix/model.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <istream>
#include <ostream>
#include <sstream>
#include <cstdio>

namespace spmix {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Vec standard_normals(Eigen::Index k, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec out(k);
  for (Eigen::Index i = 0; i < k; ++i) out(i) = normal(rng);
  return out;
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double log_ratio_from(const LogTarget& proposed, const LogTarget& current) {
  if (!proposed) return -kInf;
  if (!current) return kInf;
  return *proposed - *current;
}

// Terms of the batch times that depend on log x2: exceedance/censoring terms
// plus the x2 density.
double eval_x2_block(const Posterior& post, const ParamCache& p, const LatentState& latent,
                     std::span<const Eigen::Index> batch, Vec* grad) {
  double total = 0.0;
  Vec glog_s;
  if (grad) grad->resize(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Eigen::Index t = batch[k];
    const double l2 = latent.log_x2(t);
    double g2 = 0.0;
    total += post.obs_term(p, l2, latent.log_x3.row(t).transpose(), t, grad ? &glog_s : nullptr);
    total += post.x2_term(p, l2, grad ? &g2 : nullptr);
    if (grad) (*grad)(static_cast<Eigen::Index>(k)) = g2 + glog_s.sum();
  }
  return total;
}

// Terms of the batch times that depend on log x3. Gradient rows are flattened
// time-major into one vector.
LogTarget eval_x3_block(const Posterior& post, const ParamCache& p, const LatentState& latent,
                        std::span<const Eigen::Index> batch, Vec* grad) {
  const Eigen::Index d = post.num_sites();
  double total = 0.0;
  Vec glog_s, g3;
  if (grad) grad->resize(static_cast<Eigen::Index>(batch.size()) * d);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Eigen::Index t = batch[k];
    const auto row = latent.log_x3.row(t).transpose();
    total += post.obs_term(p, latent.log_x2(t), row, t, grad ? &glog_s : nullptr);
    const LogTarget x3 = post.x3_term(p, row, grad ? &g3 : nullptr);
    if (!x3) return kReject;
    total += *x3;
    if (grad) grad->segment(static_cast<Eigen::Index>(k) * d, d) = glog_s + g3;
  }
  if (!std::isfinite(total)) return kReject;
  return total;
}

Vec gather_x2(const LatentState& l, std::span<const Eigen::Index> batch) {
  Vec z(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) z(static_cast<Eigen::Index>(k)) = l.log_x2(batch[k]);
  return z;
}

Vec gather_x3(const LatentState& l, std::span<const Eigen::Index> batch) {
  const Eigen::Index d = l.log_x3.cols();
  Vec z(static_cast<Eigen::Index>(batch.size()) * d);
  for (std::size_t k = 0; k < batch.size(); ++k)
    z.segment(static_cast<Eigen::Index>(k) * d, d) = l.log_x3.row(batch[k]).transpose();
  return z;
}

void scatter_x2(LatentState& l, std::span<const Eigen::Index> batch, const Vec& z) {
  for (std::size_t k = 0; k < batch.size(); ++k) l.log_x2(batch[k]) = z(static_cast<Eigen::Index>(k));
}

void scatter_x3(LatentState& l, std::span<const Eigen::Index> batch, const Vec& z) {
  const Eigen::Index d = l.log_x3.cols();
  for (std::size_t k = 0; k < batch.size(); ++k)
    l.log_x3.row(batch[k]) = z.segment(static_cast<Eigen::Index>(k) * d, d).transpose();
}

double log_mh_hyper(const Posterior& post, const ParamCache& current, const ParamCache& proposed,
                    const LatentState& latent, Block block, double log_q_forward, double log_q_backward) {
  const LogTarget cur = post.block_log_target(current, latent, block);
  const LogTarget prop = post.block_log_target(proposed, latent, block);
  const double lr = log_ratio_from(prop, cur);
  if (std::isinf(lr)) return lr;
  return lr + log_q_backward - log_q_forward;
}

template <class Eval>
double log_mh_latent(const Eval& eval, const LatentState& current, const LatentState& proposed, double tau,
                     Vec (*gather)(const LatentState&, std::span<const Eigen::Index>),
                     std::span<const Eigen::Index> batch) {
  Vec gc, gp;
  const LogTarget cur = eval(current, &gc);
  const LogTarget prop = eval(proposed, &gp);
  const double lr = log_ratio_from(prop, cur);
  if (std::isinf(lr)) return lr;
  const Vec zc = gather(current, batch), zp = gather(proposed, batch);
  return lr + langevin_log_kernel(zc, zp, gp, tau) - langevin_log_kernel(zp, zc, gc, tau);
}

}  // namespace

const char* slot_name(int slot) {
  switch (slot) {
    case 0: return "gamma";
    case 1: return "beta1";
    case 2: return "beta2";
    case 3: return "beta3_rho";
    case kSlotX2: return "x2";
    case kSlotX3: return "x3";
    default: throw ContractError("unknown step-size slot " + std::to_string(slot));
  }
}

void SamplerConfig::validate(Eigen::Index num_times) const {
  auto fail = [](const std::string& m) { throw ContractError("sampler config: " + m); };
  if (batch_size < 1 || batch_size > num_times)
    fail("batch size must lie in [1, " + std::to_string(num_times) + "], got " + std::to_string(batch_size));
  if (mh_interval < 1) fail("MH interval must be >= 1");
  if (iterations < 0 || iterations % mh_interval != 0) fail("iterations must be a multiple of the MH interval");
  if (burn_in < 0) fail("burn-in must be >= 0");
  if (adapt <= 0) fail("adaptation interval must be > 0");
  if (!(theta_rate > 0)) fail("theta_rate must be > 0");
  for (double t : {target_rw, target_sgld})
    if (!(t > 0 && t < 1)) fail("acceptance targets must lie in (0, 1)");
  for (const auto& b : {band_rw, band_sgld})
    if (!(b.lo >= 0 && b.lo < b.hi && b.hi <= 1)) fail("acceptance bands must satisfy 0 <= lo < hi <= 1");
  for (double s : step)
    if (!(s > 0) || !std::isfinite(s)) fail("step sizes must be finite and > 0");
  if (thin < 0 || trace_stride() % mh_interval != 0) fail("trace stride must be a multiple of the MH interval");
  if (latent_thin < 0 || (latent_thin > 0 && latent_thin % mh_interval != 0))
    fail("latent stride must be a multiple of the MH interval");
  if (!(max_drift > 0)) fail("max drift must be > 0");
  if (!(divergence_limit > 0)) fail("divergence limit must be > 0");
}

void AcceptWindow::record(long iteration, bool accepted) { events_.emplace_back(iteration, accepted); }

void AcceptWindow::prune(long iteration, long span) {
  while (!events_.empty() && events_.front().first <= iteration - span) events_.pop_front();
}

double AcceptWindow::rate() const {
  if (events_.empty()) return 0.0;
  long acc = 0;
  for (const auto& [it, ok] : events_) acc += ok ? 1 : 0;
  return static_cast<double>(acc) / static_cast<double>(events_.size());
}

Mat ChainTrace::draws() const {
  const Eigen::Index k = names.empty() ? 0 : static_cast<Eigen::Index>(names.size());
  Mat m(size(), k);
  for (Eigen::Index i = 0; i < size(); ++i)
    for (Eigen::Index j = 0; j < k; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

Mat ChainTrace::draws_after(double fraction) const {
  if (rows.empty()) return Mat(0, static_cast<Eigen::Index>(names.size()));
  const double cut = fraction * static_cast<double>(iterations.back());
  std::size_t first = 0;
  while (first < iterations.size() && static_cast<double>(iterations[first]) <= cut) ++first;
  Mat m(static_cast<Eigen::Index>(rows.size() - first), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = first; i < rows.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j) m(static_cast<Eigen::Index>(i - first), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

Vec ChainTrace::column(Eigen::Index k) const {
  Vec v(size());
  for (Eigen::Index i = 0; i < size(); ++i) v(i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  return v;
}

double ChainTrace::acceptance_rate(int slot) const {
  const auto s = static_cast<std::size_t>(slot);
  return proposed[s] > 0 ? static_cast<double>(accepted[s]) / static_cast<double>(proposed[s]) : 0.0;
}

void ChainTrace::append(const ChainTrace& more) {
  if (names.empty()) names = more.names;
  iterations.insert(iterations.end(), more.iterations.begin(), more.iterations.end());
  rows.insert(rows.end(), more.rows.begin(), more.rows.end());
  latent_iterations.insert(latent_iterations.end(), more.latent_iterations.begin(), more.latent_iterations.end());
  latents.insert(latents.end(), more.latents.begin(), more.latents.end());
  for (int s = 0; s < kNumTuned; ++s) {
    accepted[static_cast<std::size_t>(s)] += more.accepted[static_cast<std::size_t>(s)];
    proposed[static_cast<std::size_t>(s)] += more.proposed[static_cast<std::size_t>(s)];
  }
  step_history.insert(step_history.end(), more.step_history.begin(), more.step_history.end());
  seconds_per_1000.insert(seconds_per_1000.end(), more.seconds_per_1000.begin(), more.seconds_per_1000.end());
  seconds += more.seconds;
}

std::optional<Vec> sgld_propose(const Vec& z, const Vec& grad, double tau, long n, long b, Rng& rng,
                                double max_drift) {
  if (!(tau > 0)) throw DomainError("step size must be > 0");
  if (z.size() != grad.size()) throw ContractError("gradient and state sizes differ");
  const Vec noise = standard_normals(z.size(), rng);
  if (!grad.allFinite()) return std::nullopt;
  Vec drift = (tau * static_cast<double>(n) / (2.0 * static_cast<double>(b))) * grad;
  const double norm = drift.norm();
  if (norm > max_drift) drift *= max_drift / norm;
  return Vec(z + drift + std::sqrt(tau) * noise);
}

double langevin_log_kernel(const Vec& to, const Vec& from, const Vec& grad_from, double tau,
                           double max_drift) {
  Vec drift = 0.5 * tau * grad_from;
  const double norm = drift.norm();
  if (norm > max_drift) drift *= max_drift / norm;
  const Vec r = to - from - drift;
  const double k = static_cast<double>(to.size());
  return -0.5 * k * (kLog2Pi + std::log(tau)) - 0.5 * r.squaredNorm() / tau;
}

double mh_ratio_hyper(const Posterior& post, const ParamCache& current, const ParamCache& proposed,
                      const LatentState& latent, Block block, double log_q_forward, double log_q_backward) {
  return std::exp(log_mh_hyper(post, current, proposed, latent, block, log_q_forward, log_q_backward));
}

Vec full_gradient(const Posterior& post, const ParamCache& p, const LatentState& latent, Block block) {
  const auto all = post.all_times();
  return post.grad_hyper(p, latent, block, all).total();
}

double mh_ratio_latent_x2(const Posterior& post, const ParamCache& p, const LatentState& current,
                          const LatentState& proposed, std::span<const Eigen::Index> batch, double tau) {
  auto eval = [&](const LatentState& l, Vec* g) -> LogTarget {
    const double v = eval_x2_block(post, p, l, batch, g);
    if (!std::isfinite(v)) return kReject;
    return v;
  };
  return std::exp(log_mh_latent(eval, current, proposed, tau, gather_x2, batch));
}

double mh_ratio_latent_x3(const Posterior& post, const ParamCache& p, const LatentState& current,
                          const LatentState& proposed, std::span<const Eigen::Index> batch, double tau) {
  auto eval = [&](const LatentState& l, Vec* g) { return eval_x3_block(post, p, l, batch, g); };
  return std::exp(log_mh_latent(eval, current, proposed, tau, gather_x3, batch));
}

double adapt_step(double tau_cur, double p_cur, double p_tar, double theta_rate) {
  return std::max(std::exp((p_cur - p_tar) / theta_rate) * tau_cur, std::numeric_limits<double>::min());
}

bool schedule_hits(int slot_index, long lo, long hi, long adapt) {
  if (hi <= lo) return false;
  const long first = static_cast<long>(slot_index) * adapt;
  const long period = 6 * adapt;
  if (hi < first) return false;
  // Largest schedule point <= hi.
  const long last = first + ((hi - first) / period) * period;
  return last > lo;
}

ChainState initial_state(const Posterior& post, const SamplerConfig& config, int chain_index) {
  const ExceedanceDataset& data = post.data();
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index t = 0; t < data.num_times(); ++t)
    for (Eigen::Index j = 0; j < data.num_sites(); ++j)
      if (std::isfinite(data.u(t, j)) && data.y(t, j) > 0) {
        sum += data.y(t, j);
        ++count;
      }
  HyperParams theta;
  theta.copula = post.copula();
  theta.gamma = Vec::Zero(post.num_gamma());
  theta.gamma(0) = count > 0 ? std::log(sum / static_cast<double>(count)) : 0.0;
  const Bounds& b = post.bounds();
  const PriorSpec& pr = post.priors();
  theta.beta1 = 0.5 * b.delta1;
  theta.beta2 = 0.5 * b.delta2;
  theta.beta3 = std::max(pr.beta3_shape / pr.beta3_rate, 1.5);
  theta.rho = b.delta;

  ChainState s;
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(chain_index)};
  s.rng.seed(seq);
  s.tt = transform(theta, b);
  if (chain_index > 0) {
    Vec flat = s.tt.flatten();
    flat += standard_normals(flat.size(), s.rng);
    s.tt = TransformedHyperParams::unflatten(flat);
  }
  // Latents start at a draw from their prior under the starting hyperparameters.
  const HyperParams start = untransform(s.tt, b, post.copula());
  const SimulatedField sim = simulate_components(start, post.stations(), data.num_times(), s.rng());
  s.latent.log_x2 = sim.x2.array().log().matrix();
  s.latent.log_x3 = sim.x3.array().log().matrix();
  s.step = config.step;
  return s;
}

Sampler::Sampler(const Posterior& post, SamplerConfig config, ChainState state)
    : post_(post), config_(std::move(config)), state_(std::move(state)) {
  config_.validate(post_.num_times());
  if (state_.latent.log_x2.size() != post_.num_times() || state_.latent.log_x3.rows() != post_.num_times() ||
      state_.latent.log_x3.cols() != post_.num_sites())
    throw ContractError("initial latent state does not match the data dimensions");
  if (state_.tt.gamma.size() != post_.num_gamma())
    throw ContractError("initial state has " + std::to_string(state_.tt.gamma.size()) +
                        " gamma coefficients, design has " + std::to_string(post_.num_gamma()));
  if (state_.iteration % config_.mh_interval != 0)
    throw ContractError("chain state iteration is not at an MH correction boundary");
  order_.resize(static_cast<std::size_t>(post_.num_times()));
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<Eigen::Index>(i);
}

ChainTrace Sampler::run() {
  ChainTrace trace;
  run(config_.iterations - state_.iteration, trace);
  return trace;
}

void Sampler::run(long iterations, ChainTrace& trace) {
  if (iterations < 0 || iterations % config_.mh_interval != 0)
    throw ContractError("iterations must be a non-negative multiple of the MH interval");
  if (trace.names.empty()) {
    HyperParams tmp = untransform(state_.tt, post_.bounds(), post_.copula());
    trace.names = tmp.names();
  }
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto block_start = start;
  const long end = state_.iteration + iterations;
  while (state_.iteration < end) {
    const long before = state_.iteration;
    outer_step(trace);
    if (state_.iteration / 1000 != before / 1000) {
      const auto now = clock::now();
      trace.seconds_per_1000.push_back(std::chrono::duration<double>(now - block_start).count());
      block_start = now;
    }
  }
  trace.seconds += std::chrono::duration<double>(clock::now() - start).count();
}

void Sampler::outer_step(ChainTrace& trace) {
  const ParamCache saved = post_.params(state_.tt);
  ParamCache moving = saved;
  for (long j = 0; j < config_.mh_interval; ++j) inner_step(saved, moving, trace);
  correct(saved, moving, trace);
  check_divergence();
  record(trace);
}

void Sampler::inner_step(const ParamCache& saved, ParamCache& moving, ChainTrace& trace) {
  const long it = ++state_.iteration;
  const long n = post_.num_times();
  const long b = config_.batch_size;
  Rng& rng = state_.rng;
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  for (long k = 0; k < b; ++k) {
    std::uniform_int_distribution<long> pick(k, n - 1);
    std::swap(order_[static_cast<std::size_t>(k)], order_[static_cast<std::size_t>(pick(rng))]);
  }
  const std::span<const Eigen::Index> batch(order_.data(), static_cast<std::size_t>(b));
  const double prior_weight = static_cast<double>(b) / static_cast<double>(n);

  for (int k = 0; k < 3; ++k) {
    if (!config_.update[static_cast<std::size_t>(k)]) continue;
    const auto block = static_cast<Block>(k);
    const HyperGradient g = post_.grad_hyper(moving, state_.latent, block, batch);
    const Vec grad = g.data + prior_weight * g.prior;
    const auto z = sgld_propose(block_values(moving.tt, block), grad, state_.step[static_cast<std::size_t>(k)],
                                n, b, rng, config_.max_drift);
    if (!z) continue;
    TransformedHyperParams tt = moving.tt;
    set_block_values(tt, block, *z);
    try {
      moving = post_.params(tt, moving);
    } catch (const Error&) {
    }
  }
  if (config_.update[3]) {
    const Vec cur = block_values(moving.tt, Block::ShapeRange);
    const Vec z = cur + std::sqrt(state_.step[3]) * standard_normals(cur.size(), rng);
    TransformedHyperParams tt = moving.tt;
    set_block_values(tt, Block::ShapeRange, z);
    try {
      moving = post_.params(tt, moving);
    } catch (const Error&) {
    }
  }

  for (int slot : {kSlotX2, kSlotX3}) {
    if (!config_.update[static_cast<std::size_t>(slot)]) continue;
    const bool ok = slot == kSlotX2 ? latent_x2_step(saved, batch) : latent_x3_step(saved, batch);
    state_.windows[static_cast<std::size_t>(slot)].record(it, ok);
    ++trace.proposed[static_cast<std::size_t>(slot)];
    if (ok) ++trace.accepted[static_cast<std::size_t>(slot)];
    maybe_adapt(slot, it - 1, it, trace);
  }
}

bool Sampler::latent_x2_step(const ParamCache& saved, std::span<const Eigen::Index> batch) {
  const double tau = state_.step[kSlotX2];
  Vec gc;
  const double vc = eval_x2_block(post_, saved, state_.latent, batch, &gc);
  if (!std::isfinite(vc)) return false;
  const Vec zc = gather_x2(state_.latent, batch);
  const auto zp = sgld_propose(zc, gc, tau, 1, 1, state_.rng);
  const double u = uniform01(state_.rng);
  if (!zp) return false;
  scatter_x2(state_.latent, batch, *zp);
  Vec gp;
  const double vp = eval_x2_block(post_, saved, state_.latent, batch, &gp);
  const double lr = vp - vc + langevin_log_kernel(zc, *zp, gp, tau) - langevin_log_kernel(*zp, zc, gc, tau);
  if (std::isfinite(vp) && std::log(u) < lr) return true;
  scatter_x2(state_.latent, batch, zc);
  return false;
}

bool Sampler::latent_x3_step(const ParamCache& saved, std::span<const Eigen::Index> batch) {
  const double tau = state_.step[kSlotX3];
  Vec gc;
  const LogTarget vc = eval_x3_block(post_, saved, state_.latent, batch, &gc);
  if (!vc) return false;
  const Vec zc = gather_x3(state_.latent, batch);
  const auto zp = sgld_propose(zc, gc, tau, 1, 1, state_.rng);
  const double u = uniform01(state_.rng);
  if (!zp) return false;
  scatter_x3(state_.latent, batch, *zp);
  Vec gp;
  const LogTarget vp = eval_x3_block(post_, saved, state_.latent, batch, &gp);
  if (vp) {
    const double lr = *vp - *vc + langevin_log_kernel(zc, *zp, gp, tau) - langevin_log_kernel(*zp, zc, gc, tau);
    if (std::log(u) < lr) return true;
  }
  scatter_x3(state_.latent, batch, zc);
  return false;
}

void Sampler::correct(const ParamCache& saved, const ParamCache& moving, ChainTrace& trace) {
  const long it = state_.iteration;
  ParamCache current = saved;
  for (int k = 0; k < kNumHyperBlocks; ++k) {
    const auto s = static_cast<std::size_t>(k);
    if (!config_.update[s]) continue;
    const auto block = static_cast<Block>(k);
    const Vec start = block_values(current.tt, block);
    const Vec endpoint = block_values(moving.tt, block);
    const double u = uniform01(state_.rng);
    bool ok = false;
    if (endpoint == start) {
      ok = true;
    } else {
      TransformedHyperParams tt = current.tt;
      set_block_values(tt, block, endpoint);
      std::optional<ParamCache> proposed;
      try {
        proposed = post_.params(tt, current);
      } catch (const Error&) {
      }
      if (proposed) {
        double log_qf = 0.0, log_qb = 0.0;
        if (block != Block::ShapeRange) {
          const double tau = state_.step[s];
          const Vec gc = full_gradient(post_, current, state_.latent, block);
          const Vec gp = full_gradient(post_, *proposed, state_.latent, block);
          log_qf = langevin_log_kernel(endpoint, start, gc, tau, config_.max_drift);
          log_qb = langevin_log_kernel(start, endpoint, gp, tau, config_.max_drift);
        }
        const double lr = log_mh_hyper(post_, current, *proposed, state_.latent, block, log_qf, log_qb);
        if (std::log(u) < lr) {
          ok = true;
          current = std::move(*proposed);
        }
      }
    }
    state_.windows[s].record(it, ok);
    ++trace.proposed[s];
    if (ok) ++trace.accepted[s];
    maybe_adapt(k, it - config_.mh_interval, it, trace);
  }
  state_.tt = current.tt;
}

void Sampler::maybe_adapt(int slot, long lo, long hi, ChainTrace& trace) {
  if (hi >= config_.burn_in) return;
  if (!schedule_hits(slot + 1, lo, hi, config_.adapt)) return;
  auto& window = state_.windows[static_cast<std::size_t>(slot)];
  window.prune(hi, config_.adapt);
  if (window.empty()) return;
  const double rate = window.rate();
  if (hi >= config_.burn_in / 2) {
    const AcceptanceBand band = config_.band(slot);
    if (rate >= band.lo && rate <= band.hi) return;
  }
  double& tau = state_.step[static_cast<std::size_t>(slot)];
  const double before = tau;
  tau = adapt_step(tau, rate, config_.target(slot), config_.theta_rate);
  trace.step_history.push_back({hi, slot, rate, before, tau});
}

void Sampler::record(ChainTrace& trace) const {
  const long it = state_.iteration;
  if (it % config_.trace_stride() == 0) {
    const HyperParams theta = untransform(state_.tt, post_.bounds(), post_.copula());
    const Vec v = theta.flatten();
    trace.iterations.push_back(it);
    trace.rows.emplace_back(v.data(), v.data() + v.size());
  }
  if (config_.latent_thin > 0 && it >= config_.latent_from && it % config_.latent_thin == 0) {
    trace.latent_iterations.push_back(it);
    trace.latents.push_back(state_.latent);
  }
}

void Sampler::check_divergence() const {
  const double norm = state_.tt.flatten().norm();
  const double latent_max = std::max(state_.latent.log_x2.cwiseAbs().maxCoeff(),
                                     state_.latent.log_x3.cwiseAbs().maxCoeff());
  if (norm > config_.divergence_limit || !std::isfinite(norm) || latent_max > config_.divergence_limit) {
    std::ostringstream msg;
    msg << "sampler diverged at iteration " << state_.iteration << ": transformed state norm " << norm
        << ", max |latent| " << latent_max << ", step sizes";
    for (double s : state_.step) msg << ' ' << s;
    throw NumericalError(msg.str());
  }
}

ChainTrace run_chain(const Posterior& post, const SamplerConfig& config, const ChainState& init) {
  Sampler sampler(post, config, init);
  return sampler.run();
}

// ---------------------------------------------------------------------------
// Checkpoints (JSON) and trace CSV.

void save_checkpoint(const ChainState& state, const std::string& path) {
  using nlohmann::json;
  std::ostringstream rng;
  rng << state.rng;
  json j;
  j["format"] = "spmix-checkpoint";
  j["version"] = 1;
  j["iteration"] = state.iteration;
  const Vec tt = state.tt.flatten();
  j["theta_transformed"] = std::vector<double>(tt.data(), tt.data() + tt.size());
  j["step"] = state.step;
  j["rng"] = rng.str();
  j["n"] = state.latent.log_x3.rows();
  j["d"] = state.latent.log_x3.cols();
  j["log_x2"] = std::vector<double>(state.latent.log_x2.data(), state.latent.log_x2.data() + state.latent.log_x2.size());
  std::vector<double> x3(static_cast<std::size_t>(state.latent.log_x3.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      x3.data(), state.latent.log_x3.rows(), state.latent.log_x3.cols()) = state.latent.log_x3;
  j["log_x3"] = x3;
  json windows = json::array();
  for (const auto& w : state.windows) {
    json events = json::array();
    for (const auto& [it, ok] : w.events()) events.push_back({it, ok});
    windows.push_back(events);
  }
  j["windows"] = windows;
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << j.dump(1) << '\n';
  if (!out) throw Error("failed writing checkpoint " + path);
}

ChainState load_checkpoint(const std::string& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path);
  json j;
  try {
    in >> j;
    if (j.at("format") != "spmix-checkpoint") throw DataError(path + " is not a checkpoint file");
    ChainState s;
    s.iteration = j.at("iteration").get<long>();
    const auto tt = j.at("theta_transformed").get<std::vector<double>>();
    s.tt = TransformedHyperParams::unflatten(Eigen::Map<const Vec>(tt.data(), static_cast<Eigen::Index>(tt.size())));
    s.step = j.at("step").get<std::array<double, kNumTuned>>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> s.rng;
    const auto n = j.at("n").get<Eigen::Index>(), d = j.at("d").get<Eigen::Index>();
    const auto x2 = j.at("log_x2").get<std::vector<double>>();
    const auto x3 = j.at("log_x3").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(x2.size()) != n || static_cast<Eigen::Index>(x3.size()) != n * d)
      throw DataError(path + ": latent sizes do not match n and d");
    s.latent.log_x2 = Eigen::Map<const Vec>(x2.data(), n);
    s.latent.log_x3 = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x3.data(), n, d);
    const auto& windows = j.at("windows");
    for (std::size_t k = 0; k < s.windows.size() && k < windows.size(); ++k) {
      std::deque<std::pair<long, bool>> ev;
      for (const auto& e : windows[k]) ev.emplace_back(e.at(0).get<long>(), e.at(1).get<bool>());
      s.windows[k].restore(std::move(ev));
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed checkpoint (" + e.what() + ")");
  }
}

void write_trace_csv(const ChainTrace& trace, std::ostream& out) {
  out << "iteration";
  for (const auto& n : trace.names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    out << trace.iterations[i];
    for (double v : trace.rows[i]) out << ',' << format_double(v);
    out << '\n';
  }
}

ChainTrace read_trace_csv(std::istream& in) {
  ChainTrace trace;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty trace file");
  {
    std::istringstream header(line);
    std::string cell;
    std::getline(header, cell, ',');
    if (cell != "iteration") throw DataError("trace header must start with 'iteration'");
    while (std::getline(header, cell, ',')) trace.names.push_back(cell);
  }
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    trace.iterations.push_back(std::stol(cell));
    std::vector<double> values;
    while (std::getline(ls, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc()) throw DataError("trace row " + std::to_string(row) + ": bad number '" + cell + "'");
      values.push_back(v);
    }
    if (values.size() != trace.names.size())
      throw DataError("trace row " + std::to_string(row) + " has " + std::to_string(values.size()) + " values");
    trace.rows.push_back(std::move(values));
  }
  return trace;
}

}  // namespace spmix
