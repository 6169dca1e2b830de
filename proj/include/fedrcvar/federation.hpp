#pragma once

// In-process simulation of federated training with a shared threshold.
//
// Each round the server broadcasts (theta, c); every client draws one batch,
// takes `local_steps` gradient steps on the batch mean of the smoothed
// objective and returns its pair; the server averages the pairs with weights
// b_k / sum(b) and projects c onto [0, B]. The output is the average of the
// broadcast pairs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedrcvar/dataset.hpp"
#include "fedrcvar/error.hpp"
#include "fedrcvar/model.hpp"
#include "fedrcvar/rcvar.hpp"
#include "fedrcvar/rng.hpp"
#include "fedrcvar/schedule.hpp"

namespace fedrcvar {

struct LearningRate {
  enum class Mode { Fixed, Lemma2Auto, Lemma3Auto };
  Mode mode = Mode::Fixed;
  double value = 0.1;

  static LearningRate fixed(double v) { return {Mode::Fixed, v}; }
  static LearningRate lemma2() { return {Mode::Lemma2Auto, 0.0}; }
  static LearningRate lemma3() { return {Mode::Lemma3Auto, 0.0}; }
};

struct FederationConfig {
  std::size_t rounds = 100;
  std::size_t local_steps = 1;
  LearningRate eta;
  std::map<std::size_t, std::size_t> batch_sizes;  // client id -> b_k, missing = whole shard
  std::uint64_t seed = 0;
  bool resample_per_local_step = false;
  bool project_theta_locally = true;
  bool project_c_locally = false;
  bool track_objective = true;
  std::size_t workers = 1;

  std::size_t batch_for(const Shard& s) const {
    const auto it = batch_sizes.find(s.client_id);
    return it == batch_sizes.end() ? s.samples.size() : it->second;
  }
};

struct TrainingTrace {
  std::vector<ModelState> broadcasts;       // (theta^t, c^t), t = 1..T
  std::vector<ModelState> running_average;  // average of broadcasts 1..t
  std::vector<double> objective;            // empirical objective at each broadcast
  double eta = 0.0;
  double gamma = 0.0;
};

struct FederationResult {
  TrainingTrace trace;
  ModelState averaged;  // output pair (theta_bar_T, c_bar_T)
  ModelState last;      // state after the final aggregation
};

// ---------------------------------------------------------------------------
// Per-sample objectives driving the local updates

/// Smoothed relaxed-CVaR objective.
struct SmoothedRcvarObjective {
  RcvarParams params;
  static constexpr bool updates_threshold = true;

  detail::SampleCoefficients terms(double loss, double c) const noexcept {
    return detail::smooth_terms(loss, c, params);
  }
};

/// Plain scaled loss; the threshold is carried along untouched.
struct PlainLossObjective {
  static constexpr bool updates_threshold = false;

  detail::SampleCoefficients terms(double loss, double) const noexcept {
    return {loss, 1.0, 0.0};
  }
};

/// Initial broadcast: theta uniform in [-0.01, 0.01] per coordinate, c = B.
inline ModelState initial_state(std::size_t num_params, std::uint64_t seed) {
  Rng rng(stream_seed(seed, 0x1a17ULL));
  ModelState s{std::vector<double>(num_params), kLossBound};
  for (double& v : s.theta) v = uniform(rng, -0.01, 0.01);
  return s;
}

inline std::vector<std::size_t> sample_batch(std::size_t n, std::size_t b, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (b >= n) return idx;
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(b);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

inline void check_finite(const ModelState& s, std::size_t round) {
  if (!std::isfinite(s.c)) throw NumericError(round, "threshold");
  for (double v : s.theta)
    if (!std::isfinite(v)) throw NumericError(round, "model parameters");
}

template <class Objective>
ModelState local_update(const Shard& shard, ModelState state, const FederationConfig& cfg,
                        double eta, const Objective& obj, const BoundedLossSpec& spec, Rng& rng) {
  const Samples& data = shard.samples;
  if (data.empty()) throw ConfigError("federation", "client " + std::to_string(shard.client_id) + " has no data");
  const std::size_t b = cfg.batch_for(shard);
  if (b == 0 || b > data.size())
    throw ConfigError("federation.batch_sizes",
                      "client " + std::to_string(shard.client_id) + ": batch size must lie in [1, n_k]");
  const std::size_t d = data.dim;
  const double inv = 1.0 / spec.raw_bound();
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> grad(d + 1);
  auto batch = sample_batch(data.size(), b, rng);
  for (std::size_t step = 0; step < cfg.local_steps; ++step) {
    if (step > 0 && cfg.resample_per_local_step) batch = sample_batch(data.size(), b, rng);
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_c = 0.0;
    for (std::size_t i : batch) {
      const auto x = data.row(i);
      const auto pl = point_loss(state.theta, x, data.labels[i], spec, inv);
      const auto t = obj.terms(pl.loss, state.c);
      const double coef = t.theta_scale * pl.dpred;
      for (std::size_t j = 0; j < d; ++j) grad[j] += coef * x[j];
      grad[d] += coef;
      grad_c += t.grad_c;
    }
    for (std::size_t j = 0; j <= d; ++j) state.theta[j] -= eta * (grad[j] * inv_b);
    if constexpr (Objective::updates_threshold) state.c -= eta * (grad_c * inv_b);
    if (cfg.project_theta_locally) project_onto_ball(state.theta, spec.domain_radius_M);
    if (cfg.project_c_locally) state.c = std::clamp(state.c, 0.0, kLossBound);
  }
  return state;
}

// Fixed-shape pairwise summation of rows [lo, hi).
inline void pairwise_sum(const std::vector<std::vector<double>>& rows, std::size_t lo,
                         std::size_t hi, std::vector<double>& out) {
  if (hi - lo == 1) {
    out = rows[lo];
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> right;
  pairwise_sum(rows, lo, mid, out);
  pairwise_sum(rows, mid, hi, right);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += right[j];
}

template <class Objective>
double empirical_objective(const std::vector<Shard>& shards, const ModelState& st,
                           const Objective& obj, const BoundedLossSpec& spec) {
  const double inv = 1.0 / spec.raw_bound();
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : shards) {
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
      const auto pl = point_loss(st.theta, s.samples.row(i), s.samples.labels[i], spec, inv);
      total += obj.terms(pl.loss, st.c).value;
    }
    n += s.samples.size();
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

/// One client's round: a batch of b_k samples, then tau steps on its mean
/// smoothed objective.
inline ModelState client_local_update(const Shard& shard, const ModelState& state,
                                      const FederationConfig& cfg, const RcvarParams& params,
                                      const BoundedLossSpec& spec, Rng& rng) {
  params.validate();
  spec.validate();
  if (cfg.eta.mode != LearningRate::Mode::Fixed)
    throw ConfigError("federation.eta", "client updates need a resolved step size");
  return detail::local_update(shard, state, cfg, cfg.eta.value, SmoothedRcvarObjective{params},
                              spec, rng);
}

struct ClientUpdate {
  std::size_t client_id;
  ModelState state;
  std::size_t batch;
};

/// Weighted average with weights b_k / sum(b), summed pairwise in ascending
/// client order; c is projected onto [0, B].
inline ModelState server_aggregate(std::vector<ClientUpdate> updates) {
  if (updates.empty()) throw ProtocolError("aggregation needs at least one client update");
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  const std::size_t p = updates.front().state.theta.size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.state.theta.size() != p) throw ProtocolError("client updates differ in dimension");
    if (u.batch == 0) throw ProtocolError("client batch size must be positive");
    total += static_cast<double>(u.batch);
  }
  // rows: weighted theta followed by weighted c
  std::vector<std::vector<double>> rows;
  rows.reserve(updates.size());
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.batch) / total;
    std::vector<double> r(p + 1);
    for (std::size_t j = 0; j < p; ++j) r[j] = w * u.state.theta[j];
    r[p] = w * u.state.c;
    rows.push_back(std::move(r));
  }
  std::vector<double> sum;
  detail::pairwise_sum(rows, 0, rows.size(), sum);
  ModelState out;
  out.c = std::clamp(sum[p], 0.0, kLossBound);
  sum.pop_back();
  out.theta = std::move(sum);
  return out;
}

namespace detail {

inline void check_federation(const std::vector<Shard>& shards, const FederationConfig& cfg) {
  if (shards.empty()) throw ConfigError("partition.num_clients", "empty federation");
  if (cfg.rounds == 0) throw ConfigError("federation.rounds", "must be at least 1");
  if (cfg.local_steps == 0) throw ConfigError("federation.local_steps", "must be at least 1");
  const std::size_t d = shards.front().samples.dim;
  std::vector<std::size_t> ids;
  for (const auto& s : shards) {
    if (s.samples.dim != d) throw DataError("clients disagree on the feature dimension");
    if (s.samples.empty())
      throw ConfigError("partition", "client " + std::to_string(s.client_id) + " has no data");
    const std::size_t b = cfg.batch_for(s);
    if (b == 0 || b > s.samples.size())
      throw ConfigError("federation.batch_sizes",
                        "client " + std::to_string(s.client_id) + ": batch size must lie in [1, n_k]");
    ids.push_back(s.client_id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ConfigError("partition", "duplicate client id");
}

template <class Objective>
FederationResult run_federation(const std::vector<Shard>& shards, const FederationConfig& cfg,
                                double eta, const Objective& obj, const BoundedLossSpec& spec,
                                const ModelState& init) {
  const std::size_t K = shards.size();
  FederationResult res;
  res.trace.eta = eta;
  ModelState state = init;
  std::vector<double> sum_theta(state.theta.size(), 0.0);
  double sum_c = 0.0;
  std::vector<ModelState> local(K);
  const std::size_t workers = std::clamp<std::size_t>(cfg.workers, 1, K);

  auto run_client = [&](std::size_t k, std::size_t round) {
    Rng rng(stream_seed(cfg.seed, shards[k].client_id + 1, round));
    local[k] = local_update(shards[k], state, cfg, eta, obj, spec, rng);
  };

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    res.trace.broadcasts.push_back(state);
    for (std::size_t j = 0; j < sum_theta.size(); ++j) sum_theta[j] += state.theta[j];
    sum_c += state.c;
    ModelState avg{sum_theta, sum_c / static_cast<double>(t)};
    for (double& v : avg.theta) v /= static_cast<double>(t);
    res.trace.running_average.push_back(std::move(avg));
    if (cfg.track_objective)
      res.trace.objective.push_back(empirical_objective(shards, state, obj, spec));

    if (workers == 1) {
      for (std::size_t k = 0; k < K; ++k) run_client(k, t);
    } else {
      std::vector<std::jthread> pool;
      std::exception_ptr failure;
      std::mutex failure_mutex;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t k = w; k < K; k += workers) run_client(k, t);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        });
      pool.clear();
      if (failure) std::rethrow_exception(failure);
    }

    std::vector<ClientUpdate> updates;
    updates.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
      check_finite(local[k], t);
      updates.push_back({shards[k].client_id, std::move(local[k]), cfg.batch_for(shards[k])});
    }
    const double carried_c = state.c;
    state = server_aggregate(std::move(updates));
    if constexpr (!Objective::updates_threshold) state.c = carried_c;
    check_finite(state, t);
  }
  res.averaged = res.trace.running_average.back();
  res.last = std::move(state);
  return res;
}

}  // namespace detail

/// Recomputes the output pair from the stored broadcasts, summing in the
/// same order as the training loop.
inline ModelState average_broadcasts(const TrainingTrace& trace) {
  if (trace.broadcasts.empty()) throw ProtocolError("empty trace");
  std::vector<double> sum(trace.broadcasts.front().theta.size(), 0.0);
  double sum_c = 0.0;
  for (const auto& b : trace.broadcasts) {
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += b.theta[j];
    sum_c += b.c;
  }
  const double T = static_cast<double>(trace.broadcasts.size());
  for (double& v : sum) v /= T;
  return {std::move(sum), sum_c / T};
}

struct ResolvedSchedule {
  double eta;
  RcvarParams params;  // gamma replaced under the excess-risk schedule
  RegularityConstants constants;
  bool T_condition_ok = true;
};

/// Turns an automatic step-size mode into a number for this federation.
inline ResolvedSchedule resolve_schedule(const std::vector<Shard>& shards,
                                         const FederationConfig& cfg, const RcvarParams& params,
                                         const BoundedLossSpec& spec) {
  ResolvedSchedule r{cfg.eta.value, params, {}, true};
  if (cfg.eta.mode == LearningRate::Mode::Fixed) {
    if (!(cfg.eta.value >= 0.0) || !std::isfinite(cfg.eta.value))
      throw ConfigError("federation.eta", "step size must be a non-negative number");
    return r;
  }
  r.constants = estimate_regularity(shards, cfg.batch_sizes, params, spec, 8, cfg.seed);
  if (cfg.eta.mode == LearningRate::Mode::Lemma2Auto) {
    r.eta = learning_rate_lemma2(r.constants, params, shards.size(), cfg.local_steps, cfg.rounds);
    return r;
  }
  std::size_t n = 0, sum_b = 0;
  for (const auto& s : shards) {
    n += s.samples.size();
    sum_b += cfg.batch_for(s);
  }
  if (cfg.local_steps != 1)
    throw UnsupportedError("federation.eta = lemma3 requires federation.local_steps = 1");
  const auto s = excess_risk_schedule_lemma3(r.constants, params, n, sum_b, cfg.rounds, 1);
  r.eta = s.eta;
  r.params.gamma = s.gamma;
  r.T_condition_ok = s.T_condition_ok;
  return r;
}

/// Federated training of the smoothed relaxed-CVaR objective.
inline FederationResult run_fedsrcvar(const std::vector<Shard>& shards, const FederationConfig& cfg,
                                      const RcvarParams& params, const BoundedLossSpec& spec) {
  params.validate();
  spec.validate();
  detail::check_federation(shards, cfg);
  for (const auto& s : shards) validate_samples(s.samples, spec);
  const auto sched = resolve_schedule(shards, cfg, params, spec);
  const auto init = initial_state(shards.front().samples.dim + 1, cfg.seed);
  auto res = detail::run_federation(shards, cfg, sched.eta, SmoothedRcvarObjective{sched.params},
                                    spec, init);
  res.trace.gamma = sched.params.gamma;
  return res;
}

/// Federated averaging of the plain scaled loss. Automatic step sizes are
/// resolved as for the RCVaR objective at epsilon = 1.
inline FederationResult run_fedavg(const std::vector<Shard>& shards, const FederationConfig& cfg,
                                   const BoundedLossSpec& spec) {
  spec.validate();
  detail::check_federation(shards, cfg);
  for (const auto& s : shards) validate_samples(s.samples, spec);
  RcvarParams erm;
  erm.epsilon = 1.0;
  const auto sched = resolve_schedule(shards, cfg, erm, spec);
  const auto init = initial_state(shards.front().samples.dim + 1, cfg.seed);
  return detail::run_federation(shards, cfg, sched.eta, PlainLossObjective{}, spec, init);
}

struct CentralizedResult {
  std::vector<ModelState> iterates;  // initial state followed by one entry per step
  ModelState final_state;
};

/// Projected full-batch gradient descent on the pooled smoothed objective;
/// the update of a single client holding all data with tau = 1.
inline CentralizedResult run_centralized(const Samples& data, std::size_t steps, double eta,
                                         const RcvarParams& params, const BoundedLossSpec& spec,
                                         const ModelState& init, bool project_theta = true) {
  params.validate();
  spec.validate();
  if (data.empty()) throw DataError("centralized run on an empty dataset");
  if (init.theta.size() != data.dim + 1) throw DataError("initial state has wrong dimension");
  validate_samples(data, spec);
  const Shard pooled{0, data};
  FederationConfig cfg;
  cfg.local_steps = 1;
  cfg.project_theta_locally = project_theta;
  const SmoothedRcvarObjective obj{params};
  CentralizedResult res;
  res.iterates.push_back(init);
  ModelState state = init;
  Rng unused(0);
  for (std::size_t t = 1; t <= steps; ++t) {
    state = detail::local_update(pooled, std::move(state), cfg, eta, obj, spec, unused);
    state.c = std::clamp(state.c, 0.0, kLossBound);
    detail::check_finite(state, t);
    res.iterates.push_back(state);
  }
  res.final_state = state;
  return res;
}

}  // namespace fedrcvar
