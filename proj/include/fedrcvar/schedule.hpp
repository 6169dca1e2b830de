#pragma once

// Step-size schedules from the convergence and excess-risk analyses, plus
// an estimator for the variance and heterogeneity constants they need.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "fedrcvar/dataset.hpp"
#include "fedrcvar/error.hpp"
#include "fedrcvar/model.hpp"
#include "fedrcvar/rcvar.hpp"
#include "fedrcvar/rng.hpp"

namespace fedrcvar {

/// Step size minimizing the local-update convergence bound:
///
///   min{ sqrt(K (M^2+1)) / (sigma sqrt(tau T)),
///        ((M^2+1) / (sigma^2 tau^2 beta~ T))^(1/3),
///        1 / (4 beta~),
///        (M^2+1)^(1/3) / (tau (mu^2 beta~ T)^(1/3)) }
///
/// with beta~ = smoothness_constant(). Terms whose sigma or mu vanishes drop
/// out of the minimum.
inline double learning_rate_lemma2(const RegularityConstants& k, const RcvarParams& p,
                                   std::size_t clients, std::size_t tau, std::size_t rounds) {
  if (clients == 0 || tau == 0 || rounds == 0)
    throw ParameterError("K, tau and T must be positive");
  if (k.variance_sigma < 0.0 || k.heterogeneity_mu < 0.0 || !(k.domain_diameter_M > 0.0))
    throw ParameterError("invalid regularity constants");
  const double beta = smoothness_constant(p, k.lipschitz_G, k.smoothness_beta);
  const double m2 = k.domain_diameter_M * k.domain_diameter_M + 1.0;
  const double K = static_cast<double>(clients);
  const double t = static_cast<double>(tau);
  const double T = static_cast<double>(rounds);
  const double sigma = k.variance_sigma, mu = k.heterogeneity_mu;
  constexpr double inf = std::numeric_limits<double>::infinity();

  const double noise = sigma > 0.0 ? std::sqrt(K * m2) / (sigma * std::sqrt(t * T)) : inf;
  const double drift = sigma > 0.0 ? std::cbrt(m2 / (sigma * sigma * t * t * beta * T)) : inf;
  const double smooth = 1.0 / (4.0 * beta);
  const double hetero = mu > 0.0 ? std::cbrt(m2) / (t * std::cbrt(mu * mu * beta * T)) : inf;
  return std::min({noise, drift, smooth, hetero});
}

struct ExcessRiskSchedule {
  double eta;
  double gamma;
  bool T_condition_ok;
};

/// Step size, smoothing level and round-count condition of the excess-risk
/// bound. Only valid for a single local step per round.
inline ExcessRiskSchedule excess_risk_schedule_lemma3(const RegularityConstants& k,
                                                      const RcvarParams& p, std::size_t n,
                                                      std::size_t sum_batch, std::size_t rounds,
                                                      std::size_t tau = 1) {
  if (tau != 1) throw UnsupportedError("the excess-risk schedule requires tau = 1");
  if (n == 0 || sum_batch == 0 || rounds == 0)
    throw ParameterError("n, sum of batch sizes and T must be positive");
  const double G = lipschitz_constant(p, k.lipschitz_G);
  const double mb = k.domain_diameter_M * k.domain_diameter_M + p.loss_bound * p.loss_bound;
  const double nn = static_cast<double>(n);
  const double sb = static_cast<double>(sum_batch);
  const double T = static_cast<double>(rounds);
  const double horizon = T * (nn + 2.0 * T);

  ExcessRiskSchedule s;
  s.eta = std::sqrt(nn * sb) * std::sqrt(mb) / (G * std::sqrt(horizon));
  const double a = 1.0 - p.epsilon + p.epsilon * p.rho;
  s.gamma = 2.0 * G * G / (a * a) * s.eta;
  const double ratio = k.smoothness_beta * (1.0 + p.epsilon * p.rho) / (p.rho * G);
  s.T_condition_ok = nn * sb * mb * ratio * ratio <= horizon;
  return s;
}

namespace detail {

/// Joint (theta, c) gradient of the smoothed objective for every sample of
/// a shard, flattened row-major with stride dim + 2.
inline std::vector<double> per_sample_joint_gradients(const Samples& s, const ModelState& st,
                                                      const RcvarParams& p,
                                                      const BoundedLossSpec& spec) {
  const std::size_t d = s.dim, stride = d + 2;
  const double inv = 1.0 / spec.raw_bound();
  std::vector<double> g(s.size() * stride);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto x = s.row(i);
    const auto pl = point_loss(st.theta, x, s.labels[i], spec, inv);
    const auto t = smooth_terms(pl.loss, st.c, p);
    const double coef = t.theta_scale * pl.dpred;
    double* row = g.data() + i * stride;
    for (std::size_t j = 0; j < d; ++j) row[j] = coef * x[j];
    row[d] = coef;
    row[d + 1] = t.grad_c;
  }
  return g;
}

}  // namespace detail

/// Estimates sigma (mini-batch gradient noise, exact for sampling without
/// replacement) and mu (largest local/global gradient gap) by taking the
/// maximum over `probes` states: the near-zero initial point followed by
/// seeded draws from the parameter domain. G and beta come from the loss.
inline RegularityConstants estimate_regularity(const std::vector<Shard>& shards,
                                               const std::map<std::size_t, std::size_t>& batch,
                                               const RcvarParams& p, const BoundedLossSpec& spec,
                                               std::size_t probes = 8, std::uint64_t seed = 0) {
  if (shards.empty()) throw ConfigError("federation", "no clients");
  const std::size_t d = shards.front().samples.dim, stride = d + 2;
  RegularityConstants k;
  k.lipschitz_G = spec.lipschitz();
  k.smoothness_beta = spec.smoothness();
  k.domain_diameter_M = 2.0 * spec.domain_radius_M;

  std::size_t n = 0;
  for (const auto& s : shards) n += s.samples.size();
  Rng rng(stream_seed(seed, 0xe57ULL));
  double sigma2 = 0.0, mu = 0.0;
  for (std::size_t probe = 0; probe < std::max<std::size_t>(probes, 1); ++probe) {
    ModelState st{std::vector<double>(d + 1, 0.0), 1.0};
    if (probe > 0) {
      double norm = 0.0;
      for (double& v : st.theta) {
        v = uniform(rng, -1.0, 1.0);
        norm += v * v;
      }
      const double r = spec.domain_radius_M * uniform01(rng) / std::max(std::sqrt(norm), 1e-300);
      for (double& v : st.theta) v *= r;
      st.c = uniform01(rng);
    }
    std::vector<std::vector<double>> local(shards.size(), std::vector<double>(stride, 0.0));
    std::vector<double> global(stride, 0.0);
    for (std::size_t k_i = 0; k_i < shards.size(); ++k_i) {
      const auto& s = shards[k_i].samples;
      const auto g = detail::per_sample_joint_gradients(s, st, p, spec);
      const double nk = static_cast<double>(s.size());
      for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < stride; ++j) local[k_i][j] += g[i * stride + j];
      for (double& v : local[k_i]) v /= nk;
      double spread = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < stride; ++j) {
          const double diff = g[i * stride + j] - local[k_i][j];
          spread += diff * diff;
        }
      spread /= nk;
      const auto it = batch.find(shards[k_i].client_id);
      const std::size_t b = it == batch.end() ? s.size() : it->second;
      if (b < s.size() && s.size() > 1) {
        const double bb = static_cast<double>(b);
        sigma2 = std::max(sigma2, spread / bb * (nk - bb) / (nk - 1.0));
      }
      for (std::size_t j = 0; j < stride; ++j)
        global[j] += nk / static_cast<double>(n) * local[k_i][j];
    }
    for (const auto& l : local) {
      double gap = 0.0;
      for (std::size_t j = 0; j < stride; ++j) gap += (l[j] - global[j]) * (l[j] - global[j]);
      mu = std::max(mu, std::sqrt(gap));
    }
  }
  k.variance_sigma = std::sqrt(sigma2);
  k.heterogeneity_mu = mu;
  return k;
}

}  // namespace fedrcvar
