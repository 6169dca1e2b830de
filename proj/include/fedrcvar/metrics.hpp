#pragma once

// Empirical quantiles, CVaR by two independent routes, the box-constrained
// reweighting adversary, group metrics and a finite-difference checker.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedrcvar/dataset.hpp"
#include "fedrcvar/error.hpp"
#include "fedrcvar/model.hpp"
#include "fedrcvar/rcvar.hpp"

namespace fedrcvar {

namespace detail {

inline void require_nonempty(std::span<const double> v, const char* what) {
  if (v.empty()) throw DataError(std::string(what) + ": empty input");
}

inline void require_open_unit(double v, const char* what) {
  if (!(v > 0.0 && v < 1.0)) throw ParameterError(std::string(what) + " must lie in (0, 1)");
}

/// Indices ordered by loss descending, ties by ascending index.
inline std::vector<std::size_t> descending_order(std::span<const double> losses) {
  std::vector<std::size_t> idx(losses.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  return idx;
}

}  // namespace detail

/// Smallest sample value q with #{l_i <= q} / n >= level.
inline double empirical_quantile(std::span<const double> losses, double level) {
  detail::require_nonempty(losses, "empirical_quantile");
  if (!(level > 0.0 && level <= 1.0)) throw ParameterError("quantile level must lie in (0, 1]");
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    // ties: the count at sorted[j] includes every later duplicate
    if (static_cast<double>(j + 1) / n >= level) return sorted[j];
  }
  return sorted.back();
}

/// Mean of the worst rho-fraction of the sample. When rho * n is not an
/// integer the boundary atom contributes its fractional mass.
inline double cvar_tail_mean(std::span<const double> losses, double rho) {
  detail::require_nonempty(losses, "cvar_tail_mean");
  detail::require_open_unit(rho, "rho");
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double k = rho * static_cast<double>(sorted.size());
  const auto whole = static_cast<std::size_t>(std::floor(k));
  double sum = 0.0;
  for (std::size_t i = 0; i < whole; ++i) sum += sorted[i];
  const double frac = k - static_cast<double>(whole);
  if (frac > 0.0 && whole < sorted.size()) sum += frac * sorted[whole];
  return sum / k;
}

struct VariationalCvar {
  double value;
  double argmin_c;
};

/// Minimizes g(c) = c + mean((l - c)_+) / rho exactly. g is piecewise linear
/// with breakpoints at the sample values, so it suffices to evaluate those
/// and the ends of [0, B]. Reports the smallest minimizer.
inline VariationalCvar cvar_variational(std::span<const double> losses, double rho,
                                        double bound = kLossBound) {
  detail::require_nonempty(losses, "cvar_variational");
  detail::require_open_unit(rho, "rho");
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  // suffix[i] = sum of sorted[i..n)
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + sorted[i];
  const double scale = 1.0 / (rho * static_cast<double>(n));

  std::vector<double> candidates;
  candidates.reserve(n + 2);
  if (sorted.front() > 0.0) candidates.push_back(0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (i == 0 || sorted[i] != sorted[i - 1]) candidates.push_back(sorted[i]);
  if (sorted.back() < bound) candidates.push_back(bound);

  auto g = [&](double c) {
    const auto first_above =
        static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), c) - sorted.begin());
    const double count = static_cast<double>(n - first_above);
    return c + (suffix[first_above] - count * c) * scale;
  };

  VariationalCvar best{g(candidates.front()), candidates.front()};
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double v = g(candidates[i]);
    // flat segments: keep the smaller c unless strictly better beyond rounding
    if (v < best.value - 4.0 * DBL_EPSILON * std::max(1.0, std::abs(best.value)))
      best = {v, candidates[i]};
  }
  return best;
}

struct AdversaryResult {
  double value;
  std::vector<double> lambda;
};

/// Exact maximizer of sum(lambda_i * l_i) over the box
/// lambda_i in [eps * p_i / rho, p_i / rho] with sum(lambda) = 1. Every
/// weight starts at its lower bound; the remaining mass fills the highest
/// losses first.
inline AdversaryResult bpf_greedy_adversary(std::span<const double> losses,
                                            std::span<const double> weights, double rho,
                                            double epsilon) {
  detail::require_nonempty(losses, "bpf_greedy_adversary");
  detail::require_open_unit(rho, "rho");
  if (weights.size() != losses.size()) throw DataError("weights and losses differ in length");
  if (!(epsilon >= 0.0)) throw ParameterError("epsilon must be non-negative");
  if (epsilon > rho) throw ParameterError("adversary box is infeasible for epsilon > rho");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DataError("weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DataError("weights must sum to 1");

  AdversaryResult out{0.0, std::vector<double>(losses.size())};
  for (std::size_t i = 0; i < losses.size(); ++i) out.lambda[i] = epsilon * weights[i] / rho;
  double remaining = 1.0 - epsilon / rho;
  for (std::size_t i : detail::descending_order(losses)) {
    if (remaining <= 0.0) break;
    const double add = std::min((1.0 - epsilon) * weights[i] / rho, remaining);
    out.lambda[i] += add;
    remaining -= add;
  }
  for (std::size_t i = 0; i < losses.size(); ++i) out.value += out.lambda[i] * losses[i];
  return out;
}

struct MetricsRecord {
  double utility_risk = 0.0;
  double worst_group_risk = 0.0;
  double best_group_risk = 0.0;
  double disparity = 0.0;
  double quantile_c = 0.0;
  double rho = 0.0;
  double epsilon = 0.0;
  std::string split;
};

/// Group metrics of a loss sample. The worst group is the upper rho tail
/// (fractional boundary atom included), the best group the remainder.
inline MetricsRecord metrics_from_losses(std::span<const double> losses, double rho) {
  detail::require_nonempty(losses, "metrics");
  detail::require_open_unit(rho, "rho");
  // Work relative to the minimum so that constant samples come out exact.
  const double base = *std::min_element(losses.begin(), losses.end());
  std::vector<double> shifted(losses.begin(), losses.end());
  double sum = 0.0;
  for (double& l : shifted) {
    l -= base;
    sum += l;
  }
  const double mean = sum / static_cast<double>(shifted.size());
  const double tail = cvar_tail_mean(shifted, rho);
  const double rest = std::max(0.0, (mean - rho * tail) / (1.0 - rho));

  MetricsRecord r;
  r.rho = rho;
  r.utility_risk = base + mean;
  r.worst_group_risk = std::max(base + tail, r.utility_risk);  // rounding
  r.best_group_risk = std::min(base + rest, r.utility_risk);
  r.disparity = r.worst_group_risk - r.best_group_risk;
  r.quantile_c = empirical_quantile(losses, 1.0 - rho);
  return r;
}

inline std::vector<double> per_sample_losses(const ModelState& state, const Samples& data,
                                             const BoundedLossSpec& spec) {
  spec.validate();
  if (state.theta.size() != data.dim + 1)
    throw DataError("model dimension " + std::to_string(state.theta.size() - 1) +
                    " does not match dataset dimension " + std::to_string(data.dim));
  validate_samples(data, spec);
  std::vector<double> losses(data.size());
  const double inv = 1.0 / spec.raw_bound();
  for (std::size_t i = 0; i < data.size(); ++i)
    losses[i] = detail::point_loss(state.theta, data.row(i), data.labels[i], spec, inv).loss;
  return losses;
}

inline MetricsRecord evaluate(const ModelState& state, const Samples& data, double rho,
                              const BoundedLossSpec& spec, std::string split = "test") {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  auto r = metrics_from_losses(per_sample_losses(state, data, spec), rho);
  r.split = std::move(split);
  return r;
}

/// Worst per-coordinate relative deviation between central differences and
/// an analytic gradient. The denominator is floored at 1e-6 so coordinates
/// whose derivative vanishes are compared absolutely.
inline double finite_difference_check(const std::function<double(std::span<const double>)>& f,
                                      const std::function<std::vector<double>(std::span<const double>)>& grad,
                                      std::span<const double> point, double step) {
  if (!(step > 0.0)) throw ParameterError("finite-difference step must be positive");
  const auto analytic = grad(point);
  if (analytic.size() != point.size()) throw DataError("gradient has wrong dimension");
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + step;
    const double up = f(x);
    x[j] = orig - step;
    const double down = f(x);
    x[j] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(fd), std::abs(analytic[j]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[j]) / denom);
  }
  return worst;
}

}  // namespace fedrcvar
