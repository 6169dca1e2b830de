#pragma once

// End-to-end acceptance checks with fixed seeds, shared by `fedrcvar verify`
// and the acceptance test binary.
//
// Each check reports the number of samples it examined and its worst margin:
// the distance from the observed value to the tolerance, positive when the
// check holds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedrcvar/artifact.hpp"
#include "fedrcvar/calibration.hpp"
#include "fedrcvar/config.hpp"
#include "fedrcvar/data.hpp"
#include "fedrcvar/federation.hpp"
#include "fedrcvar/metrics.hpp"
#include "fedrcvar/model.hpp"
#include "fedrcvar/rcvar.hpp"
#include "fedrcvar/rng.hpp"
#include "fedrcvar/runner.hpp"

namespace fedrcvar::acceptance {

struct Hooks {
  // Scales gamma inside the smoothed objective while the sandwich bound
  // keeps the nominal gamma. 1 leaves the objective intact.
  double smoothing_corruption = 1.0;
  std::size_t threads = 4;
  fs::path scratch;  // empty: a directory under the system temp path
};

struct Report {
  std::string id;
  std::string name;
  std::size_t samples = 0;
  double worst_margin = 0.0;
  bool pass = false;
  double seconds = 0.0;
  double time_limit_s = 0.0;
  std::string detail;
};

struct Outcome {
  std::size_t samples = 0;
  double worst_margin = 0.0;
  bool holds = false;
  std::string detail;
};

struct Property {
  std::string id;
  std::string name;
  double time_limit_s;  // 0: no limit
  std::function<Outcome(const Hooks&)> run;
};

namespace detail {

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

inline std::vector<double> ball_point(Rng& rng, std::size_t dim, double radius) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = uniform(rng, -1.0, 1.0);
    sq += x * x;
  }
  const double scale = sq > 0.0 ? radius * uniform01(rng) / std::sqrt(sq) : 0.0;
  for (double& x : v) x *= scale;
  return v;
}

inline double dist(std::span<const double> a, std::span<const double> b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

inline constexpr SmoothKind kKinds[] = {SmoothKind::SoftRelu, SmoothKind::Zang,
                                        SmoothKind::PiecewiseQuadratic};

// Average ranks, ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline fs::path scratch_dir(const Hooks& h, const std::string& name) {
  const auto base = h.scratch.empty() ? fs::temp_directory_path() / "fedrcvar-acceptance" : h.scratch;
  const auto dir = base / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline bool same_bytes(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && fedrcvar::detail::read_file(a) == fedrcvar::detail::read_file(b);
}

// Every regular file under `a` has a byte-identical twin under `b` and
// the two trees list the same files.
inline bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::vector<fs::path> la, lb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) la.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) lb.push_back(fs::relative(e.path(), b));
  std::sort(la.begin(), la.end());
  std::sort(lb.begin(), lb.end());
  if (la != lb) return false;
  for (const auto& rel : la) {
    ++files;
    if (!same_bytes(a / rel, b / rel)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

inline Outcome sandwich(const Hooks& h) {
  Rng rng(1001);
  Outcome o;
  double worst = INFINITY;
  std::size_t violations = 0;
  const double gammas[] = {0.01, 0.05, 0.5};
  for (SmoothKind kind : kKinds) {
    for (int i = 0; i < 100000; ++i) {
      RcvarParams p;
      p.epsilon = uniform01(rng);
      p.rho = 0.01 + 0.98 * uniform01(rng);
      p.gamma = gammas[uniform_index(rng, 3)];
      p.smooth = kind;
      const double loss = uniform01(rng);
      // half of the thresholds land within a few gamma of the loss, where
      // the surrogate gap is largest
      const double c = i % 2 ? uniform01(rng)
                             : std::clamp(loss + uniform(rng, -3.0, 3.0) * p.gamma, 0.0, 1.0);
      auto q = p;
      q.gamma = p.gamma * h.smoothing_corruption;
      const double gap = f_smooth(loss, c, q) - f_aux(loss, c, p);
      const double upper = (1.0 - p.epsilon) * p.gamma / p.rho;
      const double slack = std::min(gap + 1e-12, upper + 1e-12 - gap);
      violations += slack < 0.0;
      worst = std::min(worst, slack);
      ++o.samples;
    }
  }
  o.worst_margin = worst;
  o.holds = violations == 0;
  o.detail = std::to_string(violations) + " violations of 0 <= gap <= (1-eps) gamma / rho";
  return o;
}

inline Outcome lipschitz(const Hooks&) {
  Rng rng(1002);
  Outcome o;
  const BoundedLossSpec spec;
  const double eps_grid[] = {0.0, 0.5, 1.0};
  const double rho_grid[] = {0.1, 0.5, 0.9};
  double worst = INFINITY, largest_ratio = 0.0;
  int cfg_index = 0;
  for (double eps : eps_grid) {
    for (double rho : rho_grid) {
      RcvarParams p;
      p.epsilon = eps;
      p.rho = rho;
      p.gamma = 0.05;
      p.smooth = kKinds[cfg_index++ % 3];
      const double G = lipschitz_constant(p, spec.lipschitz());
      for (int i = 0; i < 10000; ++i) {
        const auto x = ball_point(rng, 3, spec.feature_radius_R);
        const double y = uniform01(rng) < 0.5 ? 0.0 : 1.0;
        auto value = [&](std::span<const double> m) {
          const auto lg = loss_and_grad(m.first(4), spec, x, y);
          return f_smooth(lg.loss, m[4], p);
        };
        std::vector<double> a = ball_point(rng, 4, spec.domain_radius_M);
        a.push_back(uniform01(rng));
        std::vector<double> b;
        if (i % 2) {
          b = ball_point(rng, 4, spec.domain_radius_M);
          b.push_back(uniform01(rng));
        } else {  // nearby pair: the quotient approaches the local slope
          b = a;
          for (double& v : b) v += uniform(rng, -1e-4, 1e-4);
          project_onto_ball(std::span<double>(b).first(4), spec.domain_radius_M);
          b[4] = std::clamp(b[4], 0.0, 1.0);
        }
        const double d = dist(a, b);
        if (d > 0.0) {
          const double q = std::abs(value(a) - value(b)) / d;
          largest_ratio = std::max(largest_ratio, q / G);
          worst = std::min(worst, G + 1e-9 - q);
        }
        const auto lg = loss_and_grad(std::span<const double>(a).first(4), spec, x, y);
        const double gn = f_smooth_grad(lg.loss, lg.grad, a[4], p).norm();
        largest_ratio = std::max(largest_ratio, gn / G);
        worst = std::min(worst, G - gn);
        ++o.samples;
      }
    }
  }
  o.worst_margin = worst;
  o.holds = worst >= 0.0;
  o.detail = "largest quotient / G = " + fmt(largest_ratio);
  return o;
}

inline Outcome gradient_check(const Hooks&) {
  Rng rng(1003);
  Outcome o;
  const BoundedLossSpec spec;
  const double gammas[] = {0.01, 0.05, 0.5};
  double worst_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    RcvarParams p;
    p.epsilon = uniform01(rng);
    p.rho = 0.01 + 0.98 * uniform01(rng);
    p.gamma = gammas[uniform_index(rng, 3)];
    p.smooth = kKinds[i % 3];
    const auto x = ball_point(rng, 4, spec.feature_radius_R);
    const double y = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    std::vector<double> m = ball_point(rng, 5, spec.domain_radius_M);
    m.push_back(0.05 + 0.9 * uniform01(rng));
    auto split = [](std::span<const double> v) { return v.first(v.size() - 1); };
    const double err = finite_difference_check(
        [&](std::span<const double> v) {
          return f_smooth(loss_and_grad(split(v), spec, x, y).loss, v.back(), p);
        },
        [&](std::span<const double> v) {
          const auto lg = loss_and_grad(split(v), spec, x, y);
          auto g = f_smooth_grad(lg.loss, lg.grad, v.back(), p);
          g.theta.push_back(g.c);
          return g.theta;
        },
        m, 1e-5);
    worst_err = std::max(worst_err, err);
    ++o.samples;
  }
  o.worst_margin = 1e-4 - worst_err;
  o.holds = o.worst_margin >= 0.0;
  o.detail = "max relative error " + fmt(worst_err);
  return o;
}

inline std::vector<double> random_losses(Rng& rng, std::size_t n) {
  std::vector<double> l(n);
  for (double& v : l) {
    v = uniform01(rng);
    if (uniform01(rng) < 0.2) v = std::round(v * 4.0) / 4.0;
  }
  return l;
}

inline Outcome dual_route(const Hooks&) {
  Rng rng(1004);
  Outcome o;
  double worst_diff = 0.0;
  std::size_t quantile_mismatch = 0, quantile_checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    const auto l = random_losses(rng, n);
    const double rho = 0.001 + 0.998 * uniform01(rng);
    const auto v = cvar_variational(l, rho);
    worst_diff = std::max(worst_diff, std::abs(v.value - cvar_tail_mean(l, rho)));
    const double rn = rho * static_cast<double>(n);
    if (rn != std::floor(rn)) {
      ++quantile_checked;
      quantile_mismatch += v.argmin_c != empirical_quantile(l, 1.0 - rho);
    }
    ++o.samples;
  }
  o.worst_margin = 1e-12 - worst_diff;
  o.holds = o.worst_margin >= 0.0 && quantile_mismatch == 0;
  o.detail = "max |tail - variational| " + fmt(worst_diff) + ", argmin mismatches " +
             std::to_string(quantile_mismatch) + "/" + std::to_string(quantile_checked);
  return o;
}

struct BpfInstance {
  std::vector<double> losses;
  std::vector<double> p;
  double rho;
  double eps;
};

inline std::vector<BpfInstance> bpf_instances() {
  Rng rng(1005);
  std::vector<BpfInstance> out;
  while (out.size() < 1000) {
    const std::size_t n = 1 + uniform_index(rng, 100);
    BpfInstance b{random_losses(rng, n), std::vector<double>(n, 1.0 / static_cast<double>(n)),
                  0.05 + 0.9 * uniform01(rng), 0.0};
    b.eps = b.rho * uniform01(rng) * 0.999;
    if (std::abs(std::accumulate(b.p.begin(), b.p.end(), 0.0) - 1.0) > 1e-12) continue;
    out.push_back(std::move(b));
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// The decomposition as stated: (eps/rho) mean + (1 - eps) CVaR at the
// adjusted level, plus the exact match at eps = 0.
inline Outcome bpf_identity(const Hooks&) {
  Outcome o;
  double worst_dev = 0.0, worst_zero = 0.0;
  std::size_t failures = 0;
  for (const auto& b : bpf_instances()) {
    const double rho_adj = (b.rho - b.eps) / (1.0 - b.eps);
    const double stated =
        b.eps / b.rho * mean_of(b.losses) + (1.0 - b.eps) * cvar_tail_mean(b.losses, rho_adj);
    const double dev = std::abs(bpf_greedy_adversary(b.losses, b.p, b.rho, b.eps).value - stated);
    worst_dev = std::max(worst_dev, dev);
    failures += dev > 1e-9;
    const double zero = std::abs(bpf_greedy_adversary(b.losses, b.p, b.rho, 0.0).value -
                                 cvar_tail_mean(b.losses, b.rho));
    worst_zero = std::max(worst_zero, zero);
    failures += zero > 1e-12;
    ++o.samples;
  }
  o.worst_margin = std::min(1e-9 - worst_dev, 1e-12 - worst_zero);
  o.holds = failures == 0;
  o.detail = "max deviation " + fmt(worst_dev) + " (eps > 0), " + fmt(worst_zero) +
             " (eps = 0); " + std::to_string(failures) + " instances outside tolerance";
  return o;
}

// Same instances with the tail weight (rho - eps) / rho, which makes the
// two weights sum to one.
inline Outcome bpf_identity_adjusted(const Hooks&) {
  Outcome o;
  double worst_dev = 0.0;
  for (const auto& b : bpf_instances()) {
    const double rho_adj = (b.rho - b.eps) / (1.0 - b.eps);
    const double expected = b.eps / b.rho * mean_of(b.losses) +
                            (b.rho - b.eps) / b.rho * cvar_tail_mean(b.losses, rho_adj);
    worst_dev = std::max(
        worst_dev, std::abs(bpf_greedy_adversary(b.losses, b.p, b.rho, b.eps).value - expected));
    ++o.samples;
  }
  o.worst_margin = 1e-9 - worst_dev;
  o.holds = o.worst_margin >= 0.0;
  o.detail = "max deviation " + fmt(worst_dev);
  return o;
}

inline std::vector<Shard> small_shards(std::size_t n, std::size_t clients, std::uint64_t seed) {
  const auto data = gen_planted_subgroup(n, 5, 0.2, 0.3, seed);
  return partition(data, {PartitionStrategy::Even, clients, 1.0, seed});
}

inline Outcome erm_reduction(const Hooks& h) {
  Outcome o;
  const auto shards = small_shards(2000, 4, 61);
  FederationConfig cfg;
  cfg.rounds = 100;
  cfg.local_steps = 3;
  cfg.eta = LearningRate::fixed(0.5);
  cfg.seed = 61;
  cfg.track_objective = false;
  cfg.workers = h.threads;
  for (const auto& s : shards) cfg.batch_sizes[s.client_id] = 64;
  RcvarParams p;
  p.epsilon = 1.0;
  p.rho = 0.2;
  const BoundedLossSpec spec;
  const auto a = run_fedsrcvar(shards, cfg, p, spec);
  const auto b = run_fedavg(shards, cfg, spec);
  std::size_t differing = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const auto& x = a.trace.broadcasts[t].theta;
    const auto& y = b.trace.broadcasts[t].theta;
    differing += x != y;
    worst = std::max(worst, dist(x, y));
    ++o.samples;
  }
  differing += a.last.theta != b.last.theta;
  o.worst_margin = -worst;
  o.holds = differing == 0;
  o.detail = std::to_string(differing) + " of " + std::to_string(cfg.rounds + 1) +
             " theta iterates differ";
  return o;
}

inline Outcome federated_centralized(const Hooks& h) {
  Outcome o;
  const auto data = gen_planted_subgroup(2000, 5, 0.2, 0.3, 71);
  const auto shards = partition(data, {PartitionStrategy::Even, 2, 1.0, 71});
  FederationConfig cfg;
  cfg.rounds = 200;
  cfg.local_steps = 1;
  cfg.eta = LearningRate::fixed(0.1);
  cfg.seed = 71;
  cfg.track_objective = false;
  cfg.workers = h.threads;
  RcvarParams p;
  p.epsilon = 0.1;
  p.rho = 0.2;
  p.gamma = 0.05;
  const BoundedLossSpec spec;
  const auto fed = run_fedsrcvar(shards, cfg, p, spec);
  const auto init = initial_state(data.dim() + 1, cfg.seed);
  const auto cen = run_centralized(data.samples, cfg.rounds, 0.1, p, spec, init);
  auto rel = [](const ModelState& a, const ModelState& b) {
    std::vector<double> x = a.theta, y = b.theta;
    x.push_back(a.c);
    y.push_back(b.c);
    double ny = 0.0;
    for (double v : y) ny += v * v;
    return dist(x, y) / std::max(std::sqrt(ny), 1e-300);
  };
  double worst = 0.0;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    worst = std::max(worst, rel(fed.trace.broadcasts[t], cen.iterates[t]));
    ++o.samples;
  }
  worst = std::max(worst, rel(fed.last, cen.iterates[cfg.rounds]));
  ++o.samples;
  o.worst_margin = 1e-6 - worst;
  o.holds = o.worst_margin >= 0.0;
  o.detail = "max relative iterate deviation " + fmt(worst);
  return o;
}

struct PlantedRuns {
  std::vector<MetricsRecord> rcvar, fedavg;
  double uniform_risk = 0.0;
};

inline PlantedRuns planted_runs(RunConfig base, bool with_fedavg, const Hooks& h) {
  const auto data = build_data(base);
  PlantedRuns out;
  out.uniform_risk = uniform_classifier_risk(base.model, data.test.samples);
  for (std::uint64_t seed : calibration::kSeeds) {
    apply_seed(base, seed);
    base.federation.algorithm = Algorithm::FedSRCVaR;
    out.rcvar.push_back(train_once(base, data, h.threads).rows.back().metrics);
    if (with_fedavg) {
      auto avg = base;
      avg.federation.algorithm = Algorithm::FedAvg;
      out.fedavg.push_back(train_once(avg, data, h.threads).rows.back().metrics);
    }
  }
  return out;
}

inline Outcome worst_group_improvement(const Hooks& h) {
  Outcome o;
  const auto runs = planted_runs(calibration::planted_instance(), true, h);
  double rc = 0.0, avg = 0.0, rc_util = 0.0, avg_util = 0.0;
  for (std::size_t i = 0; i < runs.rcvar.size(); ++i) {
    rc += runs.rcvar[i].worst_group_risk / static_cast<double>(runs.rcvar.size());
    avg += runs.fedavg[i].worst_group_risk / static_cast<double>(runs.fedavg.size());
    rc_util += runs.rcvar[i].utility_risk / static_cast<double>(runs.rcvar.size());
    avg_util += runs.fedavg[i].utility_risk / static_cast<double>(runs.fedavg.size());
  }
  const double margin = avg - rc;
  o.samples = 2 * runs.rcvar.size();
  o.worst_margin = margin - calibration::kWorstGroupMargin;
  o.holds = margin > 0.0 && o.worst_margin >= 0.0;
  o.detail = "worst-group risk " + fmt(rc) + " vs FedAvg " + fmt(avg) + " (margin " +
             fmt(margin) + ", required " + fmt(calibration::kWorstGroupMargin) +
             "); utility " + fmt(rc_util) + " vs " + fmt(avg_util);
  return o;
}

inline Outcome frontier_shape(const Hooks& h) {
  Outcome o;
  const auto base = calibration::planted_instance();
  const auto data = build_data(base);
  SweepGrid grid{calibration::frontier_epsilons(),
                 {calibration::kFrontierRho, calibration::kLargeRho},
                 {std::begin(calibration::kSeeds), std::end(calibration::kSeeds)}};
  const auto rows = frontier_rows(run_sweep(base, grid, data, h.threads));
  std::map<double, std::map<double, std::pair<double, double>>> agg;  // rho -> eps -> (util, worst)
  std::size_t failed = 0;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      ++failed;
      continue;
    }
    auto& a = agg[r.metrics.rho][r.metrics.epsilon];
    a.first += r.metrics.utility_risk / static_cast<double>(grid.seeds.size());
    a.second += r.metrics.worst_group_risk / static_cast<double>(grid.seeds.size());
  }
  o.samples = rows.size();
  std::vector<double> eps, util, worst;
  for (const auto& [e, v] : agg[calibration::kFrontierRho]) {
    eps.push_back(e);
    util.push_back(v.first);
    worst.push_back(v.second);
  }
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [e, v] : agg[calibration::kLargeRho]) {
    lo = std::min(lo, v.second);
    hi = std::max(hi, v.second);
  }
  const double s_util = spearman(eps, util), s_worst = spearman(eps, worst);
  const double spread = hi - lo;
  o.worst_margin = std::min({-s_util, s_worst, calibration::kLargeRhoSpread - spread});
  o.holds = failed == 0 && s_util <= 0.0 && s_worst >= 0.0 &&
            spread <= calibration::kLargeRhoSpread;
  o.detail = "rho=0.2: spearman(eps, utility) " + fmt(s_util, 4) + ", spearman(eps, worst) " +
             fmt(s_worst, 4) + "; rho=0.9 worst-group spread " + fmt(spread) +
             (failed ? "; " + std::to_string(failed) + " cells failed" : std::string());
  return o;
}

inline Outcome critical_rho(const Hooks& h) {
  Outcome o;
  const auto runs = planted_runs(calibration::critical_rho_instance(), false, h);
  double worst_rel = 0.0;
  std::string per_seed;
  for (const auto& m : runs.rcvar) {
    const double rel = std::abs(m.worst_group_risk - runs.uniform_risk) / runs.uniform_risk;
    worst_rel = std::max(worst_rel, rel);
    per_seed += (per_seed.empty() ? "" : ", ") + fmt(m.worst_group_risk);
    ++o.samples;
  }
  o.worst_margin = calibration::kCriticalRhoRelativeTolerance - worst_rel;
  o.holds = o.worst_margin >= 0.0;
  o.detail = "worst-group risk per seed " + per_seed + " vs uniform " + fmt(runs.uniform_risk) +
             " (max relative gap " + fmt(worst_rel, 4) + ")";
  return o;
}

inline Outcome convergence_rate(const Hooks& h) {
  Outcome o;
  const auto cfg = calibration::convergence_instance();
  const auto data = build_data(cfg);
  const auto shards = partition(data.train, cfg.partition_plan());
  const SmoothedRcvarObjective obj{cfg.objective};
  auto F = [&](const ModelState& s) {
    return fedrcvar::detail::empirical_objective(shards, s, obj, cfg.model);
  };
  // reference optimum from long full-batch descent at step 1 / L
  const double L = joint_smoothness_constant(cfg.objective, cfg.model.lipschitz(),
                                             cfg.model.smoothness());
  const ModelState start{std::vector<double>(data.train.dim() + 1, 0.0), 0.5};
  const auto ref = run_centralized(data.train.samples, calibration::kReferenceSteps, 1.0 / L,
                                   cfg.objective, cfg.model, start);
  const double f_star = F(ref.final_state);
  double gaps[2];
  const std::size_t horizons[2] = {calibration::kShortHorizon, calibration::kLongHorizon};
  for (int i = 0; i < 2; ++i) {
    auto c = cfg;
    c.federation.rounds = horizons[i];
    auto fc = c.federation_config(h.threads);
    const auto r = run_fedsrcvar(shards, fc, c.objective, c.model);
    gaps[i] = F(r.averaged) - f_star;
    ++o.samples;
  }
  const double ratio = gaps[1] / gaps[0];
  o.worst_margin = calibration::kGapRatioThreshold - ratio;
  o.holds = gaps[0] > 0.0 && o.worst_margin >= 0.0;
  o.detail = "gap " + fmt(gaps[0], 4) + " at T=400, " + fmt(gaps[1], 4) + " at T=1600, ratio " +
             fmt(ratio, 4);
  return o;
}

inline RunConfig determinism_config() {
  auto c = calibration::planted_instance();
  c.dataset.n = 2000;
  c.federation.rounds = 60;
  c.federation.local_steps = 3;
  c.federation.batch_size = 32;
  c.output.run_id = "det";
  return c;
}

inline Outcome determinism(const Hooks& h) {
  Outcome o;
  const auto dir = scratch_dir(h, "determinism");
  const auto cfg_path = dir / "run.cfg";
  const auto grid_path = dir / "grid.cfg";
  {
    std::ofstream(cfg_path) << serialize(determinism_config());
    std::ofstream(grid_path) << serialize(SweepGrid{{0.1, 0.5}, {0.2, 0.5}, {7}});
  }
  std::ostringstream sink;
  std::size_t mismatches = 0, files = 0;
  const std::size_t thread_counts[] = {1, h.threads, 1};
  std::vector<fs::path> train_dirs, sweep_dirs;
  int failures = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    CommandOptions opt;
    opt.threads = thread_counts[i];
    opt.out = (dir / ("train" + std::to_string(i))).string();
    failures += cmd_train(cfg_path.string(), opt, sink, sink) != 0;
    train_dirs.push_back(opt.out);
    opt.out = (dir / ("sweep" + std::to_string(i))).string();
    failures += cmd_sweep(cfg_path.string(), grid_path.string(), opt, sink, sink) != 0;
    sweep_dirs.push_back(opt.out);
  }
  for (std::size_t i = 1; i < 3; ++i) {
    mismatches += !same_tree(train_dirs[0], train_dirs[i], files);
    mismatches += !same_tree(sweep_dirs[0], sweep_dirs[i], files);
  }
  o.samples = files;
  o.worst_margin = -static_cast<double>(mismatches + failures);
  o.holds = mismatches == 0 && failures == 0 && files > 0;
  o.detail = std::to_string(files) + " files compared across --threads 1/" +
             std::to_string(h.threads) + "/1, " + std::to_string(mismatches) +
             " trees differ, " + std::to_string(failures) + " commands failed";
  if (o.holds) o.worst_margin = 0.0;
  return o;
}

}  // namespace detail

/// Registered properties in report order.
inline const std::vector<Property>& properties() {
  static const std::vector<Property> props{
      {"1", "smoothing sandwich", 5.0, detail::sandwich},
      {"2", "Lipschitz bound", 10.0, detail::lipschitz},
      {"3", "gradient vs finite differences", 5.0, detail::gradient_check},
      {"4", "tail-mean and variational CVaR agree", 10.0, detail::dual_route},
      {"5", "BPF adversary decomposition", 5.0, detail::bpf_identity},
      {"5b", "BPF adversary decomposition, normalized tail weight", 5.0,
       detail::bpf_identity_adjusted},
      {"6", "eps=1 matches FedAvg bit for bit", 0.0, detail::erm_reduction},
      {"7", "federated equals centralized at tau=1", 30.0, detail::federated_centralized},
      {"8", "worst-group improvement over FedAvg", 300.0, detail::worst_group_improvement},
      {"9", "trade-off frontier shape", 900.0, detail::frontier_shape},
      {"10", "critical rho gives uniform-classifier risk", 300.0, detail::critical_rho},
      {"11", "convergence rate", 120.0, detail::convergence_rate},
      {"12", "determinism across thread counts", 0.0, detail::determinism},
  };
  return props;
}

inline Report run_property(const Property& p, const Hooks& hooks) {
  Report r;
  r.id = p.id;
  r.name = p.name;
  r.time_limit_s = p.time_limit_s;
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto o = p.run(hooks);
    r.samples = o.samples;
    r.worst_margin = o.worst_margin;
    r.pass = o.holds;
    r.detail = o.detail;
  } catch (const std::exception& e) {
    r.pass = false;
    r.worst_margin = -INFINITY;
    r.detail = std::string("threw: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.time_limit_s > 0.0 && r.seconds > r.time_limit_s) {
    r.pass = false;
    r.detail += "; exceeded time limit of " + detail::fmt(r.time_limit_s) + " s";
  }
  return r;
}

inline std::string format_report(const Report& r) {
  std::ostringstream s;
  s << (r.pass ? "PASS" : "FAIL") << "  [" << r.id << "] " << r.name << "  samples=" << r.samples
    << "  worst_margin=" << std::setprecision(4) << r.worst_margin << "  time=" << std::fixed
    << std::setprecision(2) << r.seconds << "s  " << r.detail;
  return s.str();
}

/// Runs the selected properties (all when `only` is empty) and prints one
/// line per property as it finishes.
inline std::vector<Report> run_all(const Hooks& hooks, const std::vector<std::string>& only,
                                   std::ostream& out) {
  std::vector<Report> reports;
  for (const auto& p : properties()) {
    if (!only.empty() && std::find(only.begin(), only.end(), p.id) == only.end()) continue;
    reports.push_back(run_property(p, hooks));
    out << format_report(reports.back()) << std::endl;
  }
  return reports;
}

}  // namespace fedrcvar::acceptance
