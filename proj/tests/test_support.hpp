#pragma once

// Random generators and objective compositions shared by the test suites.

#include <cmath>
#include <span>
#include <vector>

#include "fedrcvar/model.hpp"
#include "fedrcvar/rcvar.hpp"
#include "fedrcvar/rng.hpp"

namespace fedrcvar::testing {

inline std::vector<double> random_in_ball(Rng& rng, std::size_t dim, double radius) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = uniform(rng, -1.0, 1.0);
    sq += x * x;
  }
  const double target = radius * uniform01(rng);
  const double scale = sq > 0.0 ? target / std::sqrt(sq) : 0.0;
  for (double& x : v) x *= scale;
  return v;
}

inline RcvarParams random_params(Rng& rng, SmoothKind kind = SmoothKind::SoftRelu) {
  RcvarParams p;
  p.epsilon = uniform01(rng);
  p.rho = 0.01 + 0.98 * uniform01(rng);
  const double gammas[] = {0.01, 0.05, 0.5};
  p.gamma = gammas[uniform_index(rng, 3)];
  p.smooth = kind;
  return p;
}

/// The smoothed or plain objective of one sample as a function of the
/// joint point m = (theta, c).
struct SampleObjective {
  std::vector<double> x;
  double y;
  RcvarParams params;
  BoundedLossSpec spec;

  LossAndGrad loss(std::span<const double> m) const {
    return loss_and_grad(m.first(m.size() - 1), spec, x, y);
  }
  double smooth(std::span<const double> m) const {
    return f_smooth(loss(m).loss, m.back(), params);
  }
  double nonsmooth(std::span<const double> m) const {
    return f_aux(loss(m).loss, m.back(), params);
  }
  std::vector<double> smooth_grad(std::span<const double> m) const {
    const auto lg = loss(m);
    auto g = f_smooth_grad(lg.loss, lg.grad, m.back(), params);
    g.theta.push_back(g.c);
    return g.theta;
  }
};

inline SampleObjective random_sample_objective(Rng& rng, std::size_t d, const RcvarParams& p,
                                               const BoundedLossSpec& spec) {
  SampleObjective o{random_in_ball(rng, d, spec.feature_radius_R),
                    uniform01(rng) < 0.5 ? 0.0 : 1.0, p, spec};
  return o;
}

/// Random joint point with theta in the domain ball and c in [0, 1].
inline std::vector<double> random_point(Rng& rng, std::size_t d, const BoundedLossSpec& spec) {
  auto m = random_in_ball(rng, d + 1, spec.domain_radius_M);
  m.push_back(uniform01(rng));
  return m;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

}  // namespace fedrcvar::testing
