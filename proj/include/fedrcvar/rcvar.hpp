#pragma once

// Relaxed CVaR objective: the per-sample auxiliary function
//
//   f(theta, c; z) = (1 - eps) [c + (l - c)_+ / rho] + eps * l
//
// its smoothed counterpart (plus function replaced by a smooth surrogate s),
// gradients, subgradients and the regularity constants used by the
// learning-rate schedules.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedrcvar/error.hpp"

namespace fedrcvar {

/// Upper end of the loss range. Only B = 1 is supported.
inline constexpr double kLossBound = 1.0;

enum class SmoothKind { SoftRelu, Zang, PiecewiseQuadratic };

inline std::string_view to_string(SmoothKind kind) {
  switch (kind) {
    case SmoothKind::SoftRelu: return "soft_relu";
    case SmoothKind::Zang: return "zang";
    case SmoothKind::PiecewiseQuadratic: return "piecewise_quadratic";
  }
  return "?";
}

inline SmoothKind parse_smooth_kind(std::string_view name) {
  if (name == "soft_relu") return SmoothKind::SoftRelu;
  if (name == "zang") return SmoothKind::Zang;
  if (name == "piecewise_quadratic") return SmoothKind::PiecewiseQuadratic;
  throw ParameterError("unknown smooth plus function '" + std::string(name) + "'");
}

struct RcvarParams {
  double epsilon = 0.1;  // trade-off: 0 = pure CVaR, 1 = plain ERM
  double rho = 0.2;      // worst-group mass
  double gamma = 0.05;   // smoothing accuracy
  double loss_bound = kLossBound;
  SmoothKind smooth = SmoothKind::SoftRelu;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
      throw ParameterError("epsilon must lie in [0, 1], got " + std::to_string(epsilon));
    if (!(rho > 0.0 && rho < 1.0))
      throw ParameterError("rho must lie in (0, 1), got " + std::to_string(rho));
    if (!(gamma > 0.0) || !std::isfinite(gamma))
      throw ParameterError("gamma must be positive, got " + std::to_string(gamma));
    if (loss_bound != kLossBound)
      throw ParameterError("loss bound B must equal 1");
  }

  /// The box-constrained adversary additionally needs epsilon < rho.
  void validate_for_adversary() const {
    validate();
    if (!(epsilon < rho))
      throw ParameterError("adversary box is infeasible unless epsilon < rho");
  }
};

/// Constants of the convergence analysis. `domain_diameter_M` bounds
/// ||theta - theta'|| over the parameter domain.
struct RegularityConstants {
  double lipschitz_G = 1.0;
  double smoothness_beta = 1.0;
  double variance_sigma = 0.0;
  double heterogeneity_mu = 0.0;
  double domain_diameter_M = 1.0;
};

inline double plus(double x) noexcept { return x > 0.0 ? x : 0.0; }

struct SmoothPlus {
  double value;
  double derivative;
};

namespace detail {

inline SmoothPlus smooth_plus_unchecked(double x, double gamma, SmoothKind kind) noexcept {
  switch (kind) {
    case SmoothKind::SoftRelu: {
      // gamma * log(1 + exp(x / gamma)), evaluated on the branch where the
      // exponent is non-positive.
      const double u = x / gamma;
      if (u > 0.0) {
        const double e = std::exp(-u);
        return {x + gamma * std::log1p(e), 1.0 / (1.0 + e)};
      }
      const double e = std::exp(u);
      return {gamma * std::log1p(e), e / (1.0 + e)};
    }
    case SmoothKind::Zang: {
      // Quadratic blend over [-gamma/2, gamma/2]; gap <= gamma/8, s'' <= 1/gamma.
      const double half = 0.5 * gamma;
      if (x <= -half) return {0.0, 0.0};
      if (x >= half) return {x, 1.0};
      const double r = x + half;
      return {r * r / (2.0 * gamma), r / gamma};
    }
    case SmoothKind::PiecewiseQuadratic: {
      // Moreau envelope of the plus function lifted by gamma/2 so that it
      // majorizes (.)_+; gap in [0, gamma/2], s'' <= 1/gamma.
      if (x <= 0.0) return {0.5 * gamma, 0.0};
      if (x >= gamma) return {x, 1.0};
      return {0.5 * gamma + x * x / (2.0 * gamma), x / gamma};
    }
  }
  return {0.0, 0.0};
}

/// Per-sample coefficients of the smoothed objective: the theta-gradient is
/// `theta_scale * grad(loss)` and the threshold derivative is `grad_c`.
struct SampleCoefficients {
  double value;
  double theta_scale;
  double grad_c;
};

inline SampleCoefficients smooth_terms(double loss, double c, const RcvarParams& p) noexcept {
  const SmoothPlus s = smooth_plus_unchecked(loss - c, p.gamma, p.smooth);
  const double w = 1.0 - p.epsilon;
  return {w * (c + s.value / p.rho) + p.epsilon * loss,
          w * s.derivative / p.rho + p.epsilon,
          w * (1.0 - s.derivative / p.rho)};
}

inline void check_unit_range(double v, const char* what, double bound) {
  if (!(v >= 0.0 && v <= bound))
    throw DomainError(std::string(what) + " must lie in [0, B], got " + std::to_string(v));
}

}  // namespace detail

/// Smooth surrogate of the plus function with 0 <= s(x) - (x)_+ <= gamma and
/// a (2 / gamma)-Lipschitz derivative.
inline SmoothPlus smooth_plus(double x, double gamma, SmoothKind kind = SmoothKind::SoftRelu) {
  if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
  return detail::smooth_plus_unchecked(x, gamma, kind);
}

/// Largest value of s'' for the given surrogate, used by tests and by the
/// joint smoothness bound.
inline double smooth_plus_curvature(double gamma, SmoothKind kind) {
  if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
  switch (kind) {
    case SmoothKind::SoftRelu: return 0.25 / gamma;
    case SmoothKind::Zang:
    case SmoothKind::PiecewiseQuadratic: return 1.0 / gamma;
  }
  return 2.0 / gamma;
}

inline double f_aux(double loss, double c, const RcvarParams& p) {
  p.validate();
  detail::check_unit_range(loss, "loss", p.loss_bound);
  detail::check_unit_range(c, "threshold c", p.loss_bound);
  return (1.0 - p.epsilon) * (c + plus(loss - c) / p.rho) + p.epsilon * loss;
}

inline double f_smooth(double loss, double c, const RcvarParams& p) {
  p.validate();
  detail::check_unit_range(loss, "loss", p.loss_bound);
  detail::check_unit_range(c, "threshold c", p.loss_bound);
  return detail::smooth_terms(loss, c, p).value;
}

struct ObjectiveGradient {
  std::vector<double> theta;
  double c = 0.0;

  double norm() const {
    double sq = c * c;
    for (double g : theta) sq += g * g;
    return std::sqrt(sq);
  }
};

/// Gradient of the smoothed per-sample objective given the loss gradient.
inline ObjectiveGradient f_smooth_grad(double loss, std::span<const double> loss_grad,
                                       double c, const RcvarParams& p) {
  p.validate();
  detail::check_unit_range(loss, "loss", p.loss_bound);
  detail::check_unit_range(c, "threshold c", p.loss_bound);
  const auto t = detail::smooth_terms(loss, c, p);
  ObjectiveGradient g;
  g.theta.reserve(loss_grad.size());
  for (double v : loss_grad) g.theta.push_back(t.theta_scale * v);
  g.c = t.grad_c;
  return g;
}

inline constexpr double kSubgradientTieTolerance = 1e-12;

/// Element of the subdifferential of the non-smooth objective. `t` selects
/// the point of the segment used when loss == c.
inline ObjectiveGradient f_aux_subgradient(double loss, std::span<const double> loss_grad,
                                           double c, const RcvarParams& p, double t = 0.5,
                                           double tie_tolerance = kSubgradientTieTolerance) {
  if (!(t >= 0.0 && t <= 1.0))
    throw ParameterError("subgradient selector t must lie in [0, 1]");
  p.validate();
  detail::check_unit_range(loss, "loss", p.loss_bound);
  detail::check_unit_range(c, "threshold c", p.loss_bound);
  double active;
  if (std::abs(loss - c) <= tie_tolerance)
    active = t;
  else
    active = loss > c ? 1.0 : 0.0;
  const double w = 1.0 - p.epsilon;
  const double scale = w * active / p.rho + p.epsilon;
  ObjectiveGradient g;
  g.theta.reserve(loss_grad.size());
  for (double v : loss_grad) g.theta.push_back(scale * v);
  g.c = w * (1.0 - active / p.rho);
  return g;
}

/// Lipschitz constant of f and its smoothed version when the loss is
/// loss_G-Lipschitz in theta.
inline double lipschitz_constant(const RcvarParams& p, double loss_G) {
  p.validate();
  if (!(loss_G > 0.0)) throw ParameterError("loss Lipschitz constant must be positive");
  const double e = p.epsilon, r = p.rho, G2 = loss_G * loss_G;
  const double a = 1.0 - e + e * r;
  const double active = std::sqrt(G2 * a * a + (1.0 - e) * (1.0 - e) * (r - 1.0) * (r - 1.0)) / r;
  const double inactive = std::sqrt(G2 * e * e + (1.0 - e) * (1.0 - e));
  return std::max(active, inactive);
}

/// Smoothness constant of the smoothed objective in the published form,
/// (1 - eps)/rho * (beta + 2 G^2 / gamma) + eps * beta.
inline double smoothness_constant(const RcvarParams& p, double loss_G, double loss_beta) {
  p.validate();
  if (!(loss_G > 0.0) || !(loss_beta > 0.0))
    throw ParameterError("loss constants must be positive");
  return (1.0 - p.epsilon) / p.rho * (loss_beta + 2.0 / p.gamma * loss_G * loss_G) +
         p.epsilon * loss_beta;
}

/// Smoothness constant over the joint (theta, c) variable. Differs from
/// smoothness_constant() by accounting for the threshold direction, which
/// contributes a factor (G^2 + 1) instead of G^2.
inline double joint_smoothness_constant(const RcvarParams& p, double loss_G, double loss_beta) {
  p.validate();
  if (!(loss_G > 0.0) || !(loss_beta > 0.0))
    throw ParameterError("loss constants must be positive");
  return (1.0 - p.epsilon) / p.rho * (loss_beta + 2.0 / p.gamma * (loss_G * loss_G + 1.0)) +
         p.epsilon * loss_beta;
}

}  // namespace fedrcvar
