#pragma once

// Linear models with losses rescaled into [0, 1].
//
// The parameter vector has one entry per feature followed by a bias, so a
// prediction is <w, x> + b = <theta, (x, 1)>. Every bound below is expressed
// through the augmented radius sqrt(R^2 + 1) of (x, 1).

#include <cfloat>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedrcvar/dataset.hpp"
#include "fedrcvar/error.hpp"

namespace fedrcvar {

enum class LossKind { ScaledLogistic, ScaledSquared };

inline std::string_view to_string(LossKind kind) {
  return kind == LossKind::ScaledLogistic ? "scaled_logistic" : "scaled_squared";
}

inline LossKind parse_loss_kind(std::string_view name) {
  if (name == "scaled_logistic") return LossKind::ScaledLogistic;
  if (name == "scaled_squared") return LossKind::ScaledSquared;
  throw ParameterError("unknown loss '" + std::string(name) + "'");
}

inline constexpr double kDefaultDomainRadius = 10.0;
inline constexpr double kDefaultFeatureRadius = 1.0;

// Relative slack when checking ||x|| <= R, for rows rescaled to norm R.
inline constexpr double kFeatureNormSlack = 1e-9;

struct BoundedLossSpec {
  LossKind kind = LossKind::ScaledLogistic;
  double domain_radius_M = kDefaultDomainRadius;
  double feature_radius_R = kDefaultFeatureRadius;
  double label_bound = 1.0;  // |y| bound, squared loss only

  void validate() const {
    if (!(domain_radius_M > 0.0) || !std::isfinite(domain_radius_M))
      throw ParameterError("domain radius M must be positive");
    if (!(feature_radius_R > 0.0) || !std::isfinite(feature_radius_R))
      throw ParameterError("feature radius R must be positive");
    if (kind == LossKind::ScaledSquared && !(label_bound > 0.0))
      throw ParameterError("label bound must be positive");
  }

  double augmented_radius() const {
    return std::sqrt(feature_radius_R * feature_radius_R + 1.0);
  }

  /// Supremum of the unscaled loss over the parameter and feature balls.
  double raw_bound() const {
    const double reach = domain_radius_M * augmented_radius();
    if (kind == LossKind::ScaledLogistic) return reach + std::log1p(std::exp(-reach));
    const double r = reach + label_bound;
    return r * r;
  }

  double lipschitz() const {
    const double ra = augmented_radius();
    if (kind == LossKind::ScaledLogistic) return ra / raw_bound();
    return 2.0 * (domain_radius_M * ra + label_bound) * ra / raw_bound();
  }

  double smoothness() const {
    const double ra = augmented_radius();
    if (kind == LossKind::ScaledLogistic) return ra * ra / (4.0 * raw_bound());
    return 2.0 * ra * ra / raw_bound();
  }
};

/// Model-threshold pair exchanged between server and clients.
struct ModelState {
  std::vector<double> theta;
  double c = 1.0;

  bool operator==(const ModelState&) const = default;
};

struct LinearModel {
  std::vector<double> weights;  // features then bias
  double domain_radius_M = kDefaultDomainRadius;

  std::size_t feature_dim() const noexcept { return weights.empty() ? 0 : weights.size() - 1; }
};

inline double l2_norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

/// Radial projection onto the closed ball of the given radius, in place.
/// Points within a few ulps of the sphere count as inside, which keeps the
/// projection idempotent under rounding.
inline void project_onto_ball(std::span<double> v, double radius) {
  const double n = l2_norm(v);
  if (n <= radius * (1.0 + 4.0 * DBL_EPSILON)) return;
  const double scale = radius / n;
  for (double& x : v) x *= scale;
}

inline LinearModel project_model(LinearModel model) {
  project_onto_ball(model.weights, model.domain_radius_M);
  return model;
}

namespace detail {

/// Scaled loss and the derivative with respect to the prediction, so that
/// the parameter gradient is `dpred * (x, 1)`.
struct PointLoss {
  double loss;
  double dpred;
};

inline double predict(std::span<const double> theta, std::span<const double> x) noexcept {
  double z = theta[x.size()];
  for (std::size_t j = 0; j < x.size(); ++j) z += theta[j] * x[j];
  return z;
}

inline PointLoss point_loss(std::span<const double> theta, std::span<const double> x,
                            double y, const BoundedLossSpec& spec, double inv_bound) noexcept {
  const double z = predict(theta, x);
  double loss, dpred;
  if (spec.kind == LossKind::ScaledLogistic) {
    const double sign = y > 0.5 ? 1.0 : -1.0;
    const double m = sign * z;
    // log(1 + exp(-m)) and sigmoid(-m), both overflow-safe
    double raw, sig;
    if (m >= 0.0) {
      const double e = std::exp(-m);
      raw = std::log1p(e);
      sig = e / (1.0 + e);
    } else {
      const double e = std::exp(m);
      raw = -m + std::log1p(e);
      sig = 1.0 / (1.0 + e);
    }
    loss = raw * inv_bound;
    dpred = -sign * sig * inv_bound;
  } else {
    const double r = z - y;
    loss = r * r * inv_bound;
    dpred = 2.0 * r * inv_bound;
  }
  // |<theta, (x,1)>| can exceed M * R_aug by rounding when both sit on
  // their ball boundaries.
  if (loss > 1.0 && loss < 1.0 + 1e-12) loss = 1.0;
  return {loss, dpred};
}

inline void check_label(double y, const BoundedLossSpec& spec) {
  if (spec.kind == LossKind::ScaledLogistic) {
    if (y != 0.0 && y != 1.0)
      throw DataError("logistic labels must be 0 or 1, got " + std::to_string(y));
  } else if (!(std::abs(y) <= spec.label_bound)) {
    throw DataError("label " + std::to_string(y) + " exceeds the label bound");
  }
}

inline void check_feature_norm(std::span<const double> x, const BoundedLossSpec& spec) {
  const double n = l2_norm(x);
  if (!(n <= spec.feature_radius_R * (1.0 + kFeatureNormSlack)))
    throw DataError("feature norm " + std::to_string(n) + " exceeds R = " +
                    std::to_string(spec.feature_radius_R));
}

}  // namespace detail

/// Checks every row and label of a sample set against the loss contract.
inline void validate_samples(const Samples& s, const BoundedLossSpec& spec) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    detail::check_feature_norm(s.row(i), spec);
    detail::check_label(s.labels[i], spec);
  }
}

struct LossAndGrad {
  double loss;
  std::vector<double> grad;
};

inline LossAndGrad loss_and_grad(std::span<const double> theta, const BoundedLossSpec& spec,
                                 std::span<const double> x, double y) {
  spec.validate();
  if (theta.size() != x.size() + 1)
    throw DataError("model has " + std::to_string(theta.size()) + " parameters, sample has " +
                    std::to_string(x.size()) + " features");
  detail::check_feature_norm(x, spec);
  detail::check_label(y, spec);
  const auto pl = detail::point_loss(theta, x, y, spec, 1.0 / spec.raw_bound());
  LossAndGrad out{pl.loss, std::vector<double>(theta.size())};
  for (std::size_t j = 0; j < x.size(); ++j) out.grad[j] = pl.dpred * x[j];
  out.grad.back() = pl.dpred;
  return out;
}

inline LossAndGrad loss_and_grad(const LinearModel& model, const BoundedLossSpec& spec,
                                 std::span<const double> x, double y) {
  return loss_and_grad(std::span<const double>(model.weights), spec, x, y);
}

/// Mean scaled loss of the constant predictor that puts mass 1/2 on each
/// class. Under the scaled logistic loss every sample costs ln 2 / B_max.
inline double uniform_classifier_risk(const BoundedLossSpec& spec, const Samples& data) {
  spec.validate();
  if (spec.kind != LossKind::ScaledLogistic)
    throw UnsupportedError("the uniform classifier is only defined for classification losses");
  if (data.empty()) throw DataError("uniform classifier risk of an empty dataset");
  return std::log(2.0) / spec.raw_bound();
}

}  // namespace fedrcvar
