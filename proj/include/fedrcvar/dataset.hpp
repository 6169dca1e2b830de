#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedrcvar/error.hpp"

namespace fedrcvar {

/// Row-major feature matrix with labels. This is everything the training
/// path is allowed to see.
struct Samples {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<double> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> row(std::size_t i) const noexcept {
    return {features.data() + i * dim, dim};
  }

  void push_back(std::span<const double> x, double y) {
    if (x.size() != dim) throw DataError("feature row has wrong dimension");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
  }

  double max_row_norm() const {
    double best = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      double sq = 0.0;
      for (double v : row(i)) sq += v * v;
      best = std::max(best, std::sqrt(sq));
    }
    return best;
  }
};

/// Samples plus evaluation-only metadata. The latent group tag is never
/// forwarded to shards.
struct Dataset {
  Samples samples;
  std::vector<int> latent_group;  // empty when unknown

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t dim() const noexcept { return samples.dim; }
  bool has_latent_groups() const noexcept { return !latent_group.empty(); }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.samples.dim = samples.dim;
    out.samples.features.reserve(indices.size() * samples.dim);
    out.samples.labels.reserve(indices.size());
    for (std::size_t i : indices) {
      out.samples.push_back(samples.row(i), samples.labels[i]);
      if (has_latent_groups()) out.latent_group.push_back(latent_group[i]);
    }
    return out;
  }
};

/// One client's local data.
struct Shard {
  std::size_t client_id = 0;
  Samples samples;
};

}  // namespace fedrcvar
