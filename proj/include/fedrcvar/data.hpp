#pragma once

// Dataset construction: the planted-subgroup generator, CSV ingestion,
// normalization into the feature ball, train/test splits and client
// partitioning.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fedrcvar/dataset.hpp"
#include "fedrcvar/error.hpp"
#include "fedrcvar/model.hpp"
#include "fedrcvar/rng.hpp"

namespace fedrcvar {

struct SplitData {
  Dataset train;
  Dataset test;
};

/// Rescales every row by one common factor so the largest row norm is
/// exactly `radius`. Returns the factor applied.
inline double normalize_to_ball(Samples& s, double radius) {
  const double largest = s.max_row_norm();
  if (largest == 0.0) return 1.0;
  const double scale = radius / largest;
  for (double& v : s.features) v *= scale;
  return scale;
}

struct PlantedSubgroupOptions {
  double majority_separation = 2.0;  // class means at +-a along e1
  double minority_separation = 0.25;  // minority class means at +-delta along e1
  double minority_offset = 3.0;  // minority cluster centred at offset * e2
  double spread = 0.5;           // isotropic standard deviation
  double feature_radius_R = kDefaultFeatureRadius;
};

/// Two-cluster binary problem: a well separated majority and a minority
/// whose class-conditional Gaussians overlap and whose labels are flipped
/// at `label_noise_minority`. The latent group (0 majority, 1 minority) is
/// recorded for evaluation only.
inline Dataset gen_planted_subgroup(std::size_t n, std::size_t d, double minority_frac,
                                    double label_noise_minority, std::uint64_t seed,
                                    const PlantedSubgroupOptions& opt = {}) {
  if (n < 2) throw ParameterError("planted subgroup: need at least two samples");
  if (d < 2) throw ParameterError("planted subgroup: need at least two features");
  if (!(minority_frac > 0.0 && minority_frac < 1.0))
    throw ParameterError("minority_frac must lie in (0, 1)");
  if (!(label_noise_minority >= 0.0 && label_noise_minority <= 0.5))
    throw ParameterError("label_noise_minority must lie in [0, 0.5]");
  if (!(opt.spread > 0.0)) throw ParameterError("spread must be positive");
  const auto n_min = static_cast<std::size_t>(std::llround(minority_frac * static_cast<double>(n)));
  if (n_min == 0 || n_min >= n)
    throw ParameterError("minority_frac leaves one of the groups empty");

  Rng rng(stream_seed(seed, 0x5eedda7aULL));
  std::normal_distribution<double> gauss(0.0, opt.spread);
  Dataset raw;
  raw.samples.dim = d;
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    const bool minority = i >= n - n_min;
    const double y = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    const double side = y > 0.5 ? 1.0 : -1.0;
    for (double& v : x) v = gauss(rng);
    double label = y;
    if (minority) {
      x[0] += side * opt.minority_separation;
      x[1] += opt.minority_offset;
      if (uniform01(rng) < label_noise_minority) label = 1.0 - y;
    } else {
      x[0] += side * opt.majority_separation;
    }
    raw.samples.push_back(x, label);
    raw.latent_group.push_back(minority ? 1 : 0);
  }
  // interleave the groups
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  Dataset out = raw.subset(order);
  normalize_to_ball(out.samples, opt.feature_radius_R);
  return out;
}

/// Seeded split; indices keep their original order inside each part.
inline SplitData split_train_test(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw ParameterError("test_fraction must lie in [0, 1)");
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(stream_seed(seed, 0x7e57ULL));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test >= n) throw ParameterError("test split would leave no training data");
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvSchema {
  std::string label_column;
  std::vector<std::string> feature_columns;
  std::optional<std::string> positive_label;  // maps to 1
  std::optional<std::string> fold_column;     // rows with fold == test_fold form the test split
  long test_fold = 0;
  double feature_radius_R = kDefaultFeatureRadius;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a headed CSV, standardizes each feature column with statistics of
/// the training rows, rescales all rows so the largest norm equals R and maps
/// the two label values to {0, 1}.
inline SplitData load_csv(const std::string& path, const CsvSchema& schema) {
  if (schema.label_column.empty()) throw DataError("csv schema: label column not set");
  if (schema.feature_columns.empty()) throw DataError("csv schema: no feature columns");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(path + ": line 1: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column(schema.label_column);
  std::vector<std::size_t> feature_cols;
  for (const auto& name : schema.feature_columns) feature_cols.push_back(column(name));
  std::optional<std::size_t> fold_col;
  if (schema.fold_column) fold_col = column(*schema.fold_column);

  const std::size_t d = feature_cols.size();
  std::vector<double> features;
  std::vector<std::string> raw_labels;
  std::vector<std::size_t> label_lines;
  std::vector<bool> is_test;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError(path + ": line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    for (std::size_t j = 0; j < d; ++j) {
      const auto v = detail::parse_double(fields[feature_cols[j]]);
      if (!v)
        throw DataError(path + ": line " + std::to_string(line_no) + ", column '" +
                        schema.feature_columns[j] + "': non-numeric value '" +
                        fields[feature_cols[j]] + "'");
      features.push_back(*v);
    }
    raw_labels.push_back(fields[label_col]);
    label_lines.push_back(line_no);
    bool test = false;
    if (fold_col) {
      const auto f = detail::parse_double(fields[*fold_col]);
      if (!f)
        throw DataError(path + ": line " + std::to_string(line_no) + ", column '" +
                        *schema.fold_column + "': non-numeric value '" + fields[*fold_col] + "'");
      test = static_cast<long>(*f) == schema.test_fold;
    }
    is_test.push_back(test);
  }
  const std::size_t n = raw_labels.size();
  if (n == 0) throw DataError(path + ": no data rows");

  // label mapping
  std::vector<std::string> classes;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::find(classes.begin(), classes.end(), raw_labels[i]) != classes.end()) continue;
    if (classes.size() == 2)
      throw DataError(path + ": line " + std::to_string(label_lines[i]) + ": label column '" +
                      schema.label_column + "' has a third class value '" + raw_labels[i] + "'");
    classes.push_back(raw_labels[i]);
  }
  std::string positive;
  if (schema.positive_label) {
    if (std::find(classes.begin(), classes.end(), *schema.positive_label) == classes.end())
      throw DataError(path + ": positive label '" + *schema.positive_label + "' never occurs");
    positive = *schema.positive_label;
  } else if (classes.size() == 1) {
    const auto v = detail::parse_double(classes[0]);
    positive = (v && *v == 0.0) ? std::string("\x01") : classes[0];
  } else {
    const auto a = detail::parse_double(classes[0]);
    const auto b = detail::parse_double(classes[1]);
    if (a && b)
      positive = *a > *b ? classes[0] : classes[1];
    else
      positive = std::max(classes[0], classes[1]);
  }

  // standardize with training-row statistics
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  std::size_t n_train = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_test[i]) continue;
    ++n_train;
    for (std::size_t j = 0; j < d; ++j) mean[j] += features[i * d + j];
  }
  if (n_train == 0) throw DataError(path + ": every row belongs to the test fold");
  for (double& m : mean) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_test[i]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = features[i * d + j] - mean[j];
      sd[j] += c * c;
    }
  }
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(n_train));
    if (s == 0.0) s = 1.0;  // constant column maps to zero
  }
  Samples all;
  all.dim = d;
  all.features.resize(features.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      all.features[i * d + j] = (features[i * d + j] - mean[j]) / sd[j];
  for (std::size_t i = 0; i < n; ++i) all.labels.push_back(raw_labels[i] == positive ? 1.0 : 0.0);
  normalize_to_ball(all, schema.feature_radius_R);

  SplitData out;
  out.train.samples.dim = out.test.samples.dim = d;
  for (std::size_t i = 0; i < n; ++i)
    (is_test[i] ? out.test : out.train).samples.push_back(all.row(i), all.labels[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

enum class PartitionStrategy { Even, ByLabel, Dirichlet, ByLatentGroup };

inline std::string_view to_string(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::Even: return "even";
    case PartitionStrategy::ByLabel: return "by_label";
    case PartitionStrategy::Dirichlet: return "dirichlet";
    case PartitionStrategy::ByLatentGroup: return "by_latent_group";
  }
  return "?";
}

inline PartitionStrategy parse_partition_strategy(std::string_view name) {
  if (name == "even") return PartitionStrategy::Even;
  if (name == "by_label") return PartitionStrategy::ByLabel;
  if (name == "dirichlet") return PartitionStrategy::Dirichlet;
  if (name == "by_latent_group") return PartitionStrategy::ByLatentGroup;
  throw ParameterError("unknown partition strategy '" + std::string(name) + "'");
}

struct PartitionPlan {
  PartitionStrategy strategy = PartitionStrategy::Even;
  std::size_t num_clients = 1;
  double alpha = 1.0;  // Dirichlet concentration
  std::uint64_t seed = 0;
};

/// Client index sets for a plan; a disjoint cover of [0, n).
inline std::vector<std::vector<std::size_t>> partition_indices(const Dataset& data,
                                                               const PartitionPlan& plan) {
  const std::size_t n = data.size();
  const std::size_t K = plan.num_clients;
  if (K == 0) throw ParameterError("partition: need at least one client");
  if (K > n) throw PartitionError(n, "more clients than samples");
  std::vector<std::vector<std::size_t>> parts(K);

  switch (plan.strategy) {
    case PartitionStrategy::Even:
      for (std::size_t i = 0; i < n; ++i) parts[i % K].push_back(i);
      break;

    case PartitionStrategy::ByLabel: {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return data.samples.labels[a] < data.samples.labels[b];
      });
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = k * n / K; i < (k + 1) * n / K; ++i) parts[k].push_back(order[i]);
      break;
    }

    case PartitionStrategy::Dirichlet: {
      if (!(plan.alpha > 0.0)) throw ParameterError("dirichlet alpha must be positive");
      Rng rng(stream_seed(plan.seed, 0xd1c1ULL));
      std::map<double, std::vector<std::size_t>> by_label;
      for (std::size_t i = 0; i < n; ++i) by_label[data.samples.labels[i]].push_back(i);
      std::gamma_distribution<double> gamma(plan.alpha, 1.0);
      for (auto& [label, idx] : by_label) {
        for (std::size_t i = idx.size(); i > 1; --i)
          std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
        std::vector<double> w(K);
        double total = 0.0;
        for (double& v : w) total += (v = gamma(rng));
        double cum = 0.0;
        std::size_t start = 0;
        for (std::size_t k = 0; k < K; ++k) {
          cum += w[k];
          const std::size_t stop =
              k + 1 == K ? idx.size()
                         : static_cast<std::size_t>(std::llround(cum / total * static_cast<double>(idx.size())));
          for (std::size_t i = start; i < std::max(start, stop); ++i) parts[k].push_back(idx[i]);
          start = std::max(start, stop);
        }
      }
      for (auto& p : parts) std::sort(p.begin(), p.end());
      break;
    }

    case PartitionStrategy::ByLatentGroup: {
      if (!data.has_latent_groups())
        throw PartitionError(0, "dataset carries no latent groups");
      std::vector<int> groups(data.latent_group);
      std::sort(groups.begin(), groups.end());
      groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
      const std::size_t G = groups.size();
      // clients serving each group
      std::vector<std::vector<std::size_t>> owners(G);
      if (K >= G) {
        for (std::size_t k = 0; k < K; ++k) owners[k % G].push_back(k);
      } else {
        for (std::size_t g = 0; g < G; ++g) owners[g].push_back(g % K);
      }
      std::vector<std::size_t> next(G, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto g = static_cast<std::size_t>(
            std::lower_bound(groups.begin(), groups.end(), data.latent_group[i]) - groups.begin());
        parts[owners[g][next[g]++ % owners[g].size()]].push_back(i);
      }
      break;
    }
  }

  for (std::size_t k = 0; k < K; ++k)
    if (parts[k].empty()) throw PartitionError(k, "strategy produced an empty shard");
  return parts;
}

/// Client shards for a plan. Latent group tags are dropped here.
inline std::vector<Shard> partition(const Dataset& data, const PartitionPlan& plan) {
  const auto parts = partition_indices(data, plan);
  std::vector<Shard> shards;
  shards.reserve(parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k)
    shards.push_back(Shard{k, data.subset(parts[k]).samples});
  return shards;
}

}  // namespace fedrcvar
