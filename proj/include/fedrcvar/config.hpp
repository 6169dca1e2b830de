#pragma once

// Run configuration in a flat `block.key = value` text format, and the
// sweep grid that varies epsilon, rho and the seed.
//
// Lines starting with '#' and blank lines are ignored. Every key has a fixed
// type; unknown and repeated keys are errors that name the key path.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fedrcvar/data.hpp"
#include "fedrcvar/error.hpp"
#include "fedrcvar/federation.hpp"
#include "fedrcvar/model.hpp"
#include "fedrcvar/rcvar.hpp"

namespace fedrcvar {

enum class Algorithm { FedSRCVaR, FedAvg };

inline std::string_view to_string(Algorithm a) {
  return a == Algorithm::FedSRCVaR ? "fedsrcvar" : "fedavg";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "fedsrcvar") return Algorithm::FedSRCVaR;
  if (s == "fedavg") return Algorithm::FedAvg;
  throw ParameterError("unknown algorithm '" + std::string(s) + "'");
}

struct DatasetConfig {
  std::string source = "planted";  // planted | csv
  std::size_t n = 10000;
  std::size_t dim = 5;
  double minority_frac = 0.2;
  double label_noise_minority = 0.3;
  double majority_separation = 2.0;
  double minority_separation = 0.25;
  double minority_offset = 3.0;
  double spread = 0.5;
  std::uint64_t seed = 2024;
  double test_fraction = 0.25;
  std::string csv_path;
  std::string label_column;
  std::vector<std::string> feature_columns;
  std::string positive_label;  // empty: larger value is positive
  std::string fold_column;     // empty: seeded split by test_fraction
  long test_fold = 0;

  bool operator==(const DatasetConfig&) const = default;
};

struct FederationBlock {
  Algorithm algorithm = Algorithm::FedSRCVaR;
  std::size_t rounds = 200;
  std::size_t local_steps = 1;
  LearningRate eta = LearningRate::fixed(0.1);
  std::size_t batch_size = 0;  // 0: whole shard
  std::uint64_t seed = 1;
  bool resample_per_local_step = false;
  bool project_theta_locally = true;
  bool project_c_locally = false;

  bool operator==(const FederationBlock& o) const {
    return algorithm == o.algorithm && rounds == o.rounds && local_steps == o.local_steps &&
           eta.mode == o.eta.mode && eta.value == o.eta.value && batch_size == o.batch_size &&
           seed == o.seed && resample_per_local_step == o.resample_per_local_step &&
           project_theta_locally == o.project_theta_locally &&
           project_c_locally == o.project_c_locally;
  }
};

struct OutputConfig {
  std::string dir;  // empty: --out, then $FEDRCVAR_OUT, then ./runs
  std::string run_id = "run";
  bool record_wall_time = false;

  bool operator==(const OutputConfig&) const = default;
};

struct PartitionBlock {
  PartitionStrategy strategy = PartitionStrategy::Even;
  std::size_t num_clients = 4;
  double alpha = 1.0;
  std::uint64_t seed = 1;

  bool operator==(const PartitionBlock&) const = default;
};

struct RunConfig {
  DatasetConfig dataset;
  PartitionBlock partition;
  BoundedLossSpec model;
  RcvarParams objective;
  FederationBlock federation;
  OutputConfig output;

  bool operator==(const RunConfig& o) const {
    auto spec_eq = [](const BoundedLossSpec& a, const BoundedLossSpec& b) {
      return a.kind == b.kind && a.domain_radius_M == b.domain_radius_M &&
             a.feature_radius_R == b.feature_radius_R && a.label_bound == b.label_bound;
    };
    auto obj_eq = [](const RcvarParams& a, const RcvarParams& b) {
      return a.epsilon == b.epsilon && a.rho == b.rho && a.gamma == b.gamma &&
             a.loss_bound == b.loss_bound && a.smooth == b.smooth;
    };
    return dataset == o.dataset && partition == o.partition && spec_eq(model, o.model) &&
           obj_eq(objective, o.objective) && federation == o.federation && output == o.output;
  }

  void validate() const;
  FederationConfig federation_config(std::size_t workers = 1) const;
  PartitionPlan partition_plan() const {
    return {partition.strategy, partition.num_clients, partition.alpha, partition.seed};
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(',', start);
    auto item = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <class F>
auto parse_enum(const std::string& key, const std::string& v, F&& f) {
  try {
    return f(v);
  } catch (const ParameterError& e) {
    throw ConfigError(key, e.what());
  }
}

struct KeyBinding {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<KeyBinding>& run_config_keys() {
  using C = RunConfig;
  using S = const std::string&;
  static const std::vector<KeyBinding> keys = [] {
    std::vector<KeyBinding> k;
#define FEDRCVAR_REAL(KEY, FIELD)                                                           \
  k.push_back({KEY, [](C& c, S v) { c.FIELD = parse_real(KEY, v); },                        \
               [](const C& c) { return format_double(c.FIELD); }})
#define FEDRCVAR_SIZE(KEY, FIELD)                                                           \
  k.push_back({KEY, [](C& c, S v) { c.FIELD = parse_integer<std::size_t>(KEY, v); },        \
               [](const C& c) { return std::to_string(c.FIELD); }})
#define FEDRCVAR_U64(KEY, FIELD)                                                            \
  k.push_back({KEY, [](C& c, S v) { c.FIELD = parse_integer<std::uint64_t>(KEY, v); },      \
               [](const C& c) { return std::to_string(c.FIELD); }})
#define FEDRCVAR_BOOL(KEY, FIELD)                                                           \
  k.push_back({KEY, [](C& c, S v) { c.FIELD = parse_bool(KEY, v); },                        \
               [](const C& c) { return std::string(c.FIELD ? "true" : "false"); }})
#define FEDRCVAR_STR(KEY, FIELD)                                                            \
  k.push_back({KEY, [](C& c, S v) { c.FIELD = v; }, [](const C& c) { return c.FIELD; }})

    FEDRCVAR_STR("dataset.source", dataset.source);
    FEDRCVAR_SIZE("dataset.n", dataset.n);
    FEDRCVAR_SIZE("dataset.dim", dataset.dim);
    FEDRCVAR_REAL("dataset.minority_frac", dataset.minority_frac);
    FEDRCVAR_REAL("dataset.label_noise_minority", dataset.label_noise_minority);
    FEDRCVAR_REAL("dataset.majority_separation", dataset.majority_separation);
    FEDRCVAR_REAL("dataset.minority_separation", dataset.minority_separation);
    FEDRCVAR_REAL("dataset.minority_offset", dataset.minority_offset);
    FEDRCVAR_REAL("dataset.spread", dataset.spread);
    FEDRCVAR_U64("dataset.seed", dataset.seed);
    FEDRCVAR_REAL("dataset.test_fraction", dataset.test_fraction);
    FEDRCVAR_STR("dataset.csv_path", dataset.csv_path);
    FEDRCVAR_STR("dataset.label_column", dataset.label_column);
    k.push_back({"dataset.feature_columns",
                 [](C& c, S v) { c.dataset.feature_columns = split_list(v); },
                 [](const C& c) { return join_list(c.dataset.feature_columns); }});
    FEDRCVAR_STR("dataset.positive_label", dataset.positive_label);
    FEDRCVAR_STR("dataset.fold_column", dataset.fold_column);
    k.push_back({"dataset.test_fold",
                 [](C& c, S v) { c.dataset.test_fold = parse_integer<long>("dataset.test_fold", v); },
                 [](const C& c) { return std::to_string(c.dataset.test_fold); }});

    k.push_back({"partition.strategy",
                 [](C& c, S v) {
                   c.partition.strategy = parse_enum("partition.strategy", v, parse_partition_strategy);
                 },
                 [](const C& c) { return std::string(to_string(c.partition.strategy)); }});
    FEDRCVAR_SIZE("partition.num_clients", partition.num_clients);
    FEDRCVAR_REAL("partition.alpha", partition.alpha);
    FEDRCVAR_U64("partition.seed", partition.seed);

    k.push_back({"model.loss",
                 [](C& c, S v) { c.model.kind = parse_enum("model.loss", v, parse_loss_kind); },
                 [](const C& c) { return std::string(to_string(c.model.kind)); }});
    FEDRCVAR_REAL("model.domain_radius", model.domain_radius_M);
    FEDRCVAR_REAL("model.feature_radius", model.feature_radius_R);
    FEDRCVAR_REAL("model.label_bound", model.label_bound);

    FEDRCVAR_REAL("objective.epsilon", objective.epsilon);
    FEDRCVAR_REAL("objective.rho", objective.rho);
    FEDRCVAR_REAL("objective.gamma", objective.gamma);
    FEDRCVAR_REAL("objective.loss_bound", objective.loss_bound);
    k.push_back({"objective.smooth",
                 [](C& c, S v) { c.objective.smooth = parse_enum("objective.smooth", v, parse_smooth_kind); },
                 [](const C& c) { return std::string(to_string(c.objective.smooth)); }});

    k.push_back({"federation.algorithm",
                 [](C& c, S v) {
                   c.federation.algorithm = parse_enum("federation.algorithm", v, parse_algorithm);
                 },
                 [](const C& c) { return std::string(to_string(c.federation.algorithm)); }});
    FEDRCVAR_SIZE("federation.rounds", federation.rounds);
    FEDRCVAR_SIZE("federation.local_steps", federation.local_steps);
    k.push_back({"federation.eta",
                 [](C& c, S v) {
                   if (v == "lemma2")
                     c.federation.eta = LearningRate::lemma2();
                   else if (v == "lemma3")
                     c.federation.eta = LearningRate::lemma3();
                   else
                     c.federation.eta = LearningRate::fixed(parse_real("federation.eta", v));
                 },
                 [](const C& c) -> std::string {
                   switch (c.federation.eta.mode) {
                     case LearningRate::Mode::Lemma2Auto: return "lemma2";
                     case LearningRate::Mode::Lemma3Auto: return "lemma3";
                     case LearningRate::Mode::Fixed: break;
                   }
                   return format_double(c.federation.eta.value);
                 }});
    k.push_back({"federation.batch_size",
                 [](C& c, S v) {
                   c.federation.batch_size =
                       v == "full" ? 0 : parse_integer<std::size_t>("federation.batch_size", v);
                   if (v != "full" && c.federation.batch_size == 0)
                     throw ConfigError("federation.batch_size", "must be positive or 'full'");
                 },
                 [](const C& c) {
                   return c.federation.batch_size == 0 ? std::string("full")
                                                       : std::to_string(c.federation.batch_size);
                 }});
    FEDRCVAR_U64("federation.seed", federation.seed);
    FEDRCVAR_BOOL("federation.resample_per_local_step", federation.resample_per_local_step);
    FEDRCVAR_BOOL("federation.project_theta_locally", federation.project_theta_locally);
    FEDRCVAR_BOOL("federation.project_c_locally", federation.project_c_locally);

    FEDRCVAR_STR("output.dir", output.dir);
    FEDRCVAR_STR("output.run_id", output.run_id);
    FEDRCVAR_BOOL("output.record_wall_time", output.record_wall_time);
#undef FEDRCVAR_REAL
#undef FEDRCVAR_SIZE
#undef FEDRCVAR_U64
#undef FEDRCVAR_BOOL
#undef FEDRCVAR_STR
    return k;
  }();
  return keys;
}

/// Splits a config document into (line number, key, value) triples.
struct ConfigEntry {
  std::size_t line;
  std::string key;
  std::string value;
};

inline std::vector<ConfigEntry> tokenize_config(std::istream& in) {
  std::vector<ConfigEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no), "expected 'block.key = value'");
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "missing key");
    for (const auto& e : out)
      if (e.key == key) throw ConfigError(key, "repeated on line " + std::to_string(line_no));
    out.push_back({line_no, std::move(key), std::move(value)});
  }
  return out;
}

}  // namespace detail

inline void RunConfig::validate() const {
  if (dataset.source == "planted") {
    if (dataset.n < 2) throw ConfigError("dataset.n", "need at least two samples");
    if (dataset.dim < 2) throw ConfigError("dataset.dim", "need at least two features");
    if (!(dataset.minority_frac > 0.0 && dataset.minority_frac < 1.0))
      throw ConfigError("dataset.minority_frac", "must lie in (0, 1)");
    if (!(dataset.label_noise_minority >= 0.0 && dataset.label_noise_minority <= 0.5))
      throw ConfigError("dataset.label_noise_minority", "must lie in [0, 0.5]");
    if (!(dataset.spread > 0.0)) throw ConfigError("dataset.spread", "must be positive");
  } else if (dataset.source == "csv") {
    if (dataset.csv_path.empty()) throw ConfigError("dataset.csv_path", "required for csv data");
    if (dataset.label_column.empty())
      throw ConfigError("dataset.label_column", "required for csv data");
    if (dataset.feature_columns.empty())
      throw ConfigError("dataset.feature_columns", "required for csv data");
  } else {
    throw ConfigError("dataset.source", "expected 'planted' or 'csv', got '" + dataset.source + "'");
  }
  if (!(dataset.test_fraction >= 0.0 && dataset.test_fraction < 1.0))
    throw ConfigError("dataset.test_fraction", "must lie in [0, 1)");

  if (partition.num_clients == 0) throw ConfigError("partition.num_clients", "must be at least 1");
  if (!(partition.alpha > 0.0)) throw ConfigError("partition.alpha", "must be positive");

  if (!(model.domain_radius_M > 0.0)) throw ConfigError("model.domain_radius", "must be positive");
  if (!(model.feature_radius_R > 0.0)) throw ConfigError("model.feature_radius", "must be positive");
  if (!(model.label_bound > 0.0)) throw ConfigError("model.label_bound", "must be positive");

  if (!(objective.epsilon >= 0.0 && objective.epsilon <= 1.0))
    throw ConfigError("objective.epsilon", "must lie in [0, 1], got " + detail::format_double(objective.epsilon));
  if (!(objective.rho > 0.0 && objective.rho < 1.0))
    throw ConfigError("objective.rho", "must lie in (0, 1), got " + detail::format_double(objective.rho));
  if (!(objective.gamma > 0.0))
    throw ConfigError("objective.gamma", "must be positive, got " + detail::format_double(objective.gamma));
  if (objective.loss_bound != kLossBound) throw ConfigError("objective.loss_bound", "must equal 1");

  if (federation.rounds == 0) throw ConfigError("federation.rounds", "must be at least 1");
  if (federation.local_steps == 0) throw ConfigError("federation.local_steps", "must be at least 1");
  if (federation.eta.mode == LearningRate::Mode::Fixed && !(federation.eta.value >= 0.0))
    throw ConfigError("federation.eta", "must be non-negative, 'lemma2' or 'lemma3'");
  if (federation.eta.mode == LearningRate::Mode::Lemma3Auto && federation.local_steps != 1)
    throw ConfigError("federation.eta", "lemma3 requires federation.local_steps = 1");
  if (output.run_id.empty() || output.run_id.find_first_of("/\\") != std::string::npos)
    throw ConfigError("output.run_id", "must be a non-empty file name");
}

inline FederationConfig RunConfig::federation_config(std::size_t workers) const {
  FederationConfig f;
  f.rounds = federation.rounds;
  f.local_steps = federation.local_steps;
  f.eta = federation.eta;
  f.seed = federation.seed;
  f.resample_per_local_step = federation.resample_per_local_step;
  f.project_theta_locally = federation.project_theta_locally;
  f.project_c_locally = federation.project_c_locally;
  f.track_objective = false;
  f.workers = workers;
  if (federation.batch_size > 0)
    for (std::size_t k = 0; k < partition.num_clients; ++k) f.batch_sizes[k] = federation.batch_size;
  return f;
}

/// Parses a config document on top of the defaults and validates it.
inline RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  const auto& keys = detail::run_config_keys();
  for (const auto& e : detail::tokenize_config(in)) {
    const auto it = std::find_if(keys.begin(), keys.end(),
                                 [&](const detail::KeyBinding& b) { return b.key == e.key; });
    if (it == keys.end())
      throw ConfigError(e.key, "unknown key (line " + std::to_string(e.line) + ")");
    it->set(cfg, e.value);
  }
  cfg.validate();
  return cfg;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  return parse_run_config(in);
}

/// Every key in a fixed order, so that parsing the result gives back an
/// equal configuration.
inline std::string serialize(const RunConfig& cfg) {
  std::string out;
  std::string block;
  for (const auto& k : detail::run_config_keys()) {
    const auto this_block = k.key.substr(0, k.key.find('.'));
    if (!block.empty() && this_block != block) out += '\n';
    block = this_block;
    out += k.key + " = " + k.get(cfg) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SweepGrid {
  std::vector<double> epsilon;
  std::vector<double> rho;
  std::vector<std::uint64_t> seeds;

  bool operator==(const SweepGrid&) const = default;

  void validate() const {
    if (epsilon.empty()) throw ConfigError("sweep.epsilon", "empty list");
    if (rho.empty()) throw ConfigError("sweep.rho", "empty list");
    if (seeds.empty()) throw ConfigError("sweep.seeds", "empty list");
    for (double e : epsilon)
      if (!(e >= 0.0 && e <= 1.0))
        throw ConfigError("sweep.epsilon", "value " + detail::format_double(e) + " outside [0, 1]");
    for (double r : rho)
      if (!(r > 0.0 && r < 1.0))
        throw ConfigError("sweep.rho", "value " + detail::format_double(r) + " outside (0, 1)");
  }

  std::size_t size() const { return epsilon.size() * rho.size() * seeds.size(); }
};

inline SweepGrid parse_sweep_grid(std::istream& in) {
  SweepGrid g;
  for (const auto& e : detail::tokenize_config(in)) {
    const auto items = detail::split_list(e.value);
    if (e.key == "sweep.epsilon") {
      for (const auto& v : items) g.epsilon.push_back(detail::parse_real(e.key, v));
    } else if (e.key == "sweep.rho") {
      for (const auto& v : items) g.rho.push_back(detail::parse_real(e.key, v));
    } else if (e.key == "sweep.seeds") {
      for (const auto& v : items) g.seeds.push_back(detail::parse_integer<std::uint64_t>(e.key, v));
    } else {
      throw ConfigError(e.key, "unknown key (line " + std::to_string(e.line) + ")");
    }
  }
  g.validate();
  return g;
}

inline SweepGrid load_sweep_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("grid", "cannot open '" + path + "'");
  return parse_sweep_grid(in);
}

inline std::string serialize(const SweepGrid& g) {
  std::string out = "sweep.epsilon = ";
  for (std::size_t i = 0; i < g.epsilon.size(); ++i)
    out += (i ? ", " : "") + detail::format_double(g.epsilon[i]);
  out += "\nsweep.rho = ";
  for (std::size_t i = 0; i < g.rho.size(); ++i)
    out += (i ? ", " : "") + detail::format_double(g.rho[i]);
  out += "\nsweep.seeds = ";
  for (std::size_t i = 0; i < g.seeds.size(); ++i)
    out += (i ? ", " : "") + std::to_string(g.seeds[i]);
  return out + '\n';
}

}  // namespace fedrcvar
