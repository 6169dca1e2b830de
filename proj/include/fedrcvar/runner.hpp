#pragma once

// Run orchestration behind the command-line tool: one training run, a sweep
// over (epsilon, rho, seed) cells, and evaluation of a saved model.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "fedrcvar/artifact.hpp"
#include "fedrcvar/config.hpp"
#include "fedrcvar/data.hpp"
#include "fedrcvar/federation.hpp"
#include "fedrcvar/metrics.hpp"

namespace fedrcvar {

/// Train/test data described by the dataset block.
inline SplitData build_data(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.source == "csv") {
    CsvSchema schema;
    schema.label_column = d.label_column;
    schema.feature_columns = d.feature_columns;
    if (!d.positive_label.empty()) schema.positive_label = d.positive_label;
    if (!d.fold_column.empty()) schema.fold_column = d.fold_column;
    schema.test_fold = d.test_fold;
    schema.feature_radius_R = cfg.model.feature_radius_R;
    auto split = load_csv(d.csv_path, schema);
    if (d.fold_column.empty() && d.test_fraction > 0.0)
      return split_train_test(split.train, d.test_fraction, d.seed);
    return split;
  }
  PlantedSubgroupOptions opt;
  opt.majority_separation = d.majority_separation;
  opt.minority_separation = d.minority_separation;
  opt.minority_offset = d.minority_offset;
  opt.spread = d.spread;
  opt.feature_radius_R = cfg.model.feature_radius_R;
  const auto data =
      gen_planted_subgroup(d.n, d.dim, d.minority_frac, d.label_noise_minority, d.seed, opt);
  return split_train_test(data, d.test_fraction, d.seed);
}

struct TrainOutcome {
  ModelArtifact artifact;
  std::vector<MetricsRow> rows;  // train, then test when a test split exists
};

/// One training run on prepared data. `workers` only changes scheduling.
inline TrainOutcome train_once(const RunConfig& cfg, const SplitData& data, std::size_t workers = 1) {
  const auto start = std::chrono::steady_clock::now();
  const auto shards = partition(data.train, cfg.partition_plan());
  const auto fc = cfg.federation_config(workers);
  TrainOutcome out;
  auto& a = out.artifact;
  a.spec = cfg.model;
  a.params = cfg.objective;
  a.algorithm = cfg.federation.algorithm;
  a.rounds = cfg.federation.rounds;
  a.local_steps = cfg.federation.local_steps;
  a.seed = cfg.federation.seed;
  a.run_id = cfg.output.run_id;
  if (cfg.federation.algorithm == Algorithm::FedSRCVaR) {
    auto r = run_fedsrcvar(shards, fc, cfg.objective, cfg.model);
    a.params.gamma = r.trace.gamma;
    a.state = std::move(r.averaged);
  } else {
    a.state = run_fedavg(shards, fc, cfg.model).averaged;
  }
  std::optional<double> wall;
  if (cfg.output.record_wall_time)
    wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  auto row = [&](const Samples& s, const char* split) {
    MetricsRow r;
    r.run_id = a.run_id;
    r.seed = a.seed;
    r.metrics = evaluate(a.state, s, cfg.objective.rho, cfg.model, split);
    r.metrics.epsilon = cfg.objective.epsilon;
    r.final_c = a.state.c;
    r.rounds = a.rounds;
    r.local_steps = a.local_steps;
    r.wall_time_s = wall;
    return r;
  };
  out.rows.push_back(row(data.train.samples, "train"));
  if (!data.test.samples.empty()) out.rows.push_back(row(data.test.samples, "test"));
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  std::string out;                    // --out
  std::size_t threads = 1;            // --threads
  std::optional<std::uint64_t> seed;  // --seed
};

/// --out, then output.dir, then $FEDRCVAR_OUT, then ./runs.
inline fs::path resolve_output_dir(const RunConfig& cfg, const CommandOptions& opt) {
  if (!opt.out.empty()) return opt.out;
  if (!cfg.output.dir.empty()) return cfg.output.dir;
  if (const char* env = std::getenv("FEDRCVAR_OUT"); env && *env) return env;
  return "runs";
}

/// Seed override: the federation and partition seeds follow --seed, the
/// dataset stays fixed.
inline void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.federation.seed = seed;
  cfg.partition.seed = seed;
}

namespace detail {

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    err << "aborted: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline void replace_directory(const fs::path& staged, const fs::path& target) {
  if (fs::exists(target)) fs::remove_all(target);
  fs::rename(staged, target);
}

}  // namespace detail

inline int cmd_train(const std::string& config_path, const CommandOptions& opt,
                     std::ostream& log, std::ostream& err) {
  return detail::guarded(err, [&] {
    auto cfg = load_run_config(config_path);
    if (opt.seed) apply_seed(cfg, *opt.seed);
    const auto root = resolve_output_dir(cfg, opt);
    const auto data = build_data(cfg);
    const auto result = train_once(cfg, data, opt.threads);
    save_model(root / cfg.output.run_id, result.artifact);
    append_metrics(root / "metrics.csv", result.rows);
    for (const auto& r : result.rows)
      log << r.metrics.split << ": utility " << r.metrics.utility_risk << ", worst group "
          << r.metrics.worst_group_risk << ", disparity " << r.metrics.disparity << '\n';
    log << "model written to " << (root / cfg.output.run_id).string() << '\n';
    return 0;
  });
}

struct SweepCell {
  double epsilon;
  double rho;
  std::uint64_t seed;

  std::string name() const {
    return "e" + detail::format_double(epsilon) + "_r" + detail::format_double(rho) + "_s" +
           std::to_string(seed);
  }
};

inline std::vector<SweepCell> sweep_cells(const SweepGrid& grid) {
  std::vector<SweepCell> cells;
  for (double e : grid.epsilon)
    for (double r : grid.rho)
      for (std::uint64_t s : grid.seeds) cells.push_back({e, r, s});
  return cells;
}

/// Configuration of one cell: the base config with epsilon, rho and seeds
/// replaced.
inline RunConfig cell_config(const RunConfig& base, const SweepCell& cell) {
  RunConfig c = base;
  c.objective.epsilon = cell.epsilon;
  c.objective.rho = cell.rho;
  apply_seed(c, cell.seed);
  c.output.run_id = base.output.run_id + "_" + cell.name();
  return c;
}

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<TrainOutcome> outcomes;  // artifact state empty for failed cells
  std::vector<std::string> errors;     // empty string for cells that succeeded
};

/// Trains every cell on shared data. Cells run concurrently on `threads`
/// workers; results are stored by cell index, so the output does not depend
/// on scheduling. `on_done` runs on the worker thread for each finished cell.
template <class OnDone>
SweepResult run_sweep(const RunConfig& base, const SweepGrid& grid, const SplitData& data,
                      std::size_t threads, OnDone&& on_done) {
  grid.validate();
  SweepResult res;
  res.cells = sweep_cells(grid);
  const std::size_t n = res.cells.size();
  res.outcomes.resize(n);
  res.errors.resize(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto cfg = cell_config(base, res.cells[i]);
      try {
        cfg.validate();
        res.outcomes[i] = train_once(cfg, data, 1);
        on_done(i, cfg, res.outcomes[i]);
      } catch (const std::exception& e) {
        res.errors[i] = e.what();
        res.outcomes[i].artifact.run_id = cfg.output.run_id;
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return res;
}

inline SweepResult run_sweep(const RunConfig& base, const SweepGrid& grid, const SplitData& data,
                             std::size_t threads) {
  return run_sweep(base, grid, data, threads,
                   [](std::size_t, const RunConfig&, const TrainOutcome&) {});
}

/// One test row per cell; failed cells keep their coordinates and the error.
inline std::vector<MetricsRow> frontier_rows(const SweepResult& res) {
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < res.cells.size(); ++i) {
    MetricsRow r;
    if (res.errors[i].empty()) {
      const auto& rs = res.outcomes[i].rows;
      r = rs.back();
    } else {
      r.run_id = res.outcomes[i].artifact.run_id;
      r.metrics.split = "test";
      r.error = res.errors[i];
    }
    r.seed = res.cells[i].seed;
    r.metrics.epsilon = res.cells[i].epsilon;
    r.metrics.rho = res.cells[i].rho;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Writes <out>/<run_id>/cells/<cell>/{model.bin, model.json, metrics.csv}
/// and <out>/<run_id>/frontier.csv.
inline int cmd_sweep(const std::string& config_path, const std::string& grid_path,
                     const CommandOptions& opt, std::ostream& log, std::ostream& err) {
  return detail::guarded(err, [&] {
    auto base = load_run_config(config_path);
    if (opt.seed) apply_seed(base, *opt.seed);
    const auto grid = load_sweep_grid(grid_path);
    const auto root = resolve_output_dir(base, opt) / base.output.run_id;
    const auto cells_dir = root / "cells";
    fs::create_directories(cells_dir);
    const auto data = build_data(base);
    std::mutex log_mutex;
    const auto res = run_sweep(base, grid, data, opt.threads,
                               [&](std::size_t i, const RunConfig&, const TrainOutcome& o) {
                                 const auto name = sweep_cells(grid)[i].name();
                                 const auto staged = cells_dir / (".tmp-" + name);
                                 if (fs::exists(staged)) fs::remove_all(staged);
                                 save_model(staged, o.artifact);
                                 append_metrics(staged / "metrics.csv", o.rows);
                                 detail::replace_directory(staged, cells_dir / name);
                                 std::lock_guard lock(log_mutex);
                                 log << "cell " << name << " done\n";
                               });
    const auto rows = frontier_rows(res);
    detail::write_file_atomic(root / "frontier.csv", format_table(rows, true));
    std::size_t failed = 0;
    for (const auto& e : res.errors) failed += !e.empty();
    log << rows.size() << " cells, " << failed << " failed; frontier at "
        << (root / "frontier.csv").string() << '\n';
    return 0;
  });
}

/// Metrics of a saved model (or of the uniform classifier) for each rho on
/// every split of the configured data. Rows are printed as a table and, when
/// --out is given, appended to <out>/metrics.csv.
inline int cmd_eval(const std::string& model_path, const std::string& config_path,
                    const std::vector<double>& rhos, bool uniform, const CommandOptions& opt,
                    std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = load_run_config(config_path);
    const auto data = build_data(cfg);
    ModelArtifact a;
    if (uniform) {
      a.spec = cfg.model;
      a.params = cfg.objective;
      a.state = {std::vector<double>(data.train.samples.dim + 1, 0.0), kLossBound};
      a.run_id = "uniform";
    } else {
      if (model_path.empty()) throw ConfigError("model", "no model given");
      a = load_model(model_path);
    }
    if (a.dimension() != data.train.samples.dim)
      throw DataError("model dimension " + std::to_string(a.dimension()) +
                      " does not match dataset dimension " +
                      std::to_string(data.train.samples.dim));
    std::vector<double> levels = rhos.empty() ? std::vector<double>{a.params.rho} : rhos;
    for (double r : levels)
      if (!(r > 0.0 && r < 1.0))
        throw ConfigError("rho", "value " + detail::format_double(r) + " outside (0, 1)");
    std::vector<MetricsRow> rows;
    for (const auto& [samples, split] :
         {std::pair{&data.train.samples, "train"}, std::pair{&data.test.samples, "test"}}) {
      if (samples->empty()) continue;
      for (double rho : levels) {
        MetricsRow r;
        r.run_id = a.run_id;
        r.seed = a.seed;
        r.metrics = evaluate(a.state, *samples, rho, a.spec, split);
        r.metrics.epsilon = a.params.epsilon;
        r.final_c = a.state.c;
        r.rounds = a.rounds;
        r.local_steps = a.local_steps;
        rows.push_back(std::move(r));
      }
    }
    out << format_table(rows, false);
    if (!opt.out.empty()) append_metrics(fs::path(opt.out) / "metrics.csv", rows);
    return 0;
  });
}

}  // namespace fedrcvar
