#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fedrcvar/acceptance.hpp"
#include "fedrcvar/runner.hpp"

namespace fedrcvar {
namespace {

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name)
      : dir(fs::temp_directory_path() / "fedrcvar-tests" / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

const char* kMinimal =
    "dataset.n = 400\n"
    "dataset.dim = 3\n"
    "dataset.seed = 5\n"
    "partition.num_clients = 2\n"
    "federation.rounds = 30\n"
    "federation.local_steps = 2\n"
    "federation.eta = 0.5\n"
    "federation.batch_size = 16\n"
    "output.run_id = mini\n";

// kMinimal with some keys replaced or added.
std::string minimal_with(const std::map<std::string, std::string>& overrides) {
  std::istringstream in(kMinimal);
  std::string line, out;
  auto rest = overrides;
  while (std::getline(in, line)) {
    const auto key = line.substr(0, line.find(" ="));
    if (auto it = rest.find(key); it != rest.end()) {
      out += key + " = " + it->second + "\n";
      rest.erase(it);
    } else {
      out += line + "\n";
    }
  }
  for (const auto& [k, v] : rest) out += k + " = " + v + "\n";
  return out;
}

std::string bytes(const fs::path& p) { return fedrcvar::detail::read_file(p); }

TEST(CmdTrain, MinimalConfigWritesModelAndMetrics) {
  Workspace ws("train_minimal");
  const auto cfg = ws.write("run.cfg", kMinimal);
  CommandOptions opt;
  opt.out = ws.path("out");
  std::ostringstream log, err;
  ASSERT_EQ(cmd_train(cfg, opt, log, err), 0) << err.str();
  const auto model = load_model(ws.dir / "out" / "mini");
  EXPECT_EQ(model.dimension(), 3u);
  EXPECT_EQ(model.rounds, 30u);
  const auto rows = read_metrics(ws.dir / "out" / "metrics.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].metrics.split, "train");
  EXPECT_EQ(rows[1].metrics.split, "test");
  EXPECT_EQ(rows[1].final_c, model.state.c);
  EXPECT_FALSE(rows[1].wall_time_s.has_value());

  // a second run appends
  ASSERT_EQ(cmd_train(cfg, opt, log, err), 0);
  EXPECT_EQ(read_metrics(ws.dir / "out" / "metrics.csv").size(), 4u);
}

TEST(CmdTrain, InvalidRhoNamesKey) {
  Workspace ws("train_bad_rho");
  const auto cfg = ws.write("run.cfg", std::string(kMinimal) + "objective.rho = 1.5\n");
  CommandOptions opt;
  opt.out = ws.path("out");
  std::ostringstream log, err;
  EXPECT_NE(cmd_train(cfg, opt, log, err), 0);
  EXPECT_NE(err.str().find("objective.rho"), std::string::npos) << err.str();
  EXPECT_FALSE(fs::exists(ws.dir / "out"));
}

TEST(CmdTrain, RepeatedRunsAreByteIdentical) {
  Workspace ws("train_repeat");
  const auto cfg = ws.write("run.cfg", kMinimal);
  std::ostringstream log, err;
  for (const char* sub : {"a", "b"}) {
    CommandOptions opt;
    opt.out = ws.path(sub);
    opt.threads = sub[0] == 'a' ? 1 : 3;
    ASSERT_EQ(cmd_train(cfg, opt, log, err), 0);
  }
  for (const char* f : {"mini/model.bin", "mini/model.json", "metrics.csv"})
    EXPECT_EQ(bytes(ws.dir / "a" / f), bytes(ws.dir / "b" / f)) << f;
}

TEST(CmdTrain, SeedOverride) {
  Workspace ws("train_seed");
  const auto cfg = ws.write("run.cfg", kMinimal);
  CommandOptions opt;
  opt.out = ws.path("out");
  opt.seed = 77;
  std::ostringstream log, err;
  ASSERT_EQ(cmd_train(cfg, opt, log, err), 0);
  const auto m = load_model(ws.dir / "out" / "mini");
  EXPECT_EQ(m.seed, 77u);
}

TEST(CmdTrain, OutputDirectoryPrecedence) {
  Workspace ws("train_outdir");
  const auto with_dir =
      ws.write("dir.cfg", std::string(kMinimal) + "output.dir = " + ws.path("from_config") + "\n");
  const auto plain = ws.write("plain.cfg", kMinimal);
  std::ostringstream log, err;
  ::setenv("FEDRCVAR_OUT", ws.path("from_env").c_str(), 1);
  CommandOptions opt;
  ASSERT_EQ(cmd_train(plain, opt, log, err), 0);
  ASSERT_EQ(cmd_train(with_dir, opt, log, err), 0);
  opt.out = ws.path("from_flag");
  ASSERT_EQ(cmd_train(with_dir, opt, log, err), 0);
  ::unsetenv("FEDRCVAR_OUT");
  EXPECT_TRUE(fs::exists(ws.dir / "from_env" / "mini" / "model.bin"));
  EXPECT_TRUE(fs::exists(ws.dir / "from_config" / "mini" / "model.bin"));
  EXPECT_TRUE(fs::exists(ws.dir / "from_flag" / "mini" / "model.bin"));
}

TEST(CmdTrain, NumericBlowUpReportsRound) {
  Workspace ws("train_blowup");
  const auto cfg = ws.write("run.cfg", minimal_with({{"federation.eta", "1e308"}, {"objective.epsilon", "0"}, {"objective.rho", "0.01"}}));
  CommandOptions opt;
  opt.out = ws.path("out");
  std::ostringstream log, err;
  EXPECT_EQ(cmd_train(cfg, opt, log, err), 3) << err.str();
  EXPECT_NE(err.str().find("round"), std::string::npos) << err.str();
}

TEST(CmdSweep, GridCardinalityAndCellFiles) {
  Workspace ws("sweep_grid");
  const auto cfg = ws.write("run.cfg", kMinimal);
  const auto grid = ws.write("grid.cfg", "sweep.epsilon = 0.1, 0.5\nsweep.rho = 0.2, 0.5\nsweep.seeds = 4\n");
  CommandOptions opt;
  opt.out = ws.path("out");
  opt.threads = 3;
  std::ostringstream log, err;
  ASSERT_EQ(cmd_sweep(cfg, grid, opt, log, err), 0) << err.str();
  const auto rows = read_metrics(ws.dir / "out" / "mini" / "frontier.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.error.empty());
    EXPECT_EQ(r.metrics.split, "test");
    EXPECT_EQ(r.seed, 4u);
  }
  EXPECT_EQ(rows[0].metrics.epsilon, 0.1);
  EXPECT_EQ(rows[1].metrics.rho, 0.5);
  std::size_t cells = 0;
  for (const auto& e : fs::directory_iterator(ws.dir / "out" / "mini" / "cells")) {
    ++cells;
    EXPECT_EQ(e.path().filename().string().rfind(".tmp", 0), std::string::npos);
    EXPECT_TRUE(fs::exists(e.path() / "model.bin"));
    EXPECT_EQ(read_metrics(e.path() / "metrics.csv").size(), 2u);
  }
  EXPECT_EQ(cells, 4u);
}

TEST(CmdSweep, FailedCellsAreRecorded) {
  Workspace ws("sweep_fail");
  const auto cfg = ws.write("run.cfg", minimal_with({{"federation.eta", "1e308"}, {"objective.epsilon", "0"}, {"objective.rho", "0.01"}}));
  const auto grid = ws.write("grid.cfg", "sweep.epsilon = 0.1, 0.5\nsweep.rho = 0.01\nsweep.seeds = 1\n");
  CommandOptions opt;
  opt.out = ws.path("out");
  std::ostringstream log, err;
  ASSERT_EQ(cmd_sweep(cfg, grid, opt, log, err), 0);
  const auto rows = read_metrics(ws.dir / "out" / "mini" / "frontier.csv");
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) EXPECT_NE(r.error.find("round"), std::string::npos) << r.error;
}

TEST(CmdEval, ReproducesTrainMetrics) {
  Workspace ws("eval_roundtrip");
  const auto cfg = ws.write("run.cfg", kMinimal);
  CommandOptions opt;
  opt.out = ws.path("out");
  std::ostringstream log, err;
  ASSERT_EQ(cmd_train(cfg, opt, log, err), 0);
  const auto trained = read_metrics(ws.dir / "out" / "metrics.csv");
  CommandOptions eval_opt;
  eval_opt.out = ws.path("eval");
  std::ostringstream out;
  ASSERT_EQ(cmd_eval(ws.path("out/mini"), cfg, {}, false, eval_opt, out, err), 0) << err.str();
  const auto evaluated = read_metrics(ws.dir / "eval" / "metrics.csv");
  ASSERT_EQ(evaluated.size(), 2u);
  EXPECT_EQ(evaluated[0], trained[0]);
  EXPECT_EQ(evaluated[1], trained[1]);
}

TEST(CmdEval, RhoListAndUniformFlag) {
  Workspace ws("eval_uniform");
  const auto cfg = ws.write("run.cfg", kMinimal);
  CommandOptions opt;
  opt.out = ws.path("eval");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_eval("", cfg, {0.1, 0.5}, true, opt, out, err), 0) << err.str();
  const auto rows = read_metrics(ws.dir / "eval" / "metrics.csv");
  ASSERT_EQ(rows.size(), 4u);
  const auto data = build_data(parse_run_config_text(kMinimal));
  const double u = uniform_classifier_risk(BoundedLossSpec{}, data.test.samples);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.metrics.utility_risk, u, 1e-15);
    EXPECT_NEAR(r.metrics.worst_group_risk, u, 1e-15);
  }
  EXPECT_EQ(rows[0].metrics.rho, 0.1);
  EXPECT_EQ(rows[1].metrics.rho, 0.5);
}

TEST(CmdEval, DimensionMismatch) {
  Workspace ws("eval_dim");
  const auto cfg = ws.write("run.cfg", kMinimal);
  CommandOptions opt;
  opt.out = ws.path("out");
  std::ostringstream log, err;
  ASSERT_EQ(cmd_train(cfg, opt, log, err), 0);
  const auto other = ws.write("other.cfg", minimal_with({{"dataset.dim", "4"}}));
  std::ostringstream out, err2;
  EXPECT_NE(cmd_eval(ws.path("out/mini"), other, {}, false, {}, out, err2), 0);
  EXPECT_NE(err2.str().find("dimension"), std::string::npos);
}

TEST(Verify, RegistryCoversEveryCriterion) {
  const auto& props = acceptance::properties();
  EXPECT_EQ(props.size(), 13u);
  for (int i = 1; i <= 12; ++i) {
    const auto id = std::to_string(i);
    EXPECT_EQ(std::count_if(props.begin(), props.end(), [&](const auto& p) { return p.id == id; }), 1)
        << id;
  }
}

TEST(Verify, ReportHasOneLinePerSelectedProperty) {
  std::ostringstream out;
  const auto reports = acceptance::run_all({}, {"3", "4"}, out);
  ASSERT_EQ(reports.size(), 2u);
  for (const auto& r : reports) {
    EXPECT_TRUE(r.pass) << acceptance::format_report(r);
    EXPECT_GT(r.samples, 0u);
  }
  std::size_t lines = 0;
  for (char ch : out.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 2u);
}

TEST(Verify, CorruptedSmoothingFailsTheSandwich) {
  acceptance::Hooks hooks;
  const auto clean = acceptance::run_property(acceptance::properties()[0], hooks);
  EXPECT_TRUE(clean.pass) << acceptance::format_report(clean);
  hooks.smoothing_corruption = 2.0;
  const auto broken = acceptance::run_property(acceptance::properties()[0], hooks);
  EXPECT_FALSE(broken.pass);
  EXPECT_LT(broken.worst_margin, 0.0);
  const auto line = acceptance::format_report(broken);
  EXPECT_EQ(line.rfind("FAIL", 0), 0u);
  EXPECT_NE(line.find("smoothing sandwich"), std::string::npos);
}

TEST(Spearman, TiesAndDirections) {
  using acceptance::detail::spearman;
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  // ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4)
  EXPECT_NEAR(spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 4.5 / std::sqrt(4.5 * 5.0), 1e-15);
}

#ifdef FEDRCVAR_CLI
std::string run_cli(const std::string& args, int& status) {
  const std::string cmd = std::string(FEDRCVAR_CLI) + " " + args + " 2>&1";
  std::string output;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  char buf[4096];
  while (pipe && std::fgets(buf, sizeof buf, pipe)) output += buf;
  const int raw = pipe ? ::pclose(pipe) : -1;
  status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return output;
}

TEST(Cli, TrainAndEvalThroughTheBinary) {
  Workspace ws("cli_train");
  const auto cfg = ws.write("run.cfg", kMinimal);
  int status = 0;
  run_cli("train --config " + cfg + " --out " + ws.path("out") + " --threads 2", status);
  EXPECT_EQ(status, 0);
  EXPECT_TRUE(fs::exists(ws.dir / "out" / "mini" / "model.json"));
  const auto out = run_cli("eval --model " + ws.path("out/mini") + " --config " + cfg +
                               " --rho 0.1,0.5",
                           status);
  EXPECT_EQ(status, 0);
  EXPECT_NE(out.find("run_id,seed"), std::string::npos);
  const auto bad = ws.write("bad.cfg", "objective.rho = 1.5\n");
  const auto msg = run_cli("train --config " + bad, status);
  EXPECT_EQ(status, 2);
  EXPECT_NE(msg.find("objective.rho"), std::string::npos);
}

TEST(Cli, VerifyNegativeControlAndListing) {
  int status = 0;
  const auto list = run_cli("verify --list", status);
  EXPECT_EQ(status, 0);
  std::size_t lines = 0;
  for (char ch : list) lines += ch == '\n';
  EXPECT_EQ(lines, acceptance::properties().size());
  const auto good = run_cli("verify --only 1", status);
  EXPECT_EQ(status, 0) << good;
  const auto bad = run_cli("verify --only 1 --corrupt-smoothing 2", status);
  EXPECT_EQ(status, 1);
  EXPECT_NE(bad.find("FAIL  [1] smoothing sandwich"), std::string::npos) << bad;
}
#endif

}  // namespace
}  // namespace fedrcvar
