#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>

#include "fedrcvar/calibration.hpp"
#include "fedrcvar/config.hpp"
#include "fedrcvar/rng.hpp"

namespace fedrcvar {
namespace {

RunConfig parse(const std::string& text) { return parse_run_config_text(text); }

// Runs `text` through the parser and returns the key path of the error.
std::string error_key(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.key_path();
  }
  return "<no error>";
}

TEST(RunConfig, DefaultsRoundTrip) {
  const RunConfig d;
  const auto text = serialize(d);
  EXPECT_EQ(parse(text), d);
  EXPECT_EQ(serialize(parse(text)), text);
}

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  EXPECT_EQ(parse("# nothing here\n\n"), RunConfig{});
}

TEST(RunConfig, RandomConfigsRoundTrip) {
  Rng rng(501);
  for (int i = 0; i < 500; ++i) {
    RunConfig c;
    c.dataset.n = 2 + uniform_index(rng, 100000);
    c.dataset.minority_frac = 0.01 + 0.98 * uniform01(rng);
    c.dataset.label_noise_minority = 0.5 * uniform01(rng);
    c.dataset.spread = 0.01 + uniform01(rng);
    c.dataset.seed = rng();
    c.dataset.test_fraction = 0.9 * uniform01(rng);
    c.dataset.feature_columns = {"a", "b c"};
    c.partition.strategy = static_cast<PartitionStrategy>(uniform_index(rng, 4));
    c.partition.alpha = std::exp(uniform(rng, -5.0, 5.0));
    c.model.kind = i % 2 ? LossKind::ScaledSquared : LossKind::ScaledLogistic;
    c.model.domain_radius_M = 0.1 + 20.0 * uniform01(rng);
    c.objective.epsilon = uniform01(rng);
    c.objective.rho = 0.001 + 0.998 * uniform01(rng);
    c.objective.gamma = std::exp(uniform(rng, -8.0, 0.0));
    c.objective.smooth = static_cast<SmoothKind>(uniform_index(rng, 3));
    c.federation.algorithm = i % 3 ? Algorithm::FedSRCVaR : Algorithm::FedAvg;
    c.federation.eta = i % 4 == 0 ? LearningRate::lemma2() : LearningRate::fixed(uniform01(rng));
    c.federation.batch_size = uniform_index(rng, 3) * 17;
    c.federation.resample_per_local_step = i % 2;
    c.output.record_wall_time = i % 5 == 0;
    const auto again = parse(serialize(c));
    ASSERT_EQ(again, c) << serialize(c);
  }
}

TEST(RunConfig, KeyValueSyntax) {
  const auto c = parse(
      "objective.rho=0.3\n"
      "  federation.eta   =   lemma3   \r\n"
      "# comment = ignored\n"
      "federation.batch_size = full\n"
      "dataset.feature_columns = x1 , x2,x3\n");
  EXPECT_EQ(c.objective.rho, 0.3);
  EXPECT_EQ(c.federation.eta.mode, LearningRate::Mode::Lemma3Auto);
  EXPECT_EQ(c.federation.batch_size, 0u);
  EXPECT_EQ(c.dataset.feature_columns, (std::vector<std::string>{"x1", "x2", "x3"}));
}

TEST(RunConfig, ErrorsNameTheKeyPath) {
  EXPECT_EQ(error_key("objective.rho = 1.5\n"), "objective.rho");
  EXPECT_EQ(error_key("objective.epsilon = -0.1\n"), "objective.epsilon");
  EXPECT_EQ(error_key("objective.gamma = 0\n"), "objective.gamma");
  EXPECT_EQ(error_key("objective.loss_bound = 2\n"), "objective.loss_bound");
  EXPECT_EQ(error_key("objective.smooth = hinge\n"), "objective.smooth");
  EXPECT_EQ(error_key("dataset.bogus = 1\n"), "dataset.bogus");
  EXPECT_EQ(error_key("dataset.n = 1e4\n"), "dataset.n");
  EXPECT_EQ(error_key("dataset.source = parquet\n"), "dataset.source");
  EXPECT_EQ(error_key("dataset.source = csv\n"), "dataset.csv_path");
  EXPECT_EQ(error_key("dataset.minority_frac = 1\n"), "dataset.minority_frac");
  EXPECT_EQ(error_key("partition.num_clients = 0\n"), "partition.num_clients");
  EXPECT_EQ(error_key("partition.strategy = random\n"), "partition.strategy");
  EXPECT_EQ(error_key("model.loss = hinge\n"), "model.loss");
  EXPECT_EQ(error_key("model.domain_radius = -1\n"), "model.domain_radius");
  EXPECT_EQ(error_key("federation.rounds = 0\n"), "federation.rounds");
  EXPECT_EQ(error_key("federation.eta = fast\n"), "federation.eta");
  EXPECT_EQ(error_key("federation.eta = lemma3\nfederation.local_steps = 2\n"), "federation.eta");
  EXPECT_EQ(error_key("federation.batch_size = 0\n"), "federation.batch_size");
  EXPECT_EQ(error_key("federation.resample_per_local_step = yes\n"),
            "federation.resample_per_local_step");
  EXPECT_EQ(error_key("output.run_id = a/b\n"), "output.run_id");
  EXPECT_EQ(error_key("objective.rho = 0.2\nobjective.rho = 0.3\n"), "objective.rho");
  EXPECT_EQ(error_key("objective.rho 0.2\n"), "line 1");
  EXPECT_EQ(error_key("objective.rho = nan\n"), "objective.rho");
}

TEST(RunConfig, MessageMentionsKeyPath) {
  try {
    parse("objective.rho = 1.5\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("objective.rho"), std::string::npos);
  }
}

TEST(RunConfig, MissingFileIsConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(RunConfig, FederationConfigCarriesBatchSizes) {
  auto c = parse("federation.batch_size = 32\npartition.num_clients = 3\nfederation.seed = 9\n");
  const auto f = c.federation_config(2);
  EXPECT_EQ(f.batch_sizes.size(), 3u);
  EXPECT_EQ(f.batch_sizes.at(2), 32u);
  EXPECT_EQ(f.seed, 9u);
  EXPECT_EQ(f.workers, 2u);
  EXPECT_FALSE(f.track_objective);
  c.federation.batch_size = 0;
  EXPECT_TRUE(c.federation_config().batch_sizes.empty());
}

TEST(SweepGrid, ParseAndRoundTrip) {
  std::istringstream in("sweep.epsilon = 0.01, 0.1, 1\nsweep.rho = 0.2\nsweep.seeds = 1, 2, 3\n");
  const auto g = parse_sweep_grid(in);
  EXPECT_EQ(g.epsilon, (std::vector<double>{0.01, 0.1, 1.0}));
  EXPECT_EQ(g.size(), 9u);
  std::istringstream again(serialize(g));
  EXPECT_EQ(parse_sweep_grid(again), g);
}

TEST(SweepGrid, Errors) {
  auto key = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_sweep_grid(in);
    } catch (const ConfigError& e) {
      return e.key_path();
    }
    return std::string("<no error>");
  };
  EXPECT_EQ(key("sweep.epsilon = 0.1\nsweep.seeds = 1\n"), "sweep.rho");
  EXPECT_EQ(key("sweep.epsilon = 0.1\nsweep.rho = 1.0\nsweep.seeds = 1\n"), "sweep.rho");
  EXPECT_EQ(key("sweep.epsilon = 1.1\nsweep.rho = 0.5\nsweep.seeds = 1\n"), "sweep.epsilon");
  EXPECT_EQ(key("sweep.epsilon = 0.1\nsweep.rho = 0.5\nsweep.seeds = -1\n"), "sweep.seeds");
  EXPECT_EQ(key("sweep.epsilon = 0.1\nsweep.rho = 0.5\nsweep.seeds = 1\nsweep.gamma = 2\n"),
            "sweep.gamma");
}

// The shipped configs for the acceptance instances match the frozen
// built-in instances.
TEST(ShippedConfigs, MatchCalibratedInstances) {
  const std::filesystem::path dir = FEDRCVAR_SOURCE_DIR "/configs";
  EXPECT_EQ(load_run_config((dir / "acceptance_planted.cfg").string()),
            calibration::planted_instance());
  EXPECT_EQ(load_run_config((dir / "acceptance_critical_rho.cfg").string()),
            calibration::critical_rho_instance());
  EXPECT_EQ(load_run_config((dir / "acceptance_convergence.cfg").string()),
            calibration::convergence_instance());
  const auto grid = load_sweep_grid((dir / "acceptance_frontier_grid.cfg").string());
  EXPECT_EQ(grid.epsilon, calibration::frontier_epsilons());
  EXPECT_EQ(grid.rho, (std::vector<double>{calibration::kFrontierRho, calibration::kLargeRho}));
  EXPECT_EQ(grid.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(ShippedConfigs, AllParse) {
  for (const auto& e : std::filesystem::directory_iterator(FEDRCVAR_SOURCE_DIR "/configs")) {
    const auto name = e.path().filename().string();
    if (name.find("grid") != std::string::npos)
      EXPECT_NO_THROW(load_sweep_grid(e.path().string())) << name;
    else
      EXPECT_NO_THROW(load_run_config(e.path().string())) << name;
  }
}

}  // namespace
}  // namespace fedrcvar
