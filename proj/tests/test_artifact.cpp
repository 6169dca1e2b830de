#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fedrcvar/artifact.hpp"
#include "fedrcvar/rng.hpp"

namespace fedrcvar {
namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "fedrcvar-tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TEST(Weights, LittleEndianLayout) {
  const ModelState s{{1.0}, -2.0};
  const auto bytes = encode_weights(s);
  ASSERT_EQ(bytes.size(), 16u);
  // 1.0 = 0x3ff0000000000000, -2.0 = 0xc000000000000000
  const unsigned char expected[16] = {0, 0, 0, 0, 0, 0, 0xf0, 0x3f, 0, 0, 0, 0, 0, 0, 0, 0xc0};
  EXPECT_EQ(std::memcmp(bytes.data(), expected, 16), 0);
}

TEST(Weights, BitExactRoundTrip) {
  Rng rng(601);
  ModelState s;
  s.theta = {0.0, -0.0, std::numeric_limits<double>::denorm_min(),
             std::numeric_limits<double>::max(), 1.0 / 3.0};
  for (int i = 0; i < 50; ++i) s.theta.push_back(uniform(rng, -10.0, 10.0));
  s.c = 0.123456789;
  const auto back = decode_weights(encode_weights(s), s.theta.size() - 1);
  ASSERT_EQ(back.theta.size(), s.theta.size());
  for (std::size_t j = 0; j < s.theta.size(); ++j)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.theta[j]), std::bit_cast<std::uint64_t>(s.theta[j]));
  EXPECT_EQ(back.c, s.c);
}

TEST(Weights, SizeMismatch) {
  const auto bytes = encode_weights({{1.0, 2.0, 3.0}, 0.5});
  EXPECT_THROW(decode_weights(bytes, 3), DataError);
  EXPECT_THROW(decode_weights(bytes.substr(1), 2), DataError);
  EXPECT_NO_THROW(decode_weights(bytes, 2));
}

ModelArtifact sample_artifact() {
  ModelArtifact a;
  a.state = {{0.1, -0.2, 1e-300, 7.0}, 0.375};
  a.spec.kind = LossKind::ScaledSquared;
  a.spec.domain_radius_M = 3.5;
  a.params.epsilon = 0.3;
  a.params.rho = 0.15;
  a.params.gamma = 1e-3;
  a.params.smooth = SmoothKind::Zang;
  a.algorithm = Algorithm::FedAvg;
  a.rounds = 42;
  a.local_steps = 3;
  a.seed = 123456789012345ULL;
  a.run_id = "r1";
  return a;
}

TEST(ModelFiles, SaveLoadRoundTrip) {
  const auto dir = fresh_dir("model_roundtrip");
  const auto a = sample_artifact();
  save_model(dir, a);
  for (const auto& where : {dir, dir / "model.json"}) {
    const auto b = load_model(where);
    EXPECT_EQ(b.state, a.state);
    EXPECT_EQ(b.dimension(), 3u);
    EXPECT_EQ(b.spec.kind, a.spec.kind);
    EXPECT_EQ(b.spec.domain_radius_M, a.spec.domain_radius_M);
    EXPECT_EQ(b.params.gamma, a.params.gamma);
    EXPECT_EQ(b.params.smooth, a.params.smooth);
    EXPECT_EQ(b.algorithm, a.algorithm);
    EXPECT_EQ(b.rounds, 42u);
    EXPECT_EQ(b.seed, a.seed);
    EXPECT_EQ(b.run_id, "r1");
    EXPECT_EQ(b.build, FEDRCVAR_BUILD_ID);
  }
  EXPECT_EQ(fs::file_size(dir / "model.bin"), 8u * 5u);
  EXPECT_FALSE(fs::exists(dir / "model.bin.tmp"));
}

TEST(ModelFiles, CorruptMetadata) {
  const auto dir = fresh_dir("model_corrupt");
  save_model(dir, sample_artifact());
  std::ofstream(dir / "model.json") << "{\"dimension\": 3}";
  EXPECT_THROW(load_model(dir), DataError);
  std::ofstream(dir / "model.json") << "not json";
  EXPECT_THROW(load_model(dir), DataError);
  EXPECT_THROW(load_model(dir / "missing"), DataError);
}

MetricsRow sample_row(const std::string& split, double u) {
  MetricsRow r;
  r.run_id = "run,with\"comma";
  r.seed = 3;
  r.metrics.epsilon = 0.1;
  r.metrics.rho = 0.2;
  r.metrics.split = split;
  r.metrics.utility_risk = u;
  r.metrics.worst_group_risk = u + 0.1;
  r.metrics.best_group_risk = u - 0.01;
  r.metrics.disparity = 0.11;
  r.metrics.quantile_c = 1.0 / 7.0;
  r.final_c = 0.5;
  r.rounds = 100;
  r.local_steps = 2;
  return r;
}

TEST(MetricsTable, AppendKeepsOneHeaderAndParsesBack) {
  const auto path = fresh_dir("metrics_append") / "metrics.csv";
  const std::vector<MetricsRow> first{sample_row("train", 0.3), sample_row("test", 0.31)};
  auto second = sample_row("test", 1.0 / 3.0);
  second.wall_time_s = 1.25;
  append_metrics(path, first);
  append_metrics(path, {second});
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header,
            "run_id,seed,epsilon,rho,split,utility_risk,worst_group_risk,best_group_risk,"
            "disparity,quantile_c,final_c,rounds_T,tau,wall_time_s");
  const auto rows = read_metrics(path);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], first[0]);
  EXPECT_EQ(rows[1], first[1]);
  EXPECT_EQ(rows[2], second);
}

TEST(MetricsTable, RejectsForeignHeader) {
  const auto path = fresh_dir("metrics_foreign") / "metrics.csv";
  std::ofstream(path) << "a,b,c\n1,2,3\n";
  EXPECT_THROW(append_metrics(path, {sample_row("test", 0.1)}), DataError);
  EXPECT_THROW(read_metrics(path), DataError);
}

TEST(MetricsTable, FrontierWithErrorColumn) {
  const auto path = fresh_dir("metrics_frontier") / "frontier.csv";
  auto ok = sample_row("test", 0.2);
  MetricsRow bad;
  bad.run_id = "cell";
  bad.metrics.split = "test";
  bad.metrics.epsilon = 0.5;
  bad.metrics.rho = 0.9;
  bad.error = "non-finite state at round 3: theta";
  std::ofstream(path) << format_table({ok, bad}, true);
  const auto rows = read_metrics(path);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], ok);
  EXPECT_EQ(rows[1].error, bad.error);
  EXPECT_TRUE(std::isnan(rows[1].metrics.utility_risk));
}

TEST(MetricsTable, MalformedRows) {
  const auto path = fresh_dir("metrics_bad") / "metrics.csv";
  append_metrics(path, {sample_row("test", 0.2)});
  std::ofstream(path, std::ios::app) << "x,1,0.1\n";
  EXPECT_THROW(read_metrics(path), DataError);
}

}  // namespace
}  // namespace fedrcvar
