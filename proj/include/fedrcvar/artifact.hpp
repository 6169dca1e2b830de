#pragma once

// Model artifacts and the metrics table.
//
// A model is two files: `model.bin` holds theta followed by c as
// little-endian float64, `model.json` the metadata needed to use it.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <charconv>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedrcvar/config.hpp"
#include "fedrcvar/error.hpp"
#include "fedrcvar/metrics.hpp"
#include "fedrcvar/model.hpp"
#include "fedrcvar/rcvar.hpp"

#ifndef FEDRCVAR_BUILD_ID
#define FEDRCVAR_BUILD_ID "unknown"
#endif

namespace fedrcvar {

namespace fs = std::filesystem;

struct ModelArtifact {
  ModelState state;
  BoundedLossSpec spec;
  RcvarParams params;
  Algorithm algorithm = Algorithm::FedSRCVaR;
  std::size_t rounds = 0;
  std::size_t local_steps = 0;
  std::uint64_t seed = 0;
  std::string run_id;
  std::string build = FEDRCVAR_BUILD_ID;

  std::size_t dimension() const { return state.theta.empty() ? 0 : state.theta.size() - 1; }
};

namespace detail {

inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void put_le64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xff));
    bits >>= 8;
  }
}

inline double get_le64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode_weights(const ModelState& s) {
  std::string out;
  out.reserve(8 * (s.theta.size() + 1));
  for (double v : s.theta) detail::put_le64(out, v);
  detail::put_le64(out, s.c);
  return out;
}

inline ModelState decode_weights(const std::string& bytes, std::size_t dimension) {
  const std::size_t count = dimension + 2;  // features, bias, c
  if (bytes.size() != 8 * count)
    throw DataError("model.bin holds " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(8 * count) + " for dimension " + std::to_string(dimension));
  ModelState s;
  s.theta.resize(dimension + 1);
  for (std::size_t j = 0; j <= dimension; ++j) s.theta[j] = detail::get_le64(bytes.data() + 8 * j);
  s.c = detail::get_le64(bytes.data() + 8 * (dimension + 1));
  return s;
}

inline nlohmann::ordered_json artifact_metadata(const ModelArtifact& a) {
  nlohmann::ordered_json j;
  j["format"] = "fedrcvar-model-1";
  j["dimension"] = a.dimension();
  j["weights_file"] = "model.bin";
  j["weights_layout"] = "float64 little-endian: theta (features then bias), then c";
  j["loss"] = {{"kind", std::string(to_string(a.spec.kind))},
               {"domain_radius", a.spec.domain_radius_M},
               {"feature_radius", a.spec.feature_radius_R},
               {"label_bound", a.spec.label_bound}};
  j["objective"] = {{"epsilon", a.params.epsilon},
                    {"rho", a.params.rho},
                    {"gamma", a.params.gamma},
                    {"loss_bound", a.params.loss_bound},
                    {"smooth", std::string(to_string(a.params.smooth))}};
  j["algorithm"] = std::string(to_string(a.algorithm));
  j["rounds"] = a.rounds;
  j["local_steps"] = a.local_steps;
  j["seed"] = a.seed;
  j["run_id"] = a.run_id;
  j["build"] = a.build;
  return j;
}

/// Writes model.bin and model.json into `dir`, creating it if needed.
inline void save_model(const fs::path& dir, const ModelArtifact& a) {
  fs::create_directories(dir);
  detail::write_file_atomic(dir / "model.bin", encode_weights(a.state));
  detail::write_file_atomic(dir / "model.json", artifact_metadata(a).dump(2) + "\n");
}

/// Accepts the artifact directory or the path of its model.json.
inline ModelArtifact load_model(const fs::path& where) {
  const fs::path json_path = fs::is_directory(where) ? where / "model.json" : where;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(json_path));
    ModelArtifact a;
    const auto dim = j.at("dimension").get<std::size_t>();
    const auto& loss = j.at("loss");
    a.spec.kind = parse_loss_kind(loss.at("kind").get<std::string>());
    a.spec.domain_radius_M = loss.at("domain_radius").get<double>();
    a.spec.feature_radius_R = loss.at("feature_radius").get<double>();
    a.spec.label_bound = loss.at("label_bound").get<double>();
    const auto& obj = j.at("objective");
    a.params.epsilon = obj.at("epsilon").get<double>();
    a.params.rho = obj.at("rho").get<double>();
    a.params.gamma = obj.at("gamma").get<double>();
    a.params.loss_bound = obj.at("loss_bound").get<double>();
    a.params.smooth = parse_smooth_kind(obj.at("smooth").get<std::string>());
    a.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    a.rounds = j.at("rounds").get<std::size_t>();
    a.local_steps = j.at("local_steps").get<std::size_t>();
    a.seed = j.at("seed").get<std::uint64_t>();
    a.run_id = j.at("run_id").get<std::string>();
    a.build = j.at("build").get<std::string>();
    const auto bin = json_path.parent_path() / j.at("weights_file").get<std::string>();
    a.state = decode_weights(detail::read_file(bin), dim);
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(json_path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics table

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{
      "run_id",           "seed",       "epsilon",   "rho",        "split",
      "utility_risk",     "worst_group_risk",        "best_group_risk",
      "disparity",        "quantile_c", "final_c",   "rounds_T",   "tau",
      "wall_time_s"};
  return cols;
}

struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  MetricsRecord metrics;  // carries epsilon, rho and split
  double final_c = 0.0;
  std::size_t rounds = 0;
  std::size_t local_steps = 0;
  std::optional<double> wall_time_s;  // empty unless recording is enabled
  std::string error;                  // sweep tables only

  bool operator==(const MetricsRow& o) const {
    const auto& a = metrics;
    const auto& b = o.metrics;
    return run_id == o.run_id && seed == o.seed && a.epsilon == b.epsilon && a.rho == b.rho &&
           a.split == b.split && a.utility_risk == b.utility_risk &&
           a.worst_group_risk == b.worst_group_risk && a.best_group_risk == b.best_group_risk &&
           a.disparity == b.disparity && a.quantile_c == b.quantile_c && final_c == o.final_c &&
           rounds == o.rounds && local_steps == o.local_steps && wall_time_s == o.wall_time_s &&
           error == o.error;
  }
};

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' || ch == '\r' ? ' ' : ch;
  }
  return out + '"';
}

inline std::string header_line(bool with_error) {
  std::string h;
  for (const auto& c : metrics_columns()) h += (h.empty() ? "" : ",") + c;
  return with_error ? h + ",error" : h;
}

}  // namespace detail

inline std::string format_row(const MetricsRow& r, bool with_error) {
  using detail::format_double;
  const auto& m = r.metrics;
  const bool failed = !r.error.empty();
  auto num = [&](double v) { return failed ? std::string() : format_double(v); };
  std::string s = detail::csv_quote(r.run_id) + ',' + std::to_string(r.seed) + ',' +
                  format_double(m.epsilon) + ',' + format_double(m.rho) + ',' +
                  detail::csv_quote(m.split) + ',' + num(m.utility_risk) + ',' +
                  num(m.worst_group_risk) + ',' + num(m.best_group_risk) + ',' +
                  num(m.disparity) + ',' + num(m.quantile_c) + ',' + num(r.final_c) + ',' +
                  std::to_string(r.rounds) + ',' + std::to_string(r.local_steps) + ',' +
                  (r.wall_time_s ? format_double(*r.wall_time_s) : std::string());
  if (with_error) s += ',' + detail::csv_quote(r.error);
  return s;
}

inline std::string format_table(const std::vector<MetricsRow>& rows, bool with_error) {
  std::string out = detail::header_line(with_error) + '\n';
  for (const auto& r : rows) out += format_row(r, with_error) + '\n';
  return out;
}

/// Appends rows to a metrics table, writing the header when the file is new
/// and refusing files whose header differs.
inline void append_metrics(const fs::path& path, const std::vector<MetricsRow>& rows) {
  const auto header = detail::header_line(false);
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  if (!fresh) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (!first.empty() && first.back() == '\r') first.pop_back();
    if (first != header) throw DataError(path.string() + ": unexpected metrics header");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot append to '" + path.string() + "'");
  if (fresh) out << header << '\n';
  for (const auto& r : rows) out << format_row(r, false) << '\n';
}

/// Parses a metrics or frontier table back into rows.
inline std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const bool with_error = line == detail::header_line(true);
  if (!with_error && line != detail::header_line(false))
    throw DataError(path.string() + ": unexpected metrics header");
  const std::size_t width = metrics_columns().size() + (with_error ? 1 : 0);
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const auto where = path.string() + ": line " + std::to_string(line_no);
    if (f.size() != width) throw DataError(where + ": expected " + std::to_string(width) + " fields");
    auto real = [&](std::size_t i) {
      if (f[i].empty()) return std::numeric_limits<double>::quiet_NaN();
      const auto v = detail::parse_double(f[i]);
      if (!v) throw DataError(where + ": bad number '" + f[i] + "'");
      return *v;
    };
    auto integer = [&](std::size_t i) {
      std::uint64_t v = 0;
      const auto r = std::from_chars(f[i].data(), f[i].data() + f[i].size(), v);
      if (r.ec != std::errc() || r.ptr != f[i].data() + f[i].size())
        throw DataError(where + ": bad integer '" + f[i] + "'");
      return v;
    };
    MetricsRow r;
    r.run_id = f[0];
    r.seed = integer(1);
    r.metrics.epsilon = real(2);
    r.metrics.rho = real(3);
    r.metrics.split = f[4];
    r.metrics.utility_risk = real(5);
    r.metrics.worst_group_risk = real(6);
    r.metrics.best_group_risk = real(7);
    r.metrics.disparity = real(8);
    r.metrics.quantile_c = real(9);
    r.final_c = real(10);
    r.rounds = integer(11);
    r.local_steps = integer(12);
    if (!f[13].empty()) r.wall_time_s = real(13);
    if (with_error) r.error = f[14];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fedrcvar
