#pragma once

// File formats: JSON model and kernel descriptions, CSV tables, a compact
// binary path dump, plot-data series and run manifests.

#include "antfilter/particle.hpp"
#include "antfilter/scenario.hpp"
#include "antfilter/stability.hpp"
#include "antfilter/volterra.hpp"

#include <json.hpp>

#include <bit>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace antfilter {

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// numbers and matrices

/// 17 significant digits: enough to round-trip every double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Accepts a number (1x1), a flat array (column vector) or an array of rows.
inline Matrix matrix_from_json(const Json& j, const std::string& what) {
  try {
    if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
    ANTFILTER_REQUIRE(j.is_array() && !j.empty(), ErrorCode::ParseError,
                      what + ": expected a non-empty array");
    if (!j[0].is_array()) {
      Matrix m(j.size(), 1);
      for (std::size_t i = 0; i < j.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = j[i].get<double>();
      return m;
    }
    const std::size_t cols = j[0].size();
    Matrix m(j.size(), cols);
    for (std::size_t i = 0; i < j.size(); ++i) {
      ANTFILTER_REQUIRE(j[i].is_array() && j[i].size() == cols, ErrorCode::ParseError,
                        what + ": ragged matrix");
      for (std::size_t c = 0; c < cols; ++c) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, what + ": " + e.what());
  }
}

inline Vector vector_from_json(const Json& j, const std::string& what) {
  const Matrix m = matrix_from_json(j, what);
  ANTFILTER_REQUIRE(m.cols() == 1 || m.rows() == 1, ErrorCode::ParseError,
                    what + ": expected a vector");
  return m.cols() == 1 ? Vector(m.col(0)) : Vector(m.row(0).transpose());
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "'" + path + "': " + e.what());
  }
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create '" + path.parent_path().string() + "'");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// models

/// {"family": "zero"|"linear"|"quadratic"|"truncated_linear"|"bump",
///  "C": n x m, "t0": real, "sigma": m x m, "horizon": real}
inline CorrelationSpec correlation_from_json(const Json& j, int m, int n) {
  ANTFILTER_REQUIRE(j.is_object(), ErrorCode::ParseError, "corr must be an object");
  const std::string family = j.value("family", std::string("zero"));
  const double horizon = j.value("horizon", 1.0);
  const Matrix sigma = j.contains("sigma") ? matrix_from_json(j["sigma"], "corr.sigma")
                                           : Matrix(Matrix::Identity(m, m));
  if (family == "zero") return zero_correlation(sigma, n, horizon);
  ANTFILTER_REQUIRE(j.contains("C"), ErrorCode::ParseError, "corr." + family + " needs C");
  const Matrix c = matrix_from_json(j["C"], "corr.C");
  ANTFILTER_REQUIRE(c.rows() == n && c.cols() == m, ErrorCode::DimensionMismatch,
                    "corr.C must be n x m");
  if (family == "linear") return linear_correlation(c, sigma, horizon);
  if (family == "quadratic") return quadratic_correlation(c, sigma, horizon);
  const double t0 = j.value("t0", horizon);
  if (family == "truncated_linear") return truncated_linear_correlation(c, t0, sigma, horizon);
  if (family == "bump") return bump_correlation(c, t0, sigma, horizon);
  throw Error(ErrorCode::ParseError, "unknown correlation family '" + family + "'");
}

/// {"type":"linear","a":..,"h":..,"sigma0":..,"mean":..,"corr":{..}}
inline LinearModel model_from_json(const Json& j) {
  ANTFILTER_REQUIRE(j.is_object(), ErrorCode::ParseError, "model must be a JSON object");
  const std::string type = j.value("type", std::string("linear"));
  ANTFILTER_REQUIRE(type == "linear", ErrorCode::ParseError,
                    "only linear models can be described in JSON");
  for (const char* key : {"a", "h", "sigma0"}) {
    ANTFILTER_REQUIRE(j.contains(key), ErrorCode::ParseError, std::string("model needs '") + key + "'");
  }
  const Matrix a = matrix_from_json(j["a"], "a");
  const Matrix h = matrix_from_json(j["h"], "h");
  const Matrix sigma0 = matrix_from_json(j["sigma0"], "sigma0");
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(h.rows());
  const Vector mean = j.contains("mean") ? vector_from_json(j["mean"], "mean") : Vector(Vector::Zero(m));
  const Json corr = j.contains("corr") ? j["corr"] : Json::object();
  LinearModel model = make_linear_model(a, sigma0, h, correlation_from_json(corr, m, n), mean);
  model.name = j.value("name", std::string("custom"));
  return model;
}

/// "radar", "scalar-demo", "stability-demo" or a path to a model JSON file.
inline LinearModel load_model(const std::string& id, double gamma = 1.0, double horizon = 1.0) {
  if (id == "radar") return radar_model(gamma, horizon);
  if (id == "scalar-demo") return scalar_demo_model(horizon);
  if (id == "stability-demo") return stability_demo_model(horizon);
  return model_from_json(read_json_file(id));
}

/// {"rank": 2, "p": ["1", "t"], "q": ["1", "s"], "horizon": 1}
inline VolterraKernel volterra_kernel_from_json(const Json& j) {
  ANTFILTER_REQUIRE(j.is_object() && j.contains("p") && j.contains("q"), ErrorCode::ParseError,
                    "kernel needs 'p' and 'q' lists");
  const auto p = j["p"].get<std::vector<std::string>>();
  const auto q = j["q"].get<std::vector<std::string>>();
  if (j.contains("rank")) {
    ANTFILTER_REQUIRE(j["rank"].get<int>() == static_cast<int>(p.size()), ErrorCode::ParseError,
                      "kernel rank does not match the number of terms");
  }
  return VolterraKernel::from_strings(p, q, j.value("horizon", 1.0));
}

// ---------------------------------------------------------------------------
// kernel tables

inline Json flatten_rows(const std::vector<Matrix>& mats) {
  Json out = Json::array();
  for (const auto& m : mats) {
    Json row = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    }
    out.push_back(std::move(row));
  }
  return out;
}

/// Grid values (right limits for g' and r), each flattened row-major.
inline Json kernel_table_to_json(const KernelTable& table) {
  std::vector<Matrix> gp, r;
  for (int k = 0; k < table.grid.size(); ++k) {
    gp.push_back(table.g_prime.at_index(k, Side::Right));
    r.push_back(table.r.at_index(k, Side::Right));
  }
  Json j;
  j["grid"] = table.grid.points();
  j["g"] = flatten_rows(table.g);
  j["g_prime"] = flatten_rows(gp);
  j["r"] = flatten_rows(r);
  j["T0"] = table.T0;
  j["dims"] = {{"m", table.dim_signal}, {"n", table.dim_obs}};
  return j;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_row(const std::vector<double>& values) {
  std::string line;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) line += ',';
    line += format_double(values[i]);
  }
  line += '\n';
  return line;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

/// t, x1..xm, z1..zn
inline std::string bundle_csv(const PathBundle& b) {
  std::string out = "t";
  for (Eigen::Index i = 0; i < b.x.cols(); ++i) out += ",x" + std::to_string(i + 1);
  for (Eigen::Index i = 0; i < b.z.cols(); ++i) out += ",z" + std::to_string(i + 1);
  out += '\n';
  for (int k = 0; k < b.grid.size(); ++k) {
    std::vector<double> row{b.grid[k]};
    for (Eigen::Index i = 0; i < b.x.cols(); ++i) row.push_back(b.x(k, i));
    for (Eigen::Index i = 0; i < b.z.cols(); ++i) row.push_back(b.z(k, i));
    out += csv_row(row);
  }
  return out;
}

/// t, xhat1..xhatm, p11_1..p11_m (diagonal), nu1..nun
inline std::string filter_csv(const FilterRun& run) {
  const auto m = run.x_hat.cols();
  const auto n = run.innovation.cols();
  std::string out = "t";
  for (Eigen::Index i = 0; i < m; ++i) out += ",xhat" + std::to_string(i + 1);
  for (Eigen::Index i = 0; i < m; ++i) out += ",p11_" + std::to_string(i + 1);
  for (Eigen::Index i = 0; i < n; ++i) out += ",nu" + std::to_string(i + 1);
  out += '\n';
  for (int k = 0; k < run.grid.size(); ++k) {
    std::vector<double> row{run.grid[k]};
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(run.x_hat(k, i));
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(run.p11[k](i, i));
    for (Eigen::Index i = 0; i < n; ++i) row.push_back(run.innovation(k, i));
    out += csv_row(row);
  }
  return out;
}

/// Terminal mean and covariance, plus the mean-square error against a known
/// signal path when one is given.
inline Json filter_summary_json(const FilterRun& run, const Path* truth = nullptr) {
  const int K = run.grid.steps();
  Json j;
  j["t"] = run.grid.horizon();
  j["mean"] = vector_to_json(run.x_hat.row(K).transpose());
  j["cov"] = matrix_to_json(run.p11[K]);
  if (truth != nullptr) {
    const Vector err = run.x_hat.row(K) - truth->row(K);
    j["squared_error"] = vector_to_json(err.array().square().matrix());
    double mse = 0.0;
    for (int k = 0; k <= K; ++k) mse += (run.x_hat.row(k) - truth->row(k)).squaredNorm();
    j["path_mse"] = mse / (K + 1);
  }
  return j;
}

/// t, mean1..meanm, var1..varm, ess
inline std::string particle_csv(const ParticleRun& run) {
  const auto m = run.mean.cols();
  std::string out = "t";
  for (Eigen::Index i = 0; i < m; ++i) out += ",mean" + std::to_string(i + 1);
  for (Eigen::Index i = 0; i < m; ++i) out += ",var" + std::to_string(i + 1);
  out += ",ess\n";
  for (int k = 0; k < run.grid.size(); ++k) {
    std::vector<double> row{run.grid[k]};
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(run.mean(k, i));
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(run.cov[k](i, i));
    row.push_back(run.ess[k]);
    out += csv_row(row);
  }
  return out;
}

/// One row per evaluation time: t, R1..Rm, se1..sem.
inline std::string ratio_csv(const std::vector<RatioReport>& reports) {
  if (reports.empty()) return "";
  const auto m = reports.front().ratio.size();
  std::string out = "t";
  for (Eigen::Index i = 0; i < m; ++i) out += ",R" + std::to_string(i + 1);
  for (Eigen::Index i = 0; i < m; ++i) out += ",se" + std::to_string(i + 1);
  out += '\n';
  for (const auto& r : reports) {
    std::vector<double> row{r.eval_time};
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(r.ratio(i));
    for (Eigen::Index i = 0; i < m; ++i) row.push_back(r.se(i));
    out += csv_row(row);
  }
  return out;
}

inline std::vector<RatioReport> parse_ratio_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  std::vector<RatioReport> out;
  if (!std::getline(in, line)) return out;
  const auto header = split_csv(line);
  ANTFILTER_REQUIRE(header.size() >= 3 && header.size() % 2 == 1 && header[0] == "t",
                    ErrorCode::ParseError, "ratio CSV header must be t,R1..Rm,se1..sem");
  const int m = static_cast<int>(header.size() - 1) / 2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    ANTFILTER_REQUIRE(cells.size() == header.size(), ErrorCode::ParseError, "ragged ratio CSV row");
    RatioReport r;
    r.eval_time = std::stod(cells[0]);
    r.ratio.resize(m);
    r.se.resize(m);
    for (int i = 0; i < m; ++i) {
      r.ratio(i) = std::stod(cells[1 + i]);
      r.se(i) = std::stod(cells[1 + m + i]);
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Two columns, t and value, one curve per file.
inline std::string plot_data(const std::vector<double>& t, const std::vector<double>& v) {
  ANTFILTER_REQUIRE(t.size() == v.size(), ErrorCode::InvalidArgument, "plot-data series differ in length");
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) out += format_double(t[i]) + " " + format_double(v[i]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// binary path dump
//
// Header (32 bytes, little-endian): "AFPB", u32 n_points, u16 m, u16 n,
// u16 l, u16 flags, u64 seed, u64 stream_id. Then one record of doubles per
// grid point: t, x (m), z (n), w (l), N (n).

namespace detail {

template <class T>
void put_le(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>(static_cast<std::uint64_t>(v) >> (8 * i) & 0xFF));
  }
}

template <class T>
T get_le(const std::string& buf, std::size_t& pos) {
  ANTFILTER_REQUIRE(pos + sizeof(T) <= buf.size(), ErrorCode::ParseError, "binary dump is truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(v);
}

inline void put_double(std::string& buf, double d) { put_le(buf, std::bit_cast<std::uint64_t>(d)); }
inline double get_double(const std::string& buf, std::size_t& pos) {
  return std::bit_cast<double>(get_le<std::uint64_t>(buf, pos));
}

}  // namespace detail

inline std::string bundle_binary(const PathBundle& b) {
  std::string buf = "AFPB";
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(b.grid.size()));
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(b.x.cols()));
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(b.z.cols()));
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(b.w.cols()));
  detail::put_le<std::uint16_t>(buf, 0);
  detail::put_le<std::uint64_t>(buf, b.seed);
  detail::put_le<std::uint64_t>(buf, b.stream_id);
  for (int k = 0; k < b.grid.size(); ++k) {
    detail::put_double(buf, b.grid[k]);
    for (Eigen::Index i = 0; i < b.x.cols(); ++i) detail::put_double(buf, b.x(k, i));
    for (Eigen::Index i = 0; i < b.z.cols(); ++i) detail::put_double(buf, b.z(k, i));
    for (Eigen::Index i = 0; i < b.w.cols(); ++i) detail::put_double(buf, b.w(k, i));
    for (Eigen::Index i = 0; i < b.n.cols(); ++i) detail::put_double(buf, b.n(k, i));
  }
  return buf;
}

/// Inverse of bundle_binary; x0 is recovered from the first record.
inline PathBundle parse_bundle_binary(const std::string& buf) {
  ANTFILTER_REQUIRE(buf.size() >= 32 && buf.compare(0, 4, "AFPB") == 0, ErrorCode::ParseError,
                    "not a path dump (bad magic)");
  std::size_t pos = 4;
  const auto npts = detail::get_le<std::uint32_t>(buf, pos);
  const int m = detail::get_le<std::uint16_t>(buf, pos);
  const int n = detail::get_le<std::uint16_t>(buf, pos);
  const int l = detail::get_le<std::uint16_t>(buf, pos);
  detail::get_le<std::uint16_t>(buf, pos);
  PathBundle b;
  b.seed = detail::get_le<std::uint64_t>(buf, pos);
  b.stream_id = detail::get_le<std::uint64_t>(buf, pos);
  const std::size_t expect = 32 + static_cast<std::size_t>(npts) * (1 + m + 2 * n + l) * 8;
  ANTFILTER_REQUIRE(buf.size() == expect, ErrorCode::ParseError, "path dump has the wrong length");
  std::vector<double> t(npts);
  b.x.resize(npts, m);
  b.z.resize(npts, n);
  b.w.resize(npts, l);
  b.n.resize(npts, n);
  for (std::uint32_t k = 0; k < npts; ++k) {
    t[k] = detail::get_double(buf, pos);
    for (int i = 0; i < m; ++i) b.x(k, i) = detail::get_double(buf, pos);
    for (int i = 0; i < n; ++i) b.z(k, i) = detail::get_double(buf, pos);
    for (int i = 0; i < l; ++i) b.w(k, i) = detail::get_double(buf, pos);
    for (int i = 0; i < n; ++i) b.n(k, i) = detail::get_double(buf, pos);
  }
  b.grid = TimeGrid(std::move(t));
  b.x0 = b.x.row(0).transpose();
  return b;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// reports

inline Json stability_to_json(const StabilityReport& rep) {
  Json j;
  j["gamma_inf"] = matrix_to_json(rep.gamma_inf);
  j["are_residual"] = rep.are_residual;
  j["lambda0"] = rep.lambda0;
  j["detectable"] = rep.is_detectable;
  j["stabilizable"] = rep.is_stabilizable;
  j["decay_fit"] = {{"rate", rep.decay.rate},
                    {"prefactor", rep.decay.prefactor},
                    {"residual", rep.decay.residual},
                    {"points", rep.decay.points}};
  j["wasserstein_path"] = rep.wasserstein_path;
  return j;
}

inline Json config_to_json(const ScenarioConfig& cfg) {
  return Json{{"scenario", cfg.scenario},
              {"gamma", cfg.gamma},
              {"horizon", cfg.horizon},
              {"grid_k", cfg.steps},
              {"n_paths", cfg.n_paths},
              {"seed", cfg.seed},
              {"outputs", cfg.outputs},
              {"eval_times", cfg.eval_times},
              {"mean_scheme", cfg.scheme == MeanScheme::Explicit ? "explicit" : "semi-implicit"}};
}

/// Reads ScenarioConfig fields present in j; others keep their defaults.
inline ScenarioConfig config_from_json(const Json& j) {
  ScenarioConfig cfg;
  try {
    cfg.scenario = j.value("scenario", cfg.scenario);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.horizon = j.value("horizon", cfg.horizon);
    cfg.steps = j.value("grid_k", cfg.steps);
    cfg.n_paths = j.value("n_paths", cfg.n_paths);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.outputs = j.value("outputs", cfg.outputs);
    cfg.eval_times = j.value("eval_times", cfg.eval_times);
    cfg.threads = j.value("threads", cfg.threads);
    const std::string scheme = j.value("mean_scheme", std::string("explicit"));
    ANTFILTER_REQUIRE(scheme == "explicit" || scheme == "semi-implicit", ErrorCode::ParseError,
                      "mean_scheme must be 'explicit' or 'semi-implicit'");
    cfg.scheme = scheme == "explicit" ? MeanScheme::Explicit : MeanScheme::SemiImplicit;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  return cfg;
}

struct EmitResult {
  std::vector<std::string> files;
};

/// Writes the ratio table (CSV), one plot-data curve per component, and a
/// JSON manifest. With no reports only the manifest is written.
inline EmitResult emit_report(const std::vector<RatioReport>& reports, const ScenarioConfig& cfg,
                              const std::filesystem::path& out_dir, double wall_seconds,
                              const Json& extra = Json::object()) {
  EmitResult res;
  auto wants = [&](const char* kind) {
    return std::find(cfg.outputs.begin(), cfg.outputs.end(), kind) != cfg.outputs.end();
  };
  if (!reports.empty() && wants("csv")) {
    const auto path = out_dir / "ratios.csv";
    write_text(path, ratio_csv(reports));
    res.files.push_back(path.string());
  }
  if (!reports.empty() && wants("plotdata")) {
    std::vector<double> ts;
    for (const auto& r : reports) ts.push_back(r.eval_time);
    for (Eigen::Index i = 0; i < reports.front().ratio.size(); ++i) {
      std::vector<double> vs;
      for (const auto& r : reports) vs.push_back(r.ratio(i));
      const auto path = out_dir / ("ratio_R" + std::to_string(i + 1) + ".dat");
      write_text(path, plot_data(ts, vs));
      res.files.push_back(path.string());
    }
  }
  Json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = config_to_json(cfg);
  manifest["seeds"] = {{"seed", cfg.seed}, {"streams", {0, std::max(0, cfg.n_paths - 1)}}};
  manifest["wall_time_s"] = wall_seconds;
  manifest["files"] = res.files;
  Json table = Json::array();
  for (const auto& r : reports) {
    table.push_back({{"t", r.eval_time},
                     {"R", vector_to_json(r.ratio)},
                     {"se", vector_to_json(r.se)},
                     {"mse_anticipative", vector_to_json(r.mse_anticipative)},
                     {"mse_baseline", vector_to_json(r.mse_baseline)},
                     {"n_paths", r.n_paths}});
  }
  manifest["reports"] = table;
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  const auto path = out_dir / "manifest.json";
  write_text(path, manifest.dump(2) + "\n");
  res.files.push_back(path.string());
  return res;
}

}  // namespace antfilter
