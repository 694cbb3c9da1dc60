#include "antfilter/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace antfilter;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("antfilter_io_" + name);
  fs::remove_all(dir);
  return dir;
}

RatioReport report(double t, double base) {
  RatioReport r;
  r.eval_time = t;
  r.ratio = Vector::LinSpaced(6, base, base + 0.5);
  r.se = Vector::Constant(6, 0.01 * base);
  r.mse_anticipative = r.ratio.cwiseAbs2();
  r.mse_baseline = Vector::Ones(6);
  r.n_paths = 10;
  return r;
}

}  // namespace

TEST(Csv, RatioHeaderAndRoundTrip) {
  const std::vector<RatioReport> reps{report(0.75, 0.3), report(1.0, 1.0 / 3.0)};
  const std::string text = ratio_csv(reps);
  EXPECT_EQ(text.substr(0, text.find('\n')), "t,R1,R2,R3,R4,R5,R6,se1,se2,se3,se4,se5,se6");
  const auto back = parse_ratio_csv(text);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].eval_time, reps[i].eval_time);
    EXPECT_EQ(back[i].ratio, reps[i].ratio);
    EXPECT_EQ(back[i].se, reps[i].se);
  }
  EXPECT_EQ(ratio_csv({}), "");
}

TEST(Csv, RejectsMalformedTables) {
  EXPECT_THROW(parse_ratio_csv("x,R1,se1\n1,2,3\n"), Error);
  EXPECT_THROW(parse_ratio_csv("t,R1,se1\n1,2\n"), Error);
}

TEST(Csv, FormatRoundTripsDoubles) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(split_csv("a,b,,c"), (std::vector<std::string>{"a", "b", "", "c"}));
}

TEST(Emit, ByteIdenticalRerun) {
  ScenarioConfig cfg;
  const std::vector<RatioReport> reps{report(0.75, 0.3), report(1.0, 0.4)};
  const fs::path a = scratch("emit_a"), b = scratch("emit_b");
  const auto fa = emit_report(reps, cfg, a, 0.0);
  emit_report(reps, cfg, b, 0.0);
  EXPECT_EQ(fa.files.size(), 8u);  // csv, 6 curves, manifest
  for (const char* name : {"ratios.csv", "ratio_R1.dat", "ratio_R6.dat"}) {
    EXPECT_EQ(read_file((a / name).string()), read_file((b / name).string())) << name;
  }
  const Json ma = read_json_file((a / "manifest.json").string());
  const Json mb = read_json_file((b / "manifest.json").string());
  EXPECT_EQ(ma["reports"], mb["reports"]);
  EXPECT_EQ(ma["version"], kVersion);
  EXPECT_EQ(ma["config"]["grid_k"], 1000);
}

TEST(Emit, EmptyReportsWriteManifestOnly) {
  const fs::path dir = scratch("emit_empty");
  const auto res = emit_report({}, ScenarioConfig{}, dir, 0.0);
  ASSERT_EQ(res.files.size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "ratios.csv"));
}

TEST(Emit, OutputSelection) {
  ScenarioConfig cfg;
  cfg.outputs = {"json"};
  const fs::path dir = scratch("emit_json");
  emit_report({report(1.0, 0.5)}, cfg, dir, 0.0);
  EXPECT_FALSE(fs::exists(dir / "ratios.csv"));
  EXPECT_FALSE(fs::exists(dir / "ratio_R1.dat"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(Binary, BundleRoundTrip) {
  const TimeGrid grid = TimeGrid::uniform(1.0, 20);
  const PathBundle b = sample_bundle(radar_model(1.0), grid, 5, 9);
  const std::string buf = bundle_binary(b);
  EXPECT_EQ(buf.substr(0, 4), "AFPB");
  const PathBundle back = parse_bundle_binary(buf);
  EXPECT_EQ(back.x, b.x);
  EXPECT_EQ(back.z, b.z);
  EXPECT_EQ(back.w, b.w);
  EXPECT_EQ(back.n, b.n);
  EXPECT_EQ(back.x0, b.x0);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_EQ(back.stream_id, 9u);
  EXPECT_TRUE(back.grid.same_as(grid));
  EXPECT_THROW(parse_bundle_binary(buf.substr(0, buf.size() - 1)), Error);
  EXPECT_THROW(parse_bundle_binary("XXXX" + buf.substr(4)), Error);
}

TEST(Config, JsonRoundTrip) {
  ScenarioConfig cfg;
  cfg.scenario = "scalar-demo";
  cfg.gamma = 2.5;
  cfg.steps = 128;
  cfg.n_paths = 7;
  cfg.seed = 99;
  cfg.eval_times = {0.5};
  cfg.scheme = MeanScheme::SemiImplicit;
  const ScenarioConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(back.scenario, cfg.scenario);
  EXPECT_EQ(back.gamma, cfg.gamma);
  EXPECT_EQ(back.steps, cfg.steps);
  EXPECT_EQ(back.n_paths, cfg.n_paths);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.eval_times, cfg.eval_times);
  EXPECT_EQ(back.scheme, cfg.scheme);
  try {
    config_from_json(Json{{"grid_k", "many"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
  }
  EXPECT_THROW(config_from_json(Json{{"mean_scheme", "implicit"}}), Error);
}

TEST(Model, FromJson) {
  const Json j = Json::parse(R"({
    "name": "ramp", "a": -1, "h": 1, "sigma0": 1, "mean": [0.5],
    "corr": {"family": "linear", "C": 0.5, "sigma": 1, "horizon": 1}
  })");
  const LinearModel m = model_from_json(j);
  EXPECT_EQ(m.name, "ramp");
  EXPECT_EQ(m.a(0.3)(0, 0), -1.0);
  EXPECT_EQ(m.init_mean(0), 0.5);
  EXPECT_NEAR(m.corr.rho(0.4, Side::Right)(0, 0), 0.2, 1e-15);
  const LinearModel demo = scalar_demo_model(1.0);
  for (double t : {0.1, 0.9}) {
    EXPECT_NEAR((m.corr.rho(t, Side::Right) - demo.corr.rho(t, Side::Right)).norm(), 0.0, 1e-15);
  }
  EXPECT_THROW(model_from_json(Json::parse(R"({"a": 1})")), Error);
  EXPECT_THROW(model_from_json(Json::parse(R"({"a":1,"h":1,"sigma0":1,"corr":{"family":"cubic","C":1}})")),
               Error);
  EXPECT_THROW(model_from_json(Json::parse(R"({"a":1,"h":1,"sigma0":1,"corr":{"family":"linear","C":[[1,2]]}})")),
               Error);
}

TEST(Model, LoadBuiltIns) {
  EXPECT_EQ(load_model("radar", 1.0).dim_signal(), 6);
  EXPECT_EQ(load_model("scalar-demo").dim_signal(), 1);
  EXPECT_EQ(load_model("stability-demo", 1.0, 20.0).corr.horizon, 20.0);
  try {
    load_model("/nonexistent/model.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(Model, VolterraKernelFromJson) {
  const auto k = volterra_kernel_from_json(
      Json::parse(R"({"rank": 2, "p": ["1", "t"], "q": ["1", "s"], "horizon": 2})"));
  EXPECT_EQ(k.rank(), 2);
  EXPECT_EQ(k.horizon, 2.0);
  EXPECT_NEAR(kernel_eval(k, 0.5, 0.2).h, 1.0 + 0.1, 1e-15);
  EXPECT_THROW(volterra_kernel_from_json(Json::parse(R"({"rank": 3, "p": ["1"], "q": ["1"]})")),
               Error);
  EXPECT_THROW(volterra_kernel_from_json(Json::parse(R"({"p": ["t+"], "q": ["1"]})")), Error);
}

TEST(Kernel, TableJson) {
  const TimeGrid grid = TimeGrid::uniform(0.9, 9);
  const KernelTable tab = kernel_table(linear_correlation(Matrix::Ones(1, 1), Matrix::Ones(1, 1), 0.9), grid);
  const Json j = kernel_table_to_json(tab);
  EXPECT_EQ(j["grid"].size(), 10u);
  EXPECT_EQ(j["g"].size(), 10u);
  EXPECT_EQ(j["g"][5][0].get<double>(), tab.g[5](0, 0));
  EXPECT_EQ(j["T0"].get<double>(), tab.T0);
  EXPECT_EQ(j["dims"]["m"], 1);
}

TEST(Files, IoErrors) {
  try {
    read_file("/nonexistent/dir/file");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
  const fs::path blocker = scratch("blocker");
  write_text(blocker, "x");
  try {
    write_text(blocker / "child.txt", "y");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
  fs::remove(blocker);
  EXPECT_EQ(plot_data({0.0, 1.0}, {2.0, 3.0}), "0 2\n1 3\n");
}
