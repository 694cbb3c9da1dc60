// Command-line front end: kernel tables, simulation, filtering, radar ratio
// tables, stability reports, Volterra comparisons, particle runs and grid
// refinement studies.

#include "antfilter/antfilter.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

namespace af = antfilter;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::string model = "radar";
  std::uint64_t seed = 42;
  int grid_k = 1000;
  int paths = 2000;
  double gamma = 1.0;
  double horizon = 1.0;
  std::string out_dir = "out";
  std::string scheme = "explicit";
  int threads = 0;
};

struct Flags {
  CLI::Option* config = nullptr;
  CLI::Option* model = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* grid_k = nullptr;
  CLI::Option* paths = nullptr;
  CLI::Option* gamma = nullptr;
  CLI::Option* horizon = nullptr;
  CLI::Option* scheme = nullptr;
  CLI::Option* threads = nullptr;
};

void add_common(CLI::App& app, Common& c, Flags& f) {
  f.config = app.add_option("--config", c.config_path, "JSON scenario config");
  f.model = app.add_option("--model", c.model, "built-in model id or model JSON file");
  f.seed = app.add_option("--seed", c.seed, "random seed");
  f.grid_k = app.add_option("--grid-k", c.grid_k, "number of grid steps K");
  f.paths = app.add_option("--paths", c.paths, "Monte Carlo paths");
  f.gamma = app.add_option("--gamma", c.gamma, "anticipation strength");
  f.horizon = app.add_option("--horizon", c.horizon, "time horizon T");
  app.add_option("--out-dir", c.out_dir, "output directory");
  f.scheme = app.add_option("--mean-scheme", c.scheme, "explicit | semi-implicit")
                 ->check(CLI::IsMember({"explicit", "semi-implicit"}));
  f.threads = app.add_option("--threads", c.threads, "worker threads (0: all cores)");
}

/// Config file first, then explicit flags on top.
af::ScenarioConfig resolve(const Common& c, const Flags& f) {
  af::ScenarioConfig cfg;
  if (!c.config_path.empty()) cfg = af::config_from_json(af::read_json_file(c.config_path));
  if (f.model->count() || c.config_path.empty()) cfg.scenario = c.model;
  if (f.seed->count()) cfg.seed = c.seed;
  if (f.grid_k->count()) cfg.steps = c.grid_k;
  if (f.paths->count()) cfg.n_paths = c.paths;
  if (f.gamma->count()) cfg.gamma = c.gamma;
  if (f.horizon->count()) cfg.horizon = c.horizon;
  if (f.threads->count()) cfg.threads = c.threads;
  if (f.scheme->count()) {
    cfg.scheme = c.scheme == "explicit" ? af::MeanScheme::Explicit : af::MeanScheme::SemiImplicit;
  }
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void announce(const std::vector<std::string>& files) {
  for (const auto& f : files) std::cout << "wrote " << f << "\n";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_kernel(const af::ScenarioConfig& cfg, const fs::path& out) {
  const af::LinearModel model = af::load_model(cfg.scenario, cfg.gamma, cfg.horizon);
  const af::KernelTable table = af::kernel_table(model.corr, cfg.grid());
  const auto path = out / "kernel.json";
  af::write_text(path, af::kernel_table_to_json(table).dump(1) + "\n");
  std::cout << "T0 = " << fmt(table.T0) << "\n";
  announce({path.string()});
  return 0;
}

int cmd_simulate(const af::ScenarioConfig& cfg, const fs::path& out, bool binary) {
  const af::LinearModel model = af::load_model(cfg.scenario, cfg.gamma, cfg.horizon);
  const af::BundleSampler sampler(model, cfg.grid());
  std::vector<std::string> files;
  for (int i = 0; i < cfg.n_paths; ++i) {
    const af::PathBundle b = sampler.sample(cfg.seed, static_cast<std::uint64_t>(i));
    const auto stem = "bundle_" + std::to_string(i);
    af::write_text(out / (stem + ".csv"), af::bundle_csv(b));
    files.push_back((out / (stem + ".csv")).string());
    if (binary) {
      af::write_text(out / (stem + ".bin"), af::bundle_binary(b));
      files.push_back((out / (stem + ".bin")).string());
    }
  }
  announce(files);
  return 0;
}

int cmd_filter(const af::ScenarioConfig& cfg, const fs::path& out, std::uint64_t stream) {
  const af::LinearModel model = af::load_model(cfg.scenario, cfg.gamma, cfg.horizon);
  const af::TimeGrid grid = cfg.grid();
  const af::PathBundle b = af::sample_bundle(model, grid, cfg.seed, stream);
  const af::AnticipativeFilter ant_filter(model, grid);
  const af::FilterRun ant = ant_filter.run(b.z, cfg.scheme);
  const af::FilterRun cls = af::matched_baseline(ant_filter, model, grid).run(b.z, cfg.scheme);
  af::write_text(out / "anticipative.csv", af::filter_csv(ant));
  af::write_text(out / "classical.csv", af::filter_csv(cls));
  af::Json summary{{"anticipative", af::filter_summary_json(ant, &b.x)},
                   {"classical", af::filter_summary_json(cls, &b.x)},
                   {"config", af::config_to_json(cfg)},
                   {"stream", stream}};
  af::write_text(out / "filter.json", summary.dump(2) + "\n");
  // Signal and both estimates, one curve per component, for plotting.
  std::vector<std::string> files = {(out / "anticipative.csv").string(),
                                    (out / "classical.csv").string(),
                                    (out / "filter.json").string()};
  const auto& pts = grid.points();
  for (int i = 0; i < model.dim_signal(); ++i) {
    const std::string idx = std::to_string(i + 1);
    auto col = [&](const af::Path& p) {
      return std::vector<double>(p.col(i).data(), p.col(i).data() + p.rows());
    };
    for (const auto& [name, path] : {std::pair{"signal", &b.x}, std::pair{"anticipative", &ant.x_hat},
                                     std::pair{"classical", &cls.x_hat}}) {
      const auto file = out / (std::string(name) + "_x" + idx + ".dat");
      af::write_text(file, af::plot_data(pts, col(*path)));
      files.push_back(file.string());
    }
  }
  announce(files);
  return 0;
}

int cmd_ratios(const af::ScenarioConfig& cfg, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const af::LinearModel model = af::load_model(cfg.scenario, cfg.gamma, cfg.horizon);
  const auto reports = af::monte_carlo_ratios(model, cfg);
  const auto res = af::emit_report(reports, cfg, out, seconds_since(start));
  for (const auto& r : reports) {
    std::cout << "t=" << fmt(r.eval_time) << "  R =";
    for (Eigen::Index i = 0; i < r.ratio.size(); ++i) {
      std::cout << " " << fmt(r.ratio(i)) << " (" << fmt(r.se(i)) << ")";
    }
    std::cout << "\n";
  }
  announce(res.files);
  return 0;
}

int cmd_stability(af::ScenarioConfig cfg, const fs::path& out, double t_a, double t_b,
                  std::uint64_t stream) {
  const af::LinearModel model = af::load_model(cfg.scenario, cfg.gamma, cfg.horizon);
  const af::TimeGrid grid = cfg.grid();
  const af::PathBundle b = af::sample_bundle(model, grid, cfg.seed, stream);
  const af::StabilityReport rep = af::stability_report(model, grid, b.z, t_a, t_b);
  af::Json j = af::stability_to_json(rep);
  j["config"] = af::config_to_json(cfg);
  af::write_text(out / "stability.json", j.dump(2) + "\n");
  af::write_text(out / "wasserstein.dat", af::plot_data(grid.points(), rep.wasserstein_path));

  std::cout << "detectable        " << (rep.is_detectable ? "yes" : "no") << "\n"
            << "stabilizable      " << (rep.is_stabilizable ? "yes" : "no") << "\n"
            << "ARE residual      " << fmt(rep.are_residual) << "\n"
            << "lambda0           " << fmt(rep.lambda0) << "\n"
            << "decay rate        " << fmt(rep.decay.rate) << "  on [" << fmt(t_a) << ", "
            << fmt(t_b) << "]\n"
            << "W2 at T           " << fmt(rep.wasserstein_path.back()) << "\n";
  announce({(out / "stability.json").string(), (out / "wasserstein.dat").string()});
  return 0;
}

int cmd_volterra(const af::ScenarioConfig& cfg, const fs::path& out, const std::string& kernel_file,
                 std::vector<std::string> p, std::vector<std::string> q, std::uint64_t stream) {
  af::VolterraKernel kernel;
  if (!kernel_file.empty()) {
    kernel = af::volterra_kernel_from_json(af::read_json_file(kernel_file));
  } else {
    if (p.empty()) p = {"t"};
    if (q.empty()) q = {"s"};
    kernel = af::VolterraKernel::from_strings(p, q, cfg.horizon);
  }
  const af::Matrix one = af::Matrix::Identity(1, 1);
  const af::VolterraModel model{af::constant_time_fn(af::Matrix::Zero(1, 1)), one,
                                af::Vector::Zero(1), one, kernel};
  const af::TimeGrid grid = cfg.grid();
  const af::VolterraPaths paths = af::simulate_volterra(model, grid, cfg.seed, stream);
  const af::FilterRun oracle = af::HighDimFilter(model, grid).run(paths.z);
  af::Json report{{"K", cfg.steps}, {"seed", cfg.seed}, {"stream", stream}, {"readings", af::Json::object()}};
  std::vector<std::string> files;
  const auto& pts = grid.points();
  auto col0 = [](const af::Path& x) { return std::vector<double>(x.col(0).data(), x.col(0).data() + x.rows()); };
  af::write_text(out / "volterra_highdim.dat", af::plot_data(pts, col0(oracle.x_hat)));
  files.push_back((out / "volterra_highdim.dat").string());
  for (auto reading : {af::VolterraReading::Literal, af::VolterraReading::RowFrozen,
                       af::VolterraReading::IndexSwapped}) {
    const af::ReducedRun run = af::ReducedFilter(model, grid, reading).run(paths.z);
    const double dev = (run.x_hat - oracle.x_hat).cwiseAbs().maxCoeff();
    report["readings"][af::to_string(reading)] = {{"max_deviation", dev}};
    std::cout << af::to_string(reading) << ": max |x_hat - highdim| = " << fmt(dev) << "\n";
    const auto file = out / (std::string("volterra_") + af::to_string(reading) + ".dat");
    af::write_text(file, af::plot_data(pts, col0(run.x_hat)));
    files.push_back(file.string());
  }
  af::write_text(out / "volterra.json", report.dump(2) + "\n");
  files.push_back((out / "volterra.json").string());
  announce(files);
  return 0;
}

int cmd_particle(const af::ScenarioConfig& cfg, const fs::path& out, int n_part,
                 std::uint64_t stream) {
  const af::LinearModel model = af::load_model(cfg.scenario, cfg.gamma, cfg.horizon);
  const af::TimeGrid grid = cfg.grid();
  const af::PathBundle b = af::sample_bundle(model, grid, cfg.seed, stream);
  af::ParticleOptions opt;
  opt.n_part = n_part;
  opt.seed = cfg.seed;
  opt.stream = stream;
  const af::ParticleRun run = af::run_particle_filter(af::as_nonlinear(model), grid, b.z, opt);
  const af::FilterRun kb = af::AnticipativeFilter(model, grid).run(b.z, cfg.scheme);
  af::write_text(out / "particle.csv", af::particle_csv(run));
  const int K = grid.steps();
  af::Json j{{"n_part", n_part},
             {"resamples", run.resamples},
             {"terminal_mean", af::vector_to_json(run.mean.row(K).transpose())},
             {"terminal_cov", af::matrix_to_json(run.cov[K])},
             {"kalman_mean", af::vector_to_json(kb.x_hat.row(K).transpose())},
             {"kalman_cov", af::matrix_to_json(kb.p11[K])},
             {"log_normalizer", run.log_norm[K]}};
  af::write_text(out / "particle.json", j.dump(2) + "\n");
  std::cout << "terminal mean (particle) " << fmt(run.mean(K, 0)) << "  (Kalman) "
            << fmt(kb.x_hat(K, 0)) << "  resamples " << run.resamples << "\n";
  announce({(out / "particle.csv").string(), (out / "particle.json").string()});
  return 0;
}

int cmd_converge(const af::ScenarioConfig& cfg, const fs::path& out, std::vector<int> k_list) {
  const af::LinearModel model = af::load_model(cfg.scenario, cfg.gamma, cfg.horizon);
  if (k_list.empty()) k_list = {64, 128, 256, 512, 1024};
  const af::ConvergenceReport rep =
      af::convergence_study(model, cfg.horizon, k_list, cfg.seed, std::min(cfg.n_paths, 64), cfg.threads);
  af::Json j{{"k_list", rep.k_list},       {"rms_terminal", rep.rms_terminal},
             {"differences", rep.differences}, {"orders", rep.orders},
             {"n_paths", rep.n_paths},     {"seed", rep.seed}};
  af::write_text(out / "convergence.json", j.dump(2) + "\n");
  std::cout << "K       diff-to-next   order\n";
  for (std::size_t i = 0; i < rep.k_list.size(); ++i) {
    std::cout << rep.k_list[i];
    if (i < rep.differences.size()) std::cout << "  " << fmt(rep.differences[i]);
    if (i > 0 && i - 1 < rep.orders.size()) std::cout << "  " << fmt(rep.orders[i - 1]);
    std::cout << "\n";
  }
  announce({(out / "convergence.json").string()});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anticipative Kalman-Bucy filtering toolkit"};
  app.set_version_flag("--version", std::string(af::kVersion));
  app.require_subcommand(1);

  Common c;
  std::map<std::string, Flags> flags;
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(*s, c, flags[name]);
    return s;
  };

  std::uint64_t stream = 0;
  bool binary = false;
  double t_a = 5.0, t_b = 15.0;
  int n_part = 1000;
  std::string kernel_file;
  std::vector<std::string> p_terms, q_terms;
  std::vector<int> k_list;

  auto* kernel = sub("kernel", "tabulate g, g', r and T0 for a model's correlation");
  auto* simulate = sub("simulate", "sample path bundles (--paths of them)");
  simulate->add_flag("--binary", binary, "also write the binary dump");
  auto* filter = sub("filter", "anticipative and classical filters on one simulated path");
  filter->add_option("--stream", stream, "stream id of the simulated path");
  auto* ratios = sub("ratios", "Monte Carlo error ratios R_i");
  auto* stability = sub("stability", "algebraic Riccati, margin, decay fit and W2 path");
  stability->add_option("--t-a", t_a, "decay window start");
  stability->add_option("--t-b", t_b, "decay window end");
  stability->add_option("--stream", stream, "stream id of the simulated path");
  auto* volterra = sub("volterra", "high-dimensional and reduced Volterra filters");
  volterra->add_option("--kernel", kernel_file, "kernel JSON file");
  volterra->add_option("--p", p_terms, "p_i(t) expressions");
  volterra->add_option("--q", q_terms, "q_i(s) expressions");
  volterra->add_option("--stream", stream, "stream id of the simulated path");
  auto* particle = sub("particle", "particle filter against the Kalman-Bucy filter");
  particle->add_option("--particles", n_part, "number of particles");
  particle->add_option("--stream", stream, "stream id of the simulated path");
  auto* converge = sub("converge", "grid refinement study of the terminal estimate");
  converge->add_option("--k-list", k_list, "grid sizes, each dividing the last")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    af::ScenarioConfig cfg = resolve(c, flags[name]);
    const bool grid_given = flags[name].grid_k->count() > 0 || !c.config_path.empty();
    const bool horizon_given = flags[name].horizon->count() > 0 || !c.config_path.empty();
    if (name == "stability") {
      if (!flags[name].model->count() && c.config_path.empty()) cfg.scenario = "stability-demo";
      if (!horizon_given) cfg.horizon = 20.0;
      if (!grid_given) cfg.steps = 4000;
    }
    if (name == "volterra" && !grid_given) cfg.steps = 512;
    if (name == "particle" && !grid_given) cfg.steps = 500;
    if (name == "particle" && !flags[name].model->count() && c.config_path.empty()) {
      cfg.scenario = "scalar-demo";
    }
    if (name == "converge" && !flags[name].model->count() && c.config_path.empty()) {
      cfg.scenario = "scalar-demo";
    }
    // Evaluation times only matter for ratio tables.
    if (name != "ratios") cfg.eval_times.clear();
    if (name == "simulate" && !flags[name].paths->count() && c.config_path.empty()) cfg.n_paths = 1;
    cfg.validate();
    const fs::path out(c.out_dir);
    if (name == "kernel") return cmd_kernel(cfg, out);
    if (name == "simulate") return cmd_simulate(cfg, out, binary);
    if (name == "filter") return cmd_filter(cfg, out, stream);
    if (name == "ratios") return cmd_ratios(cfg, out);
    if (name == "stability") return cmd_stability(cfg, out, t_a, t_b, stream);
    if (name == "volterra") return cmd_volterra(cfg, out, kernel_file, p_terms, q_terms, stream);
    if (name == "particle") return cmd_particle(cfg, out, n_part, stream);
    if (name == "converge") return cmd_converge(cfg, out, k_list);
    return 2;
  } catch (const af::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return af::is_validation_error(e.code()) ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
