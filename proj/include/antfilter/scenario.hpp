#pragma once

// Experiments: the radar tracking model, paired Monte Carlo error ratios of
// the anticipative filter against the baseline, and grid-refinement studies.

#include "antfilter/kalman.hpp"

#include <atomic>
#include <mutex>
#include <thread>

namespace antfilter {

/// The 6 x 2 matrix M placing N_1 on (r, u1) and (theta, u2).
inline Matrix radar_selector() {
  Matrix sel = Matrix::Zero(6, 2);
  sel(0, 0) = 1.0;
  sel(2, 0) = 1.0;
  sel(3, 1) = 1.0;
  sel(5, 1) = 1.0;
  return sel;
}

/// Range/bearing tracking with manoeuvre noise; X0 = xi + gamma M N_1.
inline LinearModel radar_model(double gamma, double horizon = 1.0) {
  ANTFILTER_REQUIRE(gamma >= 0.0, ErrorCode::InvalidArgument, "gamma must be nonnegative");
  constexpr double kappa = 0.5;
  constexpr double sigma_theta = 0.017;
  constexpr double sigma1 = 103.0 / 3.0;
  constexpr double sigma2 = 1.3;
  Matrix a = Matrix::Zero(6, 6);
  a(0, 1) = 1.0;
  a(1, 2) = 1.0;
  a(2, 2) = kappa - 1.0;
  a(3, 4) = 1.0;
  a(4, 5) = 1.0;
  a(5, 5) = kappa - 1.0;
  Matrix sigma0 = Matrix::Zero(6, 2);
  sigma0(2, 0) = sigma1;
  sigma0(5, 1) = sigma2;
  Matrix h = Matrix::Zero(2, 6);
  h(0, 0) = 1.0 / sigma_theta;
  h(1, 3) = 1.0 / sigma_theta;
  const Matrix sel = radar_selector();
  const Matrix sigma = Matrix::Identity(6, 6) + gamma * gamma * sel * sel.transpose();
  CorrelationSpec corr = gamma == 0.0
                             ? zero_correlation(sigma, 2, horizon)
                             : truncated_linear_correlation(gamma * sel.transpose(), 1.0, sigma, horizon);
  LinearModel model = make_linear_model(a, sigma0, h, std::move(corr));
  model.name = "radar";
  return model;
}

/// dX = -X dt + dW, dZ = X dt + dN, rho(t) = t/2, Sigma = 1.
inline LinearModel scalar_demo_model(double horizon = 1.0) {
  const Matrix one = Matrix::Identity(1, 1);
  LinearModel model =
      make_linear_model(-one, one, one, linear_correlation(0.5 * one, one, horizon));
  model.name = "scalar-demo";
  return model;
}

/// dX = dW, dZ = X dt + dN with rho' = sin^2(2 pi t) on [0, 1/2], Sigma = 1.
inline LinearModel stability_demo_model(double horizon = 20.0) {
  const Matrix one = Matrix::Identity(1, 1);
  LinearModel model = make_linear_model(Matrix::Zero(1, 1), one, one,
                                        bump_correlation(one, 0.5, one, horizon));
  model.name = "stability-demo";
  return model;
}

/// Runs fn(i) for i in [0, count) on a pool of threads. Each index is handled
/// exactly once; callers write results into slot i so the outcome does not
/// depend on scheduling.
template <class Fn>
void parallel_for(int count, Fn&& fn, int threads = 0) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(count, 1));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(count);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct ScenarioConfig {
  std::string scenario = "radar";  // built-in id or a model file path
  double gamma = 1.0;
  double horizon = 1.0;
  int steps = 1000;
  int n_paths = 2000;
  std::uint64_t seed = 42;
  std::vector<std::string> outputs = {"csv", "json", "plotdata"};
  std::vector<double> eval_times = {0.75, 1.0};
  int threads = 0;
  MeanScheme scheme = MeanScheme::Explicit;

  TimeGrid grid() const { return TimeGrid::uniform(horizon, steps); }

  void validate() const {
    ANTFILTER_REQUIRE(steps >= 2, ErrorCode::InvalidArgument, "grid needs K >= 2");
    ANTFILTER_REQUIRE(n_paths >= 1, ErrorCode::InvalidArgument, "need at least one path");
    ANTFILTER_REQUIRE(horizon > 0.0, ErrorCode::InvalidArgument, "horizon must be positive");
    const TimeGrid g = grid();
    for (double t : eval_times) {
      ANTFILTER_REQUIRE(g.find(t) >= 0, ErrorCode::InvalidArgument,
                        "evaluation time " + std::to_string(t) + " is not a grid point");
    }
    for (const auto& o : outputs) {
      ANTFILTER_REQUIRE(o == "csv" || o == "json" || o == "plotdata", ErrorCode::InvalidArgument,
                        "unknown output kind '" + o + "'");
    }
  }
};

struct RatioReport {
  double eval_time = 0.0;
  Vector ratio;  // R_i
  Vector se;     // delta-method standard errors
  Vector mse_anticipative;
  Vector mse_baseline;
  int n_paths = 0;
  std::uint64_t seed = 0;
};

/// Per-path squared errors of both filters at the evaluation indices.
struct PairedErrors {
  std::vector<int> eval_index;
  // [path][eval][component]
  std::vector<std::vector<Vector>> anticipative;
  std::vector<std::vector<Vector>> baseline;
};

inline PairedErrors paired_errors(const LinearModel& model, const ScenarioConfig& cfg) {
  cfg.validate();
  const TimeGrid grid = cfg.grid();
  const AnticipativeFilter ant(model, grid);
  const ClassicalFilter cls = matched_baseline(ant, model, grid);
  const BundleSampler sampler(model, grid);
  PairedErrors out;
  for (double t : cfg.eval_times) out.eval_index.push_back(grid.find(t));
  out.anticipative.resize(cfg.n_paths);
  out.baseline.resize(cfg.n_paths);
  parallel_for(
      cfg.n_paths,
      [&](int i) {
        const PathBundle b = sampler.sample(cfg.seed, static_cast<std::uint64_t>(i));
        const FilterRun ra = ant.run(b.z, cfg.scheme);
        const FilterRun rc = cls.run(b.z, cfg.scheme);
        auto& ea = out.anticipative[i];
        auto& ec = out.baseline[i];
        for (int k : out.eval_index) {
          ea.push_back((ra.x_hat.row(k) - b.x.row(k)).array().square().matrix().transpose());
          ec.push_back((rc.x_hat.row(k) - b.x.row(k)).array().square().matrix().transpose());
        }
      },
      cfg.threads);
  return out;
}

/// R_i = sqrt(mean ea_i / mean ec_i) with the delta-method standard error
///   se(R) = R/2 * sqrt(var(ea)/A^2 + var(ec)/B^2 - 2 cov(ea, ec)/(A B)) / sqrt(n).
inline std::vector<RatioReport> ratio_reports(const PairedErrors& errs,
                                              const std::vector<double>& eval_times, int n_paths,
                                              std::uint64_t seed) {
  std::vector<RatioReport> reports;
  const int n = n_paths;
  for (std::size_t e = 0; e < eval_times.size(); ++e) {
    const int m = static_cast<int>(errs.anticipative[0][e].size());
    Vector sa = Vector::Zero(m), sc = Vector::Zero(m);
    for (int i = 0; i < n; ++i) {
      sa += errs.anticipative[i][e];
      sc += errs.baseline[i][e];
    }
    const Vector A = sa / n;
    const Vector B = sc / n;
    Vector vaa = Vector::Zero(m), vcc = Vector::Zero(m), vac = Vector::Zero(m);
    for (int i = 0; i < n; ++i) {
      const Vector da = errs.anticipative[i][e] - A;
      const Vector dc = errs.baseline[i][e] - B;
      vaa += da.cwiseProduct(da);
      vcc += dc.cwiseProduct(dc);
      vac += da.cwiseProduct(dc);
    }
    const double denom = std::max(1, n - 1);
    vaa /= denom;
    vcc /= denom;
    vac /= denom;
    RatioReport rep;
    rep.eval_time = eval_times[e];
    rep.n_paths = n;
    rep.seed = seed;
    rep.mse_anticipative = A;
    rep.mse_baseline = B;
    rep.ratio.resize(m);
    rep.se.resize(m);
    for (int i = 0; i < m; ++i) {
      if (!(B(i) > std::numeric_limits<double>::min())) {
        throw Error(ErrorCode::DivisionByZero,
                    "baseline mean-square error underflows for component " + std::to_string(i + 1));
      }
      rep.ratio(i) = std::sqrt(A(i) / B(i));
      const double rel = vaa(i) / (A(i) * A(i)) + vcc(i) / (B(i) * B(i)) - 2.0 * vac(i) / (A(i) * B(i));
      rep.se(i) = 0.5 * rep.ratio(i) * std::sqrt(std::max(0.0, rel) / n);
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

inline std::vector<RatioReport> monte_carlo_ratios(const LinearModel& model,
                                                   const ScenarioConfig& cfg) {
  const PairedErrors errs = paired_errors(model, cfg);
  return ratio_reports(errs, cfg.eval_times, cfg.n_paths, cfg.seed);
}

inline std::vector<RatioReport> monte_carlo_ratios(const ScenarioConfig& cfg) {
  ANTFILTER_REQUIRE(cfg.scenario == "radar", ErrorCode::InvalidArgument,
                    "only the radar scenario is built in; pass a model instead");
  return monte_carlo_ratios(radar_model(cfg.gamma, cfg.horizon), cfg);
}

struct ConvergenceReport {
  std::vector<int> k_list;
  std::vector<double> rms_terminal;  // RMS over paths of |x_hat(T)| at each K
  std::vector<double> differences;   // RMS of x_hat_T(K_{i+1}) - x_hat_T(K_i)
  std::vector<double> orders;        // log2 of successive difference ratios (halving grids)
  int n_paths = 0;
  std::uint64_t seed = 0;
};

/// Simulates on the finest grid and subsamples the observations to every
/// coarser grid, so all resolutions see the same data.
inline ConvergenceReport convergence_study(const LinearModel& model, double horizon,
                                           const std::vector<int>& k_list, std::uint64_t seed,
                                           int n_paths = 16, int threads = 0) {
  ANTFILTER_REQUIRE(!k_list.empty(), ErrorCode::InvalidArgument, "k_list is empty");
  for (std::size_t i = 1; i < k_list.size(); ++i) {
    ANTFILTER_REQUIRE(k_list[i] >= k_list[i - 1], ErrorCode::InvalidArgument,
                      "k_list must be nondecreasing");
  }
  const int kmax = k_list.back();
  for (int k : k_list) {
    ANTFILTER_REQUIRE(k >= 1 && kmax % k == 0, ErrorCode::InvalidArgument,
                      "every K must divide the finest K");
  }
  const TimeGrid fine = TimeGrid::uniform(horizon, kmax);
  const BundleSampler sampler(model, fine);
  std::vector<AnticipativeFilter> filters;
  for (int k : k_list) filters.emplace_back(model, TimeGrid::uniform(horizon, k));
  const int m = model.dim_signal();
  // terminal[path][level]
  std::vector<std::vector<Vector>> terminal(n_paths);
  parallel_for(
      n_paths,
      [&](int i) {
        const PathBundle b = sampler.sample(seed, static_cast<std::uint64_t>(i));
        for (std::size_t lvl = 0; lvl < k_list.size(); ++lvl) {
          const int k = k_list[lvl];
          const int stride = kmax / k;
          Path z(k + 1, b.z.cols());
          for (int j = 0; j <= k; ++j) z.row(j) = b.z.row(j * stride);
          const FilterRun run = filters[lvl].run(z);
          terminal[i].push_back(run.x_hat.row(k).transpose());
        }
      },
      threads);
  ConvergenceReport rep;
  rep.k_list = k_list;
  rep.n_paths = n_paths;
  rep.seed = seed;
  for (std::size_t lvl = 0; lvl < k_list.size(); ++lvl) {
    double s = 0.0;
    for (int i = 0; i < n_paths; ++i) s += terminal[i][lvl].squaredNorm();
    rep.rms_terminal.push_back(std::sqrt(s / (n_paths * m)));
  }
  for (std::size_t lvl = 0; lvl + 1 < k_list.size(); ++lvl) {
    double s = 0.0;
    for (int i = 0; i < n_paths; ++i) s += (terminal[i][lvl + 1] - terminal[i][lvl]).squaredNorm();
    rep.differences.push_back(std::sqrt(s / (n_paths * m)));
  }
  for (std::size_t i = 0; i + 1 < rep.differences.size(); ++i) {
    const double ratio = rep.differences[i] / rep.differences[i + 1];
    const double refine = static_cast<double>(k_list[i + 2]) / k_list[i + 1];
    rep.orders.push_back(std::log(ratio) / std::log(refine));
  }
  return rep;
}

}  // namespace antfilter
