#pragma once

// Kalman-Bucy filtering of the augmented anticipative system, the classical
// baseline that ignores the correlation between X0 and N, and a brute-force
// Gaussian-conditioning oracle for the time-discretized model.

#include "antfilter/models.hpp"
#include "antfilter/simulate.hpp"

#include <map>

namespace antfilter {

struct RiccatiOptions {
  /// RK4 sub-steps per grid interval; 0 picks them from a stiffness bound.
  int substeps = 0;
  /// Per-interval sub-step counts; overrides `substeps` when non-empty.
  std::vector<int> schedule;
  /// Target for dt_sub * Lipschitz(rhs) when substeps are automatic.
  double stability_target = 0.5;
  int max_substeps = 1 << 20;
  double blowup_cap = 1e12;
  bool check_psd = true;
};

namespace detail {

struct RiccatiInterval {
  Matrix f0, f1;  // F - C H at both ends
  Matrix h0, h1;
  Matrix q;       // S S^T

  Matrix rhs(double w, const Matrix& p) const {
    const Matrix f = (1.0 - w) * f0 + w * f1;
    const Matrix h = (1.0 - w) * h0 + w * h1;
    const Matrix ph = p * h.transpose();
    Matrix out = p * f.transpose() + f * p + q - ph * ph.transpose();
    return out;
  }
};

inline RiccatiInterval riccati_interval(const LinearGaussianSystem& sys, int k) {
  RiccatiInterval iv;
  const Matrix& h0 = sys.observation.at_index(k, Side::Right);
  const Matrix& h1 = sys.observation.at_index(k + 1, Side::Left);
  iv.f0 = sys.drift.at_index(k, Side::Right) - sys.coupling * h0;
  iv.f1 = sys.drift.at_index(k + 1, Side::Left) - sys.coupling * h1;
  iv.h0 = h0;
  iv.h1 = h1;
  iv.q = sys.sigma * sys.sigma.transpose();
  return iv;
}

}  // namespace detail

/// Covariance path of the Kalman-Bucy filter:
///   P' = P F^T + F P + S S^T + C C^T - (C + P H^T)(C + P H^T)^T,
/// integrated by RK4 on the grid (optionally with sub-steps), symmetrized
/// after every step. Evaluated in the equivalent form with F - C H, which
/// avoids cancelling the C C^T terms.
inline std::vector<Matrix> riccati_integrate(const LinearGaussianSystem& sys, const Matrix& p0,
                                             const RiccatiOptions& opt = {},
                                             std::vector<int>* used = nullptr) {
  const int d = sys.dim_state();
  ANTFILTER_REQUIRE(p0.rows() == d && p0.cols() == d, ErrorCode::DimensionMismatch,
                    "initial covariance has the wrong size");
  ANTFILTER_REQUIRE(min_eigenvalue(p0) >= psd_floor(p0), ErrorCode::PSDViolation,
                    "initial covariance is not PSD");
  const TimeGrid& grid = sys.grid;
  ANTFILTER_REQUIRE(opt.schedule.empty() || static_cast<int>(opt.schedule.size()) == grid.steps(),
                    ErrorCode::GridMismatch, "sub-step schedule does not match the grid");
  if (used) used->assign(grid.steps(), 0);
  std::vector<Matrix> path(grid.size());
  path[0] = symmetrize(p0);
  Matrix p = path[0];
  for (int k = 0; k < grid.steps(); ++k) {
    const auto iv = detail::riccati_interval(sys, k);
    const double dt = grid.dt(k);
    int nsub = opt.schedule.empty() ? opt.substeps : opt.schedule[k];
    if (nsub <= 0) {
      const double hnorm = std::max(iv.h0.norm(), iv.h1.norm());
      const double hp = std::max((iv.h0 * p).norm(), (iv.h1 * p).norm());
      const double lip = 2.0 * std::max(iv.f0.norm(), iv.f1.norm()) + 2.0 * hnorm * hp;
      const double want = std::ceil(dt * lip / opt.stability_target);
      nsub = static_cast<int>(std::clamp(want, 1.0, static_cast<double>(opt.max_substeps)));
    }
    if (used) (*used)[k] = nsub;
    const double hs = 1.0 / nsub;  // sub-step in the normalized interval variable
    for (int j = 0; j < nsub; ++j) {
      const double w = j * hs;
      const Matrix k1 = iv.rhs(w, p);
      const Matrix k2 = iv.rhs(w + 0.5 * hs, p + (0.5 * hs * dt) * k1);
      const Matrix k3 = iv.rhs(w + 0.5 * hs, p + (0.5 * hs * dt) * k2);
      const Matrix k4 = iv.rhs(w + hs, p + (hs * dt) * k3);
      p += (hs * dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      p = symmetrize(p);
    }
    if (!p.allFinite() || p.norm() > opt.blowup_cap) {
      throw Error(ErrorCode::RiccatiBlowup,
                  "Riccati solution exceeded the cap at t=" + std::to_string(grid[k + 1]));
    }
    if (opt.check_psd && min_eigenvalue(p) < psd_floor(p)) {
      throw Error(ErrorCode::PSDViolation,
                  "Riccati solution lost positive semidefiniteness at t=" +
                      std::to_string(grid[k + 1]));
    }
    path[k + 1] = p;
  }
  return path;
}

enum class MeanScheme {
  /// U_{k+1} = U_k + F_k U_k dt + G_k (dZ_k - H_k U_k dt),  G = C + P H^T.
  Explicit,
  /// (I - F_k dt + G_k H_k dt) U_{k+1} = U_k + G_k dZ_k. Stable for any dt;
  /// useful when P H^T H dt is large, e.g. strongly anticipative radar runs.
  SemiImplicit,
};

struct FilterRun {
  TimeGrid grid;
  int dim_signal = 0;
  Path u_hat;               // conditional mean of the full state
  std::vector<Matrix> p;    // conditional covariance of the full state
  Path innovation;
  Path x_hat;               // first dim_signal components of u_hat
  std::vector<Matrix> p11;  // top-left dim_signal block of p
};

/// Euler scheme driven by the observed increments:
///   U_{k+1} = U_k + F_k U_k dt + (C + P_k H_k^T)(dZ_k - H_k U_k dt).
inline FilterRun filter_run(const LinearGaussianSystem& sys, const Path& z_path,
                            const std::vector<Matrix>& p_path, const Vector& u0,
                            int dim_signal, MeanScheme scheme = MeanScheme::Explicit) {
  const TimeGrid& grid = sys.grid;
  ANTFILTER_REQUIRE(z_path.rows() == grid.size() && z_path.cols() == sys.dim_obs(),
                    ErrorCode::GridMismatch, "observation path does not match the grid");
  ANTFILTER_REQUIRE(static_cast<int>(p_path.size()) == grid.size(), ErrorCode::GridMismatch,
                    "covariance path does not match the grid");
  ANTFILTER_REQUIRE(u0.size() == sys.dim_state(), ErrorCode::DimensionMismatch,
                    "initial mean has the wrong size");
  const int d = sys.dim_state();
  const int n = sys.dim_obs();
  FilterRun run;
  run.grid = grid;
  run.dim_signal = dim_signal;
  run.u_hat.resize(grid.size(), d);
  run.innovation = Path::Zero(grid.size(), n);
  run.p = p_path;
  Vector u = u0;
  run.u_hat.row(0) = u.transpose();
  for (int k = 0; k < grid.steps(); ++k) {
    const double dt = grid.dt(k);
    const Matrix& f = sys.drift.at_index(k, Side::Right);
    const Matrix& h = sys.observation.at_index(k, Side::Right);
    const Vector dz = (z_path.row(k + 1) - z_path.row(k)).transpose();
    const Matrix gain = sys.coupling + p_path[k] * h.transpose();
    Vector dnu;
    if (scheme == MeanScheme::Explicit) {
      dnu = dz - h * u * dt;
      u += f * u * dt + gain * dnu;
    } else {
      const Matrix lhs = Matrix::Identity(d, d) - f * dt + gain * h * dt;
      u = lhs.partialPivLu().solve(u + gain * dz);
      dnu = dz - h * u * dt;
    }
    run.u_hat.row(k + 1) = u.transpose();
    run.innovation.row(k + 1) = run.innovation.row(k) + dnu.transpose();
  }
  run.x_hat = run.u_hat.leftCols(dim_signal);
  run.p11.reserve(p_path.size());
  for (const auto& pk : p_path) run.p11.push_back(pk.topLeftCorner(dim_signal, dim_signal));
  return run;
}

/// Anticipative Kalman-Bucy filter for a linear model. The covariance path
/// does not depend on the data and is computed once at construction.
class AnticipativeFilter {
 public:
  AnticipativeFilter(const LinearModel& model, const TimeGrid& grid,
                     const RiccatiOptions& opt = {})
      : coeffs_(build_augmented_linear(model, grid)),
        system_(coeffs_.system()),
        u0_(augmented_initial_mean(model.init_mean, model.dim_obs())),
        p0_(augmented_initial_cov(model.corr.sigma0_cov, model.dim_obs())),
        p_path_(riccati_integrate(system_, p0_, opt, &schedule_)),
        dim_signal_(model.dim_signal()) {}

  FilterRun run(const Path& z_path, MeanScheme scheme = MeanScheme::Explicit) const {
    return filter_run(system_, z_path, p_path_, u0_, dim_signal_, scheme);
  }

  const AugmentedCoefficients& coefficients() const { return coeffs_; }
  const LinearGaussianSystem& system() const { return system_; }
  const std::vector<Matrix>& covariance_path() const { return p_path_; }
  const Vector& initial_mean() const { return u0_; }
  const Matrix& initial_cov() const { return p0_; }
  /// RK4 sub-steps used on each grid interval.
  const std::vector<int>& substep_schedule() const { return schedule_; }

 private:
  AugmentedCoefficients coeffs_;
  LinearGaussianSystem system_;
  Vector u0_;
  Matrix p0_;
  std::vector<int> schedule_;
  std::vector<Matrix> p_path_;
  int dim_signal_;
};

/// Standard Kalman-Bucy system for (X, Z) that treats X0 ~ N(mean, Sigma) as
/// independent of N.
inline LinearGaussianSystem classical_system(const LinearModel& model, const TimeGrid& grid) {
  model.validate();
  LinearGaussianSystem sys;
  sys.grid = grid;
  sys.drift = TabulatedMatrix::sample(grid, [&](double t, Side) { return model.a(t); });
  sys.observation = TabulatedMatrix::sample(grid, [&](double t, Side) { return model.h(t); });
  sys.sigma = model.sigma0;
  sys.coupling = Matrix::Zero(model.dim_signal(), model.dim_obs());
  return sys;
}

/// Filter that ignores the anticipation; covariance computed once.
class ClassicalFilter {
 public:
  ClassicalFilter(const LinearModel& model, const TimeGrid& grid,
                  const RiccatiOptions& opt = {})
      : system_(classical_system(model, grid)),
        mean0_(model.init_mean),
        p_path_(riccati_integrate(system_, model.corr.sigma0_cov, opt, &schedule_)),
        dim_signal_(model.dim_signal()) {}

  FilterRun run(const Path& z_path, MeanScheme scheme = MeanScheme::Explicit) const {
    return filter_run(system_, z_path, p_path_, mean0_, dim_signal_, scheme);
  }

  const LinearGaussianSystem& system() const { return system_; }
  const std::vector<Matrix>& covariance_path() const { return p_path_; }
  const std::vector<int>& substep_schedule() const { return schedule_; }

 private:
  LinearGaussianSystem system_;
  Vector mean0_;
  std::vector<int> schedule_;
  std::vector<Matrix> p_path_;
  int dim_signal_;
};

/// Baseline integrated on the same sub-step schedule as `ant`, so the two
/// covariance paths differ only through the model.
inline ClassicalFilter matched_baseline(const AnticipativeFilter& ant, const LinearModel& model,
                                        const TimeGrid& grid) {
  RiccatiOptions opt;
  opt.schedule = ant.substep_schedule();
  return ClassicalFilter(model, grid, opt);
}

inline FilterRun anticipative_filter(const LinearModel& model, const TimeGrid& grid,
                                     const Path& z_path, const RiccatiOptions& opt = {}) {
  return AnticipativeFilter(model, grid, opt).run(z_path);
}

inline FilterRun classical_baseline(const LinearModel& model, const Path& z_path,
                                    const TimeGrid& grid, const RiccatiOptions& opt = {}) {
  return ClassicalFilter(model, grid, opt).run(z_path);
}

/// Exact posterior of X at chosen grid points for the Euler-discretized model
///   X_{k+1} = (I + a_k dt) X_k + sigma0 dW_k,   dZ_k = h_k X_k dt + dN_k,
/// with X0 built from the noise increments as in BundleSampler. Every
/// quantity is an affine function of one standard normal vector; the
/// posterior follows from E[x|y] = E[x] + S12 S22^{-1} (y - E[y]).
/// Dense, so intended for small grids (K <= 256).
class GaussianConditioningOracle {
 public:
  GaussianConditioningOracle(const LinearModel& model, const TimeGrid& grid,
                             const std::vector<double>& target_times)
      : grid_(grid), m_(model.dim_signal()), n_(model.dim_obs()) {
    model.validate();
    const int K = grid.steps();
    const int l = model.dim_noise();
    const int dim = m_ + K * l + K * n_;
    auto w_col = [&](int k) { return m_ + k * l; };
    auto n_col = [&](int k) { return m_ + K * l + k * n_; };

    std::vector<int> targets;
    for (double t : target_times) {
      const int idx = grid.find(t);
      ANTFILTER_REQUIRE(idx >= 0, ErrorCode::InvalidArgument,
                        "oracle target time is not a grid point");
      targets.push_back(idx);
    }

    Matrix loads = Matrix::Zero(m_, dim);  // X_k = mean_k + loads * e
    Vector mean = model.init_mean;
    Matrix explained = Matrix::Zero(m_, m_);
    for (int k = 0; k < K; ++k) {
      const double dt = grid.dt(k);
      const Matrix a_load =
          (model.corr.rho(grid[k + 1], Side::Left) - model.corr.rho(grid[k], Side::Right)) / dt;
      loads.middleCols(n_col(k), n_) += std::sqrt(dt) * a_load.transpose();
      explained += dt * a_load.transpose() * a_load;
    }
    const Matrix residual = symmetrize(model.corr.sigma0_cov - explained);
    if (min_eigenvalue(residual) < psd_floor(model.corr.sigma0_cov)) {
      throw Error(ErrorCode::ResidualCovNotPSD, "oracle: residual covariance of X0 not PSD");
    }
    loads.leftCols(m_) = psd_sqrt(residual);

    obs_loads_ = Matrix::Zero(K * n_, dim);
    obs_mean_ = Vector::Zero(K * n_);
    std::map<int, std::pair<Vector, Matrix>> state_at;
    auto record = [&](int k) {
      if (std::find(targets.begin(), targets.end(), k) != targets.end()) {
        state_at[k] = {mean, loads};
      }
    };
    record(0);
    for (int k = 0; k < K; ++k) {
      const double dt = grid.dt(k);
      const Matrix h = model.h(grid[k]);
      const Matrix a = model.a(grid[k]);
      obs_loads_.middleRows(k * n_, n_) = dt * h * loads;
      obs_loads_.block(k * n_, n_col(k), n_, n_) += std::sqrt(dt) * Matrix::Identity(n_, n_);
      obs_mean_.segment(k * n_, n_) = dt * h * mean;
      const Matrix step = Matrix::Identity(m_, m_) + dt * a;
      loads = step * loads;
      loads.middleCols(w_col(k), l) += std::sqrt(dt) * model.sigma0;
      mean = step * mean;
      record(k + 1);
    }

    for (const auto& [k, mv] : state_at) {
      const auto& [mk, lk] = mv;
      Target tgt;
      tgt.prior_mean = mk;
      const int rows = k * n_;
      if (rows == 0) {
        tgt.gain = Matrix::Zero(m_, 0);
        tgt.cov = symmetrize(lk * lk.transpose());
      } else {
        const Matrix j = obs_loads_.topRows(rows);
        const Matrix s22 = j * j.transpose();
        const Matrix s12 = lk * j.transpose();
        Eigen::LDLT<Matrix> ldlt(s22);
        if (ldlt.info() != Eigen::Success || !(condition_number(s22) < tol::cond_max)) {
          throw Error(ErrorCode::SingularConditioning,
                      "observation covariance is numerically singular");
        }
        tgt.gain = ldlt.solve(s12.transpose()).transpose();
        tgt.cov = symmetrize(lk * lk.transpose() - tgt.gain * s12.transpose());
      }
      targets_[k] = std::move(tgt);
    }
  }

  /// E[X_t | dZ_0, ..., dZ_{k-1}] for the grid index k of target time t.
  Vector mean(const Path& z_path, double t) const {
    const auto& tgt = target(t);
    const int rows = static_cast<int>(tgt.gain.cols());
    if (rows == 0) return tgt.prior_mean;
    Vector y(rows);
    for (int k = 0; k < rows / n_; ++k) {
      y.segment(k * n_, n_) = (z_path.row(k + 1) - z_path.row(k)).transpose();
    }
    return tgt.prior_mean + tgt.gain * (y - obs_mean_.head(rows));
  }

  Matrix covariance(double t) const { return target(t).cov; }

 private:
  struct Target {
    Vector prior_mean;
    Matrix gain;
    Matrix cov;
  };

  const Target& target(double t) const {
    const int idx = grid_.find(t);
    auto it = targets_.find(idx);
    ANTFILTER_REQUIRE(it != targets_.end(), ErrorCode::InvalidArgument,
                      "time was not registered as an oracle target");
    return it->second;
  }

  TimeGrid grid_;
  int m_;
  int n_;
  Matrix obs_loads_;
  Vector obs_mean_;
  std::map<int, Target> targets_;
};

}  // namespace antfilter
