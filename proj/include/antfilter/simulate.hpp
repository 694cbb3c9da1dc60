#pragma once

// Reproducible Monte Carlo realizations of (X0, W, N, X, Z).
//
// The noise is drawn first and X0 is built from it,
//   X0 = mean + sum_k A_k^T dN_k + xi,   A_k = (rho(t_{k+1}) - rho(t_k)) / dt_k,
// with xi ~ N(0, Sigma - sum_k A_k^T A_k dt_k) independent of (W, N). This
// gives E[N_t X0^T] = rho(t) exactly at every grid point.

#include "antfilter/models.hpp"
#include "antfilter/rng.hpp"

#include <cstdint>

namespace antfilter {

struct PathBundle {
  TimeGrid grid;
  Vector x0;
  Path w;  // l columns
  Path n;  // n columns
  Path x;  // m columns
  Path z;  // n columns
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

/// Precomputes everything that does not depend on the random draws so that
/// many bundles can be generated cheaply (and concurrently: sample() is const).
class BundleSampler {
 public:
  using TimeFieldFn = std::function<Vector(double t, const Vector& x)>;

  BundleSampler(const LinearModel& model, const TimeGrid& grid) : grid_(grid) {
    model.validate();
    std::vector<Matrix> a(grid.size()), h(grid.size());
    for (int k = 0; k < grid.size(); ++k) {
      a[k] = model.a(grid[k]);
      h[k] = model.h(grid[k]);
    }
    drift_at_ = [a](int k, const Vector& x) -> Vector { return a[k] * x; };
    obs_at_ = [h](int k, const Vector& x) -> Vector { return h[k] * x; };
    init(model.corr, model.sigma0, model.init_mean);
  }

  BundleSampler(const NonlinearModel& model, const TimeGrid& grid) : grid_(grid) {
    model.validate();
    auto a = model.drift;
    auto h = model.obs;
    drift_at_ = [a](int, const Vector& x) -> Vector { return a(x); };
    obs_at_ = [h](int, const Vector& x) -> Vector { return h(x); };
    init(model.corr, model.sigma0, model.init_mean);
  }

  const TimeGrid& grid() const { return grid_; }
  const Matrix& residual_cov() const { return residual_; }

  PathBundle sample(std::uint64_t seed, std::uint64_t stream_id) const {
    const CounterRng rng(seed, stream_id);
    const int K = grid_.steps();
    PathBundle b;
    b.grid = grid_;
    b.seed = seed;
    b.stream_id = stream_id;
    b.w = Path::Zero(K + 1, l_);
    b.n = Path::Zero(K + 1, n_);
    b.x = Path::Zero(K + 1, m_);
    b.z = Path::Zero(K + 1, n_);

    std::vector<double> draws(static_cast<std::size_t>(l_ + n_));
    Vector x0 = mean_;
    std::vector<Vector> dw(K), dn(K);
    for (int k = 0; k < K; ++k) {
      rng.normals(static_cast<std::uint32_t>(k), draws);
      const double sq = std::sqrt(grid_.dt(k));
      dw[k] = sq * Eigen::Map<const Vector>(draws.data(), l_);
      dn[k] = sq * Eigen::Map<const Vector>(draws.data() + l_, n_);
      b.w.row(k + 1) = b.w.row(k) + dw[k].transpose();
      b.n.row(k + 1) = b.n.row(k) + dn[k].transpose();
      x0.noalias() += loadings_[k].transpose() * dn[k];
    }
    std::vector<double> xi(static_cast<std::size_t>(m_));
    rng.normals(CounterRng::kSetupStep, xi);
    x0.noalias() += residual_sqrt_ * Eigen::Map<const Vector>(xi.data(), m_);
    b.x0 = x0;

    Vector x = x0;
    Vector hx = obs_at_(0, x);
    b.x.row(0) = x.transpose();
    for (int k = 0; k < K; ++k) {
      const double dt = grid_.dt(k);
      Vector next = x + drift_at_(k, x) * dt + sigma0_ * dw[k];
      Vector hnext = obs_at_(k + 1, next);
      b.z.row(k + 1) = b.z.row(k) + (0.5 * dt * (hx + hnext) + dn[k]).transpose();
      b.x.row(k + 1) = next.transpose();
      x = std::move(next);
      hx = std::move(hnext);
    }
    return b;
  }

 private:
  void init(const CorrelationSpec& corr, const Matrix& sigma0, const Vector& mean) {
    corr.validate();
    m_ = corr.dim_signal;
    n_ = corr.dim_obs;
    l_ = static_cast<int>(sigma0.cols());
    sigma0_ = sigma0;
    mean_ = mean;
    loadings_.resize(grid_.steps());
    Matrix explained = Matrix::Zero(m_, m_);
    for (int k = 0; k < grid_.steps(); ++k) {
      const double dt = grid_.dt(k);
      loadings_[k] = (corr.rho(grid_[k + 1], Side::Left) - corr.rho(grid_[k], Side::Right)) / dt;
      explained += dt * loadings_[k].transpose() * loadings_[k];
    }
    residual_ = symmetrize(corr.sigma0_cov - explained);
    const double lo = min_eigenvalue(residual_);
    if (lo < psd_floor(corr.sigma0_cov)) {
      throw Error(ErrorCode::ResidualCovNotPSD,
                  "residual covariance of X0 has eigenvalue " + std::to_string(lo));
    }
    residual_sqrt_ = psd_sqrt(residual_);
  }

  TimeGrid grid_;
  int m_ = 0, n_ = 0, l_ = 0;
  Matrix sigma0_;
  Vector mean_;
  std::vector<Matrix> loadings_;  // A_k, n x m
  Matrix residual_;
  Matrix residual_sqrt_;
  std::function<Vector(int, const Vector&)> drift_at_;
  std::function<Vector(int, const Vector&)> obs_at_;
};

inline PathBundle sample_bundle(const LinearModel& model, const TimeGrid& grid,
                                std::uint64_t seed, std::uint64_t stream_id) {
  return BundleSampler(model, grid).sample(seed, stream_id);
}

inline PathBundle sample_bundle(const NonlinearModel& model, const TimeGrid& grid,
                                std::uint64_t seed, std::uint64_t stream_id) {
  return BundleSampler(model, grid).sample(seed, stream_id);
}

/// N~_t = N_t - int_0^t lambda(t, u) N_u du - g(t) X0. lambda is separable,
/// so the integral is g(t) int_0^t p N du + int_0^t q N du and both pieces
/// are accumulated by trapezoid in one pass.
inline Path tilde_n_path(const PathBundle& bundle, const KernelTable& table) {
  ANTFILTER_REQUIRE(bundle.grid.same_as(table.grid), ErrorCode::GridMismatch,
                    "bundle and kernel table use different grids");
  const TimeGrid& grid = table.grid;
  const int n = table.dim_obs;
  auto q_at = [&](int k, Side side) -> Matrix {
    return table.r.at_index(k, side) - table.g[k] * table.p.at_index(k, side);
  };
  Path out(grid.size(), n);
  Vector xbar = bundle.x0;
  Vector q_int = Vector::Zero(n);
  out.row(0) = (bundle.n.row(0).transpose() - table.g[0] * xbar).transpose();
  for (int k = 0; k < grid.steps(); ++k) {
    const double dt = grid.dt(k);
    const Vector n0 = bundle.n.row(k).transpose();
    const Vector n1 = bundle.n.row(k + 1).transpose();
    xbar += 0.5 * dt * (table.p.at_index(k, Side::Right) * n0 +
                        table.p.at_index(k + 1, Side::Left) * n1);
    q_int += 0.5 * dt * (q_at(k, Side::Right) * n0 + q_at(k + 1, Side::Left) * n1);
    out.row(k + 1) = (n1 - table.g[k + 1] * xbar - q_int).transpose();
  }
  return out;
}

}  // namespace antfilter
