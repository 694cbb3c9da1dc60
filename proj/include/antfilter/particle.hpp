#pragma once

// Weighted particle approximation of the conditional law of the augmented
// state U = (X, Xbar, N) given the observations.
//
// The observation noise N~ that drives U is the same noise that enters
// dZ = k(U) dt + dN~. Conditionally on the data each particle therefore moves
// with dN~ = dZ - k(U) dt and only W is simulated; the weight is the
// Girsanov likelihood exp(k^T dZ - |k|^2 dt / 2).

#include "antfilter/models.hpp"
#include "antfilter/rng.hpp"

#include <numeric>

namespace antfilter {

struct Ensemble {
  Matrix particles;  // dim_u x N, one particle per column
  Vector weights;    // normalized
  int time = 0;      // grid index
  double ess = 0.0;

  int size() const { return static_cast<int>(particles.cols()); }

  void update_ess() { ess = 1.0 / weights.squaredNorm(); }
};

/// Ensemble at t = 0: X and Xbar blocks both equal to one draw of X0, N block
/// zero, equal weights.
inline Ensemble initial_ensemble(const Vector& mean, const Matrix& cov, int dim_obs, int n_part,
                                 const CounterRng& rng) {
  ANTFILTER_REQUIRE(n_part >= 1, ErrorCode::InvalidArgument, "need at least one particle");
  const int m = static_cast<int>(mean.size());
  const Matrix root = psd_sqrt(symmetrize(cov));
  std::vector<double> draws(static_cast<std::size_t>(m) * n_part);
  rng.normals(CounterRng::kSetupStep, draws);
  const Eigen::Map<const Matrix> e(draws.data(), m, n_part);
  Ensemble ens;
  ens.particles = Matrix::Zero(2 * m + dim_obs, n_part);
  const Matrix x0 = (root * e).colwise() + mean;
  ens.particles.topRows(m) = x0;
  ens.particles.middleRows(m, m) = x0;
  ens.weights = Vector::Constant(n_part, 1.0 / n_part);
  ens.update_ess();
  return ens;
}

/// Euler-Maruyama under the prior: dU = b dt + c dN~ + sigma dW with fresh,
/// independent N~ and W increments. Weights are untouched.
inline void propagate(Ensemble& ens, const AugmentedCoefficients& coeffs, double dt,
                      const CounterRng& rng) {
  const TimeGrid& grid = coeffs.grid();
  const int np = ens.size();
  const int l = coeffs.dim_noise;
  const int n = coeffs.dim_obs;
  std::vector<double> draws(static_cast<std::size_t>(l + n) * np);
  rng.normals(static_cast<std::uint32_t>(ens.time), draws);
  const Eigen::Map<const Matrix> e(draws.data(), l + n, np);
  const Matrix drift = coeffs.drift_batch(grid[ens.time], Side::Right, ens.particles);
  ens.particles += drift * dt + std::sqrt(dt) * (coeffs.sigma * e.topRows(l) +
                                                 coeffs.c * e.bottomRows(n));
  ++ens.time;
}

/// Euler-Maruyama given the observed increment: dN~ = dz - k(U) dt, so the
/// c-term is known and only W is drawn.
inline void propagate_observed(Ensemble& ens, const AugmentedCoefficients& coeffs, double dt,
                               const Vector& dz, const CounterRng& rng) {
  const TimeGrid& grid = coeffs.grid();
  const double t = grid[ens.time];
  const int np = ens.size();
  const int l = coeffs.dim_noise;
  std::vector<double> draws(static_cast<std::size_t>(l) * np);
  rng.normals(static_cast<std::uint32_t>(ens.time), draws);
  const Eigen::Map<const Matrix> e(draws.data(), l, np);
  const Matrix drift = coeffs.drift_batch(t, Side::Right, ens.particles);
  const Matrix obs = coeffs.observation_batch(t, Side::Right, ens.particles);
  Matrix dn = -obs * dt;
  dn.colwise() += dz;
  ens.particles += drift * dt + coeffs.c * dn + std::sqrt(dt) * (coeffs.sigma * e);
  ++ens.time;
}

/// Multiplies the weights by exp(k^T dz - |k|^2 dt / 2) and renormalizes.
/// Returns log of the unnormalized weight sum (the increment of the log
/// normalizing constant).
inline double reweight(Ensemble& ens, const AugmentedCoefficients& coeffs, const Vector& dz,
                       double dt) {
  const double t = coeffs.grid()[ens.time];
  const Matrix obs = coeffs.observation_batch(t, Side::Right, ens.particles);
  const Vector loglik = (obs.transpose() * dz).array() - 0.5 * dt * obs.colwise().squaredNorm().transpose().array();
  Vector logw = ens.weights.array().log().matrix() + loglik;
  const double top = logw.maxCoeff();
  if (!std::isfinite(top)) throw Error(ErrorCode::AllWeightsZero, "all particle weights vanished");
  Vector w = (logw.array() - top).exp().matrix();
  const double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorCode::AllWeightsZero, "all particle weights vanished");
  }
  ens.weights = w / total;
  ens.update_ess();
  return top + std::log(total);
}

/// Offspring counts of systematic resampling for offset u in [0, 1), drawing
/// `draws` offspring (default: one per weight).
inline std::vector<int> systematic_offspring(const Vector& weights, double u, int draws = -1) {
  const int nw = static_cast<int>(weights.size());
  const int np = draws < 0 ? nw : draws;
  std::vector<int> counts(nw, 0);
  double cum = 0.0;
  int j = 0;
  for (int i = 0; i < nw; ++i) {
    cum += weights(i) * np;
    // Points u, u+1, ..., strictly below the running cumulative sum.
    while (j < np && u + j < cum) {
      ++counts[i];
      ++j;
    }
  }
  // Rounding can leave the last pointer unassigned; give it to the last
  // particle with positive weight.
  for (int i = nw - 1; j < np && i >= 0; --i) {
    if (weights(i) > 0.0) {
      counts[i] += np - j;
      j = np;
    }
  }
  return counts;
}

inline void resample_systematic(Ensemble& ens, double u) {
  const auto counts = systematic_offspring(ens.weights, u);
  Matrix next(ens.particles.rows(), ens.particles.cols());
  int col = 0;
  for (int i = 0; i < ens.size(); ++i) {
    for (int c = 0; c < counts[i]; ++c) next.col(col++) = ens.particles.col(i);
  }
  ens.particles = std::move(next);
  ens.weights = Vector::Constant(ens.size(), 1.0 / ens.size());
  ens.update_ess();
}

inline void resample_systematic(Ensemble& ens, const CounterRng& rng) {
  resample_systematic(ens, rng.uniform(static_cast<std::uint32_t>(ens.time), 0));
}

struct ParticleRun {
  TimeGrid grid;
  Path mean;                // weighted mean of the X block
  std::vector<Matrix> cov;  // weighted covariance of the X block
  std::vector<double> ess;
  std::vector<double> log_norm;  // cumulative log of unnormalized weight sums
  int resamples = 0;
};

struct ParticleOptions {
  int n_part = 1000;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  double resample_fraction = 0.5;
};

namespace detail {

inline void record_moments(const Ensemble& ens, int m, int k, ParticleRun& run) {
  const auto x = ens.particles.topRows(m);
  const Vector mean = x * ens.weights;
  const Matrix centered = x.colwise() - mean;
  run.mean.row(k) = mean.transpose();
  run.cov[k] = symmetrize(centered * ens.weights.asDiagonal() * centered.transpose());
  run.ess[k] = ens.ess;
}

}  // namespace detail

/// Reweight / propagate / resample along the grid.
inline ParticleRun run_particle_filter(const NonlinearModel& model, const TimeGrid& grid,
                                       const Path& z_path, const ParticleOptions& opt) {
  const AugmentedCoefficients coeffs = build_augmented_nonlinear(model, grid);
  ANTFILTER_REQUIRE(z_path.rows() == grid.size() && z_path.cols() == coeffs.dim_obs,
                    ErrorCode::GridMismatch, "observation path does not match the grid");
  const int m = coeffs.dim_signal;
  const CounterRng move_rng(opt.seed, 2 * opt.stream);
  const CounterRng pick_rng(opt.seed, 2 * opt.stream + 1);
  Ensemble ens =
      initial_ensemble(model.init_mean, model.corr.sigma0_cov, coeffs.dim_obs, opt.n_part, move_rng);

  ParticleRun run;
  run.grid = grid;
  run.mean.resize(grid.size(), m);
  run.cov.resize(grid.size());
  run.ess.resize(grid.size());
  run.log_norm.assign(grid.size(), 0.0);
  detail::record_moments(ens, m, 0, run);
  for (int k = 0; k < grid.steps(); ++k) {
    const double dt = grid.dt(k);
    const Vector dz = (z_path.row(k + 1) - z_path.row(k)).transpose();
    run.log_norm[k + 1] = run.log_norm[k] + reweight(ens, coeffs, dz, dt);
    propagate_observed(ens, coeffs, dt, dz, move_rng);
    if (ens.ess < opt.resample_fraction * ens.size()) {
      resample_systematic(ens, pick_rng);
      ++run.resamples;
    }
    detail::record_moments(ens, m, k + 1, run);
  }
  return run;
}

}  // namespace antfilter
