#pragma once

// Signal-observation models and their augmentation.
//
// The anticipative system
//   dX = a(X) dt + sigma0 dW,   dZ = h(X) dt + dN,   E[N_t X0^T] = rho(t)
// is rewritten on U = (X, Xbar, N), Xbar_t = X0 + int_0^t p(s) N_s ds, as
//   dU = b(U) dt + c dN~ + sigma dW,   dZ = k(U) dt + dN~
// with N~ a Brownian motion for the filtration that knows X0.

#include "antfilter/corrkernel.hpp"

#include <memory>
#include <string>

namespace antfilter {

/// dX = a(t) X dt + sigma0 dW, dZ = h(t) X dt + dN.
struct LinearModel {
  TimeMatrixFn a;       // m x m
  Matrix sigma0;        // m x l
  TimeMatrixFn h;       // n x m
  CorrelationSpec corr;
  Vector init_mean;     // E[X0]
  std::string name = "linear";

  int dim_signal() const { return corr.dim_signal; }
  int dim_obs() const { return corr.dim_obs; }
  int dim_noise() const { return static_cast<int>(sigma0.cols()); }

  void validate() const {
    corr.validate();
    const int m = dim_signal();
    const int n = dim_obs();
    ANTFILTER_REQUIRE(a && h, ErrorCode::InvalidArgument, "linear model needs a(t) and h(t)");
    const Matrix a0 = a(0.0);
    const Matrix h0 = h(0.0);
    ANTFILTER_REQUIRE(a0.rows() == m && a0.cols() == m, ErrorCode::DimensionMismatch,
                      "a(t) must be m x m");
    ANTFILTER_REQUIRE(h0.rows() == n && h0.cols() == m, ErrorCode::DimensionMismatch,
                      "h(t) must be n x m");
    ANTFILTER_REQUIRE(sigma0.rows() == m && sigma0.cols() >= 1, ErrorCode::DimensionMismatch,
                      "sigma0 must be m x l");
    ANTFILTER_REQUIRE(init_mean.size() == m, ErrorCode::DimensionMismatch,
                      "initial mean must have m entries");
  }
};

/// Constant-coefficient convenience constructor.
inline LinearModel make_linear_model(const Matrix& a, const Matrix& sigma0, const Matrix& h,
                                     CorrelationSpec corr, Vector init_mean = Vector()) {
  if (init_mean.size() == 0) init_mean = Vector::Zero(a.rows());
  LinearModel model{constant_time_fn(a), sigma0, constant_time_fn(h), std::move(corr),
                    std::move(init_mean)};
  model.validate();
  return model;
}

/// dX = a(X) dt + sigma0 dW, dZ = h(X) dt + dN.
struct NonlinearModel {
  VectorFieldFn drift;  // x -> m
  VectorFieldFn obs;    // x -> n
  Matrix sigma0;        // m x l, identity in the unit-noise formulation
  CorrelationSpec corr;
  Vector init_mean;
  double lipschitz = 1.0;  // user estimate, used for step-size guidance only
  /// Optional column-wise versions of drift and obs for whole ensembles.
  std::function<Matrix(const Matrix&)> drift_cols;
  std::function<Matrix(const Matrix&)> obs_cols;

  int dim_signal() const { return corr.dim_signal; }
  int dim_obs() const { return corr.dim_obs; }
  int dim_noise() const { return static_cast<int>(sigma0.cols()); }

  void validate() const {
    corr.validate();
    ANTFILTER_REQUIRE(drift && obs, ErrorCode::InvalidArgument,
                      "nonlinear model needs drift and observation functions");
    ANTFILTER_REQUIRE(sigma0.rows() == dim_signal(), ErrorCode::DimensionMismatch,
                      "sigma0 must be m x l");
    ANTFILTER_REQUIRE(init_mean.size() == dim_signal(), ErrorCode::DimensionMismatch,
                      "initial mean must have m entries");
    const Vector x0 = init_mean;
    ANTFILTER_REQUIRE(drift(x0).size() == dim_signal(), ErrorCode::DimensionMismatch,
                      "drift must map R^m to R^m");
    ANTFILTER_REQUIRE(obs(x0).size() == dim_obs(), ErrorCode::DimensionMismatch,
                      "observation must map R^m to R^n");
  }

  /// Largest Euler step the Lipschitz estimate deems safe.
  double suggested_step() const { return 0.5 / std::max(lipschitz, 1e-12); }
};

/// Linear model viewed as a nonlinear one (time-independent coefficients).
inline NonlinearModel as_nonlinear(const LinearModel& model) {
  const Matrix a = model.a(0.0);
  const Matrix h = model.h(0.0);
  NonlinearModel out;
  out.drift = [a](const Vector& x) -> Vector { return a * x; };
  out.obs = [h](const Vector& x) -> Vector { return h * x; };
  out.drift_cols = [a](const Matrix& xs) -> Matrix { return a * xs; };
  out.obs_cols = [h](const Matrix& xs) -> Matrix { return h * xs; };
  out.sigma0 = model.sigma0;
  out.corr = model.corr;
  out.init_mean = model.init_mean;
  out.lipschitz = std::max(a.norm(), 1e-12);
  return out;
}

/// dU = F(t) U dt + C dV + S dW, dZ = H(t) U dt + dV with V, W independent
/// standard Brownian motions. This is the common input of the Kalman-Bucy
/// machinery.
struct LinearGaussianSystem {
  TimeGrid grid;
  TabulatedMatrix drift;        // F, d x d
  TabulatedMatrix observation;  // H, n x d
  Matrix sigma;                 // S, d x l
  Matrix coupling;              // C, d x n

  int dim_state() const { return static_cast<int>(sigma.rows()); }
  int dim_obs() const { return static_cast<int>(coupling.cols()); }
};

using StateFieldFn = std::function<Vector(double t, const Vector& u, Side side)>;

/// Coefficients (b, sigma, c, k) of the augmented system in U = (X, Xbar, N).
struct AugmentedCoefficients {
  int dim_signal = 0;
  int dim_obs = 0;
  int dim_noise = 0;
  int dim_u = 0;
  Matrix sigma;  // (sigma0; 0; 0)
  Matrix c;      // (0; 0; I_n)
  KernelTable kernel;
  StateFieldFn drift;        // b(t, u)
  StateFieldFn observation;  // k(t, u)
  bool linear = false;
  TabulatedMatrix drift_matrix;  // b(t), linear case only
  TabulatedMatrix obs_matrix;    // k(t), linear case only
  std::function<Vector(const Vector&)> signal_drift;  // a(x), nonlinear case only
  std::function<Vector(const Vector&)> signal_obs;    // h(x), nonlinear case only
  std::function<Matrix(const Matrix&)> signal_drift_cols;
  std::function<Matrix(const Matrix&)> signal_obs_cols;

  const TimeGrid& grid() const { return kernel.grid; }

  LinearGaussianSystem system() const {
    ANTFILTER_REQUIRE(linear, ErrorCode::InvalidArgument,
                      "Kalman-Bucy system requires linear coefficients");
    return LinearGaussianSystem{kernel.grid, drift_matrix, obs_matrix, sigma, c};
  }

  /// b(t, u) applied to every column of us.
  Matrix drift_batch(double t, Side side, const Matrix& us) const {
    if (linear) return drift_matrix.at(t, side) * us;
    if (!signal_drift) {
      Matrix out(dim_u, us.cols());
      for (Eigen::Index j = 0; j < us.cols(); ++j) out.col(j) = drift(t, us.col(j), side);
      return out;
    }
    const int m = dim_signal;
    const int n = dim_obs;
    Matrix out(dim_u, us.cols());
    if (signal_drift_cols) {
      out.topRows(m) = signal_drift_cols(us.topRows(m));
    } else {
      for (Eigen::Index j = 0; j < us.cols(); ++j) out.col(j).head(m) = signal_drift(us.col(j).head(m));
    }
    out.middleRows(m, m).noalias() = kernel.p.at(t, side) * us.bottomRows(n);
    out.bottomRows(n).noalias() =
        kernel.g_prime.at(t, side) * us.middleRows(m, m) + kernel.r.at(t, side) * us.bottomRows(n);
    return out;
  }

  /// k(t, u) applied to every column of us.
  Matrix observation_batch(double t, Side side, const Matrix& us) const {
    if (linear) return obs_matrix.at(t, side) * us;
    Matrix out(dim_obs, us.cols());
    if (!signal_obs) {
      for (Eigen::Index j = 0; j < us.cols(); ++j) out.col(j) = observation(t, us.col(j), side);
      return out;
    }
    const int m = dim_signal;
    const int n = dim_obs;
    if (signal_obs_cols) {
      out = signal_obs_cols(us.topRows(m));
    } else {
      for (Eigen::Index j = 0; j < us.cols(); ++j) out.col(j) = signal_obs(us.col(j).head(m));
    }
    out.noalias() +=
        kernel.g_prime.at(t, side) * us.middleRows(m, m) + kernel.r.at(t, side) * us.bottomRows(n);
    return out;
  }
};

namespace detail {

inline void fill_noise_blocks(AugmentedCoefficients& out, const Matrix& sigma0) {
  const int m = out.dim_signal;
  const int n = out.dim_obs;
  out.dim_noise = static_cast<int>(sigma0.cols());
  out.dim_u = 2 * m + n;
  out.sigma = Matrix::Zero(out.dim_u, out.dim_noise);
  out.sigma.topRows(m) = sigma0;
  out.c = Matrix::Zero(out.dim_u, n);
  out.c.bottomRows(n) = Matrix::Identity(n, n);
}

}  // namespace detail

/// Augmented coefficients for a linear model, tabulated on the grid:
///   b(t) = [a 0 0; 0 0 p; 0 g' r],   k(t) = [h g' r].
inline AugmentedCoefficients build_augmented_linear(const LinearModel& model,
                                                    const TimeGrid& grid) {
  model.validate();
  AugmentedCoefficients out;
  out.dim_signal = model.dim_signal();
  out.dim_obs = model.dim_obs();
  out.kernel = kernel_table(model.corr, grid);
  detail::fill_noise_blocks(out, model.sigma0);
  out.linear = true;

  const int m = out.dim_signal;
  const int n = out.dim_obs;
  const int d = out.dim_u;
  out.drift_matrix = TabulatedMatrix(grid, d, d);
  out.obs_matrix = TabulatedMatrix(grid, n, d);
  for (int k = 0; k < grid.size(); ++k) {
    const Matrix a = model.a(grid[k]);
    const Matrix h = model.h(grid[k]);
    for (Side side : {Side::Left, Side::Right}) {
      Matrix& b = side == Side::Left ? out.drift_matrix.left(k) : out.drift_matrix.right(k);
      b.topLeftCorner(m, m) = a;
      b.block(m, 2 * m, m, n) = out.kernel.p.at_index(k, side);
      b.block(2 * m, m, n, m) = out.kernel.g_prime.at_index(k, side);
      b.bottomRightCorner(n, n) = out.kernel.r.at_index(k, side);
      Matrix& kk = side == Side::Left ? out.obs_matrix.left(k) : out.obs_matrix.right(k);
      kk.leftCols(m) = h;
      kk.middleCols(m, m) = out.kernel.g_prime.at_index(k, side);
      kk.rightCols(n) = out.kernel.r.at_index(k, side);
    }
  }
  const TabulatedMatrix bm = out.drift_matrix;
  const TabulatedMatrix km = out.obs_matrix;
  out.drift = [bm](double t, const Vector& u, Side side) -> Vector { return bm.at(t, side) * u; };
  out.observation = [km](double t, const Vector& u, Side side) -> Vector {
    return km.at(t, side) * u;
  };
  return out;
}

/// Augmented coefficients for a nonlinear model:
///   b(t, U) = (a(X); p(t) N; g'(t) Xbar + r(t) N),
///   k(t, U) = h(X) + g'(t) Xbar + r(t) N.
inline AugmentedCoefficients build_augmented_nonlinear(const NonlinearModel& model,
                                                       const TimeGrid& grid) {
  model.validate();
  AugmentedCoefficients out;
  out.dim_signal = model.dim_signal();
  out.dim_obs = model.dim_obs();
  out.kernel = kernel_table(model.corr, grid);
  detail::fill_noise_blocks(out, model.sigma0);
  out.linear = false;

  const int m = out.dim_signal;
  const int n = out.dim_obs;
  auto table = std::make_shared<const KernelTable>(out.kernel);
  auto a = model.drift;
  auto h = model.obs;
  out.signal_drift = a;
  out.signal_obs = h;
  out.signal_drift_cols = model.drift_cols;
  out.signal_obs_cols = model.obs_cols;
  out.drift = [table, a, m, n](double t, const Vector& u, Side side) -> Vector {
    Vector b(2 * m + n);
    const auto x = u.head(m);
    const auto xbar = u.segment(m, m);
    const auto nu = u.tail(n);
    b.head(m) = a(x);
    b.segment(m, m) = table->p.at(t, side) * nu;
    b.tail(n) = table->g_prime.at(t, side) * xbar + table->r.at(t, side) * nu;
    return b;
  };
  out.observation = [table, h, m, n](double t, const Vector& u, Side side) -> Vector {
    const auto x = u.head(m);
    const auto xbar = u.segment(m, m);
    const auto nu = u.tail(n);
    return h(x) + table->g_prime.at(t, side) * xbar + table->r.at(t, side) * nu;
  };
  return out;
}

/// Mean and covariance of U0 = (X0, X0, 0).
inline Vector augmented_initial_mean(const Vector& mean, int dim_obs) {
  const auto m = mean.size();
  Vector u0 = Vector::Zero(2 * m + dim_obs);
  u0.head(m) = mean;
  u0.segment(m, m) = mean;
  return u0;
}

inline Matrix augmented_initial_cov(const Matrix& sigma, int dim_obs) {
  const auto m = sigma.rows();
  Matrix p0 = Matrix::Zero(2 * m + dim_obs, 2 * m + dim_obs);
  p0.topLeftCorner(m, m) = sigma;
  p0.block(0, m, m, m) = sigma;
  p0.block(m, 0, m, m) = sigma;
  p0.block(m, m, m, m) = sigma;
  return p0;
}

/// Xbar_t = X0 + int_0^t p(s) N_s ds by cumulative trapezoid. n_path rows are
/// grid points.
inline Path xbar_path(const CorrelationSpec& corr, const TimeGrid& grid, const Path& n_path,
                      const Vector& x0) {
  ANTFILTER_REQUIRE(n_path.rows() == grid.size(), ErrorCode::GridMismatch,
                    "noise path does not match the grid");
  const int m = corr.dim_signal;
  Path out(grid.size(), m);
  out.row(0) = x0.transpose();
  for (int k = 0; k < grid.steps(); ++k) {
    const Matrix p0 = corr.rho_second(grid[k], Side::Right).transpose();
    const Matrix p1 = corr.rho_second(grid[k + 1], Side::Left).transpose();
    const Vector incr = 0.5 * grid.dt(k) *
                        (p0 * n_path.row(k).transpose() + p1 * n_path.row(k + 1).transpose());
    out.row(k + 1) = out.row(k) + incr.transpose();
  }
  return out;
}

}  // namespace antfilter
