#pragma once

// Deterministic coefficients of the enlargement-of-filtration transform.
//
// Given the covariance Sigma of the initial condition X0 and the correlation
// rho(t) = E[N_t X0^T] with the observation noise N, the Gram matrix
//
//   gram(t) = Sigma - int_0^t rho'(u)^T rho'(u) du
//
// is the residual covariance of X0 given N on [0, t]. The kernel
// g' = rho' gram^{-1} (zero beyond the support endpoint T0 of rho') turns
//
//   N~_t = N_t - int_0^t lambda(t, u) N_u du - g(t) X0,
//   lambda(t, s) = g(t) p(s) + q(s),  p = rho''^T,  q = -g rho''^T - g' rho'^T,
//
// into a Brownian motion for the filtration enlarged by X0.

#include "antfilter/core.hpp"

#include <numbers>
#include <string>

namespace antfilter {

struct CorrelationSpec {
  int dim_signal = 0;  // m
  int dim_obs = 0;     // n
  Matrix sigma0_cov;   // m x m covariance of X0
  MatrixFn rho;        // t -> n x m
  MatrixFn rho_prime;  // t -> n x m
  MatrixFn rho_second; // t -> n x m
  double horizon = 0.0;
  std::string family = "custom";

  void validate() const {
    ANTFILTER_REQUIRE(dim_signal > 0 && dim_obs > 0, ErrorCode::InvalidArgument,
                      "correlation dimensions must be positive");
    ANTFILTER_REQUIRE(horizon > 0.0, ErrorCode::InvalidArgument,
                      "correlation horizon must be positive");
    ANTFILTER_REQUIRE(sigma0_cov.rows() == dim_signal && sigma0_cov.cols() == dim_signal,
                      ErrorCode::DimensionMismatch, "Sigma must be m x m");
    ANTFILTER_REQUIRE((sigma0_cov - sigma0_cov.transpose()).norm() <=
                          1e-12 * std::max(1.0, sigma0_cov.norm()),
                      ErrorCode::InvalidArgument, "Sigma must be symmetric");
    ANTFILTER_REQUIRE(min_eigenvalue(sigma0_cov) >= psd_floor(sigma0_cov),
                      ErrorCode::InvalidArgument, "Sigma must be positive semidefinite");
    ANTFILTER_REQUIRE(rho && rho_prime && rho_second, ErrorCode::InvalidArgument,
                      "rho, rho' and rho'' evaluators are required");
    const Matrix r0 = rho(0.0, Side::Right);
    ANTFILTER_REQUIRE(r0.rows() == dim_obs && r0.cols() == dim_signal,
                      ErrorCode::DimensionMismatch, "rho(t) must be n x m");
    ANTFILTER_REQUIRE(r0.norm() <= tol::zero, ErrorCode::InvalidArgument,
                      "rho(0) must vanish");
  }
};

// Built-in correlation families. C is an n x m matrix.

/// rho == 0: X0 independent of N.
inline CorrelationSpec zero_correlation(const Matrix& sigma, int dim_obs, double horizon) {
  const Matrix zero = Matrix::Zero(dim_obs, sigma.rows());
  CorrelationSpec spec{static_cast<int>(sigma.rows()), dim_obs, sigma,
                       constant_fn(zero), constant_fn(zero), constant_fn(zero),
                       horizon, "zero"};
  return spec;
}

/// rho(t) = t C.
inline CorrelationSpec linear_correlation(const Matrix& c, const Matrix& sigma, double horizon) {
  CorrelationSpec spec;
  spec.dim_signal = static_cast<int>(c.cols());
  spec.dim_obs = static_cast<int>(c.rows());
  spec.sigma0_cov = sigma;
  spec.rho = [c](double t, Side) -> Matrix { return t * c; };
  spec.rho_prime = constant_fn(c);
  spec.rho_second = constant_fn(Matrix::Zero(c.rows(), c.cols()));
  spec.horizon = horizon;
  spec.family = "linear";
  return spec;
}

/// rho(t) = t^2 C.
inline CorrelationSpec quadratic_correlation(const Matrix& c, const Matrix& sigma, double horizon) {
  CorrelationSpec spec;
  spec.dim_signal = static_cast<int>(c.cols());
  spec.dim_obs = static_cast<int>(c.rows());
  spec.sigma0_cov = sigma;
  spec.rho = [c](double t, Side) -> Matrix { return t * t * c; };
  spec.rho_prime = [c](double t, Side) -> Matrix { return 2.0 * t * c; };
  spec.rho_second = constant_fn(2.0 * c);
  spec.horizon = horizon;
  spec.family = "quadratic";
  return spec;
}

/// rho(t) = min(t, t0) C. rho' jumps from C to 0 at t0; one-sided limits are
/// honoured there. The Dirac mass of rho'' at t0 is dropped: its contributions
/// to lambda(t, s) cancel for t >= t0 because g is constant there.
inline CorrelationSpec truncated_linear_correlation(const Matrix& c, double t0,
                                                    const Matrix& sigma, double horizon) {
  CorrelationSpec spec;
  spec.dim_signal = static_cast<int>(c.cols());
  spec.dim_obs = static_cast<int>(c.rows());
  spec.sigma0_cov = sigma;
  spec.rho = [c, t0](double t, Side) -> Matrix { return std::min(t, t0) * c; };
  spec.rho_prime = [c, t0](double t, Side side) -> Matrix {
    const bool inside = t < t0 || (t == t0 && side == Side::Left);
    return inside ? Matrix(c) : Matrix(Matrix::Zero(c.rows(), c.cols()));
  };
  spec.rho_second = constant_fn(Matrix::Zero(c.rows(), c.cols()));
  spec.horizon = horizon;
  spec.family = "truncated_linear";
  return spec;
}

/// Smooth compactly supported kernel: rho'(t) = C sin^2(pi t / t0) on [0, t0],
/// zero afterwards. rho is C^2 everywhere.
inline CorrelationSpec bump_correlation(const Matrix& c, double t0, const Matrix& sigma,
                                        double horizon) {
  using std::numbers::pi;
  CorrelationSpec spec;
  spec.dim_signal = static_cast<int>(c.cols());
  spec.dim_obs = static_cast<int>(c.rows());
  spec.sigma0_cov = sigma;
  spec.rho = [c, t0](double t, Side) -> Matrix {
    const double s = std::min(t, t0);
    return (0.5 * s - t0 / (4.0 * pi) * std::sin(2.0 * pi * s / t0)) * c;
  };
  spec.rho_prime = [c, t0](double t, Side) -> Matrix {
    if (t >= t0) return Matrix::Zero(c.rows(), c.cols());
    const double v = std::sin(pi * t / t0);
    return v * v * c;
  };
  spec.rho_second = [c, t0](double t, Side) -> Matrix {
    if (t >= t0) return Matrix::Zero(c.rows(), c.cols());
    return (pi / t0) * std::sin(2.0 * pi * t / t0) * c;
  };
  spec.horizon = horizon;
  spec.family = "bump";
  return spec;
}

namespace detail {

inline Matrix rho_prime_square(const CorrelationSpec& spec, double t, Side side) {
  const Matrix rp = spec.rho_prime(t, side);
  return rp.transpose() * rp;
}

}  // namespace detail

/// Gram matrix Sigma - int_0^t rho'^T rho' by composite trapezoid on the grid,
/// with a partial trapezoid on the last, incomplete interval.
inline Matrix gram(const CorrelationSpec& spec, const TimeGrid& grid, double t) {
  ANTFILTER_REQUIRE(t >= 0.0 && t <= grid.horizon() * (1 + 1e-14),
                    ErrorCode::QuadratureDomain, "gram: t outside [0, T]");
  Matrix integral = Matrix::Zero(spec.dim_signal, spec.dim_signal);
  for (int k = 0; k < grid.steps() && grid[k] < t; ++k) {
    const double hi = std::min(t, grid[k + 1]);
    integral += 0.5 * (hi - grid[k]) *
                (detail::rho_prime_square(spec, grid[k], Side::Right) +
                 detail::rho_prime_square(spec, hi, Side::Left));
  }
  return symmetrize(spec.sigma0_cov - integral);
}

/// T0 = sup{t : rho'(t) != 0} resolved on the grid: the largest grid point
/// where rho' (left limit) is non-zero, advanced by one interval when the
/// right limit there is non-zero as well.
inline double support_endpoint(const CorrelationSpec& spec, const TimeGrid& grid) {
  for (int k = grid.steps(); k >= 0; --k) {
    const double t = grid[k];
    if (spec.rho_prime(t, Side::Left).norm() > tol::zero) {
      if (k < grid.steps() && spec.rho_prime(t, Side::Right).norm() > tol::zero) {
        return grid[k + 1];
      }
      return t;
    }
    if (k < grid.steps() && spec.rho_prime(t, Side::Right).norm() > tol::zero) {
      return grid[k + 1];
    }
  }
  return 0.0;
}

struct KernelTable {
  TimeGrid grid;
  int dim_signal = 0;
  int dim_obs = 0;
  std::vector<Matrix> g;     // n x m, g(0) = 0
  TabulatedMatrix g_prime;   // n x m
  std::vector<Matrix> gram;  // m x m
  TabulatedMatrix r;         // n x n, r = -g' rho'^T
  TabulatedMatrix p;         // m x n, p = rho''^T
  double T0 = 0.0;

  /// g(t) by linear interpolation of the grid values.
  Matrix g_at(double t) const {
    const int idx = grid.find(t, 1e-14);
    if (idx >= 0) return g[idx];
    const int k = grid.interval(t);
    const double w = (t - grid[k]) / grid.dt(k);
    return (1.0 - w) * g[k] + w * g[k + 1];
  }
};

/// Builds g, g', the Gram matrices, r and p on the grid.
/// Throws GramSingularError if the Gram matrix is numerically singular before
/// T0, i.e. X0 is (partly) determined by the noise path.
inline KernelTable kernel_table(const CorrelationSpec& spec, const TimeGrid& grid) {
  spec.validate();
  const int m = spec.dim_signal;
  const int n = spec.dim_obs;
  const int npts = grid.size();

  KernelTable table;
  table.grid = grid;
  table.dim_signal = m;
  table.dim_obs = n;
  table.T0 = support_endpoint(spec, grid);
  table.gram.resize(npts);
  table.g.assign(npts, Matrix::Zero(n, m));
  table.g_prime = TabulatedMatrix(grid, n, m);
  table.r = TabulatedMatrix(grid, n, n);
  table.p = TabulatedMatrix(grid, m, n);

  Matrix integral = Matrix::Zero(m, m);
  table.gram[0] = symmetrize(spec.sigma0_cov);
  for (int k = 0; k < grid.steps(); ++k) {
    integral += 0.5 * grid.dt(k) *
                (detail::rho_prime_square(spec, grid[k], Side::Right) +
                 detail::rho_prime_square(spec, grid[k + 1], Side::Left));
    table.gram[k + 1] = symmetrize(spec.sigma0_cov - integral);
  }

  auto solve_kernel = [&](int k, Side side) -> Matrix {
    const Matrix& gk = table.gram[k];
    const double cond = condition_number(gk);
    if (!(cond < tol::cond_max)) throw GramSingularError(grid[k], cond);
    const Matrix rp = spec.rho_prime(grid[k], side);
    return gk.ldlt().solve(rp.transpose()).transpose();
  };

  for (int k = 0; k < npts; ++k) {
    const double t = grid[k];
    if (t < table.T0) table.g_prime.right(k) = solve_kernel(k, Side::Right);
    if (k == 0) {
      table.g_prime.left(k) = table.g_prime.right(k);
    } else if (t <= table.T0) {
      table.g_prime.left(k) = solve_kernel(k, Side::Left);
    }
    for (Side side : {Side::Left, Side::Right}) {
      const Matrix rp = spec.rho_prime(t, k == 0 ? Side::Right : side);
      Matrix& rk = side == Side::Left ? table.r.left(k) : table.r.right(k);
      rk = -table.g_prime.at_index(k, side) * rp.transpose();
      Matrix& pk = side == Side::Left ? table.p.left(k) : table.p.right(k);
      pk = spec.rho_second(t, k == 0 ? Side::Right : side).transpose();
    }
  }

  for (int k = 0; k < grid.steps(); ++k) {
    table.g[k + 1] = table.g[k] + 0.5 * grid.dt(k) *
                                      (table.g_prime.at_index(k, Side::Right) +
                                       table.g_prime.at_index(k + 1, Side::Left));
  }
  return table;
}

/// lambda(t, s) = g(t) p(s) + q(s) for 0 <= s <= t <= T.
inline Matrix lambda_kernel(const KernelTable& table, const CorrelationSpec& spec, double t,
                            double s, Side side = Side::Right) {
  ANTFILTER_REQUIRE(s <= t, ErrorCode::DomainOrder, "lambda_kernel requires s <= t");
  ANTFILTER_REQUIRE(s >= 0.0 && t <= table.grid.horizon() * (1 + 1e-14),
                    ErrorCode::QuadratureDomain, "lambda_kernel: argument outside [0, T]");
  const Matrix rho2_t = spec.rho_second(s, side).transpose();  // m x n
  const Matrix q = -table.g_at(s) * rho2_t -
                   table.g_prime.at(s, side) * spec.rho_prime(s, side).transpose();
  return table.g_at(t) * rho2_t + q;
}

/// r(t) = lambda(t, t) = -g'(t) rho'(t)^T.
inline Matrix r_coeff(const KernelTable& table, double t, Side side = Side::Right) {
  ANTFILTER_REQUIRE(t >= 0.0 && t <= table.grid.horizon() * (1 + 1e-14),
                    ErrorCode::QuadratureDomain, "r_coeff: t outside [0, T]");
  return table.r.at(t, side);
}

}  // namespace antfilter
