#pragma once

// Long-time behaviour of the filter: the algebraic Riccati solution, the
// closed-loop spectral margin, Hautus tests, decay-rate fits and the
// Wasserstein distance between Gaussian filter laws.

#include "antfilter/kalman.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <complex>

namespace antfilter {

namespace detail {

using ComplexMatrix = Eigen::MatrixXcd;

inline Eigen::VectorXcd eigenvalues(const Matrix& a) {
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues();
}

inline int numerical_rank(const ComplexMatrix& m) {
  Eigen::JacobiSVD<ComplexMatrix> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  const double thresh = 1e-10 * sv(0);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i) rank += sv(i) > thresh ? 1 : 0;
  return rank;
}

/// Eigenvalues of a on or right of the imaginary axis. Defective eigenvalues
/// come out of the eigensolver perturbed by about sqrt(eps), so "on the
/// axis" means within 1e-6 of it.
inline std::vector<std::complex<double>> unstable_modes(const Matrix& a) {
  const double tol = 1e-6 * std::max(1.0, a.norm());
  std::vector<std::complex<double>> out;
  const auto ev = eigenvalues(a);
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i).real() >= -tol) out.push_back(ev(i));
  }
  return out;
}

}  // namespace detail

/// Hautus test: rank [mu I - a; h] = m for every eigenvalue mu with Re mu >= 0.
inline bool detectable(const Matrix& a, const Matrix& h) {
  ANTFILTER_REQUIRE(a.rows() == a.cols() && h.cols() == a.rows(), ErrorCode::DimensionMismatch,
                    "detectable: a must be m x m and h n x m");
  const int m = static_cast<int>(a.rows());
  for (const auto& mu : detail::unstable_modes(a)) {
    detail::ComplexMatrix stacked(m + h.rows(), m);
    stacked.topRows(m) = mu * detail::ComplexMatrix::Identity(m, m) - a.cast<std::complex<double>>();
    stacked.bottomRows(h.rows()) = h.cast<std::complex<double>>();
    if (detail::numerical_rank(stacked) < m) return false;
  }
  return true;
}

/// Hautus test: rank [mu I - a, b_in] = m for every eigenvalue mu with Re mu >= 0.
inline bool stabilizable(const Matrix& a, const Matrix& b_in) {
  ANTFILTER_REQUIRE(a.rows() == a.cols() && b_in.rows() == a.rows(),
                    ErrorCode::DimensionMismatch, "stabilizable: a must be m x m and b m x k");
  const int m = static_cast<int>(a.rows());
  for (const auto& mu : detail::unstable_modes(a)) {
    detail::ComplexMatrix joined(m, m + b_in.cols());
    joined.leftCols(m) = mu * detail::ComplexMatrix::Identity(m, m) - a.cast<std::complex<double>>();
    joined.rightCols(b_in.cols()) = b_in.cast<std::complex<double>>();
    if (detail::numerical_rank(joined) < m) return false;
  }
  return true;
}

inline Matrix are_residual(const Matrix& a, const Matrix& h, const Matrix& gamma) {
  const int m = static_cast<int>(a.rows());
  return gamma * a.transpose() + a * gamma + Matrix::Identity(m, m) -
         gamma * h.transpose() * h * gamma;
}

struct AreOptions {
  double dt = 1e-2;
  double horizon = 200.0;
  double rate_tol = 1e-10;
};

struct AreSolution {
  Matrix gamma;
  double residual = 0.0;  // Frobenius norm of the algebraic equation
  double time = 0.0;      // integration time needed to reach steady state
};

/// Steady state of p' = p a^T + a p + I - p h^T h p started at p = I.
inline AreSolution solve_are(const Matrix& a, const Matrix& h, const AreOptions& opt = {}) {
  if (!detectable(a, h)) throw Error(ErrorCode::NotDetectable, "(a, h) is not detectable");
  const int m = static_cast<int>(a.rows());
  if (!stabilizable(a, Matrix::Identity(m, m))) {
    throw Error(ErrorCode::NotStabilizable, "(a, I) is not stabilizable");
  }
  const Matrix hth = h.transpose() * h;
  auto rhs = [&](const Matrix& p) -> Matrix {
    return p * a.transpose() + a * p + Matrix::Identity(m, m) - p * hth * p;
  };
  // Step size bounded by the stiffness of the linearized flow at the start.
  const double lip = 2.0 * a.norm() + 2.0 * hth.norm() * 1.0 + 1.0;
  double dt = std::min(opt.dt, 0.5 / lip);
  Matrix p = Matrix::Identity(m, m);
  double t = 0.0;
  while (t <= opt.horizon) {
    const Matrix k1 = rhs(p);
    if (k1.norm() < opt.rate_tol) {
      return {symmetrize(p), are_residual(a, h, p).norm(), t};
    }
    const double lip_now = 2.0 * a.norm() + 2.0 * (hth * p).norm();
    dt = std::min(opt.dt, 0.5 / std::max(lip_now, 1e-300));
    const Matrix k2 = rhs(p + 0.5 * dt * k1);
    const Matrix k3 = rhs(p + 0.5 * dt * k2);
    const Matrix k4 = rhs(p + dt * k3);
    p = symmetrize(p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    if (!p.allFinite()) break;
    t += dt;
  }
  throw Error(ErrorCode::NoConvergence, "Riccati flow did not reach steady state by t=" +
                                            std::to_string(opt.horizon));
}

/// lambda0 = min over eigenvalues mu of a - gamma h^T h of -Re mu.
inline double spectral_margin(const Matrix& a, const Matrix& h, const Matrix& gamma_inf) {
  const Matrix closed = a - gamma_inf * h.transpose() * h;
  const auto ev = detail::eigenvalues(closed);
  double margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < ev.size(); ++i) margin = std::min(margin, -ev(i).real());
  if (!(margin > tol::zero)) {
    throw Error(ErrorCode::NonPositiveMargin,
                "closed-loop matrix is not stable (margin " + std::to_string(margin) + ")");
  }
  return margin;
}

struct DecayFit {
  double rate = 0.0;
  double prefactor = 0.0;
  double residual = 0.0;  // RMS deviation of the log-linear fit
  int points = 0;
};

/// Least-squares line through log |P11_t - gamma_inf|_F on [t_a, t_b];
/// points with differences below 1e-13 are treated as converged and skipped.
inline DecayFit decay_fit(const TimeGrid& grid, const std::vector<Matrix>& p11_path,
                          const Matrix& gamma_inf, double t_a, double t_b) {
  ANTFILTER_REQUIRE(static_cast<int>(p11_path.size()) == grid.size(), ErrorCode::GridMismatch,
                    "decay_fit: path does not match the grid");
  ANTFILTER_REQUIRE(t_a < t_b && t_b <= grid.horizon() * (1 + 1e-12), ErrorCode::InvalidArgument,
                    "decay_fit: window must lie inside the horizon");
  constexpr double floor = 1e-13;
  std::vector<double> ts, ys;
  int in_window = 0;
  for (int k = 0; k < grid.size(); ++k) {
    if (grid[k] < t_a || grid[k] > t_b) continue;
    ++in_window;
    const double diff = (p11_path[k] - gamma_inf).norm();
    if (diff < floor) continue;
    ts.push_back(grid[k]);
    ys.push_back(std::log(diff));
  }
  if (in_window < 10) throw Error(ErrorCode::WindowTooShort, "decay_fit: fewer than 10 points");
  if (ts.empty()) {
    throw Error(ErrorCode::DifferenceBelowFloor,
                "decay_fit: P11 equals gamma_inf to 1e-13 across the window (converged)");
  }
  if (ts.size() < 2) throw Error(ErrorCode::WindowTooShort, "decay_fit: too few usable points");
  Matrix design(ts.size(), 2);
  Vector rhs(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = ts[i];
    rhs(i) = ys[i];
  }
  const Vector coef = design.colPivHouseholderQr().solve(rhs);
  DecayFit fit;
  fit.rate = -coef(1);
  fit.prefactor = std::exp(coef(0));
  fit.residual = std::sqrt((design * coef - rhs).squaredNorm() / static_cast<double>(ts.size()));
  fit.points = static_cast<int>(ts.size());
  return fit;
}

/// W2 between N(mean1, cov1) and N(mean2, cov2):
/// W2^2 = |m1 - m2|^2 + tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2}).
inline double wasserstein_gaussian(const Vector& mean1, const Matrix& cov1, const Vector& mean2,
                                   const Matrix& cov2) {
  ANTFILTER_REQUIRE(mean1.size() == mean2.size() && cov1.rows() == mean1.size() &&
                        cov2.rows() == mean2.size(),
                    ErrorCode::DimensionMismatch, "wasserstein: inconsistent sizes");
  for (const Matrix* c : {&cov1, &cov2}) {
    if ((*c - c->transpose()).norm() > 1e-9 * std::max(1.0, c->norm()) ||
        min_eigenvalue(symmetrize(*c)) < psd_floor(*c)) {
      throw Error(ErrorCode::NotPSD, "wasserstein: covariance is not symmetric PSD");
    }
  }
  const Matrix r1 = psd_sqrt(symmetrize(cov1));
  const Matrix cross = psd_sqrt(symmetrize(r1 * cov2 * r1));
  const double bures = (cov1 + cov2 - 2.0 * cross).trace();
  return std::sqrt(std::max(0.0, (mean1 - mean2).squaredNorm() + bures));
}

struct StabilityReport {
  Matrix gamma_inf;
  double are_residual = 0.0;
  double lambda0 = 0.0;
  bool is_detectable = false;
  bool is_stabilizable = false;
  DecayFit decay;
  std::vector<double> wasserstein_path;
};

/// W2 distance between the anticipative and classical filter laws along a
/// path of observations.
inline std::vector<double> wasserstein_path(const FilterRun& anticipative,
                                            const FilterRun& classical) {
  ANTFILTER_REQUIRE(anticipative.grid.same_as(classical.grid), ErrorCode::GridMismatch,
                    "wasserstein_path: runs use different grids");
  std::vector<double> out(anticipative.grid.size());
  for (int k = 0; k < anticipative.grid.size(); ++k) {
    out[k] = wasserstein_gaussian(anticipative.x_hat.row(k).transpose(), anticipative.p11[k],
                                  classical.x_hat.row(k).transpose(), classical.p11[k]);
  }
  return out;
}

/// Full stability analysis for a constant-coefficient linear model observed
/// along one simulated path.
inline StabilityReport stability_report(const LinearModel& model, const TimeGrid& grid,
                                        const Path& z_path, double t_a, double t_b) {
  StabilityReport rep;
  const Matrix a = model.a(0.0);
  const Matrix h = model.h(0.0);
  const int m = model.dim_signal();
  rep.is_detectable = detectable(a, h);
  rep.is_stabilizable = stabilizable(a, Matrix::Identity(m, m));
  const auto are = solve_are(a, h);
  rep.gamma_inf = are.gamma;
  rep.are_residual = are.residual;
  rep.lambda0 = spectral_margin(a, h, are.gamma);
  const AnticipativeFilter ant(model, grid);
  const ClassicalFilter cls = matched_baseline(ant, model, grid);
  const FilterRun ra = ant.run(z_path);
  const FilterRun rc = cls.run(z_path);
  rep.decay = decay_fit(grid, ra.p11, rep.gamma_inf, t_a, t_b);
  rep.wasserstein_path = wasserstein_path(ra, rc);
  return rep;
}

}  // namespace antfilter
