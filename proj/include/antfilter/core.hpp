#pragma once

// Shared numerics for the antfilter library: matrix aliases, time grids,
// one-sided evaluation, error reporting and a few small linear-algebra helpers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace antfilter {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Numerical thresholds used across the library.
namespace tol {
inline constexpr double zero = 1e-12;
inline constexpr double residual = 1e-8;
inline constexpr double cond_max = 1e12;
inline constexpr double psd = 1e-10;
}  // namespace tol

enum class ErrorCode {
  // model validation
  InvalidArgument,
  DimensionMismatch,
  GridMismatch,
  QuadratureDomain,
  DomainOrder,
  NotDetectable,
  NotStabilizable,
  ParseError,
  IoError,
  // numerical
  GramSingular,
  ResidualCovNotPSD,
  RiccatiBlowup,
  PSDViolation,
  NoConvergence,
  NonPositiveMargin,
  WindowTooShort,
  DifferenceBelowFloor,
  NotPSD,
  SingularConditioning,
  AllWeightsZero,
  DivisionByZero,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::QuadratureDomain: return "QuadratureDomain";
    case ErrorCode::DomainOrder: return "DomainOrder";
    case ErrorCode::NotDetectable: return "NotDetectable";
    case ErrorCode::NotStabilizable: return "NotStabilizable";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::GramSingular: return "GramSingular";
    case ErrorCode::ResidualCovNotPSD: return "ResidualCovNotPSD";
    case ErrorCode::RiccatiBlowup: return "RiccatiBlowup";
    case ErrorCode::PSDViolation: return "PSDViolation";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NonPositiveMargin: return "NonPositiveMargin";
    case ErrorCode::WindowTooShort: return "WindowTooShort";
    case ErrorCode::DifferenceBelowFloor: return "DifferenceBelowFloor";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::SingularConditioning: return "SingularConditioning";
    case ErrorCode::AllWeightsZero: return "AllWeightsZero";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
  }
  return "Unknown";
}

/// True for errors that signal an ill-posed model or bad input rather than a
/// numerical breakdown. The CLI maps these to distinct exit codes.
inline bool is_validation_error(ErrorCode code) {
  return code <= ErrorCode::IoError;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by factorizations of the Gram matrix. Carries the offending time.
class GramSingularError : public Error {
 public:
  GramSingularError(double t, double condition)
      : Error(ErrorCode::GramSingular, describe(t, condition)),
        t_(t),
        condition_(condition) {}

  double time() const noexcept { return t_; }
  double condition() const noexcept { return condition_; }

 private:
  static std::string describe(double t, double condition) {
    std::ostringstream os;
    os << "Gram matrix numerically singular at t=" << t
       << " (condition number " << condition << ")";
    return os.str();
  }
  double t_;
  double condition_;
};

#define ANTFILTER_REQUIRE(cond, code, msg)          \
  do {                                              \
    if (!(cond)) throw ::antfilter::Error(code, msg); \
  } while (false)

/// Which one-sided limit to take at a point where a coefficient may jump.
enum class Side { Left, Right };

/// Strictly increasing time points 0 = t_0 < ... < t_K = T.
class TimeGrid {
 public:
  TimeGrid() = default;

  explicit TimeGrid(std::vector<double> points) : points_(std::move(points)) {
    ANTFILTER_REQUIRE(points_.size() >= 2, ErrorCode::InvalidArgument,
                      "time grid needs at least two points");
    ANTFILTER_REQUIRE(points_.front() == 0.0, ErrorCode::InvalidArgument,
                      "time grid must start at 0");
    for (std::size_t k = 1; k < points_.size(); ++k) {
      ANTFILTER_REQUIRE(points_[k] > points_[k - 1], ErrorCode::InvalidArgument,
                        "time grid must be strictly increasing");
    }
  }

  /// K equal steps on [0, horizon].
  static TimeGrid uniform(double horizon, int steps) {
    ANTFILTER_REQUIRE(horizon > 0.0, ErrorCode::InvalidArgument,
                      "horizon must be positive");
    ANTFILTER_REQUIRE(steps >= 1, ErrorCode::InvalidArgument,
                      "grid needs at least one step");
    std::vector<double> pts(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) pts[k] = horizon * k / steps;
    return TimeGrid(std::move(pts));
  }

  int steps() const { return static_cast<int>(points_.size()) - 1; }
  int size() const { return static_cast<int>(points_.size()); }
  double horizon() const { return points_.back(); }
  double operator[](int k) const { return points_[static_cast<std::size_t>(k)]; }
  double dt(int k) const { return points_[k + 1] - points_[k]; }
  const std::vector<double>& points() const { return points_; }

  /// Index of the grid interval [t_k, t_{k+1}] containing t. With Side::Left
  /// a grid point t_k (k>0) maps to interval k-1, with Side::Right to k.
  int interval(double t, Side side = Side::Right) const {
    const int K = steps();
    if (t <= points_.front()) return 0;
    if (t >= points_.back()) return K - 1;
    auto it = std::upper_bound(points_.begin(), points_.end(), t);
    int k = static_cast<int>(it - points_.begin()) - 1;
    if (side == Side::Left && points_[k] == t && k > 0) --k;
    return std::clamp(k, 0, K - 1);
  }

  /// Index of the grid point equal to t (within a relative tolerance), or -1.
  int find(double t, double rel = 1e-9) const {
    const double scale = std::max(1.0, std::abs(horizon()));
    auto it = std::lower_bound(points_.begin(), points_.end(), t - rel * scale);
    if (it == points_.end()) return -1;
    if (std::abs(*it - t) <= rel * scale) return static_cast<int>(it - points_.begin());
    return -1;
  }

  bool same_as(const TimeGrid& other) const { return points_ == other.points_; }

 private:
  std::vector<double> points_;
};

/// Matrix-valued function of time with optional one-sided evaluation.
using MatrixFn = std::function<Matrix(double t, Side side)>;
/// Matrix-valued function of time for continuous coefficients.
using TimeMatrixFn = std::function<Matrix(double t)>;
/// Vector field on the state space.
using VectorFieldFn = std::function<Vector(const Vector& x)>;

inline MatrixFn constant_fn(Matrix value) {
  return [value = std::move(value)](double, Side) { return value; };
}

inline TimeMatrixFn constant_time_fn(Matrix value) {
  return [value = std::move(value)](double) { return value; };
}

/// Matrix sampled on a grid with separate left and right limits at each grid
/// point; values inside an interval are linearly interpolated between the
/// right limit at its start and the left limit at its end.
class TabulatedMatrix {
 public:
  TabulatedMatrix() = default;
  TabulatedMatrix(const TimeGrid& grid, int rows, int cols)
      : grid_(grid),
        left_(grid.size(), Matrix::Zero(rows, cols)),
        right_(grid.size(), Matrix::Zero(rows, cols)) {}

  /// Tabulates fn at every grid point, both limits.
  static TabulatedMatrix sample(const TimeGrid& grid, const MatrixFn& fn) {
    Matrix m0 = fn(grid[0], Side::Right);
    TabulatedMatrix out(grid, static_cast<int>(m0.rows()), static_cast<int>(m0.cols()));
    for (int k = 0; k < grid.size(); ++k) {
      out.right_[k] = k == 0 ? m0 : fn(grid[k], Side::Right);
      out.left_[k] = k == 0 ? out.right_[0] : fn(grid[k], Side::Left);
    }
    return out;
  }

  const TimeGrid& grid() const { return grid_; }
  Eigen::Index rows() const { return right_.empty() ? 0 : right_.front().rows(); }
  Eigen::Index cols() const { return right_.empty() ? 0 : right_.front().cols(); }

  const Matrix& at_index(int k, Side side = Side::Right) const {
    return side == Side::Right ? right_[k] : left_[k];
  }
  Matrix& left(int k) { return left_[k]; }
  Matrix& right(int k) { return right_[k]; }

  Matrix at(double t, Side side = Side::Right) const {
    const int idx = grid_.find(t, 1e-14);
    if (idx >= 0) return at_index(idx, side);
    const int k = grid_.interval(t);
    const double w = (t - grid_[k]) / grid_.dt(k);
    return (1.0 - w) * right_[k] + w * left_[k + 1];
  }

 private:
  TimeGrid grid_;
  std::vector<Matrix> left_;
  std::vector<Matrix> right_;
};

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Matrix& sym) {
  if (sym.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// 2-norm condition number of a symmetric matrix; +inf when singular.
inline double condition_number(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym), Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

/// Symmetric PSD square root via eigendecomposition, clamping negative
/// eigenvalues to zero.
inline Matrix psd_sqrt(const Matrix& sym) {
  if (sym.size() == 0) return sym;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(sym));
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Tolerance for PSD checks, scaled to the magnitude of the matrix.
inline double psd_floor(const Matrix& m) {
  return -tol::psd * std::max(1.0, m.norm());
}

/// Rows of a path matrix are grid points; this is the usual storage for
/// sampled trajectories throughout the library.
using Path = Matrix;

}  // namespace antfilter
