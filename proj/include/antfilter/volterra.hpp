#pragma once

// Filtering with a weighted Volterra observation
//   dX = a(t) X dt + sigma0 dW,   Z_t = int_0^t H(t, s) X_s ds + N_t,
// for a separable kernel H(t, s) = sum_i p_i(t) q_i(s).

#include "antfilter/kalman.hpp"

#include <cctype>
#include <memory>
#include <string_view>

namespace antfilter {

// ---------------------------------------------------------------------------
// Expressions in t and s: numbers, t, s, + - * ^ (integer powers), parentheses.

class Expr {
 public:
  enum class Kind { Const, VarT, VarS, Add, Sub, Mul, Neg, Pow };

  static Expr constant(double v) { return Expr(std::make_shared<Node>(Node{Kind::Const, v, 0, {}, {}})); }
  static Expr var_t() { return Expr(std::make_shared<Node>(Node{Kind::VarT, 0.0, 0, {}, {}})); }
  static Expr var_s() { return Expr(std::make_shared<Node>(Node{Kind::VarS, 0.0, 0, {}, {}})); }

  static Expr parse(std::string_view text);

  double operator()(double t, double s = 0.0) const { return eval(*node_, t, s); }

  /// d/dt, simplified only where a factor is an exact zero.
  Expr derivative_t() const { return Expr(diff(node_)); }

  std::string to_string() const { return print(*node_); }

  bool is_zero() const { return node_->kind == Kind::Const && node_->value == 0.0; }

 private:
  struct Node;
  using NodePtr = std::shared_ptr<const Node>;
  struct Node {
    Kind kind;
    double value;
    int power;
    NodePtr lhs;
    NodePtr rhs;
  };

  explicit Expr(NodePtr n) : node_(std::move(n)) {}

  static NodePtr make(Kind k, NodePtr l, NodePtr r = nullptr, int power = 0) {
    return std::make_shared<Node>(Node{k, 0.0, power, std::move(l), std::move(r)});
  }
  static NodePtr make_const(double v) { return std::make_shared<Node>(Node{Kind::Const, v, 0, {}, {}}); }
  static bool zero(const NodePtr& n) { return n->kind == Kind::Const && n->value == 0.0; }

  static double eval(const Node& n, double t, double s) {
    switch (n.kind) {
      case Kind::Const: return n.value;
      case Kind::VarT: return t;
      case Kind::VarS: return s;
      case Kind::Add: return eval(*n.lhs, t, s) + eval(*n.rhs, t, s);
      case Kind::Sub: return eval(*n.lhs, t, s) - eval(*n.rhs, t, s);
      case Kind::Mul: return eval(*n.lhs, t, s) * eval(*n.rhs, t, s);
      case Kind::Neg: return -eval(*n.lhs, t, s);
      case Kind::Pow: return std::pow(eval(*n.lhs, t, s), n.power);
    }
    return 0.0;
  }

  static NodePtr diff(const NodePtr& n) {
    switch (n->kind) {
      case Kind::Const:
      case Kind::VarS: return make_const(0.0);
      case Kind::VarT: return make_const(1.0);
      case Kind::Add:
      case Kind::Sub: {
        auto dl = diff(n->lhs);
        auto dr = diff(n->rhs);
        if (zero(dr)) return dl;
        if (zero(dl)) return n->kind == Kind::Add ? dr : make(Kind::Neg, dr);
        return make(n->kind, dl, dr);
      }
      case Kind::Mul: {
        auto dl = diff(n->lhs);
        auto dr = diff(n->rhs);
        NodePtr a = zero(dl) ? nullptr : make(Kind::Mul, dl, n->rhs);
        NodePtr b = zero(dr) ? nullptr : make(Kind::Mul, n->lhs, dr);
        if (!a && !b) return make_const(0.0);
        if (!a) return b;
        if (!b) return a;
        return make(Kind::Add, a, b);
      }
      case Kind::Neg: {
        auto d = diff(n->lhs);
        return zero(d) ? d : make(Kind::Neg, d);
      }
      case Kind::Pow: {
        auto d = diff(n->lhs);
        if (zero(d) || n->power == 0) return make_const(0.0);
        NodePtr lowered = n->power == 1 ? make_const(1.0) : make(Kind::Pow, n->lhs, nullptr, n->power - 1);
        return make(Kind::Mul, make(Kind::Mul, make_const(n->power), lowered), d);
      }
    }
    return make_const(0.0);
  }

  static std::string print(const Node& n) {
    switch (n.kind) {
      case Kind::Const: {
        std::ostringstream os;
        os.precision(17);
        os << n.value;
        return os.str();
      }
      case Kind::VarT: return "t";
      case Kind::VarS: return "s";
      case Kind::Add: return "(" + print(*n.lhs) + "+" + print(*n.rhs) + ")";
      case Kind::Sub: return "(" + print(*n.lhs) + "-" + print(*n.rhs) + ")";
      case Kind::Mul: return "(" + print(*n.lhs) + "*" + print(*n.rhs) + ")";
      case Kind::Neg: return "(-" + print(*n.lhs) + ")";
      case Kind::Pow: return "(" + print(*n.lhs) + "^" + std::to_string(n.power) + ")";
    }
    return "";
  }

  class Parser;
  NodePtr node_;
};

class Expr::Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  NodePtr parse() {
    NodePtr out = expr();
    skip();
    if (pos_ != text_.size()) fail("unexpected character");
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::ParseError, "expression '" + std::string(text_) + "': " + what +
                                           " at position " + std::to_string(pos_));
  }
  void skip() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    skip();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr expr() {
    NodePtr lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = make(Kind::Add, lhs, term());
      } else if (accept('-')) {
        lhs = make(Kind::Sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }
  NodePtr term() {
    NodePtr lhs = unary();
    while (accept('*')) lhs = make(Kind::Mul, lhs, unary());
    return lhs;
  }
  NodePtr unary() {
    if (accept('-')) return make(Kind::Neg, unary());
    if (accept('+')) return unary();
    return power();
  }
  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) {
      skip();
      const std::size_t start = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      if (start == pos_) fail("exponent must be a non-negative integer");
      const int p = std::stoi(std::string(text_.substr(start, pos_ - start)));
      return make(Kind::Pow, base, nullptr, p);
    }
    return base;
  }
  NodePtr primary() {
    skip();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr inner = expr();
      if (!accept(')')) fail("missing ')'");
      return inner;
    }
    if (c == 't') {
      ++pos_;
      return std::make_shared<Node>(Node{Kind::VarT, 0.0, 0, {}, {}});
    }
    if (c == 's') {
      ++pos_;
      return std::make_shared<Node>(Node{Kind::VarS, 0.0, 0, {}, {}});
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const std::string rest(text_.substr(pos_));
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(rest, &used);
      } catch (const std::exception&) {
        fail("bad number");
      }
      pos_ += used;
      return make_const(v);
    }
    fail(std::string("unexpected '") + c + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

inline Expr Expr::parse(std::string_view text) { return Expr(Parser(text).parse()); }

// ---------------------------------------------------------------------------

struct VolterraKernel {
  std::vector<Expr> p;        // functions of t
  std::vector<Expr> q;        // functions of s
  std::vector<Expr> p_prime;  // d p_i / dt
  double horizon = 1.0;

  int rank() const { return static_cast<int>(p.size()); }

  static VolterraKernel from_strings(const std::vector<std::string>& p_terms,
                                     const std::vector<std::string>& q_terms, double horizon) {
    ANTFILTER_REQUIRE(!p_terms.empty() && p_terms.size() == q_terms.size(),
                      ErrorCode::InvalidArgument, "kernel needs matching, non-empty p and q lists");
    ANTFILTER_REQUIRE(horizon > 0.0, ErrorCode::InvalidArgument, "kernel horizon must be positive");
    VolterraKernel k;
    k.horizon = horizon;
    for (std::size_t i = 0; i < p_terms.size(); ++i) {
      k.p.push_back(Expr::parse(p_terms[i]));
      k.q.push_back(Expr::parse(q_terms[i]));
      k.p_prime.push_back(k.p.back().derivative_t());
    }
    return k;
  }

  double p_at(int i, double t) const { return p[i](t, 0.0); }
  double q_at(int i, double s) const { return q[i](0.0, s); }
  double p_prime_at(int i, double t) const { return p_prime[i](t, 0.0); }

  /// Appends p_{n+1} = 0, q_{n+1} = 0.
  VolterraKernel padded() const {
    VolterraKernel k = *this;
    k.p.push_back(Expr::constant(0.0));
    k.q.push_back(Expr::constant(0.0));
    k.p_prime.push_back(Expr::constant(0.0));
    return k;
  }
};

struct KernelValue {
  double h = 0.0;  // H_n(t, s)
  double l = 0.0;  // L_n(t, s) = d/dt H_n(t, s)
};

inline KernelValue kernel_eval(const VolterraKernel& kernel, double t, double s) {
  if (s > t * (1 + 1e-12) + 1e-15) {
    throw Error(ErrorCode::DomainOrder, "kernel_eval needs s <= t");
  }
  KernelValue v;
  for (int i = 0; i < kernel.rank(); ++i) {
    const double qi = kernel.q_at(i, s);
    v.h += kernel.p_at(i, t) * qi;
    v.l += kernel.p_prime_at(i, t) * qi;
  }
  return v;
}

struct VolterraModel {
  TimeMatrixFn a;     // m x m
  Matrix sigma0;      // m x l
  Vector init_mean;   // E[X0]
  Matrix init_cov;    // Cov(X0), independent of N
  VolterraKernel kernel;

  int dim_signal() const { return static_cast<int>(sigma0.rows()); }
  int dim_state() const { return dim_signal() * (1 + kernel.rank()); }

  void validate() const {
    const int m = dim_signal();
    ANTFILTER_REQUIRE(static_cast<bool>(a), ErrorCode::InvalidArgument, "volterra model needs a(t)");
    ANTFILTER_REQUIRE(a(0.0).rows() == m && a(0.0).cols() == m, ErrorCode::DimensionMismatch,
                      "a(t) must be m x m");
    ANTFILTER_REQUIRE(init_mean.size() == m && init_cov.rows() == m && init_cov.cols() == m,
                      ErrorCode::DimensionMismatch, "initial law has the wrong size");
    ANTFILTER_REQUIRE(kernel.rank() >= 1, ErrorCode::InvalidArgument, "kernel rank must be >= 1");
  }
};

/// State U = (X, X^1, ..., X^n), X^i = int_0^t q_i X ds, observed through
/// h(t) = [H_n(t,t) I, p_1'(t) I, ..., p_n'(t) I].
inline LinearGaussianSystem volterra_system(const VolterraModel& model, const TimeGrid& grid) {
  model.validate();
  const int m = model.dim_signal();
  const int n = model.kernel.rank();
  const int d = model.dim_state();
  const Matrix eye = Matrix::Identity(m, m);
  LinearGaussianSystem sys;
  sys.grid = grid;
  sys.drift = TabulatedMatrix::sample(grid, [&](double t, Side) {
    Matrix f = Matrix::Zero(d, d);
    f.topLeftCorner(m, m) = model.a(t);
    for (int i = 0; i < n; ++i) f.block(m * (i + 1), 0, m, m) = model.kernel.q_at(i, t) * eye;
    return f;
  });
  sys.observation = TabulatedMatrix::sample(grid, [&](double t, Side) {
    Matrix h = Matrix::Zero(m, d);
    h.leftCols(m) = kernel_eval(model.kernel, t, t).h * eye;
    for (int i = 0; i < n; ++i) h.middleCols(m * (i + 1), m) = model.kernel.p_prime_at(i, t) * eye;
    return h;
  });
  sys.sigma = Matrix::Zero(d, model.sigma0.cols());
  sys.sigma.topRows(m) = model.sigma0;
  sys.coupling = Matrix::Zero(d, m);
  return sys;
}

struct VolterraPaths {
  TimeGrid grid;
  Path x;   // m columns
  Path xi;  // m * rank columns: X^1, ..., X^n
  Path z;   // m columns
  Path n;
};

/// Euler-Maruyama for X, trapezoid for the X^i, and Z_t evaluated directly
/// as sum_i p_i(t) X^i_t + N_t.
inline VolterraPaths simulate_volterra(const VolterraModel& model, const TimeGrid& grid,
                                       std::uint64_t seed, std::uint64_t stream) {
  model.validate();
  const CounterRng rng(seed, stream);
  const int m = model.dim_signal();
  const int nk = model.kernel.rank();
  const int l = static_cast<int>(model.sigma0.cols());
  const int K = grid.steps();
  VolterraPaths out;
  out.grid = grid;
  out.x = Path::Zero(K + 1, m);
  out.xi = Path::Zero(K + 1, m * nk);
  out.z = Path::Zero(K + 1, m);
  out.n = Path::Zero(K + 1, m);

  std::vector<double> xi0(static_cast<std::size_t>(m));
  rng.normals(CounterRng::kSetupStep, xi0);
  Vector x = model.init_mean + psd_sqrt(model.init_cov) * Eigen::Map<const Vector>(xi0.data(), m);
  out.x.row(0) = x.transpose();
  std::vector<double> draws(static_cast<std::size_t>(l + m));
  for (int k = 0; k < K; ++k) {
    const double dt = grid.dt(k);
    rng.normals(static_cast<std::uint32_t>(k), draws);
    const double sq = std::sqrt(dt);
    const Vector dw = sq * Eigen::Map<const Vector>(draws.data(), l);
    const Vector dn = sq * Eigen::Map<const Vector>(draws.data() + l, m);
    const Vector next = x + model.a(grid[k]) * x * dt + model.sigma0 * dw;
    out.n.row(k + 1) = out.n.row(k) + dn.transpose();
    for (int i = 0; i < nk; ++i) {
      const double q0 = model.kernel.q_at(i, grid[k]);
      const double q1 = model.kernel.q_at(i, grid[k + 1]);
      out.xi.block(k + 1, m * i, 1, m) =
          out.xi.block(k, m * i, 1, m) + (0.5 * dt * (q0 * x + q1 * next)).transpose();
    }
    Vector z = out.n.row(k + 1).transpose();
    for (int i = 0; i < nk; ++i) {
      z += model.kernel.p_at(i, grid[k + 1]) * out.xi.block(k + 1, m * i, 1, m).transpose();
    }
    out.z.row(k + 1) = z.transpose();
    out.x.row(k + 1) = next.transpose();
    x = next;
  }
  return out;
}

/// The finite-dimensional Kalman-Bucy filter on U = (X, X^1, ..., X^n).
class HighDimFilter {
 public:
  HighDimFilter(const VolterraModel& model, const TimeGrid& grid, const RiccatiOptions& opt = {})
      : system_(volterra_system(model, grid)), m_(model.dim_signal()) {
    const int d = model.dim_state();
    u0_ = Vector::Zero(d);
    u0_.head(m_) = model.init_mean;
    Matrix p0 = Matrix::Zero(d, d);
    p0.topLeftCorner(m_, m_) = model.init_cov;
    p_path_ = riccati_integrate(system_, p0, opt);
  }

  FilterRun run(const Path& z_path) const {
    return filter_run(system_, z_path, p_path_, u0_, m_);
  }

  const LinearGaussianSystem& system() const { return system_; }
  const std::vector<Matrix>& covariance_path() const { return p_path_; }

 private:
  LinearGaussianSystem system_;
  int m_;
  Vector u0_;
  std::vector<Matrix> p_path_;
};

/// How the two-parameter covariance equation is read. With the projection
/// D_r = diag(I, hbar(r)) of the high-dimensional covariance,
///   P_{r,t} = P_0 + int_0^t F(r, t, s) ds   for r >= t.
enum class VolterraReading {
  /// F = P_{r,s}^T B_t(s)^T + B_r(s) P_{r,s} + S S^T - P_{r,s} G(s) P_{t,s}^T, as printed.
  Literal,
  /// Every t replaced by r: an ordinary differential equation along each row r.
  RowFrozen,
  /// F = P_{r,s} B_t(s)^T + B_r(s) P_{t,s}^T + S S^T - P_{r,s} G(s) P_{t,s}^T, which is
  /// what the projection D_r P_s D_t^T of the high-dimensional equation gives.
  IndexSwapped,
};

inline const char* to_string(VolterraReading r) {
  switch (r) {
    case VolterraReading::Literal: return "literal";
    case VolterraReading::RowFrozen: return "row-frozen";
    case VolterraReading::IndexSwapped: return "index-swapped";
  }
  return "?";
}

struct ReducedRun {
  TimeGrid grid;
  VolterraReading reading = VolterraReading::IndexSwapped;
  Path x_hat;                    // first block of V_{t,t}
  std::vector<Matrix> diag_cov;  // P_{t,t}
};

/// Two-parameter filter for V_{r,t} = (X_t, int_0^t L(r,s) X_s ds), r >= t.
/// Covariances are stored in a lower-triangular table indexed (r, t).
class ReducedFilter {
 public:
  ReducedFilter(const VolterraModel& model, const TimeGrid& grid,
                VolterraReading reading = VolterraReading::IndexSwapped, int max_k = 2048)
      : grid_(grid), reading_(reading), m_(model.dim_signal()) {
    model.validate();
    ANTFILTER_REQUIRE(grid.steps() <= max_k, ErrorCode::InvalidArgument,
                      "reduced filter grid exceeds the table cap");
    const int K = grid.steps();
    const int m = m_;
    const Matrix eye = Matrix::Identity(m, m);
    a_.resize(K + 1);
    gmat_.resize(K + 1);
    hdiag_.resize(K + 1);
    for (int k = 0; k <= K; ++k) {
      a_[k] = model.a(grid[k]);
      hdiag_[k] = kernel_eval(model.kernel, grid[k], grid[k]).h;
      Matrix hi(m, 2 * m);
      hi << hdiag_[k] * eye, eye;
      gmat_[k] = hi.transpose() * hi;
    }
    // L(r, s) for r >= s; scalar because the kernel is scalar.
    lval_.assign(static_cast<std::size_t>(K + 1) * (K + 1), 0.0);
    for (int r = 0; r <= K; ++r) {
      for (int s = 0; s <= r; ++s) lval_[idx(r, s)] = kernel_eval(model.kernel, grid[r], grid[s]).l;
    }
    ss_ = Matrix::Zero(2 * m, 2 * m);
    ss_.topLeftCorner(m, m) = model.sigma0 * model.sigma0.transpose();
    p0_ = Matrix::Zero(2 * m, 2 * m);
    p0_.topLeftCorner(m, m) = model.init_cov;
    mean0_ = model.init_mean;
    table_.assign(static_cast<std::size_t>(K + 1) * (K + 1), Matrix());
    build_table();
  }

  /// P_{r,t} for grid indices r >= t.
  const Matrix& cov(int r, int t) const { return table_[idx(r, t)]; }

  ReducedRun run(const Path& z_path) const {
    const int K = grid_.steps();
    const int m = m_;
    ANTFILTER_REQUIRE(z_path.rows() == K + 1 && z_path.cols() == m, ErrorCode::GridMismatch,
                      "observation path does not match the grid");
    // V_{r,k} for every r >= k, advanced in k.
    std::vector<Vector> v(K + 1);
    for (int r = 0; r <= K; ++r) {
      v[r] = Vector::Zero(2 * m);
      v[r].head(m) = mean0_;
    }
    ReducedRun out;
    out.grid = grid_;
    out.reading = reading_;
    out.x_hat.resize(K + 1, m);
    out.diag_cov.resize(K + 1);
    out.x_hat.row(0) = mean0_.transpose();
    out.diag_cov[0] = cov(0, 0);
    const Matrix eye = Matrix::Identity(m, m);
    for (int k = 0; k < K; ++k) {
      const double dt = grid_.dt(k);
      Matrix hi(m, 2 * m);
      hi << hdiag_[k] * eye, eye;
      const Vector xk = v[k].head(m);
      const Vector dnu = (z_path.row(k + 1) - z_path.row(k)).transpose() - hi * v[k] * dt;
      for (int r = k + 1; r <= K; ++r) {
        Vector drift(2 * m);
        drift.head(m) = a_[k] * xk;
        drift.tail(m) = lval_[idx(r, k)] * xk;
        v[r] += drift * dt + cov(r, k) * hi.transpose() * dnu;
      }
      out.x_hat.row(k + 1) = v[k + 1].head(m).transpose();
      out.diag_cov[k + 1] = cov(k + 1, k + 1);
    }
    return out;
  }

 private:
  std::size_t idx(int r, int s) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(grid_.size()) +
           static_cast<std::size_t>(s);
  }

  Matrix b_mat(int r, int s) const {
    const int m = m_;
    Matrix b = Matrix::Zero(2 * m, 2 * m);
    b.topLeftCorner(m, m) = a_[s];
    b.bottomLeftCorner(m, m) = lval_[idx(r, s)] * Matrix::Identity(m, m);
    return b;
  }

  /// Integrand F(r, t, s) for the integral readings.
  Matrix integrand(int r, int t, int s, const Matrix& prs, const Matrix& pts) const {
    const Matrix quad = prs * gmat_[s] * pts.transpose();
    if (reading_ == VolterraReading::Literal) {
      return prs.transpose() * b_mat(t, s).transpose() + b_mat(r, s) * prs + ss_ - quad;
    }
    return prs * b_mat(t, s).transpose() + b_mat(r, s) * pts.transpose() + ss_ - quad;
  }

  void build_table() {
    const int K = grid_.steps();
    for (int r = 0; r <= K; ++r) table_[idx(r, 0)] = p0_;
    if (reading_ == VolterraReading::RowFrozen) {
      // Heun along each row: dP_{r,t}/dt = P^T B_r^T + B_r P + SS^T - P G P^T.
      auto f = [&](int r, int s, const Matrix& p) -> Matrix {
        const Matrix b = b_mat(r, s);
        return p.transpose() * b.transpose() + b * p + ss_ - p * gmat_[s] * p.transpose();
      };
      for (int r = 0; r <= K; ++r) {
        Matrix p = p0_;
        for (int k = 0; k < r; ++k) {
          const double dt = grid_.dt(k);
          const Matrix k1 = f(r, k, p);
          const Matrix pred = p + dt * k1;
          p = p + 0.5 * dt * (k1 + f(r, k + 1, pred));
          table_[idx(r, k + 1)] = p;
        }
      }
      return;
    }
    // Integral readings: trapezoid in s, with a one-panel predictor for the
    // unknown endpoint values P_{r,t} and P_{t,t}.
    std::vector<Matrix> pred(K + 1), last(K + 1), partial(K + 1);
    for (int t = 1; t <= K; ++t) {
      const double dt = grid_.dt(t - 1);
      for (int r = t; r <= K; ++r) {
        Matrix acc = Matrix::Zero(2 * m_, 2 * m_);
        Matrix prev = integrand(r, t, 0, cov(r, 0), cov(t, 0));
        for (int s = 1; s < t; ++s) {
          const Matrix cur = integrand(r, t, s, cov(r, s), cov(t, s));
          acc += 0.5 * grid_.dt(s - 1) * (prev + cur);
          prev = cur;
        }
        last[r] = prev;
        partial[r] = acc;
        pred[r] = p0_ + acc + dt * prev;
      }
      for (int r = t; r <= K; ++r) {
        const Matrix f_end = integrand(r, t, t, pred[r], pred[t]);
        table_[idx(r, t)] = p0_ + partial[r] + 0.5 * dt * (last[r] + f_end);
      }
    }
  }

  TimeGrid grid_;
  VolterraReading reading_;
  int m_;
  std::vector<Matrix> a_;
  std::vector<Matrix> gmat_;
  std::vector<double> hdiag_;
  std::vector<double> lval_;
  Matrix ss_;
  Matrix p0_;
  Vector mean0_;
  std::vector<Matrix> table_;
};

}  // namespace antfilter
