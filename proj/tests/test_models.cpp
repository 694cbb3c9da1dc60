#include "antfilter/models.hpp"
#include "antfilter/scenario.hpp"
#include "antfilter/simulate.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace antfilter;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

LinearModel scalar_linear(double a, double h, CorrelationSpec corr) {
  return make_linear_model(scalar(a), scalar(1.0), scalar(h), std::move(corr));
}

NonlinearModel cubic_model(CorrelationSpec corr) {
  NonlinearModel m;
  m.drift = [](const Vector& x) -> Vector { return -x.array().cube().matrix(); };
  m.obs = [](const Vector& x) -> Vector { return x; };
  m.sigma0 = scalar(1.0);
  m.corr = std::move(corr);
  m.init_mean = Vector::Zero(1);
  return m;
}

}  // namespace

TEST(Augmented, NoiseBlocksHaveFixedShape) {
  const LinearModel model = radar_model(1.0);
  const auto co = build_augmented_linear(model, TimeGrid::uniform(1.0, 20));
  ASSERT_EQ(co.dim_u, 14);
  Matrix c = Matrix::Zero(14, 2);
  c.bottomRows(2) = Matrix::Identity(2, 2);
  EXPECT_EQ(co.c, c);
  Matrix s = Matrix::Zero(14, 2);
  s.topRows(6) = model.sigma0;
  EXPECT_EQ(co.sigma, s);
}

TEST(Augmented, ZeroCorrelationReducesToClassicalBlocks) {
  Matrix a(2, 2);
  a << 0.0, 1.0, -1.0, -0.2;
  Matrix h(1, 2);
  h << 1.0, 0.5;
  const LinearModel model =
      make_linear_model(a, Matrix::Identity(2, 2), h, zero_correlation(Matrix::Identity(2, 2), 1, 1.0));
  const auto co = build_augmented_linear(model, TimeGrid::uniform(1.0, 10));
  Matrix b = Matrix::Zero(5, 5);
  b.topLeftCorner(2, 2) = a;
  Matrix k = Matrix::Zero(1, 5);
  k.leftCols(2) = h;
  for (double t : {0.0, 0.3, 1.0}) {
    EXPECT_EQ(co.drift_matrix.at(t), b);
    EXPECT_EQ(co.obs_matrix.at(t), k);
  }
}

TEST(Augmented, RadarObservationBlocks) {
  const LinearModel model = radar_model(1.0, 2.0);
  const TimeGrid grid = TimeGrid::uniform(2.0, 40);
  const auto co = build_augmented_linear(model, grid);
  const Matrix k05 = co.obs_matrix.at(0.5);
  EXPECT_DOUBLE_EQ(k05(0, 0), 1.0 / 0.017);
  EXPECT_DOUBLE_EQ(k05(1, 3), 1.0 / 0.017);
  EXPECT_GT(k05.middleCols(6, 6).norm(), 0.1);
  EXPECT_GT(k05.rightCols(2).norm(), 0.1);
  const Matrix k15 = co.obs_matrix.at(1.5);
  EXPECT_EQ(k15.middleCols(6, 6).norm(), 0.0);
  EXPECT_EQ(k15.rightCols(2).norm(), 0.0);
  // Drift blocks mirror the observation blocks.
  const Matrix b05 = co.drift_matrix.at(0.5);
  EXPECT_EQ(b05.block(12, 6, 2, 6), k05.middleCols(6, 6));
  EXPECT_EQ(b05.block(12, 12, 2, 2), k05.rightCols(2));
  EXPECT_EQ(b05.block(6, 12, 6, 2).norm(), 0.0);  // rho'' = 0
  EXPECT_EQ(b05.topLeftCorner(6, 6), model.a(0.5));
}

TEST(Augmented, ScalarLinearKernelPlacement) {
  const LinearModel model = scalar_linear(0.0, 1.0, linear_correlation(scalar(1.0), scalar(1.0), 0.9));
  const auto co = build_augmented_linear(model, TimeGrid::uniform(0.9, 90));
  for (double t : {0.0, 0.4, 0.8}) {
    const Matrix b = co.drift_matrix.at(t);
    EXPECT_NEAR(b(2, 1), 1.0 / (1.0 - t), 1e-12);
    EXPECT_NEAR(b(2, 2), -1.0 / (1.0 - t), 1e-12);
    EXPECT_EQ(b(1, 2), 0.0);
    EXPECT_EQ(b(0, 0), 0.0);
  }
}

TEST(AugmentedNonlinear, IdentityObservationWithoutCorrelation) {
  NonlinearModel m;
  m.drift = [](const Vector& x) -> Vector { return Vector::Zero(x.size()); };
  m.obs = [](const Vector& x) -> Vector { return x; };
  m.sigma0 = scalar(1.0);
  m.corr = zero_correlation(scalar(1.0), 1, 1.0);
  m.init_mean = Vector::Zero(1);
  const auto co = build_augmented_nonlinear(m, TimeGrid::uniform(1.0, 10));
  Vector u(3);
  u << 0.7, -2.0, 3.0;
  EXPECT_DOUBLE_EQ(co.observation(0.3, u, Side::Right)(0), 0.7);
  EXPECT_EQ(co.drift(0.3, u, Side::Right).norm(), 0.0);
}

TEST(AugmentedNonlinear, CubicDrift) {
  const auto co = build_augmented_nonlinear(cubic_model(linear_correlation(scalar(1.0), scalar(1.0), 0.9)),
                                            TimeGrid::uniform(0.9, 90));
  Vector u(3);
  u << 1.5, 0.4, -0.2;
  const double t = 0.5;
  const Vector b = co.drift(t, u, Side::Right);
  EXPECT_NEAR(b(0), -1.5 * 1.5 * 1.5, 1e-14);
  EXPECT_EQ(b(1), 0.0);
  EXPECT_NEAR(b(2), 2.0 * 0.4 - 2.0 * -0.2, 1e-12);
  EXPECT_NEAR(co.observation(t, u, Side::Right)(0), 1.5 + 2.0 * 0.4 - 2.0 * -0.2, 1e-12);
}

TEST(AugmentedNonlinear, AgreesWithLinearBuilder) {
  Matrix a(2, 2);
  a << -0.5, 1.0, 0.0, -1.0;
  Matrix h(2, 2);
  h << 1.0, 0.0, 0.3, 2.0;
  Matrix c(2, 2);
  c << 0.3, 0.1, 0.0, 0.2;
  Matrix sigma(2, 2);
  sigma << 1.0, 0.2, 0.2, 0.8;
  const LinearModel lin = make_linear_model(a, Matrix::Identity(2, 2), h,
                                            quadratic_correlation(c, sigma, 1.0));
  NonlinearModel nl;
  nl.drift = [a](const Vector& x) -> Vector { return a * x; };
  nl.obs = [h](const Vector& x) -> Vector { return h * x; };
  nl.sigma0 = lin.sigma0;
  nl.corr = lin.corr;
  nl.init_mean = lin.init_mean;
  const TimeGrid grid = TimeGrid::uniform(1.0, 50);
  const auto cl = build_augmented_linear(lin, grid);
  const auto cn = build_augmented_nonlinear(nl, grid);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss;
  for (int i = 0; i < 100; ++i) {
    const double t = unif(gen);
    Vector u(6);
    for (int j = 0; j < 6; ++j) u(j) = gauss(gen);
    const Vector bl = cl.drift(t, u, Side::Right);
    const Vector bn = cn.drift(t, u, Side::Right);
    const Vector kl = cl.observation(t, u, Side::Right);
    const Vector kn = cn.observation(t, u, Side::Right);
    ASSERT_LE((bl - bn).norm(), 1e-12 * std::max(1.0, bl.norm()));
    ASSERT_LE((kl - kn).norm(), 1e-12 * std::max(1.0, kl.norm()));
  }
  // Batched evaluation agrees with the pointwise evaluators.
  Matrix us(6, 5);
  for (int j = 0; j < us.size(); ++j) us(j) = gauss(gen);
  const Matrix bb = cn.drift_batch(0.37, Side::Right, us);
  const Matrix kb = cn.observation_batch(0.37, Side::Right, us);
  for (int j = 0; j < 5; ++j) {
    EXPECT_LE((bb.col(j) - cn.drift(0.37, us.col(j), Side::Right)).norm(), 1e-12);
    EXPECT_LE((kb.col(j) - cn.observation(0.37, us.col(j), Side::Right)).norm(), 1e-12);
  }
}

TEST(AugmentedInitialLaw, CrossBlockEqualsSigma) {
  Matrix sigma(2, 2);
  sigma << 2.0, 0.5, 0.5, 1.0;
  const Matrix p0 = augmented_initial_cov(sigma, 3);
  ASSERT_EQ(p0.rows(), 7);
  EXPECT_EQ(p0.block(0, 2, 2, 2), sigma);
  EXPECT_EQ(p0.block(2, 2, 2, 2), sigma);
  EXPECT_EQ(p0.bottomRows(3).norm(), 0.0);
  Vector mean(2);
  mean << 1.0, -1.0;
  const Vector u0 = augmented_initial_mean(mean, 3);
  EXPECT_EQ(u0.segment(2, 2), mean);
  EXPECT_EQ(u0.tail(3).norm(), 0.0);
}

TEST(XbarPath, ConstantWhenRhoSecondVanishes) {
  const auto corr = radar_model(1.0).corr;
  const TimeGrid grid = TimeGrid::uniform(1.0, 10);
  Path n = Path::Random(11, 2);
  Vector x0 = Vector::LinSpaced(6, 1.0, 6.0);
  const Path xb = xbar_path(corr, grid, n, x0);
  for (int k = 0; k < grid.size(); ++k) EXPECT_EQ(xb.row(k).transpose(), x0);
}

TEST(XbarPath, QuadraticWithUnitNoise) {
  const auto corr = quadratic_correlation(scalar(1.0), scalar(1.0), 1.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 20);
  const Path n = Path::Ones(21, 1);
  const Path xb = xbar_path(corr, grid, n, scalar(0.3));
  for (int k = 0; k < grid.size(); ++k) EXPECT_NEAR(xb(k, 0), 0.3 + 2.0 * grid[k], 1e-13);
}

TEST(XbarPath, SecondOrderAgainstExactIntegral) {
  // Smooth random noise path; exact integral known in closed form.
  std::mt19937_64 gen(17);
  std::normal_distribution<double> gauss;
  std::vector<double> coef(6);
  for (auto& c : coef) c = gauss(gen);
  auto n_at = [&](double s) {
    double v = 0.0;
    for (int j = 0; j < 6; ++j) v += coef[j] * std::sin((j + 1) * s);
    return v;
  };
  auto n_int = [&](double t) {
    double v = 0.0;
    for (int j = 0; j < 6; ++j) v += coef[j] * (1.0 - std::cos((j + 1) * t)) / (j + 1);
    return v;
  };
  const auto corr = quadratic_correlation(scalar(1.0), scalar(1.0), 1.0);
  auto error = [&](int K) {
    const TimeGrid grid = TimeGrid::uniform(1.0, K);
    Path n(K + 1, 1);
    for (int k = 0; k <= K; ++k) n(k, 0) = n_at(grid[k]);
    const Path xb = xbar_path(corr, grid, n, scalar(0.0));
    return std::abs(xb(K, 0) - 2.0 * n_int(1.0));
  };
  const double e1 = error(50), e2 = error(100);
  EXPECT_LT(e1, 1e-3);
  EXPECT_NEAR(e1 / e2, 4.0, 0.4);
}

// Pathwise: N_t - N~_t equals int g' Xbar ds + int r N ds, and Z rebuilt from
// the augmented observation matches the simulated Z.
TEST(AugmentationIdentity, PathwiseReconstruction) {
  Matrix c(1, 1);
  c << 0.8;
  const LinearModel model =
      make_linear_model(scalar(-0.5), scalar(1.0), scalar(1.0), quadratic_correlation(c, scalar(1.0), 1.0));
  const TimeGrid grid = TimeGrid::uniform(1.0, 4000);
  const PathBundle b = sample_bundle(model, grid, 5, 0);
  const auto co = build_augmented_linear(model, grid);
  const Path nt = tilde_n_path(b, co.kernel);
  const Path xb = xbar_path(model.corr, grid, b.n, b.x0);
  double lhs_rhs = 0.0, recon = 0.0;
  double acc = 0.0, obs = 0.0;
  for (int k = 0; k < grid.steps(); ++k) {
    const double dt = grid.dt(k);
    auto integrand = [&](int j) {
      return (co.kernel.g_prime.at_index(j) * xb.row(j).transpose() +
              co.kernel.r.at_index(j) * b.n.row(j).transpose())(0);
    };
    acc += 0.5 * dt * (integrand(k) + integrand(k + 1));
    obs += 0.5 * dt * (b.x(k, 0) + b.x(k + 1, 0));
    lhs_rhs = std::max(lhs_rhs, std::abs(b.n(k + 1, 0) - nt(k + 1, 0) - acc));
    recon = std::max(recon, std::abs(obs + acc + nt(k + 1, 0) - b.z(k + 1, 0)));
  }
  EXPECT_LT(lhs_rhs, 1e-3);
  EXPECT_LT(recon, 1e-3);
}

TEST(Models, ValidationErrors) {
  EXPECT_THROW(make_linear_model(Matrix::Zero(2, 2), scalar(1.0), scalar(1.0),
                                 zero_correlation(scalar(1.0), 1, 1.0)),
               Error);
  try {
    make_linear_model(scalar(0.0), scalar(1.0), Matrix::Zero(1, 2), zero_correlation(scalar(1.0), 1, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}
