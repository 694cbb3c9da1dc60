#include "antfilter/kalman.hpp"
#include "antfilter/scenario.hpp"

#include <gtest/gtest.h>

using namespace antfilter;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

LinearModel ramp_model(double T) {
  return make_linear_model(scalar(0.0), scalar(1.0), scalar(1.0),
                           linear_correlation(scalar(1.0), scalar(1.0), T));
}

LinearGaussianSystem scalar_classical_system(const TimeGrid& grid) {
  const LinearModel m = make_linear_model(scalar(0.0), scalar(1.0), scalar(1.0),
                                          zero_correlation(scalar(0.0), 1, grid.horizon()));
  return classical_system(m, grid);
}

}  // namespace

TEST(Riccati, ScalarTanh) {
  const TimeGrid grid = TimeGrid::uniform(3.0, 300);
  const auto path = riccati_integrate(scalar_classical_system(grid), scalar(0.0));
  for (int k = 0; k < grid.size(); k += 10) {
    EXPECT_NEAR(path[k](0, 0), std::tanh(grid[k]), 1e-9) << grid[k];
  }
}

TEST(Riccati, ZeroCoefficientsKeepInitialCovariance) {
  const TimeGrid grid = TimeGrid::uniform(1.0, 10);
  LinearGaussianSystem sys;
  sys.grid = grid;
  sys.drift = TabulatedMatrix(grid, 3, 3);
  sys.observation = TabulatedMatrix(grid, 1, 3);
  sys.sigma = Matrix::Zero(3, 1);
  sys.coupling = Matrix::Zero(3, 1);
  Matrix p0(3, 3);
  p0 << 2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 0.5;
  for (const auto& p : riccati_integrate(sys, p0)) EXPECT_EQ(p, p0);
}

TEST(Riccati, ZeroCorrelationBlockMatchesClassical) {
  const LinearModel model = radar_model(0.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 500);
  RiccatiOptions opt;
  opt.substeps = 16;
  const AnticipativeFilter ant(model, grid, opt);
  const ClassicalFilter cls(model, grid, opt);
  for (int k = 0; k < grid.size(); ++k) {
    const Matrix& a = ant.covariance_path()[k];
    const Matrix& c = cls.covariance_path()[k];
    ASSERT_LE((a.topLeftCorner(6, 6) - c).norm(), 1e-10 * std::max(1.0, c.norm())) << k;
  }
}

TEST(Riccati, PathStaysSymmetricPsd) {
  const LinearModel model = radar_model(1.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 200);
  const AnticipativeFilter ant(model, grid);
  for (const auto& p : ant.covariance_path()) {
    EXPECT_EQ(p, p.transpose());
    EXPECT_GE(min_eigenvalue(p), psd_floor(p));
  }
}

TEST(Riccati, BlowupIsReported) {
  const TimeGrid grid = TimeGrid::uniform(10.0, 10);
  LinearGaussianSystem sys;
  sys.grid = grid;
  sys.drift = TabulatedMatrix::sample(grid, [](double, Side) { return scalar(5.0); });
  sys.observation = TabulatedMatrix(grid, 1, 1);
  sys.sigma = scalar(1.0);
  sys.coupling = scalar(0.0);
  RiccatiOptions opt;
  opt.blowup_cap = 1e6;
  try {
    riccati_integrate(sys, scalar(1.0), opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RiccatiBlowup);
  }
}

TEST(Riccati, RejectsIndefiniteStart) {
  const TimeGrid grid = TimeGrid::uniform(1.0, 10);
  try {
    riccati_integrate(scalar_classical_system(grid), scalar(-1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PSDViolation);
  }
}

TEST(Filter, ZeroCorrelationIsBitIdenticalToClassical) {
  const LinearModel model = radar_model(0.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 500);
  const PathBundle b = sample_bundle(model, grid, 1, 0);
  RiccatiOptions opt;
  opt.substeps = 16;
  const FilterRun a = AnticipativeFilter(model, grid, opt).run(b.z);
  const FilterRun c = ClassicalFilter(model, grid, opt).run(b.z);
  EXPECT_EQ(a.x_hat, c.x_hat);
  EXPECT_EQ(a.innovation, c.innovation);
  for (int k = 0; k < grid.size(); ++k) EXPECT_EQ(a.p11[k], c.p11[k]);
}

TEST(Filter, InitialConditions) {
  const LinearModel model = radar_model(1.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 50);
  const PathBundle b = sample_bundle(model, grid, 1, 0);
  const AnticipativeFilter f(model, grid);
  const FilterRun run = f.run(b.z);
  EXPECT_EQ(run.innovation.row(0).norm(), 0.0);
  EXPECT_EQ(run.u_hat.row(0).transpose(), augmented_initial_mean(model.init_mean, 2));
  EXPECT_EQ(run.p[0], augmented_initial_cov(model.corr.sigma0_cov, 2));
}

TEST(Filter, NoObservationPropagatesPriorMean) {
  LinearModel model = make_linear_model(scalar(-1.0), scalar(1.0), scalar(0.0),
                                        zero_correlation(scalar(1.0), 1, 1.0), scalar(2.0));
  const int K = 100;
  const TimeGrid grid = TimeGrid::uniform(1.0, K);
  const Path z = Path::Zero(K + 1, 1);
  const FilterRun run = AnticipativeFilter(model, grid).run(z);
  for (int k = 0; k <= K; k += 10) {
    EXPECT_NEAR(run.x_hat(k, 0), 2.0 * std::pow(1.0 - 1.0 / K, k), 1e-12);
  }
}

TEST(Filter, BaselineIgnoresDataWhenBlind) {
  const LinearModel model = make_linear_model(scalar(-0.5), scalar(1.0), scalar(0.0),
                                              zero_correlation(scalar(1.0), 1, 1.0), scalar(1.0));
  const TimeGrid grid = TimeGrid::uniform(1.0, 50);
  const Path z = Path::Random(51, 1);
  const FilterRun run = classical_baseline(model, z, grid);
  for (int k = 0; k <= 50; ++k) EXPECT_NEAR(run.x_hat(k, 0), std::pow(1.0 - 0.5 / 50, k), 1e-12);
}

TEST(Filter, GridMismatch) {
  const LinearModel model = scalar_demo_model(1.0);
  const AnticipativeFilter f(model, TimeGrid::uniform(1.0, 10));
  try {
    f.run(Path::Zero(12, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
  }
}

TEST(Filter, SemiImplicitConvergesToExplicit) {
  const LinearModel model = scalar_demo_model(1.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 4000);
  const PathBundle b = sample_bundle(model, grid, 3, 0);
  const AnticipativeFilter f(model, grid);
  const FilterRun e = f.run(b.z, MeanScheme::Explicit);
  const FilterRun s = f.run(b.z, MeanScheme::SemiImplicit);
  EXPECT_LT((e.x_hat - s.x_hat).cwiseAbs().maxCoeff(), 5e-3);
}

// ---------------------------------------------------------------------------
// Gaussian conditioning oracle

TEST(Oracle, NoObservationsGivesPrior) {
  const LinearModel model = make_linear_model(scalar(-1.0), scalar(1.0), scalar(0.0),
                                              zero_correlation(scalar(2.0), 1, 1.0), scalar(1.0));
  const int K = 32;
  const TimeGrid grid = TimeGrid::uniform(1.0, K);
  const GaussianConditioningOracle oracle(model, grid, {0.0, 1.0});
  EXPECT_NEAR(oracle.mean(Path::Zero(K + 1, 1), 0.0)(0), 1.0, 1e-14);
  EXPECT_NEAR(oracle.covariance(0.0)(0, 0), 2.0, 1e-14);
}

TEST(Oracle, ScalarClassicalVariance) {
  const LinearModel model = make_linear_model(scalar(0.0), scalar(1.0), scalar(1.0),
                                              zero_correlation(scalar(0.0), 1, 1.0));
  const TimeGrid grid = TimeGrid::uniform(1.0, 64);
  const GaussianConditioningOracle oracle(model, grid, {1.0});
  // Discretization-limited: O(dt) away from tanh(1).
  EXPECT_NEAR(oracle.covariance(1.0)(0, 0), std::tanh(1.0), 2.0 / 64);
}

TEST(Oracle, AgreesWithFilterOnRampCorrelation) {
  const double T = 0.9;
  const LinearModel model = ramp_model(T);
  const int K = 64;
  const TimeGrid grid = TimeGrid::uniform(T, K);
  const GaussianConditioningOracle oracle(model, grid, {T});
  const AnticipativeFilter filter(model, grid);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 32; ++i) {
    const PathBundle b = sample_bundle(model, grid, 77, static_cast<std::uint64_t>(i));
    const double want = oracle.mean(b.z, T)(0);
    const double got = filter.run(b.z).x_hat(K, 0);
    num += (got - want) * (got - want);
    den += want * want;
  }
  EXPECT_LE(std::sqrt(num / den), 0.05);
}

TEST(Oracle, RejectsUnregisteredTime) {
  const TimeGrid grid = TimeGrid::uniform(0.9, 16);
  const GaussianConditioningOracle oracle(ramp_model(0.9), grid, {0.9});
  EXPECT_THROW(oracle.covariance(0.45), Error);
}

// ---------------------------------------------------------------------------
// Monte Carlo properties of the filter

namespace {

struct McStats {
  double mean = 0.0;
  double se = 0.0;
};

McStats stats(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double s = 0.0, ss = 0.0;
  for (double x : v) {
    s += x;
    ss += x * x;
  }
  const double m = s / n;
  return {m, std::sqrt(std::max(0.0, ss / n - m * m) * n / (n - 1.0) / n)};
}

}  // namespace

class FilterMonteCarlo : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new LinearModel(scalar_demo_model(1.0));
    grid_ = new TimeGrid(TimeGrid::uniform(1.0, 400));
    const AnticipativeFilter f(*model_, *grid_);
    const BundleSampler sampler(*model_, *grid_);
    runs_ = new std::vector<std::pair<PathBundle, FilterRun>>();
    for (int i = 0; i < 1000; ++i) {
      PathBundle b = sampler.sample(2024, static_cast<std::uint64_t>(i));
      FilterRun r = f.run(b.z);
      runs_->emplace_back(std::move(b), std::move(r));
    }
  }
  static void TearDownTestSuite() {
    delete runs_;
    delete grid_;
    delete model_;
  }
  static LinearModel* model_;
  static TimeGrid* grid_;
  static std::vector<std::pair<PathBundle, FilterRun>>* runs_;
};

LinearModel* FilterMonteCarlo::model_ = nullptr;
TimeGrid* FilterMonteCarlo::grid_ = nullptr;
std::vector<std::pair<PathBundle, FilterRun>>* FilterMonteCarlo::runs_ = nullptr;

TEST_F(FilterMonteCarlo, InnovationIncrementsAreWhite) {
  // Variance of increments over 4 disjoint blocks of the grid.
  const int K = grid_->steps();
  for (int blk = 0; blk < 4; ++blk) {
    const int k0 = blk * K / 4, k1 = (blk + 1) * K / 4;
    std::vector<double> v;
    for (const auto& [b, r] : *runs_) v.push_back(r.innovation(k1, 0) - r.innovation(k0, 0));
    std::vector<double> sq;
    for (double x : v) sq.push_back(x * x);
    const McStats s = stats(sq);
    const double want = (*grid_)[k1] - (*grid_)[k0];
    EXPECT_LE(std::abs(s.mean - want), 3.0 * s.se + grid_->dt(0)) << blk;
  }
}

TEST_F(FilterMonteCarlo, ErrorOrthogonalToEstimate) {
  for (int k : {grid_->steps() / 2, grid_->steps()}) {
    std::vector<double> v;
    for (const auto& [b, r] : *runs_) v.push_back((b.x(k, 0) - r.x_hat(k, 0)) * r.x_hat(k, 0));
    const McStats s = stats(v);
    EXPECT_LE(std::abs(s.mean), 3.0 * s.se) << k;
  }
}

TEST_F(FilterMonteCarlo, MseMatchesRiccati) {
  for (int k : {grid_->steps() / 2, grid_->steps()}) {
    std::vector<double> v;
    for (const auto& [b, r] : *runs_) v.push_back(std::pow(b.x(k, 0) - r.x_hat(k, 0), 2));
    const McStats s = stats(v);
    const double p11 = runs_->front().second.p11[k](0, 0);
    EXPECT_LE(std::abs(s.mean - p11), 3.0 * s.se + grid_->dt(0)) << k;
  }
}

TEST(Filter, MatchedBaselineSharesSchedule) {
  const LinearModel model = radar_model(0.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 300);
  const PathBundle b = sample_bundle(model, grid, 2, 0);
  const AnticipativeFilter ant(model, grid);
  const ClassicalFilter cls = matched_baseline(ant, model, grid);
  EXPECT_EQ(cls.substep_schedule(), ant.substep_schedule());
  EXPECT_EQ(ant.run(b.z).x_hat, cls.run(b.z).x_hat);
  RiccatiOptions bad;
  bad.schedule = {1, 2};
  EXPECT_THROW(ClassicalFilter(model, grid, bad), Error);
}
