#include "forest2mlp/augment.hpp"
#include "forest2mlp/synthetic.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace forest2mlp;

namespace {

Matrix gaussian_sample(int n, int d, double mean, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(mean, sd);
  Matrix x(n, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < n; ++i) x(i, j) = g(rng);
  return x;
}

bool nondecreasing(const std::vector<double>& trace, double slack) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] < trace[i - 1] - slack) return false;
  return true;
}

}  // namespace

TEST(FitGmm, SingleComponentMatchesSampleMean) {
  const Matrix x = gaussian_sample(400, 2, 1.5, 2.0, 1);
  const GmmModel g = fit_gmm(x, 1, 7);
  const Vector sample_mean = x.colwise().mean().transpose();
  for (int j = 0; j < 2; ++j)
    EXPECT_LE(std::abs(g.means(0, j) - sample_mean[j]), 3 * 2.0 / std::sqrt(400.0));
  EXPECT_DOUBLE_EQ(g.weights[0], 1.0);
}

TEST(FitGmm, LogLikelihoodNondecreasing) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix x = f2m_test::random_matrix(80, 3, rng);
    const GmmModel g = fit_gmm(x, 3, rng());
    EXPECT_TRUE(nondecreasing(g.log_likelihood_trace, 1e-9));
  }
}

TEST(FitGmm, RecoversSeparatedClusters) {
  Matrix x(400, 2);
  const Matrix a = gaussian_sample(200, 2, -5.0, 0.5, 11);
  const Matrix b = gaussian_sample(200, 2, 5.0, 0.5, 12);
  x << a, b;
  const GmmModel g = fit_gmm(x, 2, 4);
  const RowVector ca = a.colwise().mean(), cb = b.colwise().mean();
  const int ia = g.means(0, 0) < 0 ? 0 : 1;
  EXPECT_LE((g.means.row(ia) - ca).cwiseAbs().maxCoeff(), 0.1);
  EXPECT_LE((g.means.row(1 - ia) - cb).cwiseAbs().maxCoeff(), 0.1);
}

TEST(FitGmm, DensityIntegratesToOneIn1D) {
  Matrix x(150, 1);
  x << gaussian_sample(100, 1, -2.0, 0.7, 5), gaussian_sample(50, 1, 3.0, 1.5, 6);
  const GmmModel g = fit_gmm(x, 3, 8);
  const int steps = 20000;
  const double lo = -20, hi = 20, h = (hi - lo) / steps;
  Matrix grid(steps + 1, 1);
  for (int i = 0; i <= steps; ++i) grid(i, 0) = lo + h * i;
  const Vector dens = log_density(g, grid).array().exp();
  double integral = 0.5 * (dens[0] + dens[steps]);
  for (int i = 1; i < steps; ++i) integral += dens[i];
  EXPECT_NEAR(integral * h, 1.0, 1e-6);
}

TEST(FitGmm, VarianceFloorOnDegenerateData) {
  const Matrix x = Matrix::Constant(10, 2, 4.0);
  const GmmModel g = fit_gmm(x, 2, 1);
  EXPECT_GE(g.variances.minCoeff(), kVarianceFloor);
  EXPECT_TRUE(std::isfinite(g.log_likelihood_trace.back()));
}

TEST(FitGmm, Preconditions) {
  const Matrix x = Matrix::Zero(3, 1);
  EXPECT_THROW(fit_gmm(x, 4, 0), Error);
  EXPECT_THROW(fit_gmm(x, 0, 0), Error);
}

TEST(FitKde, SilvermanBandwidth) {
  const Matrix x = gaussian_sample(100, 1, 0.0, 1.0, 9);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / 99.0);
  EXPECT_NEAR(fit_kde(x).bandwidth[0], 1.06 * sd * std::pow(100.0, -0.2), 1e-12);
}

TEST(FitKde, IdenticalPointsHitTheFloor) {
  const Matrix x = Matrix::Constant(2, 2, 1.0);
  const KdeModel k = fit_kde(x);
  EXPECT_EQ(k.bandwidth[0], kVarianceFloor);
  EXPECT_EQ(k.bandwidth[1], kVarianceFloor);
}

TEST(FitKde, VanishingBandwidthReproducesTrainingPoints) {
  Matrix x(3, 1);
  x << 0.0, 10.0, 20.0;
  const Matrix s = sample(fit_kde(x, 1e-9), 200, 3);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double nearest = std::round(s(i, 0) / 10.0) * 10.0;
    EXPECT_LE(std::abs(s(i, 0) - nearest), 1e-4);
  }
}

TEST(FitUniform, SinglePointIsDegenerate) {
  Matrix x(1, 2);
  x << 3.0, -1.0;
  const Matrix s = sample(fit_uniform(x), 50, 1);
  for (Eigen::Index i = 0; i < s.rows(); ++i) EXPECT_EQ(s.row(i), x.row(0));
}

TEST(FitUniform, SamplesStayInBox) {
  std::mt19937_64 rng(4);
  const Matrix x = f2m_test::random_matrix(30, 3, rng);
  const UniformModel box = fit_uniform(x);
  const Matrix s = sample(box, 1000, 2);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (int j = 0; j < 3; ++j) {
      EXPECT_GE(s(i, j), box.lower[j]);
      EXPECT_LE(s(i, j), box.upper[j]);
    }
}

TEST(FitUniform, QuadrantCoverage) {
  Matrix x(2, 2);
  x << 0, 0, 1, 1;
  const Matrix s = sample(fit_uniform(x), 10000, 6);
  int counts[4] = {0, 0, 0, 0};
  for (Eigen::Index i = 0; i < s.rows(); ++i) ++counts[(s(i, 0) > 0.5) * 2 + (s(i, 1) > 0.5)];
  for (int c : counts) EXPECT_NEAR(c / 10000.0, 0.25, 0.05);
}

TEST(Sample, GmmMeanWithinStandardErrors) {
  GmmModel g;
  g.weights = Vector::Ones(1);
  g.means = Matrix::Constant(1, 2, 2.0);
  g.variances = Matrix::Constant(1, 2, 4.0);
  const Matrix s = sample(g, 10000, 12);
  for (int j = 0; j < 2; ++j) EXPECT_LE(std::abs(s.col(j).mean() - 2.0), 4 * 2.0 / 100.0);
}

TEST(Sample, SameSeedSameDraws) {
  std::mt19937_64 rng(5);
  const Matrix x = f2m_test::random_matrix(40, 2, rng);
  const GmmModel g = fit_gmm(x, 2, 3);
  EXPECT_EQ(sample(g, 100, 9), sample(g, 100, 9));
  EXPECT_EQ(sample(fit_kde(x), 100, 9), sample(fit_kde(x), 100, 9));
  EXPECT_NE(sample(g, 100, 9), sample(g, 100, 10));
}

TEST(AugmentTrainingSet, RowCountsAndLabels) {
  const Dataset ds = synthetic::xor_task(60, 2);
  ForestParams fp;
  fp.n_trees = 10;
  const Forest teacher = fit_forest(ds.features, ds.labels, fp);
  const DensityModel density = fit_gmm(ds.features, 2, 1);
  const AugmentedSet none = augment_training_set(teacher, ds.features, density, 0, 3);
  EXPECT_EQ(none.inputs, ds.features);
  EXPECT_EQ(none.soft_labels, predict_proba(teacher, ds.features));
  const AugmentedSet more = augment_training_set(teacher, ds.features, density, 25, 3);
  EXPECT_EQ(more.inputs.rows(), 85);
  EXPECT_EQ(more.inputs.topRows(60), ds.features);
  EXPECT_EQ(more.soft_labels, predict_proba(teacher, more.inputs));
}
