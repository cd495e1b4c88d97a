#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "vbd/svm.hpp"

namespace vbd::svm {
namespace {

struct Problem {
  Matrix x;
  std::vector<int> y;
};

// Two isotropic Gaussian blobs whose centers are `separation` standard deviations apart.
Problem blobs(std::uint64_t seed, int per_class, double separation, int dim = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Problem p;
  for (int cls : {-1, 1})
    for (int i = 0; i < per_class; ++i) {
      Row r(dim);
      for (int d = 0; d < dim; ++d) r[d] = n(rng) + (d == 0 ? cls * separation / 2 : 0.0);
      p.x.push_back(r);
      p.y.push_back(cls);
    }
  return p;
}

Problem overlapping(std::uint64_t seed, int per_class) { return blobs(seed, per_class, 1.5, 3); }

TEST(Svm, KernelSymmetryAndUnitDiagonal) {
  const Row a{1, 2, 3}, b{-1, 0.5, 2};
  EXPECT_EQ(rbf_kernel(a, b, 0.3), rbf_kernel(b, a, 0.3));
  EXPECT_EQ(rbf_kernel(a, a, 0.3), 1.0);
  EXPECT_DOUBLE_EQ(rbf_kernel(a, b, 0.3), std::exp(-0.3 * (4 + 2.25 + 1)));
}

TEST(Svm, TwoPointsBecomeSupportVectors) {
  const Matrix x{{-5, 0}, {5, 0}};
  const std::vector<int> y{-1, 1};
  const auto m = svm_train(x, y, 1.0, 0.1, {1e-3, 100000, false});
  EXPECT_EQ(m.support.size(), 2u);
  EXPECT_FALSE(svm_predict(m, x[0]).virtual_bg);
  EXPECT_TRUE(svm_predict(m, x[1]).virtual_bg);
  EXPECT_NEAR(svm_predict(m, Row{0, 0}).margin, 0.0, 1e-9);
}

TEST(Svm, SeparableBlobsTrainAccuracy) {
  const auto p = blobs(3, 100, 6.0);
  const auto r = svm_train_full(p.x, p.y, 1.0, 0.5);
  EXPECT_GE(accuracy(r.model, p.x, p.y), 0.99);
  EXPECT_TRUE(r.model.converged);
}

TEST(Svm, KktAndDualConstraintHold) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto p = overlapping(seed, 60);
    for (double C : {0.5, 4.0}) {
      const auto r = svm_train_full(p.x, p.y, C, 0.25);
      EXPECT_LE(max_kkt_violation(r.model, p.x, p.y, r.alpha), 1e-3) << "seed " << seed << " C " << C;
      EXPECT_NEAR(dual_residual(r.model), 0.0, 1e-6);
      for (double a : r.alpha) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, C);
      }
    }
  }
}

TEST(Svm, FreeSupportVectorHasUnitMargin) {
  const auto p = overlapping(4, 50);
  const auto r = svm_train_full(p.x, p.y, 2.0, 0.5);
  int free = 0;
  for (std::size_t i = 0; i < p.x.size(); ++i)
    if (r.alpha[i] > 0 && r.alpha[i] < 2.0) {
      ++free;
      EXPECT_NEAR(std::abs(svm_predict(r.model, p.x[i]).margin), 1.0, 1e-3);
    }
  EXPECT_GT(free, 0);
}

TEST(Svm, DuplicatedDatasetGivesSameSigns) {
  const auto p = overlapping(5, 40);
  Problem d = p;
  d.x.insert(d.x.end(), p.x.begin(), p.x.end());
  d.y.insert(d.y.end(), p.y.begin(), p.y.end());
  // Duplicating every point doubles the data term; halving C keeps the same optimum.
  const auto a = svm_train(p.x, p.y, 2.0, 0.3, {1e-6, 1000000, false});
  const auto b = svm_train(d.x, d.y, 1.0, 0.3, {1e-6, 1000000, false});
  int mismatches = 0, probes = 0;
  for (double u = -4; u <= 4; u += 0.25)
    for (double v = -4; v <= 4; v += 0.5) {
      const Row q{u, v, 0.0};
      const double ma = svm_predict(a, q).margin, mb = svm_predict(b, q).margin;
      ++probes;
      if (std::abs(ma) > 1e-3) mismatches += (ma >= 0) != (mb >= 0);
      EXPECT_NEAR(ma, mb, 1e-3);
    }
  EXPECT_EQ(mismatches, 0) << probes;
}

TEST(Svm, DecisionMatchesKernelSumOracle) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  SvmModel m;
  m.dim = 4;
  m.gamma = 0.7;
  m.C = 3;
  m.bias = 0.25;
  m.scaler = Scaler::identity(4);
  for (int i = 0; i < 12; ++i) {
    Row r(4);
    for (auto& v : r) v = n(rng);
    m.support.push_back(r);
    m.alpha.push_back(std::abs(n(rng)));
    m.label.push_back(i % 2 ? 1 : -1);
  }
  for (int k = 0; k < 20; ++k) {
    Row q(4);
    for (auto& v : q) v = n(rng);
    double f = m.bias;
    for (int i = 0; i < 12; ++i) {
      double d2 = 0;
      for (int j = 0; j < 4; ++j) d2 += (m.support[i][j] - q[j]) * (m.support[i][j] - q[j]);
      f += m.alpha[i] * m.label[i] * std::exp(-m.gamma * d2);
    }
    EXPECT_NEAR(svm_predict(m, q).margin, f, 1e-12);
  }
}

TEST(Svm, PredictionIsDeterministicAndChecksDimension) {
  const auto p = overlapping(6, 30);
  const auto m = svm_train(p.x, p.y, 1.0, 0.5);
  EXPECT_EQ(svm_predict(m, p.x[0]).margin, svm_predict(m, p.x[0]).margin);
  EXPECT_THROW(svm_predict(m, Row{1.0, 2.0}), std::invalid_argument);
}

TEST(Svm, TrainRejectsBadInput) {
  EXPECT_THROW(svm_train({{1.0}, {2.0}}, {1, 1}, 1, 1), std::invalid_argument);
  EXPECT_THROW(svm_train({{1.0}}, {1}, 1, 1), std::invalid_argument);
  EXPECT_THROW(svm_train({{1.0}, {2.0}}, {1, 0}, 1, 1), std::invalid_argument);
  EXPECT_THROW(svm_train({{1.0}, {2.0}}, {1, -1}, 0, 1), std::invalid_argument);
}

TEST(Svm, IterationCapReportsNonConvergence) {
  const auto p = overlapping(7, 60);
  const auto m = svm_train(p.x, p.y, 10.0, 2.0, {1e-3, 3, true});
  EXPECT_FALSE(m.converged);
  EXPECT_EQ(m.iterations, 3u);
}

TEST(Svm, StratifiedFoldsAreBalancedAndSeeded) {
  std::vector<int> y(23, -1);
  for (int i = 0; i < 12; ++i) y[i] = 1;
  const auto a = stratified_folds(y, 5, 42), b = stratified_folds(y, 5, 42), c = stratified_folds(y, 5, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (int f = 0; f < 5; ++f) {
    int pos = 0, neg = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (a[i] == f) (y[i] == 1 ? pos : neg)++;
    EXPECT_TRUE(pos == 2 || pos == 3);
    EXPECT_TRUE(neg == 2 || neg == 3);
  }
}

TEST(Svm, GridOfOnePoint) {
  const auto p = blobs(3, 20, 6.0);
  const auto g = grid_search_cv(p.x, p.y, {0.5}, {0.25}, 5, 1);
  EXPECT_EQ(g.C, 0.5);
  EXPECT_EQ(g.gamma, 0.25);
}

TEST(Svm, GridSearchIsDeterministic) {
  const auto p = overlapping(8, 40);
  const auto a = grid_search_cv(p.x, p.y, power_grid(-2, 3), power_grid(-4, 1), 5, 11);
  const auto b = grid_search_cv(p.x, p.y, power_grid(-2, 3), power_grid(-4, 1), 5, 11);
  EXPECT_EQ(a.C, b.C);
  EXPECT_EQ(a.gamma, b.gamma);
  EXPECT_EQ(a.cv_accuracy, b.cv_accuracy);
  EXPECT_EQ(a.table, b.table);
}

TEST(Svm, GridTiesPreferSmallerCThenGamma) {
  // Perfectly separable: many configurations reach 100% and the tie rule decides.
  const auto p = blobs(3, 20, 12.0);
  const auto g = grid_search_cv(p.x, p.y, {8, 1, 2}, {0.5, 0.125}, 5, 1);
  EXPECT_EQ(g.cv_accuracy, 1.0);
  EXPECT_EQ(g.C, 1.0);
  EXPECT_EQ(g.gamma, 0.125);
}

TEST(Svm, GridOnSeparableBlobs) {
  const auto p = blobs(3, 100, 6.0);
  const auto g = grid_search_cv(p.x, p.y, default_c_grid(), default_gamma_grid(), 5, 3);
  EXPECT_GE(g.cv_accuracy, 0.99);
}

TEST(Svm, GridRejectsInsufficientData) {
  const auto p = blobs(3, 3, 6.0);
  EXPECT_THROW(grid_search_cv(p.x, p.y, {1}, {1}, 5, 1), std::invalid_argument);
  EXPECT_THROW(grid_search_cv(p.x, p.y, {1}, {1}, 1, 1), std::invalid_argument);
}

TEST(Svm, ModelFileRoundTrip) {
  const auto dir = test::scratch_dir("svm_io");
  const auto p = overlapping(9, 30);
  const auto m = svm_train(p.x, p.y, 1.0, 0.5);
  save_svm(m, dir / "model.json");
  EXPECT_TRUE(std::filesystem::exists(dir / "model.svb"));
  const auto back = load_svm(dir / "model.json");
  EXPECT_EQ(back.support, m.support);
  EXPECT_EQ(back.alpha, m.alpha);
  EXPECT_EQ(back.label, m.label);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.scaler.mean, m.scaler.mean);
  for (const auto& r : p.x) EXPECT_EQ(svm_predict(back, r).margin, svm_predict(m, r).margin);
}

TEST(Svm, StandardizationIsStoredAndApplied) {
  auto p = blobs(10, 30, 6.0);
  for (auto& r : p.x) r[1] *= 1000.0;  // badly scaled second dimension
  const auto m = svm_train(p.x, p.y, 1.0, 0.5);
  EXPECT_GE(accuracy(m, p.x, p.y), 0.99);
  EXPECT_NEAR(m.scaler.scale[1] * 1000.0, 1.0, 0.3);
}

}  // namespace
}  // namespace vbd::svm
