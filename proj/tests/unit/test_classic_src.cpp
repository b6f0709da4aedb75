#include <gtest/gtest.h>

#include "dsrc/classic_src.hpp"
#include "dsrc/random.hpp"
#include "oracles.hpp"

using namespace dsrc;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

Eigen::VectorXd gaussian(Eigen::Index r, Rng& rng) { return gaussian(r, 1, rng).col(0); }

Eigen::MatrixXd orthonormal(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(r, c, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
}

}  // namespace

TEST(BuildDictionary, ClassOrderUnitColumnsAndNorms) {
  Eigen::MatrixXd x(2, 4);
  x << 3, 1, 0, 2,  //
      4, 0, 5, 0;
  auto d = build_dictionary(x, {1, 0, 1, 0});
  EXPECT_EQ(d.labels, (std::vector<int>{0, 0, 1, 1}));
  EXPECT_EQ(d.source_index, (std::vector<std::size_t>{1, 3, 0, 2}));
  EXPECT_EQ(d.column_norms, (std::vector<double>{1, 2, 5, 5}));
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(d.columns.col(j).norm(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(d.columns(0, 2), 0.6);
}

TEST(BuildDictionary, WithinClassPermutationStaysInBlock) {
  Rng rng(1);
  auto x = gaussian(5, 6, rng);
  const std::vector<int> labels{0, 1, 0, 1, 0, 1};
  Eigen::MatrixXd xp = x;
  xp.col(0).swap(xp.col(4));
  auto a = build_dictionary(x, labels), b = build_dictionary(xp, labels);
  EXPECT_EQ(a.columns.col(0), b.columns.col(2));
  EXPECT_EQ(a.columns.col(2), b.columns.col(0));
  EXPECT_EQ(a.columns.col(1), b.columns.col(1));
  EXPECT_EQ(a.columns.rightCols(3), b.columns.rightCols(3));
}

TEST(BuildDictionary, DegenerateSampleNamesIndex) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 4);
  x.col(2).setZero();
  try {
    build_dictionary(x, {0, 0, 1, 1});
    FAIL();
  } catch (const DegenerateSample& e) {
    EXPECT_EQ(e.index(), 2u);
  }
  EXPECT_THROW(build_dictionary(x, {0, 1}), InvalidShape);
}

TEST(FistaLasso, OrthonormalMatchesSoftThreshold) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d0 = 10 + trial, n = 4 + trial / 2;
    Dictionary d;
    d.columns = orthonormal(d0, n, rng);
    d.labels.assign(static_cast<std::size_t>(n), 0);
    d.lipschitz = lipschitz_constant(d.columns);
    const Eigen::VectorXd x = gaussian(d0, rng);
    const double lambda = 0.05 + 0.05 * trial;
    auto sol = fista_lasso(d, x, lambda);
    const Eigen::VectorXd dtx = d.columns.transpose() * x;
    for (Eigen::Index i = 0; i < n; ++i) EXPECT_NEAR(sol.alpha(i), oracle::soft_threshold(dtx(i), lambda), 1e-8);
  }
}

TEST(FistaLasso, KktOnRandomDenseInstances) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d0 = 20 + rng.below(20), n = 30 + rng.below(40);
    Eigen::MatrixXd raw = gaussian(d0, n, rng);
    auto d = build_dictionary(raw, std::vector<int>(static_cast<std::size_t>(n), 0));
    const Eigen::VectorXd x = gaussian(d0, rng);
    const double lambda = rng.uniform(0.01, 0.5);
    auto sol = fista_lasso(d, x, lambda);
    EXPECT_LE(oracle::lasso_kkt_residual(d.columns, x, sol.alpha, lambda), 1e-6) << "trial " << trial;
  }
}

TEST(FistaLasso, ObjectiveNeverIncreases) {
  Rng rng(4);
  auto d = build_dictionary(gaussian(15, 40, rng), std::vector<int>(40, 0));
  auto sol = fista_lasso(d, gaussian(15, rng), 0.05);
  ASSERT_EQ(sol.objective_trace.size(), static_cast<std::size_t>(sol.iterations_used) + 1);
  for (std::size_t i = 1; i < sol.objective_trace.size(); ++i)
    EXPECT_LE(sol.objective_trace[i], sol.objective_trace[i - 1]);
  EXPECT_EQ(sol.final_objective, sol.objective_trace.back());
}

TEST(FistaLasso, NoWorseThanLongerIsta) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto d = build_dictionary(gaussian(25, 40, rng), std::vector<int>(40, 0));
    const Eigen::VectorXd x = gaussian(25, rng);
    const double lambda = rng.uniform(0.05, 0.3);
    LassoOptions opt;
    const auto sol = fista_lasso(d, x, lambda, opt);
    const Eigen::VectorXd ref = oracle::ista(d.columns, x, lambda, d.lipschitz, 10 * sol.iterations_used);
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(40, lambda);
    const double f_ref = lasso_objective(d.columns, x, w, ref);
    EXPECT_LE(sol.final_objective, f_ref + opt.tol * std::abs(f_ref)) << "trial " << trial;
  }
}

TEST(FistaLasso, LargeLambdaGivesExactZero) {
  Rng rng(5);
  auto d = build_dictionary(gaussian(12, 20, rng), std::vector<int>(20, 0));
  const Eigen::VectorXd x = gaussian(12, rng);
  const double bound = (d.columns.transpose() * x).cwiseAbs().maxCoeff();
  for (double lambda : {bound, 2 * bound}) {
    auto sol = fista_lasso(d, x, lambda);
    for (Eigen::Index i = 0; i < sol.alpha.size(); ++i) EXPECT_EQ(sol.alpha(i), 0.0);
  }
}

TEST(FistaLasso, DictionaryColumnConcentrates) {
  Rng rng(6);
  auto d = build_dictionary(gaussian(30, 25, rng), std::vector<int>(25, 0));
  for (Eigen::Index j : {0, 7, 24}) {
    auto sol = fista_lasso(d, d.columns.col(j), 0.01, {20000, 1e-12});
    EXPECT_GT(std::abs(sol.alpha(j)), 0.9 * sol.alpha.lpNorm<1>());
  }
}

TEST(FistaLasso, RejectsBadInput) {
  Rng rng(7);
  auto d = build_dictionary(gaussian(4, 3, rng), {0, 1, 2});
  Eigen::VectorXd x = gaussian(4, rng);
  EXPECT_THROW(fista_lasso(d, x, 0.0), InvalidHyperparameter);
  EXPECT_THROW(fista_lasso(d, gaussian(5, rng), 0.1), InvalidShape);
  x(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fista_lasso(d, x, 0.1), InvalidInput);
  x(1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fista_lasso(d, x, 0.1), InvalidInput);
}

TEST(SrcClassify, SupportOnOneBlock) {
  Rng rng(8);
  auto d = build_dictionary(gaussian(6, 6, rng), {0, 0, 1, 1, 2, 2});
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(6);
  alpha(4) = 0.7;
  alpha(5) = -1.2;
  const Eigen::VectorXd x = d.columns * alpha;
  auto r = class_residuals(d.columns, d.labels, x, alpha);
  EXPECT_EQ(r.argmin(), 2);
  EXPECT_EQ(r.residuals[2], 0.0);
}

TEST(SrcClassify, ZeroCodeTiesToSmallestClass) {
  Rng rng(9);
  auto d = build_dictionary(gaussian(5, 6, rng), {3, 3, 1, 1, 2, 2});
  const Eigen::VectorXd x = gaussian(5, rng);
  auto r = class_residuals(d.columns, d.labels, x, Eigen::VectorXd::Zero(6));
  for (double v : r.residuals) EXPECT_EQ(v, x.squaredNorm());
  EXPECT_EQ(src_classify(d, x, Eigen::VectorXd::Zero(6)), 1);
}

TEST(SrcClassify, MatchesEnumerationOracle) {
  Rng rng(10);
  auto d = build_dictionary(gaussian(8, 12, rng), {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2});
  for (int q = 0; q < 100; ++q) {
    const Eigen::VectorXd x = gaussian(8, rng), alpha = gaussian(12, rng);
    EXPECT_EQ(src_classify(d, x, alpha), oracle::enumerate_min_residual(d.columns, d.labels, x, alpha, 3));
  }
}

TEST(SrcClassify, SeparatedSupportsMatchPerClassLeastSquares) {
  // d0 = 4 would let three 2-dim class spans overlap; separate them by
  // construction: each class lives in its own coordinate pair.
  Rng rng(11);
  const int K = 3;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 6);
  for (int k = 0; k < K; ++k) x.block(2 * k, 2 * k, 2, 2) = gaussian(2, 2, rng);
  auto d = build_dictionary(x, {0, 0, 1, 1, 2, 2});
  int agree = 0;
  for (int q = 0; q < 100; ++q) {
    const int k = static_cast<int>(rng.below(K));
    Eigen::VectorXd query = 0.05 * gaussian(6, rng);
    query.segment(2 * k, 2) += gaussian(2, rng);
    const auto sol = fista_lasso(d, query, 1e-3, {20000, 1e-14});
    agree += src_classify(d, query, sol.alpha) == oracle::per_class_least_squares(d.columns, d.labels, query, K);
  }
  EXPECT_EQ(agree, 100);
}

TEST(SrcClassify, ClassRestrictionsPartitionTheCode) {
  Rng rng(12);
  auto d = build_dictionary(gaussian(5, 7, rng), {0, 0, 1, 1, 1, 2, 2});
  const Eigen::VectorXd alpha = gaussian(7, rng);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(7);
  std::size_t start = 0;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd dk = Eigen::VectorXd::Zero(7);
    for (std::size_t j = start; j < 7 && d.labels[j] == k; ++j, ++start) dk(j) = alpha(j);
    sum += dk;
  }
  EXPECT_EQ(sum, alpha);
}

TEST(SrcClassify, NormalizationEquivalentToPerColumnLambda) {
  // Coding against unnormalized columns with lambda_j = lambda * norm_j and
  // rescaling the solution gives the same codes as the normalized dictionary.
  Rng rng(13);
  Eigen::MatrixXd raw = gaussian(10, 9, rng);
  for (Eigen::Index j = 0; j < 9; ++j) raw.col(j) *= 0.5 + j;
  const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2, 2};
  auto d = build_dictionary(raw, labels);
  Eigen::VectorXd w(9);
  for (Eigen::Index j = 0; j < 9; ++j) w(j) = 0.05 * d.column_norms[static_cast<std::size_t>(j)];
  for (int q = 0; q < 20; ++q) {
    const Eigen::VectorXd x = gaussian(10, rng);
    const auto a = fista_lasso(d, x, 0.05, {50000, 1e-15});
    const auto b = fista_lasso(raw, x, w, lipschitz_constant(raw), {200000, 1e-15});
    Eigen::VectorXd b_scaled(9);
    for (Eigen::Index j = 0; j < 9; ++j) b_scaled(j) = b.alpha(j) * d.column_norms[static_cast<std::size_t>(j)];
    EXPECT_LE((a.alpha - b_scaled).norm(), 1e-5);
    EXPECT_EQ(src_classify(d, x, a.alpha), src_classify(d, x, b_scaled));
  }
}

TEST(SrcPipeline, SelfCodingIsPerfect) {
  Rng rng(14);
  auto x = gaussian(20, 15, rng);
  std::vector<int> labels;
  for (int i = 0; i < 15; ++i) labels.push_back(i % 3);
  auto pred = src_pipeline(x, labels, x, 0.01);
  EXPECT_EQ(pred, labels);
}

TEST(SrcPipeline, SubspacesAgreeWithNearestSubspace) {
  Rng rng(15);
  const int K = 4;
  std::vector<Eigen::MatrixXd> bases;
  for (int k = 0; k < K; ++k) bases.push_back(orthonormal(30, 3, rng));
  Eigen::MatrixXd train(30, K * 15), test(30, K * 5);
  std::vector<int> train_labels, test_labels;
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < 15; ++i) {
      train.col(k * 15 + i) = bases[k] * gaussian(3, rng) + 0.01 * gaussian(30, rng);
      train_labels.push_back(k);
    }
    for (int i = 0; i < 5; ++i) {
      test.col(k * 5 + i) = bases[k] * gaussian(3, rng) + 0.01 * gaussian(30, rng);
      test_labels.push_back(k);
    }
  }
  auto pred = src_pipeline(train, train_labels, test, 0.01);
  int correct = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    correct += pred[j] == test_labels[j];
    EXPECT_EQ(pred[j], oracle::nearest_subspace(bases, test.col(static_cast<Eigen::Index>(j))));
  }
  EXPECT_GE(correct, 19);
}

TEST(SrcPipeline, EmptyTestSetAndErrorIndex) {
  Rng rng(16);
  auto train = gaussian(4, 4, rng);
  EXPECT_TRUE(src_pipeline(train, {0, 0, 1, 1}, Eigen::MatrixXd(4, 0), 0.1).empty());
  Eigen::MatrixXd test = gaussian(4, 3, rng);
  test(2, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    src_pipeline(train, {0, 0, 1, 1}, test, 0.1);
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("test sample 1"), std::string::npos) << e.what();
  }
}
