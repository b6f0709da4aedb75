#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "dsrc/sparse_coding.hpp"
#include "oracles.hpp"

using namespace dsrc;

namespace {

Tensor<double> from_matrix(const Eigen::MatrixXd& m) {
  Tensor<double> t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(r, c) = m(r, c);
  return t;
}

}  // namespace

TEST(SparseCodingApply, ZeroCodesPassTrainingThrough) {
  Rng rng(1);
  auto layer = SparseCodingLayer<double>::structured(4, 3);
  auto z = oracle::random_tensor(Shape{5, 7}, rng);
  Graph<double> g;
  auto out = apply(layer, g.param(layer.coeffs), g.input(z)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.at(r, c), z.at(r, c));
    for (std::size_t c = 4; c < 7; ++c) EXPECT_EQ(out.at(r, c), 0.0);
  }
}

TEST(SparseCodingApply, IdentityCodesCopyTrainingColumns) {
  Rng rng(2);
  auto layer = SparseCodingLayer<double>::structured(3, 3);
  for (std::size_t i = 0; i < 3; ++i) layer.coeffs.value.at(i, i) = 1.0;
  auto z = oracle::random_tensor(Shape{4, 6}, rng);
  Graph<double> g;
  auto out = apply(layer, g.param(layer.coeffs), g.input(z)).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(r, 3 + c), z.at(r, c));
}

TEST(SparseCodingApply, MatchesDenseThetaAndPassesTrainingBitwise) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.below(8), n = 1 + rng.below(6), m = 1 + rng.below(4);
    auto layer = SparseCodingLayer<double>::structured(n, m);
    layer.coeffs.value = oracle::random_tensor(Shape{n, m}, rng);
    auto z = oracle::random_tensor(Shape{d, n + m}, rng);
    Graph<double> g;
    auto out = apply(layer, g.param(layer.coeffs), g.input(z)).value();
    const Eigen::MatrixXd ref = oracle::to_matrix(z) * oracle::dense_theta(oracle::to_matrix(layer.coeffs.value));
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < n + m; ++c) {
        EXPECT_NEAR(out.at(r, c), ref(r, c), 1e-12);
        if (c < n) {
          EXPECT_EQ(out.at(r, c), z.at(r, c));
        }
      }
  }
}

TEST(SparseCodingApply, ColumnCountMismatch) {
  auto layer = SparseCodingLayer<double>::structured(3, 2);
  Graph<double> g;
  EXPECT_THROW(apply(layer, g.param(layer.coeffs), g.input(Tensor<double>(Shape{4, 6}))), InvalidShape);
}

TEST(SparseCodingApply, SelfExpressionGradientMatchesFiniteDifferences) {
  Rng rng(4);
  auto layer = SparseCodingLayer<double>::structured(5, 3);
  layer.coeffs.value = oracle::random_tensor(Shape{5, 3}, rng);
  Parameter<double> z("z", oracle::random_tensor(Shape{6, 8}, rng));
  const double err = oracle::gradient_check({&layer.coeffs, &z}, [&](Graph<double>& g) {
    auto zv = g.param(z);
    return ad::frobenius_sq(zv - apply(layer, g.param(layer.coeffs), zv));
  });
  EXPECT_LE(err, 1e-5);
}

TEST(Regularize, ValuesAndSupportedNorms) {
  auto layer = SparseCodingLayer<double>::structured(2, 1);
  {
    Graph<double> g;
    EXPECT_EQ(regularize(layer, g.param(layer.coeffs), 1.0).value().item(), 0.0);
  }
  layer.coeffs.value = Tensor<double>::from(Shape{2, 1}, {3, -4});
  Graph<double> g;
  auto a = g.param(layer.coeffs);
  EXPECT_DOUBLE_EQ(regularize(layer, a, 1.0).value().item(), 7.0);
  EXPECT_DOUBLE_EQ(regularize(layer, a, 2.0).value().item(), 25.0);
  EXPECT_THROW(regularize(layer, a, 3.0), InvalidHyperparameter);
  EXPECT_THROW(regularize(layer, a, 0.0), InvalidHyperparameter);
}

TEST(Regularize, OnlyCodesReceiveGradient) {
  Rng rng(5);
  auto layer = SparseCodingLayer<double>::structured(3, 2);
  layer.coeffs.value = oracle::random_tensor(Shape{3, 2}, rng);
  Parameter<double> z("z", oracle::random_tensor(Shape{4, 5}, rng));
  Graph<double> g;
  auto zv = g.param(z);
  auto a = g.param(layer.coeffs);
  (void)apply(layer, a, zv);
  g.backward(regularize(layer, a, 1.0));
  for (double v : z.grad.data()) EXPECT_EQ(v, 0.0);
  for (std::size_t i = 0; i < layer.coeffs.value.size(); ++i)
    EXPECT_EQ(layer.coeffs.grad[i], layer.coeffs.value[i] > 0 ? 1.0 : -1.0);
}

TEST(ApplyFull, ZeroAndStructuredSpecialCase) {
  Rng rng(6);
  const std::size_t n = 4, m = 3;
  auto full = SparseCodingLayer<double>::full(n, m);
  auto z = oracle::random_tensor(Shape{5, n + m}, rng);
  {
    Graph<double> g;
    for (double v : apply_full(full, g.param(full.coeffs), g.input(z)).value().data()) EXPECT_EQ(v, 0.0);
  }
  auto structured = SparseCodingLayer<double>::structured(n, m);
  structured.coeffs.value = oracle::random_tensor(Shape{n, m}, rng);
  full.coeffs.value = Tensor<double>(Shape{n + m, n + m});
  const Eigen::MatrixXd theta = oracle::dense_theta(oracle::to_matrix(structured.coeffs.value));
  full.coeffs.value = from_matrix(theta);
  Graph<double> g;
  auto a = apply(structured, g.param(structured.coeffs), g.input(z)).value();
  auto b = apply_full(full, g.param(full.coeffs), g.input(z)).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ApplyFull, ModeMismatchAndProjection) {
  auto structured = SparseCodingLayer<double>::structured(2, 2);
  auto full = SparseCodingLayer<double>::full(2, 2);
  Graph<double> g;
  auto z = g.input(Tensor<double>(Shape{3, 4}, 1.0));
  EXPECT_THROW(apply_full(structured, g.param(structured.coeffs), z), InvalidShape);
  EXPECT_THROW(apply(full, g.param(full.coeffs), z), InvalidShape);
  full.coeffs.value.fill(0.5);
  full.project();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(full.coeffs.value.at(i, j), i == j ? 0.0 : 0.5);
}

TEST(ExtractCodes, ShapeOrderAndValues) {
  Rng rng(7);
  auto layer = SparseCodingLayer<double>::structured(5, 2);
  layer.coeffs.value = oracle::random_tensor(Shape{5, 2}, rng);
  auto codes = extract_codes(layer, {0, 0, 1, 1, 2});
  EXPECT_EQ(codes.n, 5u);
  EXPECT_EQ(codes.m, 2u);
  EXPECT_EQ(codes.train_labels, (std::vector<int>{0, 0, 1, 1, 2}));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(codes.at(i, j), layer.coeffs.value.at(i, j));
  EXPECT_THROW(extract_codes(layer, {0, 1}), InvalidShape);
}

TEST(ExtractCodes, FullModeReadsTestColumnsOverTrainingRows) {
  auto layer = SparseCodingLayer<double>::full(3, 2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) layer.coeffs.value.at(i, j) = 10.0 * i + j;
  auto codes = extract_codes(layer, {0, 1, 1});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(codes.at(i, j), 10.0 * i + 3 + j);
}

TEST(CodesFile, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "dsrc_codes_test";
  std::filesystem::create_directories(dir);
  SparseCodes c{3, 2, {1.5, -2, 0, 1e-300, 3, -0.0}, {0, 1, 1}, {1, 0}};
  save_codes(c, (dir / "codes.bin").string(), (dir / "codes.json").string());
  EXPECT_EQ(std::filesystem::file_size(dir / "codes.bin"), 48u);
  auto back = load_codes((dir / "codes.bin").string(), (dir / "codes.json").string());
  EXPECT_EQ(back, c);
  std::filesystem::resize_file(dir / "codes.bin", 40);
  EXPECT_THROW(load_codes((dir / "codes.bin").string(), (dir / "codes.json").string()), FormatError);
  std::filesystem::remove_all(dir);
}
