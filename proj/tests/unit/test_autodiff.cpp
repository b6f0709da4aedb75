#include <gtest/gtest.h>

#include <cmath>

#include "dsrc/autodiff.hpp"
#include "oracles.hpp"

using dsrc::Graph;
using dsrc::Parameter;
using dsrc::Shape;
using dsrc::Tensor;
using dsrc::Var;
namespace ad = dsrc::ad;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Conv2d, AllOnesInteriorValue) {
  Graph<double> g;
  Parameter<double> k("k", Tensor<double>(Shape{10, 1, 5, 5}, 1.0));
  auto y = ad::conv2d(g.input(Tensor<double>(Shape{1, 1, 32, 32}, 1.0)), g.param(k), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 10, 15, 15}));
  EXPECT_DOUBLE_EQ(y.value().at(0, 3, 7, 7), 25.0);
  // Top-left window overlaps one row and one column of padding.
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 0), 16.0);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  dsrc::Rng rng(1);
  auto x = oracle::random_tensor(Shape{2, 3, 8, 8}, rng);
  auto w = oracle::random_tensor(Shape{20, 3, 3, 3}, rng);
  Graph<double> g;
  auto y = ad::conv2d(g.input(x), g.input(w), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 20, 4, 4}));
  EXPECT_LE(max_abs_diff(y.value(), oracle::conv2d(x, w, 2, 1)), 1e-12);
}

TEST(Conv2d, RandomGeometriesMatchOracle) {
  dsrc::Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(4), stride = 1 + rng.below(3), pad = rng.below(3);
    const std::size_t h = k + rng.below(8), w = k + rng.below(8);
    const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(3), co = 1 + rng.below(4);
    auto x = oracle::random_tensor(Shape{n, c, h, w}, rng);
    auto ker = oracle::random_tensor(Shape{co, c, k, k}, rng);
    Graph<double> g;
    auto y = ad::conv2d(g.input(x), g.input(ker), stride, pad);
    auto ref = oracle::conv2d(x, ker, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LE(max_abs_diff(y.value(), ref), 1e-12);

    // The transposed op must land back on (h, w) and match the scatter form.
    Graph<double> g2;
    auto dy = oracle::random_tensor(ref.shape(), rng);
    auto t = ad::transposed_conv2d(g2.input(dy), g2.input(ker), stride, pad, h, w);
    EXPECT_LE(max_abs_diff(t.value(), oracle::transposed_conv2d(dy, ker, stride, pad, h, w)), 1e-12);
  }
}

TEST(Conv2d, ChannelMismatchIsInvalidShape) {
  Graph<double> g;
  auto x = g.input(Tensor<double>(Shape{1, 2, 6, 6}));
  auto k = g.input(Tensor<double>(Shape{4, 3, 3, 3}));
  EXPECT_THROW(ad::conv2d(x, k, 1, 0), dsrc::InvalidShape);
}

TEST(TransposedConv2d, AdjointOfConv) {
  dsrc::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.below(5), stride = 1 + rng.below(3), pad = rng.below(2);
    const std::size_t h = k + rng.below(10), w = k + rng.below(10);
    auto x = oracle::random_tensor(Shape{2, 3, h, w}, rng);
    auto ker = oracle::random_tensor(Shape{4, 3, k, k}, rng);
    Graph<double> g;
    auto cx = ad::conv2d(g.input(x), g.input(ker), stride, pad);
    auto y = oracle::random_tensor(cx.shape(), rng);
    auto ty = ad::transposed_conv2d(g.input(y), g.input(ker), stride, pad, h, w);
    const double lhs = dsrc::dot(cx.value(), y);
    const double rhs = dsrc::dot(x, ty.value());
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(TransposedConv2d, TargetShapeAndFeasibility) {
  Graph<double> g;
  auto y = g.input(Tensor<double>(Shape{1, 30, 4, 4}, 1.0));
  auto k = g.input(Tensor<double>(Shape{30, 30, 3, 3}, 0.1));
  EXPECT_EQ(ad::transposed_conv2d(y, k, 1, 0, 6, 6).shape(), (Shape{1, 30, 6, 6}));
  try {
    ad::transposed_conv2d(g.input(Tensor<double>(Shape{1, 30, 6, 6})), k, 2, 1, 15, 15);
    FAIL() << "expected InvalidShape";
  } catch (const dsrc::InvalidShape& e) {
    EXPECT_NE(std::string(e.what()).find("[11, 12]"), std::string::npos) << e.what();
  }
}

TEST(Relu, ValuesAndGradient) {
  Graph<double> g;
  Parameter<double> x("x", Tensor<double>::from(Shape{3}, {-1, 0, 2}));
  auto xv = g.param(x);
  auto r = ad::relu(xv);
  EXPECT_EQ(r.value().storage(), (std::vector<double>{0, 0, 2}));
  g.backward(ad::frobenius_sq(r));
  EXPECT_EQ(x.grad.storage(), (std::vector<double>{0, 0, 4}));
}

TEST(Relu, AllNegativeGivesZeroGradient) {
  Graph<double> g;
  Parameter<double> x("x", Tensor<double>(Shape{4}, -0.5));
  auto r = ad::relu(g.param(x));
  for (double v : r.value().data()) EXPECT_EQ(v, 0.0);
  g.backward(ad::frobenius_sq(r));
  for (double v : x.grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Relu, FiniteDifferences) {
  dsrc::Rng rng(4);
  Parameter<double> x("x", oracle::random_tensor(Shape{5, 7}, rng));
  for (auto& v : x.value.data())
    if (std::abs(v) < 1e-3) v = 0.5;
  auto c = oracle::random_tensor(Shape{5, 7}, rng);
  const double err = oracle::gradient_check({&x}, [&](Graph<double>& g) {
    return ad::frobenius_sq(ad::relu(g.param(x)) - g.input(c));
  });
  EXPECT_LE(err, 1e-6);
}

TEST(Matmul, IdentityAndHandCase) {
  Graph<double> g;
  auto a = Tensor<double>::from(Shape{2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<double>::from(Shape{2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(ad::matmul(g.input(a), g.input(eye)).value(), a);
  auto b = Tensor<double>::from(Shape{2, 1}, {5, 6});
  EXPECT_EQ(ad::matmul(g.input(a), g.input(b)).value().storage(), (std::vector<double>{17, 39}));
  EXPECT_THROW(ad::matmul(g.input(b), g.input(b)), dsrc::InvalidShape);
}

TEST(Matmul, FiniteDifferencesBothOperands) {
  dsrc::Rng rng(5);
  Parameter<double> a("a", oracle::random_tensor(Shape{4, 3}, rng));
  Parameter<double> b("b", oracle::random_tensor(Shape{3, 5}, rng));
  auto c = oracle::random_tensor(Shape{4, 5}, rng);
  const double err = oracle::gradient_check({&a, &b}, [&](Graph<double>& g) {
    return ad::frobenius_sq(ad::matmul(g.param(a), g.param(b)) - g.input(c));
  });
  EXPECT_LE(err, 1e-6);
}

TEST(FrobeniusSq, ValuesAndGradient) {
  Graph<double> g;
  EXPECT_EQ(ad::frobenius_sq(g.input(Tensor<double>(Shape{3}))).value().item(), 0.0);
  EXPECT_EQ(ad::frobenius_sq(g.input(Tensor<double>::from(Shape{3}, {0, 1, 0}))).value().item(), 1.0);
  dsrc::Rng rng(6);
  Parameter<double> x("x", oracle::random_tensor(Shape{6}, rng));
  EXPECT_LE(oracle::gradient_check({&x}, [&](Graph<double>& g) { return ad::frobenius_sq(g.param(x)); }), 1e-8);
}

TEST(LpPenalty, Values) {
  Graph<double> g;
  auto x = g.input(Tensor<double>::from(Shape{2}, {3, -4}));
  EXPECT_DOUBLE_EQ(ad::lp_penalty(x, 1.0).value().item(), 7.0);
  EXPECT_DOUBLE_EQ(ad::lp_penalty(x, 2.0).value().item(), 25.0);
  EXPECT_NEAR(ad::lp_penalty(x, 0.5).value().item(), std::sqrt(3.0) + 2.0, 1e-14);
  EXPECT_THROW(ad::lp_penalty(x, 0.0), dsrc::InvalidHyperparameter);
  EXPECT_THROW(ad::lp_penalty(x, -1.0), dsrc::InvalidHyperparameter);
}

TEST(LpPenalty, SubgradientAtZeroIsZero) {
  for (double p : {0.5, 1.0, 1.5, 2.0}) {
    Graph<double> g;
    Parameter<double> x("x", Tensor<double>(Shape{3}));
    g.backward(ad::lp_penalty(g.param(x), p));
    for (double v : x.grad.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(LpPenalty, HalfNormGradientIsClampedNearZero) {
  Graph<double> g;
  Parameter<double> x("x", Tensor<double>::from(Shape{3}, {1e-12, -1e-14, 1e-300}));
  g.backward(ad::lp_penalty(g.param(x), 0.5));
  for (double v : x.grad.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(x.grad[0], 0.5e6, 1e-6);  // 0.5 * (1e-12)^-0.5, under the cap
  EXPECT_EQ(x.grad[1], -ad::kDefaultLpClamp);
  EXPECT_EQ(x.grad[2], ad::kDefaultLpClamp);
}

TEST(LpPenalty, FiniteDifferencesAwayFromZero) {
  dsrc::Rng rng(7);
  for (double p : {0.5, 1.0, 1.5, 2.0}) {
    Parameter<double> x("x", oracle::random_tensor(Shape{4, 3}, rng));
    for (auto& v : x.value.data())
      if (std::abs(v) < 0.05) v = 0.3;
    const double err =
        oracle::gradient_check({&x}, [&](Graph<double>& g) { return ad::lp_penalty(g.param(x), p); });
    EXPECT_LE(err, 1e-6) << "p=" << p;
  }
}

TEST(ConvGradients, FiniteDifferences) {
  dsrc::Rng rng(8);
  Parameter<double> x("x", oracle::random_tensor(Shape{2, 2, 7, 7}, rng));
  Parameter<double> k1("k1", oracle::random_tensor(Shape{3, 2, 3, 3}, rng));
  Parameter<double> k2("k2", oracle::random_tensor(Shape{3, 2, 3, 3}, rng));
  auto target = oracle::random_tensor(Shape{2, 2, 7, 7}, rng);
  const double err = oracle::gradient_check({&x, &k1, &k2}, [&](Graph<double>& g) {
    auto h = ad::conv2d(g.param(x), g.param(k1), 2, 1);
    auto back = ad::transposed_conv2d(h, g.param(k2), 2, 1, 7, 7);
    return ad::frobenius_sq(back - g.input(target));
  });
  EXPECT_LE(err, 1e-5);
}

TEST(ColumnOps, FiniteDifferences) {
  dsrc::Rng rng(9);
  Parameter<double> x("x", oracle::random_tensor(Shape{5, 2, 2, 2}, rng));
  Parameter<double> a("a", oracle::random_tensor(Shape{3, 2}, rng));
  const double err = oracle::gradient_check({&x, &a}, [&](Graph<double>& g) {
    auto z = ad::to_columns(g.param(x));
    auto zt = ad::slice_cols(z, 0, 3);
    auto zhat = ad::concat_cols(zt, ad::matmul(zt, g.param(a)));
    auto back = ad::from_columns(zhat, Shape{2, 2, 2});
    return ad::frobenius_sq(back) + 0.5 * ad::frobenius_sq(z - zhat);
  });
  EXPECT_LE(err, 1e-6);
}

TEST(Backward, AnalyticTwoW) {
  Graph<double> g;
  Parameter<double> w("w", Tensor<double>::from(Shape{2}, {1, 2}));
  g.backward(ad::frobenius_sq(g.param(w)));
  EXPECT_EQ(w.grad.storage(), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarAndStaleGraph) {
  Parameter<double> w("w", Tensor<double>::from(Shape{2}, {1, 2}));
  {
    Graph<double> g;
    auto v = g.param(w);
    EXPECT_THROW(g.backward(v), dsrc::GraphError);
  }
  Graph<double> g;
  auto loss = ad::frobenius_sq(g.param(w));
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), dsrc::GraphError);
  EXPECT_THROW(g.input(Tensor<double>(Shape{1})), dsrc::GraphError);
}

TEST(Backward, VisitsOperationsInReverseOrder) {
  Graph<double> g;
  Parameter<double> w("w", Tensor<double>::from(Shape{2, 2}, {1, -2, 3, 4}));
  auto a = g.param(w);
  auto b = ad::relu(a);
  auto c = ad::scale(b, 3.0);
  auto d = ad::frobenius_sq(c);
  g.backward(d);
  EXPECT_EQ(g.visit_order(), (std::vector<std::size_t>{d.id, c.id, b.id}));
}

TEST(Backward, DeterministicAcrossIndependentForwards) {
  dsrc::Rng rng(10);
  auto x = oracle::random_tensor(Shape{2, 1, 6, 6}, rng);
  Parameter<double> k("k", oracle::random_tensor(Shape{3, 1, 3, 3}, rng));
  std::vector<double> first;
  for (int rep = 0; rep < 2; ++rep) {
    k.zero_grad();
    Graph<double> g;
    g.backward(ad::frobenius_sq(ad::relu(ad::conv2d(g.input(x), g.param(k), 1, 0))));
    if (rep == 0)
      first = k.grad.storage();
    else
      EXPECT_EQ(first, k.grad.storage());
  }
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  Parameter<double> w("w", Tensor<double>::from(Shape{2}, {1, 2}));
  for (int i = 0; i < 2; ++i) {
    Graph<double> g;
    g.backward(ad::frobenius_sq(g.param(w)));
  }
  EXPECT_EQ(w.grad.storage(), (std::vector<double>{4, 8}));
}

TEST(Parallel, ChunkedKernelsAgreeWithSerial) {
  dsrc::Rng rng(12);
  auto x = oracle::random_tensor(Shape{7, 2, 9, 9}, rng);
  auto ker = oracle::random_tensor(Shape{4, 2, 3, 3}, rng);
  Graph<double> g1(1), g4(4);
  auto y1 = ad::conv2d(g1.input(x), g1.input(ker), 2, 1);
  auto y4 = ad::conv2d(g4.input(x), g4.input(ker), 2, 1);
  EXPECT_LE(max_abs_diff(y1.value(), y4.value()), 1e-12);
}

TEST(SinglePrecision, ConvRuns) {
  Graph<float> g;
  Parameter<float> k("k", Tensor<float>(Shape{2, 1, 3, 3}, 1.0f));
  auto y = ad::conv2d(g.input(Tensor<float>(Shape{1, 1, 5, 5}, 1.0f)), g.param(k), 1, 0);
  EXPECT_FLOAT_EQ(y.value().at(0, 1, 1, 1), 9.0f);
  g.backward(ad::frobenius_sq(y));
  EXPECT_FLOAT_EQ(k.grad[0], 2.0f * 9.0f * 9.0f);
}
