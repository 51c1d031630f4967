#include "test_util.hpp"

#include <algorithm>
#include <set>

using namespace bbdrec;

TEST(Activations, DerivativesMatchCentralDifferences) {
  for (double x : {-4.0, -1.3, -0.2, 0.0, 0.4, 1.7, 5.0}) {
    const double h = 1e-6;
    EXPECT_NEAR(nn::silu_grad(x), (nn::silu(x + h) - nn::silu(x - h)) / (2 * h), 1e-8) << x;
    EXPECT_NEAR(nn::gelu_grad(x), (nn::gelu(x + h) - nn::gelu(x - h)) / (2 * h), 1e-8) << x;
  }
  Eigen::ArrayXd a(4);
  a << -2, -0.5, 0.5, 3;
  const Eigen::ArrayXd s = nn::silu_array(a);
  for (Index i = 0; i < a.size(); ++i) EXPECT_NEAR(s[i], nn::silu(a[i]), 1e-15);
}

TEST(LayerNorm, NormalizesRowsAndBackpropagates) {
  Matrix<double> x(2, 5);
  x << 1, 2, 3, 4, 5, -1, 0.5, 2, 0, 7;
  RowVector<double> g(5), b(5);
  g << 1, 2, 0.5, 1, 1.5;
  b << 0, 0.1, -0.1, 0.2, 0;
  nn::LayerNormCache<double> cache;
  const Matrix<double> y = nn::layer_norm<double>(x, RowVector<double>::Ones(5), RowVector<double>::Zero(5), &cache);
  for (Index r = 0; r < 2; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 5.0, 1.0, 1e-4);
  }
  // loss = sum(W .* layer_norm(x))
  Matrix<double> W(2, 5);
  W << 0.3, -1, 2, 0.1, 0.7, 1, 1, -2, 0.5, 0.2;
  auto loss = [&](const Matrix<double>& in) {
    return (W.array() * nn::layer_norm<double>(in, g, b, nullptr).array()).sum();
  };
  nn::layer_norm<double>(x, g, b, &cache);
  RowVector<double> dg = RowVector<double>::Zero(5), db = RowVector<double>::Zero(5);
  const Matrix<double> dx = nn::layer_norm_backward<double>(W, cache, g, dg, db);
  const double h = 1e-6;
  for (Index i = 0; i < x.size(); ++i) {
    Matrix<double> up = x, down = x;
    up.data()[i] += h;
    down.data()[i] -= h;
    EXPECT_NEAR(dx.data()[i], (loss(up) - loss(down)) / (2 * h), 1e-6);
  }
}

TEST(StepEmbedding, InjectiveOverTenThousandSteps) {
  for (Index dim : {8, 64, 65}) {
    std::vector<std::vector<double>> rows;
    for (int t = 1; t <= 10000; ++t) {
      const auto e = nn::step_embedding<double>(t, dim);
      rows.emplace_back(e.data(), e.data() + dim);
    }
    std::sort(rows.begin(), rows.end());
    EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end()) << dim;
  }
}

TEST(Dropout, MaskIsInvertedAndUnbiased) {
  Rng rng(3);
  Matrix<double> mask(400, 250);
  nn::dropout_mask<double>(mask, 0.25, rng);
  std::set<double> values(mask.data(), mask.data() + mask.size());
  EXPECT_LE(values.size(), 2u);
  EXPECT_TRUE(values.count(0.0));
  EXPECT_NEAR(mask.mean(), 1.0, 0.01);
  nn::dropout_mask<double>(mask, 0.0, rng);
  EXPECT_EQ(mask.minCoeff(), 1.0);
  EXPECT_EQ(mask.maxCoeff(), 1.0);
}

TEST(Params, LayoutBlocksAreContiguous) {
  ParamLayout layout;
  const auto a = layout.add("a", 2, 3);
  const auto b = layout.add("b", 1, 4);
  EXPECT_EQ(a.offset, 0);
  EXPECT_EQ(b.offset, 6);
  EXPECT_EQ(layout.total(), 10);
  EXPECT_EQ(layout.find("b").offset, 6);
  EXPECT_THROW(layout.add("a", 1, 1), std::logic_error);
  EXPECT_THROW(layout.find("c"), std::out_of_range);
  Vector<double> flat = Vector<double>::LinSpaced(10, 0, 9);
  EXPECT_EQ(view(flat, a)(1, 2), 5.0);
  EXPECT_EQ(row_view(flat, b)[3], 9.0);
}

TEST(Optimizer, AdamWFirstStepMovesByLearningRate) {
  AdamW<double> opt(3, {0.1, 0.0});
  Vector<double> p = bbdrec::testing::vec({1, 1, 1});
  opt.step(p, bbdrec::testing::vec({2, -3, 0}));
  EXPECT_NEAR(p[0], 0.9, 1e-8);
  EXPECT_NEAR(p[1], 1.1, 1e-8);
  EXPECT_EQ(p[2], 1.0);
  EXPECT_EQ(opt.steps(), 1u);
  EXPECT_THROW(opt.step(p, bbdrec::testing::vec({1})), std::invalid_argument);
}
