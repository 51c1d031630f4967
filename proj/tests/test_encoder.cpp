#include "test_util.hpp"

using namespace bbdrec;
using bbdrec::testing::tiny_shape;
using Enc = SeqEncoder<double>;

namespace {

Model make_model(EncoderMode mode = EncoderMode::transformer, Index L = 3, double dropout = 0.0) {
  auto shape = tiny_shape(mode);
  shape.max_len = L;
  shape.dropout = dropout;
  Model m(shape);
  m.init(42);
  return m;
}

Matrix<double> encode_one(const Model& m, std::vector<ItemId> h) {
  HistoryBatch b(static_cast<Index>(h.size()));
  b.push(h);
  return m.encode(b);
}

}  // namespace

TEST(EmbedItem, LooksUpRows) {
  Matrix<double> table(4, 2);
  table << 0, 0, 1, 2, 3, 4, 5, 6;
  const ConstMatrixMap<double> map(table.data(), 4, 2);
  EXPECT_EQ(embed_item<double>(map, 2), (RowVector<double>(2) << 3, 4).finished());
  EXPECT_THROW(embed_item<double>(map, 0), std::out_of_range);
  EXPECT_THROW(embed_item<double>(map, 4), std::out_of_range);
  EXPECT_THROW(embed_item<double>(map, -1), std::out_of_range);
}

TEST(MeanPool, AveragesNonPaddingEmbeddings) {
  Model m = make_model(EncoderMode::mean_pool);
  auto& p = m.params();
  auto table = view(p, m.item_block());
  table.row(1) << 1, 0, 0, 0;
  table.row(2) << 0, 1, 0, 0;
  const Matrix<double> out = encode_one(m, {0, 1, 2});
  EXPECT_NEAR(out(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.5, 1e-15);
  EXPECT_NEAR(out(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(out(0, 3), 0.0, 1e-15);
}

TEST(Encoder, OutputShape) {
  Model m = make_model();
  HistoryBatch b(3);
  const ItemId h0[] = {0, 0, 1};
  const ItemId h1[] = {2, 3, 4};
  b.push(h0);
  b.push(h1);
  const Matrix<double> out = m.encode(b);
  EXPECT_EQ(out.rows(), 2);
  EXPECT_EQ(out.cols(), 4);
  EXPECT_TRUE(out.allFinite());
}

TEST(Encoder, PrefixStatesIgnoreLaterItems) {
  for (auto mode : {EncoderMode::transformer, EncoderMode::mean_pool}) {
    Model m = make_model(mode, 5);
    const std::vector<ItemId> full{0, 0, 4, 1, 6};
    const Matrix<double> states = m.encoder().encode_states(m.params(), full);
    ASSERT_EQ(states.rows(), 3);
    // row 1 of the full history equals the representation of the prefix [4, 1]
    const Matrix<double> prefix = encode_one(m, {0, 0, 0, 4, 1});
    EXPECT_NEAR((states.row(1) - prefix.row(0)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
    const Matrix<double> last = encode_one(m, full);
    EXPECT_NEAR((states.row(2) - last.row(0)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
}

TEST(Encoder, PaddingDoesNotChangeRepresentation) {
  Model m = make_model(EncoderMode::transformer, 6);
  const Matrix<double> a = encode_one(m, {0, 0, 0, 3, 5, 2});
  const Matrix<double> b = encode_one(m, {3, 5, 2});
  EXPECT_NEAR((a - b).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Encoder, RejectsBadInput) {
  Model m = make_model();
  EXPECT_THROW(encode_one(m, {0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(encode_one(m, {0, 1, 7}), std::out_of_range);
  EXPECT_THROW(encode_one(m, {1, 2, 3, 4}), std::invalid_argument);
  HistoryBatch b(3);
  const ItemId two[] = {1, 2};
  EXPECT_THROW(b.push(two), std::invalid_argument);
  EXPECT_THROW(parse_encoder_mode("lstm"), std::invalid_argument);
}

TEST(Encoder, EvaluationIsDeterministicWithDropout) {
  Model m = make_model(EncoderMode::transformer, 3, 0.5);
  const Matrix<double> a = encode_one(m, {1, 2, 3});
  const Matrix<double> b = encode_one(m, {1, 2, 3});
  EXPECT_EQ(a, b);
  HistoryBatch batch(3);
  const ItemId h[] = {1, 2, 3};
  batch.push(h);
  const std::uint64_t s1[] = {1}, s2[] = {2};
  const auto t1 = m.encoder().forward(m.params(), batch, Enc::Readout::last, s1);
  const auto t1b = m.encoder().forward(m.params(), batch, Enc::Readout::last, s1);
  const auto t2 = m.encoder().forward(m.params(), batch, Enc::Readout::last, s2);
  EXPECT_EQ(t1, t1b);
  EXPECT_NE(t1, t2);
}

TEST(Encoder, BackwardMatchesFiniteDifferences) {
  for (auto mode : {EncoderMode::transformer, EncoderMode::mean_pool}) {
    for (auto readout : {Enc::Readout::last, Enc::Readout::all}) {
      Model m = make_model(mode);
      HistoryBatch batch(3);
      const ItemId h0[] = {0, 2, 5};
      const ItemId h1[] = {1, 3, 3};
      batch.push(h0);
      batch.push(h1);
      Enc::Cache cache;
      const Matrix<double> out = m.encoder().forward(m.params(), batch, readout, {}, &cache);
      Matrix<double> W(out.rows(), out.cols());
      Rng rng(9);
      fill_normal<double>(W, rng);
      Vector<double> grad = Vector<double>::Zero(m.layout().total());
      m.encoder().backward(m.params(), cache, W, grad);
      auto& p = m.params();
      double worst = 0.0;
      for (Index i = 0; i < p.size(); ++i) {
        const double keep = p[i], h = 1e-6;
        p[i] = keep + h;
        const double up = (W.array() * m.encoder().forward(p, batch, readout).array()).sum();
        p[i] = keep - h;
        const double down = (W.array() * m.encoder().forward(p, batch, readout).array()).sum();
        p[i] = keep;
        const double num = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-3}));
      }
      EXPECT_LT(worst, 1e-4);
    }
  }
}
