#pragma once

#include "bbdrec/nn.hpp"
#include "bbdrec/params.hpp"
#include "bbdrec/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbdrec {

enum class EncoderMode { transformer, mean_pool };

inline const char* to_string(EncoderMode mode) {
  return mode == EncoderMode::transformer ? "transformer" : "mean_pool";
}

inline EncoderMode parse_encoder_mode(const std::string& s) {
  if (s == "transformer") return EncoderMode::transformer;
  if (s == "mean_pool") return EncoderMode::mean_pool;
  throw std::invalid_argument("unknown encoder mode '" + s + "' (expected transformer|mean_pool)");
}

// Fixed-length histories, one row of `len` ids per sequence, left-padded with 0.
struct HistoryBatch {
  Index len = 0;
  std::vector<ItemId> ids;

  HistoryBatch() = default;
  explicit HistoryBatch(Index length) : len(length) {}

  Index size() const { return len == 0 ? 0 : static_cast<Index>(ids.size()) / len; }
  std::span<const ItemId> row(Index b) const {
    return {ids.data() + b * len, static_cast<std::size_t>(len)};
  }
  void push(std::span<const ItemId> history) {
    if (static_cast<Index>(history.size()) != len) {
      throw std::invalid_argument("history length " + std::to_string(history.size()) + " != " +
                                  std::to_string(len));
    }
    ids.insert(ids.end(), history.begin(), history.end());
  }
};

struct EncoderShape {
  Index vocab = 0;    // |V|, not counting the padding row
  Index dim = 64;
  Index max_len = 10;
  Index ffn_dim = 64;
  double dropout = 0.1;
};

/// Returns row `id` of an item table; id 0 (padding) and ids above |V| are rejected.
template <typename Scalar>
RowVector<Scalar> embed_item(const ConstMatrixMap<Scalar>& table, ItemId id) {
  if (id <= kPaddingId || id >= table.rows()) {
    throw std::out_of_range("item id " + std::to_string(id) + " outside [1, " +
                            std::to_string(table.rows() - 1) + "]");
  }
  return table.row(id);
}

/// Single-layer, single-head causal self-attention encoder (pre-norm block,
/// final layer norm), or plain mean pooling of the history embeddings.
///
/// Positions are counted from the first non-padding item, so the state of a
/// prefix does not change when later items are appended. Padding rows are
/// dropped before attention and never receive weight.
template <typename Scalar>
class SeqEncoder {
 public:
  enum class Readout { last, all };

  struct Cache {
    Readout readout = Readout::last;
    std::vector<Index> seq_start, seq_len;
    std::vector<ItemId> row_item;
    std::vector<Index> row_pos;
    std::vector<Index> query_row, query_seq, query_pos;
    Matrix<Scalar> X, Xn, K, V, Q, C, H, U, Pre, A, Z;
    nn::LayerNormCache<Scalar> ln1, ln2, lnf;
    std::vector<Index> attn_offset;
    std::vector<Scalar> attn, attn_mask;
    Matrix<Scalar> ffn_mask;
  };

  SeqEncoder() = default;

  SeqEncoder(ParamLayout& layout, ParamBlock table, EncoderShape shape, EncoderMode mode)
      : table_(std::move(table)), shape_(shape), mode_(mode) {
    if (mode_ != EncoderMode::transformer) return;
    const Index d = shape.dim;
    const Index f = shape.ffn_dim;
    pos_ = layout.add("encoder.pos", shape.max_len, d);
    ln1_g_ = layout.add("encoder.ln1.gain", 1, d);
    ln1_b_ = layout.add("encoder.ln1.bias", 1, d);
    wq_ = layout.add("encoder.attn.wq", d, d);
    bq_ = layout.add("encoder.attn.bq", 1, d);
    wk_ = layout.add("encoder.attn.wk", d, d);
    bk_ = layout.add("encoder.attn.bk", 1, d);
    wv_ = layout.add("encoder.attn.wv", d, d);
    bv_ = layout.add("encoder.attn.bv", 1, d);
    wo_ = layout.add("encoder.attn.wo", d, d);
    bo_ = layout.add("encoder.attn.bo", 1, d);
    ln2_g_ = layout.add("encoder.ln2.gain", 1, d);
    ln2_b_ = layout.add("encoder.ln2.bias", 1, d);
    w1_ = layout.add("encoder.ffn.w1", d, f);
    b1_ = layout.add("encoder.ffn.b1", 1, f);
    w2_ = layout.add("encoder.ffn.w2", f, d);
    b2_ = layout.add("encoder.ffn.b2", 1, d);
    lnf_g_ = layout.add("encoder.lnf.gain", 1, d);
    lnf_b_ = layout.add("encoder.lnf.bias", 1, d);
  }

  EncoderMode mode() const { return mode_; }
  const EncoderShape& shape() const { return shape_; }

  void init(Vector<Scalar>& params, Rng& rng) const {
    if (mode_ != EncoderMode::transformer) return;
    auto glorot = [&](const ParamBlock& b) {
      const double a = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
      std::uniform_real_distribution<double> u(-a, a);
      auto w = view(params, b);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(u(rng));
    };
    auto pos = view(params, pos_);
    fill_normal<Scalar>(pos, rng, 1.0 / std::sqrt(static_cast<double>(shape_.dim)));
    for (const auto* b : {&wq_, &wk_, &wv_, &wo_, &w1_, &w2_}) glorot(*b);
    for (const auto* b : {&bq_, &bk_, &bv_, &bo_, &b1_, &b2_, &ln1_b_, &ln2_b_, &lnf_b_}) {
      view(params, *b).setZero();
    }
    for (const auto* b : {&ln1_g_, &ln2_g_, &lnf_g_}) view(params, *b).setOnes();
  }

  /// Encodes a batch. With Readout::last the result has one row per sequence
  /// (the state at its last item); with Readout::all one row per non-padding
  /// item, sequences concatenated in order. `dropout_seeds` holds one seed per
  /// sequence in training mode and is empty at evaluation time.
  Matrix<Scalar> forward(const Vector<Scalar>& params, const HistoryBatch& batch, Readout readout,
                         std::span<const std::uint64_t> dropout_seeds = {}, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    const bool train = !dropout_seeds.empty();
    if (train && static_cast<Index>(dropout_seeds.size()) != batch.size()) {
      throw std::invalid_argument("encoder: need one dropout seed per sequence");
    }
    gather_rows(batch, readout, c);
    const auto table = view(params, table_);
    const Index d = shape_.dim;
    const Index n_rows = static_cast<Index>(c.row_item.size());
    const Index n_q = static_cast<Index>(c.query_row.size());

    if (mode_ == EncoderMode::mean_pool) {
      Matrix<Scalar> out = Matrix<Scalar>::Zero(n_q, d);
      for (Index q = 0; q < n_q; ++q) {
        const Index start = c.seq_start[c.query_seq[q]];
        const Index count = c.query_pos[q] + 1;
        for (Index r = start; r < start + count; ++r) out.row(q) += table.row(c.row_item[r]);
        out.row(q) /= static_cast<Scalar>(count);
      }
      return out;
    }

    const auto pos = view(params, pos_);
    c.X.resize(n_rows, d);
    for (Index r = 0; r < n_rows; ++r) c.X.row(r) = table.row(c.row_item[r]) + pos.row(c.row_pos[r]);

    c.Xn = nn::layer_norm<Scalar>(c.X, row_view(params, ln1_g_), row_view(params, ln1_b_), &c.ln1);
    c.K = (c.Xn * view(params, wk_)).rowwise() + row_view(params, bk_);
    c.V = (c.Xn * view(params, wv_)).rowwise() + row_view(params, bv_);

    Matrix<Scalar> Xq(n_q, d), Xq_raw(n_q, d);
    for (Index q = 0; q < n_q; ++q) {
      Xq.row(q) = c.Xn.row(c.query_row[q]);
      Xq_raw.row(q) = c.X.row(c.query_row[q]);
    }
    c.Q = (Xq * view(params, wq_)).rowwise() + row_view(params, bq_);

    const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d)));
    c.attn_offset.assign(n_q + 1, 0);
    for (Index q = 0; q < n_q; ++q) c.attn_offset[q + 1] = c.attn_offset[q] + c.query_pos[q] + 1;
    c.attn.assign(c.attn_offset[n_q], Scalar(0));
    c.attn_mask.assign(c.attn_offset[n_q], Scalar(1));
    c.ffn_mask.setOnes(n_q, d);
    c.C.setZero(n_q, d);

    for (Index q = 0; q < n_q; ++q) {
      const Index start = c.seq_start[c.query_seq[q]];
      const Index count = c.query_pos[q] + 1;
      Vector<Scalar> scores = c.K.middleRows(start, count) * c.Q.row(q).transpose() * scale;
      const Scalar mx = scores.maxCoeff();
      scores = (scores.array() - mx).exp();
      scores /= scores.sum();
      Scalar* p = c.attn.data() + c.attn_offset[q];
      Scalar* mask = c.attn_mask.data() + c.attn_offset[q];
      if (train) {
        Rng rng(mix_seed(dropout_seeds[c.query_seq[q]], static_cast<std::uint64_t>(c.query_pos[q])));
        Eigen::Map<Matrix<Scalar>> mask_map(mask, 1, count);
        nn::dropout_mask<Scalar>(mask_map, shape_.dropout, rng);
        auto ffn_row = c.ffn_mask.row(q);
        nn::dropout_mask<Scalar>(ffn_row, shape_.dropout, rng);
      }
      for (Index j = 0; j < count; ++j) {
        p[j] = scores[j];
        c.C.row(q) += (p[j] * mask[j]) * c.V.row(start + j);
      }
    }

    const Matrix<Scalar> O = (c.C * view(params, wo_)).rowwise() + row_view(params, bo_);
    c.H = Xq_raw + O;
    c.U = nn::layer_norm<Scalar>(c.H, row_view(params, ln2_g_), row_view(params, ln2_b_), &c.ln2);
    c.Pre = (c.U * view(params, w1_)).rowwise() + row_view(params, b1_);
    c.A = c.Pre.unaryExpr([](Scalar x) { return nn::gelu(x); });
    const Matrix<Scalar> F = (c.A * view(params, w2_)).rowwise() + row_view(params, b2_);
    c.Z = c.H + F.cwiseProduct(c.ffn_mask);
    return nn::layer_norm<Scalar>(c.Z, row_view(params, lnf_g_), row_view(params, lnf_b_), &c.lnf);
  }

  /// Accumulates dL/dparams (encoder blocks and item table rows) into `grad`.
  void backward(const Vector<Scalar>& params, const Cache& c, const Matrix<Scalar>& d_out,
                Vector<Scalar>& grad) const {
    auto d_table = view(grad, table_);
    const Index d = shape_.dim;
    const Index n_q = static_cast<Index>(c.query_row.size());

    if (mode_ == EncoderMode::mean_pool) {
      for (Index q = 0; q < n_q; ++q) {
        const Index start = c.seq_start[c.query_seq[q]];
        const Index count = c.query_pos[q] + 1;
        const RowVector<Scalar> share = d_out.row(q) / static_cast<Scalar>(count);
        for (Index r = start; r < start + count; ++r) d_table.row(c.row_item[r]) += share;
      }
      return;
    }

    auto dlnf_g = row_view(grad, lnf_g_);
    auto dlnf_b = row_view(grad, lnf_b_);
    const Matrix<Scalar> dZ = nn::layer_norm_backward<Scalar>(d_out, c.lnf, row_view(params, lnf_g_), dlnf_g, dlnf_b);

    Matrix<Scalar> dH = dZ;
    const Matrix<Scalar> dF = dZ.cwiseProduct(c.ffn_mask);
    view(grad, w2_).noalias() += c.A.transpose() * dF;
    row_view(grad, b2_) += dF.colwise().sum();
    Matrix<Scalar> dPre = dF * view(params, w2_).transpose();
    dPre.array() *= c.Pre.unaryExpr([](Scalar x) { return nn::gelu_grad(x); }).array();
    view(grad, w1_).noalias() += c.U.transpose() * dPre;
    row_view(grad, b1_) += dPre.colwise().sum();
    const Matrix<Scalar> dU = dPre * view(params, w1_).transpose();
    auto dln2_g = row_view(grad, ln2_g_);
    auto dln2_b = row_view(grad, ln2_b_);
    dH += nn::layer_norm_backward<Scalar>(dU, c.ln2, row_view(params, ln2_g_), dln2_g, dln2_b);

    const Index n_rows = c.X.rows();
    Matrix<Scalar> dX = Matrix<Scalar>::Zero(n_rows, d);
    for (Index q = 0; q < n_q; ++q) dX.row(c.query_row[q]) += dH.row(q);

    view(grad, wo_).noalias() += c.C.transpose() * dH;
    row_view(grad, bo_) += dH.colwise().sum();
    const Matrix<Scalar> dC = dH * view(params, wo_).transpose();

    const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d)));
    Matrix<Scalar> dQ = Matrix<Scalar>::Zero(n_q, d);
    Matrix<Scalar> dK = Matrix<Scalar>::Zero(n_rows, d);
    Matrix<Scalar> dV = Matrix<Scalar>::Zero(n_rows, d);
    std::vector<Scalar> dp;
    for (Index q = 0; q < n_q; ++q) {
      const Index start = c.seq_start[c.query_seq[q]];
      const Index count = c.query_pos[q] + 1;
      const Scalar* p = c.attn.data() + c.attn_offset[q];
      const Scalar* mask = c.attn_mask.data() + c.attn_offset[q];
      dp.assign(count, Scalar(0));
      Scalar weighted = 0;
      for (Index j = 0; j < count; ++j) {
        dV.row(start + j) += (p[j] * mask[j]) * dC.row(q);
        dp[j] = dC.row(q).dot(c.V.row(start + j)) * mask[j];
        weighted += p[j] * dp[j];
      }
      for (Index j = 0; j < count; ++j) {
        const Scalar ds = p[j] * (dp[j] - weighted) * scale;
        dQ.row(q) += ds * c.K.row(start + j);
        dK.row(start + j) += ds * c.Q.row(q);
      }
    }

    Matrix<Scalar> Xq(n_q, d);
    for (Index q = 0; q < n_q; ++q) Xq.row(q) = c.Xn.row(c.query_row[q]);
    view(grad, wq_).noalias() += Xq.transpose() * dQ;
    row_view(grad, bq_) += dQ.colwise().sum();
    view(grad, wk_).noalias() += c.Xn.transpose() * dK;
    row_view(grad, bk_) += dK.colwise().sum();
    view(grad, wv_).noalias() += c.Xn.transpose() * dV;
    row_view(grad, bv_) += dV.colwise().sum();

    Matrix<Scalar> dXn = dK * view(params, wk_).transpose();
    dXn.noalias() += dV * view(params, wv_).transpose();
    const Matrix<Scalar> dXq = dQ * view(params, wq_).transpose();
    for (Index q = 0; q < n_q; ++q) dXn.row(c.query_row[q]) += dXq.row(q);

    auto dln1_g = row_view(grad, ln1_g_);
    auto dln1_b = row_view(grad, ln1_b_);
    dX += nn::layer_norm_backward<Scalar>(dXn, c.ln1, row_view(params, ln1_g_), dln1_g, dln1_b);

    auto d_pos = view(grad, pos_);
    for (Index r = 0; r < n_rows; ++r) {
      d_table.row(c.row_item[r]) += dX.row(r);
      d_pos.row(c.row_pos[r]) += dX.row(r);
    }
  }

  /// Hidden state at every non-padding position of one history.
  Matrix<Scalar> encode_states(const Vector<Scalar>& params, std::span<const ItemId> history) const {
    HistoryBatch batch(static_cast<Index>(history.size()));
    batch.push(history);
    return forward(params, batch, Readout::all);
  }

 private:
  void gather_rows(const HistoryBatch& batch, Readout readout, Cache& c) const {
    if (batch.len > shape_.max_len) {
      throw std::invalid_argument("history length " + std::to_string(batch.len) + " exceeds encoder max " +
                                  std::to_string(shape_.max_len));
    }
    const Index n_seq = batch.size();
    c.readout = readout;
    c.seq_start.assign(n_seq, 0);
    c.seq_len.assign(n_seq, 0);
    c.row_item.clear();
    c.row_pos.clear();
    c.query_row.clear();
    c.query_seq.clear();
    c.query_pos.clear();
    for (Index b = 0; b < n_seq; ++b) {
      c.seq_start[b] = static_cast<Index>(c.row_item.size());
      Index n = 0;
      for (const ItemId id : batch.row(b)) {
        if (id == kPaddingId) continue;
        if (id < 0 || id > shape_.vocab) {
          throw std::out_of_range("history item id " + std::to_string(id) + " outside [1, " +
                                  std::to_string(shape_.vocab) + "]");
        }
        c.row_item.push_back(id);
        c.row_pos.push_back(n++);
      }
      if (n == 0) throw std::invalid_argument("cannot encode an all-padding history");
      c.seq_len[b] = n;
      const Index first_query = readout == Readout::last ? n - 1 : 0;
      for (Index i = first_query; i < n; ++i) {
        c.query_row.push_back(c.seq_start[b] + i);
        c.query_seq.push_back(b);
        c.query_pos.push_back(i);
      }
    }
  }

  ParamBlock table_;
  EncoderShape shape_;
  EncoderMode mode_ = EncoderMode::transformer;
  ParamBlock pos_, ln1_g_, ln1_b_, wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  ParamBlock ln2_g_, ln2_b_, w1_, b1_, w2_, b2_, lnf_g_, lnf_b_;
};

}  // namespace bbdrec
