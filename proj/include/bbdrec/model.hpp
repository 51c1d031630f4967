#pragma once

#include "bbdrec/denoiser.hpp"
#include "bbdrec/params.hpp"
#include "bbdrec/seq_encoder.hpp"
#include "bbdrec/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace bbdrec {

struct ModelShape {
  Index n_items = 0;  // |V|
  Index dim = 64;
  Index max_len = 10;
  Index ffn_dim = 64;
  Index time_dim = 64;
  Index hidden = 128;
  int steps = 20;  // T; sizes the denoiser's step-embedding table
  double dropout = 0.1;
  EncoderMode encoder = EncoderMode::transformer;
  bool conditional = false;
  // One table for encoder input, diffusion target, softmax and retrieval.
  // When false, targets/softmax/retrieval use a separate output table.
  bool tie_embeddings = true;
};

/// Item embeddings + sequence encoder + denoiser, all parameters in one flat
/// vector described by `layout()`.
template <typename Scalar>
class BasicModel {
 public:
  BasicModel() = default;

  explicit BasicModel(const ModelShape& shape) : shape_(shape) {
    if (shape.n_items < 1) throw std::invalid_argument("model needs at least one item");
    if (shape.dim < 1 || shape.max_len < 1) throw std::invalid_argument("model dimensions must be positive");
    items_ = layout_.add("items", shape.n_items + 1, shape.dim);
    out_items_ = shape.tie_embeddings ? items_ : layout_.add("items.out", shape.n_items + 1, shape.dim);
    encoder_ = SeqEncoder<Scalar>(layout_, items_,
                                  EncoderShape{shape.n_items, shape.dim, shape.max_len, shape.ffn_dim, shape.dropout},
                                  shape.encoder);
    denoiser_ = Denoiser<Scalar>(layout_, DenoiserShape{shape.dim, shape.time_dim, shape.hidden, shape.steps,
                                                        shape.conditional});
    params_ = Vector<Scalar>::Zero(layout_.total());
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    params_.setZero();
    const double stddev = 1.0 / std::sqrt(static_cast<double>(shape_.dim));
    auto init_table = [&](const ParamBlock& b) {
      auto table = view(params_, b);
      auto rows = table.bottomRows(shape_.n_items);
      fill_normal<Scalar>(rows, rng, stddev);
    };
    init_table(items_);
    if (!shape_.tie_embeddings) init_table(out_items_);
    encoder_.init(params_, rng);
    denoiser_.init(params_, rng);
  }

  const ModelShape& shape() const { return shape_; }
  const ParamLayout& layout() const { return layout_; }
  Vector<Scalar>& params() { return params_; }
  const Vector<Scalar>& params() const { return params_; }

  const ParamBlock& item_block() const { return items_; }
  const ParamBlock& output_block() const { return out_items_; }
  ConstMatrixMap<Scalar> item_table() const { return view(params_, items_); }
  ConstMatrixMap<Scalar> output_table() const { return view(params_, out_items_); }

  const SeqEncoder<Scalar>& encoder() const { return encoder_; }
  const Denoiser<Scalar>& denoiser() const { return denoiser_; }

  /// Evaluation-mode history representations e_s, one row per sequence.
  Matrix<Scalar> encode(const HistoryBatch& batch) const {
    return encoder_.forward(params_, batch, SeqEncoder<Scalar>::Readout::last);
  }

 private:
  ModelShape shape_;
  ParamLayout layout_;
  ParamBlock items_, out_items_;
  SeqEncoder<Scalar> encoder_;
  Denoiser<Scalar> denoiser_;
  Vector<Scalar> params_;
};

using Model = BasicModel<double>;

}  // namespace bbdrec
