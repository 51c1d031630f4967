#pragma once

#include "bbdrec/tensor.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace bbdrec {

// A named rows x cols slice of a flat parameter vector.
struct ParamBlock {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;

  Index size() const { return rows * cols; }
};

// Registry of parameter blocks laid out back to back in one flat vector.
// Parameters, gradients and optimizer moments all share this layout, which
// keeps the optimizer, checkpoints and finite-difference checks generic.
class ParamLayout {
 public:
  ParamBlock add(std::string name, Index rows, Index cols) {
    for (const auto& b : blocks_) {
      if (b.name == name) throw std::logic_error("duplicate parameter block '" + name + "'");
    }
    ParamBlock block{std::move(name), rows, cols, total_};
    total_ += rows * cols;
    blocks_.push_back(block);
    return block;
  }

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  Index total() const { return total_; }

  const ParamBlock& find(const std::string& name) const {
    for (const auto& b : blocks_) {
      if (b.name == name) return b;
    }
    throw std::out_of_range("no parameter block '" + name + "'");
  }

  bool operator==(const ParamLayout& other) const {
    if (blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& a = blocks_[i];
      const auto& b = other.blocks_[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset) return false;
    }
    return true;
  }

 private:
  std::vector<ParamBlock> blocks_;
  Index total_ = 0;
};

template <typename Scalar>
MatrixMap<Scalar> view(Vector<Scalar>& flat, const ParamBlock& b) {
  return MatrixMap<Scalar>(flat.data() + b.offset, b.rows, b.cols);
}

template <typename Scalar>
ConstMatrixMap<Scalar> view(const Vector<Scalar>& flat, const ParamBlock& b) {
  return ConstMatrixMap<Scalar>(flat.data() + b.offset, b.rows, b.cols);
}

template <typename Scalar>
Eigen::Map<RowVector<Scalar>> row_view(Vector<Scalar>& flat, const ParamBlock& b) {
  return Eigen::Map<RowVector<Scalar>>(flat.data() + b.offset, b.size());
}

template <typename Scalar>
Eigen::Map<const RowVector<Scalar>> row_view(const Vector<Scalar>& flat, const ParamBlock& b) {
  return Eigen::Map<const RowVector<Scalar>>(flat.data() + b.offset, b.size());
}

}  // namespace bbdrec
