#pragma once

#include "bbdrec/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace bbdrec {

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay over a flat parameter vector.
template <typename Scalar>
class AdamW {
 public:
  AdamW() = default;
  AdamW(Index size, AdamWOptions opt) : opt_(opt), m_(Vector<Scalar>::Zero(size)), v_(Vector<Scalar>::Zero(size)) {}

  void step(Vector<Scalar>& params, const Vector<Scalar>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw std::invalid_argument("AdamW: parameter/gradient size mismatch");
    }
    ++t_;
    const auto b1 = static_cast<Scalar>(opt_.beta1);
    const auto b2 = static_cast<Scalar>(opt_.beta2);
    const auto lr = static_cast<Scalar>(opt_.lr);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(opt_.beta1, static_cast<double>(t_)));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(opt_.beta2, static_cast<double>(t_)));
    const auto eps = static_cast<Scalar>(opt_.eps);
    if (opt_.weight_decay != 0.0) params *= static_cast<Scalar>(1.0 - opt_.lr * opt_.weight_decay);
    m_ = b1 * m_ + (Scalar(1) - b1) * grad;
    v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

  const AdamWOptions& options() const { return opt_; }
  std::uint64_t steps() const { return t_; }
  const Vector<Scalar>& first_moment() const { return m_; }
  const Vector<Scalar>& second_moment() const { return v_; }

  void restore(std::uint64_t steps, Vector<Scalar> m, Vector<Scalar> v) {
    if (m.size() != v.size()) throw std::invalid_argument("AdamW: moment size mismatch");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamWOptions opt_;
  Vector<Scalar> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace bbdrec
