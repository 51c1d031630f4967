#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace bbdrec {

using Index = Eigen::Index;

// Row-major everywhere: one row per sample / item / sequence position.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using MatrixMap = Eigen::Map<Matrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;

using ItemId = std::int32_t;
inline constexpr ItemId kPaddingId = 0;

using Rng = std::mt19937_64;

// splitmix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename Scalar, typename Derived>
void fill_normal(Eigen::DenseBase<Derived>& out, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Index r = 0; r < out.rows(); ++r) {
    for (Index c = 0; c < out.cols(); ++c) {
      out(r, c) = static_cast<Scalar>(normal(rng));
    }
  }
}

// Standard normals for a block of rows, row r drawn from rngs[r] only.
// Marsaglia polar method on 32-bit uniform pairs, one engine call per
// candidate point. Rejection is scalar, log/sqrt run over the block.
template <typename Scalar>
void fill_normal_rows(Matrix<Scalar>& out, Rng* rngs) {
  const Index rows = out.rows(), n = out.cols();
  const Index half = (n + 1) / 2;
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> u(rows, half), v(rows, half), s(rows, half);
  constexpr double scale = 1.0 / 2147483648.0;  // 2^-31
  for (Index r = 0; r < rows; ++r) {
    Rng& rng = rngs[r];
    for (Index i = 0; i < half; ++i) {
      double a, b, q;
      do {
        const std::uint64_t bits = rng();
        a = static_cast<double>(bits >> 32) * scale - 1.0;
        b = static_cast<double>(bits & 0xffffffffULL) * scale - 1.0;
        q = a * a + b * b;
      } while (q >= 1.0 || q == 0.0);
      u(r, i) = a;
      v(r, i) = b;
      s(r, i) = q;
    }
  }
  const decltype(s) f = (-2.0 * s.log() / s).sqrt();
  u *= f;
  v *= f;
  for (Index r = 0; r < rows; ++r) {
    for (Index i = 0; i < half; ++i) {
      out(r, 2 * i) = static_cast<Scalar>(u(r, i));
      if (2 * i + 1 < n) out(r, 2 * i + 1) = static_cast<Scalar>(v(r, i));
    }
  }
}

}  // namespace bbdrec
