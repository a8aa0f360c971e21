#pragma once

#include <cstddef>

// Eigen's coefficient-based path for small products changes its summation
// order with buffer alignment, which breaks run-to-run bit equality. The
// packed GEMM path does not.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

// Row-major dense kernels behind matmul/bmm. All accumulate into `c`.
namespace matten::detail {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

// c[M,P] += a[M,K] * b[K,P]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t p) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto P = static_cast<Eigen::Index>(p);
  MatrixMap(c, M, P).noalias() += ConstMatrixMap(a, M, K) * ConstMatrixMap(b, K, P);
}

// c[M,P] += a[M,K] * b[P,K]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t p) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto P = static_cast<Eigen::Index>(p);
  MatrixMap(c, M, P).noalias() +=
      ConstMatrixMap(a, M, K) * ConstMatrixMap(b, P, K).transpose();
}

// c[M,P] += a[K,M]^T * b[K,P]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t p) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto P = static_cast<Eigen::Index>(p);
  MatrixMap(c, M, P).noalias() +=
      ConstMatrixMap(a, K, M).transpose() * ConstMatrixMap(b, K, P);
}

}  // namespace matten::detail
