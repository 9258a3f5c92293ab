#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace tabrec::attn {

/// Row-major dense matrix. Sequences are stored one position per row.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// C = A * B computed one output row at a time with a fixed summation order
/// over the inner dimension. Row i of C depends only on row i of A and on B,
/// bit for bit, regardless of how many rows A has.
template <typename T>
void matmul_rows(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
  const Eigen::Index m = a.rows();
  const Eigen::Index k = a.cols();
  const Eigen::Index n = b.cols();
  c.resize(m, n);
  const T* __restrict bp = b.data();
  for (Eigen::Index i = 0; i < m; ++i) {
    T* __restrict cp = c.data() + i * n;
    const T* __restrict ap = a.data() + i * k;
    for (Eigen::Index j = 0; j < n; ++j) cp[j] = T(0);
    for (Eigen::Index kk = 0; kk < k; ++kk) {
      const T aik = ap[kk];
      const T* __restrict brow = bp + kk * n;
      for (Eigen::Index j = 0; j < n; ++j) cp[j] += aik * brow[j];
    }
  }
}

}  // namespace tabrec::attn
