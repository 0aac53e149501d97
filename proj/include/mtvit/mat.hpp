#pragma once

// Dense row-major matrix type and the handful of kernels everything else is
// built on. All reductions run in a fixed order so repeated runs of the same
// binary produce bit-identical results.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtvit {

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;  // row-major, rows*cols

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat full(int r, int c, T v) {
    Mat m(r, c);
    for (auto& x : m.data) x = v;
    return m;
  }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  T& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  T* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const T* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

  void fill(T v) {
    for (auto& x : data) x = v;
  }
  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (const T& x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  template <typename U>
  Mat<U> cast() const {
    Mat<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Matmul kernels. The accumulate variants (`*_acc`) add into the destination;
// callers own the zero-initialisation.

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T. Eight independent accumulators so the dot
// product vectorises without relaxing FP semantics.
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<size_t>(j) * k;
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
      int p = 0;
      for (; p + 8 <= k; p += 8) {
        s0 += ai[p + 0] * bj[p + 0];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
        s4 += ai[p + 4] * bj[p + 4];
        s5 += ai[p + 5] * bj[p + 5];
        s6 += ai[p + 6] * bj[p + 6];
        s7 += ai[p + 7] * bj[p + 7];
      }
      T s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
      for (; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    const T* bi = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols == b.rows);
  Mat<T> c(a.rows, b.cols);
  gemm_acc(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
  return c;
}

template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols == b.cols);
  Mat<T> c(a.rows, b.rows);
  gemm_nt_acc(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.rows);
  return c;
}

template <typename T>
void add_matmul_acc(Mat<T>& c, const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  gemm_acc(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
}

template <typename T>
void add_matmul_nt_acc(Mat<T>& c, const Mat<T>& a, const Mat<T>& b) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  gemm_nt_acc(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.rows);
}

template <typename T>
void add_matmul_tn_acc(Mat<T>& c, const Mat<T>& a, const Mat<T>& b) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  gemm_tn_acc(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
}

// ---------------------------------------------------------------------------
// Row-wise softmax with max subtraction.

template <typename T>
void softmax_rows_inplace(Mat<T>& m) {
  for (int i = 0; i < m.rows; ++i) {
    T* r = m.row(i);
    T mx = r[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    T sum = 0;
    for (int j = 0; j < m.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < m.cols; ++j) r[j] *= inv;
  }
}

template <typename T>
Mat<T> softmax_rows(Mat<T> m) {
  softmax_rows_inplace(m);
  return m;
}

// Softmax of an arbitrary strided slice (used for attention row/column
// scores). `n` values starting at `src`, stepping by `stride`.
template <typename T>
void softmax_strided(const T* src, size_t stride, int n, T* dst) {
  T mx = src[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, src[static_cast<size_t>(i) * stride]);
  T sum = 0;
  for (int i = 0; i < n; ++i) {
    dst[i] = std::exp(src[static_cast<size_t>(i) * stride] - mx);
    sum += dst[i];
  }
  const T inv = T(1) / sum;
  for (int i = 0; i < n; ++i) dst[i] *= inv;
}

template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
  return cdf + x * pdf;
}

}  // namespace mtvit
