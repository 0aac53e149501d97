#include "mtvit/mat.hpp"

#include <gtest/gtest.h>

#include "mtvit/rng.hpp"

using namespace mtvit;

namespace {

// Naive triple-loop reference.
template <typename T>
Mat<T> matmul_ref(const Mat<T>& a, const Mat<T>& b) {
  Mat<T> c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      T s = 0;
      for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

template <typename T>
Mat<T> random_mat(int r, int c, Rng& rng) {
  Mat<T> m(r, c);
  fill_uniform(m, rng, T(-1), T(1));
  return m;
}

TEST(Mat, MatmulMatchesNaive) {
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + trial % 9, k = 1 + (trial * 7) % 33, n = 1 + (trial * 3) % 17;
    Mat<double> a = random_mat<double>(m, k, rng);
    Mat<double> b = random_mat<double>(k, n, rng);
    Mat<double> c = matmul(a, b);
    Mat<double> ref = matmul_ref(a, b);
    for (size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data[i], ref.data[i], 1e-12);
  }
}

TEST(Mat, MatmulNtMatchesNaive) {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + trial % 7, k = 1 + (trial * 5) % 29, n = 1 + (trial * 11) % 13;
    Mat<double> a = random_mat<double>(m, k, rng);
    Mat<double> b = random_mat<double>(n, k, rng);
    Mat<double> bt(k, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) bt.at(j, i) = b.at(i, j);
    Mat<double> c = matmul_nt(a, b);
    Mat<double> ref = matmul_ref(a, bt);
    for (size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data[i], ref.data[i], 1e-12);
  }
}

TEST(Mat, MatmulTnMatchesNaive) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = 2 + trial, k = 3 + trial, n = 4 + trial;
    Mat<double> a = random_mat<double>(m, k, rng);
    Mat<double> b = random_mat<double>(m, n, rng);
    Mat<double> at(k, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) at.at(j, i) = a.at(i, j);
    Mat<double> c(k, n);
    add_matmul_tn_acc(c, a, b);
    Mat<double> ref = matmul_ref(at, b);
    for (size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data[i], ref.data[i], 1e-12);
  }
}

TEST(Mat, SoftmaxRowsNormalizes) {
  Rng rng = make_rng(4);
  Mat<double> m = random_mat<double>(13, 21, rng);
  Mat<double> p = softmax_rows(m);
  for (int i = 0; i < p.rows; ++i) {
    double s = 0;
    for (int j = 0; j < p.cols; ++j) {
      EXPECT_GE(p.at(i, j), 0.0);
      s += p.at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Mat, SoftmaxShiftInvariant) {
  Rng rng = make_rng(5);
  Mat<double> m = random_mat<double>(4, 9, rng);
  Mat<double> shifted = m;
  for (auto& v : shifted.data) v += 123.25;
  Mat<double> a = softmax_rows(m), b = softmax_rows(shifted);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
}

TEST(Mat, SoftmaxStridedColumn) {
  Mat<double> m(4, 3);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) m.at(i, j) = i + 10 * j;
  std::vector<double> out(3);
  // Column 0, skipping row 0: entries m[1..3][0] = 1, 2, 3.
  softmax_strided(&m.at(1, 0), static_cast<size_t>(m.cols), 3, out.data());
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(out[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(out[2], std::exp(3.0) / z, 1e-12);
}

TEST(Mat, GeluGradientMatchesFiniteDifference) {
  for (double x : {-3.0, -1.0, -0.1, 0.0, 0.2, 1.7, 4.0}) {
    const double h = 1e-6;
    const double fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2 * h);
    EXPECT_NEAR(gelu_grad_scalar(x), fd, 1e-8);
  }
}

}  // namespace
