#pragma once

// Reverse-mode autodiff over Mat<T>. A Graph is a tape of nodes; ops append a
// node holding the forward value plus a closure that scatters the node's
// gradient into its parents. Ops only reference earlier nodes, so backward()
// is a single reverse sweep. Templated on the scalar type: training runs the
// tape in float, gradient checking in double.

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mtvit/mat.hpp"

namespace mtvit {

template <typename T>
class Graph {
 public:
  struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  Var leaf(Mat<T> value) {
    nodes_.push_back(Node{std::move(value), {}, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<T>& val(Var v) const { return nodes_[v.i].value; }

  // Gradient of the last backward() root w.r.t. node v; zeros if v does not
  // influence the root.
  const Mat<T>& grad(Var v) {
    Node& n = nodes_[v.i];
    if (n.grad.empty()) n.grad = Mat<T>::zeros(n.value.rows, n.value.cols);
    return n.grad;
  }

  size_t num_nodes() const { return nodes_.size(); }

  // root must be 1x1. Seeds d(root)/d(root) = 1 and sweeps the tape.
  void backward(Var root) {
    Node& r = nodes_[root.i];
    if (r.value.rows != 1 || r.value.cols != 1)
      throw NumericError("backward root must be a scalar");
    touch_grad(root.i).at(0, 0) += T(1);
    for (int i = root.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.grad.empty() && n.back) n.back(*this, i);
    }
  }

  // --- ops -----------------------------------------------------------------

  Var matmul(Var a, Var b) {
    Mat<T> out = ::mtvit::matmul(val(a), val(b));
    return push(std::move(out), [a, b](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      add_matmul_nt_acc(g.touch_grad(a.i), go, g.val(b));
      add_matmul_tn_acc(g.touch_grad(b.i), g.val(a), go);
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    Mat<T> out = ::mtvit::matmul_nt(val(a), val(b));
    return push(std::move(out), [a, b](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      add_matmul_acc(g.touch_grad(a.i), go, g.val(b));
      add_matmul_tn_acc(g.touch_grad(b.i), go, g.val(a));
    });
  }

  Var add(Var a, Var b) {
    const Mat<T>& va = val(a);
    const Mat<T>& vb = val(b);
    Mat<T> out(va.rows, va.cols);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] + vb.data[i];
    return push(std::move(out), [a, b](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      Mat<T>& gb = g.touch_grad(b.i);
      for (size_t i = 0; i < go.size(); ++i) {
        ga.data[i] += go.data[i];
        gb.data[i] += go.data[i];
      }
    });
  }

  // [m,n] + [1,n] broadcast over rows
  Var add_rowvec(Var a, Var v) {
    const Mat<T>& va = val(a);
    const Mat<T>& vv = val(v);
    Mat<T> out(va.rows, va.cols);
    for (int i = 0; i < va.rows; ++i)
      for (int j = 0; j < va.cols; ++j) out.at(i, j) = va.at(i, j) + vv.at(0, j);
    return push(std::move(out), [a, v](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      Mat<T>& gv = g.touch_grad(v.i);
      for (size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i];
      for (int i = 0; i < go.rows; ++i)
        for (int j = 0; j < go.cols; ++j) gv.at(0, j) += go.at(i, j);
    });
  }

  Var scale(Var a, T c) {
    const Mat<T>& va = val(a);
    Mat<T> out(va.rows, va.cols);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = c * va.data[i];
    return push(std::move(out), [a, c](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      for (size_t i = 0; i < go.size(); ++i) ga.data[i] += c * go.data[i];
    });
  }

  Var slice_rows(Var a, int r0, int r1) {
    const Mat<T>& va = val(a);
    Mat<T> out(r1 - r0, va.cols);
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < va.cols; ++j) out.at(i - r0, j) = va.at(i, j);
    return push(std::move(out), [a, r0](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      for (int i = 0; i < go.rows; ++i)
        for (int j = 0; j < go.cols; ++j) ga.at(i + r0, j) += go.at(i, j);
    });
  }

  Var slice_cols(Var a, int c0, int c1) {
    const Mat<T>& va = val(a);
    Mat<T> out(va.rows, c1 - c0);
    for (int i = 0; i < va.rows; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = va.at(i, j);
    return push(std::move(out), [a, c0](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      for (int i = 0; i < go.rows; ++i)
        for (int j = 0; j < go.cols; ++j) ga.at(i, j + c0) += go.at(i, j);
    });
  }

  Var concat_rows(std::span<const Var> parts) {
    int rows = 0;
    const int cols = val(parts[0]).cols;
    for (Var p : parts) rows += val(p).rows;
    Mat<T> out(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const Mat<T>& vp = val(p);
      for (int i = 0; i < vp.rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(off + i, j) = vp.at(i, j);
      off += vp.rows;
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return push(std::move(out), [ps = std::move(ps)](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      int off = 0;
      for (Var p : ps) {
        Mat<T>& gp = g.touch_grad(p.i);
        for (int i = 0; i < gp.rows; ++i)
          for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += go.at(off + i, j);
        off += gp.rows;
      }
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    int cols = 0;
    const int rows = val(parts[0]).rows;
    for (Var p : parts) cols += val(p).cols;
    Mat<T> out(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const Mat<T>& vp = val(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < vp.cols; ++j) out.at(i, off + j) = vp.at(i, j);
      off += vp.cols;
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return push(std::move(out), [ps = std::move(ps)](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      int off = 0;
      for (Var p : ps) {
        Mat<T>& gp = g.touch_grad(p.i);
        for (int i = 0; i < gp.rows; ++i)
          for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += go.at(i, off + j);
        off += gp.cols;
      }
    });
  }

  Var softmax_rows(Var a) {
    Mat<T> out = ::mtvit::softmax_rows(val(a));
    return push(std::move(out), [a](Graph& g, int self) {
      const Mat<T>& p = g.nodes_[self].value;
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      for (int i = 0; i < p.rows; ++i) {
        T dot = 0;
        for (int j = 0; j < p.cols; ++j) dot += go.at(i, j) * p.at(i, j);
        for (int j = 0; j < p.cols; ++j)
          ga.at(i, j) += p.at(i, j) * (go.at(i, j) - dot);
      }
    });
  }

  // Per-row layer norm with learned scale/shift ([1,n] each).
  Var layer_norm(Var x, Var gamma, Var beta, T eps) {
    const Mat<T>& vx = val(x);
    const Mat<T>& vg = val(gamma);
    const Mat<T>& vb = val(beta);
    const int n = vx.cols;
    Mat<T> xhat(vx.rows, n);
    std::vector<T> rstd(vx.rows);
    Mat<T> out(vx.rows, n);
    for (int i = 0; i < vx.rows; ++i) {
      T mean = 0;
      for (int j = 0; j < n; ++j) mean += vx.at(i, j);
      mean /= T(n);
      T var = 0;
      for (int j = 0; j < n; ++j) {
        const T d = vx.at(i, j) - mean;
        var += d * d;
      }
      var /= T(n);
      const T rs = T(1) / std::sqrt(var + eps);
      rstd[i] = rs;
      for (int j = 0; j < n; ++j) {
        const T xh = (vx.at(i, j) - mean) * rs;
        xhat.at(i, j) = xh;
        out.at(i, j) = xh * vg.at(0, j) + vb.at(0, j);
      }
    }
    return push(std::move(out), [x, gamma, beta, xhat = std::move(xhat),
                                 rstd = std::move(rstd)](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      const Mat<T>& vg = g.val(gamma);
      Mat<T>& gx = g.touch_grad(x.i);
      Mat<T>& gg = g.touch_grad(gamma.i);
      Mat<T>& gb = g.touch_grad(beta.i);
      const int n = go.cols;
      for (int i = 0; i < go.rows; ++i) {
        T sum_dxh = 0, sum_dxh_xh = 0;
        for (int j = 0; j < n; ++j) {
          const T dxh = go.at(i, j) * vg.at(0, j);
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xhat.at(i, j);
          gg.at(0, j) += go.at(i, j) * xhat.at(i, j);
          gb.at(0, j) += go.at(i, j);
        }
        const T inv_n = T(1) / T(n);
        for (int j = 0; j < n; ++j) {
          const T dxh = go.at(i, j) * vg.at(0, j);
          gx.at(i, j) +=
              rstd[i] * (dxh - inv_n * sum_dxh - xhat.at(i, j) * inv_n * sum_dxh_xh);
        }
      }
    });
  }

  Var gelu(Var a) {
    const Mat<T>& va = val(a);
    Mat<T> out(va.rows, va.cols);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = gelu_scalar(va.data[i]);
    return push(std::move(out), [a](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      const Mat<T>& va = g.val(a);
      Mat<T>& ga = g.touch_grad(a.i);
      for (size_t i = 0; i < go.size(); ++i)
        ga.data[i] += go.data[i] * gelu_grad_scalar(va.data[i]);
    });
  }

  // [m,n] -> [1,n] arithmetic mean over rows (GAP over a token sequence).
  Var mean_rows(Var a) {
    const Mat<T>& va = val(a);
    Mat<T> out(1, va.cols);
    for (int i = 0; i < va.rows; ++i)
      for (int j = 0; j < va.cols; ++j) out.at(0, j) += va.at(i, j);
    const T inv = T(1) / T(va.rows);
    for (int j = 0; j < va.cols; ++j) out.at(0, j) *= inv;
    return push(std::move(out), [a, inv](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      for (int i = 0; i < ga.rows; ++i)
        for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += inv * go.at(0, j);
    });
  }

  // Gathers the given rows. Indices are fixed inputs (not differentiated);
  // gradients flow into the gathered values only.
  Var gather_rows(Var a, std::vector<int> idx) {
    const Mat<T>& va = val(a);
    Mat<T> out(static_cast<int>(idx.size()), va.cols);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < va.cols; ++j) out.at(static_cast<int>(r), j) = va.at(idx[r], j);
    return push(std::move(out), [a, idx = std::move(idx)](Graph& g, int self) {
      const Mat<T>& go = g.nodes_[self].grad;
      Mat<T>& ga = g.touch_grad(a.i);
      for (size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < go.cols; ++j)
          ga.at(idx[r], j) += go.at(static_cast<int>(r), j);
    });
  }

  // Softmax cross-entropy with soft targets, -sum_j y_j log p_j for one
  // sample ([1,n] logits). log p is clamped at log(1e-12).
  Var ce_with_logits(Var logits, Mat<T> target) {
    const Mat<T>& z = val(logits);
    const int n = z.cols;
    const T log_eps = std::log(T(1e-12));
    T mx = z.at(0, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, z.at(0, j));
    T sum = 0;
    for (int j = 0; j < n; ++j) sum += std::exp(z.at(0, j) - mx);
    const T lse = mx + std::log(sum);
    T loss = 0;
    std::vector<char> clamped(n, 0);
    for (int j = 0; j < n; ++j) {
      T logp = z.at(0, j) - lse;
      if (logp < log_eps) {
        logp = log_eps;
        clamped[j] = 1;
      }
      loss -= target.at(0, j) * logp;
    }
    Mat<T> out(1, 1);
    out.at(0, 0) = loss;
    return push(std::move(out), [logits, target = std::move(target), lse,
                                 clamped = std::move(clamped)](Graph& g, int self) {
      const T go = g.nodes_[self].grad.at(0, 0);
      const Mat<T>& z = g.val(logits);
      Mat<T>& gz = g.touch_grad(logits.i);
      T ysum = 0;
      for (int j = 0; j < z.cols; ++j)
        if (!clamped[j]) ysum += target.at(0, j);
      for (int j = 0; j < z.cols; ++j) {
        const T p = std::exp(z.at(0, j) - lse);
        const T y = clamped[j] ? T(0) : target.at(0, j);
        gz.at(0, j) += go * (ysum * p - y);
      }
    });
  }

  // Sigmoid binary cross-entropy with soft targets, summed over labels for
  // one sample. Stable log-sum-exp form: max(z,0) - z*y + log1p(exp(-|z|)).
  Var bce_with_logits(Var logits, Mat<T> target) {
    const Mat<T>& z = val(logits);
    T loss = 0;
    for (int j = 0; j < z.cols; ++j) {
      const T zj = z.at(0, j);
      loss += std::max(zj, T(0)) - zj * target.at(0, j) + std::log1p(std::exp(-std::abs(zj)));
    }
    Mat<T> out(1, 1);
    out.at(0, 0) = loss;
    return push(std::move(out), [logits, target = std::move(target)](Graph& g, int self) {
      const T go = g.nodes_[self].grad.at(0, 0);
      const Mat<T>& z = g.val(logits);
      Mat<T>& gz = g.touch_grad(logits.i);
      for (int j = 0; j < z.cols; ++j) {
        const T sig = T(1) / (T(1) + std::exp(-z.at(0, j)));
        gz.at(0, j) += go * (sig - target.at(0, j));
      }
    });
  }

  Var add_all(std::span<const Var> vs) {
    Var acc = vs[0];
    for (size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
    return acc;
  }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;  // allocated on first touch
    std::function<void(Graph&, int)> back;
  };

  Mat<T>& touch_grad(int i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) n.grad = Mat<T>::zeros(n.value.rows, n.value.cols);
    return n.grad;
  }

  Var push(Mat<T> value, std::function<void(Graph&, int)> back) {
    nodes_.push_back(Node{std::move(value), {}, std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace mtvit
