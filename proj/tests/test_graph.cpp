#include "mtvit/graph.hpp"

#include <gtest/gtest.h>

#include <functional>

#include "mtvit/rng.hpp"

using namespace mtvit;
using G = Graph<double>;
using Var = G::Var;

namespace {

Mat<double> random_mat(int r, int c, Rng& rng, double lo = -1, double hi = 1) {
  Mat<double> m(r, c);
  fill_uniform(m, rng, lo, hi);
  return m;
}

// Reduces any output to a scalar with fixed pseudo-random weights so every
// output entry influences the loss.
Var weighted_sum(G& g, Var v) {
  const Mat<double>& val = g.val(v);
  Mat<double> w(val.cols, 1);
  for (int i = 0; i < val.cols; ++i) w.at(i, 0) = 0.3 + 0.1 * i;
  Var wv = g.leaf(w);
  Var col = g.matmul(v, wv);  // [m,1]
  Mat<double> u(1, val.rows);
  for (int i = 0; i < val.rows; ++i) u.at(0, i) = 0.7 - 0.05 * i;
  return g.matmul(g.leaf(u), col);  // [1,1]
}

// Central-difference check of d(scalar)/d(inputs) for a builder that maps
// leaf vars to a scalar var.
void check_op(const std::vector<Mat<double>>& inputs,
              const std::function<Var(G&, const std::vector<Var>&)>& build,
              double tol = 1e-7) {
  // Analytic.
  G g;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(g.leaf(m));
  Var out = build(g, vars);
  ASSERT_EQ(g.val(out).rows, 1);
  ASSERT_EQ(g.val(out).cols, 1);
  g.backward(out);
  std::vector<Mat<double>> analytic;
  for (Var v : vars) analytic.push_back(g.grad(v));

  auto eval = [&](const std::vector<Mat<double>>& xs) {
    G g2;
    std::vector<Var> vs;
    for (const auto& m : xs) vs.push_back(g2.leaf(m));
    return g2.val(build(g2, vs)).at(0, 0);
  };

  const double h = 1e-6;
  std::vector<Mat<double>> probe = inputs;
  for (size_t t = 0; t < inputs.size(); ++t)
    for (size_t k = 0; k < inputs[t].size(); ++k) {
      const double saved = probe[t].data[k];
      probe[t].data[k] = saved + h;
      const double up = eval(probe);
      probe[t].data[k] = saved - h;
      const double down = eval(probe);
      probe[t].data[k] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(analytic[t].data[k], fd, tol)
          << "input " << t << " entry " << k;
    }
}

TEST(Graph, MatmulBackward) {
  Rng rng = make_rng(11);
  check_op({random_mat(3, 4, rng), random_mat(4, 2, rng)},
           [](G& g, const std::vector<Var>& v) {
             return weighted_sum(g, g.matmul(v[0], v[1]));
           });
}

TEST(Graph, MatmulNtBackward) {
  Rng rng = make_rng(12);
  check_op({random_mat(3, 5, rng), random_mat(4, 5, rng)},
           [](G& g, const std::vector<Var>& v) {
             return weighted_sum(g, g.matmul_nt(v[0], v[1]));
           });
}

TEST(Graph, AddAndScaleBackward) {
  Rng rng = make_rng(13);
  check_op({random_mat(2, 3, rng), random_mat(2, 3, rng)},
           [](G& g, const std::vector<Var>& v) {
             return weighted_sum(g, g.scale(g.add(v[0], v[1]), 1.7));
           });
}

TEST(Graph, AddRowvecBackward) {
  Rng rng = make_rng(14);
  check_op({random_mat(4, 3, rng), random_mat(1, 3, rng)},
           [](G& g, const std::vector<Var>& v) {
             return weighted_sum(g, g.add_rowvec(v[0], v[1]));
           });
}

TEST(Graph, SoftmaxBackward) {
  Rng rng = make_rng(15);
  check_op({random_mat(3, 5, rng)}, [](G& g, const std::vector<Var>& v) {
    return weighted_sum(g, g.softmax_rows(v[0]));
  });
}

TEST(Graph, LayerNormBackward) {
  Rng rng = make_rng(16);
  check_op({random_mat(3, 6, rng), random_mat(1, 6, rng, 0.5, 1.5),
            random_mat(1, 6, rng)},
           [](G& g, const std::vector<Var>& v) {
             return weighted_sum(g, g.layer_norm(v[0], v[1], v[2], 1e-5));
           },
           1e-6);
}

TEST(Graph, GeluBackward) {
  Rng rng = make_rng(17);
  check_op({random_mat(3, 4, rng, -2, 2)}, [](G& g, const std::vector<Var>& v) {
    return weighted_sum(g, g.gelu(v[0]));
  });
}

TEST(Graph, SliceConcatBackward) {
  Rng rng = make_rng(18);
  check_op({random_mat(4, 6, rng)}, [](G& g, const std::vector<Var>& v) {
    Var a = g.slice_cols(v[0], 0, 3);
    Var b = g.slice_cols(v[0], 3, 6);
    const Var cols[] = {b, a};
    Var merged = g.concat_cols(cols);
    Var top = g.slice_rows(merged, 0, 2);
    Var bottom = g.slice_rows(merged, 2, 4);
    const Var rows[] = {bottom, top};
    return weighted_sum(g, g.concat_rows(rows));
  });
}

TEST(Graph, MeanGatherBackward) {
  Rng rng = make_rng(19);
  check_op({random_mat(5, 3, rng)}, [](G& g, const std::vector<Var>& v) {
    Var picked = g.gather_rows(v[0], {4, 1, 1});  // repeats accumulate
    return weighted_sum(g, g.mean_rows(picked));
  });
}

TEST(Graph, CeWithLogitsBackward) {
  Rng rng = make_rng(20);
  Mat<double> target(1, 5);
  target.data = {0.1, 0.2, 0.0, 0.45, 0.25};
  check_op({random_mat(1, 5, rng)}, [target](G& g, const std::vector<Var>& v) {
    return g.ce_with_logits(v[0], target);
  });
}

TEST(Graph, BceWithLogitsBackward) {
  Rng rng = make_rng(21);
  Mat<double> target(1, 4);
  target.data = {1.0, 0.0, 0.3, 0.8};
  check_op({random_mat(1, 4, rng, -2, 2)}, [target](G& g, const std::vector<Var>& v) {
    return g.bce_with_logits(v[0], target);
  });
}

TEST(Graph, ReusedNodeAccumulatesGradient) {
  // f(x) = sum(x) + sum(x) has gradient 2 everywhere.
  G g;
  Mat<double> x(2, 2);
  x.data = {1, 2, 3, 4};
  Var v = g.leaf(x);
  Var s1 = weighted_sum(g, v);
  Var s2 = weighted_sum(g, v);
  Var out = g.add(s1, s2);
  g.backward(out);
  G g2;
  Var v2 = g2.leaf(x);
  Var single = weighted_sum(g2, v2);
  g2.backward(single);
  for (size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(g.grad(v).data[i], 2 * g2.grad(v2).data[i], 1e-12);
}

TEST(Graph, BackwardRequiresScalarRoot) {
  G g;
  Var v = g.leaf(Mat<double>(2, 2));
  EXPECT_THROW(g.backward(v), NumericError);
}

TEST(Graph, CeUnitValues) {
  // Uniform softmax -> ln(n); one-hot correct with huge margin -> ~0.
  G g;
  Mat<double> z(1, 7);
  Mat<double> y(1, 7);
  y.at(0, 3) = 1;
  Var loss = g.ce_with_logits(g.leaf(z), y);
  EXPECT_NEAR(g.val(loss).at(0, 0), std::log(7.0), 1e-9);

  Mat<double> sharp(1, 7);
  sharp.at(0, 3) = 50;
  Var loss2 = g.ce_with_logits(g.leaf(sharp), y);
  EXPECT_NEAR(g.val(loss2).at(0, 0), 0.0, 1e-9);
}

TEST(Graph, BceUnitValues) {
  // Zero logits -> n * ln 2 for any targets; saturated correct logits -> ~0.
  G g;
  Mat<double> z(1, 6);
  Mat<double> y(1, 6);
  y.data = {1, 0, 1, 0, 0.5, 0.25};
  Var loss = g.bce_with_logits(g.leaf(z), y);
  EXPECT_NEAR(g.val(loss).at(0, 0), 6 * std::log(2.0), 1e-9);

  Mat<double> sharp(1, 2);
  sharp.data = {40.0, -40.0};
  Mat<double> y2(1, 2);
  y2.data = {1.0, 0.0};
  Var loss2 = g.bce_with_logits(g.leaf(sharp), y2);
  EXPECT_NEAR(g.val(loss2).at(0, 0), 0.0, 1e-9);
}

}  // namespace
