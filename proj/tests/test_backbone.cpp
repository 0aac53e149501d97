#include "mtvit/backbone.hpp"

#include <gtest/gtest.h>

#include "mtvit/rng.hpp"

using namespace mtvit;
using G = Graph<double>;
using Var = G::Var;

namespace {

ImageTensor<double> random_image(int h, int w, Rng& rng) {
  ImageTensor<double> img(h, w);
  std::uniform_real_distribution<double> d(0, 1);
  for (auto& v : img.data) v = d(rng);
  return img;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.image_height = cfg.image_width = 16;
  cfg.patch_size = 8;  // N_p = 4
  cfg.embed_dim = 8;
  cfg.fusion_dim = 8;
  cfg.backbone_layers = 1;
  cfg.num_heads = 2;
  cfg.select_k = 2;
  return cfg;
}

TEST(Patchify, PaperTokenCount) {
  ModelConfig cfg = ModelConfig::paper();
  EXPECT_EQ(cfg.num_patches(), 576);
  EXPECT_EQ(cfg.num_tokens(), 577);
}

TEST(Patchify, SinglePatchIdentity) {
  ModelConfig cfg;
  cfg.image_height = cfg.image_width = 8;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.fusion_dim = 8;
  cfg.num_heads = 2;
  cfg.select_k = 1;
  Rng rng = make_rng(31);
  ImageTensor<double> img = random_image(8, 8, rng);
  Mat<double> patches = patchify(img, cfg);
  ASSERT_EQ(patches.rows, 1);
  ASSERT_EQ(patches.cols, 192);
  // One patch equals the flattened image.
  for (size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(patches.data[i], img.data[i]);
}

TEST(Patchify, RoundtripBitExact) {
  ModelConfig cfg = ModelConfig::desk();  // 64x64, P=8 -> 64 patches
  Rng rng = make_rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    ImageTensor<double> img = random_image(64, 64, rng);
    Mat<double> patches = patchify(img, cfg);
    EXPECT_EQ(patches.rows, 64);
    ImageTensor<double> back = unpatchify(patches, cfg);
    ASSERT_EQ(back.data.size(), img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(back.data[i], img.data[i]);
  }
}

TEST(Patchify, DimensionMismatchThrows) {
  ModelConfig cfg = ModelConfig::desk();
  ImageTensor<double> img(32, 64);
  EXPECT_THROW(patchify(img, cfg), ConfigError);
}

TEST(Embed, ZeroEverythingGivesZeroTokens) {
  ModelConfig cfg = tiny_config();
  ParamStore<double> ps;
  PatchEmbedParamIds pe = PatchEmbedParamIds::add_to(ps, cfg);
  G g;
  Leaves<double> lv = Leaves<double>::make(g, ps);
  Var patches = g.leaf(Mat<double>(cfg.num_patches(), cfg.patch_dim()));
  Var tokens = embed(g, patches, pe, lv);
  EXPECT_EQ(g.val(tokens).rows, cfg.num_tokens());
  for (double v : g.val(tokens).data) EXPECT_EQ(v, 0.0);
}

TEST(Embed, MatchesNaiveProjectionOracle) {
  ModelConfig cfg = tiny_config();
  ParamStore<double> ps;
  PatchEmbedParamIds pe = PatchEmbedParamIds::add_to(ps, cfg);
  ps.init(77);
  Rng rng = make_rng(33);
  Mat<double> patches(cfg.num_patches(), cfg.patch_dim());
  fill_uniform(patches, rng, -1.0, 1.0);

  G g;
  Leaves<double> lv = Leaves<double>::make(g, ps);
  Var tokens = embed(g, g.leaf(patches), pe, lv);
  const Mat<double>& out = g.val(tokens);

  // Independent triple-loop oracle.
  const Mat<double>& w = ps.value(pe.proj_w);
  const Mat<double>& b = ps.value(pe.proj_b);
  const Mat<double>& pos = ps.value(pe.pos_embed);
  const Mat<double>& cls = ps.value(pe.cls_token);
  for (int j = 0; j < cfg.embed_dim; ++j)
    EXPECT_NEAR(out.at(0, j), cls.at(0, j) + pos.at(0, j), 1e-12);
  for (int n = 0; n < cfg.num_patches(); ++n)
    for (int j = 0; j < cfg.embed_dim; ++j) {
      double s = b.at(0, j);
      for (int k = 0; k < cfg.patch_dim(); ++k) s += patches.at(n, k) * w.at(k, j);
      EXPECT_NEAR(out.at(n + 1, j), s + pos.at(n + 1, j), 1e-6);
    }
}

TEST(EncoderLayer, ZeroWeightsIsResidualOnly) {
  // With all weights at zero the attention and MLP branches vanish, so the
  // block reduces to its residual path.
  ModelConfig cfg = tiny_config();
  ParamStore<double> ps;
  EncoderLayerParamIds layer = EncoderLayerParamIds::add_to(ps, "l", cfg);
  // Leave everything zero, including layer-norm scales.
  G g;
  Leaves<double> lv = Leaves<double>::make(g, ps);
  Rng rng = make_rng(34);
  Mat<double> x(cfg.num_tokens(), cfg.embed_dim);
  fill_uniform(x, rng, -1.0, 1.0);
  Var tokens = g.leaf(x);
  AttentionRecord<double> rec;
  Var out = encoder_layer(g, tokens, layer, lv, cfg, &rec, "test layer");
  for (size_t i = 0; i < x.size(); ++i) EXPECT_EQ(g.val(out).data[i], x.data[i]);
}

TEST(EncoderLayer, AttentionRowsSumToOne) {
  ModelConfig cfg = tiny_config();
  ParamStore<double> ps;
  EncoderLayerParamIds layer = EncoderLayerParamIds::add_to(ps, "l", cfg);
  ps.init(35);
  Rng rng = make_rng(36);
  for (int trial = 0; trial < 5; ++trial) {
    G g;
    Leaves<double> lv = Leaves<double>::make(g, ps);
    Mat<double> x(cfg.num_tokens(), cfg.embed_dim);
    fill_uniform(x, rng, -3.0, 3.0);
    AttentionRecord<double> rec;
    encoder_layer(g, g.leaf(x), layer, lv, cfg, &rec, "test layer");
    ASSERT_EQ(rec.heads.size(), static_cast<size_t>(cfg.num_heads));
    EXPECT_TRUE(rec.rows_normalized(1e-5));
  }
}

// Independent straight-line re-implementation of one pre-norm block on a
// 3-token toy (N_p=2, D=4, N_h=1), written with bare loops.
TEST(EncoderLayer, MatchesHandRolledToyOracle) {
  ModelConfig cfg;
  cfg.image_height = 8;
  cfg.image_width = 16;
  cfg.patch_size = 8;  // N_p = 2
  cfg.embed_dim = 4;
  cfg.fusion_dim = 4;
  cfg.num_heads = 1;
  cfg.backbone_layers = 1;
  cfg.select_k = 1;
  cfg.mlp_ratio = 2;
  ParamStore<double> ps;
  EncoderLayerParamIds layer = EncoderLayerParamIds::add_to(ps, "l", cfg);
  ps.init(37);
  Rng rng = make_rng(38);
  Mat<double> x(3, 4);
  fill_uniform(x, rng, -1.0, 1.0);

  G g;
  Leaves<double> lv = Leaves<double>::make(g, ps);
  AttentionRecord<double> rec;
  Var out = encoder_layer(g, g.leaf(x), layer, lv, cfg, &rec, "toy");
  const Mat<double>& got = g.val(out);

  auto ln = [&](const Mat<double>& in, const Mat<double>& gamma, const Mat<double>& beta) {
    Mat<double> y(in.rows, in.cols);
    for (int i = 0; i < in.rows; ++i) {
      double mean = 0, var = 0;
      for (int j = 0; j < in.cols; ++j) mean += in.at(i, j);
      mean /= in.cols;
      for (int j = 0; j < in.cols; ++j) var += (in.at(i, j) - mean) * (in.at(i, j) - mean);
      var /= in.cols;
      for (int j = 0; j < in.cols; ++j)
        y.at(i, j) = (in.at(i, j) - mean) / std::sqrt(var + kLayerNormEps) * gamma.at(0, j) +
                     beta.at(0, j);
    }
    return y;
  };
  auto mm_bias = [&](const Mat<double>& a, const Mat<double>& w, const Mat<double>& b) {
    Mat<double> y(a.rows, w.cols);
    for (int i = 0; i < a.rows; ++i)
      for (int j = 0; j < w.cols; ++j) {
        double s = b.at(0, j);
        for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * w.at(k, j);
        y.at(i, j) = s;
      }
    return y;
  };

  Mat<double> h = ln(x, ps.value(layer.ln1_g), ps.value(layer.ln1_b));
  Mat<double> q = mm_bias(h, ps.value(layer.wq), ps.value(layer.bq));
  Mat<double> k = mm_bias(h, ps.value(layer.wk), ps.value(layer.bk));
  Mat<double> v = mm_bias(h, ps.value(layer.wv), ps.value(layer.bv));
  // Single head, scaling sqrt(D / N_h) = 2.
  Mat<double> scores(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int c = 0; c < 4; ++c) s += q.at(i, c) * k.at(j, c);
      scores.at(i, j) = s / 2.0;
    }
  for (int i = 0; i < 3; ++i) {
    double mx = scores.at(i, 0);
    for (int j = 1; j < 3; ++j) mx = std::max(mx, scores.at(i, j));
    double z = 0;
    for (int j = 0; j < 3; ++j) z += std::exp(scores.at(i, j) - mx);
    for (int j = 0; j < 3; ++j) scores.at(i, j) = std::exp(scores.at(i, j) - mx) / z;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(scores.at(i, j), rec.heads[0].at(i, j), 1e-10);

  Mat<double> att(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 4; ++c) {
      double s = 0;
      for (int j = 0; j < 3; ++j) s += scores.at(i, j) * v.at(j, c);
      att.at(i, c) = s;
    }
  Mat<double> x1 = mm_bias(att, ps.value(layer.wo), ps.value(layer.bo));
  for (size_t i = 0; i < x1.size(); ++i) x1.data[i] += x.data[i];
  Mat<double> h2 = ln(x1, ps.value(layer.ln2_g), ps.value(layer.ln2_b));
  Mat<double> mid = mm_bias(h2, ps.value(layer.w1), ps.value(layer.b1));
  for (auto& vv : mid.data) vv = gelu_scalar(vv);
  Mat<double> mlp = mm_bias(mid, ps.value(layer.w2), ps.value(layer.b2));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      EXPECT_NEAR(got.at(i, j), x1.at(i, j) + mlp.at(i, j), 1e-5);
}

TEST(Backbone, ZeroLayersReturnsEmbeddedTokens) {
  ModelConfig cfg = tiny_config();
  cfg.backbone_layers = 0;
  ParamStore<double> ps;
  BackboneParamIds b = BackboneParamIds::add_to(ps, cfg);
  ps.init(40);
  Rng rng = make_rng(41);
  ImageTensor<double> img = random_image(16, 16, rng);

  G g;
  Leaves<double> lv = Leaves<double>::make(g, ps);
  std::vector<AttentionRecord<double>> recs;
  Var tokens = forward_backbone(g, img, b, lv, cfg, &recs);
  EXPECT_TRUE(recs.empty());

  G g2;
  Leaves<double> lv2 = Leaves<double>::make(g2, ps);
  Var expect = embed(g2, g2.leaf(patchify(img, cfg)), b.patch_embed, lv2);
  for (size_t i = 0; i < g.val(tokens).size(); ++i)
    EXPECT_EQ(g.val(tokens).data[i], g2.val(expect).data[i]);
}

TEST(Backbone, DeskShapeAndDeterminism) {
  ModelConfig cfg = ModelConfig::desk();
  ParamStore<double> ps;
  BackboneParamIds b = BackboneParamIds::add_to(ps, cfg);
  ps.init(42);
  Rng rng = make_rng(43);
  ImageTensor<double> img = random_image(64, 64, rng);

  auto run = [&]() {
    G g;
    Leaves<double> lv = Leaves<double>::make(g, ps);
    std::vector<AttentionRecord<double>> recs;
    Var t = forward_backbone(g, img, b, lv, cfg, &recs);
    EXPECT_EQ(recs.size(), 4u);
    return g.val(t);
  };
  Mat<double> a = run();
  EXPECT_EQ(a.rows, 65);
  EXPECT_EQ(a.cols, 64);
  Mat<double> c = run();
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data[i], c.data[i]);
}

// With positional embeddings zeroed, permuting the patch inputs permutes the
// patch-token outputs correspondingly and leaves the class token unchanged.
TEST(Backbone, PermutationEquivarianceWithoutPositions) {
  ModelConfig cfg = tiny_config();
  ParamStore<double> ps;
  BackboneParamIds b = BackboneParamIds::add_to(ps, cfg);
  ps.init(44);
  ps.value(b.patch_embed.pos_embed).zero();
  Rng rng = make_rng(45);
  Mat<double> patches(cfg.num_patches(), cfg.patch_dim());
  fill_uniform(patches, rng, -1.0, 1.0);
  const std::vector<int> perm = {2, 0, 3, 1};
  Mat<double> permuted(cfg.num_patches(), cfg.patch_dim());
  for (int n = 0; n < cfg.num_patches(); ++n)
    for (int j = 0; j < cfg.patch_dim(); ++j) permuted.at(n, j) = patches.at(perm[n], j);

  auto run = [&](const Mat<double>& p) {
    G g;
    Leaves<double> lv = Leaves<double>::make(g, ps);
    Var tokens = embed(g, g.leaf(p), b.patch_embed, lv);
    for (int i = 0; i < cfg.backbone_layers; ++i)
      tokens = encoder_layer(g, tokens, b.layers[i], lv, cfg, nullptr, "perm test");
    return g.val(tokens);
  };
  Mat<double> base = run(patches);
  Mat<double> shuf = run(permuted);
  for (int j = 0; j < cfg.embed_dim; ++j)
    EXPECT_NEAR(base.at(0, j), shuf.at(0, j), 1e-9);
  for (int n = 0; n < cfg.num_patches(); ++n)
    for (int j = 0; j < cfg.embed_dim; ++j)
      EXPECT_NEAR(shuf.at(n + 1, j), base.at(perm[n] + 1, j), 1e-9);
}

TEST(EncoderLayer, NonFiniteActivationsRaise) {
  ModelConfig cfg = tiny_config();
  ParamStore<double> ps;
  EncoderLayerParamIds layer = EncoderLayerParamIds::add_to(ps, "l", cfg);
  ps.init(46);
  G g;
  Leaves<double> lv = Leaves<double>::make(g, ps);
  Mat<double> x(cfg.num_tokens(), cfg.embed_dim);
  x.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(encoder_layer(g, g.leaf(x), layer, lv, cfg, nullptr, "backbone layer 3"),
               NumericError);
}

}  // namespace
