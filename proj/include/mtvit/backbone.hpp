#pragma once

// Patch embedding, positional embedding, class token and pre-norm transformer
// encoder layers. Layers run on the autodiff graph and expose their
// post-softmax attention matrices for lesion selection and visualisation.

#include <string>
#include <vector>

#include "mtvit/config.hpp"
#include "mtvit/graph.hpp"
#include "mtvit/image.hpp"
#include "mtvit/params.hpp"

namespace mtvit {

inline constexpr double kLayerNormEps = 1e-5;

// Per-layer, per-head post-softmax attention, each (N_p+1) x (N_p+1).
template <typename T>
struct AttentionRecord {
  int layer_index = 0;
  std::vector<Mat<T>> heads;

  // Every row of every head must sum to 1 (post-softmax).
  bool rows_normalized(T tol = T(1e-5)) const {
    for (const auto& m : heads) {
      for (int i = 0; i < m.rows; ++i) {
        T s = 0;
        for (int j = 0; j < m.cols; ++j) {
          if (m.at(i, j) < T(0)) return false;
          s += m.at(i, j);
        }
        if (std::abs(s - T(1)) > tol) return false;
      }
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Patchify: row-major patch order (top-left to bottom-right), each patch
// flattened as (py, px, c). Exact inverse provided.

template <typename T>
Mat<T> patchify(const ImageTensor<T>& image, const ModelConfig& cfg) {
  if (image.height != cfg.image_height || image.width != cfg.image_width)
    throw ConfigError("image dimensions do not match the model config");
  const int P = cfg.patch_size;
  const int gy = cfg.grid_rows(), gx = cfg.grid_cols();
  Mat<T> out(cfg.num_patches(), cfg.patch_dim());
  for (int by = 0; by < gy; ++by)
    for (int bx = 0; bx < gx; ++bx) {
      T* dst = out.row(by * gx + bx);
      int k = 0;
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          for (int c = 0; c < 3; ++c) dst[k++] = image.at(by * P + py, bx * P + px, c);
    }
  return out;
}

template <typename T>
ImageTensor<T> unpatchify(const Mat<T>& patches, const ModelConfig& cfg) {
  if (patches.rows != cfg.num_patches() || patches.cols != cfg.patch_dim())
    throw ConfigError("patch matrix does not match the model config");
  const int P = cfg.patch_size;
  const int gx = cfg.grid_cols();
  ImageTensor<T> img(cfg.image_height, cfg.image_width);
  for (int n = 0; n < patches.rows; ++n) {
    const int by = n / gx, bx = n % gx;
    const T* src = patches.row(n);
    int k = 0;
    for (int py = 0; py < P; ++py)
      for (int px = 0; px < P; ++px)
        for (int c = 0; c < 3; ++c) img.at(by * P + py, bx * P + px, c) = src[k++];
  }
  return img;
}

// ---------------------------------------------------------------------------
// Parameter-id bundles. Construction registers tensors into the store;
// the ids later resolve to graph leaves.

struct EncoderLayerParamIds {
  int ln1_g, ln1_b;
  int wq, bq, wk, bk, wv, bv, wo, bo;
  int ln2_g, ln2_b;
  int w1, b1, w2, b2;

  template <typename T>
  static EncoderLayerParamIds add_to(ParamStore<T>& ps, const std::string& prefix,
                                     const ModelConfig& cfg) {
    const int d = cfg.embed_dim;
    const int hidden = cfg.mlp_ratio * d;
    EncoderLayerParamIds p;
    p.ln1_g = ps.add(prefix + ".ln1.gamma", 1, d, ParamKind::ln_gamma);
    p.ln1_b = ps.add(prefix + ".ln1.beta", 1, d, ParamKind::ln_beta);
    p.wq = ps.add(prefix + ".attn.wq", d, d, ParamKind::weight);
    p.bq = ps.add(prefix + ".attn.bq", 1, d, ParamKind::bias);
    p.wk = ps.add(prefix + ".attn.wk", d, d, ParamKind::weight);
    p.bk = ps.add(prefix + ".attn.bk", 1, d, ParamKind::bias);
    p.wv = ps.add(prefix + ".attn.wv", d, d, ParamKind::weight);
    p.bv = ps.add(prefix + ".attn.bv", 1, d, ParamKind::bias);
    p.wo = ps.add(prefix + ".attn.wo", d, d, ParamKind::weight);
    p.bo = ps.add(prefix + ".attn.bo", 1, d, ParamKind::bias);
    p.ln2_g = ps.add(prefix + ".ln2.gamma", 1, d, ParamKind::ln_gamma);
    p.ln2_b = ps.add(prefix + ".ln2.beta", 1, d, ParamKind::ln_beta);
    p.w1 = ps.add(prefix + ".mlp.w1", d, hidden, ParamKind::weight);
    p.b1 = ps.add(prefix + ".mlp.b1", 1, hidden, ParamKind::bias);
    p.w2 = ps.add(prefix + ".mlp.w2", hidden, d, ParamKind::weight);
    p.b2 = ps.add(prefix + ".mlp.b2", 1, d, ParamKind::bias);
    return p;
  }
};

struct PatchEmbedParamIds {
  int proj_w, proj_b, pos_embed, cls_token;

  template <typename T>
  static PatchEmbedParamIds add_to(ParamStore<T>& ps, const ModelConfig& cfg) {
    PatchEmbedParamIds p;
    p.proj_w = ps.add("patch_embed.weight", cfg.patch_dim(), cfg.embed_dim, ParamKind::weight);
    p.proj_b = ps.add("patch_embed.bias", 1, cfg.embed_dim, ParamKind::bias);
    p.pos_embed = ps.add("pos_embed", cfg.num_tokens(), cfg.embed_dim, ParamKind::pos_embed);
    p.cls_token = ps.add("cls_token", 1, cfg.embed_dim, ParamKind::cls_token);
    return p;
  }
};

// Graph leaves for every parameter, created once per tape.
template <typename T>
struct Leaves {
  std::vector<typename Graph<T>::Var> vars;

  static Leaves make(Graph<T>& g, const ParamStore<T>& ps) {
    Leaves l;
    l.vars.reserve(ps.count());
    for (size_t i = 0; i < ps.count(); ++i)
      l.vars.push_back(g.leaf(ps.value(static_cast<int>(i))));
    return l;
  }

  typename Graph<T>::Var operator[](int param_id) const { return vars[param_id]; }

  // After backward(): pull d(loss)/d(param) off the tape.
  void accumulate_grads(Graph<T>& g, ParamStore<T>& ps, T scale = T(1)) const {
    for (size_t i = 0; i < vars.size(); ++i) {
      const Mat<T>& gsrc = g.grad(vars[i]);
      Mat<T>& gdst = ps.grad(static_cast<int>(i));
      for (size_t k = 0; k < gdst.size(); ++k) gdst.data[k] += scale * gsrc.data[k];
    }
  }
};

// ---------------------------------------------------------------------------
// Ops.

// Class token + projected patches + positional embeddings -> (N_p+1) x D.
template <typename T>
typename Graph<T>::Var embed(Graph<T>& g, typename Graph<T>::Var patches,
                             const PatchEmbedParamIds& p, const Leaves<T>& lv) {
  using Var = typename Graph<T>::Var;
  Var projected = g.add_rowvec(g.matmul(patches, lv[p.proj_w]), lv[p.proj_b]);
  const Var parts[] = {lv[p.cls_token], projected};
  Var tokens = g.concat_rows(parts);
  return g.add(tokens, lv[p.pos_embed]);
}

// Pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)). Per-head
// attention softmax(Q K^T / sqrt(D/N_h)) is copied into `record`.
template <typename T>
typename Graph<T>::Var encoder_layer(Graph<T>& g, typename Graph<T>::Var tokens,
                                     const EncoderLayerParamIds& p, const Leaves<T>& lv,
                                     const ModelConfig& cfg, AttentionRecord<T>* record,
                                     const std::string& layer_name) {
  using Var = typename Graph<T>::Var;
  const int dh = cfg.head_dim();
  const T eps = T(kLayerNormEps);

  Var h = g.layer_norm(tokens, lv[p.ln1_g], lv[p.ln1_b], eps);
  Var q = g.add_rowvec(g.matmul(h, lv[p.wq]), lv[p.bq]);
  Var k = g.add_rowvec(g.matmul(h, lv[p.wk]), lv[p.bk]);
  Var v = g.add_rowvec(g.matmul(h, lv[p.wv]), lv[p.bv]);

  std::vector<Var> head_outs;
  head_outs.reserve(cfg.num_heads);
  for (int m = 0; m < cfg.num_heads; ++m) {
    const int c0 = m * dh, c1 = (m + 1) * dh;
    Var qm = g.slice_cols(q, c0, c1);
    Var km = g.slice_cols(k, c0, c1);
    Var vm = g.slice_cols(v, c0, c1);
    Var scores = g.scale(g.matmul_nt(qm, km), T(1) / std::sqrt(T(dh)));
    Var attn = g.softmax_rows(scores);
    if (record) record->heads.push_back(g.val(attn));
    head_outs.push_back(g.matmul(attn, vm));
  }
  Var merged = g.concat_cols(std::span<const Var>(head_outs));
  Var attn_out = g.add_rowvec(g.matmul(merged, lv[p.wo]), lv[p.bo]);
  Var x1 = g.add(tokens, attn_out);

  Var h2 = g.layer_norm(x1, lv[p.ln2_g], lv[p.ln2_b], eps);
  Var mlp = g.add_rowvec(
      g.matmul(g.gelu(g.add_rowvec(g.matmul(h2, lv[p.w1]), lv[p.b1])), lv[p.w2]), lv[p.b2]);
  Var out = g.add(x1, mlp);

  if (!g.val(out).all_finite())
    throw NumericError("non-finite activations in " + layer_name);
  return out;
}

// Shared backbone parameter set: patch embedding + L encoder layers.
struct BackboneParamIds {
  PatchEmbedParamIds patch_embed;
  std::vector<EncoderLayerParamIds> layers;

  template <typename T>
  static BackboneParamIds add_to(ParamStore<T>& ps, const ModelConfig& cfg) {
    BackboneParamIds b;
    b.patch_embed = PatchEmbedParamIds::add_to(ps, cfg);
    for (int i = 0; i < cfg.backbone_layers; ++i)
      b.layers.push_back(
          EncoderLayerParamIds::add_to(ps, "backbone.l" + std::to_string(i), cfg));
    return b;
  }
};

// patchify -> embed -> L encoder layers. Returns the final token sequence and
// appends the L attention records.
template <typename T>
typename Graph<T>::Var forward_backbone(Graph<T>& g, const ImageTensor<T>& image,
                                        const BackboneParamIds& b, const Leaves<T>& lv,
                                        const ModelConfig& cfg,
                                        std::vector<AttentionRecord<T>>* records) {
  using Var = typename Graph<T>::Var;
  Var patches = g.leaf(patchify(image, cfg));
  Var tokens = embed(g, patches, b.patch_embed, lv);
  for (int i = 0; i < cfg.backbone_layers; ++i) {
    AttentionRecord<T>* rec = nullptr;
    if (records) {
      records->push_back(AttentionRecord<T>{static_cast<int>(records->size()), {}});
      rec = &records->back();
    }
    tokens = encoder_layer(g, tokens, b.layers[i], lv, cfg, rec,
                           "backbone layer " + std::to_string(i));
  }
  return tokens;
}

}  // namespace mtvit
