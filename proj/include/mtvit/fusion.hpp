#pragma once

// Cross-interaction fusion of disease, body-part and attribute features.
// Each direction attends a class token (query) against one pooled vector
// (key/value). With a length-1 key sequence the per-head softmax weight is
// identically 1, so cross_attend(q, z) == LN(q) + linear(z W^V); the
// machinery is still built op by op, and the closed form is asserted in
// tests rather than substituted.

#include <optional>
#include <string>
#include <vector>

#include "mtvit/backbone.hpp"
#include "mtvit/config.hpp"
#include "mtvit/graph.hpp"

namespace mtvit {

struct CrossAttnParamIds {
  int wq, wk, wv, wo;
  int lnq_g, lnq_b;
  // Pooled-key layer norm; only allocated for directions that pool patch
  // tokens (local-token directions feed the partner token in raw).
  int lnk_g = -1, lnk_b = -1;

  template <typename T>
  static CrossAttnParamIds add_to(ParamStore<T>& ps, const std::string& prefix, int f,
                                  bool pooled_key_ln) {
    CrossAttnParamIds p;
    p.wq = ps.add(prefix + ".wq", f, f, ParamKind::weight);
    p.wk = ps.add(prefix + ".wk", f, f, ParamKind::weight);
    p.wv = ps.add(prefix + ".wv", f, f, ParamKind::weight);
    p.wo = ps.add(prefix + ".wo", f, f, ParamKind::weight);
    p.lnq_g = ps.add(prefix + ".lnq.gamma", 1, f, ParamKind::ln_gamma);
    p.lnq_b = ps.add(prefix + ".lnq.beta", 1, f, ParamKind::ln_beta);
    if (pooled_key_ln) {
      p.lnk_g = ps.add(prefix + ".lnk.gamma", 1, f, ParamKind::ln_gamma);
      p.lnk_b = ps.add(prefix + ".lnk.beta", 1, f, ParamKind::ln_beta);
    }
    return p;
  }
};

// z = LN(GAP(patch tokens)) using the direction's pooled-key norm.
template <typename T>
typename Graph<T>::Var pool_norm(Graph<T>& g, typename Graph<T>::Var patch_tokens,
                                 typename Graph<T>::Var ln_gamma,
                                 typename Graph<T>::Var ln_beta) {
  return g.layer_norm(g.mean_rows(patch_tokens), ln_gamma, ln_beta, T(kLayerNormEps));
}

// Multi-head cross attention of one query token against one pooled vector.
template <typename T>
typename Graph<T>::Var cross_attend(Graph<T>& g, typename Graph<T>::Var query,
                                    typename Graph<T>::Var pooled,
                                    const CrossAttnParamIds& p, const Leaves<T>& lv,
                                    int num_heads) {
  using Var = typename Graph<T>::Var;
  const int f = g.val(query).cols;
  if (f % num_heads != 0) throw ConfigError("fusion dim not divisible by head count");
  const int dh = f / num_heads;

  Var qn = g.layer_norm(query, lv[p.lnq_g], lv[p.lnq_b], T(kLayerNormEps));
  Var q = g.matmul(qn, lv[p.wq]);
  Var k = g.matmul(pooled, lv[p.wk]);
  Var v = g.matmul(pooled, lv[p.wv]);

  std::vector<Var> head_outs;
  head_outs.reserve(num_heads);
  for (int m = 0; m < num_heads; ++m) {
    const int c0 = m * dh, c1 = (m + 1) * dh;
    Var qm = g.slice_cols(q, c0, c1);
    Var km = g.slice_cols(k, c0, c1);
    Var vm = g.slice_cols(v, c0, c1);
    Var attn = g.softmax_rows(g.scale(g.matmul_nt(qm, km), T(1) / std::sqrt(T(dh))));
    head_outs.push_back(g.matmul(attn, vm));
  }
  Var merged = g.concat_cols(std::span<const Var>(head_outs));
  return g.add(qn, g.matmul(merged, lv[p.wo]));
}

// ---------------------------------------------------------------------------

template <typename T>
struct HeadFeaturesV {
  using Var = typename Graph<T>::Var;
  Var class_token;   // [1, F]
  Var patch_tokens;  // [N_p, F]
  Var local_token;   // [1, F]; only for disease/attribute heads with LSM on
  bool has_local = false;
};

// Fusion parameter set; which pieces exist depends on enabled heads, fusion
// mode and LSM.
struct FusionParamIds {
  // cim directions: <key source><query target> naming, e.g. bd = body->disease.
  std::optional<CrossAttnParamIds> bd, db, ad, da, local_ad, local_da;
  // concat-mode pooled-mean norms, one per source head.
  int pool_d_g = -1, pool_d_b = -1;
  int pool_b_g = -1, pool_b_b = -1;
  int pool_a_g = -1, pool_a_b = -1;

  template <typename T>
  static FusionParamIds add_to(ParamStore<T>& ps, const ModelConfig& cfg) {
    FusionParamIds fp;
    const int f = cfg.fusion_dim;
    const bool body = cfg.body_part_head;
    const bool attr = cfg.attribute_head;
    if (cfg.fusion_mode == FusionMode::cim) {
      if (body) {
        fp.bd = CrossAttnParamIds::add_to(ps, "cim.body_to_disease", f, true);
        fp.db = CrossAttnParamIds::add_to(ps, "cim.disease_to_body", f, true);
      }
      if (attr) {
        fp.ad = CrossAttnParamIds::add_to(ps, "cim.attr_to_disease", f, true);
        fp.da = CrossAttnParamIds::add_to(ps, "cim.disease_to_attr", f, true);
        if (cfg.lsm_enabled) {
          fp.local_ad = CrossAttnParamIds::add_to(ps, "cim.local_attr_to_disease", f, false);
          fp.local_da = CrossAttnParamIds::add_to(ps, "cim.local_disease_to_attr", f, false);
        }
      }
    } else {
      if (body || attr) {
        fp.pool_d_g = ps.add("concat_pool.disease.gamma", 1, f, ParamKind::ln_gamma);
        fp.pool_d_b = ps.add("concat_pool.disease.beta", 1, f, ParamKind::ln_beta);
      }
      if (body) {
        fp.pool_b_g = ps.add("concat_pool.body.gamma", 1, f, ParamKind::ln_gamma);
        fp.pool_b_b = ps.add("concat_pool.body.beta", 1, f, ParamKind::ln_beta);
      }
      if (attr) {
        fp.pool_a_g = ps.add("concat_pool.attr.gamma", 1, f, ParamKind::ln_gamma);
        fp.pool_a_b = ps.add("concat_pool.attr.beta", 1, f, ParamKind::ln_beta);
      }
    }
    return fp;
  }
};

template <typename T>
struct FusedFeaturesV {
  using Var = typename Graph<T>::Var;
  Var g_d_from_b, g_b_from_d;  // step 1
  Var g_d_from_a, g_a_from_d;  // step 2 (disease query replaced by g_d_from_b)
  Var l_d_from_a, l_a_from_d;  // local-token fusion
  bool has_body = false, has_attr = false, has_local = false;
};

// Pooled cross-attention fusion. Order is semantic: body enhances the
// disease token first, and the enhanced token is what attends to attributes.
template <typename T>
FusedFeaturesV<T> fuse_all(Graph<T>& g, const ModelConfig& cfg, const FusionParamIds& fp,
                           const Leaves<T>& lv, const HeadFeaturesV<T>& disease,
                           const std::optional<HeadFeaturesV<T>>& body,
                           const std::optional<HeadFeaturesV<T>>& attr) {
  using Var = typename Graph<T>::Var;
  const int nh = cfg.num_heads;
  FusedFeaturesV<T> out;

  Var disease_query = disease.class_token;
  if (body) {
    Var z_b = pool_norm(g, body->patch_tokens, lv[fp.bd->lnk_g], lv[fp.bd->lnk_b]);
    out.g_d_from_b = cross_attend(g, disease.class_token, z_b, *fp.bd, lv, nh);
    Var z_d = pool_norm(g, disease.patch_tokens, lv[fp.db->lnk_g], lv[fp.db->lnk_b]);
    out.g_b_from_d = cross_attend(g, body->class_token, z_d, *fp.db, lv, nh);
    out.has_body = true;
    disease_query = out.g_d_from_b;  // replacement for later computations
  }
  if (attr) {
    Var z_a = pool_norm(g, attr->patch_tokens, lv[fp.ad->lnk_g], lv[fp.ad->lnk_b]);
    out.g_d_from_a = cross_attend(g, disease_query, z_a, *fp.ad, lv, nh);
    Var z_d = pool_norm(g, disease.patch_tokens, lv[fp.da->lnk_g], lv[fp.da->lnk_b]);
    out.g_a_from_d = cross_attend(g, attr->class_token, z_d, *fp.da, lv, nh);
    out.has_attr = true;
    if (disease.has_local && attr->has_local) {
      out.l_d_from_a = cross_attend(g, disease.local_token, attr->local_token,
                                    *fp.local_ad, lv, nh);
      out.l_a_from_d = cross_attend(g, attr->local_token, disease.local_token,
                                    *fp.local_da, lv, nh);
      out.has_local = true;
    }
  }
  return out;
}

template <typename T>
struct TaskVectorsV {
  using Var = typename Graph<T>::Var;
  Var disease;  // always valid
  Var body;     // valid when the body head is enabled
  Var attr;     // valid when the attribute head is enabled
};

// Concatenation recipes feeding the final classifiers.
//
// cim: disease <- (g_D^A, g_D^B, l_D^A present pieces; raw l_D when it has no
// fusion partner; bare g_D when nothing fused), body <- (g_B, g_B^D),
// attribute <- (g_A, g_A^D, l_A^D).
//
// concat ablation: plain concatenation of class tokens, LN'd pooled patch
// means of the other heads, and own local token; no cross-attention.
template <typename T>
TaskVectorsV<T> concat_for_heads(Graph<T>& g, const ModelConfig& cfg,
                                 const FusionParamIds& fp, const Leaves<T>& lv,
                                 const HeadFeaturesV<T>& disease,
                                 const std::optional<HeadFeaturesV<T>>& body,
                                 const std::optional<HeadFeaturesV<T>>& attr,
                                 const FusedFeaturesV<T>& fused) {
  using Var = typename Graph<T>::Var;
  TaskVectorsV<T> out;

  if (cfg.fusion_mode == FusionMode::cim) {
    // Class-token piece: the end of the replacement chain (g_D^A when the
    // attribute head fused, else g_D^B, else raw g_D), plus g_D^B when it is
    // not already the chain end, plus the local piece.
    std::vector<Var> d_parts;
    if (fused.has_attr) {
      d_parts.push_back(fused.g_d_from_a);
      if (fused.has_body) d_parts.push_back(fused.g_d_from_b);
    } else if (fused.has_body) {
      d_parts.push_back(fused.g_d_from_b);
    } else {
      d_parts.push_back(disease.class_token);
    }
    if (fused.has_local)
      d_parts.push_back(fused.l_d_from_a);
    else if (disease.has_local)
      d_parts.push_back(disease.local_token);
    out.disease = d_parts.size() == 1 ? d_parts[0]
                                      : g.concat_cols(std::span<const Var>(d_parts));

    if (body) {
      const Var b_parts[] = {body->class_token, fused.g_b_from_d};
      out.body = g.concat_cols(b_parts);
    }
    if (attr) {
      std::vector<Var> a_parts = {attr->class_token, fused.g_a_from_d};
      if (fused.has_local) a_parts.push_back(fused.l_a_from_d);
      out.attr = g.concat_cols(std::span<const Var>(a_parts));
    }
  } else {
    std::vector<Var> d_parts = {disease.class_token};
    if (body) d_parts.push_back(pool_norm(g, body->patch_tokens, lv[fp.pool_b_g], lv[fp.pool_b_b]));
    if (attr) d_parts.push_back(pool_norm(g, attr->patch_tokens, lv[fp.pool_a_g], lv[fp.pool_a_b]));
    if (disease.has_local) d_parts.push_back(disease.local_token);
    out.disease = d_parts.size() == 1 ? d_parts[0]
                                      : g.concat_cols(std::span<const Var>(d_parts));
    if (body) {
      const Var b_parts[] = {
          body->class_token,
          pool_norm(g, disease.patch_tokens, lv[fp.pool_d_g], lv[fp.pool_d_b])};
      out.body = g.concat_cols(b_parts);
    }
    if (attr) {
      std::vector<Var> a_parts = {
          attr->class_token,
          pool_norm(g, disease.patch_tokens, lv[fp.pool_d_g], lv[fp.pool_d_b])};
      if (attr->has_local) a_parts.push_back(attr->local_token);
      out.attr = g.concat_cols(std::span<const Var>(a_parts));
    }
  }
  return out;
}

}  // namespace mtvit
