#pragma once

// Full model: shared backbone -> per-task encoder heads -> lesion selection
// -> cross-interaction fusion -> linear classifiers, plus the four-term
// training loss (CE on two disease outputs, BCE on body parts/attributes).

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtvit/backbone.hpp"
#include "mtvit/fusion.hpp"
#include "mtvit/lesion.hpp"

namespace mtvit {

struct LabelSet {
  int disease = 0;
  std::vector<uint8_t> body_parts;  // multi-hot, length n_b
  std::vector<uint8_t> attributes;  // multi-hot, length n_a

  void validate(const ModelConfig& cfg) const {
    if (disease < 0 || disease >= cfg.num_diseases)
      throw ConfigError("disease label out of range");
    if (static_cast<int>(body_parts.size()) != cfg.num_body_parts ||
        static_cast<int>(attributes.size()) != cfg.num_attributes)
      throw ConfigError("multi-hot label length mismatch");
    for (uint8_t v : body_parts)
      if (v > 1) throw ConfigError("body_parts entries must be 0/1");
    for (uint8_t v : attributes)
      if (v > 1) throw ConfigError("attributes entries must be 0/1");
  }
};

// Dense (possibly mixed) targets; this is what the loss consumes.
template <typename T>
struct SoftLabels {
  std::vector<T> disease;     // sums to 1
  std::vector<T> body_parts;  // entrywise in [0,1]
  std::vector<T> attributes;

  static SoftLabels from_hard(const LabelSet& y, const ModelConfig& cfg) {
    SoftLabels s;
    s.disease.assign(cfg.num_diseases, T(0));
    s.disease[y.disease] = T(1);
    s.body_parts.assign(y.body_parts.begin(), y.body_parts.end());
    s.attributes.assign(y.attributes.begin(), y.attributes.end());
    return s;
  }
};

template <typename T>
struct Prediction {
  std::vector<T> disease_logits_aux;    // head d (pre-fusion class token)
  std::vector<T> disease_logits_fused;  // head d' (fused concatenation)
  std::vector<T> body_part_logits;
  std::vector<T> attribute_logits;
  SelectionResult<T> selection_disease;
  SelectionResult<T> selection_attr;
  // Backbone layers first, then head layers in head order
  // (disease, body_part, attribute), head_layers each.
  std::vector<AttentionRecord<T>> attention;
};

template <typename T>
struct LossBreakdown {
  T disease_aux = 0;    // L_d
  T disease_fused = 0;  // L_d'
  T body = 0;           // L_b
  T attr = 0;           // L_a
  T total = 0;
};

template <typename T>
class Model {
 public:
  using Var = typename Graph<T>::Var;

  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    backbone_ = BackboneParamIds::add_to(params_, cfg_);
    for (Head h : cfg_.enabled_heads()) {
      auto& layers = head_layers_[static_cast<int>(h)];
      for (int i = 0; i < cfg_.head_layers; ++i)
        layers.push_back(EncoderLayerParamIds::add_to(
            params_, std::string("head.") + head_name(h) + ".l" + std::to_string(i), cfg_));
    }
    fusion_ = FusionParamIds::add_to(params_, cfg_);
    cls_aux_ = add_linear("cls.disease_aux", cfg_.fusion_dim, cfg_.num_diseases);
    cls_fused_ = add_linear("cls.disease", disease_vector_dim(), cfg_.num_diseases);
    if (cfg_.body_part_head)
      cls_body_ = add_linear("cls.body_part", body_vector_dim(), cfg_.num_body_parts);
    if (cfg_.attribute_head)
      cls_attr_ = add_linear("cls.attribute", attr_vector_dim(), cfg_.num_attributes);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  void init_params(uint64_t seed) { params_.init(seed); }

  int disease_vector_dim() const {
    const bool body = cfg_.body_part_head, attr = cfg_.attribute_head;
    int parts;
    if (cfg_.fusion_mode == FusionMode::cim)
      parts = (attr ? (body ? 2 : 1) : 1) + (cfg_.lsm_enabled ? 1 : 0);
    else
      parts = 1 + (body ? 1 : 0) + (attr ? 1 : 0) + (cfg_.lsm_enabled ? 1 : 0);
    return parts * cfg_.fusion_dim;
  }
  int body_vector_dim() const { return 2 * cfg_.fusion_dim; }
  int attr_vector_dim() const { return (2 + (cfg_.lsm_enabled ? 1 : 0)) * cfg_.fusion_dim; }

  Leaves<T> make_leaves(Graph<T>& g) const { return Leaves<T>::make(g, params_); }

  struct ForwardOptions {
    // Pinned selection indices, used by finite-difference probing to stay on
    // the smooth piece picked at the base point.
    const std::vector<int>* pinned_disease_selection = nullptr;
    const std::vector<int>* pinned_attr_selection = nullptr;
    // When false, only the records lesion selection needs are retained.
    bool keep_attention = true;
  };

  struct ForwardVars {
    Var disease_aux, disease_fused, body, attr;
    Prediction<T> pred;
  };

  ForwardVars forward(Graph<T>& g, const Leaves<T>& lv, const ImageTensor<T>& image,
                      const ForwardOptions& opt = {}) const {
    ForwardVars out;
    std::vector<AttentionRecord<T>>* backbone_records =
        opt.keep_attention ? &out.pred.attention : nullptr;
    Var tokens = forward_backbone(g, image, backbone_, lv, cfg_, backbone_records);

    std::optional<HeadFeaturesV<T>> feats[3];
    for (Head h : cfg_.enabled_heads()) {
      const int hi = static_cast<int>(h);
      Var ht = tokens;
      std::vector<AttentionRecord<T>> head_records;
      for (int i = 0; i < cfg_.head_layers; ++i) {
        head_records.push_back(AttentionRecord<T>{0, {}});
        ht = encoder_layer(g, ht, head_layers_[hi][i], lv, cfg_, &head_records.back(),
                           std::string(head_name(h)) + " head layer " + std::to_string(i));
      }
      HeadFeaturesV<T> f;
      f.class_token = g.slice_rows(ht, 0, 1);
      f.patch_tokens = g.slice_rows(ht, 1, cfg_.num_tokens());
      if (cfg_.lsm_enabled && (h == Head::disease || h == Head::attribute)) {
        const std::vector<int>* pinned = h == Head::disease
                                             ? opt.pinned_disease_selection
                                             : opt.pinned_attr_selection;
        SelectionResult<T> sel;
        if (pinned) {
          sel.indices = *pinned;
          sel.scores = head_scores(head_records);
        } else {
          sel = select_top_k(head_scores(head_records), cfg_.select_k);
        }
        f.local_token = g.mean_rows(g.gather_rows(ht, sel.indices));
        f.has_local = true;
        (h == Head::disease ? out.pred.selection_disease : out.pred.selection_attr) =
            std::move(sel);
      }
      feats[hi] = std::move(f);
      if (opt.keep_attention)
        for (auto& r : head_records) {
          r.layer_index = static_cast<int>(out.pred.attention.size());
          out.pred.attention.push_back(std::move(r));
        }
    }

    const HeadFeaturesV<T>& disease = *feats[0];
    out.disease_aux = linear(g, lv, disease.class_token, cls_aux_);

    FusedFeaturesV<T> fused;
    if (cfg_.fusion_mode == FusionMode::cim)
      fused = fuse_all(g, cfg_, fusion_, lv, disease, feats[1], feats[2]);
    TaskVectorsV<T> vecs =
        concat_for_heads(g, cfg_, fusion_, lv, disease, feats[1], feats[2], fused);

    out.disease_fused = linear(g, lv, vecs.disease, cls_fused_);
    out.pred.disease_logits_aux = row_vec(g.val(out.disease_aux));
    out.pred.disease_logits_fused = row_vec(g.val(out.disease_fused));
    if (cfg_.body_part_head) {
      out.body = linear(g, lv, vecs.body, cls_body_);
      out.pred.body_part_logits = row_vec(g.val(out.body));
    }
    if (cfg_.attribute_head) {
      out.attr = linear(g, lv, vecs.attr, cls_attr_);
      out.pred.attribute_logits = row_vec(g.val(out.attr));
    }
    return out;
  }

  struct SampleLossVars {
    Var d_aux, d_fused, body, attr;  // per-sample terms; invalid when head disabled
  };

  // Un-averaged per-sample loss terms: CE on both disease outputs, BCE on the
  // multi-label heads.
  SampleLossVars sample_losses(Graph<T>& g, const Leaves<T>& lv, const ImageTensor<T>& image,
                               const SoftLabels<T>& label,
                               const ForwardOptions& opt = {}) const {
    ForwardVars f = forward(g, lv, image, opt);
    SampleLossVars s;
    s.d_aux = g.ce_with_logits(f.disease_aux, to_row(label.disease));
    s.d_fused = g.ce_with_logits(f.disease_fused, to_row(label.disease));
    if (cfg_.body_part_head) s.body = g.bce_with_logits(f.body, to_row(label.body_parts));
    if (cfg_.attribute_head)
      s.attr = g.bce_with_logits(f.attr, to_row(label.attributes));
    return s;
  }

  struct BatchLossVars {
    Var d_aux, d_fused, body, attr;  // batch means; invalid when head disabled
    Var total;
  };

  // Mean-over-batch loss terms (CE for d and d', BCE for b and a) and their
  // sum. Images and labels must be the same length.
  BatchLossVars batch_loss(Graph<T>& g, const Leaves<T>& lv,
                           const std::vector<ImageTensor<T>>& images,
                           const std::vector<SoftLabels<T>>& labels,
                           const ForwardOptions& opt = {}) const {
    const int n = static_cast<int>(images.size());
    if (n < 1 || labels.size() != images.size())
      throw ConfigError("batch_loss: empty batch or image/label length mismatch");
    std::vector<Var> d_aux, d_fused, body, attr;
    for (int i = 0; i < n; ++i) {
      SampleLossVars s = sample_losses(g, lv, images[i], labels[i], opt);
      d_aux.push_back(s.d_aux);
      d_fused.push_back(s.d_fused);
      if (cfg_.body_part_head) body.push_back(s.body);
      if (cfg_.attribute_head) attr.push_back(s.attr);
    }
    const T inv = T(1) / T(n);
    BatchLossVars out;
    out.d_aux = g.scale(g.add_all(std::span<const Var>(d_aux)), inv);
    out.d_fused = g.scale(g.add_all(std::span<const Var>(d_fused)), inv);
    std::vector<Var> terms = {out.d_aux, out.d_fused};
    if (cfg_.body_part_head) {
      out.body = g.scale(g.add_all(std::span<const Var>(body)), inv);
      terms.push_back(out.body);
    }
    if (cfg_.attribute_head) {
      out.attr = g.scale(g.add_all(std::span<const Var>(attr)), inv);
      terms.push_back(out.attr);
    }
    out.total = g.add_all(std::span<const Var>(terms));
    return out;
  }

  LossBreakdown<T> read_breakdown(Graph<T>& g, const BatchLossVars& lv) const {
    LossBreakdown<T> b;
    b.disease_aux = g.val(lv.d_aux).at(0, 0);
    b.disease_fused = g.val(lv.d_fused).at(0, 0);
    if (cfg_.body_part_head) b.body = g.val(lv.body).at(0, 0);
    if (cfg_.attribute_head) b.attr = g.val(lv.attr).at(0, 0);
    b.total = g.val(lv.total).at(0, 0);
    return b;
  }

  // Forward without keeping the tape around.
  Prediction<T> predict(const ImageTensor<T>& image) const {
    Graph<T> g;
    Leaves<T> lv = make_leaves(g);
    return forward(g, lv, image).pred;
  }

 private:
  struct LinearIds {
    int w = -1, b = -1;
  };

  LinearIds add_linear(const std::string& name, int in, int out) {
    LinearIds l;
    l.w = params_.add(name + ".weight", in, out, ParamKind::weight);
    l.b = params_.add(name + ".bias", 1, out, ParamKind::bias);
    return l;
  }

  Var linear(Graph<T>& g, const Leaves<T>& lv, Var x, const LinearIds& l) const {
    return g.add_rowvec(g.matmul(x, lv[l.w]), lv[l.b]);
  }

  static std::vector<T> row_vec(const Mat<T>& m) {
    return std::vector<T>(m.data.begin(), m.data.end());
  }

  static Mat<T> to_row(const std::vector<T>& v) {
    Mat<T> m(1, static_cast<int>(v.size()));
    m.data = v;
    return m;
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  BackboneParamIds backbone_;
  std::vector<EncoderLayerParamIds> head_layers_[3];
  FusionParamIds fusion_;
  LinearIds cls_aux_, cls_fused_, cls_body_, cls_attr_;
};

// ---------------------------------------------------------------------------
// Inference output: ranked differential plus thresholded multi-label sets.

template <typename T>
struct Diagnosis {
  struct Ranked {
    int id;
    T prob;
  };
  std::vector<Ranked> differential;  // all diseases, descending probability
  std::vector<T> body_part_probs, attribute_probs;
  std::vector<int> body_parts, attributes;  // ids with prob >= threshold
  std::vector<int> selected_disease_tokens, selected_attr_tokens;
};

template <typename T>
std::vector<T> softmax_vec(const std::vector<T>& z) {
  Mat<T> m(1, static_cast<int>(z.size()));
  m.data = z;
  softmax_rows_inplace(m);
  return m.data;
}

template <typename T>
Diagnosis<T> infer(const Model<T>& model, const ImageTensor<T>& image,
                   T threshold = T(0.5)) {
  const Prediction<T> pred = model.predict(image);
  Diagnosis<T> d;
  const std::vector<T> probs = softmax_vec(pred.disease_logits_fused);
  for (int i = 0; i < static_cast<int>(probs.size()); ++i)
    d.differential.push_back({i, probs[i]});
  std::stable_sort(d.differential.begin(), d.differential.end(),
                   [](const auto& a, const auto& b) { return a.prob > b.prob; });
  auto sigmoid_all = [](const std::vector<T>& z) {
    std::vector<T> p(z.size());
    for (size_t i = 0; i < z.size(); ++i) p[i] = T(1) / (T(1) + std::exp(-z[i]));
    return p;
  };
  if (!pred.body_part_logits.empty()) {
    d.body_part_probs = sigmoid_all(pred.body_part_logits);
    for (int i = 0; i < static_cast<int>(d.body_part_probs.size()); ++i)
      if (d.body_part_probs[i] >= threshold) d.body_parts.push_back(i);
  }
  if (!pred.attribute_logits.empty()) {
    d.attribute_probs = sigmoid_all(pred.attribute_logits);
    for (int i = 0; i < static_cast<int>(d.attribute_probs.size()); ++i)
      if (d.attribute_probs[i] >= threshold) d.attributes.push_back(i);
  }
  d.selected_disease_tokens = pred.selection_disease.indices;
  d.selected_attr_tokens = pred.selection_attr.indices;
  return d;
}

// names[i] vectors are optional; ids are always emitted.
template <typename T>
nlohmann::json diagnosis_to_json(const Diagnosis<T>& d,
                                 const std::vector<std::string>* disease_names = nullptr,
                                 const std::vector<std::string>* body_names = nullptr,
                                 const std::vector<std::string>* attr_names = nullptr) {
  nlohmann::json j;
  j["differential"] = nlohmann::json::array();
  for (const auto& r : d.differential) {
    nlohmann::json e{{"id", r.id}, {"probability", r.prob}};
    if (disease_names && r.id < static_cast<int>(disease_names->size()))
      e["name"] = (*disease_names)[r.id];
    j["differential"].push_back(e);
  }
  auto multi = [](const std::vector<int>& ids, const std::vector<T>& probs,
                  const std::vector<std::string>* names) {
    nlohmann::json out;
    out["detected"] = ids;
    out["probabilities"] = probs;
    if (names) {
      std::vector<std::string> n;
      for (int id : ids)
        if (id < static_cast<int>(names->size())) n.push_back((*names)[id]);
      out["names"] = n;
    }
    return out;
  };
  if (!d.body_part_probs.empty()) j["body_parts"] = multi(d.body_parts, d.body_part_probs, body_names);
  if (!d.attribute_probs.empty()) j["attributes"] = multi(d.attributes, d.attribute_probs, attr_names);
  j["selected_tokens"] = {{"disease", d.selected_disease_tokens},
                          {"attribute", d.selected_attr_tokens}};
  return j;
}

}  // namespace mtvit
