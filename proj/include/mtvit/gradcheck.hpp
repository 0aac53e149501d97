#pragma once

// Central finite-difference verification of the analytic gradients. The FD
// side evaluates the loss by plain forward passes only, so it is independent
// of every backward() implementation it checks. Lesion-selection indices are
// pinned at the base point: gradients are defined through the gathered token
// values, not through the discrete index choice, so FD must probe within the
// smooth piece selected there.

#include <string>
#include <vector>

#include "mtvit/model.hpp"
#include "mtvit/rng.hpp"
#include "mtvit/threads.hpp"

namespace mtvit {

template <typename T>
struct GradCheckReport {
  struct TensorStat {
    std::string name;
    T max_rel_err = 0;
    int probes = 0;
  };
  std::vector<TensorStat> tensors;
  T max_rel_err = 0;
  std::string worst_tensor;

  bool ok(T tol) const { return max_rel_err < tol; }
};

// Relative error with a small-denominator guard: |a-b| / max(|a|, |b|,
// floor). The floor keeps finite-difference roundoff on near-zero gradients
// from registering as spurious relative error; genuine backward bugs surface
// on entries of ordinary magnitude.
template <typename T>
T rel_err(T a, T b, T floor_ = T(1e-3)) {
  const T denom = std::max(std::max(std::abs(a), std::abs(b)), floor_);
  return std::abs(a - b) / denom;
}

template <typename T>
GradCheckReport<T> gradcheck_model(Model<T>& model, const ImageTensor<T>& image,
                                   const SoftLabels<T>& label, int probes_per_tensor,
                                   T fd_step, uint64_t seed, int threads = 1) {
  using Opt = typename Model<T>::ForwardOptions;

  // Pin the top-K choices made at the base point.
  const Prediction<T> base = model.predict(image);
  const std::vector<int> pin_d = base.selection_disease.indices;
  const std::vector<int> pin_a = base.selection_attr.indices;
  auto make_opt = [&]() {
    Opt o;
    o.keep_attention = false;
    if (!pin_d.empty()) o.pinned_disease_selection = &pin_d;
    if (!pin_a.empty()) o.pinned_attr_selection = &pin_a;
    return o;
  };

  const std::vector<ImageTensor<T>> images = {image};
  const std::vector<SoftLabels<T>> labels = {label};

  // Analytic gradients.
  ParamStore<T>& ps = model.params();
  ps.zero_grads();
  {
    Graph<T> g;
    Leaves<T> lv = model.make_leaves(g);
    const Opt o = make_opt();
    auto loss = model.batch_loss(g, lv, images, labels, o);
    g.backward(loss.total);
    lv.accumulate_grads(g, ps);
  }
  std::vector<Mat<T>> analytic;
  for (size_t i = 0; i < ps.count(); ++i) analytic.push_back(ps.entry(static_cast<int>(i)).grad);

  // Probe plan: `probes_per_tensor` distinct entries per tensor.
  struct Probe {
    int tensor;
    size_t entry;
  };
  std::vector<Probe> probes;
  Rng rng = make_rng(seed, 0x66646b);
  for (size_t t = 0; t < ps.count(); ++t) {
    const size_t n = ps.value(static_cast<int>(t)).size();
    const int want = std::min<int>(probes_per_tensor, static_cast<int>(n));
    std::vector<size_t> picked;
    while (static_cast<int>(picked.size()) < want) {
      const size_t e = std::uniform_int_distribution<size_t>(0, n - 1)(rng);
      if (std::find(picked.begin(), picked.end(), e) == picked.end()) picked.push_back(e);
    }
    for (size_t e : picked) probes.push_back({static_cast<int>(t), e});
  }

  // FD probes are pure forward evaluations on private weight copies, so they
  // parallelise freely.
  std::vector<T> fd_vals(probes.size());
  parallel_shards(static_cast<int>(probes.size()), threads, [&](int, int lo, int hi) {
    Model<T> local(model.config());
    for (size_t t = 0; t < ps.count(); ++t)
      local.params().value(static_cast<int>(t)) = ps.value(static_cast<int>(t));
    auto eval_loss = [&]() {
      Graph<T> g;
      Leaves<T> lv = local.make_leaves(g);
      const Opt o = make_opt();
      auto loss = local.batch_loss(g, lv, images, labels, o);
      return g.val(loss.total).at(0, 0);
    };
    for (int p = lo; p < hi; ++p) {
      T& w = local.params().value(probes[p].tensor).data[probes[p].entry];
      const T saved = w;
      w = saved + fd_step;
      const T up = eval_loss();
      w = saved - fd_step;
      const T down = eval_loss();
      w = saved;
      fd_vals[p] = (up - down) / (2 * fd_step);
    }
  });

  GradCheckReport<T> report;
  report.tensors.resize(ps.count());
  for (size_t t = 0; t < ps.count(); ++t)
    report.tensors[t].name = ps.entry(static_cast<int>(t)).name;
  for (size_t p = 0; p < probes.size(); ++p) {
    const int t = probes[p].tensor;
    const T a = analytic[t].data[probes[p].entry];
    const T e = rel_err(a, fd_vals[p]);
    report.tensors[t].probes++;
    report.tensors[t].max_rel_err = std::max(report.tensors[t].max_rel_err, e);
    if (e > report.max_rel_err) {
      report.max_rel_err = e;
      report.worst_tensor = report.tensors[t].name;
    }
  }
  return report;
}

}  // namespace mtvit
