#pragma once

// Training loop (SGD with momentum), evaluation and the cross-validation
// driver. One training thread owns the weights; batch items are sharded
// across worker threads and their gradients are reduced in shard order, so a
// fixed (seed, config, data, thread count) tuple reproduces bit-identical
// checkpoints. Per-epoch RNG streams are derived from (seed, epoch), which is
// what makes resume-from-checkpoint equal uninterrupted training.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtvit/data.hpp"
#include "mtvit/metrics.hpp"
#include "mtvit/model.hpp"
#include "mtvit/optim.hpp"
#include "mtvit/threads.hpp"

namespace mtvit {

struct TrainConfig {
  double lr = 0.003;
  double momentum = 0.95;
  double weight_decay = 1e-5;
  int epochs = 30;
  int batch_size = 16;
  long max_steps = 0;  // 0 = no cap
  double cutmix_prob = 0.5;
  double cutmix_alpha = 0.3;
  bool hflip = false;
  std::string lr_schedule = "constant";  // or "cosine"
  int threads = 1;
  uint64_t seed = 42;

  void validate() const {
    if (lr <= 0 || momentum < 0 || weight_decay < 0)
      throw ConfigError("optimizer hyperparameters out of range");
    if (epochs < 0 || batch_size < 1 || max_steps < 0 || threads < 1)
      throw ConfigError("training schedule out of range");
    if (cutmix_prob < 0 || cutmix_prob > 1 || cutmix_alpha <= 0)
      throw ConfigError("cutmix parameters out of range");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
      throw ConfigError("lr_schedule must be \"constant\" or \"cosine\"");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"max_steps", c.max_steps},
                     {"cutmix_prob", c.cutmix_prob},
                     {"cutmix_alpha", c.cutmix_alpha},
                     {"hflip", c.hflip},
                     {"lr_schedule", c.lr_schedule},
                     {"threads", c.threads},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).template get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  get("momentum", c.momentum);
  get("weight_decay", c.weight_decay);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("max_steps", c.max_steps);
  get("cutmix_prob", c.cutmix_prob);
  get("cutmix_alpha", c.cutmix_alpha);
  get("hflip", c.hflip);
  get("lr_schedule", c.lr_schedule);
  get("threads", c.threads);
  get("seed", c.seed);
}

// ---------------------------------------------------------------------------
// Batch gradients: shards of samples run on private tapes in parallel; the
// shard gradients are reduced in shard order afterwards.

template <typename T>
LossBreakdown<T> compute_batch_gradients(Model<T>& model, const Batch<T>& batch,
                                         int threads) {
  const int n = static_cast<int>(batch.size());
  if (n < 1) throw ConfigError("empty batch");
  struct Shard {
    std::unique_ptr<Graph<T>> graph;
    Leaves<T> leaves;
    typename Graph<T>::Var total;
    LossBreakdown<T> sums;  // per-shard term sums (un-averaged)
  };
  const int shards = std::max(1, std::min(threads, n));
  std::vector<Shard> work(shards);
  parallel_shards(n, shards, [&](int t, int lo, int hi) {
    Shard& sh = work[t];
    sh.graph = std::make_unique<Graph<T>>();
    Graph<T>& g = *sh.graph;
    sh.leaves = model.make_leaves(g);
    typename Model<T>::ForwardOptions opt;
    opt.keep_attention = false;
    std::vector<typename Graph<T>::Var> terms;
    for (int i = lo; i < hi; ++i) {
      auto s = model.sample_losses(g, sh.leaves, batch.images[i], batch.labels[i], opt);
      terms.push_back(s.d_aux);
      terms.push_back(s.d_fused);
      sh.sums.disease_aux += g.val(s.d_aux).at(0, 0);
      sh.sums.disease_fused += g.val(s.d_fused).at(0, 0);
      if (s.body.valid()) {
        terms.push_back(s.body);
        sh.sums.body += g.val(s.body).at(0, 0);
      }
      if (s.attr.valid()) {
        terms.push_back(s.attr);
        sh.sums.attr += g.val(s.attr).at(0, 0);
      }
    }
    sh.total = g.add_all(std::span<const typename Graph<T>::Var>(terms));
    g.backward(sh.total);
  });
  const T inv = T(1) / T(n);
  LossBreakdown<T> out;
  for (Shard& sh : work) {
    sh.leaves.accumulate_grads(*sh.graph, model.params(), inv);
    out.disease_aux += inv * sh.sums.disease_aux;
    out.disease_fused += inv * sh.sums.disease_fused;
    out.body += inv * sh.sums.body;
    out.attr += inv * sh.sums.attr;
  }
  out.total = out.disease_aux + out.disease_fused + out.body + out.attr;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation: hard predictions on a split, reduced to metrics.

template <typename T>
MetricsReport evaluate_model(const Model<T>& model, const Dataset<T>& ds,
                             const std::vector<int>& indices, int threads = 1,
                             T threshold = T(0.5)) {
  const ModelConfig& cfg = model.config();
  const int n = static_cast<int>(indices.size());
  if (n == 0) throw ConfigError("evaluate_model: empty split");
  std::vector<int> d_true(n), d_pred(n);
  std::vector<std::vector<uint8_t>> b_true(n), b_pred(n), a_true(n), a_pred(n);
  parallel_shards(n, threads, [&](int, int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const Sample<T>& s = ds.samples[indices[i]];
      const Prediction<T> pred = model.predict(s.image);
      d_true[i] = s.label.disease;
      int best = 0;
      for (size_t j = 1; j < pred.disease_logits_fused.size(); ++j)
        if (pred.disease_logits_fused[j] > pred.disease_logits_fused[best])
          best = static_cast<int>(j);
      d_pred[i] = best;
      if (cfg.body_part_head) {
        b_true[i] = s.label.body_parts;
        b_pred[i].assign(cfg.num_body_parts, 0);
        for (int j = 0; j < cfg.num_body_parts; ++j) {
          const T p = T(1) / (T(1) + std::exp(-pred.body_part_logits[j]));
          b_pred[i][j] = p >= threshold ? 1 : 0;
        }
      }
      if (cfg.attribute_head) {
        a_true[i] = s.label.attributes;
        a_pred[i].assign(cfg.num_attributes, 0);
        for (int j = 0; j < cfg.num_attributes; ++j) {
          const T p = T(1) / (T(1) + std::exp(-pred.attribute_logits[j]));
          a_pred[i][j] = p >= threshold ? 1 : 0;
        }
      }
    }
  });
  MetricsReport report;
  report.disease = compute_disease_metrics(d_true, d_pred, cfg.num_diseases);
  if (cfg.body_part_head) {
    report.has_body = true;
    report.body = compute_multilabel_metrics(b_true, b_pred, cfg.num_body_parts);
  }
  if (cfg.attribute_head) {
    report.has_attr = true;
    report.attr = compute_multilabel_metrics(a_true, a_pred, cfg.num_attributes);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainResult {
  long steps = 0;
  int epochs_done = 0;
  double best_val_f1 = -1;
  int best_epoch = -1;
  LossBreakdown<float> last_epoch_loss;
  std::vector<nlohmann::json> log;  // one entry per epoch
  bool has_val = false;
  MetricsReport last_val;
};

inline nlohmann::json loss_to_json(const LossBreakdown<float>& l) {
  return nlohmann::json{{"disease_aux", l.disease_aux},
                        {"disease_fused", l.disease_fused},
                        {"body", l.body},
                        {"attr", l.attr},
                        {"total", l.total}};
}

// Trains in place. When out_dir is non-empty, writes log.jsonl plus `last/`
// (always, resumable) and `best/` (highest val disease F1) checkpoints.
// resume_from must point at a previous `last/` directory.
inline TrainResult train_model(Model<float>& model, const Dataset<float>& ds,
                               const std::vector<int>& train_idx,
                               const std::vector<int>& val_idx, const TrainConfig& tc,
                               const std::filesystem::path& out_dir = {},
                               const std::filesystem::path& resume_from = {}) {
  tc.validate();
  if (train_idx.empty()) throw ConfigError("train_model: empty training split");
  const ModelConfig& cfg = model.config();
  SgdOptimizer<float> opt(model.params(),
                          SgdConfig<float>{static_cast<float>(tc.lr),
                                           static_cast<float>(tc.momentum),
                                           static_cast<float>(tc.weight_decay)});
  TrainResult res;
  int start_epoch = 0;
  if (!resume_from.empty()) {
    const CheckpointMeta meta = read_checkpoint_meta(resume_from);
    std::vector<ParamStore<float>*> stores = {&model.params(), &opt.buffers()};
    load_checkpoint(resume_from, stores);
    if (!meta.training_state.is_null()) {
      start_epoch = meta.training_state.value("epochs_done", 0);
      res.steps = meta.training_state.value("steps", 0L);
      res.best_val_f1 = meta.training_state.value("best_val_f1", -1.0);
      res.best_epoch = meta.training_state.value("best_epoch", -1);
      opt.set_step_count(res.steps);
    }
  } else {
    model.init_params(tc.seed);
  }

  std::ofstream log_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_file.open(out_dir / "log.jsonl", start_epoch > 0 ? std::ios::app : std::ios::out);
  }

  const long steps_per_epoch =
      (static_cast<long>(train_idx.size()) + tc.batch_size - 1) / tc.batch_size;
  const long planned_steps =
      tc.max_steps > 0 ? tc.max_steps : steps_per_epoch * std::max(tc.epochs, 1);
  auto lr_scale = [&](long step) -> float {
    if (tc.lr_schedule == "cosine")
      return 0.5f * (1.0f + std::cos(static_cast<float>(M_PI) *
                                     static_cast<float>(step) / planned_steps));
    return 1.0f;
  };

  auto save_state = [&](int epochs_done) {
    if (out_dir.empty()) return;
    nlohmann::json state{{"epochs_done", epochs_done},
                         {"steps", res.steps},
                         {"best_val_f1", res.best_val_f1},
                         {"best_epoch", res.best_epoch},
                         {"train_config", tc}};
    std::vector<const ParamStore<float>*> stores = {&model.params(), &opt.buffers()};
    save_checkpoint(out_dir / "last", cfg, stores, state);
  };

  bool stop = false;
  int epoch = start_epoch;
  for (; epoch < tc.epochs && !stop; ++epoch) {
    Rng rng = make_rng(tc.seed, 0xe9000000ULL + static_cast<uint64_t>(epoch));
    std::vector<int> order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown<float> epoch_loss;
    long batches = 0;
    for (size_t pos = 0; pos < order.size() && !stop; pos += tc.batch_size) {
      const size_t end = std::min(order.size(), pos + tc.batch_size);
      std::vector<int> ids(order.begin() + pos, order.begin() + end);
      Batch<float> batch = make_batch(ds, ids, cfg);
      if (tc.hflip)
        for (auto& img : batch.images)
          if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.5) img = hflip(img);
      cutmix(batch, tc.cutmix_prob, tc.cutmix_alpha, rng);
      model.params().zero_grads();
      const LossBreakdown<float> l = compute_batch_gradients(model, batch, tc.threads);
      opt.step(model.params(), lr_scale(res.steps));
      ++res.steps;
      ++batches;
      epoch_loss.disease_aux += l.disease_aux;
      epoch_loss.disease_fused += l.disease_fused;
      epoch_loss.body += l.body;
      epoch_loss.attr += l.attr;
      epoch_loss.total += l.total;
      if (tc.max_steps > 0 && res.steps >= tc.max_steps) stop = true;
    }
    if (batches > 0) {
      const float inv = 1.0f / static_cast<float>(batches);
      epoch_loss.disease_aux *= inv;
      epoch_loss.disease_fused *= inv;
      epoch_loss.body *= inv;
      epoch_loss.attr *= inv;
      epoch_loss.total *= inv;
    }
    res.last_epoch_loss = epoch_loss;

    nlohmann::json entry{{"epoch", epoch}, {"steps", res.steps},
                         {"loss", loss_to_json(epoch_loss)}};
    if (!val_idx.empty()) {
      MetricsReport val = evaluate_model(model, ds, val_idx, tc.threads);
      res.has_val = true;
      res.last_val = val;
      entry["val"] = metrics_report_to_json(val);
      const double f1 = val.disease.metrics.f1;
      if (f1 > res.best_val_f1) {
        res.best_val_f1 = f1;
        res.best_epoch = epoch;
        if (!out_dir.empty())
          save_checkpoint(out_dir / "best", cfg, model.params(),
                          nlohmann::json{{"epoch", epoch}, {"val_disease_f1", f1}});
      }
    }
    res.log.push_back(entry);
    if (log_file) log_file << entry.dump() << "\n" << std::flush;
    res.epochs_done = epoch + 1;
    save_state(epoch + 1);
  }
  if (tc.epochs == 0 || start_epoch >= tc.epochs) save_state(start_epoch);
  return res;
}

// ---------------------------------------------------------------------------
// Cross-validation: stratified folds, fresh model per fold, mean ± std
// aggregation of the headline metrics.

struct CrossvalResult {
  std::vector<MetricsReport> fold_reports;  // one per completed fold
  std::vector<std::string> fold_errors;
  std::vector<std::string> warnings;
  nlohmann::json aggregate;
};

inline nlohmann::json aggregate_task(const std::vector<const TaskMetrics*>& per_fold) {
  auto collect = [&](auto proj) {
    std::vector<double> v;
    for (const TaskMetrics* m : per_fold) v.push_back(proj(*m));
    return aggregate_stat(v);
  };
  nlohmann::json j;
  j["precision"] = collect([](const TaskMetrics& m) { return m.precision; });
  j["recall"] = collect([](const TaskMetrics& m) { return m.recall; });
  j["f1"] = collect([](const TaskMetrics& m) { return m.f1; });
  j["accuracy"] = collect([](const TaskMetrics& m) { return m.accuracy; });
  return j;
}

inline CrossvalResult crossval(const ModelConfig& mc, const Dataset<float>& ds, int folds,
                               const TrainConfig& tc,
                               const std::filesystem::path& out_dir = {}) {
  CrossvalResult out;
  KFoldResult kf = kfold_split(ds.disease_labels(), folds, tc.seed);
  out.warnings = kf.warnings;
  for (int f = 0; f < folds; ++f) {
    try {
      Model<float> model(mc);
      TrainConfig fold_tc = tc;
      fold_tc.seed = mix_seed(tc.seed, 0xf01d0000ULL + static_cast<uint64_t>(f));
      const std::filesystem::path fold_dir =
          out_dir.empty() ? std::filesystem::path{}
                          : out_dir / ("fold_" + std::to_string(f));
      TrainResult tr =
          train_model(model, ds, kf.folds[f].train, kf.folds[f].val, fold_tc, fold_dir);
      MetricsReport rep = tr.has_val ? tr.last_val
                                     : evaluate_model(model, ds, kf.folds[f].val, tc.threads);
      rep.fold_id = f;
      out.fold_reports.push_back(std::move(rep));
    } catch (const std::exception& e) {
      out.fold_errors.push_back("fold " + std::to_string(f) + ": " + e.what());
    }
  }

  nlohmann::json agg;
  agg["folds_completed"] = out.fold_reports.size();
  agg["folds_requested"] = folds;
  if (!out.fold_reports.empty()) {
    std::vector<const TaskMetrics*> d, b, a;
    for (const auto& r : out.fold_reports) {
      d.push_back(&r.disease.metrics);
      if (r.has_body) b.push_back(&r.body);
      if (r.has_attr) a.push_back(&r.attr);
    }
    agg["disease"] = aggregate_task(d);
    if (!b.empty()) agg["body_part"] = aggregate_task(b);
    if (!a.empty()) agg["attribute"] = aggregate_task(a);
  }
  nlohmann::json fold_json = nlohmann::json::array();
  for (const auto& r : out.fold_reports) fold_json.push_back(metrics_report_to_json(r));
  agg["fold_reports"] = fold_json;
  if (!out.fold_errors.empty()) agg["fold_errors"] = out.fold_errors;
  if (!out.warnings.empty()) agg["warnings"] = out.warnings;
  out.aggregate = agg;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "crossval.json") << agg.dump(2) << "\n";
  }
  return out;
}

}  // namespace mtvit
