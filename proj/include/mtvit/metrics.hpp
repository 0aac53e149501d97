#pragma once

// Evaluation metrics. Disease: macro precision/recall/F1 over classes plus
// top-1 accuracy from the confusion matrix. Body parts / attributes:
// per-label binary precision/recall/F1 at the decision threshold,
// macro-averaged, plus exact-match accuracy. All values are percentages.
// Classes/labels with no positive support in the split are excluded from the
// macro averages and reported as warnings.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtvit/mat.hpp"

namespace mtvit {

struct TaskMetrics {
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;  // percent
  std::vector<double> per_class_precision, per_class_recall, per_class_f1;
  std::vector<int> support;
  std::vector<uint8_t> included;  // 0 -> excluded from macro (no support)
  std::vector<std::string> warnings;
};

inline void to_json(nlohmann::json& j, const TaskMetrics& m) {
  j = nlohmann::json{{"precision", m.precision},
                     {"recall", m.recall},
                     {"f1", m.f1},
                     {"accuracy", m.accuracy},
                     {"per_class_precision", m.per_class_precision},
                     {"per_class_recall", m.per_class_recall},
                     {"per_class_f1", m.per_class_f1},
                     {"support", m.support},
                     {"included", m.included},
                     {"warnings", m.warnings}};
}

namespace detail {

inline void finalize_macro(TaskMetrics& m) {
  double sp = 0, sr = 0, sf = 0;
  int n = 0;
  for (size_t c = 0; c < m.included.size(); ++c) {
    if (!m.included[c]) continue;
    sp += m.per_class_precision[c];
    sr += m.per_class_recall[c];
    sf += m.per_class_f1[c];
    ++n;
  }
  if (n > 0) {
    m.precision = sp / n;
    m.recall = sr / n;
    m.f1 = sf / n;
  }
}

inline void prf_from_counts(long tp, long fp, long fn, double& p, double& r, double& f1) {
  p = (tp + fp) > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r = (tp + fn) > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  f1 = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace detail

// Multi-class task from hard predictions.
struct DiseaseMetrics {
  TaskMetrics metrics;
  std::vector<std::vector<long>> confusion;  // [true][pred]
};

inline DiseaseMetrics compute_disease_metrics(const std::vector<int>& y_true,
                                              const std::vector<int>& y_pred,
                                              int num_classes) {
  if (y_true.size() != y_pred.size() || y_true.empty())
    throw ConfigError("disease metrics need equal, non-empty label/prediction lists");
  DiseaseMetrics out;
  out.confusion.assign(num_classes, std::vector<long>(num_classes, 0));
  for (size_t i = 0; i < y_true.size(); ++i) out.confusion[y_true[i]][y_pred[i]]++;

  TaskMetrics& m = out.metrics;
  m.per_class_precision.assign(num_classes, 0);
  m.per_class_recall.assign(num_classes, 0);
  m.per_class_f1.assign(num_classes, 0);
  m.support.assign(num_classes, 0);
  m.included.assign(num_classes, 1);
  long correct = 0;
  for (int c = 0; c < num_classes; ++c) correct += out.confusion[c][c];
  for (int c = 0; c < num_classes; ++c) {
    long tp = out.confusion[c][c], row = 0, col = 0;
    for (int k = 0; k < num_classes; ++k) {
      row += out.confusion[c][k];
      col += out.confusion[k][c];
    }
    m.support[c] = static_cast<int>(row);
    if (row == 0) {
      m.included[c] = 0;
      m.warnings.push_back("class " + std::to_string(c) +
                           " absent from split; excluded from macro averages");
      continue;
    }
    detail::prf_from_counts(tp, col - tp, row - tp, m.per_class_precision[c],
                            m.per_class_recall[c], m.per_class_f1[c]);
  }
  detail::finalize_macro(m);
  m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(y_true.size());
  return out;
}

// Multi-label task from thresholded predictions. accuracy = exact match.
inline TaskMetrics compute_multilabel_metrics(
    const std::vector<std::vector<uint8_t>>& y_true,
    const std::vector<std::vector<uint8_t>>& y_pred, int num_labels) {
  if (y_true.size() != y_pred.size() || y_true.empty())
    throw ConfigError("multilabel metrics need equal, non-empty label/prediction lists");
  TaskMetrics m;
  m.per_class_precision.assign(num_labels, 0);
  m.per_class_recall.assign(num_labels, 0);
  m.per_class_f1.assign(num_labels, 0);
  m.support.assign(num_labels, 0);
  m.included.assign(num_labels, 1);
  long exact = 0;
  for (size_t i = 0; i < y_true.size(); ++i) {
    bool all = true;
    for (int l = 0; l < num_labels; ++l)
      if (y_true[i][l] != y_pred[i][l]) {
        all = false;
        break;
      }
    if (all) ++exact;
  }
  for (int l = 0; l < num_labels; ++l) {
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < y_true.size(); ++i) {
      const bool t = y_true[i][l] != 0, p = y_pred[i][l] != 0;
      if (t && p) ++tp;
      else if (!t && p) ++fp;
      else if (t && !p) ++fn;
    }
    m.support[l] = static_cast<int>(tp + fn);
    if (tp + fn == 0) {
      m.included[l] = 0;
      m.warnings.push_back("label " + std::to_string(l) +
                           " has no positive support; excluded from macro averages");
      continue;
    }
    detail::prf_from_counts(tp, fp, fn, m.per_class_precision[l], m.per_class_recall[l],
                            m.per_class_f1[l]);
  }
  detail::finalize_macro(m);
  m.accuracy = 100.0 * static_cast<double>(exact) / static_cast<double>(y_true.size());
  return m;
}

struct MetricsReport {
  int fold_id = -1;
  DiseaseMetrics disease;
  bool has_body = false, has_attr = false;
  TaskMetrics body;
  TaskMetrics attr;
};

inline nlohmann::json metrics_report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  if (r.fold_id >= 0) j["fold"] = r.fold_id;
  j["disease"] = r.disease.metrics;
  j["disease"]["confusion"] = r.disease.confusion;
  if (r.has_body) j["body_part"] = r.body;
  if (r.has_attr) j["attribute"] = r.attr;
  return j;
}

// ---------------------------------------------------------------------------
// Cross-validation aggregation in the "xx.x±x.x" style (population std).

struct AggregateStat {
  double mean = 0, stddev = 0;
  std::string formatted() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f±%.1f", mean, stddev);
    return buf;
  }
};

inline AggregateStat aggregate_stat(const std::vector<double>& values) {
  AggregateStat s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

inline void to_json(nlohmann::json& j, const AggregateStat& s) {
  j = nlohmann::json{{"mean", s.mean}, {"std", s.stddev}, {"formatted", s.formatted()}};
}

}  // namespace mtvit
