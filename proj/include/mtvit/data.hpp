#pragma once

// Dataset ingestion from a JSONL manifest + JSON vocab file, stratified
// k-fold splits, batching and CutMix.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtvit/image.hpp"
#include "mtvit/image_io.hpp"
#include "mtvit/model.hpp"
#include "mtvit/rng.hpp"

namespace mtvit {

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Vocab {
  std::vector<std::string> diseases, body_parts, attributes;
};

// {"diseases": {"0": "...", ...}, "body_parts": {...}, "attributes": {...}};
// ids must be contiguous from 0.
inline Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open vocab file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("vocab file " + path.string() + ": " + e.what());
  }
  auto read_task = [&](const char* key) {
    if (!j.contains(key))
      throw ValidationError("vocab file missing task \"" + std::string(key) + "\"");
    const auto& t = j.at(key);
    std::vector<std::string> names(t.size());
    for (auto it = t.begin(); it != t.end(); ++it) {
      int id;
      try {
        id = std::stoi(it.key());
      } catch (...) {
        throw ValidationError("vocab " + std::string(key) + ": non-integer id \"" +
                              it.key() + "\"");
      }
      if (id < 0 || id >= static_cast<int>(t.size()))
        throw ValidationError("vocab " + std::string(key) + ": ids must be contiguous from 0");
      names[id] = it.value().get<std::string>();
    }
    return names;
  };
  Vocab v;
  v.diseases = read_task("diseases");
  v.body_parts = read_task("body_parts");
  v.attributes = read_task("attributes");
  return v;
}

struct ManifestRecord {
  std::string image_path;
  int disease_id = 0;
  std::vector<int> body_part_ids;
  std::vector<int> attribute_ids;
};

struct ValidationIssue {
  bool error = false;  // errors abort a strict load; warnings never do
  int line = 0;        // 1-based manifest line, 0 when not line-scoped
  std::string message;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  Vocab vocab;
  std::vector<ValidationIssue> issues;

  bool has_errors() const {
    for (const auto& i : issues)
      if (i.error) return true;
    return false;
  }
};

// One JSONL record per line: {"image_path": ..., "disease_id": ...,
// "body_part_ids": [...], "attribute_ids": [...]}. In strict mode the first
// error-severity issue throws (ParseError for malformed lines,
// ValidationError for bad ids / duplicates / unreadable files); in lenient
// mode all issues are collected into the returned manifest.
inline DatasetManifest load_manifest(const std::filesystem::path& manifest_path,
                                     const std::filesystem::path& vocab_path,
                                     bool strict = true, bool check_files = true) {
  DatasetManifest out;
  out.vocab = load_vocab(vocab_path);
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot open manifest " + manifest_path.string());

  auto issue = [&](bool error, int line, const std::string& msg) {
    out.issues.push_back({error, line, msg});
  };
  auto fail_parse = [&](int line, const std::string& msg) {
    const std::string full = "manifest line " + std::to_string(line) + ": " + msg;
    if (strict) throw ParseError(full);
    issue(true, line, full);
  };
  auto fail_validate = [&](int line, const std::string& msg) {
    const std::string full = "manifest line " + std::to_string(line) + ": " + msg;
    if (strict) throw ValidationError(full);
    issue(true, line, full);
  };

  std::set<std::string> seen_paths;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail_parse(line_no, std::string("malformed JSON: ") + e.what());
      continue;
    }
    ManifestRecord rec;
    try {
      rec.image_path = j.at("image_path").get<std::string>();
      rec.disease_id = j.at("disease_id").get<int>();
      rec.body_part_ids = j.at("body_part_ids").get<std::vector<int>>();
      rec.attribute_ids = j.at("attribute_ids").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      fail_parse(line_no, std::string("missing or mistyped field: ") + e.what());
      continue;
    }
    bool ok = true;
    if (rec.disease_id < 0 || rec.disease_id >= static_cast<int>(out.vocab.diseases.size())) {
      fail_validate(line_no, "disease_id " + std::to_string(rec.disease_id) +
                                 " outside vocabulary");
      ok = false;
    }
    for (int id : rec.body_part_ids)
      if (id < 0 || id >= static_cast<int>(out.vocab.body_parts.size())) {
        fail_validate(line_no, "body_part_id " + std::to_string(id) + " outside vocabulary");
        ok = false;
      }
    for (int id : rec.attribute_ids)
      if (id < 0 || id >= static_cast<int>(out.vocab.attributes.size())) {
        fail_validate(line_no, "attribute_id " + std::to_string(id) + " outside vocabulary");
        ok = false;
      }
    if (!seen_paths.insert(rec.image_path).second) {
      fail_validate(line_no, "duplicate image_path " + rec.image_path);
      ok = false;
    }
    if (check_files) {
      std::filesystem::path p(rec.image_path);
      if (p.is_relative()) p = manifest_path.parent_path() / p;
      if (!std::filesystem::exists(p)) {
        fail_validate(line_no, "image file not readable: " + p.string());
        ok = false;
      }
    }
    if (rec.body_part_ids.empty())
      issue(false, line_no, "manifest line " + std::to_string(line_no) +
                                ": empty body_part_ids (allowed, flagged)");
    if (rec.attribute_ids.empty())
      issue(false, line_no, "manifest line " + std::to_string(line_no) +
                                ": empty attribute_ids (allowed, flagged)");
    if (ok) out.records.push_back(std::move(rec));
  }
  if (out.records.empty())
    issue(false, 0, "manifest " + manifest_path.string() + " contains no records");
  return out;
}

// ---------------------------------------------------------------------------
// Stratified k-fold splits (stratification key: disease).

struct FoldSplit {
  std::vector<int> train, val;
};

struct KFoldResult {
  std::vector<FoldSplit> folds;
  std::vector<std::string> warnings;
};

inline KFoldResult kfold_split(const std::vector<int>& disease_labels, int folds,
                               uint64_t seed) {
  const int n = static_cast<int>(disease_labels.size());
  if (folds < 2) throw ConfigError("kfold_split needs folds >= 2");
  if (n < folds) throw ConfigError("dataset smaller than fold count");
  KFoldResult out;
  int num_classes = 0;
  for (int d : disease_labels) num_classes = std::max(num_classes, d + 1);
  std::vector<std::vector<int>> by_class(num_classes);
  for (int i = 0; i < n; ++i) by_class[disease_labels[i]].push_back(i);

  std::vector<std::vector<int>> fold_of(folds);
  for (int c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (static_cast<int>(idx.size()) < folds)
      out.warnings.push_back("class " + std::to_string(c) + " has " +
                             std::to_string(idx.size()) + " samples < " +
                             std::to_string(folds) + " folds; stratification is best-effort");
    Rng rng = make_rng(seed, 0x6b666f6c + static_cast<uint64_t>(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    // Stagger the starting fold per class so small classes spread evenly.
    for (size_t k = 0; k < idx.size(); ++k)
      fold_of[(static_cast<int>(k) + c) % folds].push_back(idx[k]);
  }
  out.folds.resize(folds);
  for (int f = 0; f < folds; ++f) {
    std::sort(fold_of[f].begin(), fold_of[f].end());
    out.folds[f].val = fold_of[f];
    for (int g = 0; g < folds; ++g)
      if (g != f)
        out.folds[f].train.insert(out.folds[f].train.end(), fold_of[g].begin(),
                                  fold_of[g].end());
    std::sort(out.folds[f].train.begin(), out.folds[f].train.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// In-memory dataset and batches.

template <typename T = float>
struct Sample {
  ImageTensor<T> image;
  LabelSet label;
};

template <typename T = float>
struct Dataset {
  std::vector<Sample<T>> samples;
  Vocab vocab;

  std::vector<int> disease_labels() const {
    std::vector<int> out(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].label.disease;
    return out;
  }
};

// Decodes every image up front (resize + center crop to the model size).
template <typename T = float>
Dataset<T> load_dataset(const DatasetManifest& manifest,
                        const std::filesystem::path& manifest_dir, const ModelConfig& cfg) {
  Dataset<T> ds;
  ds.vocab = manifest.vocab;
  for (const auto& rec : manifest.records) {
    std::filesystem::path p(rec.image_path);
    if (p.is_relative()) p = manifest_dir / p;
    ImageTensor<float> raw = read_image(p);
    ImageTensor<float> fitted = fit_to(raw, cfg.image_height, cfg.image_width);
    Sample<T> s;
    s.image.height = fitted.height;
    s.image.width = fitted.width;
    s.image.data.assign(fitted.data.begin(), fitted.data.end());
    s.label.disease = rec.disease_id;
    s.label.body_parts.assign(cfg.num_body_parts, 0);
    for (int id : rec.body_part_ids) s.label.body_parts[id] = 1;
    s.label.attributes.assign(cfg.num_attributes, 0);
    for (int id : rec.attribute_ids) s.label.attributes[id] = 1;
    s.label.validate(cfg);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

template <typename T>
struct Batch {
  std::vector<ImageTensor<T>> images;
  std::vector<SoftLabels<T>> labels;

  size_t size() const { return images.size(); }
};

template <typename T>
Batch<T> make_batch(const Dataset<T>& ds, const std::vector<int>& indices,
                    const ModelConfig& cfg) {
  Batch<T> b;
  for (int i : indices) {
    b.images.push_back(ds.samples[i].image);
    b.labels.push_back(SoftLabels<T>::from_hard(ds.samples[i].label, cfg));
  }
  return b;
}

// ---------------------------------------------------------------------------
// CutMix. One decision per batch: with probability `prob`, draw
// lambda ~ Beta(alpha, alpha), cut one rectangle with side ratio
// sqrt(1 - lambda) at a uniform center (clipped to bounds), paste partner
// content under a random permutation pairing, and mix every label head with
// the exact clipped-area fraction: lambda' = 1 - area / (H*W).

struct CutMixInfo {
  bool applied = false;
  double lambda_prime = 1.0;  // weight on the original sample
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::vector<int> partner;
};

template <typename T>
CutMixInfo cutmix(Batch<T>& batch, double prob, double alpha, Rng& rng) {
  CutMixInfo info;
  const int n = static_cast<int>(batch.size());
  if (n < 2) return info;
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= prob) return info;

  const int h = batch.images[0].height, w = batch.images[0].width;
  const double lambda = sample_beta(rng, alpha, alpha);
  const double ratio = std::sqrt(1.0 - lambda);
  const int cut_h = static_cast<int>(h * ratio);
  const int cut_w = static_cast<int>(w * ratio);
  const int cy = std::uniform_int_distribution<int>(0, h - 1)(rng);
  const int cx = std::uniform_int_distribution<int>(0, w - 1)(rng);
  info.y0 = std::clamp(cy - cut_h / 2, 0, h);
  info.y1 = std::clamp(cy + (cut_h + 1) / 2, 0, h);
  info.x0 = std::clamp(cx - cut_w / 2, 0, w);
  info.x1 = std::clamp(cx + (cut_w + 1) / 2, 0, w);

  info.partner.resize(n);
  for (int i = 0; i < n; ++i) info.partner[i] = i;
  std::shuffle(info.partner.begin(), info.partner.end(), rng);

  const long area = static_cast<long>(info.y1 - info.y0) * (info.x1 - info.x0);
  const double frac = static_cast<double>(area) / (static_cast<double>(h) * w);
  info.lambda_prime = 1.0 - frac;
  info.applied = true;
  if (area == 0) return info;  // degenerate box, batch unchanged

  const std::vector<ImageTensor<T>> originals = batch.images;
  for (int i = 0; i < n; ++i) {
    const ImageTensor<T>& src = originals[info.partner[i]];
    for (int y = info.y0; y < info.y1; ++y)
      for (int x = info.x0; x < info.x1; ++x)
        for (int c = 0; c < 3; ++c) batch.images[i].at(y, x, c) = src.at(y, x, c);
  }
  const std::vector<SoftLabels<T>> orig_labels = batch.labels;
  const T lp = static_cast<T>(info.lambda_prime);
  const T fr = static_cast<T>(frac);
  auto mix = [&](std::vector<T>& dst, const std::vector<T>& a, const std::vector<T>& b) {
    for (size_t k = 0; k < dst.size(); ++k) dst[k] = lp * a[k] + fr * b[k];
  };
  for (int i = 0; i < n; ++i) {
    const SoftLabels<T>& a = orig_labels[i];
    const SoftLabels<T>& b = orig_labels[info.partner[i]];
    mix(batch.labels[i].disease, a.disease, b.disease);
    mix(batch.labels[i].body_parts, a.body_parts, b.body_parts);
    mix(batch.labels[i].attributes, a.attributes, b.attributes);
  }
  return info;
}

}  // namespace mtvit
