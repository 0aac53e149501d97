#pragma once

// Programmatic lesion images for desk-scale experiments. Each sample is a
// noisy background whose tint encodes the body parts, plus one square lesion
// whose color encodes the disease and whose texture decorations encode the
// attributes. `ambiguity` blends some lesion colors toward another disease so
// the disease task keeps headroom that the correlated body-part/attribute
// cues can recover.

#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "mtvit/data.hpp"
#include "mtvit/image.hpp"
#include "mtvit/image_io.hpp"
#include "mtvit/rng.hpp"

namespace mtvit {

struct SyntheticConfig {
  int num_images = 60;
  int height = 64, width = 64;
  int num_diseases = 3, num_body_parts = 4, num_attributes = 5;
  double ambiguity = 0.0;       // fraction of lesions with blended colors
  double extra_part_prob = 0.3; // chance of a second body part label
  uint64_t seed = 1234;
};

struct SyntheticSample {
  ImageTensor<float> image;
  LabelSet label;
  int box_y0 = 0, box_x0 = 0, box_y1 = 0, box_x1 = 0;  // lesion bounds
};

namespace detail {

inline const float kDiseaseColor[3][3] = {
    {0.85f, 0.15f, 0.15f}, {0.15f, 0.80f, 0.20f}, {0.20f, 0.30f, 0.90f}};
inline const float kBodyTint[4][3] = {{0.46f, 0.40f, 0.40f},
                                      {0.40f, 0.46f, 0.40f},
                                      {0.40f, 0.40f, 0.46f},
                                      {0.46f, 0.46f, 0.36f}};

}  // namespace detail

inline SyntheticSample generate_synthetic_sample(const SyntheticConfig& cfg, Rng& rng) {
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };

  SyntheticSample s;
  const int h = cfg.height, w = cfg.width;
  s.image = ImageTensor<float>(h, w);

  const int d = pick(cfg.num_diseases);
  s.label.disease = d;

  // Body parts: one favored part per disease, sometimes one extra.
  s.label.body_parts.assign(cfg.num_body_parts, 0);
  const int favored_part = d % cfg.num_body_parts;
  s.label.body_parts[favored_part] = 1;
  if (uni(0, 1) < cfg.extra_part_prob)
    s.label.body_parts[pick(cfg.num_body_parts)] = 1;

  // Attributes: disease-favored attributes are likely, others rare.
  s.label.attributes.assign(cfg.num_attributes, 0);
  for (int a = 0; a < cfg.num_attributes; ++a) {
    const bool favored = (a % cfg.num_diseases) == d;
    if (uni(0, 1) < (favored ? 0.85 : 0.15)) s.label.attributes[a] = 1;
  }

  // Background: blend of the tints of the labelled body parts, plus noise.
  float bg[3] = {0, 0, 0};
  int parts = 0;
  for (int b = 0; b < cfg.num_body_parts; ++b)
    if (s.label.body_parts[b]) {
      for (int c = 0; c < 3; ++c) bg[c] += detail::kBodyTint[b % 4][c];
      ++parts;
    }
  for (int c = 0; c < 3; ++c) bg[c] /= static_cast<float>(parts);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        s.image.at(y, x, c) = std::clamp(bg[c] + static_cast<float>(uni(-0.05, 0.05)), 0.f, 1.f);

  // Lesion color: the disease color, sometimes blended toward another one.
  float col[3];
  for (int c = 0; c < 3; ++c) col[c] = detail::kDiseaseColor[d % 3][c];
  if (uni(0, 1) < cfg.ambiguity) {
    const int other = (d + 1 + pick(cfg.num_diseases - 1)) % cfg.num_diseases;
    const float mix = static_cast<float>(uni(0.30, 0.50));
    for (int c = 0; c < 3; ++c)
      col[c] = (1.f - mix) * col[c] + mix * detail::kDiseaseColor[other % 3][c];
  }
  for (int c = 0; c < 3; ++c) col[c] = std::clamp(col[c] + static_cast<float>(uni(-0.06, 0.06)), 0.f, 1.f);

  const bool large = cfg.num_attributes > 3 && s.label.attributes[3];
  const int size = std::min(large ? 32 : 24, std::min(h, w));
  s.box_y0 = pick(h - size + 1);
  s.box_x0 = pick(w - size + 1);
  s.box_y1 = s.box_y0 + size;
  s.box_x1 = s.box_x0 + size;

  for (int y = s.box_y0; y < s.box_y1; ++y)
    for (int x = s.box_x0; x < s.box_x1; ++x)
      for (int c = 0; c < 3; ++c)
        s.image.at(y, x, c) = std::clamp(col[c] + static_cast<float>(uni(-0.03, 0.03)), 0.f, 1.f);

  auto darken = [&](int y, int x, float k) {
    for (int c = 0; c < 3; ++c) s.image.at(y, x, c) *= k;
  };
  if (cfg.num_attributes > 0 && s.label.attributes[0]) {  // ring outline
    for (int y = s.box_y0; y < s.box_y1; ++y)
      for (int x = s.box_x0; x < s.box_x1; ++x)
        if (y - s.box_y0 < 2 || s.box_y1 - 1 - y < 2 || x - s.box_x0 < 2 ||
            s.box_x1 - 1 - x < 2)
          darken(y, x, 0.4f);
  }
  if (cfg.num_attributes > 1 && s.label.attributes[1]) {  // dots
    for (int k = 0; k < 12; ++k) {
      const int y = s.box_y0 + 2 + pick(size - 5);
      const int x = s.box_x0 + 2 + pick(size - 5);
      darken(y, x, 0.3f);
      darken(y + 1, x, 0.3f);
      darken(y, x + 1, 0.3f);
      darken(y + 1, x + 1, 0.3f);
    }
  }
  if (cfg.num_attributes > 2 && s.label.attributes[2]) {  // stripes
    for (int y = s.box_y0; y < s.box_y1; ++y)
      if ((y - s.box_y0) % 4 == 0)
        for (int x = s.box_x0; x < s.box_x1; ++x) darken(y, x, 0.6f);
  }
  if (cfg.num_attributes > 4 && s.label.attributes[4]) {  // bright halo
    for (int y = std::max(0, s.box_y0 - 2); y < std::min(h, s.box_y1 + 2); ++y)
      for (int x = std::max(0, s.box_x0 - 2); x < std::min(w, s.box_x1 + 2); ++x) {
        const bool inside = y >= s.box_y0 && y < s.box_y1 && x >= s.box_x0 && x < s.box_x1;
        if (!inside)
          for (int c = 0; c < 3; ++c)
            s.image.at(y, x, c) = std::clamp(s.image.at(y, x, c) + 0.25f, 0.f, 1.f);
      }
  }
  return s;
}

inline std::vector<SyntheticSample> generate_synthetic(const SyntheticConfig& cfg) {
  Rng rng = make_rng(cfg.seed, 0x73796e);
  std::vector<SyntheticSample> out;
  out.reserve(cfg.num_images);
  for (int i = 0; i < cfg.num_images; ++i) out.push_back(generate_synthetic_sample(cfg, rng));
  return out;
}

template <typename T = float>
Dataset<T> synthetic_dataset(const SyntheticConfig& cfg,
                             std::vector<SyntheticSample>* keep_samples = nullptr) {
  Dataset<T> ds;
  ds.vocab.diseases = {"crimson-macule", "verdant-plaque", "cobalt-nodule"};
  ds.vocab.diseases.resize(cfg.num_diseases, "disease");
  ds.vocab.body_parts = {"head", "trunk", "arm", "leg"};
  ds.vocab.body_parts.resize(cfg.num_body_parts, "part");
  ds.vocab.attributes = {"ring", "dots", "stripes", "large", "halo"};
  ds.vocab.attributes.resize(cfg.num_attributes, "attr");
  for (const SyntheticSample& s : generate_synthetic(cfg)) {
    Sample<T> smp;
    smp.image.height = s.image.height;
    smp.image.width = s.image.width;
    smp.image.data.assign(s.image.data.begin(), s.image.data.end());
    smp.label = s.label;
    ds.samples.push_back(std::move(smp));
    if (keep_samples) keep_samples->push_back(s);
  }
  return ds;
}

// Writes PNGs + manifest.jsonl + vocab.json (+ boxes.json with lesion bounds)
// so the CLI can run end-to-end without external data.
inline void write_synthetic_dataset(const std::filesystem::path& dir,
                                    const SyntheticConfig& cfg) {
  std::filesystem::create_directories(dir / "images");
  std::vector<SyntheticSample> samples;
  Dataset<float> ds = synthetic_dataset<float>(cfg, &samples);

  nlohmann::json vocab;
  auto task = [](const std::vector<std::string>& names) {
    nlohmann::json t = nlohmann::json::object();
    for (size_t i = 0; i < names.size(); ++i) t[std::to_string(i)] = names[i];
    return t;
  };
  vocab["diseases"] = task(ds.vocab.diseases);
  vocab["body_parts"] = task(ds.vocab.body_parts);
  vocab["attributes"] = task(ds.vocab.attributes);
  std::ofstream(dir / "vocab.json") << vocab.dump(2) << "\n";

  std::ofstream manifest(dir / "manifest.jsonl");
  nlohmann::json boxes = nlohmann::json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%04zu.png", i);
    write_png(dir / name, samples[i].image);
    nlohmann::json rec;
    rec["image_path"] = name;
    rec["disease_id"] = samples[i].label.disease;
    std::vector<int> bp, at;
    for (size_t k = 0; k < samples[i].label.body_parts.size(); ++k)
      if (samples[i].label.body_parts[k]) bp.push_back(static_cast<int>(k));
    for (size_t k = 0; k < samples[i].label.attributes.size(); ++k)
      if (samples[i].label.attributes[k]) at.push_back(static_cast<int>(k));
    rec["body_part_ids"] = bp;
    rec["attribute_ids"] = at;
    manifest << rec.dump() << "\n";
    boxes.push_back({{"image_path", name},
                     {"y0", samples[i].box_y0},
                     {"x0", samples[i].box_x0},
                     {"y1", samples[i].box_y1},
                     {"x1", samples[i].box_x1}});
  }
  std::ofstream(dir / "boxes.json") << boxes.dump(2) << "\n";
}

}  // namespace mtvit
