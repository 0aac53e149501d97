#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mtvit/mat.hpp"

namespace mtvit {

enum class Head { disease = 0, body_part = 1, attribute = 2 };

inline const char* head_name(Head h) {
  switch (h) {
    case Head::disease: return "disease";
    case Head::body_part: return "body_part";
    case Head::attribute: return "attribute";
  }
  return "?";
}

enum class FusionMode { concat, cim };

struct ModelConfig {
  int image_height = 64;
  int image_width = 64;
  int patch_size = 8;
  int embed_dim = 64;       // D
  int backbone_layers = 4;  // L
  int head_layers = 2;      // per task head
  int num_heads = 4;        // N_h
  int mlp_ratio = 4;
  int select_k = 8;         // K
  int num_diseases = 3;
  int num_body_parts = 4;
  int num_attributes = 5;
  int fusion_dim = 64;  // F; equals embed_dim (no projection between heads and fusion)
  bool disease_head = true;
  bool body_part_head = true;
  bool attribute_head = true;
  bool lsm_enabled = true;
  FusionMode fusion_mode = FusionMode::cim;

  int num_patches() const { return image_height * image_width / (patch_size * patch_size); }
  int num_tokens() const { return num_patches() + 1; }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int grid_rows() const { return image_height / patch_size; }
  int grid_cols() const { return image_width / patch_size; }
  int head_dim() const { return embed_dim / num_heads; }

  bool head_enabled(Head h) const {
    switch (h) {
      case Head::disease: return disease_head;
      case Head::body_part: return body_part_head;
      case Head::attribute: return attribute_head;
    }
    return false;
  }

  int num_classes(Head h) const {
    switch (h) {
      case Head::disease: return num_diseases;
      case Head::body_part: return num_body_parts;
      case Head::attribute: return num_attributes;
    }
    return 0;
  }

  std::vector<Head> enabled_heads() const {
    std::vector<Head> hs;
    if (disease_head) hs.push_back(Head::disease);
    if (body_part_head) hs.push_back(Head::body_part);
    if (attribute_head) hs.push_back(Head::attribute);
    return hs;
  }

  void validate() const {
    if (image_height <= 0 || image_width <= 0 || patch_size <= 0)
      throw ConfigError("image and patch dimensions must be positive");
    if (image_height % patch_size != 0 || image_width % patch_size != 0)
      throw ConfigError("image height and width must be divisible by patch_size");
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
      throw ConfigError("embed_dim must be a positive multiple of num_heads");
    if (fusion_dim <= 0 || fusion_dim % num_heads != 0)
      throw ConfigError("fusion_dim must be a positive multiple of num_heads");
    if (fusion_dim != embed_dim)
      throw ConfigError("fusion_dim must equal embed_dim (heads feed fusion directly)");
    if (select_k < 1 || select_k > num_patches())
      throw ConfigError("select_k must be in [1, num_patches]");
    if (backbone_layers < 0 || head_layers < 1)
      throw ConfigError("layer counts out of range");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (!disease_head) throw ConfigError("the disease head cannot be disabled");
    if (num_diseases < 2) throw ConfigError("need at least 2 disease classes");
    if (body_part_head && num_body_parts < 1)
      throw ConfigError("body_part head enabled but num_body_parts < 1");
    if (attribute_head && num_attributes < 1)
      throw ConfigError("attribute head enabled but num_attributes < 1");
  }

  // "paper": the full-scale configuration (ViT-B/16 at 384x384, 576 patches).
  static ModelConfig paper() {
    ModelConfig c;
    c.image_height = 384;
    c.image_width = 384;
    c.patch_size = 16;
    c.embed_dim = 768;
    c.backbone_layers = 12;
    c.num_heads = 12;
    c.select_k = 24;
    c.fusion_dim = 768;
    return c;
  }

  // "desk": small enough to train and verify on one CPU in minutes.
  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    throw ConfigError("unknown preset: " + name);
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_height", c.image_height},
                     {"image_width", c.image_width},
                     {"patch_size", c.patch_size},
                     {"embed_dim", c.embed_dim},
                     {"backbone_layers", c.backbone_layers},
                     {"head_layers", c.head_layers},
                     {"num_heads", c.num_heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"select_k", c.select_k},
                     {"num_diseases", c.num_diseases},
                     {"num_body_parts", c.num_body_parts},
                     {"num_attributes", c.num_attributes},
                     {"fusion_dim", c.fusion_dim},
                     {"disease_head", c.disease_head},
                     {"body_part_head", c.body_part_head},
                     {"attribute_head", c.attribute_head},
                     {"lsm_enabled", c.lsm_enabled},
                     {"fusion_mode", c.fusion_mode == FusionMode::cim ? "cim" : "concat"}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("preset")) c = ModelConfig::preset(j.at("preset").get<std::string>());
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).template get<std::decay_t<decltype(field)>>();
  };
  get("image_height", c.image_height);
  get("image_width", c.image_width);
  get("patch_size", c.patch_size);
  get("embed_dim", c.embed_dim);
  get("backbone_layers", c.backbone_layers);
  get("head_layers", c.head_layers);
  get("num_heads", c.num_heads);
  get("mlp_ratio", c.mlp_ratio);
  get("select_k", c.select_k);
  get("num_diseases", c.num_diseases);
  get("num_body_parts", c.num_body_parts);
  get("num_attributes", c.num_attributes);
  get("fusion_dim", c.fusion_dim);
  get("disease_head", c.disease_head);
  get("body_part_head", c.body_part_head);
  get("attribute_head", c.attribute_head);
  get("lsm_enabled", c.lsm_enabled);
  if (j.contains("fusion_mode")) {
    const std::string m = j.at("fusion_mode").get<std::string>();
    if (m == "cim")
      c.fusion_mode = FusionMode::cim;
    else if (m == "concat")
      c.fusion_mode = FusionMode::concat;
    else
      throw ConfigError("fusion_mode must be \"cim\" or \"concat\"");
  }
}

}  // namespace mtvit
