#pragma once

// Named parameter tensors plus the on-disk checkpoint format: a directory
// holding meta.json (config, tensor table, optional training state) and one
// raw little-endian float32 file per tensor. The format is stable; loaders
// reject checkpoints whose tensor table disagrees with the live model.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mtvit/config.hpp"
#include "mtvit/mat.hpp"
#include "mtvit/rng.hpp"

namespace mtvit {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class ParamKind { weight, bias, ln_gamma, ln_beta, pos_embed, cls_token };

template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamKind kind;
    Mat<T> value;
    Mat<T> grad;
  };

  int add(const std::string& name, int rows, int cols, ParamKind kind) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back(Entry{name, kind, Mat<T>(rows, cols), Mat<T>(rows, cols)});
    return static_cast<int>(entries_.size()) - 1;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  size_t count() const { return entries_.size(); }
  Entry& entry(int i) { return entries_[i]; }
  const Entry& entry(int i) const { return entries_[i]; }
  Mat<T>& value(int i) { return entries_[i].value; }
  const Mat<T>& value(int i) const { return entries_[i].value; }
  Mat<T>& grad(int i) { return entries_[i].grad; }

  void zero_grads() {
    for (auto& e : entries_) e.grad.zero();
  }

  size_t num_scalars() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  // ViT-style init: N(0, 0.02) for weight matrices, positional embeddings and
  // the class token; zeros for biases; identity affine for layer norms.
  void init(uint64_t seed) {
    Rng rng = make_rng(seed, 0x7061726d);
    for (auto& e : entries_) {
      switch (e.kind) {
        case ParamKind::weight:
        case ParamKind::pos_embed:
        case ParamKind::cls_token:
          fill_normal(e.value, rng, T(0.02));
          break;
        case ParamKind::bias:
        case ParamKind::ln_beta:
          e.value.zero();
          break;
        case ParamKind::ln_gamma:
          e.value.fill(T(1));
          break;
      }
    }
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_)
      out.add(e.name, e.value.rows, e.value.cols, e.kind);
    for (size_t i = 0; i < entries_.size(); ++i)
      out.value(static_cast<int>(i)) = entries_[i].value.template cast<U>();
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint IO. Tensors are always serialised as float32.

namespace detail {

inline void write_f32(const std::filesystem::path& path, const std::vector<float>& v) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!f) throw IoError("short write: " + path.string());
}

inline std::vector<float> read_f32(const std::filesystem::path& path, size_t n) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for read: " + path.string());
  std::vector<float> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<size_t>(f.gcount()) != n * sizeof(float))
    throw IoError("short read: " + path.string());
  return v;
}

}  // namespace detail

// Multiple stores (model weights, optimizer buffers) share one tensor table;
// names must be globally unique.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& config,
                     const std::vector<const ParamStore<T>*>& stores,
                     const nlohmann::json& training_state = nlohmann::json()) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "mtvit-checkpoint-v1";
  meta["config"] = config;
  nlohmann::json table = nlohmann::json::array();
  for (const ParamStore<T>* params : stores) {
    for (size_t i = 0; i < params->count(); ++i) {
      const auto& e = params->entry(static_cast<int>(i));
      table.push_back({{"name", e.name},
                       {"rows", e.value.rows},
                       {"cols", e.value.cols},
                       {"dtype", "float32"}});
      std::vector<float> raw(e.value.size());
      for (size_t k = 0; k < raw.size(); ++k) raw[k] = static_cast<float>(e.value.data[k]);
      detail::write_f32(dir / (e.name + ".bin"), raw);
    }
  }
  meta["tensors"] = table;
  if (!training_state.is_null()) meta["training_state"] = training_state;
  std::ofstream f(dir / "meta.json");
  if (!f) throw IoError("cannot write meta.json in " + dir.string());
  f << meta.dump(2) << "\n";
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& config,
                     const ParamStore<T>& params,
                     const nlohmann::json& training_state = nlohmann::json()) {
  save_checkpoint(dir, config, std::vector<const ParamStore<T>*>{&params}, training_state);
}

struct CheckpointMeta {
  ModelConfig config;
  nlohmann::json training_state;  // null when absent
};

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
  std::ifstream f(dir / "meta.json");
  if (!f) throw IoError("cannot read " + (dir / "meta.json").string());
  nlohmann::json meta = nlohmann::json::parse(f);
  if (meta.value("format", "") != "mtvit-checkpoint-v1")
    throw IoError("unrecognised checkpoint format in " + dir.string());
  CheckpointMeta out;
  out.config = meta.at("config").get<ModelConfig>();
  if (meta.contains("training_state")) out.training_state = meta.at("training_state");
  return out;
}

// Loads tensors into existing stores. Every store entry must be present in
// the table with a matching shape; table entries no store claims are ignored
// (so an inference-only load can skip optimizer buffers).
template <typename T>
void load_checkpoint(const std::filesystem::path& dir,
                     const std::vector<ParamStore<T>*>& stores) {
  std::ifstream f(dir / "meta.json");
  if (!f) throw IoError("cannot read " + (dir / "meta.json").string());
  nlohmann::json meta = nlohmann::json::parse(f);
  size_t filled = 0;
  for (const auto& t : meta.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const int rows = t.at("rows").get<int>();
    const int cols = t.at("cols").get<int>();
    for (ParamStore<T>* params : stores) {
      if (!params->contains(name)) continue;
      Mat<T>& dst = params->value(params->find(name));
      if (dst.rows != rows || dst.cols != cols)
        throw IoError("checkpoint shape mismatch for tensor " + name);
      const std::vector<float> raw =
          detail::read_f32(dir / (name + ".bin"), static_cast<size_t>(rows) * cols);
      for (size_t k = 0; k < raw.size(); ++k) dst.data[k] = static_cast<T>(raw[k]);
      ++filled;
      break;
    }
  }
  size_t want = 0;
  for (const ParamStore<T>* params : stores) want += params->count();
  if (filled != want)
    throw IoError("checkpoint in " + dir.string() + " is missing tensors (" +
                  std::to_string(filled) + "/" + std::to_string(want) + " matched)");
}

template <typename T>
void load_checkpoint(const std::filesystem::path& dir, ParamStore<T>& params) {
  load_checkpoint(dir, std::vector<ParamStore<T>*>{&params});
}

// FNV-1a over meta.json plus every tensor file in table order. Stable across
// runs; used by the determinism checks.
inline uint64_t hash_checkpoint(const std::filesystem::path& dir) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const char* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(p[i]);
      h *= 0x100000001b3ULL;
    }
  };
  auto mix_file = [&](const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot hash missing file: " + path.string());
    char buf[8192];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
      mix_bytes(buf, static_cast<size_t>(f.gcount()));
  };
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw IoError("cannot read " + (dir / "meta.json").string());
  nlohmann::json meta = nlohmann::json::parse(mf);
  const std::string dump = meta.dump();
  mix_bytes(dump.data(), dump.size());
  for (const auto& t : meta.at("tensors"))
    mix_file(dir / (t.at("name").get<std::string>() + ".bin"));
  return h;
}

}  // namespace mtvit
