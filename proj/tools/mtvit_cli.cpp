// Command-line front end: train / eval / crossval / attend / validate-data.
//
// Options resolve in three layers: built-in defaults, then the --config JSON
// file ({"model": {...}, "train": {...}}), then explicit flags. Every global
// flag can also come from the environment with the MTVIT_ prefix
// (MTVIT_SEED, MTVIT_THREADS, MTVIT_OUT_DIR, MTVIT_CONFIG).

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mtvit/gradcheck.hpp"
#include "mtvit/heatmap.hpp"
#include "mtvit/synthetic.hpp"
#include "mtvit/train.hpp"

namespace fs = std::filesystem;
using namespace mtvit;

namespace {

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 42;
  int threads = 1;
  std::string out_dir = "out";
};

struct LoadedConfig {
  ModelConfig model;
  TrainConfig train;
};

LoadedConfig load_config(const CommonOpts& common) {
  LoadedConfig lc;
  if (!common.config_path.empty()) {
    std::ifstream f(common.config_path);
    if (!f) throw IoError("cannot open config file " + common.config_path);
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.contains("model")) lc.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) lc.train = j.at("train").get<TrainConfig>();
  }
  lc.train.seed = common.seed;
  lc.train.threads = common.threads;
  lc.model.validate();
  return lc;
}

Dataset<float> load_data(const std::string& manifest_path, const std::string& vocab_path,
                         const ModelConfig& cfg) {
  const DatasetManifest m = load_manifest(manifest_path, vocab_path, /*strict=*/true);
  for (const auto& issue : m.issues)
    if (!issue.error) std::cerr << "warning: " << issue.message << "\n";
  return load_dataset<float>(m, fs::path(manifest_path).parent_path(), cfg);
}

void check_vocab_sizes(const ModelConfig& cfg, const Vocab& vocab) {
  if (cfg.num_diseases != static_cast<int>(vocab.diseases.size()) ||
      (cfg.body_part_head && cfg.num_body_parts != static_cast<int>(vocab.body_parts.size())) ||
      (cfg.attribute_head && cfg.num_attributes != static_cast<int>(vocab.attributes.size())))
    throw ConfigError("model class counts do not match the vocabulary sizes");
}

int cmd_train(const CommonOpts& common, const std::string& manifest,
              const std::string& vocab, const std::string& val_manifest,
              const std::string& resume) {
  LoadedConfig lc = load_config(common);
  Dataset<float> ds = load_data(manifest, vocab, lc.model);
  check_vocab_sizes(lc.model, ds.vocab);

  std::vector<int> train_idx, val_idx;
  if (!val_manifest.empty()) {
    const size_t n_train = ds.samples.size();
    Dataset<float> val = load_data(val_manifest, vocab, lc.model);
    for (auto& s : val.samples) ds.samples.push_back(std::move(s));
    for (size_t i = 0; i < n_train; ++i) train_idx.push_back(static_cast<int>(i));
    for (size_t i = n_train; i < ds.samples.size(); ++i) val_idx.push_back(static_cast<int>(i));
  } else {
    // No val manifest: hold out one stratified fifth.
    KFoldResult kf = kfold_split(ds.disease_labels(), 5, lc.train.seed);
    train_idx = kf.folds[0].train;
    val_idx = kf.folds[0].val;
    std::cerr << "note: no --val-manifest; holding out a stratified 20% split\n";
  }

  Model<float> model(lc.model);
  const TrainResult res = train_model(model, ds, train_idx, val_idx, lc.train,
                                      common.out_dir, resume);
  std::cout << "trained " << res.steps << " steps over " << res.epochs_done
            << " epochs; best val disease F1 " << res.best_val_f1 << " (epoch "
            << res.best_epoch << ")\n"
            << "checkpoints in " << common.out_dir << "/{last,best}, log in "
            << common.out_dir << "/log.jsonl\n";
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& checkpoint,
             const std::string& manifest, const std::string& vocab, double threshold) {
  const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  Dataset<float> ds = load_data(manifest, vocab, meta.config);
  check_vocab_sizes(meta.config, ds.vocab);
  Model<float> model(meta.config);
  load_checkpoint(checkpoint, model.params());
  std::vector<int> idx(ds.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const MetricsReport rep =
      evaluate_model(model, ds, idx, common.threads, static_cast<float>(threshold));
  const nlohmann::json j = metrics_report_to_json(rep);
  fs::create_directories(common.out_dir);
  std::ofstream(fs::path(common.out_dir) / "metrics.json") << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_crossval(const CommonOpts& common, const std::string& manifest,
                 const std::string& vocab, int folds) {
  LoadedConfig lc = load_config(common);
  Dataset<float> ds = load_data(manifest, vocab, lc.model);
  check_vocab_sizes(lc.model, ds.vocab);
  const CrossvalResult res = crossval(lc.model, ds, folds, lc.train, common.out_dir);
  std::cout << res.aggregate.dump(2) << "\n";
  if (!res.fold_errors.empty()) {
    for (const auto& e : res.fold_errors) std::cerr << "error: " << e << "\n";
    return 1;
  }
  std::cout << "report written to " << common.out_dir << "/crossval.json\n";
  return 0;
}

int cmd_attend(const CommonOpts& common, const std::string& checkpoint,
               const std::string& image_path, int layer, const std::string& out_png,
               const std::string& out_csv, double alpha) {
  const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  Model<float> model(meta.config);
  load_checkpoint(checkpoint, model.params());
  ImageTensor<float> img =
      fit_to(read_image(image_path), meta.config.image_height, meta.config.image_width);
  if (layer < 0) layer = default_attention_layer(meta.config);
  fs::path png = out_png.empty() ? fs::path(common.out_dir) / "attention.png"
                                 : fs::path(out_png);
  if (png.has_parent_path()) fs::create_directories(png.parent_path());
  export_attention(model, img, layer, png,
                   out_csv.empty() ? fs::path{} : fs::path(out_csv),
                   static_cast<float>(alpha));
  std::cout << "attention map for layer " << layer << " written to " << png.string() << "\n";
  return 0;
}

int cmd_validate(const std::string& manifest, const std::string& vocab) {
  const DatasetManifest m = load_manifest(manifest, vocab, /*strict=*/false);
  int errors = 0, warnings = 0;
  for (const auto& issue : m.issues) {
    std::cout << (issue.error ? "ERROR " : "WARN  ") << issue.message << "\n";
    (issue.error ? errors : warnings)++;
  }
  std::cout << m.records.size() << " valid records; vocab sizes: "
            << m.vocab.diseases.size() << " diseases, " << m.vocab.body_parts.size()
            << " body parts, " << m.vocab.attributes.size() << " attributes; " << errors
            << " errors, " << warnings << " warnings\n";
  return errors > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task vision transformer for skin-lesion differential diagnosis"};
  app.require_subcommand(1);

  CommonOpts common;
  app.add_option("--config", common.config_path, "JSON config file ({\"model\":..,\"train\":..})")
      ->envname("MTVIT_CONFIG");
  app.add_option("--seed", common.seed, "master RNG seed")->envname("MTVIT_SEED");
  app.add_option("--threads", common.threads, "worker thread count")->envname("MTVIT_THREADS");
  app.add_option("--out-dir", common.out_dir, "output directory")->envname("MTVIT_OUT_DIR");

  std::string manifest, vocab, val_manifest, resume, checkpoint, image, out_png, out_csv;
  int folds = 5, layer = -1;
  double threshold = 0.5, alpha = 0.5;

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--manifest", manifest, "JSONL dataset manifest")->required();
  train->add_option("--vocab", vocab, "JSON vocabulary file")->required();
  train->add_option("--val-manifest", val_manifest, "validation manifest");
  train->add_option("--resume", resume, "resume from a last/ checkpoint directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--manifest", manifest, "JSONL dataset manifest")->required();
  eval->add_option("--vocab", vocab, "JSON vocabulary file")->required();
  eval->add_option("--threshold", threshold, "multi-label decision threshold");

  CLI::App* cv = app.add_subcommand("crossval", "k-fold cross-validation");
  cv->add_option("--manifest", manifest, "JSONL dataset manifest")->required();
  cv->add_option("--vocab", vocab, "JSON vocabulary file")->required();
  cv->add_option("--folds", folds, "number of folds");

  CLI::App* attend = app.add_subcommand("attend", "export an attention heatmap");
  attend->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  attend->add_option("--image", image, "input image (PNG or JPEG)")->required();
  attend->add_option("--layer", layer, "attention layer index (default: last disease layer)");
  attend->add_option("--out", out_png, "output PNG path");
  attend->add_option("--csv", out_csv, "also dump the raw score grid as CSV");
  attend->add_option("--alpha", alpha, "overlay opacity");

  CLI::App* validate = app.add_subcommand("validate-data", "validate a manifest");
  validate->add_option("--manifest", manifest, "JSONL dataset manifest")->required();
  validate->add_option("--vocab", vocab, "JSON vocabulary file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(common, manifest, vocab, val_manifest, resume);
    if (*eval) return cmd_eval(common, checkpoint, manifest, vocab, threshold);
    if (*cv) return cmd_crossval(common, manifest, vocab, folds);
    if (*attend)
      return cmd_attend(common, checkpoint, image, layer, out_png, out_csv, alpha);
    if (*validate) return cmd_validate(manifest, vocab);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
