#pragma once

// Attention-map export: mutual scores of one layer reshaped onto the patch
// grid, bilinearly upsampled, colour-mapped and alpha-blended over the input.

#include <filesystem>
#include <fstream>

#include "mtvit/image_io.hpp"
#include "mtvit/lesion.hpp"
#include "mtvit/model.hpp"

namespace mtvit {

// Attention records in a Prediction are ordered: backbone layers first, then
// the enabled task heads (disease, body_part, attribute), head_layers each.
// The default export layer is the last disease-head layer.
inline int default_attention_layer(const ModelConfig& cfg) {
  return cfg.backbone_layers + cfg.head_layers - 1;
}

template <typename T>
Mat<T> scores_to_grid(const std::vector<T>& scores, const ModelConfig& cfg) {
  if (static_cast<int>(scores.size()) != cfg.num_patches())
    throw ConfigError("score vector length does not match the patch grid");
  Mat<T> grid(cfg.grid_rows(), cfg.grid_cols());
  grid.data.assign(scores.begin(), scores.end());
  return grid;
}

// Classic jet ramp; constant input maps to mid-scale everywhere.
template <typename T>
void jet_color(T t, T rgb[3]) {
  auto band = [](T v) { return std::clamp(v, T(0), T(1)); };
  rgb[0] = band(T(1.5) - std::abs(T(4) * t - T(3)));
  rgb[1] = band(T(1.5) - std::abs(T(4) * t - T(2)));
  rgb[2] = band(T(1.5) - std::abs(T(4) * t - T(1)));
}

template <typename T>
ImageTensor<T> render_heatmap(const ImageTensor<T>& base, const std::vector<T>& scores,
                              const ModelConfig& cfg, T alpha = T(0.5)) {
  const Mat<T> grid = scores_to_grid(scores, cfg);
  T mn = grid.data[0], mx = grid.data[0];
  for (T v : grid.data) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  ImageTensor<T> small(grid.rows, grid.cols);
  for (int y = 0; y < grid.rows; ++y)
    for (int x = 0; x < grid.cols; ++x) {
      const T t = (mx - mn) > T(1e-12) ? (grid.at(y, x) - mn) / (mx - mn) : T(0.5);
      for (int c = 0; c < 3; ++c) small.at(y, x, c) = t;
    }
  const ImageTensor<T> up = bilinear_resize(small, cfg.image_height, cfg.image_width);
  ImageTensor<T> out(base.height, base.width);
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) {
      T rgb[3];
      jet_color(up.at(y, x, 0), rgb);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = (T(1) - alpha) * base.at(y, x, c) + alpha * rgb[c];
    }
  return out;
}

// Runs the model, takes mutual scores of the requested attention layer, and
// writes the blended heatmap PNG (optionally the raw score grid as CSV).
template <typename T>
std::vector<T> export_attention(const Model<T>& model, const ImageTensor<T>& image,
                                int layer_index, const std::filesystem::path& png_out,
                                const std::filesystem::path& csv_out = {},
                                T alpha = T(0.5)) {
  const Prediction<T> pred = model.predict(image);
  if (layer_index < 0 || layer_index >= static_cast<int>(pred.attention.size()))
    throw ConfigError("invalid attention layer index " + std::to_string(layer_index) +
                      " (have " + std::to_string(pred.attention.size()) + " layers)");
  const std::vector<T> scores = mutual_scores(pred.attention[layer_index]);
  const ImageTensor<T> heat = render_heatmap(image, scores, model.config(), alpha);
  write_png(png_out, heat);
  if (!csv_out.empty()) {
    std::ofstream csv(csv_out);
    if (!csv) throw IoError("cannot write " + csv_out.string());
    const Mat<T> grid = scores_to_grid(scores, model.config());
    for (int y = 0; y < grid.rows; ++y) {
      for (int x = 0; x < grid.cols; ++x) csv << (x ? "," : "") << grid.at(y, x);
      csv << "\n";
    }
  }
  return scores;
}

}  // namespace mtvit
