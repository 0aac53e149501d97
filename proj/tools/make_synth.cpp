// Writes a synthetic lesion dataset (PNGs + manifest.jsonl + vocab.json +
// boxes.json) so the CLI can be exercised without clinical data.

#include <iostream>

#include <CLI11.hpp>

#include "mtvit/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic lesion dataset"};
  std::string out = "synth";
  mtvit::SyntheticConfig cfg;
  app.add_option("--out", out, "output directory");
  app.add_option("--num", cfg.num_images, "number of images");
  app.add_option("--seed", cfg.seed, "RNG seed");
  app.add_option("--ambiguity", cfg.ambiguity, "fraction of color-blended lesions [0,1]");
  CLI11_PARSE(app, argc, argv);

  try {
    mtvit::write_synthetic_dataset(out, cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "wrote " << cfg.num_images << " images under " << out << "\n";
  return 0;
}
