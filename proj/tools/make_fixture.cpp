// Writes a small synthetic probing setup (two tasks plus a sweep config) for
// trying the mlprobe CLI without an encoder.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlprobe/synthetic.hpp"

int main(int argc, char **argv) {
  namespace syn = mlprobe::synthetic;
  CLI::App app{"Generate synthetic probing fixtures", "make_fixture"};
  std::string out = "fixture";
  std::vector<int> layers = {1, 2, 3};
  syn::SplitSizes sizes{2000, 500, 500};
  app.add_option("--out", out, "output directory");
  app.add_option("--layers", layers, "layer indices to generate");
  app.add_option("--train", sizes.train, "training rows per layer");
  app.add_option("--val", sizes.val, "validation rows per layer");
  app.add_option("--test", sizes.test, "test rows per layer");
  CLI11_PARSE(app, argc, argv);

  try {
    syn::write_fixture_task(out, "XorTask", mlprobe::Level::syntactic, syn::Signal::xor_pair, layers, sizes, 1);
    syn::write_fixture_task(out, "LinearTask", mlprobe::Level::surface, syn::Signal::linear, layers, sizes, 2);
    const nlohmann::json config = {
        {"manifests", {"XorTask/manifest.json", "LinearTask/manifest.json"}},
        {"results_dir", "results"},
        {"workers", 1},
        {"sweep", {{"tasks", {"XorTask", "LinearTask"}}, {"layers", layers}, {"seeds", {0, 1, 2}}}},
        {"train",
         {{"batch_size", 64}, {"epochs", 10}, {"lr", 3e-3}, {"eval_every", 50}, {"patience", 5}, {"hidden", 16}}},
        {"cluster", {{"mode", "per_task"}, {"layer", layers.back()}, {"n_init", 10}, {"seed", 0}, {"probe_seed", 0}}}};
    mlprobe::write_file_atomic(mlprobe::fs::path(out) / "config.json", config.dump(2) + "\n");
  } catch (const std::exception &e) {
    std::cerr << "make_fixture: " << e.what() << "\n";
    return 2;
  }
  std::cout << "fixture written to " << out << "\n";
  return 0;
}
