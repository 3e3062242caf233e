#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bangacmm/commands.hpp"

using namespace bangacmm;

int main(int argc, char** argv) {
  CLI::App app{"Multimodal author-intent classification: data generation, training, evaluation"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override every seed in the configuration");

  std::string spec, out_dir;
  auto* gen = app.add_subcommand("gen-data", "Generate a planted-signal synthetic dataset");
  gen->add_option("--spec", spec, "Synthetic spec file (key=value)")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string config;
  std::string modality;
  auto* train = app.add_subcommand("train", "Train one model and evaluate it on the test split");
  train->add_option("--config", config, "Run configuration file")->required();
  train->add_option("--modality", modality, "text, image or both")->check(CLI::IsMember({"text", "image", "both"}));

  std::string checkpoint, manifest, split = "test";
  std::optional<std::string> eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--manifest", manifest, "Manifest file")->required();
  eval->add_option("--split", split, "train, val, test or all")->capture_default_str();
  eval->add_option("--out", eval_out, "Directory for report.kv and confusion.tsv");

  auto* compare = app.add_subcommand("compare", "Train the five ablation rows and print the comparison table");
  compare->add_option("--config", config, "Run configuration file")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every parameter tensor");
  grad->add_option("--config", config, "Model configuration file")->required();

  for (auto* sub : {gen, train, eval, compare, grad}) sub->add_option("--seed", seed, "Override every seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  CommandOptions opt;
  opt.seed = seed;
  if (*gen) return cmd_gen_data(spec, out_dir, opt, std::cout, std::cerr);
  if (*train) {
    std::optional<Modality> m;
    if (!modality.empty()) m = parse_modality(modality);
    return cmd_train(config, m, opt, std::cout, std::cerr);
  }
  if (*eval) return cmd_eval(checkpoint, manifest, split, eval_out, std::cout, std::cerr);
  if (*compare) return cmd_compare(config, opt, std::cout, std::cerr);
  if (*grad) return cmd_gradcheck(config, opt, std::cout, std::cerr);
  return kExitValidation;
}
