#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccprompt/commands.hpp"
#include "ccprompt/error.hpp"

using namespace ccprompt;

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual-contrastive prompt tuning"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, split = "test", records, output, out_dir = "episodes";
  std::string mode = "contrastive", ablation, format = "markdown";
  std::vector<Index> ks;
  std::vector<std::uint64_t> seeds;
  Index max_cases = 5;
  bool all_instances = false;

  auto* train = app.add_subcommand("train", "Train over the learning-rate grid and keep the best dev model");
  train->add_option("--config", config_path, "INI run configuration")->required();
  train->add_option("--checkpoint", checkpoint, "Checkpoint path (overrides [output] checkpoint)");
  train->add_option("--K", ks, "Shots per class (overrides [episode] K)")->expected(0, 1);
  train->add_option("--seeds", seeds, "Episode seeds; several train one model each and report the mean");
  train->add_option("--ablation", ablation, "Ablation")
      ->check(CLI::IsMember({"none", "no_conatt", "no_prototypes", "no_lcon", "no_siamese"}));

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split, "train, dev, test, or a JSONL path");
  eval->add_option("--records", records, "Write per-instance predictions as JSONL");

  auto* sample = app.add_subcommand("sample-episodes", "Write K-shot episode manifests");
  sample->add_option("--config", config_path, "INI run configuration")->required();
  sample->add_option("--K", ks, "Shots per class")->required();
  sample->add_option("--seeds", seeds, "Episode seeds (default 13 21 42 87 100)");
  sample->add_option("--out", out_dir, "Output directory");

  auto* analyze = app.add_subcommand("analyze", "Counterfact frequency table and token highlights");
  analyze->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  analyze->add_option("--split", split, "train, dev, test, or a JSONL path");
  analyze->add_option("--mode", mode, "Highlight direction")
      ->check(CLI::IsMember({"fact", "contrastive"}));
  analyze->add_option("--format", format, "Report format")
      ->check(CLI::IsMember({"markdown", "html"}));
  analyze->add_option("--output", output, "Report file (default: stdout)");
  analyze->add_option("--records", records, "Write per-instance predictions as JSONL");
  analyze->add_option("--cases", max_cases, "Number of highlighted cases");
  analyze->add_flag("--all", all_instances, "Include misclassified instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // bad flags are configuration errors
  }

  try {
    if (*train) {
      TrainOverrides o;
      if (!ks.empty()) o.k = ks.front();
      if (!ablation.empty()) o.ablation = parse_ablation(ablation);
      o.checkpoint = checkpoint;
      if (seeds.size() > 1) {
        std::cout << cmd_train_seeds(load_config(config_path), o, seeds);
      } else {
        if (!seeds.empty()) o.episode_seed = seeds.front();
        std::cout << cmd_train(load_config(config_path), o).to_json();
      }
    } else if (*eval) {
      std::cout << cmd_eval(checkpoint, {split, records});
    } else if (*sample) {
      if (seeds.empty()) seeds.assign(kDefaultEpisodeSeeds.begin(), kDefaultEpisodeSeeds.end());
      for (const auto& p : cmd_sample_episodes(load_config(config_path), ks, seeds, out_dir))
        std::cout << p << "\n";
    } else if (*analyze) {
      AnalyzeOptions o;
      o.split = split;
      o.mode = mode == "fact" ? HighlightMode::Fact : HighlightMode::Contrastive;
      o.html = format == "html";
      o.correct_only = !all_instances;
      o.max_cases = max_cases;
      o.output = output;
      o.records = records;
      const std::string report = cmd_analyze(checkpoint, o);
      if (output.empty()) std::cout << report;
    }
  } catch (const std::exception& e) {
    std::cerr << "ccprompt: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
