#pragma once

// Command implementations behind the ccprompt executable. Each returns the
// text it would print; files are written as a side effect.

#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "ccprompt/config.hpp"
#include "ccprompt/data.hpp"
#include "ccprompt/trainer.hpp"

namespace ccprompt {

struct TrainOverrides {
  std::optional<Index> k;
  std::optional<std::uint64_t> episode_seed;
  std::optional<Ablation> ablation;
  std::string checkpoint;  // empty: from the config
};

struct TrainSummary {
  std::string config_hash;
  double learning_rate = 0.0;
  double dev_metric = 0.0;
  Index best_epoch = -1;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::string checkpoint;
  std::string log;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

TrainSummary cmd_train(const RunConfig& config, const TrainOverrides& overrides = {});

/// One cmd_train per episode seed; checkpoints get a "_seed<s>" suffix.
/// Returns JSON with each run's summary and the dev metric's mean and spread.
std::string cmd_train_seeds(const RunConfig& config, const TrainOverrides& overrides,
                            const std::vector<std::uint64_t>& seeds);

struct EvalOptions {
  std::string split = "test";  // train, dev, test, or a JSONL path
  std::string records;         // optional JSONL of per-instance predictions
};

/// Metrics JSON: config_hash, split, n, accuracy, micro_f1, metric name and value.
std::string cmd_eval(const std::string& checkpoint, const EvalOptions& options);

/// Writes one manifest per (K, seed) into `out_dir`; returns the paths.
std::vector<std::string> cmd_sample_episodes(const RunConfig& config,
                                             const std::vector<Index>& ks,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::string& out_dir);

enum class HighlightMode { Fact, Contrastive };

struct AnalyzeOptions {
  std::string split = "test";
  HighlightMode mode = HighlightMode::Contrastive;
  bool html = false;
  bool correct_only = true;
  Index max_cases = 5;
  std::string output;   // empty: return the report only
  std::string records;  // optional JSONL of per-instance predictions
};

std::string cmd_analyze(const std::string& checkpoint, const AnalyzeOptions& options);

/// 2 config, 3 data, 4 numeric, 1 anything else.
int exit_code_for(const std::exception& e);

/// Examples from instances, truncating each to what fits in the prompt.
std::vector<Example> make_examples(const CCPromptModel& model,
                                   const std::vector<LabeledInstance>& instances,
                                   Index m);

}  // namespace ccprompt
