#pragma once

// Run configuration: INI sections [data], [episode], [model],
// [encoder_options], [train], [output]. Unknown keys are rejected.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccprompt/model.hpp"
#include "ccprompt/trainer.hpp"

namespace ccprompt {

struct DataConfig {
  std::string name = "dataset";
  std::string labels;
  std::string train;
  std::string dev;
  std::string test;
};

struct EpisodeConfig {
  std::optional<Index> k;  // set: few-shot run on a sampled episode
  std::uint64_t seed = 13;
};

struct OutputConfig {
  std::string checkpoint = "model.ckpt";
  std::string log;  // empty: checkpoint path + ".log"
};

struct RunConfig {
  DataConfig data;
  EpisodeConfig episode;
  ModelConfig model;
  TrainConfig train;
  std::string setting = "few_shot";  // "few_shot" or "full"
  std::vector<double> learning_rates{1e-5, 3e-5, 5e-5};
  OutputConfig output;

  /// Every key with its resolved value; parses back to the same config.
  std::string canonical() const;
  /// FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;
};

/// Relative paths resolve against `base_dir`.
RunConfig parse_config(const std::string& text, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace ccprompt
