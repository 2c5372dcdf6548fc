#pragma once

// Checkpoint file: a text manifest terminated by "[end]", then the raw
// little-endian f64 payload of every tensor in manifest order.

#include <memory>
#include <optional>
#include <string>

#include "ccprompt/config.hpp"
#include "ccprompt/model.hpp"

namespace ccprompt {

struct CheckpointMeta {
  RunConfig config;
  std::vector<std::string> labels;
  std::optional<Index> negative_label;
  double learning_rate = 0.0;  // the grid value the saved model was trained with
  std::string config_hash;
};

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::unique_ptr<CCPromptModel> model;
};

void save_checkpoint(const std::string& path, CCPromptModel& model, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace ccprompt
