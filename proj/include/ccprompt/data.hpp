#pragma once

// Dataset ingestion, seeded K-shot episodes, and classification metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccprompt/types.hpp"

namespace ccprompt {

struct EntitySpan {
  Index start = 0;  // token offsets, end exclusive
  Index end = 0;
  std::string role;

  bool operator==(const EntitySpan&) const = default;
};

struct LabeledInstance {
  std::string id;
  std::vector<std::string> tokens;
  Index label = 0;
  std::vector<EntitySpan> spans;

  bool operator==(const LabeledInstance&) const = default;
};

/// Frozen class-id ordering. A label is the negative class when its line in
/// the labels file carries a "negative:" prefix or it is named "no_relation".
struct LabelSet {
  std::vector<std::string> names;
  std::optional<Index> negative;

  Index size() const { return static_cast<Index>(names.size()); }
  std::optional<Index> find(const std::string& name) const;
  Index id(const std::string& name) const;  // throws UnknownLabel
};

LabelSet parse_labels(const std::string& text);
LabelSet load_labels(const std::string& path);

/// Parses JSONL: {"id", "tokens": [...], "label", "spans": [[start,end,"role"],...]}.
/// `source` names the input in error messages.
std::vector<LabeledInstance> parse_jsonl(const std::string& text, const LabelSet& labels,
                                         const std::string& source = "<memory>");
std::vector<LabeledInstance> load_jsonl(const std::string& path, const LabelSet& labels);

std::string to_jsonl(const std::vector<LabeledInstance>& instances, const LabelSet& labels);

struct FewShotEpisode {
  std::string dataset;
  Index k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> dev_ids;
  Index split_size = 0;
  Index num_classes = 0;
  std::vector<std::string> warnings;
};

/// Per-class sampling without replacement. Class c's training pool is
/// shuffled with Pcg32(splitmix64(seed ^ splitmix64(c)), "train") and its
/// first K members taken; dev uses stream "dev" on the same pool and skips
/// anything already in train. Classes are visited in id order.
FewShotEpisode sample_episode(const std::vector<LabeledInstance>& split, Index num_classes,
                              Index k, std::uint64_t seed, const std::string& dataset = "");

std::string episode_to_json(const FewShotEpisode& episode);
FewShotEpisode episode_from_json(const std::string& text);

/// Instances whose ids appear in `ids`, in the order of `ids`.
std::vector<LabeledInstance> select_by_ids(const std::vector<LabeledInstance>& split,
                                           const std::vector<std::string>& ids);

/// Micro-F1; with a negative label, predictions and golds of that class earn
/// no credit (TACRED convention).
double micro_f1(const std::vector<Index>& predictions, const std::vector<Index>& golds,
                std::optional<Index> negative_label = std::nullopt);
double accuracy(const std::vector<Index>& predictions, const std::vector<Index>& golds);

struct SeedAggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample deviation (n - 1); 0 for a single run
  std::size_t runs = 0;
};

/// Mean and spread of one metric over per-seed runs, summed in seed order.
SeedAggregate aggregate_over_seeds(const std::vector<double>& values);

/// Seeds used when a run asks for the standard five-episode protocol.
inline const std::vector<std::uint64_t> kDefaultEpisodeSeeds{13, 21, 42, 87, 100};

}  // namespace ccprompt
