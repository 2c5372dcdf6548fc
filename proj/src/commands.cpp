#include "ccprompt/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "json.hpp"

#include "ccprompt/analysis.hpp"
#include "ccprompt/checkpoint.hpp"
#include "ccprompt/error.hpp"

namespace ccprompt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_file(const std::string& path, const std::string& text) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot write " + path);
  out << text;
  require(out.good(), ErrorCode::IoError, "write failed for " + path);
}

const std::string& require_path(const std::string& path, const std::string& key) {
  require(!path.empty(), ErrorCode::ConfigError, key + ": missing dataset path");
  return path;
}

std::string split_path(const RunConfig& config, const std::string& split) {
  if (split == "train") return require_path(config.data.train, "data.train");
  if (split == "dev") return require_path(config.data.dev, "data.dev");
  if (split == "test") return require_path(config.data.test, "data.test");
  return split;
}

std::vector<Index> labels_of(std::span<const Example> examples) {
  std::vector<Index> out;
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

struct Scored {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double metric = 0.0;
};

Scored score(const std::vector<Index>& preds, const std::vector<Index>& golds,
             std::optional<Index> negative) {
  Scored s;
  s.accuracy = accuracy(preds, golds);
  s.micro_f1 = micro_f1(preds, golds, negative);
  s.metric = negative ? s.micro_f1 : s.accuracy;
  return s;
}

std::vector<PredictionRecord> to_records(std::span<const Example> examples,
                                         const std::vector<Prediction>& preds) {
  std::vector<PredictionRecord> out;
  for (std::size_t n = 0; n < examples.size(); ++n) {
    PredictionRecord r{examples[n].id, examples[n].label, preds[n].label, {}};
    for (const auto& s : preds[n].selection.selected)
      r.selection.push_back({s.fact, s.counterfact, s.score});
    out.push_back(std::move(r));
  }
  return out;
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::vector<Example> make_examples(const CCPromptModel& model,
                                   const std::vector<LabeledInstance>& instances, Index m) {
  const Index r = model.num_classes();
  const Index attrs = std::max(m > 0 ? m : r - 1, r - 1);
  const Index templ = model.config().template_text.empty()
                          ? model.config().template_tokens
                          : static_cast<Index>(model.config().template_text.size());
  const Index room = model.max_length() - attrs - templ - 1;
  require(room >= 1, ErrorCode::ConfigError,
          "model.max_length leaves no room for instance tokens");
  std::vector<Example> out;
  for (const auto& inst : instances) {
    const auto len = std::min<std::size_t>(inst.tokens.size(), static_cast<std::size_t>(room));
    out.push_back({inst.id, model.tokenize(std::span(inst.tokens).first(len)), inst.label});
  }
  return out;
}

std::string TrainSummary::to_json() const {
  json j{{"config_hash", config_hash}, {"learning_rate", learning_rate},
         {"dev_metric", dev_metric},   {"best_epoch", best_epoch},
         {"initial_loss", initial_loss}, {"final_loss", final_loss},
         {"checkpoint", checkpoint},   {"log", log},
         {"warnings", warnings}};
  return j.dump(2) + "\n";
}

TrainSummary cmd_train(const RunConfig& base, const TrainOverrides& overrides) {
  RunConfig config = base;
  if (overrides.k) {
    config.episode.k = overrides.k;
    config.setting = "few_shot";
  }
  if (overrides.episode_seed) config.episode.seed = *overrides.episode_seed;
  if (overrides.ablation) config.train.ablation = *overrides.ablation;
  if (!overrides.checkpoint.empty()) config.output.checkpoint = overrides.checkpoint;
  config.train.validate();

  TrainSummary summary;
  summary.config_hash = config.hash();
  summary.checkpoint = config.output.checkpoint;
  summary.log = config.output.log.empty() ? config.output.checkpoint + ".log" : config.output.log;

  const LabelSet labels = load_labels(require_path(config.data.labels, "data.labels"));
  const Index r = static_cast<Index>(labels.names.size());
  const auto train_all = load_jsonl(require_path(config.data.train, "data.train"), labels);

  std::vector<LabeledInstance> train, dev;
  if (config.setting == "few_shot" && config.episode.k) {
    const FewShotEpisode ep =
        sample_episode(train_all, r, *config.episode.k, config.episode.seed, config.data.name);
    train = select_by_ids(train_all, ep.train_ids);
    dev = select_by_ids(train_all, ep.dev_ids);
    summary.warnings = ep.warnings;
  } else {
    train = train_all;
    if (!config.data.dev.empty()) dev = load_jsonl(config.data.dev, labels);
  }
  require(!train.empty(), ErrorCode::DataError, "training set is empty");

  std::vector<std::vector<std::string>> corpus;
  for (const auto& inst : train) corpus.push_back(inst.tokens);
  const Vocabulary vocab = Vocabulary::build(corpus, config.model.vocab_size);

  const auto negative = labels.negative;
  const Trainer::DevMetric metric = [&](CCPromptModel& model, std::span<const Example> set) {
    const auto preds = predict_all(model, set, config.train.forward_options());
    std::vector<Index> labels_pred;
    for (const auto& p : preds) labels_pred.push_back(p.label);
    return score(labels_pred, labels_of(set), negative).metric;
  };

  std::ostringstream log;
  log << "# config_hash=" << summary.config_hash << "\n";
  std::unique_ptr<CCPromptModel> best;
  bool have_best = false;
  for (double lr : config.learning_rates) {
    TrainConfig tc = config.train;
    tc.learning_rate = lr;
    auto model = std::make_unique<CCPromptModel>(config.model, labels.names, vocab, tc.seed);
    const auto train_ex = make_examples(*model, train, tc.m);
    const auto dev_ex = make_examples(*model, dev, tc.m);
    Trainer trainer(*model, tc);
    log << "# learning_rate=" << number(lr) << "\n";
    const auto result = trainer.fit(train_ex, dev_ex, metric, &log);
    const double selected = dev_ex.empty() ? metric(*model, train_ex) : result.best_dev;
    log << "# learning_rate=" << number(lr) << " selection_metric=" << number(selected) << "\n";
    if (!have_best || selected > summary.dev_metric) {
      have_best = true;
      best = std::move(model);
      summary.learning_rate = lr;
      summary.dev_metric = selected;
      summary.best_epoch = result.best_epoch;
      if (!result.step_losses.empty()) {
        summary.initial_loss = result.step_losses.front().total;
        summary.final_loss = result.step_losses.back().total;
      }
    }
  }

  CheckpointMeta meta;
  meta.config = config;
  meta.labels = labels.names;
  meta.negative_label = negative;
  meta.learning_rate = summary.learning_rate;
  meta.config_hash = summary.config_hash;
  const fs::path parent = fs::path(summary.checkpoint).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_checkpoint(summary.checkpoint, *best, meta);
  write_file(summary.log, log.str());
  return summary;
}

std::string cmd_train_seeds(const RunConfig& config, const TrainOverrides& overrides,
                            const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), ErrorCode::ConfigError, "no episode seeds given");
  const fs::path base(overrides.checkpoint.empty() ? config.output.checkpoint : overrides.checkpoint);
  json runs = json::array();
  std::vector<double> metrics;
  for (std::uint64_t seed : seeds) {
    TrainOverrides o = overrides;
    o.episode_seed = seed;
    fs::path ck = base;
    ck.replace_filename(base.stem().string() + "_seed" + std::to_string(seed) +
                        base.extension().string());
    o.checkpoint = ck.string();
    const TrainSummary s = cmd_train(config, o);
    metrics.push_back(s.dev_metric);
    json run = json::parse(s.to_json());
    run["seed"] = seed;
    runs.push_back(run);
  }
  const SeedAggregate a = aggregate_over_seeds(metrics);
  json j{{"config_hash", config.hash()},
         {"seeds", seeds},
         {"runs", runs},
         {"dev_metric_mean", a.mean},
         {"dev_metric_std", a.stddev}};
  return j.dump(2) + "\n";
}

std::string cmd_eval(const std::string& checkpoint, const EvalOptions& options) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const RunConfig& config = ck.meta.config;
  const LabelSet labels{ck.meta.labels, ck.meta.negative_label};
  const auto instances = load_jsonl(split_path(config, options.split), labels);
  const auto examples = make_examples(*ck.model, instances, config.train.m);
  const auto preds = predict_all(*ck.model, examples, config.train.forward_options());
  std::vector<Index> predicted;
  for (const auto& p : preds) predicted.push_back(p.label);
  const Scored s = score(predicted, labels_of(examples), labels.negative);
  if (!options.records.empty())
    write_file(options.records, records_to_jsonl(to_records(examples, preds)));

  json j{{"config_hash", ck.meta.config_hash},
         {"split", options.split},
         {"n", examples.size()},
         {"accuracy", s.accuracy},
         {"micro_f1", s.micro_f1},
         {"metric", labels.negative ? "micro_f1" : "accuracy"},
         {"value", s.metric}};
  return j.dump(2) + "\n";
}

std::vector<std::string> cmd_sample_episodes(const RunConfig& config, const std::vector<Index>& ks,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::string& out_dir) {
  const LabelSet labels = load_labels(require_path(config.data.labels, "data.labels"));
  const auto train = load_jsonl(require_path(config.data.train, "data.train"), labels);
  std::vector<std::string> paths;
  for (Index k : ks)
    for (std::uint64_t seed : seeds) {
      const auto ep = sample_episode(train, static_cast<Index>(labels.names.size()), k, seed,
                                     config.data.name);
      json j = json::parse(episode_to_json(ep));
      j["config_hash"] = config.hash();
      const std::string path = (fs::path(out_dir) / (config.data.name + "_K" + std::to_string(k) +
                                                     "_seed" + std::to_string(seed) + ".json"))
                                   .string();
      write_file(path, j.dump(2) + "\n");
      paths.push_back(path);
    }
  return paths;
}

std::string cmd_analyze(const std::string& checkpoint, const AnalyzeOptions& options) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  CCPromptModel& model = *ck.model;
  const RunConfig& config = ck.meta.config;
  const LabelSet labels{ck.meta.labels, ck.meta.negative_label};
  const auto instances = load_jsonl(split_path(config, options.split), labels);
  const auto examples = make_examples(model, instances, config.train.m);
  const auto preds = predict_all(model, examples, config.train.forward_options());
  const auto records = to_records(examples, preds);
  if (!options.records.empty()) write_file(options.records, records_to_jsonl(records));

  std::vector<Index> predicted;
  for (const auto& p : preds) predicted.push_back(p.label);
  const Scored s = score(predicted, labels_of(examples), labels.negative);

  ReportInput report;
  report.label_names = labels.names;
  report.table = counterfact_frequency(records, options.correct_only);
  report.metadata = {{"config_hash", ck.meta.config_hash},
                     {"split", options.split},
                     {"instances", std::to_string(examples.size())},
                     {labels.negative ? "micro_f1" : "accuracy", number(s.metric)},
                     {"mode", options.mode == HighlightMode::Fact ? "fact" : "contrastive"},
                     {"correct_only", options.correct_only ? "true" : "false"}};

  const MatrixXd& v = model.verbalizer_var().value();
  for (std::size_t n = 0; n < examples.size(); ++n) {
    if (static_cast<Index>(report.cases.size()) >= options.max_cases) break;
    const auto& rec = records[n];
    if (options.correct_only && rec.predicted != rec.gold) continue;
    const Index gold = rec.gold;
    VectorXd direction = v.row(gold).transpose();
    std::string title = "gold " + labels.names[static_cast<std::size_t>(gold)];
    if (options.mode == HighlightMode::Contrastive) {
      std::optional<Index> other;
      for (const auto& sel : rec.selection)
        if (sel.fact == gold) {
          other = sel.counterfact;
          break;
        }
      if (!other) {
        VectorXd logits = preds[n].logits;
        logits(gold) = -std::numeric_limits<double>::infinity();
        Index j = 0;
        logits.maxCoeff(&j);
        other = j;
      }
      direction -= v.row(*other).transpose();
      title += " vs " + labels.names[static_cast<std::size_t>(*other)];
    }
    const auto repr = instance_representation(examples[n].ids, model.instance_backend(),
                                              model.representation_head());
    const auto& tokens = instances[n].tokens;
    const std::vector<std::string> shown(tokens.begin(),
                                         tokens.begin() + static_cast<std::ptrdiff_t>(examples[n].ids.size()));
    report.cases.push_back({rec.id, title, highlight_tokens(shown, repr.token_states.value(), direction)});
  }

  const std::string text =
      render_report(report, options.html ? ReportFormat::Html : ReportFormat::Markdown);
  if (!options.output.empty()) write_file(options.output, text);
  return text;
}

int exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return 1;
  switch (err->code()) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidM:
      return 2;
    case ErrorCode::ParseError:
    case ErrorCode::UnknownLabel:
    case ErrorCode::SpanOutOfBounds:
    case ErrorCode::DataError:
    case ErrorCode::IoError:
    case ErrorCode::LengthOverflow:
    case ErrorCode::LengthMismatch:
    case ErrorCode::EmptySelection:
    case ErrorCode::EmptySequence:
      return 3;
    case ErrorCode::NumericFailure:
    case ErrorCode::DegenerateDirection:
    case ErrorCode::ZeroVector:
      return 4;
    default:
      return 1;
  }
}

}  // namespace ccprompt
