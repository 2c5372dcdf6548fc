#include "doctest.h"

#include <cstdlib>
#include <sys/wait.h>

#include "json.hpp"

#include "ccprompt/checkpoint.hpp"
#include "ccprompt/commands.hpp"
#include "ccprompt/error.hpp"
#include "fixtures.hpp"

using namespace ccprompt;

namespace {

/// A 3-class toy run directory: labels, splits and a config.
struct ToyRun {
  fixtures::ScratchDir dir{"cli"};
  std::string config;

  explicit ToyRun(const std::string& extra = "", int classes = 3) {
    const LabelSet labels = fixtures::class_labels(classes);
    std::string names;
    for (const auto& n : labels.names) names += n + "\n";
    dir.write("labels.txt", names);
    dir.write("train.jsonl", to_jsonl(fixtures::synthetic(classes, 20, 1, 0.0, "tr"), labels));
    dir.write("test.jsonl", to_jsonl(fixtures::synthetic(classes, 6, 2, 0.0, "te"), labels));
    config = dir.write("run.ini", "[data]\nname = toy\nlabels = labels.txt\ntrain = train.jsonl\n"
                                  "dev = train.jsonl\ntest = test.jsonl\n"
                                  "[model]\ndim = 8\nffn_hidden = 8\nhead_hidden = 8\n"
                                  "[train]\nsetting = full\nlearning_rates = 0.01\nepochs = 40\n"
                                  "batch_size = 8\ninclude_positive_in_denominator = true\n"
                                  "[output]\ncheckpoint = out/model.ckpt\n" + extra);
  }
};

int run_cli(const std::string& args) {
  const int status = std::system((std::string(CCPROMPT_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("config defaults follow the few-shot protocol") {
  const RunConfig c = parse_config("");
  CHECK(c.learning_rates == std::vector<double>{1e-5, 3e-5, 5e-5});
  CHECK(c.train.weight_decay == 1e-2);
  CHECK(c.train.batch_size == 16);
  CHECK(c.train.epochs == 30);
  CHECK(c.train.m == 0);
  CHECK_FALSE(c.train.include_positive_in_denominator);
  CHECK(parse_config("[train]\nsetting = full\n").train.epochs == 5);
}

TEST_CASE("config errors name the offending key") {
  try {
    parse_config("[train]\nlearning_rat = 1\n");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find("train.learning_rat") != std::string::npos);
  }
  CHECK(code_of([] { parse_config("[train]\nablation = no_everything\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[train]\nbatch_size = many\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[nowhere]\nx = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[episode]\nK = 0\n"); }) == ErrorCode::ConfigError);
}

TEST_CASE("config paths resolve against the config directory; canonical form round-trips") {
  const RunConfig c = parse_config(
      "[data]\ntrain = data/train.jsonl\n[encoder_options]\npath = vec.txt\n"
      "[model]\ntemplate_text = it is about\n[train]\nablation = no_lcon\nlearning_rates = 1e-3, 2e-3\n",
      "/base");
  CHECK(c.data.train == "/base/data/train.jsonl");
  CHECK(c.model.encoder_options.at("path") == "/base/vec.txt");
  CHECK(c.model.template_text.size() == 3);
  CHECK(c.train.ablation == Ablation::NoLcon);
  const RunConfig back = parse_config(c.canonical(), "");
  CHECK(back.canonical() == c.canonical());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  CHECK(parse_config("").hash() != c.hash());
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("train, checkpoint round trip, eval and analyze") {
  ToyRun run;
  const TrainSummary s = cmd_train(load_config(run.config));
  CHECK(std::filesystem::exists(s.checkpoint));
  CHECK(s.final_loss < s.initial_loss);
  const std::string log = fixtures::read(s.log);
  CHECK(log.rfind("# config_hash=" + s.config_hash, 0) == 0);
  CHECK(log.find("step=1 epoch=0") != std::string::npos);

  // The reloaded model predicts exactly as the saved parameters do.
  LoadedCheckpoint a = load_checkpoint(s.checkpoint);
  LoadedCheckpoint b = load_checkpoint(s.checkpoint);
  CHECK(a.meta.config_hash == s.config_hash);
  auto pa = a.model->parameters(), pb = b.model->parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].var.value() == pb[k].var.value());

  const std::string first = cmd_eval(s.checkpoint, {"test", run.dir.file("records.jsonl")});
  CHECK(first == cmd_eval(s.checkpoint, {"test", ""}));
  const auto j = nlohmann::json::parse(first);
  CHECK(j["config_hash"] == s.config_hash);
  CHECK(j["metric"] == "accuracy");
  CHECK(j["n"] == 18);
  CHECK(j["value"].get<double>() >= 0.8);
  // Fitted to its own training split the model is perfect.
  CHECK(nlohmann::json::parse(cmd_eval(s.checkpoint, {"train", ""}))["value"].get<double>() == 1.0);

  AnalyzeOptions o;
  o.output = run.dir.file("report.md");
  const std::string report = cmd_analyze(s.checkpoint, o);
  CHECK(report == fixtures::read(o.output));
  CHECK(report.find(s.config_hash) != std::string::npos);
  CHECK(report.find("### ") != std::string::npos);
  o.mode = HighlightMode::Fact;
  o.html = true;
  o.output.clear();
  CHECK(cmd_analyze(s.checkpoint, o).find("<html>") != std::string::npos);
}

TEST_CASE("untrained models sit near chance on a balanced 4-class set") {
  const auto data = fixtures::synthetic(4, 25, 5);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& d : data) corpus.push_back(d.tokens);
  const Vocabulary vocab = Vocabulary::build(corpus, 100);
  double mean = 0.0;
  for (std::uint64_t seed : kDefaultEpisodeSeeds) {
    CCPromptModel model({}, fixtures::class_labels(4).names, vocab, seed);
    const auto ex = make_examples(model, data, 0);
    std::vector<Index> p, g;
    for (const auto& pr : predict_all(model, ex, {})) p.push_back(pr.label);
    for (const auto& e : ex) g.push_back(e.label);
    mean += accuracy(p, g) / 5.0;
  }
  CHECK(std::abs(mean - 0.25) <= 0.15);
}

TEST_CASE("episode manifests embed the config hash") {
  ToyRun run;
  const RunConfig c = load_config(run.config);
  const auto paths = cmd_sample_episodes(c, {1, 2}, {13, 21}, run.dir.file("eps"));
  REQUIRE(paths.size() == 4);
  const auto j = nlohmann::json::parse(fixtures::read(paths[3]));
  CHECK(j["config_hash"] == c.hash());
  CHECK(j["K"] == 2);
  CHECK(j["train_ids"].size() == 6);
}

TEST_CASE("multi-seed training writes one checkpoint per seed and reports the mean") {
  ToyRun run;
  TrainOverrides o;
  o.k = 2;
  o.checkpoint = run.dir.file("m.ckpt");
  const auto j = nlohmann::json::parse(cmd_train_seeds(load_config(run.config), o, {13, 21}));
  REQUIRE(j["runs"].size() == 2);
  CHECK(std::filesystem::exists(run.dir.file("m_seed13.ckpt")));
  CHECK(std::filesystem::exists(run.dir.file("m_seed21.ckpt")));
  const double a = j["runs"][0]["dev_metric"], b = j["runs"][1]["dev_metric"];
  CHECK(j["dev_metric_mean"].get<double>() == doctest::Approx((a + b) / 2));
}

TEST_CASE("command errors and exit codes") {
  ToyRun run;
  RunConfig c = load_config(run.config);
  c.data.train.clear();
  CHECK(code_of([&] { cmd_train(c); }) == ErrorCode::ConfigError);

  CHECK(run_cli("train --config " + run.config + " --ablation bogus") == 2);
  CHECK(run_cli("train --config " + run.dir.write("bad.ini", "[train]\nfoo = 1\n")) == 2);
  CHECK(run_cli("train --config " +
                run.dir.write("missing.ini", "[data]\nlabels = labels.txt\ntrain = nope.jsonl\n")) == 3);
  CHECK(run_cli("eval --checkpoint " + run.dir.file("nothing.ckpt")) == 3);
  CHECK(exit_code_for(Error(ErrorCode::NumericFailure, "nan")) == 4);
  CHECK(exit_code_for(Error(ErrorCode::ConfigError, "x")) == 2);
  CHECK(exit_code_for(Error(ErrorCode::ParseError, "x")) == 3);

  const std::string ck = run.dir.file("cli.ckpt");
  CHECK(run_cli("train --config " + run.config + " --checkpoint " + ck + " --K 2 --seeds 13") == 0);
  CHECK(std::filesystem::exists(ck));
  CHECK(run_cli("eval --checkpoint " + ck + " --split test") == 0);
  CHECK(run_cli("train --config " + run.config + " --checkpoint " + run.dir.file("s.ckpt") +
                " --K 1 --seeds 13 21") == 0);
  CHECK(std::filesystem::exists(run.dir.file("s_seed21.ckpt")));
  CHECK(run_cli("analyze --checkpoint " + ck + " --mode fact --all --output " + run.dir.file("r.md")) == 0);
  CHECK(run_cli("sample-episodes --config " + run.config + " --K 1 --out " + run.dir.file("e")) == 0);
  CHECK(std::filesystem::exists(run.dir.file("e/toy_K1_seed100.json")));
}
