#include "ccprompt/data.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ccprompt/error.hpp"
#include "ccprompt/random.hpp"

namespace ccprompt {

using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::optional<Index> LabelSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Index>(i);
  return std::nullopt;
}

Index LabelSet::id(const std::string& name) const {
  const auto found = find(name);
  require(found.has_value(), ErrorCode::UnknownLabel, "label '" + name + "' not declared");
  return *found;
}

LabelSet parse_labels(const std::string& text) {
  LabelSet out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    bool negative = false;
    if (line.rfind("negative:", 0) == 0) {
      negative = true;
      line = trim(line.substr(9));
    }
    if (line == "no_relation") negative = true;
    require(!line.empty(), ErrorCode::ParseError, "labels:" + std::to_string(line_no) + ": empty label");
    require(!out.find(line), ErrorCode::ParseError,
            "labels:" + std::to_string(line_no) + ": duplicate label '" + line + "'");
    if (negative) {
      require(!out.negative, ErrorCode::ParseError,
              "labels:" + std::to_string(line_no) + ": more than one negative label");
      out.negative = static_cast<Index>(out.names.size());
    }
    out.names.push_back(line);
  }
  require(out.names.size() >= 2, ErrorCode::ParseError, "labels file declares fewer than two labels");
  return out;
}

LabelSet load_labels(const std::string& path) { return parse_labels(read_file(path)); }

std::vector<LabeledInstance> parse_jsonl(const std::string& text, const LabelSet& labels,
                                         const std::string& source) {
  std::vector<LabeledInstance> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    LabeledInstance inst;
    try {
      inst.id = j.at("id").get<std::string>();
      inst.tokens = j.at("tokens").get<std::vector<std::string>>();
      const auto label = j.at("label").get<std::string>();
      const auto id = labels.find(label);
      if (!id) throw Error(ErrorCode::UnknownLabel, where + ": label '" + label + "' not declared");
      inst.label = *id;
      if (j.contains("spans") && !j.at("spans").is_null()) {
        for (const auto& s : j.at("spans")) {
          EntitySpan span{s.at(0).get<Index>(), s.at(1).get<Index>(),
                          s.size() > 2 ? s.at(2).get<std::string>() : std::string()};
          if (span.start < 0 || span.end <= span.start ||
              span.end > static_cast<Index>(inst.tokens.size()))
            throw Error(ErrorCode::SpanOutOfBounds,
                        where + ": span [" + std::to_string(span.start) + ", " +
                            std::to_string(span.end) + ") outside " +
                            std::to_string(inst.tokens.size()) + " tokens");
          inst.spans.push_back(std::move(span));
        }
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    require(!inst.tokens.empty(), ErrorCode::ParseError, where + ": no tokens");
    require(seen.insert(inst.id).second, ErrorCode::ParseError,
            where + ": duplicate id '" + inst.id + "'");
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<LabeledInstance> load_jsonl(const std::string& path, const LabelSet& labels) {
  return parse_jsonl(read_file(path), labels, path);
}

std::string to_jsonl(const std::vector<LabeledInstance>& instances, const LabelSet& labels) {
  std::string out;
  for (const auto& inst : instances) {
    json j;
    j["id"] = inst.id;
    j["tokens"] = inst.tokens;
    j["label"] = labels.names.at(static_cast<std::size_t>(inst.label));
    if (!inst.spans.empty()) {
      json spans = json::array();
      for (const auto& s : inst.spans) spans.push_back(json::array({s.start, s.end, s.role}));
      j["spans"] = spans;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------- episodes

FewShotEpisode sample_episode(const std::vector<LabeledInstance>& split, Index num_classes,
                              Index k, std::uint64_t seed, const std::string& dataset) {
  require(k >= 1, ErrorCode::ConfigError, "K must be at least 1");
  FewShotEpisode ep;
  ep.dataset = dataset;
  ep.k = k;
  ep.seed = seed;
  ep.split_size = static_cast<Index>(split.size());
  ep.num_classes = num_classes;

  std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(num_classes));
  for (std::size_t n = 0; n < split.size(); ++n) {
    require(split[n].label >= 0 && split[n].label < num_classes, ErrorCode::UnknownLabel,
            "instance '" + split[n].id + "' label out of range");
    pools[static_cast<std::size_t>(split[n].label)].push_back(n);
  }

  constexpr std::uint64_t kTrainStream = 0x747261696eULL;  // "train"
  constexpr std::uint64_t kDevStream = 0x646576ULL;        // "dev"
  for (Index c = 0; c < num_classes; ++c) {
    const auto& pool = pools[static_cast<std::size_t>(c)];
    const std::string cls = std::to_string(c);
    if (pool.empty()) {
      ep.warnings.push_back("EmptyClass: class " + cls + " has no instances");
      continue;
    }
    const std::uint64_t state = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(c)));

    std::vector<std::size_t> train_order = pool;
    Pcg32 train_rng(state, kTrainStream);
    shuffle(std::span<std::size_t>(train_order), train_rng);
    const std::size_t take = std::min<std::size_t>(train_order.size(), static_cast<std::size_t>(k));
    if (take < static_cast<std::size_t>(k))
      ep.warnings.push_back("shortfall: class " + cls + " has " + std::to_string(pool.size()) +
                            " < K=" + std::to_string(k) + " instances for train");
    std::set<std::size_t> taken(train_order.begin(), train_order.begin() + static_cast<std::ptrdiff_t>(take));
    for (std::size_t t = 0; t < take; ++t) ep.train_ids.push_back(split[train_order[t]].id);

    std::vector<std::size_t> dev_order = pool;
    Pcg32 dev_rng(state, kDevStream);
    shuffle(std::span<std::size_t>(dev_order), dev_rng);
    std::size_t dev_taken = 0;
    for (std::size_t n : dev_order) {
      if (dev_taken == static_cast<std::size_t>(k)) break;
      if (taken.count(n)) continue;  // reject: already in train
      ep.dev_ids.push_back(split[n].id);
      ++dev_taken;
    }
    if (dev_taken < static_cast<std::size_t>(k))
      ep.warnings.push_back("shortfall: class " + cls + " has " + std::to_string(dev_taken) +
                            " < K=" + std::to_string(k) + " instances for dev");
  }
  return ep;
}

std::string episode_to_json(const FewShotEpisode& ep) {
  json j;
  j["dataset"] = ep.dataset;
  j["K"] = ep.k;
  j["seed"] = ep.seed;
  j["train_ids"] = ep.train_ids;
  j["dev_ids"] = ep.dev_ids;
  j["provenance"] = {{"split_size", ep.split_size},
                     {"num_classes", ep.num_classes},
                     {"generator", "pcg32-xsh-rr"},
                     {"dev_stream", "independent"}};
  j["warnings"] = ep.warnings;
  return j.dump(2) + "\n";
}

FewShotEpisode episode_from_json(const std::string& text) {
  FewShotEpisode ep;
  try {
    const json j = json::parse(text);
    ep.dataset = j.value("dataset", "");
    ep.k = j.at("K").get<Index>();
    ep.seed = j.at("seed").get<std::uint64_t>();
    ep.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    ep.dev_ids = j.at("dev_ids").get<std::vector<std::string>>();
    if (j.contains("provenance")) {
      ep.split_size = j["provenance"].value("split_size", Index{0});
      ep.num_classes = j["provenance"].value("num_classes", Index{0});
    }
    ep.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("episode manifest: ") + e.what());
  }
  return ep;
}

std::vector<LabeledInstance> select_by_ids(const std::vector<LabeledInstance>& split,
                                           const std::vector<std::string>& ids) {
  std::map<std::string, const LabeledInstance*> index;
  for (const auto& inst : split) index[inst.id] = &inst;
  std::vector<LabeledInstance> out;
  for (const auto& id : ids) {
    const auto it = index.find(id);
    require(it != index.end(), ErrorCode::DataError, "episode id '" + id + "' not in split");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------- metrics

double micro_f1(const std::vector<Index>& predictions, const std::vector<Index>& golds,
                std::optional<Index> negative_label) {
  require(predictions.size() == golds.size(), ErrorCode::LengthMismatch,
          std::to_string(predictions.size()) + " predictions vs " +
              std::to_string(golds.size()) + " golds");
  std::size_t correct = 0, predicted = 0, gold = 0;
  for (std::size_t n = 0; n < golds.size(); ++n) {
    const bool pred_pos = !negative_label || predictions[n] != *negative_label;
    const bool gold_pos = !negative_label || golds[n] != *negative_label;
    predicted += pred_pos;
    gold += gold_pos;
    correct += pred_pos && gold_pos && predictions[n] == golds[n];
  }
  if (predicted == 0 || gold == 0 || correct == 0) return 0.0;
  const double p = static_cast<double>(correct) / static_cast<double>(predicted);
  const double r = static_cast<double>(correct) / static_cast<double>(gold);
  return 2.0 * p * r / (p + r);
}

double accuracy(const std::vector<Index>& predictions, const std::vector<Index>& golds) {
  require(predictions.size() == golds.size(), ErrorCode::LengthMismatch,
          "predictions and golds differ in length");
  if (golds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < golds.size(); ++n) correct += predictions[n] == golds[n];
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

SeedAggregate aggregate_over_seeds(const std::vector<double>& values) {
  require(!values.empty(), ErrorCode::LengthMismatch, "no runs to aggregate");
  SeedAggregate a;
  a.runs = values.size();
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(a.runs);
  if (a.runs > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(a.runs - 1));
  }
  return a;
}

}  // namespace ccprompt
