#include "ccprompt/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ccprompt/error.hpp"

namespace ccprompt {

namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

std::string key_of(const std::string& section, const std::string& key) {
  return section + "." + key;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, key + ": expected an integer, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used == v.size() && v.find('-') == std::string::npos) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, key + ": expected a non-negative integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_words(const std::string& v) {
  std::istringstream in(v);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(to_double(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, key + ": empty list");
  return out;
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  if (path.is_absolute()) return p;
  return (fs::path(base) / path).lexically_normal().string();
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig parse_config(const std::string& text, const std::string& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("ini: ") + e.what());
  }

  RunConfig cfg;
  bool epochs_set = false;
  auto& m = cfg.model;
  auto& t = cfg.train;

  const std::map<std::string, std::map<std::string, Setter>> sections{
      {"data",
       {{"name", [&](auto&, auto& v) { cfg.data.name = v; }},
        {"labels", [&](auto&, auto& v) { cfg.data.labels = resolve(base_dir, v); }},
        {"train", [&](auto&, auto& v) { cfg.data.train = resolve(base_dir, v); }},
        {"dev", [&](auto&, auto& v) { cfg.data.dev = resolve(base_dir, v); }},
        {"test", [&](auto&, auto& v) { cfg.data.test = resolve(base_dir, v); }}}},
      {"episode",
       {{"K", [&](auto& k, auto& v) {
          if (v.empty() || v == "none") {
            cfg.episode.k.reset();
            return;
          }
          const auto n = to_int(k, v);
          require(n >= 1, ErrorCode::ConfigError, k + ": K must be at least 1");
          cfg.episode.k = n;
        }},
        {"seed", [&](auto& k, auto& v) { cfg.episode.seed = to_u64(k, v); }}}},
      {"model",
       {{"encoder", [&](auto&, auto& v) { m.encoder = v; }},
        {"dim", [&](auto& k, auto& v) { m.toy.dim = to_int(k, v); }},
        {"ffn_hidden", [&](auto& k, auto& v) { m.toy.ffn_hidden = to_int(k, v); }},
        {"layers", [&](auto& k, auto& v) { m.toy.layers = to_int(k, v); }},
        {"max_length", [&](auto& k, auto& v) { m.toy.max_length = to_int(k, v); }},
        {"embedding_std", [&](auto& k, auto& v) { m.toy.embedding_std = to_double(k, v); }},
        {"head_hidden", [&](auto& k, auto& v) { m.head_hidden = to_int(k, v); }},
        {"vocab_size", [&](auto& k, auto& v) { m.vocab_size = static_cast<std::size_t>(to_u64(k, v)); }},
        {"template_tokens", [&](auto& k, auto& v) { m.template_tokens = to_int(k, v); }},
        {"template_text", [&](auto&, auto& v) { m.template_text = split_words(v); }},
        {"share_instance_encoder", [&](auto& k, auto& v) { m.share_instance_encoder = to_bool(k, v); }},
        {"prototype_std", [&](auto& k, auto& v) { m.prototype_std = to_double(k, v); }},
        {"weight_noise_std", [&](auto& k, auto& v) { m.weight_noise_std = to_double(k, v); }},
        {"verbalizer_std", [&](auto& k, auto& v) { m.verbalizer_std = to_double(k, v); }},
        {"template_std", [&](auto& k, auto& v) { m.template_std = to_double(k, v); }}}},
      {"train",
       {{"setting", [&](auto& k, auto& v) {
          require(v == "few_shot" || v == "full", ErrorCode::ConfigError,
                  k + ": expected few_shot or full, got '" + v + "'");
          cfg.setting = v;
        }},
        {"learning_rates", [&](auto& k, auto& v) { cfg.learning_rates = to_doubles(k, v); }},
        {"learning_rate", [&](auto& k, auto& v) { cfg.learning_rates = {to_double(k, v)}; }},
        {"weight_decay", [&](auto& k, auto& v) { t.weight_decay = to_double(k, v); }},
        {"beta1", [&](auto& k, auto& v) { t.beta1 = to_double(k, v); }},
        {"beta2", [&](auto& k, auto& v) { t.beta2 = to_double(k, v); }},
        {"adam_eps", [&](auto& k, auto& v) { t.adam_eps = to_double(k, v); }},
        {"batch_size", [&](auto& k, auto& v) { t.batch_size = to_int(k, v); }},
        {"epochs", [&](auto& k, auto& v) {
          t.epochs = to_int(k, v);
          epochs_set = true;
        }},
        {"seed", [&](auto& k, auto& v) { t.seed = to_u64(k, v); }},
        {"m", [&](auto& k, auto& v) { t.m = to_int(k, v); }},
        {"include_positive_in_denominator",
         [&](auto& k, auto& v) { t.include_positive_in_denominator = to_bool(k, v); }},
        {"ablation", [&](auto& k, auto& v) {
          const auto a = parse_ablation(v);
          require(a.has_value(), ErrorCode::ConfigError, k + ": unknown ablation '" + v + "'");
          t.ablation = *a;
        }},
        {"weight_cls", [&](auto& k, auto& v) { t.weight_cls = to_double(k, v); }},
        {"weight_s", [&](auto& k, auto& v) { t.weight_s = to_double(k, v); }},
        {"weight_con", [&](auto& k, auto& v) { t.weight_con = to_double(k, v); }},
        {"max_grad_norm", [&](auto& k, auto& v) { t.max_grad_norm = to_double(k, v); }}}},
      {"output",
       {{"checkpoint", [&](auto&, auto& v) { cfg.output.checkpoint = resolve(base_dir, v); }},
        {"log", [&](auto&, auto& v) { cfg.output.log = resolve(base_dir, v); }}}},
  };

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw Error(ErrorCode::ConfigError, section + ": key outside any section");
    if (section == "encoder_options") {
      for (const auto& [key, value] : body) {
        auto v = value.get_value<std::string>();
        if (key == "path") v = resolve(base_dir, v);
        m.encoder_options[key] = v;
      }
      continue;
    }
    const auto s = sections.find(section);
    require(s != sections.end(), ErrorCode::ConfigError, "unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      const auto setter = s->second.find(key);
      require(setter != s->second.end(), ErrorCode::ConfigError,
              "unknown key " + key_of(section, key));
      setter->second(key_of(section, key), value.get_value<std::string>());
    }
  }

  if (!epochs_set) t.epochs = cfg.setting == "full" ? 5 : 30;
  t.learning_rate = cfg.learning_rates.front();
  for (double lr : cfg.learning_rates)
    require(lr > 0.0, ErrorCode::ConfigError, "train.learning_rates must be positive");
  require(m.toy.dim >= 1 && m.toy.ffn_hidden >= 1 && m.head_hidden >= 1 && m.toy.layers >= 0 &&
              m.template_tokens >= 0 && m.toy.max_length >= 2 && m.vocab_size >= 3,
          ErrorCode::ConfigError, "model sizes out of range");
  t.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::ConfigError, "cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto base = fs::path(path).parent_path().string();
  return parse_config(ss.str(), base.empty() ? "." : base);
}

std::string RunConfig::canonical() const {
  std::ostringstream o;
  auto words = [](const std::vector<std::string>& ws) {
    std::string s;
    for (std::size_t i = 0; i < ws.size(); ++i) s += (i ? " " : "") + ws[i];
    return s;
  };
  std::string lrs;
  for (std::size_t i = 0; i < learning_rates.size(); ++i)
    lrs += (i ? "," : "") + num(learning_rates[i]);
  o << "[data]\nname=" << data.name << "\nlabels=" << data.labels << "\ntrain=" << data.train
    << "\ndev=" << data.dev << "\ntest=" << data.test << "\n";
  o << "[episode]\nK=" << (episode.k ? std::to_string(*episode.k) : "none")
    << "\nseed=" << episode.seed << "\n";
  o << "[model]\nencoder=" << model.encoder << "\ndim=" << model.toy.dim
    << "\nffn_hidden=" << model.toy.ffn_hidden << "\nlayers=" << model.toy.layers
    << "\nmax_length=" << model.toy.max_length << "\nembedding_std=" << num(model.toy.embedding_std)
    << "\nhead_hidden=" << model.head_hidden << "\nvocab_size=" << model.vocab_size
    << "\ntemplate_tokens=" << model.template_tokens << "\ntemplate_text=" << words(model.template_text)
    << "\nshare_instance_encoder=" << (model.share_instance_encoder ? "true" : "false")
    << "\nprototype_std=" << num(model.prototype_std)
    << "\nweight_noise_std=" << num(model.weight_noise_std)
    << "\nverbalizer_std=" << num(model.verbalizer_std)
    << "\ntemplate_std=" << num(model.template_std) << "\n";
  o << "[encoder_options]\n";
  for (const auto& [k, v] : model.encoder_options) o << k << "=" << v << "\n";
  o << "[train]\nsetting=" << setting << "\nlearning_rates=" << lrs
    << "\nweight_decay=" << num(train.weight_decay) << "\nbeta1=" << num(train.beta1)
    << "\nbeta2=" << num(train.beta2) << "\nadam_eps=" << num(train.adam_eps)
    << "\nbatch_size=" << train.batch_size << "\nepochs=" << train.epochs
    << "\nseed=" << train.seed << "\nm=" << train.m << "\ninclude_positive_in_denominator="
    << (train.include_positive_in_denominator ? "true" : "false")
    << "\nablation=" << to_string(train.ablation) << "\nweight_cls=" << num(train.weight_cls)
    << "\nweight_s=" << num(train.weight_s) << "\nweight_con=" << num(train.weight_con)
    << "\nmax_grad_norm=" << num(train.max_grad_norm) << "\n";
  o << "[output]\ncheckpoint=" << output.checkpoint << "\nlog=" << output.log << "\n";
  return o.str();
}

std::string RunConfig::hash() const { return fnv1a_hex(canonical()); }

}  // namespace ccprompt
