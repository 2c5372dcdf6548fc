#include "ccprompt/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ccprompt/error.hpp"

namespace ccprompt {

namespace {

constexpr const char* kMagic = "CCPROMPT-CHECKPOINT 1";


void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(p[b]);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Labels and tokens are written one per line; they may not contain newlines.
void require_line_safe(const std::string& s, const std::string& what) {
  require(s.find('\n') == std::string::npos && s.find('\r') == std::string::npos,
          ErrorCode::IoError, what + " contains a line break");
}

}  // namespace

void save_checkpoint(const std::string& path, CCPromptModel& model, const CheckpointMeta& meta) {
  std::ostringstream head;
  head << kMagic << "\n[meta]\n";
  head << "seed=" << model.seed() << "\n";
  head << "config_hash=" << meta.config.hash() << "\n";
  head << "learning_rate=" << number(meta.learning_rate) << "\n";
  head << "negative=" << (meta.negative_label ? std::to_string(*meta.negative_label) : "none")
       << "\n";
  const std::string canonical = meta.config.canonical();
  head << "[config " << std::count(canonical.begin(), canonical.end(), '\n') << "]\n" << canonical;
  head << "[labels " << model.labels().size() << "]\n";
  for (const auto& l : model.labels()) {
    require_line_safe(l, "label");
    head << l << "\n";
  }
  const Vocabulary* vocab = model.config().encoder == "toy" ? model.backend().vocabulary() : nullptr;
  head << "[vocabulary " << (vocab ? vocab->size() : 0) << "]\n";
  if (vocab)
    for (const auto& t : vocab->tokens()) {
      require_line_safe(t, "vocabulary token");
      head << t << "\n";
    }

  std::string payload;
  const auto params = model.parameters();
  head << "[tensors " << params.size() << "]\n";
  for (const auto& p : params) {
    const MatrixXd& v = p.var.value();
    head << p.name << " f64 " << v.rows() << " " << v.cols() << " " << payload.size() / 8 << "\n";
    for (Index r = 0; r < v.rows(); ++r)
      for (Index c = 0; c < v.cols(); ++c) put_f64(payload, v(r, c));
  }
  head << "[end]\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot write " + tmp);
    out << head.str();
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    require(out.good(), ErrorCode::IoError, "write failed for " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorCode::IoError,
          "cannot move checkpoint into " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  const std::string end_marker = "\n[end]\n";
  const auto end = bytes.find(end_marker);
  require(bytes.rfind(kMagic, 0) == 0 && end != std::string::npos, ErrorCode::IoError,
          path + ": not a checkpoint");
  std::istringstream head(bytes.substr(0, end + 1));
  const char* payload = bytes.data() + end + end_marker.size();
  const std::size_t payload_size = bytes.size() - end - end_marker.size();

  auto bad = [&](const std::string& what) { return Error(ErrorCode::IoError, path + ": " + what); };
  auto section_count = [&](const std::string& name) {
    std::string line;
    if (!std::getline(head, line) || line.rfind("[" + name + " ", 0) != 0 || line.back() != ']')
      throw bad("expected section [" + name + "]");
    return static_cast<std::size_t>(std::stoull(line.substr(name.size() + 2)));
  };
  auto lines = [&](std::size_t n) {
    std::vector<std::string> out(n);
    for (auto& l : out)
      if (!std::getline(head, l)) throw bad("truncated manifest");
    return out;
  };

  std::string line;
  std::getline(head, line);  // magic
  std::getline(head, line);
  if (line != "[meta]") throw bad("missing [meta]");
  std::map<std::string, std::string> meta;
  while (head.peek() != '[' && std::getline(head, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw bad("malformed meta line '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }

  LoadedCheckpoint out;
  std::string config_text;
  for (const auto& l : lines(section_count("config"))) config_text += l + "\n";
  out.meta.config = parse_config(config_text, "");
  out.meta.config_hash = meta["config_hash"];
  if (out.meta.config.hash() != out.meta.config_hash) throw bad("config hash mismatch");
  out.meta.learning_rate = std::stod(meta.at("learning_rate"));
  if (meta["negative"] != "none") out.meta.negative_label = std::stoll(meta["negative"]);
  out.meta.labels = lines(section_count("labels"));
  const auto vocab_tokens = lines(section_count("vocabulary"));
  Vocabulary vocab = vocab_tokens.empty() ? Vocabulary() : Vocabulary(vocab_tokens);

  out.model = std::make_unique<CCPromptModel>(out.meta.config.model, out.meta.labels, vocab,
                                              std::stoull(meta.at("seed")));
  std::map<std::string, ag::Var> params;
  for (auto& p : out.model->parameters()) params[p.name] = p.var;

  const std::size_t n = section_count("tensors");
  if (n != params.size()) throw bad("tensor count does not match the model");
  for (std::size_t t = 0; t < n; ++t) {
    std::getline(head, line);
    std::istringstream fields(line);
    std::string name, dtype;
    Index rows = 0, cols = 0;
    std::size_t offset = 0;
    if (!(fields >> name >> dtype >> rows >> cols >> offset) || dtype != "f64")
      throw bad("malformed tensor line '" + line + "'");
    const auto it = params.find(name);
    if (it == params.end()) throw bad("unknown tensor '" + name + "'");
    MatrixXd& v = it->second.mutable_value();
    if (v.rows() != rows || v.cols() != cols) throw bad("shape mismatch for '" + name + "'");
    if ((offset + static_cast<std::size_t>(rows * cols)) * 8 > payload_size)
      throw bad("payload truncated at '" + name + "'");
    const char* p = payload + offset * 8;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c, p += 8) v(r, c) = get_f64(p);
  }
  return out;
}

}  // namespace ccprompt
