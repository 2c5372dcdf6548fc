#include "ccprompt/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include "ccprompt/error.hpp"

namespace ccprompt {

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  tokens_ = {"[UNK]", "[MASK]"};
  for (const auto& t : tokens)
    if (t != "[UNK]" && t != "[MASK]") tokens_.push_back(t);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const bool fresh = ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second;
    require(fresh, ErrorCode::DataError, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus,
                             std::size_t max_size) {
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats;  // count, first
  std::size_t position = 0;
  for (const auto& sentence : corpus)
    for (const auto& tok : sentence) {
      auto [it, inserted] = stats.try_emplace(tok, 0, position);
      ++it->second.first;
      ++position;
    }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> entries(
      stats.begin(), stats.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::vector<std::string> tokens;
  for (const auto& e : entries) {
    if (e.first == "[UNK]" || e.first == "[MASK]") continue;
    if (tokens.size() + 2 >= max_size) break;
    tokens.push_back(e.first);
  }
  return Vocabulary(tokens);
}

TokenId Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return ids_.count(token) != 0;
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

// ---------------------------------------------------------------- ToyEncoder

namespace {

ag::Var init_weight(Index rows, Index cols, Pcg32& rng) {
  return ag::parameter(normal_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), rng));
}

}  // namespace

ToyEncoder::ToyEncoder(Vocabulary vocabulary, const ToyEncoderConfig& config, Pcg32& rng)
    : vocabulary_(std::move(vocabulary)), config_(config) {
  require(config.dim >= 1 && config.ffn_hidden >= 1 && config.layers >= 0 &&
              config.max_length >= 2,
          ErrorCode::ConfigError, "toy encoder sizes must be positive");
  embeddings_ = ag::parameter(normal_matrix(static_cast<Index>(vocabulary_.size()),
                                            config.dim, config.embedding_std, rng));
  const Index d = config.dim;
  const Index hdim = config.ffn_hidden;
  for (Index l = 0; l < config.layers; ++l) {
    Layer layer;
    layer.wq = init_weight(d, d, rng);
    layer.wk = init_weight(d, d, rng);
    layer.wv = ag::parameter(normal_matrix(d, d, 0.5 / std::sqrt(static_cast<double>(d)), rng));
    layer.w1 = init_weight(d, hdim, rng);
    layer.b1 = ag::parameter(MatrixXd::Zero(1, hdim));
    layer.w2 = ag::parameter(normal_matrix(hdim, d, 0.5 / std::sqrt(static_cast<double>(hdim)), rng));
    layer.b2 = ag::parameter(MatrixXd::Zero(1, d));
    layers_.push_back(std::move(layer));
  }
}

ag::Var ToyEncoder::embed(std::span<const TokenId> ids) {
  return ag::gather_rows(embeddings_, ids);
}

ag::Var ToyEncoder::mask_embedding() {
  const TokenId mask = Vocabulary::kMask;
  return ag::gather_rows(embeddings_, std::span<const TokenId>(&mask, 1));
}

Encoded ToyEncoder::encode(const ag::Var& embedded, std::optional<Index> mask_position) {
  require(embedded.rows() >= 1, ErrorCode::EmptySequence, "encode of an empty sequence");
  require(embedded.rows() <= config_.max_length, ErrorCode::LengthOverflow,
          "sequence length " + std::to_string(embedded.rows()) + " exceeds " +
              std::to_string(config_.max_length));
  require(embedded.cols() == config_.dim, ErrorCode::DimensionMismatch,
          "embedding width != encoder dim");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.dim));
  ag::Var x = embedded;
  for (const auto& layer : layers_) {
    const ag::Var q = ag::matmul(x, layer.wq);
    const ag::Var k = ag::matmul(x, layer.wk);
    const ag::Var v = ag::matmul(x, layer.wv);
    const ag::Var attn = ag::softmax_rows(ag::scale(ag::matmul(q, ag::transpose(k)), inv_sqrt_d));
    x = x + ag::matmul(attn, v);
    const ag::Var hidden = ag::relu(ag::add_row(ag::matmul(x, layer.w1), layer.b1));
    x = x + ag::add_row(ag::matmul(hidden, layer.w2), layer.b2);
  }
  Encoded out{x, {}};
  if (mask_position) {
    require(*mask_position >= 0 && *mask_position < x.rows(), ErrorCode::IndexOutOfRange,
            "mask position outside sequence");
    out.mask_state = ag::slice_rows(x, *mask_position, 1);
  }
  return out;
}

std::vector<NamedParameter> ToyEncoder::parameters() {
  std::vector<NamedParameter> out{{"encoder.embeddings", embeddings_}};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    const auto& layer = layers_[l];
    out.push_back({p + "wq", layer.wq});
    out.push_back({p + "wk", layer.wk});
    out.push_back({p + "wv", layer.wv});
    out.push_back({p + "w1", layer.w1});
    out.push_back({p + "b1", layer.b1});
    out.push_back({p + "w2", layer.w2});
    out.push_back({p + "b2", layer.b2});
  }
  return out;
}

// ------------------------------------------------------- external adapters

namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, ExternalMlmFactory> factories;
};

Registry& registry() {
  static Registry r;
  static std::once_flag builtins;
  std::call_once(builtins, [] {
    r.factories["static_embeddings"] = [](const ExternalMlmOptions& options) {
      const auto it = options.find("path");
      require(it != options.end(), ErrorCode::ConfigError,
              "static_embeddings adapter needs option 'path'");
      return std::shared_ptr<ExternalMaskedLM>(StaticEmbeddingMLM::from_file(it->second));
    };
  });
  return r;
}

}  // namespace

void register_external_mlm(const std::string& name, ExternalMlmFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

std::shared_ptr<ExternalMaskedLM> load_external_mlm(const std::string& name,
                                                    const ExternalMlmOptions& options) {
  auto& r = registry();
  ExternalMlmFactory factory;
  {
    std::lock_guard lock(r.mutex);
    const auto it = r.factories.find(name);
    require(it != r.factories.end(), ErrorCode::ConfigError,
            "unknown external encoder '" + name + "'");
    factory = it->second;
  }
  return factory(options);
}

std::vector<std::string> registered_external_mlms() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, factory] : r.factories) names.push_back(name);
  return names;
}

ExternalMLMAdapter::ExternalMLMAdapter(std::string name,
                                       std::shared_ptr<ExternalMaskedLM> model)
    : name_(std::move(name)), model_(std::move(model)) {
  require(model_ != nullptr, ErrorCode::ConfigError, "null external model");
}

ag::Var ExternalMLMAdapter::embed(std::span<const TokenId> ids) {
  return ag::constant(model_->embed(ids));
}

ag::Var ExternalMLMAdapter::mask_embedding() {
  const TokenId mask = Vocabulary::kMask;
  return ag::constant(model_->embed(std::span<const TokenId>(&mask, 1)));
}

Encoded ExternalMLMAdapter::encode(const ag::Var& embedded,
                                   std::optional<Index> mask_position) {
  require(embedded.rows() >= 1, ErrorCode::EmptySequence, "encode of an empty sequence");
  require(embedded.rows() <= model_->max_length(), ErrorCode::LengthOverflow,
          "sequence exceeds adapter max length");
  auto model = model_;
  ag::Var states = ag::make_op(
      model->forward(embedded.value(), mask_position), {embedded},
      [model, mask_position](ag::Node& self) {
        auto g = model->backward(self.parents[0]->value, mask_position, self.grad);
        if (g) self.parents[0]->accumulate(*g);
      });
  Encoded out{states, {}};
  if (mask_position) out.mask_state = ag::slice_rows(states, *mask_position, 1);
  return out;
}

StaticEmbeddingMLM::StaticEmbeddingMLM(Vocabulary vocabulary, MatrixXd embeddings,
                                       Index max_length)
    : vocabulary_(std::move(vocabulary)),
      embeddings_(std::move(embeddings)),
      max_length_(max_length) {
  require(static_cast<Index>(vocabulary_.size()) == embeddings_.rows(),
          ErrorCode::DimensionMismatch, "one embedding row per vocabulary entry");
}

std::shared_ptr<StaticEmbeddingMLM> StaticEmbeddingMLM::from_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open embedding file " + path);
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    double v;
    while (fields >> v) values.push_back(v);
    if (line_no == 1 && values.size() == 1) continue;  // "count dim" header
    require(!values.empty() && (rows.empty() || values.size() == rows.front().size()),
            ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": bad vector");
    tokens.push_back(token);
    rows.push_back(std::move(values));
  }
  require(!rows.empty(), ErrorCode::ParseError, path + ": no vectors");
  const Index d = static_cast<Index>(rows.front().size());
  Vocabulary vocab(tokens);
  MatrixXd table = MatrixXd::Zero(static_cast<Index>(vocab.size()), d);
  MatrixXd loaded(static_cast<Index>(rows.size()), d);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Index c = 0; c < d; ++c) loaded(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  for (std::size_t r = 0; r < rows.size(); ++r)
    table.row(vocab.id(tokens[r])) = loaded.row(static_cast<Index>(r));
  if (std::find(tokens.begin(), tokens.end(), "[MASK]") == tokens.end())
    table.row(Vocabulary::kMask) = loaded.colwise().mean();
  return std::make_shared<StaticEmbeddingMLM>(std::move(vocab), std::move(table));
}

MatrixXd StaticEmbeddingMLM::embed(std::span<const TokenId> ids) const {
  MatrixXd out(static_cast<Index>(ids.size()), embeddings_.cols());
  for (std::size_t k = 0; k < ids.size(); ++k)
    out.row(static_cast<Index>(k)) = embeddings_.row(ids[k]);
  return out;
}

MatrixXd StaticEmbeddingMLM::forward(const MatrixXd& embedded,
                                     std::optional<Index> /*mask_position*/) const {
  return embedded.rowwise() + embedded.colwise().mean();
}

std::optional<MatrixXd> StaticEmbeddingMLM::backward(const MatrixXd& embedded,
                                                     std::optional<Index> /*mask_position*/,
                                                     const MatrixXd& grad_hidden) const {
  const double n = static_cast<double>(embedded.rows());
  MatrixXd g = grad_hidden.rowwise() + grad_hidden.colwise().sum() / n;
  return g;
}

// ---------------------------------------------------------------- heads

Mlp::Mlp(Index in, Index hidden, Index out, Pcg32& rng)
    : w1_(init_weight(in, hidden, rng)),
      b1_(ag::parameter(MatrixXd::Zero(1, hidden))),
      w2_(init_weight(hidden, out, rng)),
      b2_(ag::parameter(MatrixXd::Zero(1, out))) {}

Mlp Mlp::identity(Index dim) {
  Mlp m;
  MatrixXd w1(dim, 2 * dim);
  w1 << MatrixXd::Identity(dim, dim), -MatrixXd::Identity(dim, dim);
  MatrixXd w2(2 * dim, dim);
  w2 << MatrixXd::Identity(dim, dim), -MatrixXd::Identity(dim, dim);
  m.w1_ = ag::parameter(w1);
  m.b1_ = ag::parameter(MatrixXd::Zero(1, 2 * dim));
  m.w2_ = ag::parameter(w2);
  m.b2_ = ag::parameter(MatrixXd::Zero(1, dim));
  return m;
}

ag::Var Mlp::forward(const ag::Var& x) const {
  require(x.cols() == w1_.rows(), ErrorCode::DimensionMismatch, "mlp input width");
  const ag::Var hidden = ag::relu(ag::add_row(ag::matmul(x, w1_), b1_));
  return ag::add_row(ag::matmul(hidden, w2_), b2_);
}

std::vector<NamedParameter> Mlp::parameters(const std::string& prefix) const {
  return {{prefix + ".w1", w1_}, {prefix + ".b1", b1_}, {prefix + ".w2", w2_}, {prefix + ".b2", b2_}};
}

// ---------------------------------------------------------------- pipeline

InstanceRepresentation instance_representation(std::span<const TokenId> ids,
                                               EncoderBackend& backend,
                                               const RepresentationHead& head) {
  require(!ids.empty(), ErrorCode::EmptySequence, "instance has no tokens");
  require(static_cast<Index>(ids.size()) <= backend.max_length(), ErrorCode::LengthOverflow,
          "instance longer than max_length");
  const Encoded encoded = backend.encode(backend.embed(ids), std::nullopt);
  InstanceRepresentation out;
  out.token_states = head.forward(encoded.states);
  out.h = ag::mean_rows(out.token_states);
  out.source_length = static_cast<Index>(ids.size());
  require(out.h.value().allFinite(), ErrorCode::NumericFailure,
          "non-finite instance representation");
  return out;
}

PromptInput assemble_prompt(const ag::Var& instance, const ag::Var& attributes,
                            const ag::Var& template_tokens,
                            const ag::Var& mask_embedding, Index max_length) {
  PromptInput p;
  p.instance_length = instance.rows();
  p.num_attributes = attributes.valid() ? attributes.rows() : 0;
  p.num_template = template_tokens.valid() ? template_tokens.rows() : 0;
  p.mask_position = p.instance_length + p.num_attributes + p.num_template;
  require(p.length() <= max_length, ErrorCode::LengthOverflow,
          "prompt length " + std::to_string(p.length()) + " exceeds " +
              std::to_string(max_length));
  std::vector<ag::Var> parts{instance};
  if (p.num_attributes > 0) parts.push_back(attributes);
  if (p.num_template > 0) parts.push_back(template_tokens);
  parts.push_back(mask_embedding);
  p.sequence = ag::concat_rows(parts);
  return p;
}

PromptInput assemble_prompt(const ag::Var& instance,
                            const SelectionResult<double>& selected,
                            const ag::Var& template_tokens,
                            const ag::Var& mask_embedding, Index max_length) {
  ag::Var attributes;
  if (!selected.empty()) {
    MatrixXd rows(static_cast<Index>(selected.m()), instance.cols());
    for (std::size_t k = 0; k < selected.m(); ++k)
      rows.row(static_cast<Index>(k)) = selected.selected[k].attribute.transpose();
    attributes = ag::constant(std::move(rows));
  }
  return assemble_prompt(instance, attributes, template_tokens, mask_embedding, max_length);
}

ag::Var mask_class_logits(const ag::Var& z, const ag::Var& verbalizer) {
  require(z.rows() == 1 && z.cols() == verbalizer.cols(), ErrorCode::DimensionMismatch,
          "mask state and verbalizer dims differ");
  return ag::matmul(z, ag::transpose(verbalizer));
}

}  // namespace ccprompt
