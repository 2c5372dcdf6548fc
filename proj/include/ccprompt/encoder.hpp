#pragma once

// Encoder backends, the representation head, and prompt assembly.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccprompt/autograd.hpp"
#include "ccprompt/prototype_bank.hpp"
#include "ccprompt/random.hpp"
#include "ccprompt/types.hpp"

namespace ccprompt {

using TokenId = Index;

struct NamedParameter {
  std::string name;
  ag::Var var;
};

/// Whitespace-token vocabulary. Ids 0 and 1 are reserved for [UNK] and [MASK].
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kMask = 1;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  /// Most frequent tokens first (ties by first appearance), capped at
  /// `max_size` entries including the reserved ones.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                          std::size_t max_size);

  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<TokenId> encode(std::span<const std::string> tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Hidden states for a full sequence plus the state at the mask slot.
struct Encoded {
  ag::Var states;      // L x d
  ag::Var mask_state;  // 1 x d, empty Var when no mask position was given
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual std::string kind() const = 0;
  virtual Index dim() const = 0;
  virtual Index max_length() const = 0;
  /// nullptr when the backend has no token vocabulary.
  virtual const Vocabulary* vocabulary() const = 0;

  virtual ag::Var embed(std::span<const TokenId> ids) = 0;
  virtual ag::Var mask_embedding() = 0;
  virtual Encoded encode(const ag::Var& embedded,
                         std::optional<Index> mask_position) = 0;

  /// Parameters the optimizer may update.
  virtual std::vector<NamedParameter> parameters() = 0;
};

struct ToyEncoderConfig {
  Index dim = 16;
  Index ffn_hidden = 32;
  Index layers = 2;
  Index max_length = 128;
  double embedding_std = 0.5;
};

/// Token embeddings followed by `layers` blocks of single-head attention-style
/// averaging and a position-wise feedforward, both residual:
///   X <- X + softmax(X Wq (X Wk)^T / sqrt(d)) X Wv
///   X <- X + relu(X W1 + b1) W2 + b2
class ToyEncoder final : public EncoderBackend {
 public:
  ToyEncoder(Vocabulary vocabulary, const ToyEncoderConfig& config, Pcg32& rng);

  std::string kind() const override { return "toy"; }
  Index dim() const override { return config_.dim; }
  Index max_length() const override { return config_.max_length; }
  const Vocabulary* vocabulary() const override { return &vocabulary_; }
  const ToyEncoderConfig& config() const { return config_; }

  ag::Var embed(std::span<const TokenId> ids) override;
  ag::Var mask_embedding() override;
  Encoded encode(const ag::Var& embedded, std::optional<Index> mask_position) override;
  std::vector<NamedParameter> parameters() override;

 private:
  struct Layer {
    ag::Var wq, wk, wv, w1, b1, w2, b2;
  };

  Vocabulary vocabulary_;
  ToyEncoderConfig config_;
  ag::Var embeddings_;
  std::vector<Layer> layers_;
};

/// A masked language model living outside this library. Implementations
/// return per-token hidden states for an embedded sequence and, optionally,
/// the input gradient for a given output gradient.
class ExternalMaskedLM {
 public:
  virtual ~ExternalMaskedLM() = default;

  virtual Index hidden_size() const = 0;
  virtual Index max_length() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual MatrixXd embed(std::span<const TokenId> ids) const = 0;
  virtual MatrixXd forward(const MatrixXd& embedded,
                           std::optional<Index> mask_position) const = 0;
  /// d(loss)/d(embedded) given d(loss)/d(hidden); nullopt when the model is
  /// opaque, in which case no gradient reaches the prompt inputs.
  virtual std::optional<MatrixXd> backward(const MatrixXd& embedded,
                                           std::optional<Index> mask_position,
                                           const MatrixXd& grad_hidden) const {
    (void)embedded;
    (void)mask_position;
    (void)grad_hidden;
    return std::nullopt;
  }
};

using ExternalMlmOptions = std::map<std::string, std::string>;
using ExternalMlmFactory =
    std::function<std::shared_ptr<ExternalMaskedLM>(const ExternalMlmOptions&)>;

void register_external_mlm(const std::string& name, ExternalMlmFactory factory);
std::shared_ptr<ExternalMaskedLM> load_external_mlm(const std::string& name,
                                                    const ExternalMlmOptions& options);
std::vector<std::string> registered_external_mlms();

/// Frozen external backend exposed through the EncoderBackend interface. The
/// external weights are never updated; gradients pass through to prompt
/// inputs when the model provides `backward`.
class ExternalMLMAdapter final : public EncoderBackend {
 public:
  ExternalMLMAdapter(std::string name, std::shared_ptr<ExternalMaskedLM> model);

  std::string kind() const override { return name_; }
  Index dim() const override { return model_->hidden_size(); }
  Index max_length() const override { return model_->max_length(); }
  const Vocabulary* vocabulary() const override { return &model_->vocabulary(); }

  ag::Var embed(std::span<const TokenId> ids) override;
  ag::Var mask_embedding() override;
  Encoded encode(const ag::Var& embedded, std::optional<Index> mask_position) override;
  std::vector<NamedParameter> parameters() override { return {}; }

 private:
  std::string name_;
  std::shared_ptr<ExternalMaskedLM> model_;
};

/// Word-vector file ("token v1 ... vd" per line, optional "count dim" header)
/// used as a context-mixing encoder: h_t = e_t + mean(e). Registered as
/// "static_embeddings" with option "path".
class StaticEmbeddingMLM final : public ExternalMaskedLM {
 public:
  StaticEmbeddingMLM(Vocabulary vocabulary, MatrixXd embeddings, Index max_length = 128);
  static std::shared_ptr<StaticEmbeddingMLM> from_file(const std::string& path);

  Index hidden_size() const override { return embeddings_.cols(); }
  Index max_length() const override { return max_length_; }
  const Vocabulary& vocabulary() const override { return vocabulary_; }
  MatrixXd embed(std::span<const TokenId> ids) const override;
  MatrixXd forward(const MatrixXd& embedded,
                   std::optional<Index> mask_position) const override;
  std::optional<MatrixXd> backward(const MatrixXd& embedded,
                                   std::optional<Index> mask_position,
                                   const MatrixXd& grad_hidden) const override;

 private:
  Vocabulary vocabulary_;
  MatrixXd embeddings_;
  Index max_length_;
};

/// One-hidden-layer perceptron with ReLU: relu(X W1 + b1) W2 + b2.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Index in, Index hidden, Index out, Pcg32& rng);
  /// relu(x) - relu(-x) = x, for tests and ablations.
  static Mlp identity(Index dim);

  ag::Var forward(const ag::Var& x) const;
  MatrixXd apply(const MatrixXd& x) const { return forward(ag::constant(x)).value(); }
  std::vector<NamedParameter> parameters(const std::string& prefix) const;
  Index in_dim() const { return w1_.rows(); }
  Index out_dim() const { return w2_.cols(); }

 private:
  ag::Var w1_, b1_, w2_, b2_;
};

using RepresentationHead = Mlp;
using PredictorHead = Mlp;

struct InstanceRepresentation {
  ag::Var h;             // 1 x d
  ag::Var token_states;  // l x d, head outputs before pooling
  Index source_length = 0;
};

/// h_x = meanpool(head(encode(embed(tokens)))) on the bare instance.
InstanceRepresentation instance_representation(std::span<const TokenId> ids,
                                               EncoderBackend& backend,
                                               const RepresentationHead& head);

struct PromptInput {
  ag::Var sequence;  // (l + m + n + 1) x d
  Index instance_length = 0;
  Index num_attributes = 0;
  Index num_template = 0;
  Index mask_position = 0;

  Index length() const { return instance_length + num_attributes + num_template + 1; }
};

/// [instance | attributes | template | mask]. `attributes` may be an empty
/// Var for the attribute-free prompt.
PromptInput assemble_prompt(const ag::Var& instance, const ag::Var& attributes,
                            const ag::Var& template_tokens,
                            const ag::Var& mask_embedding, Index max_length);

/// Same, with attribute rows taken (as constants) from a selection in
/// descending-score order.
PromptInput assemble_prompt(const ag::Var& instance,
                            const SelectionResult<double>& selected,
                            const ag::Var& template_tokens,
                            const ag::Var& mask_embedding, Index max_length);

/// score_r = <z, v_r>.
template <typename DerivedZ, typename DerivedV>
Vector<typename DerivedZ::Scalar> mask_class_logits(
    const Eigen::MatrixBase<DerivedZ>& z, const Eigen::MatrixBase<DerivedV>& vectors) {
  require(z.size() == vectors.cols(), ErrorCode::DimensionMismatch,
          "mask state and verbalizer dims differ");
  return vectors * z.derived().reshaped();
}

ag::Var mask_class_logits(const ag::Var& z, const ag::Var& verbalizer);

}  // namespace ccprompt
