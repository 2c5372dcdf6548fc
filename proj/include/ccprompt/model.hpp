#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ccprompt/autograd.hpp"
#include "ccprompt/contrastive_core.hpp"
#include "ccprompt/encoder.hpp"
#include "ccprompt/prototype_bank.hpp"

namespace ccprompt {

enum class Ablation { None, NoConAtt, NoPrototypes, NoLcon, NoSiamese };

std::string to_string(Ablation a);
/// Accepts "none", "no_conatt", "no_prototypes", "no_lcon", "no_siamese".
std::optional<Ablation> parse_ablation(const std::string& name);

struct ModelConfig {
  std::string encoder = "toy";  // "toy" or a registered external model name
  ExternalMlmOptions encoder_options;
  ToyEncoderConfig toy;
  Index head_hidden = 32;
  Index template_tokens = 3;
  std::vector<std::string> template_text;  // non-empty: discrete template
  bool share_instance_encoder = true;
  std::size_t vocab_size = 1000;
  double prototype_std = 0.02;
  double weight_noise_std = 0.02;
  double verbalizer_std = 0.02;
  double template_std = 0.02;
};

struct ForwardOptions {
  Ablation ablation = Ablation::None;
  Index m = 0;  // 0 selects |R|-1
  bool include_positive_in_denominator = false;
};

/// Values the stop-gradient targets are pinned to (finite-difference checks).
struct StopTargets {
  MatrixXd z;
  MatrixXd z_plus;
};

struct InstanceForward {
  InstanceRepresentation repr;
  ag::Var attributes;  // |R|(|R|-1) x d, empty under no_conatt
  SelectionResult<double> selection;
  std::vector<std::string> warnings;
  ag::Var z;
  ag::Var z_plus;  // empty unless the positive branch ran
  ag::Var logits;  // 1 x |R|
};

struct LossTerms {
  ag::Var l_cls;
  ag::Var l_s;    // empty when the Siamese term is off
  ag::Var l_con;  // empty when the contrastive term is off
};

struct Prediction {
  Index label = 0;
  VectorXd logits;
  SelectionResult<double> selection;
};

class CCPromptModel {
 public:
  /// `vocabulary` seeds the toy encoder; external encoders bring their own.
  CCPromptModel(ModelConfig config, std::vector<std::string> labels,
                Vocabulary vocabulary, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& labels() const { return labels_; }
  Index num_classes() const { return static_cast<Index>(labels_.size()); }
  Index dim() const { return backend_->dim(); }
  Index default_m() const { return num_classes() - 1; }
  Index max_length() const { return backend_->max_length(); }
  std::uint64_t seed() const { return seed_; }

  EncoderBackend& backend() { return *backend_; }
  EncoderBackend& instance_backend() { return share_ ? *backend_ : *instance_backend_; }
  const RepresentationHead& representation_head() const { return repr_head_; }
  const PredictorHead& predictor() const { return predictor_; }

  std::vector<NamedParameter> parameters();

  Verbalizer<double> verbalizer() const;
  PrototypeBank<double> prototype_bank() const;
  ag::Var verbalizer_var() const { return verbalizer_; }

  std::vector<TokenId> tokenize(std::span<const std::string> tokens) const;

  /// Selected-attribute branch, plus the all-positive branch when `gold` is
  /// given and the Siamese term is active. `forced_slots` pins the selection.
  InstanceForward forward(std::span<const TokenId> ids, const ForwardOptions& options,
                          std::optional<Index> gold = std::nullopt,
                          const std::vector<Index>* forced_slots = nullptr);

  LossTerms losses(const InstanceForward& fwd, Index gold, const ForwardOptions& options,
                   const StopTargets* frozen = nullptr) const;

  Prediction predict(std::span<const TokenId> ids, const ForwardOptions& options);

  /// Template block of the prompt (continuous tokens or embedded text).
  ag::Var template_block();

 private:
  std::unique_ptr<EncoderBackend> make_backend(const Vocabulary& vocabulary, Pcg32& rng) const;
  void init_verbalizer(Pcg32& rng);

  ModelConfig config_;
  std::vector<std::string> labels_;
  std::uint64_t seed_;
  bool share_ = true;
  std::unique_ptr<EncoderBackend> backend_;
  std::unique_ptr<EncoderBackend> instance_backend_;
  RepresentationHead repr_head_;
  PredictorHead predictor_;
  ag::Var verbalizer_;
  ag::Var prototypes_;
  ag::Var weight_;
  ag::Var template_;  // continuous template, empty for text templates
  std::vector<TokenId> template_ids_;
};

/// Siamese loss from values: 1/2 D(f(z), z+) + 1/2 D(f(z+), z).
double siamese_loss(const VectorXd& z, const VectorXd& z_plus, const PredictorHead& f);

/// The same term as a graph, with stop-gradient on the target side. When
/// `frozen` is set the targets are those fixed values.
ag::Var siamese_loss(const ag::Var& z, const ag::Var& z_plus, const PredictorHead& f,
                     const StopTargets* frozen = nullptr);

}  // namespace ccprompt
