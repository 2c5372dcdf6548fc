#include "ccprompt/model.hpp"

#include <cctype>

#include "ccprompt/error.hpp"
#include "ccprompt/losses.hpp"

namespace ccprompt {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoConAtt: return "no_conatt";
    case Ablation::NoPrototypes: return "no_prototypes";
    case Ablation::NoLcon: return "no_lcon";
    case Ablation::NoSiamese: return "no_siamese";
  }
  return "none";
}

std::optional<Ablation> parse_ablation(const std::string& name) {
  for (auto a : {Ablation::None, Ablation::NoConAtt, Ablation::NoPrototypes,
                 Ablation::NoLcon, Ablation::NoSiamese})
    if (to_string(a) == name) return a;
  return std::nullopt;
}

namespace {

std::vector<std::string> split_label_name(const std::string& name) {
  std::vector<std::string> parts;
  std::string current;
  for (char ch : name) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      current.push_back(ch);
    } else if (!current.empty()) {
      parts.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) parts.push_back(current);
  return parts;
}

}  // namespace

CCPromptModel::CCPromptModel(ModelConfig config, std::vector<std::string> labels,
                             Vocabulary vocabulary, std::uint64_t seed)
    : config_(std::move(config)), labels_(std::move(labels)), seed_(seed) {
  require(labels_.size() >= 2, ErrorCode::ConfigError, "need at least two labels");
  Pcg32 rng(splitmix64(seed), 0x6d6f64656cULL);  // "model"

  backend_ = make_backend(vocabulary, rng);
  share_ = config_.share_instance_encoder || config_.encoder != "toy";
  if (!share_) instance_backend_ = make_backend(vocabulary, rng);

  const Index d = backend_->dim();
  const Index r = num_classes();
  repr_head_ = Mlp(d, config_.head_hidden, d, rng);
  predictor_ = Mlp(d, config_.head_hidden, d, rng);
  init_verbalizer(rng);
  prototypes_ = ag::parameter(normal_matrix(r * (r - 1), d, config_.prototype_std, rng));
  weight_ = ag::parameter(MatrixXd::Identity(d, d) +
                          normal_matrix(d, d, config_.weight_noise_std, rng));
  if (config_.template_text.empty()) {
    if (config_.template_tokens > 0)
      template_ = ag::parameter(normal_matrix(config_.template_tokens, d, config_.template_std, rng));
  } else {
    const Vocabulary* vocab = backend_->vocabulary();
    for (const auto& t : config_.template_text)
      template_ids_.push_back(vocab ? vocab->id(t) : Vocabulary::kUnk);
  }
}

std::unique_ptr<EncoderBackend> CCPromptModel::make_backend(const Vocabulary& vocabulary,
                                                            Pcg32& rng) const {
  if (config_.encoder == "toy")
    return std::make_unique<ToyEncoder>(vocabulary, config_.toy, rng);
  return std::make_unique<ExternalMLMAdapter>(
      config_.encoder, load_external_mlm(config_.encoder, config_.encoder_options));
}

void CCPromptModel::init_verbalizer(Pcg32& rng) {
  const Index d = backend_->dim();
  MatrixXd v = normal_matrix(num_classes(), d, config_.verbalizer_std, rng);
  if (const Vocabulary* vocab = backend_->vocabulary()) {
    for (Index r = 0; r < num_classes(); ++r) {
      std::vector<TokenId> ids;
      for (const auto& piece : split_label_name(labels_[static_cast<std::size_t>(r)]))
        if (vocab->contains(piece)) ids.push_back(vocab->id(piece));
      if (ids.empty()) continue;
      v.row(r) = backend_->embed(ids).value().colwise().mean();
    }
  }
  verbalizer_ = ag::parameter(std::move(v));
}

std::vector<NamedParameter> CCPromptModel::parameters() {
  std::vector<NamedParameter> out = backend_->parameters();
  if (!share_)
    for (auto p : instance_backend_->parameters()) {
      p.name = "instance_" + p.name;
      out.push_back(std::move(p));
    }
  for (auto& p : repr_head_.parameters("representation_head")) out.push_back(std::move(p));
  for (auto& p : predictor_.parameters("predictor")) out.push_back(std::move(p));
  out.push_back({"verbalizer", verbalizer_});
  out.push_back({"prototypes", prototypes_});
  out.push_back({"similarity_weight", weight_});
  if (template_.valid()) out.push_back({"template", template_});
  return out;
}

Verbalizer<double> CCPromptModel::verbalizer() const {
  return Verbalizer<double>(verbalizer_.value(), labels_);
}

PrototypeBank<double> CCPromptModel::prototype_bank() const {
  return {num_classes(), prototypes_.value(), weight_.value()};
}

std::vector<TokenId> CCPromptModel::tokenize(std::span<const std::string> tokens) const {
  const Vocabulary* vocab = backend_->vocabulary();
  require(vocab != nullptr, ErrorCode::ConfigError, "backend has no vocabulary");
  return vocab->encode(tokens);
}

ag::Var CCPromptModel::template_block() {
  if (!template_ids_.empty()) return backend_->embed(template_ids_);
  return template_;
}

InstanceForward CCPromptModel::forward(std::span<const TokenId> ids,
                                       const ForwardOptions& options,
                                       std::optional<Index> gold,
                                       const std::vector<Index>* forced_slots) {
  const Index r = num_classes();
  if (gold)
    require(*gold >= 0 && *gold < r, ErrorCode::InvalidGold,
            "gold class " + std::to_string(*gold) + " outside [0, " + std::to_string(r) + ")");
  InstanceForward out;
  out.repr = instance_representation(ids, instance_backend(), repr_head_);

  ag::Var selected_rows;
  if (options.ablation != Ablation::NoConAtt) {
    out.attributes = ag::contrastive_attributes(verbalizer_, out.repr.h);
    ContrastiveAttributeTensor<double> tensor;
    tensor.num_classes = r;
    tensor.values = out.attributes.value();
    tensor.pair_index = make_pair_index(r);
    // Degenerate slots come back as exact zeros from the graph op.
    for (Index s = 0; s < tensor.num_slots(); ++s) {
      const auto [i, j] = tensor.pair_index[static_cast<std::size_t>(s)];
      if (!((verbalizer_.value().row(i) - verbalizer_.value().row(j)).norm() > kDegenerateEps))
        out.warnings.push_back("degenerate contrastive pair (" + std::to_string(i) + ", " +
                               std::to_string(j) + ")");
    }
    const Index m = options.m > 0 ? options.m : default_m();
    if (forced_slots) {
      VectorXd scores = VectorXd::Constant(tensor.num_slots(), -1.0);
      for (std::size_t k = 0; k < forced_slots->size(); ++k)
        scores((*forced_slots)[k]) = static_cast<double>(forced_slots->size() - k);
      out.selection = select_by_scores(tensor, scores, static_cast<Index>(forced_slots->size()));
    } else if (options.ablation == Ablation::NoPrototypes) {
      out.selection = select_by_scores(
          tensor, verbalizer_slot_scores(tensor, verbalizer_.value(), weight_.value()), m);
    } else {
      out.selection = select_by_scores(tensor, slot_scores(tensor, prototype_bank()), m);
    }
    std::vector<Index> slots;
    for (const auto& s : out.selection.selected) slots.push_back(s.slot);
    selected_rows = ag::gather_rows(out.attributes, slots);
  }

  const ag::Var instance = backend_->embed(ids);
  const ag::Var templ = template_block();
  const ag::Var mask = backend_->mask_embedding();
  const PromptInput prompt = assemble_prompt(instance, selected_rows, templ, mask, max_length());
  out.z = backend_->encode(prompt.sequence, prompt.mask_position).mask_state;
  out.logits = mask_class_logits(out.z, verbalizer_);

  const bool siamese = options.ablation != Ablation::NoSiamese &&
                       options.ablation != Ablation::NoConAtt;
  if (gold && siamese) {
    const ag::Var positives = ag::slice_rows(out.attributes, *gold * (r - 1), r - 1);
    const PromptInput plus = assemble_prompt(instance, positives, templ, mask, max_length());
    out.z_plus = backend_->encode(plus.sequence, plus.mask_position).mask_state;
  }
  return out;
}

LossTerms CCPromptModel::losses(const InstanceForward& fwd, Index gold,
                                const ForwardOptions& options,
                                const StopTargets* frozen) const {
  LossTerms out;
  out.l_cls = ag::cross_entropy(fwd.logits, gold);
  if (fwd.z_plus.valid()) out.l_s = siamese_loss(fwd.z, fwd.z_plus, predictor_, frozen);
  const bool con = options.ablation == Ablation::None || options.ablation == Ablation::NoSiamese;
  if (con && fwd.attributes.valid())
    out.l_con = ag::contrastive_loss(fwd.attributes, prototypes_, weight_, num_classes(), gold,
                                     options.include_positive_in_denominator);
  return out;
}

Prediction CCPromptModel::predict(std::span<const TokenId> ids, const ForwardOptions& options) {
  const InstanceForward fwd = forward(ids, options);
  Prediction p;
  p.logits = fwd.logits.value().row(0).transpose();
  p.logits.maxCoeff(&p.label);
  p.selection = fwd.selection;
  return p;
}

double siamese_loss(const VectorXd& z, const VectorXd& z_plus, const PredictorHead& f) {
  const MatrixXd fz = f.apply(z.transpose());
  const MatrixXd fz_plus = f.apply(z_plus.transpose());
  return 0.5 * negative_cosine(fz, z_plus) + 0.5 * negative_cosine(fz_plus, z);
}

ag::Var siamese_loss(const ag::Var& z, const ag::Var& z_plus, const PredictorHead& f,
                     const StopTargets* frozen) {
  const ag::Var target_plus = frozen ? ag::constant(frozen->z_plus) : ag::stop_gradient(z_plus);
  const ag::Var target = frozen ? ag::constant(frozen->z) : ag::stop_gradient(z);
  return ag::scale(ag::negative_cosine(f.forward(z), target_plus) +
                       ag::negative_cosine(f.forward(z_plus), target),
                   0.5);
}

}  // namespace ccprompt
