#include "ccprompt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "ccprompt/error.hpp"

namespace ccprompt {

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorCode::ConfigError, "learning_rate must be positive");
  require(weight_decay >= 0.0, ErrorCode::ConfigError, "weight_decay must be non-negative");
  require(batch_size >= 1, ErrorCode::ConfigError, "batch_size must be positive");
  require(epochs >= 0, ErrorCode::ConfigError, "epochs must be non-negative");
  require(m >= 0, ErrorCode::ConfigError, "m must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::ConfigError,
          "adam betas must lie in [0, 1)");
  require(max_grad_norm >= 0.0, ErrorCode::ConfigError, "max_grad_norm must be non-negative");
}

// ---------------------------------------------------------------- AdamW

AdamW::AdamW(std::vector<NamedParameter> params, double lr, double weight_decay,
             double beta1, double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(MatrixXd::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(MatrixXd::Zero(p.var.rows(), p.var.cols()));
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

double AdamW::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_)
    if (p.var.grad().size() != 0) sq += p.var.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params_)
      if (p.var.grad().size() != 0) p.var.mutable_grad() *= factor;
  }
  return norm;
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& var = params_[k].var;
    if (var.grad().size() == 0) continue;  // unused this step
    MatrixXd& value = var.mutable_value();
    value *= 1.0 - lr_ * weight_decay_;
    const MatrixXd& g = var.grad();
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseProduct(g);
    value.array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------- losses

BatchLoss batch_loss(CCPromptModel& model, std::span<const Example> batch,
                     const TrainConfig& config, const BatchTrace* pinned,
                     BatchTrace* record) {
  require(!batch.empty(), ErrorCode::EmptySequence, "empty batch");
  const ForwardOptions options = config.forward_options();
  std::vector<ag::Var> cls, siamese, con;
  if (record) *record = {};
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Example& ex = batch[k];
    const std::vector<Index>* forced = pinned ? &pinned->selections[k] : nullptr;
    const InstanceForward fwd = model.forward(ex.ids, options, ex.label, forced);
    const StopTargets* frozen = pinned ? &pinned->stop_targets[k] : nullptr;
    const LossTerms terms = model.losses(fwd, ex.label, options, frozen);
    if (record) {
      StopTargets st{fwd.z.value(), fwd.z_plus.valid() ? fwd.z_plus.value() : MatrixXd()};
      record->stop_targets.push_back(std::move(st));
      std::vector<Index> slots;
      for (const auto& s : fwd.selection.selected) slots.push_back(s.slot);
      record->selections.push_back(std::move(slots));
    }
    cls.push_back(terms.l_cls);
    if (terms.l_s.valid()) siamese.push_back(terms.l_s);
    if (terms.l_con.valid()) con.push_back(terms.l_con);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  auto mean_of = [inv](const std::vector<ag::Var>& xs) {
    if (xs.empty()) return ag::constant(MatrixXd::Zero(1, 1));
    return ag::scale(ag::sum(ag::concat_rows(xs)), inv);
  };
  const ag::Var l_cls = mean_of(cls);
  const ag::Var l_s = mean_of(siamese);
  const ag::Var l_con = mean_of(con);
  BatchLoss out;
  out.total = ag::scale(l_cls, config.weight_cls) + ag::scale(l_s, config.weight_s) +
              ag::scale(l_con, config.weight_con);
  out.values = {l_cls.scalar(), l_s.scalar(), l_con.scalar(), out.total.scalar()};
  return out;
}

std::vector<Prediction> predict_all(CCPromptModel& model, std::span<const Example> examples,
                                    const ForwardOptions& options) {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(model.predict(ex.ids, options));
  return out;
}

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(CCPromptModel& model, TrainConfig config)
    : model_(model),
      config_(config),
      optimizer_(model.parameters(), config.learning_rate, config.weight_decay, config.beta1,
                 config.beta2, config.adam_eps) {
  config_.validate();
}

LossBundle Trainer::train_step(std::span<const Example> batch) {
  optimizer_.zero_grad();
  BatchLoss loss = batch_loss(model_, batch, config_);
  require(std::isfinite(loss.values.total), ErrorCode::NumericFailure,
          "non-finite training loss at step " + std::to_string(optimizer_.steps() + 1));
  ag::backward(loss.total);
  if (config_.max_grad_norm > 0.0) optimizer_.clip_grad_norm(config_.max_grad_norm);
  optimizer_.step();
  return loss.values;
}

Trainer::FitResult Trainer::fit(std::span<const Example> train, std::span<const Example> dev,
                                const DevMetric& metric, std::ostream* log) {
  FitResult result;
  require(!train.empty(), ErrorCode::DataError, "empty training set");
  Pcg32 rng(splitmix64(config_.seed), 0x73687566666c65ULL);  // "shuffle"
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto params = model_.parameters();
  std::vector<MatrixXd> best;

  for (Index epoch = 0; epoch < config_.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      std::vector<Example> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
      const LossBundle loss = train_step(batch);
      result.step_losses.push_back(loss);
      if (log) *log << format_metrics_line(steps(), epoch, loss) << '\n';
    }
    if (!dev.empty() && metric) {
      const double score = metric(model_, dev);
      result.dev_scores.push_back(score);
      if (log) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "epoch=%lld dev_metric=%.9g",
                      static_cast<long long>(epoch), score);
        *log << buf << '\n';
      }
      if (result.best_epoch < 0 || score > result.best_dev) {
        result.best_epoch = epoch;
        result.best_dev = score;
        best.clear();
        for (const auto& p : params) best.push_back(p.var.value());
      }
    }
  }
  if (!best.empty())
    for (std::size_t k = 0; k < params.size(); ++k) params[k].var.mutable_value() = best[k];
  return result;
}

std::string format_metrics_line(std::int64_t step, Index epoch, const LossBundle& loss) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "step=%lld epoch=%lld l_cls=%.9g l_s=%.9g l_con=%.9g total=%.9g",
                static_cast<long long>(step), static_cast<long long>(epoch), loss.l_cls,
                loss.l_s, loss.l_con, loss.total);
  return buf;
}

}  // namespace ccprompt
