#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ccprompt/model.hpp"

namespace ccprompt {

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 16;
  Index epochs = 30;
  std::uint64_t seed = 42;
  Index m = 0;  // 0 selects |R|-1
  bool include_positive_in_denominator = false;
  Ablation ablation = Ablation::None;
  double weight_cls = 1.0;
  double weight_s = 1.0;
  double weight_con = 1.0;
  double max_grad_norm = 0.0;  // 0 disables clipping

  void validate() const;
  ForwardOptions forward_options() const {
    return {ablation, m, include_positive_in_denominator};
  }
};

struct LossBundle {
  double l_cls = 0.0;
  double l_s = 0.0;
  double l_con = 0.0;
  double total = 0.0;
};

struct Example {
  std::string id;
  std::vector<TokenId> ids;
  Index label = 0;
};

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<NamedParameter> params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();
  /// Scales every gradient so the global norm is at most `max_norm`.
  double clip_grad_norm(double max_norm);
  std::int64_t steps() const { return t_; }

 private:
  std::vector<NamedParameter> params_;
  std::vector<MatrixXd> m_, v_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

/// Forward results of one batch, kept for gradient checks.
struct BatchTrace {
  std::vector<StopTargets> stop_targets;
  std::vector<std::vector<Index>> selections;
};

struct BatchLoss {
  LossBundle values;
  ag::Var total;
};

/// Batch-mean losses. `pinned`, when given, fixes stop-gradient targets and
/// selections to a previous trace; `record` captures this pass's.
BatchLoss batch_loss(CCPromptModel& model, std::span<const Example> batch,
                     const TrainConfig& config, const BatchTrace* pinned = nullptr,
                     BatchTrace* record = nullptr);

std::vector<Prediction> predict_all(CCPromptModel& model, std::span<const Example> examples,
                                    const ForwardOptions& options);

class Trainer {
 public:
  using DevMetric = std::function<double(CCPromptModel&, std::span<const Example>)>;

  Trainer(CCPromptModel& model, TrainConfig config);

  LossBundle train_step(std::span<const Example> batch);

  struct FitResult {
    std::vector<LossBundle> step_losses;
    std::vector<double> dev_scores;  // one per epoch when a dev set is given
    Index best_epoch = -1;
    double best_dev = 0.0;
  };

  /// Runs the epoch loop; with a non-empty dev set the parameters of the
  /// best-scoring epoch are restored at the end.
  FitResult fit(std::span<const Example> train, std::span<const Example> dev,
                const DevMetric& metric, std::ostream* log = nullptr);

  const TrainConfig& config() const { return config_; }
  std::int64_t steps() const { return optimizer_.steps(); }

 private:
  CCPromptModel& model_;
  TrainConfig config_;
  AdamW optimizer_;
};

/// "step=.. epoch=.. l_cls=.. l_s=.. l_con=.. total=.."
std::string format_metrics_line(std::int64_t step, Index epoch, const LossBundle& loss);

}  // namespace ccprompt
