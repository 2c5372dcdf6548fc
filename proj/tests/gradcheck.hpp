#pragma once

// Finite-difference check of the whole training loss against backprop.
// Selections and stop-gradient targets are pinned to the unperturbed pass so
// the numeric derivative sees the same piecewise branch as the analytic one.

#include <map>
#include <string>

#include "ccprompt/trainer.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct Report {
  double worst = 0.0;
  std::string worst_parameter;
  std::size_t parameter_count = 0;
};

inline ccprompt::ModelConfig tiny_config() {
  ccprompt::ModelConfig cfg;
  cfg.toy.dim = 2;
  cfg.toy.ffn_hidden = 2;
  cfg.toy.layers = 1;
  cfg.toy.max_length = 32;
  cfg.head_hidden = 4;  // with 2 units an all-dead predictor is likely
  cfg.template_tokens = 1;
  // Larger init than the defaults so every term has a visible gradient.
  cfg.prototype_std = 0.5;
  cfg.weight_noise_std = 0.3;
  cfg.verbalizer_std = 0.5;
  cfg.template_std = 0.5;
  return cfg;
}

inline Report check(ccprompt::CCPromptModel& model, std::span<const ccprompt::Example> batch,
                    const ccprompt::TrainConfig& config, double eps = 1e-6) {
  using namespace ccprompt;
  Report report;
  auto params = model.parameters();
  for (auto& p : params) p.var.zero_grad();
  BatchTrace trace;
  BatchLoss loss = batch_loss(model, batch, config, nullptr, &trace);
  ag::backward(loss.total);

  for (auto& p : params) {
    const MatrixXd analytic =
        p.var.grad().size() ? p.var.grad() : MatrixXd::Zero(p.var.rows(), p.var.cols());
    const MatrixXd original = p.var.value();
    auto f = [&](const MatrixXd& x) {
      p.var.mutable_value() = x;
      return batch_loss(model, batch, config, &trace).values.total;
    };
    const MatrixXd numeric = oracle::finite_difference(f, original, eps);
    p.var.mutable_value() = original;
    const double err = oracle::relative_error(analytic, numeric);
    report.parameter_count += static_cast<std::size_t>(original.size());
    if (err > report.worst) {
      report.worst = err;
      report.worst_parameter = p.name;
    }
  }
  for (auto& p : params) p.var.zero_grad();
  return report;
}

}  // namespace gradcheck
