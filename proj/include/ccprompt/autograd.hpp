#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Var is a shared handle to a graph node. Parameters are long-lived leaf
// nodes whose `grad` accumulates across backward calls until cleared; every
// other node is created by an op and lives as long as something references
// it. Vectors are 1 x n rows throughout.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ccprompt/types.hpp"

namespace ccprompt::ag {

struct Node {
  MatrixXd value;
  MatrixXd grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const MatrixXd& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const MatrixXd& value() const { return node_->value; }
  MatrixXd& mutable_value() { return node_->value; }
  const MatrixXd& grad() const { return node_->grad; }
  MatrixXd& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool valid() const { return static_cast<bool>(node_); }
  void zero_grad() { node_->grad.resize(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var parameter(MatrixXd value);
Var constant(MatrixXd value);

/// Builds an op node; `backward` reads `self.grad` and pushes into
/// `self.parents[k]->accumulate(...)`. Parents that do not require gradients
/// are still listed but ignore accumulation.
Var make_op(MatrixXd value, std::vector<Var> parents,
            std::function<void(Node&)> backward);

/// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
void backward(const Var& loss);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// a (n x d) + row (1 x d) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
Var sum(const Var& a);
/// Column-wise mean, n x d -> 1 x d.
Var mean_rows(const Var& a);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);
/// Identity on values; blocks gradient flow to `a`.
Var stop_gradient(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

// Domain ops backed by the analytic gradients of the core headers.

/// -(a/|a|).(b/|b|) for 1 x d rows; result is 1 x 1.
Var negative_cosine(const Var& a, const Var& b);
/// -log softmax(logits)[gold] for a 1 x |R| row.
Var cross_entropy(const Var& logits, Index gold);
/// All contrastive projections of h (1 x d) onto rows of `verbalizer`.
Var contrastive_attributes(const Var& verbalizer, const Var& h);
/// Self-contrastive loss over slot-major attributes/prototypes.
Var contrastive_loss(const Var& attributes, const Var& prototypes,
                     const Var& weight, Index num_classes, Index gold,
                     bool include_positive);

}  // namespace ccprompt::ag
