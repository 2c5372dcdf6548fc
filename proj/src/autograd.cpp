#include "ccprompt/autograd.hpp"

#include <unordered_set>

#include "ccprompt/contrastive_core.hpp"
#include "ccprompt/error.hpp"
#include "ccprompt/losses.hpp"
#include "ccprompt/prototype_bank.hpp"

namespace ccprompt::ag {

void Node::accumulate(const MatrixXd& g) {
  if (!requires_grad) return;
  if (grad.size() == 0)
    grad = g;
  else
    grad += g;
}

Var parameter(MatrixXd value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(MatrixXd value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var make_op(MatrixXd value, std::vector<Var> parents,
            std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad |= p.requires_grad();
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  require(loss.rows() == 1 && loss.cols() == 1, ErrorCode::DimensionMismatch,
          "backward needs a scalar loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Op nodes may survive from an earlier backward through a shared subgraph;
  // only leaves accumulate across calls.
  for (Node* node : order)
    if (node->backward) node->grad.resize(0, 0);
  loss.node()->accumulate(MatrixXd::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          ErrorCode::DimensionMismatch, std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(self.parents[1]->value));
    self.parents[1]->accumulate(self.grad.cwiseProduct(self.parents[0]->value));
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a},
                 [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), ErrorCode::DimensionMismatch,
          "matmul: inner dimensions differ");
  return make_op(a.value() * b.value(), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(self.grad * bv.transpose());
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(av.transpose() * self.grad);
  });
}

Var transpose(const Var& a) {
  return make_op(a.value().transpose(), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorCode::DimensionMismatch,
          "add_row: bias must be 1 x cols");
  MatrixXd out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Var relu(const Var& a) {
  return make_op(a.value().cwiseMax(0.0), {a}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    self.parents[0]->accumulate(
        (x.array() > 0.0).select(self.grad, MatrixXd::Zero(x.rows(), x.cols())));
  });
}

Var softmax_rows(const Var& a) {
  MatrixXd y = a.value();
  for (Index r = 0; r < y.rows(); ++r) {
    y.row(r).array() -= y.row(r).maxCoeff();
    y.row(r) = y.row(r).array().exp();
    y.row(r) /= y.row(r).sum();
  }
  return make_op(y, {a}, [y](Node& self) {
    MatrixXd dx(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double gy = self.grad.row(r).dot(y.row(r));
      dx.row(r) = y.row(r).array() * (self.grad.row(r).array() - gy);
    }
    self.parents[0]->accumulate(dx);
  });
}

Var sum(const Var& a) {
  return make_op(MatrixXd::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    self.parents[0]->accumulate(MatrixXd::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

Var mean_rows(const Var& a) {
  require(a.rows() >= 1, ErrorCode::EmptySequence, "mean over zero rows");
  const Index n = a.rows();
  return make_op(a.value().colwise().mean(), {a}, [n](Node& self) {
    self.parents[0]->accumulate(self.grad.replicate(n, 1) / static_cast<double>(n));
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::EmptySequence, "concat of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, ErrorCode::DimensionMismatch,
            "concat_rows: column counts differ");
    rows += p.rows();
  }
  MatrixXd out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op(std::move(out), {parts.begin(), parts.end()}, [](Node& self) {
    Index offset = 0;
    for (auto& parent : self.parents) {
      const Index r = parent->value.rows();
      if (parent->requires_grad) parent->accumulate(self.grad.middleRows(offset, r));
      offset += r;
    }
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(),
          ErrorCode::IndexOutOfRange, "slice_rows out of range");
  return make_op(a.value().middleRows(start, count), {a},
                 [start, count](Node& self) {
                   const auto& x = self.parents[0]->value;
                   MatrixXd g = MatrixXd::Zero(x.rows(), x.cols());
                   g.middleRows(start, count) = self.grad;
                   self.parents[0]->accumulate(g);
                 });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  MatrixXd out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] >= 0 && rows[k] < a.rows(), ErrorCode::IndexOutOfRange,
            "gather_rows index " + std::to_string(rows[k]));
    out.row(static_cast<Index>(k)) = a.value().row(rows[k]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    const auto& x = self.parents[0]->value;
    MatrixXd g = MatrixXd::Zero(x.rows(), x.cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      g.row(idx[k]) += self.grad.row(static_cast<Index>(k));
    self.parents[0]->accumulate(g);
  });
}

Var stop_gradient(const Var& a) { return constant(a.value()); }

Var negative_cosine(const Var& a, const Var& b) {
  require(a.rows() == 1 && b.rows() == 1, ErrorCode::DimensionMismatch,
          "negative_cosine expects rows");
  const double value = ccprompt::negative_cosine(a.value(), b.value());
  return make_op(MatrixXd::Constant(1, 1, value), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const double g = self.grad(0, 0);
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(g * negative_cosine_grad_a(av, bv).transpose());
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(g * negative_cosine_grad_a(bv, av).transpose());
  });
}

Var cross_entropy(const Var& logits, Index gold) {
  require(logits.rows() == 1, ErrorCode::DimensionMismatch,
          "cross_entropy expects a row of logits");
  const double value = classification_loss(logits.value(), gold);
  return make_op(MatrixXd::Constant(1, 1, value), {logits}, [gold](Node& self) {
    self.parents[0]->accumulate(
        self.grad(0, 0) *
        classification_loss_grad(self.parents[0]->value, gold).transpose());
  });
}

Var contrastive_attributes(const Var& verbalizer, const Var& h) {
  require(h.rows() == 1, ErrorCode::DimensionMismatch,
          "contrastive_attributes expects h as a row");
  auto attrs = construct_all_attributes(verbalizer.value(), h.value());
  return make_op(std::move(attrs.values), {verbalizer, h}, [](Node& self) {
    const auto grads = construct_all_attributes_backward(
        self.parents[0]->value, self.parents[1]->value, self.grad);
    self.parents[0]->accumulate(grads.d_vectors);
    self.parents[1]->accumulate(grads.d_h.transpose());
  });
}

Var contrastive_loss(const Var& attributes, const Var& prototypes,
                     const Var& weight, Index num_classes, Index gold,
                     bool include_positive) {
  auto result = contrastive_loss_with_gradient(attributes.value(),
                                               prototypes.value(), weight.value(),
                                               num_classes, gold, include_positive);
  auto grads = std::make_shared<ContrastiveLossGradient<double>>(std::move(result));
  return make_op(MatrixXd::Constant(1, 1, grads->loss),
                 {attributes, prototypes, weight}, [grads](Node& self) {
                   const double g = self.grad(0, 0);
                   self.parents[0]->accumulate(g * grads->d_attributes);
                   self.parents[1]->accumulate(g * grads->d_prototypes);
                   self.parents[2]->accumulate(g * grads->d_weight);
                 });
}

}  // namespace ccprompt::ag
