#pragma once

#include <cmath>
#include <string>

#include "ccprompt/error.hpp"
#include "ccprompt/prototype_bank.hpp"
#include "ccprompt/types.hpp"

namespace ccprompt {

/// -(a/|a|) . (b/|b|)
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar negative_cosine(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  require(a.size() == b.size(), ErrorCode::DimensionMismatch,
          "cosine operands differ in length");
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  require(na > Scalar(0) && nb > Scalar(0), ErrorCode::ZeroVector,
          "cosine of a zero vector");
  return -a.derived().reshaped().dot(b.derived().reshaped()) / (na * nb);
}

/// Gradient of negative_cosine(a, b) with respect to a.
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> negative_cosine_grad_a(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Vector<Scalar> av = a.derived().reshaped();
  const Vector<Scalar> bv = b.derived().reshaped();
  const Scalar na = av.norm();
  const Scalar nb = bv.norm();
  require(na > Scalar(0) && nb > Scalar(0), ErrorCode::ZeroVector,
          "cosine of a zero vector");
  const Scalar cos = av.dot(bv) / (na * nb);
  return -(bv / (na * nb) - cos * av / (na * na));
}

/// -log softmax(logits)[gold], stable.
template <typename Derived>
typename Derived::Scalar classification_loss(const Eigen::MatrixBase<Derived>& logits,
                                             Index gold) {
  require(gold >= 0 && gold < logits.size(), ErrorCode::InvalidGold,
          "gold class " + std::to_string(gold) + " outside [0, " +
              std::to_string(logits.size()) + ")");
  require(logits.allFinite(), ErrorCode::NumericFailure, "non-finite logits");
  return log_sum_exp(logits) - logits.derived().reshaped()(gold);
}

/// d/dlogits of classification_loss: softmax(logits) - onehot(gold).
template <typename Derived>
Vector<typename Derived::Scalar> classification_loss_grad(
    const Eigen::MatrixBase<Derived>& logits, Index gold) {
  using Scalar = typename Derived::Scalar;
  require(gold >= 0 && gold < logits.size(), ErrorCode::InvalidGold,
          "gold class out of range");
  const Vector<Scalar> x = logits.derived().reshaped();
  Vector<Scalar> p = (x.array() - log_sum_exp(x)).exp();
  p(gold) -= Scalar(1);
  return p;
}

}  // namespace ccprompt
