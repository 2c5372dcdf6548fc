#pragma once

// Global prototypes aligned with contrastive attribute slots, the bilinear
// similarity <W c, p>, top-m selection, and the self-contrastive loss.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ccprompt/contrastive_core.hpp"
#include "ccprompt/error.hpp"
#include "ccprompt/types.hpp"

namespace ccprompt {

template <typename Scalar>
struct PrototypeBank {
  Index num_classes = 0;
  Matrix<Scalar> prototypes;  // |R|(|R|-1) x d_e, same slot layout as attributes
  Matrix<Scalar> weight;      // W, d_e x d_e

  Index dim() const { return prototypes.cols(); }
  Index num_slots() const { return prototypes.rows(); }
};

template <typename Scalar>
struct SelectedAttribute {
  Index fact = 0;
  Index counterfact = 0;
  Index slot = 0;
  Vector<Scalar> attribute;
  Scalar score{};
};

template <typename Scalar>
struct SelectionResult {
  std::vector<SelectedAttribute<Scalar>> selected;  // descending score

  std::size_t m() const { return selected.size(); }
  bool empty() const { return selected.empty(); }
};

/// Bilinear similarity <W a, p> = sum_{r,c} W(r,c) a(c) p(r).
template <typename DerivedA, typename DerivedP, typename DerivedW>
typename DerivedA::Scalar similarity(const Eigen::MatrixBase<DerivedA>& attribute,
                                     const Eigen::MatrixBase<DerivedP>& prototype,
                                     const Eigen::MatrixBase<DerivedW>& weight) {
  require(weight.rows() == weight.cols() && weight.cols() == attribute.size() &&
              prototype.size() == attribute.size(),
          ErrorCode::DimensionMismatch, "similarity operand shapes disagree");
  return prototype.derived().reshaped().dot(
      weight * attribute.derived().reshaped());
}

/// Score of every slot against its own aligned row of `targets`.
template <typename DerivedC, typename DerivedT, typename DerivedW>
Vector<typename DerivedC::Scalar> aligned_scores(
    const Eigen::MatrixBase<DerivedC>& attributes,
    const Eigen::MatrixBase<DerivedT>& targets,
    const Eigen::MatrixBase<DerivedW>& weight) {
  require(attributes.rows() == targets.rows() &&
              attributes.cols() == targets.cols() &&
              weight.rows() == attributes.cols() &&
              weight.cols() == attributes.cols(),
          ErrorCode::DimensionMismatch, "slot scoring shapes disagree");
  // Row k of C W^T is (W c_k)^T.
  return ((attributes * weight.transpose()).array() * targets.array())
      .rowwise()
      .sum();
}

template <typename Scalar>
Vector<Scalar> slot_scores(const ContrastiveAttributeTensor<Scalar>& attrs,
                           const PrototypeBank<Scalar>& bank) {
  require(attrs.num_classes == bank.num_classes, ErrorCode::DimensionMismatch,
          "attribute tensor and prototype bank disagree on |R|");
  return aligned_scores(attrs.values, bank.prototypes, bank.weight);
}

/// Selection scores when prototypes are ablated: each attribute c_{i,j} is
/// scored against its own contrastive direction v_i - v_j.
template <typename Scalar>
Vector<Scalar> verbalizer_slot_scores(
    const ContrastiveAttributeTensor<Scalar>& attrs,
    const Matrix<Scalar>& verbalizer_vectors, const Matrix<Scalar>& weight) {
  const Index r = attrs.num_classes;
  require(verbalizer_vectors.rows() == r, ErrorCode::DimensionMismatch,
          "verbalizer rows != |R|");
  Matrix<Scalar> directions(attrs.num_slots(), attrs.dim());
  for (Index slot = 0; slot < attrs.num_slots(); ++slot) {
    const auto [i, j] = attrs.pair_index[static_cast<std::size_t>(slot)];
    directions.row(slot) = verbalizer_vectors.row(i) - verbalizer_vectors.row(j);
  }
  return aligned_scores(attrs.values, directions, weight);
}

/// Slot ids of the m highest scores, descending; ties go to the lower slot,
/// which is the lexicographically smaller (fact, counterfact).
template <typename Derived>
std::vector<Index> top_m_slots(const Eigen::MatrixBase<Derived>& scores,
                               Index m) {
  const Index n = scores.size();
  require(m >= 1 && m <= n, ErrorCode::InvalidM,
          "m=" + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + m, order.end(),
                    [&](Index a, Index b) {
                      if (scores(a) != scores(b)) return scores(a) > scores(b);
                      return a < b;
                    });
  order.resize(static_cast<std::size_t>(m));
  return order;
}

template <typename Scalar, typename Derived>
SelectionResult<Scalar> select_by_scores(
    const ContrastiveAttributeTensor<Scalar>& attrs,
    const Eigen::MatrixBase<Derived>& scores, Index m) {
  SelectionResult<Scalar> out;
  for (Index slot : top_m_slots(scores, m)) {
    const auto [i, j] = attrs.pair_index[static_cast<std::size_t>(slot)];
    out.selected.push_back({i, j, slot, attrs.values.row(slot).transpose(),
                            static_cast<Scalar>(scores(slot))});
  }
  return out;
}

template <typename Scalar>
SelectionResult<Scalar> select_top_m(const ContrastiveAttributeTensor<Scalar>& attrs,
                                     const PrototypeBank<Scalar>& bank, Index m) {
  return select_by_scores(attrs, slot_scores(attrs, bank), m);
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  const auto top = x.maxCoeff();
  return top + std::log((x.array() - top).exp().sum());
}

/// Per-slot self-contrastive term from raw scores: -s_pos + lse(negatives),
/// with s_pos joining the denominator when `include_positive` is set.
template <typename Scalar, typename Derived>
Scalar contrastive_term(Scalar positive, const Eigen::MatrixBase<Derived>& negatives,
                        bool include_positive) {
  if (!include_positive) return -positive + log_sum_exp(negatives);
  Vector<Scalar> all(negatives.size() + 1);
  all << positive, negatives.derived().reshaped();
  return -positive + log_sum_exp(all);
}

template <typename Scalar>
struct ContrastiveLossGradient {
  Scalar loss{};
  Matrix<Scalar> d_attributes;  // same shape as attribute values
  Matrix<Scalar> d_prototypes;
  Matrix<Scalar> d_weight;
};

/// Self-contrastive loss for gold class `gold` and its analytic gradient.
///
/// Each positive attribute c_{g,j} (block C_{g,*}) is scored against its own
/// prototype p_{g,j} (numerator) and against every prototype whose fact is
/// not g (denominator). The |R|-1 per-slot terms are averaged.
template <typename DerivedC, typename DerivedP, typename DerivedW>
ContrastiveLossGradient<typename DerivedC::Scalar> contrastive_loss_with_gradient(
    const Eigen::MatrixBase<DerivedC>& attributes,
    const Eigen::MatrixBase<DerivedP>& prototypes,
    const Eigen::MatrixBase<DerivedW>& weight, Index num_classes, Index gold,
    bool include_positive = false) {
  using Scalar = typename DerivedC::Scalar;
  const Index r = num_classes;
  const Index block = r - 1;
  const Index d = attributes.cols();
  require(gold >= 0 && gold < r, ErrorCode::InvalidGold,
          "gold class " + std::to_string(gold) + " outside [0, " +
              std::to_string(r) + ")");
  require(attributes.rows() == r * block && prototypes.rows() == r * block &&
              prototypes.cols() == d && weight.rows() == d && weight.cols() == d,
          ErrorCode::DimensionMismatch, "contrastive loss operand shapes");

  std::vector<Index> negative_slots;
  negative_slots.reserve(static_cast<std::size_t>(block * block));
  for (Index s = 0; s < r * block; ++s)
    if (s / block != gold) negative_slots.push_back(s);
  Matrix<Scalar> negatives(static_cast<Index>(negative_slots.size()), d);
  for (std::size_t n = 0; n < negative_slots.size(); ++n)
    negatives.row(static_cast<Index>(n)) = prototypes.row(negative_slots[n]);

  ContrastiveLossGradient<Scalar> out;
  out.d_attributes = Matrix<Scalar>::Zero(attributes.rows(), d);
  out.d_prototypes = Matrix<Scalar>::Zero(prototypes.rows(), d);
  out.d_weight = Matrix<Scalar>::Zero(d, d);
  const Scalar scale = Scalar(1) / Scalar(block);

  for (Index k = 0; k < block; ++k) {
    const Index slot = gold * block + k;
    const Vector<Scalar> c = attributes.row(slot).transpose();
    const Vector<Scalar> q = weight * c;
    const Vector<Scalar> p = prototypes.row(slot).transpose();
    const Scalar s_pos = q.dot(p);
    const Vector<Scalar> s_neg = negatives * q;

    // Softmax weights over the denominator terms.
    Scalar lse;
    Scalar pos_weight = Scalar(0);
    Vector<Scalar> neg_weight;
    if (include_positive) {
      const Scalar top = std::max(s_pos, s_neg.maxCoeff());
      const Vector<Scalar> e = (s_neg.array() - top).exp();
      const Scalar ep = std::exp(s_pos - top);
      const Scalar z = e.sum() + ep;
      lse = top + std::log(z);
      neg_weight = e / z;
      pos_weight = ep / z;
    } else {
      lse = log_sum_exp(s_neg);
      neg_weight = (s_neg.array() - lse).exp();
    }
    out.loss += scale * (lse - s_pos);

    // dL/ds_pos and dL/ds_neg, folded into an effective target vector.
    const Scalar a_pos = scale * (pos_weight - Scalar(1));
    const Vector<Scalar> a_neg = scale * neg_weight;
    const Vector<Scalar> target = a_pos * p + negatives.transpose() * a_neg;
    out.d_attributes.row(slot) += (weight.transpose() * target).transpose();
    out.d_weight += target * c.transpose();
    out.d_prototypes.row(slot) += a_pos * q.transpose();
    for (std::size_t n = 0; n < negative_slots.size(); ++n)
      out.d_prototypes.row(negative_slots[n]) +=
          a_neg(static_cast<Index>(n)) * q.transpose();
  }
  return out;
}

template <typename Scalar>
Scalar contrastive_loss(const ContrastiveAttributeTensor<Scalar>& attrs,
                        const PrototypeBank<Scalar>& bank, Index gold,
                        bool include_positive = false) {
  require(attrs.num_classes == bank.num_classes, ErrorCode::DimensionMismatch,
          "attribute tensor and prototype bank disagree on |R|");
  return contrastive_loss_with_gradient(attrs.values, bank.prototypes, bank.weight,
                                        attrs.num_classes, gold, include_positive)
      .loss;
}

}  // namespace ccprompt
