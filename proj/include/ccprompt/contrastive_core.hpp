#pragma once

// Fact/counterfact subspaces and instance projections.
//
// For classes i != j with label vectors v_i, v_j the contrastive direction is
// u = v_i - v_j, and an instance representation h is mapped to the rank-1
// projection c = (<h,u> / <u,u>) u. All |R|(|R|-1) ordered pairs are laid out
// slot-major: slot (i, k) holds the k-th counterfact j != i in ascending order,
// flattened to row i*(|R|-1) + k.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ccprompt/error.hpp"
#include "ccprompt/types.hpp"

namespace ccprompt {

template <typename Scalar>
struct Verbalizer {
  Matrix<Scalar> vectors;  // |R| x d_e, row i is v_i
  std::vector<std::string> label_names;

  Verbalizer() = default;
  Verbalizer(Matrix<Scalar> v, std::vector<std::string> names)
      : vectors(std::move(v)), label_names(std::move(names)) {
    require(vectors.rows() >= 2, ErrorCode::DimensionMismatch,
            "verbalizer needs at least two classes");
    require(static_cast<Index>(label_names.size()) == vectors.rows(),
            ErrorCode::DimensionMismatch,
            "one label name per verbalizer row");
    require(vectors.allFinite(), ErrorCode::NumericFailure,
            "verbalizer contains non-finite values");
  }

  Index num_classes() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
};

template <typename Scalar>
struct ContrastiveSubspace {
  Index fact = 0;
  Index counterfact = 0;
  Vector<Scalar> direction;
  bool degenerate = false;
};

/// Counterfact id stored at position `k` of fact `i`'s block.
inline Index counterfact_at(Index i, Index k) { return k < i ? k : k + 1; }

/// Flat slot row for the ordered pair (i, j), j != i.
inline Index slot_index(Index num_classes, Index i, Index j) {
  return i * (num_classes - 1) + (j < i ? j : j - 1);
}

inline std::vector<std::pair<Index, Index>> make_pair_index(Index num_classes) {
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(num_classes * (num_classes - 1)));
  for (Index i = 0; i < num_classes; ++i)
    for (Index k = 0; k + 1 < num_classes; ++k)
      pairs.emplace_back(i, counterfact_at(i, k));
  return pairs;
}

template <typename Scalar>
struct ContrastiveAttributeTensor {
  Index num_classes = 0;
  Matrix<Scalar> values;  // |R|(|R|-1) x d_e, slot-major
  std::vector<std::pair<Index, Index>> pair_index;
  std::vector<std::string> warnings;

  Index dim() const { return values.cols(); }
  Index num_slots() const { return values.rows(); }

  auto attribute(Index i, Index k) const {
    return values.row(i * (num_classes - 1) + k);
  }
  /// Block C_{i,*}: the |R|-1 attributes with fact i.
  auto fact_block(Index i) const {
    return values.middleRows(i * (num_classes - 1), num_classes - 1);
  }
};

template <typename Derived>
ContrastiveSubspace<typename Derived::Scalar> build_subspace(
    const Eigen::MatrixBase<Derived>& vectors, Index i, Index j) {
  using Scalar = typename Derived::Scalar;
  const Index r = vectors.rows();
  require(i >= 0 && i < r && j >= 0 && j < r, ErrorCode::IndexOutOfRange,
          "class pair (" + std::to_string(i) + ", " + std::to_string(j) +
              ") outside [0, " + std::to_string(r) + ")");
  require(i != j, ErrorCode::IdenticalPair,
          "fact and counterfact must differ (got " + std::to_string(i) + ")");
  ContrastiveSubspace<Scalar> s;
  s.fact = i;
  s.counterfact = j;
  s.direction = (vectors.row(i) - vectors.row(j)).transpose();
  s.degenerate = !(s.direction.norm() > Scalar(kDegenerateEps));
  return s;
}

template <typename Scalar>
ContrastiveSubspace<Scalar> build_subspace(const Verbalizer<Scalar>& verbalizer,
                                           Index i, Index j) {
  return build_subspace(verbalizer.vectors, i, j);
}

/// Orthogonal projection of h onto the line spanned by s.direction.
template <typename Derived>
Vector<typename Derived::Scalar> project(
    const Eigen::MatrixBase<Derived>& h,
    const ContrastiveSubspace<typename Derived::Scalar>& s) {
  require(!s.degenerate, ErrorCode::DegenerateSubspace,
          "direction (" + std::to_string(s.fact) + ", " +
              std::to_string(s.counterfact) + ") has near-zero norm");
  require(h.size() == s.direction.size(), ErrorCode::DimensionMismatch,
          "representation and direction lengths differ");
  const auto& u = s.direction;
  const auto alpha = u.dot(h.derived().reshaped()) / u.squaredNorm();
  return alpha * u;
}

/// All |R|(|R|-1) projections of `h` (length d_e) onto the verbalizer's
/// contrastive directions.
template <typename DerivedV, typename DerivedH>
ContrastiveAttributeTensor<typename DerivedV::Scalar> construct_all_attributes(
    const Eigen::MatrixBase<DerivedV>& vectors,
    const Eigen::MatrixBase<DerivedH>& h) {
  using Scalar = typename DerivedV::Scalar;
  const Index r = vectors.rows();
  const Index d = vectors.cols();
  require(r >= 2, ErrorCode::DimensionMismatch, "need at least two classes");
  require(h.size() == d, ErrorCode::DimensionMismatch,
          "representation length " + std::to_string(h.size()) +
              " != verbalizer dim " + std::to_string(d));

  ContrastiveAttributeTensor<Scalar> out;
  out.num_classes = r;
  out.values = Matrix<Scalar>::Zero(r * (r - 1), d);
  out.pair_index = make_pair_index(r);
  const Vector<Scalar> hv = h.derived().reshaped();
  for (Index slot = 0; slot < out.values.rows(); ++slot) {
    const auto [i, j] = out.pair_index[static_cast<std::size_t>(slot)];
    const Vector<Scalar> u = (vectors.row(i) - vectors.row(j)).transpose();
    const Scalar uu = u.squaredNorm();
    if (!(std::sqrt(uu) > Scalar(kDegenerateEps))) {
      out.warnings.push_back("degenerate contrastive pair (" +
                             std::to_string(i) + ", " + std::to_string(j) +
                             "): zero attribute");
      continue;
    }
    out.values.row(slot) = (u.dot(hv) / uu) * u.transpose();
  }
  return out;
}

template <typename Scalar, typename DerivedH>
ContrastiveAttributeTensor<Scalar> construct_all_attributes(
    const Verbalizer<Scalar>& verbalizer, const Eigen::MatrixBase<DerivedH>& h) {
  return construct_all_attributes(verbalizer.vectors, h);
}

template <typename Scalar>
struct AttributeGradients {
  Matrix<Scalar> d_vectors;  // |R| x d_e
  Vector<Scalar> d_h;        // d_e
};

/// Vector-Jacobian product of construct_all_attributes: given dL/dC (slot
/// rows), returns dL/dV and dL/dh. Degenerate slots contribute nothing.
///
/// With a = <u,h>, b = <u,u>, c = (a/b) u and upstream g:
///   dL/dh = (<g,u>/b) u
///   dL/du = (a/b) g + <g,u> (h/b - 2a u / b^2)
template <typename DerivedV, typename DerivedH, typename DerivedG>
AttributeGradients<typename DerivedV::Scalar> construct_all_attributes_backward(
    const Eigen::MatrixBase<DerivedV>& vectors,
    const Eigen::MatrixBase<DerivedH>& h,
    const Eigen::MatrixBase<DerivedG>& grad_values) {
  using Scalar = typename DerivedV::Scalar;
  const Index r = vectors.rows();
  const Index d = vectors.cols();
  require(grad_values.rows() == r * (r - 1) && grad_values.cols() == d,
          ErrorCode::DimensionMismatch, "attribute gradient shape");
  AttributeGradients<Scalar> out{Matrix<Scalar>::Zero(r, d),
                                 Vector<Scalar>::Zero(d)};
  const Vector<Scalar> hv = h.derived().reshaped();
  Index slot = 0;
  for (Index i = 0; i < r; ++i) {
    for (Index k = 0; k + 1 < r; ++k, ++slot) {
      const Index j = counterfact_at(i, k);
      const Vector<Scalar> u = (vectors.row(i) - vectors.row(j)).transpose();
      const Scalar b = u.squaredNorm();
      if (!(std::sqrt(b) > Scalar(kDegenerateEps))) continue;
      const Vector<Scalar> g = grad_values.row(slot).transpose();
      const Scalar a = u.dot(hv);
      const Scalar gu = g.dot(u);
      out.d_h += (gu / b) * u;
      const Vector<Scalar> du = (a / b) * g + gu * (hv / b - (2 * a / (b * b)) * u);
      out.d_vectors.row(i) += du.transpose();
      out.d_vectors.row(j) -= du.transpose();
    }
  }
  return out;
}

}  // namespace ccprompt
