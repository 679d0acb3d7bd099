#ifndef PICA_OPS_HPP_
#define PICA_OPS_HPP_

#include "pica/errors.hpp"
#include "pica/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace pica {

// Next-token probabilities; double precision so sums and divergences are
// stable to well below float epsilon.
using Distribution = Eigen::VectorXd;

// Row-wise RMS normalisation followed by an elementwise gain.
template <typename Derived, typename GainDerived>
RowMatrix<typename Derived::Scalar> rms_norm(const Eigen::MatrixBase<Derived>& x,
                                             const Eigen::MatrixBase<GainDerived>& gain, double eps) {
  using Scalar = typename Derived::Scalar;
  const auto mean_sq = x.rowwise().squaredNorm().array() / static_cast<Scalar>(x.cols());
  const Vector<Scalar> inv = (mean_sq + static_cast<Scalar>(eps)).rsqrt().matrix();
  RowMatrix<Scalar> out = inv.asDiagonal() * x;
  out.array().rowwise() *= gain.derived().transpose().array();
  return out;
}

template <typename Derived>
auto silu(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x / (Scalar(1) + (-x).exp());
}

// Rotates interleaved (2i, 2i+1) pairs of every head in-place. `cos`/`sin`
// hold one row per absolute position, head_dim/2 columns.
template <typename Derived, typename TableDerived>
void apply_rotary(Eigen::MatrixBase<Derived>& x, int head_dim, Eigen::Index first_position,
                  const Eigen::MatrixBase<TableDerived>& cos, const Eigen::MatrixBase<TableDerived>& sin) {
  const Eigen::Index heads = x.cols() / head_dim;
  const int half = head_dim / 2;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::Index pos = first_position + r;
    for (Eigen::Index h = 0; h < heads; ++h) {
      for (int i = 0; i < half; ++i) {
        const Eigen::Index c = h * head_dim + 2 * i;
        const auto a = x(r, c);
        const auto b = x(r, c + 1);
        x(r, c) = a * cos(pos, i) - b * sin(pos, i);
        x(r, c + 1) = a * sin(pos, i) + b * cos(pos, i);
      }
    }
  }
}

// Masked softmax over attention scores. Row r is the query at absolute
// position first_position + r; columns beyond that position are masked.
template <typename Derived>
void causal_softmax_rows(Eigen::MatrixBase<Derived>& scores, Eigen::Index first_position) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const Eigen::Index visible = first_position + r + 1;
    auto row = scores.row(r).head(visible);
    const Scalar peak = row.maxCoeff();
    row = (row.array() - peak).exp().matrix();
    row /= row.sum();
    scores.row(r).tail(scores.cols() - visible).setZero();
  }
}

template <typename Derived>
Distribution softmax(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.size() == 0) throw Error("softmax of an empty vector");
  if (!logits.allFinite()) throw Error("softmax input contains NaN or Inf");
  const Distribution x = logits.template cast<double>();
  const Distribution e = (x.array() - x.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// Index of the largest entry; exact ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& v) {
  if (v.size() == 0) throw Error("argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

inline TokenId greedy_select(const Distribution& dist) { return static_cast<TokenId>(argmax(dist)); }

}  // namespace pica

#endif  // PICA_OPS_HPP_
