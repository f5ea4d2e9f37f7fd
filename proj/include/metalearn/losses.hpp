#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "metalearn/ops.hpp"

namespace metalearn {

/// Mean squared error over all elements. Shapes must match exactly.
template <class Scalar>
TensorT<Scalar> mse_loss(const TensorT<Scalar>& pred, const TensorT<Scalar>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: shapes " + shape_string(pred.shape()) + " and " +
                     shape_string(target.shape()) + " differ");
  }
  auto diff = sub(pred, target);
  return mean(mul(diff, diff));
}

/// Softmax cross-entropy with integer class targets, averaged over the batch.
/// logits is (batch, classes); targets is a length-batch tensor whose entries
/// must be integers in [0, classes). Row maxima are treated as constants for
/// numerical stability, which leaves all derivatives exact.
template <class Scalar>
TensorT<Scalar> cross_entropy(const TensorT<Scalar>& logits, const TensorT<Scalar>& targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be rank 2, got " +
                     shape_string(logits.shape()));
  }
  const Index batch = logits.shape()[0];
  const Index classes = logits.shape()[1];
  if (targets.rank() != 1 || targets.shape()[0] != batch) {
    throw ShapeError("cross_entropy: targets " + shape_string(targets.shape()) +
                     " do not match logits " + shape_string(logits.shape()));
  }

  std::vector<Scalar> onehot(static_cast<std::size_t>(batch * classes), Scalar(0));
  for (Index i = 0; i < batch; ++i) {
    const Scalar raw = targets.at(i);
    if (raw != std::floor(raw) || raw < Scalar(0) || raw >= static_cast<Scalar>(classes)) {
      throw DomainError("cross_entropy: target " + std::to_string(raw) +
                        " out of range [0, " + std::to_string(classes) + ")");
    }
    onehot[static_cast<std::size_t>(i * classes + static_cast<Index>(raw))] = Scalar(1);
  }
  auto onehot_t = TensorT<Scalar>::from_data(Shape{batch, classes}, std::move(onehot));

  std::vector<Scalar> row_max(static_cast<std::size_t>(batch));
  std::vector<Scalar> row_max_full(static_cast<std::size_t>(batch * classes));
  for (Index i = 0; i < batch; ++i) {
    Scalar m = logits.at(i, 0);
    for (Index j = 1; j < classes; ++j) m = std::max(m, logits.at(i, j));
    row_max[static_cast<std::size_t>(i)] = m;
    for (Index j = 0; j < classes; ++j) row_max_full[static_cast<std::size_t>(i * classes + j)] = m;
  }
  auto max_vec = TensorT<Scalar>::from_data(Shape{batch}, std::move(row_max));
  auto max_full = TensorT<Scalar>::from_data(Shape{batch, classes}, std::move(row_max_full));

  auto shifted = sub(logits, max_full);
  auto lse = add(log(sum_axis(exp(shifted), 1)), max_vec);
  auto picked = sum_axis(mul(logits, onehot_t), 1);
  return mean(sub(lse, picked));
}

}  // namespace metalearn
