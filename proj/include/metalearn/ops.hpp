#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "metalearn/tensor.hpp"

namespace metalearn {

template <class Scalar>
using MatrixMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Scalar>
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

/// Supported broadcasts: scalar with anything, and a length-n vector against
/// the rows of an m-by-n matrix. Everything else is a shape error.
enum class Broadcast { kNone, kScalarLeft, kScalarRight, kRowVecLeft, kRowVecRight };

struct BinaryPlan {
  Broadcast kind;
  Shape out_shape;
};

inline BinaryPlan plan_binary(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return {Broadcast::kNone, a};
  if (shape_numel(a) == 1) return {Broadcast::kScalarLeft, b};
  if (shape_numel(b) == 1) return {Broadcast::kScalarRight, a};
  if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return {Broadcast::kRowVecRight, a};
  if (a.size() == 1 && b.size() == 2 && b[1] == a[0]) return {Broadcast::kRowVecLeft, b};
  throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " +
                   shape_string(b) + " do not conform");
}

template <class Scalar, class F>
std::vector<Scalar> eval_binary(const BinaryPlan& plan, const TensorT<Scalar>& a,
                                const TensorT<Scalar>& b, F&& f) {
  auto ad = a.data();
  auto bd = b.data();
  std::vector<Scalar> out(static_cast<std::size_t>(shape_numel(plan.out_shape)));
  switch (plan.kind) {
    case Broadcast::kNone:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i]);
      break;
    case Broadcast::kScalarLeft:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[0], bd[i]);
      break;
    case Broadcast::kScalarRight:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[0]);
      break;
    case Broadcast::kRowVecRight: {
      const auto cols = static_cast<std::size_t>(plan.out_shape[1]);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i % cols]);
      break;
    }
    case Broadcast::kRowVecLeft: {
      const auto cols = static_cast<std::size_t>(plan.out_shape[1]);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i % cols], bd[i]);
      break;
    }
  }
  return out;
}

}  // namespace detail

// --- forward declarations used inside backward rules -------------------------

template <class Scalar>
TensorT<Scalar> sub(const TensorT<Scalar>& a, const TensorT<Scalar>& b);
template <class Scalar>
TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b);
template <class Scalar>
TensorT<Scalar> divide(const TensorT<Scalar>& a, const TensorT<Scalar>& b);
template <class Scalar>
TensorT<Scalar> neg(const TensorT<Scalar>& t);
template <class Scalar>
TensorT<Scalar> sum(const TensorT<Scalar>& t);
template <class Scalar>
TensorT<Scalar> sum_axis(const TensorT<Scalar>& t, int axis);
template <class Scalar>
TensorT<Scalar> reshape(const TensorT<Scalar>& t, Shape shape);
template <class Scalar>
TensorT<Scalar> matmul(const TensorT<Scalar>& a, const TensorT<Scalar>& b);
template <class Scalar>
TensorT<Scalar> transpose(const TensorT<Scalar>& t);
template <class Scalar>
TensorT<Scalar> slice_rows(const TensorT<Scalar>& t, Index start, Index length);
template <class Scalar>
TensorT<Scalar> embed_rows(const TensorT<Scalar>& t, Index start, Index total);
template <class Scalar>
TensorT<Scalar> tanh(const TensorT<Scalar>& t);
template <class Scalar>
TensorT<Scalar> pow_scalar(const TensorT<Scalar>& t, Scalar exponent);

namespace detail {

/// Collapse a broadcast gradient back to the shape of the operand it belongs
/// to. Composed of differentiable ops, so double backward works.
template <class Scalar>
TensorT<Scalar> reduce_to(const TensorT<Scalar>& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (shape_numel(target) == 1) return reshape(sum(g), target);
  if (g.rank() == 2 && target.size() == 1 && g.shape()[1] == target[0]) {
    return sum_axis(g, 0);
  }
  throw GraphError("reduce_to: cannot reduce " + shape_string(g.shape()) + " to " +
                   shape_string(target));
}

}  // namespace detail

// --- elementwise binaries -----------------------------------------------------

template <class Scalar>
TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  auto plan = detail::plan_binary("add", a.shape(), b.shape());
  auto data = detail::eval_binary(plan, a, b, [](Scalar x, Scalar y) { return x + y; });
  Shape sa = a.shape(), sb = b.shape();
  return TensorT<Scalar>::make_op_result(
      "add", plan.out_shape, std::move(data), {a, b},
      [sa, sb](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{detail::reduce_to(g, sa),
                                            detail::reduce_to(g, sb)};
      });
}

template <class Scalar>
TensorT<Scalar> sub(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  auto plan = detail::plan_binary("sub", a.shape(), b.shape());
  auto data = detail::eval_binary(plan, a, b, [](Scalar x, Scalar y) { return x - y; });
  Shape sa = a.shape(), sb = b.shape();
  return TensorT<Scalar>::make_op_result(
      "sub", plan.out_shape, std::move(data), {a, b},
      [sa, sb](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{detail::reduce_to(g, sa),
                                            detail::reduce_to(neg(g), sb)};
      });
}

template <class Scalar>
TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  auto plan = detail::plan_binary("mul", a.shape(), b.shape());
  auto data = detail::eval_binary(plan, a, b, [](Scalar x, Scalar y) { return x * y; });
  Shape sa = a.shape(), sb = b.shape();
  return TensorT<Scalar>::make_op_result(
      "mul", plan.out_shape, std::move(data), {a, b},
      [a, b, sa, sb](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{detail::reduce_to(mul(g, b), sa),
                                            detail::reduce_to(mul(g, a), sb)};
      });
}

template <class Scalar>
TensorT<Scalar> divide(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  for (Scalar v : b.data()) {
    if (v == Scalar(0)) throw DomainError("divide: divisor contains zero");
  }
  auto plan = detail::plan_binary("divide", a.shape(), b.shape());
  auto data = detail::eval_binary(plan, a, b, [](Scalar x, Scalar y) { return x / y; });
  Shape sa = a.shape(), sb = b.shape();
  return TensorT<Scalar>::make_op_result(
      "divide", plan.out_shape, std::move(data), {a, b},
      [a, b, sa, sb](const TensorT<Scalar>& g) {
        auto da = detail::reduce_to(divide(g, b), sa);
        auto db = detail::reduce_to(neg(divide(mul(g, a), mul(b, b))), sb);
        return std::vector<TensorT<Scalar>>{da, db};
      });
}

// --- elementwise unaries ------------------------------------------------------

namespace detail {

template <class Scalar, class F>
std::vector<Scalar> eval_unary(const TensorT<Scalar>& t, F&& f) {
  auto td = t.data();
  std::vector<Scalar> out(td.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(td[i]);
  return out;
}

}  // namespace detail

template <class Scalar>
TensorT<Scalar> neg(const TensorT<Scalar>& t) {
  auto data = detail::eval_unary(t, [](Scalar x) { return -x; });
  return TensorT<Scalar>::make_op_result(
      "neg", t.shape(), std::move(data), {t}, [](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{neg(g)};
      });
}

template <class Scalar>
TensorT<Scalar> exp(const TensorT<Scalar>& t) {
  auto data = detail::eval_unary(t, [](Scalar x) { return std::exp(x); });
  return TensorT<Scalar>::make_op_result(
      "exp", t.shape(), std::move(data), {t}, [t](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{mul(g, exp(t))};
      });
}

template <class Scalar>
TensorT<Scalar> log(const TensorT<Scalar>& t) {
  for (Scalar v : t.data()) {
    if (v <= Scalar(0)) {
      throw DomainError("log: input must be positive, got " + std::to_string(v));
    }
  }
  auto data = detail::eval_unary(t, [](Scalar x) { return std::log(x); });
  return TensorT<Scalar>::make_op_result(
      "log", t.shape(), std::move(data), {t}, [t](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{divide(g, t)};
      });
}

template <class Scalar>
TensorT<Scalar> tanh(const TensorT<Scalar>& t) {
  auto data = detail::eval_unary(t, [](Scalar x) { return std::tanh(x); });
  return TensorT<Scalar>::make_op_result(
      "tanh", t.shape(), std::move(data), {t}, [t](const TensorT<Scalar>& g) {
        auto th = tanh(t);
        auto one_minus = sub(TensorT<Scalar>::scalar(Scalar(1)), mul(th, th));
        return std::vector<TensorT<Scalar>>{mul(g, one_minus)};
      });
}

/// relu with subgradient 0 at the kink. The mask is a constant, so second
/// derivatives through relu are exactly zero.
template <class Scalar>
TensorT<Scalar> relu(const TensorT<Scalar>& t) {
  auto data = detail::eval_unary(t, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); });
  auto mask_data = detail::eval_unary(
      t, [](Scalar x) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
  auto mask = TensorT<Scalar>::from_data(t.shape(), std::move(mask_data));
  return TensorT<Scalar>::make_op_result(
      "relu", t.shape(), std::move(data), {t}, [mask](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{mul(g, mask)};
      });
}

template <class Scalar>
TensorT<Scalar> pow_scalar(const TensorT<Scalar>& t, Scalar exponent) {
  const bool integral = exponent == std::floor(exponent);
  for (Scalar v : t.data()) {
    if (v < Scalar(0) && !integral) {
      throw DomainError("pow: negative base with non-integer exponent");
    }
    if (v == Scalar(0) && exponent < Scalar(0)) {
      throw DomainError("pow: zero base with negative exponent");
    }
  }
  auto data = detail::eval_unary(t, [exponent](Scalar x) { return std::pow(x, exponent); });
  return TensorT<Scalar>::make_op_result(
      "pow", t.shape(), std::move(data), {t}, [t, exponent](const TensorT<Scalar>& g) {
        auto local = mul(TensorT<Scalar>::scalar(exponent),
                         pow_scalar(t, exponent - Scalar(1)));
        return std::vector<TensorT<Scalar>>{mul(g, local)};
      });
}

// --- linear algebra -----------------------------------------------------------

template <class Scalar>
TensorT<Scalar> matmul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " do not conform");
  }
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  ConstMatrixMap<Scalar> ma(a.data().data(), m, k);
  ConstMatrixMap<Scalar> mb(b.data().data(), k, n);
  MatrixMap<Scalar> mo(out.data(), m, n);
  mo.noalias() = ma * mb;
  return TensorT<Scalar>::make_op_result(
      "matmul", Shape{m, n}, std::move(out), {a, b}, [a, b](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{matmul(g, transpose(b)),
                                            matmul(transpose(a), g)};
      });
}

template <class Scalar>
TensorT<Scalar> transpose(const TensorT<Scalar>& t) {
  if (t.rank() != 2) {
    throw ShapeError("transpose: requires rank 2, got " + shape_string(t.shape()));
  }
  const Index m = t.shape()[0], n = t.shape()[1];
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  ConstMatrixMap<Scalar> mt(t.data().data(), m, n);
  MatrixMap<Scalar> mo(out.data(), n, m);
  mo = mt.transpose();
  return TensorT<Scalar>::make_op_result(
      "transpose", Shape{n, m}, std::move(out), {t}, [](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{transpose(g)};
      });
}

// --- reductions and reshapes ---------------------------------------------------

template <class Scalar>
TensorT<Scalar> sum(const TensorT<Scalar>& t) {
  Scalar acc(0);
  for (Scalar v : t.data()) acc += v;
  Shape in_shape = t.shape();
  return TensorT<Scalar>::make_op_result(
      "sum", Shape{}, {acc}, {t}, [in_shape](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{mul(TensorT<Scalar>::ones(in_shape), g)};
      });
}

/// Sum of a rank-2 tensor along one axis: axis 0 collapses rows (result has
/// one entry per column), axis 1 collapses columns.
template <class Scalar>
TensorT<Scalar> sum_axis(const TensorT<Scalar>& t, int axis) {
  if (t.rank() != 2) {
    throw ShapeError("sum_axis: requires rank 2, got " + shape_string(t.shape()));
  }
  if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  const Index m = t.shape()[0], n = t.shape()[1];
  ConstMatrixMap<Scalar> mt(t.data().data(), m, n);
  if (axis == 0) {
    std::vector<Scalar> out(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = mt.col(j).sum();
    return TensorT<Scalar>::make_op_result(
        "sum_axis0", Shape{n}, std::move(out), {t}, [m, n](const TensorT<Scalar>& g) {
          auto expanded = matmul(TensorT<Scalar>::ones(Shape{m, 1}), reshape(g, Shape{1, n}));
          return std::vector<TensorT<Scalar>>{expanded};
        });
  }
  std::vector<Scalar> out(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = mt.row(i).sum();
  return TensorT<Scalar>::make_op_result(
      "sum_axis1", Shape{m}, std::move(out), {t}, [m, n](const TensorT<Scalar>& g) {
        auto expanded = matmul(reshape(g, Shape{m, 1}), TensorT<Scalar>::ones(Shape{1, n}));
        return std::vector<TensorT<Scalar>>{expanded};
      });
}

template <class Scalar>
TensorT<Scalar> mean(const TensorT<Scalar>& t) {
  return divide(sum(t), TensorT<Scalar>::scalar(static_cast<Scalar>(t.numel())));
}

template <class Scalar>
TensorT<Scalar> reshape(const TensorT<Scalar>& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(t.shape()) + " as " +
                     shape_string(shape));
  }
  Shape in_shape = t.shape();
  std::vector<Scalar> data(t.data().begin(), t.data().end());
  return TensorT<Scalar>::make_op_result(
      "reshape", std::move(shape), std::move(data), {t},
      [in_shape](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{reshape(g, in_shape)};
      });
}

// --- slicing, concatenation, stacking ------------------------------------------

template <class Scalar>
TensorT<Scalar> slice_rows(const TensorT<Scalar>& t, Index start, Index length) {
  if (t.rank() < 1) throw ShapeError("slice_rows: requires rank >= 1");
  const Index rows = t.shape()[0];
  if (start < 0 || length <= 0 || start + length > rows) {
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for " +
                     shape_string(t.shape()));
  }
  const Index row_size = t.numel() / rows;
  Shape out_shape = t.shape();
  out_shape[0] = length;
  auto td = t.data();
  std::vector<Scalar> out(td.begin() + start * row_size,
                          td.begin() + (start + length) * row_size);
  return TensorT<Scalar>::make_op_result(
      "slice_rows", std::move(out_shape), std::move(out), {t},
      [start, rows](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{embed_rows(g, start, rows)};
      });
}

/// Inverse of slice_rows: place t into a zero tensor with `total` leading rows.
template <class Scalar>
TensorT<Scalar> embed_rows(const TensorT<Scalar>& t, Index start, Index total) {
  if (t.rank() < 1) throw ShapeError("embed_rows: requires rank >= 1");
  const Index rows = t.shape()[0];
  if (start < 0 || start + rows > total) {
    throw ShapeError("embed_rows: block does not fit");
  }
  const Index row_size = t.numel() / rows;
  Shape out_shape = t.shape();
  out_shape[0] = total;
  std::vector<Scalar> out(static_cast<std::size_t>(total * row_size), Scalar(0));
  auto td = t.data();
  std::copy(td.begin(), td.end(), out.begin() + start * row_size);
  return TensorT<Scalar>::make_op_result(
      "embed_rows", std::move(out_shape), std::move(out), {t},
      [start, rows](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{slice_rows(g, start, rows)};
      });
}

template <class Scalar>
TensorT<Scalar> concat(const std::vector<TensorT<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat: needs at least one tensor");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw ShapeError("concat: requires rank >= 1");
  Index total_rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<Index>(first.size()) ||
        !std::equal(first.begin() + 1, first.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat: shapes " + shape_string(first) + " and " +
                       shape_string(p.shape()) + " do not conform");
    }
    total_rows += p.shape()[0];
  }
  Shape out_shape = first;
  out_shape[0] = total_rows;
  std::vector<Scalar> out;
  out.reserve(static_cast<std::size_t>(shape_numel(out_shape)));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Index> row_counts;
  row_counts.reserve(parts.size());
  for (const auto& p : parts) row_counts.push_back(p.shape()[0]);
  return TensorT<Scalar>::make_op_result(
      "concat", std::move(out_shape), std::move(out), parts,
      [row_counts](const TensorT<Scalar>& g) {
        std::vector<TensorT<Scalar>> grads;
        grads.reserve(row_counts.size());
        Index offset = 0;
        for (Index rows : row_counts) {
          grads.push_back(slice_rows(g, offset, rows));
          offset += rows;
        }
        return grads;
      });
}

/// Stack along a fresh leading axis; every part must share one shape.
template <class Scalar>
TensorT<Scalar> stack(const std::vector<TensorT<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("stack: needs at least one tensor");
  const Shape& s = parts[0].shape();
  std::vector<TensorT<Scalar>> rows;
  rows.reserve(parts.size());
  Shape row_shape = s;
  row_shape.insert(row_shape.begin(), 1);
  for (const auto& p : parts) {
    if (p.shape() != s) {
      throw ShapeError("stack: shapes " + shape_string(s) + " and " +
                       shape_string(p.shape()) + " differ");
    }
    rows.push_back(reshape(p, row_shape));
  }
  return concat(rows);
}

/// Graph-recorded copy: values equal, gradient passes through unchanged.
template <class Scalar>
TensorT<Scalar> identity(const TensorT<Scalar>& t) {
  std::vector<Scalar> data(t.data().begin(), t.data().end());
  return TensorT<Scalar>::make_op_result(
      "identity", t.shape(), std::move(data), {t}, [](const TensorT<Scalar>& g) {
        return std::vector<TensorT<Scalar>>{g};
      });
}

// --- operator sugar -------------------------------------------------------------

template <class Scalar>
TensorT<Scalar> operator+(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  return add(a, b);
}
template <class Scalar>
TensorT<Scalar> operator-(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  return sub(a, b);
}
template <class Scalar>
TensorT<Scalar> operator*(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  return mul(a, b);
}
template <class Scalar>
TensorT<Scalar> operator/(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  return divide(a, b);
}
template <class Scalar>
TensorT<Scalar> operator-(const TensorT<Scalar>& t) {
  return neg(t);
}
template <class Scalar>
TensorT<Scalar> operator*(Scalar c, const TensorT<Scalar>& t) {
  return mul(TensorT<Scalar>::scalar(c), t);
}
template <class Scalar>
TensorT<Scalar> operator*(const TensorT<Scalar>& t, Scalar c) {
  return mul(t, TensorT<Scalar>::scalar(c));
}
template <class Scalar>
TensorT<Scalar> operator+(const TensorT<Scalar>& t, Scalar c) {
  return add(t, TensorT<Scalar>::scalar(c));
}
template <class Scalar>
TensorT<Scalar> operator-(const TensorT<Scalar>& t, Scalar c) {
  return sub(t, TensorT<Scalar>::scalar(c));
}

}  // namespace metalearn
