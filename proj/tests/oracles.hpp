#pragma once

// Independent numerical oracles used by the test suites. Everything here is
// deliberately brute-force and shares no code with the library's own
// differentiation paths.

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "metalearn/tensor.hpp"

namespace oracles {

using metalearn::Index;
using metalearn::Tensor;

/// Central finite differences of f at x, one entry per element of x.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Relative error with a unit floor, the convention used by every gradient
/// check in this repo: |a-b| / max(1, |a|, |b|).
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

/// Dense Kronecker-structured map applied to a vectorized gradient:
/// out[i,j] = sum_{k,l} L[i,k] * G[k,l] * R[l,j] + B[i,j], built by explicit
/// enumeration of the dense coefficient matrix.
inline Eigen::MatrixXd dense_kronecker_apply(const Eigen::MatrixXd& L,
                                             const Eigen::MatrixXd& G,
                                             const Eigen::MatrixXd& R,
                                             const Eigen::MatrixXd& B) {
  const Eigen::Index m = G.rows(), n = G.cols();
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(m * n, m * n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index k = 0; k < m; ++k)
        for (Eigen::Index l = 0; l < n; ++l)
          dense(i * n + j, k * n + l) = L(i, k) * R(l, j);
  Eigen::VectorXd vec(m * n);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index l = 0; l < n; ++l) vec(k * n + l) = G(k, l);
  Eigen::VectorXd out_vec = dense * vec;
  Eigen::MatrixXd out(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = out_vec(i * n + j) + B(i, j);
  return out;
}

inline Tensor tensor_from_matrix(const Eigen::MatrixXd& m, bool requires_grad = false) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return Tensor::from_data({m.rows(), m.cols()}, std::move(data), requires_grad);
}

}  // namespace oracles
