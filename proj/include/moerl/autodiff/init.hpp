#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "moerl/autodiff/tensor.hpp"

namespace moerl {

using Rng = std::mt19937_64;

// Orthogonal initialization of a weight viewed as [rows × cols]: rows are
// orthonormal when rows <= cols, columns otherwise. Scaled by `gain`.
inline Tensor orthogonal(Shape shape, std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  if (rows * cols != shape_size(shape)) throw DimensionError("orthogonal: view does not match shape");
  const bool flip = rows < cols;
  const Eigen::Index r = static_cast<Eigen::Index>(flip ? cols : rows);
  const Eigen::Index c = static_cast<Eigen::Index>(flip ? rows : cols);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  const Eigen::MatrixXd rr = qr.matrixQR().topLeftCorner(c, c).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < c; ++j) {
    if (rr(j, j) < 0.0) q.col(j) *= -1.0;
  }
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = flip ? q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i))
                            : q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      out[i * cols + j] = gain * v;
    }
  }
  return out;
}

}  // namespace moerl
