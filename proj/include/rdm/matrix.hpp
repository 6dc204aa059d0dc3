#pragma once

#include <Eigen/Dense>
#include <random>

namespace rdm::numerics {

// Dense row-major matrix of 64-bit reals. Row-major storage is part of the
// checkpoint contract, so keep the layout explicit.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix random_uniform(int rows, int cols, double lo, double hi,
                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

inline Matrix random_normal(int rows, int cols, double sigma,
                            std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

}  // namespace rdm::numerics
