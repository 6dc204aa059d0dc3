#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rdm/matrix.hpp"

namespace rdm::numerics {

// Reverse-mode differentiation over dense matrices. The graph is built
// eagerly during the forward pass; backward() walks it once in reverse
// topological order and accumulates gradients additively, so a node reused
// by several consumers receives the sum of its branch gradients. A graph and
// its nodes belong to one worker; distinct graphs may run concurrently.
struct Node {
  Matrix value;
  Matrix grad;  // lazily materialized, same shape as value
  bool requires_grad = true;
  bool grad_set = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // adds into parents' grads

  int rows() const { return static_cast<int>(value.rows()); }
  int cols() const { return static_cast<int>(value.cols()); }

  Matrix& grad_ref() {
    if (!grad_set) {
      grad = Matrix::Zero(value.rows(), value.cols());
      grad_set = true;
    }
    return grad;
  }
};

using NodeRef = std::shared_ptr<Node>;

NodeRef leaf(Matrix v);
NodeRef constant(Matrix v);

NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sub(const NodeRef& a, const NodeRef& b);
NodeRef neg(const NodeRef& a);
NodeRef scale(const NodeRef& a, double s);
NodeRef add_scalar(const NodeRef& a, double s);
NodeRef hadamard(const NodeRef& a, const NodeRef& b);
// Elementwise product / sum with a constant matrix (no gradient to the constant).
NodeRef mul_const(const NodeRef& a, const Matrix& m);
NodeRef add_const(const NodeRef& a, const Matrix& m);

NodeRef matmul(const NodeRef& a, const NodeRef& b);
NodeRef transpose(const NodeRef& a);

// b broadcast over rows of a (b is 1 x cols) or columns (b is rows x 1).
NodeRef add_row_vec(const NodeRef& a, const NodeRef& b);
NodeRef add_col_vec(const NodeRef& a, const NodeRef& b);

NodeRef leaky_relu(const NodeRef& a, double slope = 0.01);
NodeRef relu(const NodeRef& a);
NodeRef exp_(const NodeRef& a);
NodeRef log_(const NodeRef& a);
// sqrt with the argument clamped below at min_val (zero gradient where clamped).
NodeRef sqrt_clamped(const NodeRef& a, double min_val = 1e-24);
NodeRef softplus(const NodeRef& a);
NodeRef square(const NodeRef& a);
// x * |x|: strictly monotone, C1 everywhere.
NodeRef signed_square(const NodeRef& a);

NodeRef softmax_rows(const NodeRef& a);
NodeRef logsumexp_rows(const NodeRef& a);  // m x 1
NodeRef logsumexp_cols(const NodeRef& a);  // 1 x n
NodeRef sum_all(const NodeRef& a);         // 1 x 1
NodeRef row_sums(const NodeRef& a);        // m x 1
NodeRef col_sums(const NodeRef& a);        // 1 x n
NodeRef row_min(const NodeRef& a);         // m x 1, gradient to the argmin entry

NodeRef gather_rows(const NodeRef& a, const std::vector<int>& idx);
NodeRef concat_cols(const NodeRef& a, const NodeRef& b);
NodeRef slice_cols(const NodeRef& a, int c0, int c1);  // [c0, c1)
// Per-segment, per-column max over rows; gradient routes to the argmax row.
NodeRef segment_max(const NodeRef& a, const std::vector<int>& segment_of_row,
                    int num_segments);

NodeRef row_l2_normalize(const NodeRef& a, double eps = 1e-12);
// Per-row standardization: (x - mean) / sqrt(var + eps).
NodeRef layer_norm_rows(const NodeRef& a, double eps = 1e-6);
// Rows with norm above max_norm are rescaled onto the ball of that radius.
NodeRef clamp_row_norm(const NodeRef& a, double max_norm);

// Pairwise squared Euclidean distances between rows of a (m x d) and b (n x d).
NodeRef pairwise_sqdist(const NodeRef& a, const NodeRef& b);

// Rotates consecutive coordinate pairs of each row of `vecs` (m x d, d even)
// by the angles in the matching row of `angles` (m x d/2).
NodeRef apply_rotary_rows(const NodeRef& vecs, const NodeRef& angles);

// Appends a dustbin row and column filled with the scalar alpha (1 x 1 node),
// corner included.
NodeRef augment_dustbin(const NodeRef& scores, const NodeRef& alpha);

// Seeds the (1 x 1) output with gradient one and runs the reverse pass.
void backward(const NodeRef& output);

// Central-difference check of a scalar-valued builder against its analytic
// gradients. `build` must construct a fresh graph from leaves made of the
// given parameter values and return a 1 x 1 node. Returns the max over all
// parameter entries of |analytic - numeric| / max(1, |analytic|, |numeric|).
double finite_diff_check(
    const std::function<NodeRef(const std::vector<NodeRef>&)>& build,
    const std::vector<Matrix>& params, double step);

}  // namespace rdm::numerics
