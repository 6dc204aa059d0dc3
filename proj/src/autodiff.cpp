#include "rdm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "rdm/errors.hpp"

namespace rdm::numerics {

namespace {

NodeRef make_node(Matrix value, std::vector<NodeRef> parents,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->requires_grad = false;
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void check_same_shape(const NodeRef& a, const NodeRef& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void accumulate(const NodeRef& p, const Matrix& g) {
  if (p->requires_grad) p->grad_ref() += g;
}

}  // namespace

NodeRef leaf(Matrix v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

NodeRef constant(Matrix v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return n;
}

NodeRef add(const NodeRef& a, const NodeRef& b) {
  check_same_shape(a, b, "add");
  return make_node(a->value + b->value, {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad);
  });
}

NodeRef sub(const NodeRef& a, const NodeRef& b) {
  check_same_shape(a, b, "sub");
  return make_node(a->value - b->value, {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], -n.grad);
  });
}

NodeRef neg(const NodeRef& a) {
  return make_node(-a->value, {a},
                   [](Node& n) { accumulate(n.parents[0], -n.grad); });
}

NodeRef scale(const NodeRef& a, double s) {
  return make_node(a->value * s, {a},
                   [s](Node& n) { accumulate(n.parents[0], n.grad * s); });
}

NodeRef add_scalar(const NodeRef& a, double s) {
  return make_node(a->value.array() + s, {a},
                   [](Node& n) { accumulate(n.parents[0], n.grad); });
}

NodeRef hadamard(const NodeRef& a, const NodeRef& b) {
  check_same_shape(a, b, "hadamard");
  return make_node(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseProduct(n.parents[1]->value));
    accumulate(n.parents[1], n.grad.cwiseProduct(n.parents[0]->value));
  });
}

NodeRef mul_const(const NodeRef& a, const Matrix& m) {
  if (a->rows() != m.rows() || a->cols() != m.cols()) {
    throw std::invalid_argument("mul_const: shape mismatch");
  }
  Matrix mask = m;
  return make_node(a->value.cwiseProduct(mask), {a}, [mask](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseProduct(mask));
  });
}

NodeRef add_const(const NodeRef& a, const Matrix& m) {
  if (a->rows() != m.rows() || a->cols() != m.cols()) {
    throw std::invalid_argument("add_const: shape mismatch");
  }
  return make_node(a->value + m, {a},
                   [](Node& n) { accumulate(n.parents[0], n.grad); });
}

NodeRef matmul(const NodeRef& a, const NodeRef& b) {
  if (a->cols() != b->rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree");
  }
  return make_node(a->value * b->value, {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad * n.parents[1]->value.transpose());
    accumulate(n.parents[1], n.parents[0]->value.transpose() * n.grad);
  });
}

NodeRef transpose(const NodeRef& a) {
  return make_node(a->value.transpose(), {a}, [](Node& n) {
    accumulate(n.parents[0], n.grad.transpose());
  });
}

NodeRef add_row_vec(const NodeRef& a, const NodeRef& b) {
  if (b->rows() != 1 || b->cols() != a->cols()) {
    throw std::invalid_argument("add_row_vec: b must be 1 x cols(a)");
  }
  Matrix out = a->value;
  out.rowwise() += Eigen::RowVectorXd(b->value.row(0));
  return make_node(std::move(out), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad.colwise().sum());
  });
}

NodeRef add_col_vec(const NodeRef& a, const NodeRef& b) {
  if (b->cols() != 1 || b->rows() != a->rows()) {
    throw std::invalid_argument("add_col_vec: b must be rows(a) x 1");
  }
  Matrix out = a->value;
  out.colwise() += Eigen::VectorXd(b->value.col(0));
  return make_node(std::move(out), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad.rowwise().sum());
  });
}

NodeRef leaky_relu(const NodeRef& a, double slope) {
  Matrix out = a->value.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return make_node(std::move(out), {a}, [slope](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix g = n.grad;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (x(i) <= 0.0) g(i) *= slope;
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef relu(const NodeRef& a) {
  Matrix out = a->value.cwiseMax(0.0);
  return make_node(std::move(out), {a}, [](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix g = n.grad;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (x(i) <= 0.0) g(i) = 0.0;
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef exp_(const NodeRef& a) {
  Matrix out = a->value.array().exp();
  return make_node(std::move(out), {a}, [](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseProduct(n.value));
  });
}

NodeRef log_(const NodeRef& a) {
  if ((a->value.array() <= 0.0).any()) {
    throw std::invalid_argument("log: non-positive entry");
  }
  Matrix out = a->value.array().log();
  return make_node(std::move(out), {a}, [](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseQuotient(n.parents[0]->value));
  });
}

NodeRef sqrt_clamped(const NodeRef& a, double min_val) {
  Matrix clamped = a->value.cwiseMax(min_val);
  Matrix out = clamped.array().sqrt();
  return make_node(std::move(out), {a}, [min_val](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix g = n.grad;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g(i) = x(i) > min_val ? g(i) * 0.5 / n.value(i) : 0.0;
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef softplus(const NodeRef& a) {
  Matrix out = a->value.unaryExpr([](double x) {
    // log(1 + e^x) without overflow.
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return make_node(std::move(out), {a}, [](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix g = n.grad;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g(i) *= 1.0 / (1.0 + std::exp(-x(i)));
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef square(const NodeRef& a) {
  Matrix out = a->value.cwiseProduct(a->value);
  return make_node(std::move(out), {a}, [](Node& n) {
    accumulate(n.parents[0], 2.0 * n.grad.cwiseProduct(n.parents[0]->value));
  });
}

NodeRef signed_square(const NodeRef& a) {
  Matrix out = a->value.unaryExpr([](double x) { return x * std::abs(x); });
  return make_node(std::move(out), {a}, [](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix g = n.grad;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g(i) *= 2.0 * std::abs(x(i));
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef softmax_rows(const NodeRef& a) {
  if (!all_finite(a->value)) throw std::invalid_argument("softmax_rows: non-finite input");
  Matrix out(a->rows(), a->cols());
  for (int r = 0; r < a->rows(); ++r) {
    const double m = a->value.row(r).maxCoeff();
    Eigen::RowVectorXd e = (a->value.row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    Matrix g(n.rows(), n.cols());
    for (int r = 0; r < n.rows(); ++r) {
      const auto s = n.value.row(r);
      const double dot = n.grad.row(r).dot(s);
      g.row(r) = s.cwiseProduct((n.grad.row(r).array() - dot).matrix());
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef logsumexp_rows(const NodeRef& a) {
  Matrix out(a->rows(), 1);
  for (int r = 0; r < a->rows(); ++r) {
    const double m = a->value.row(r).maxCoeff();
    out(r, 0) = m + std::log((a->value.row(r).array() - m).exp().sum());
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    Matrix g(n.parents[0]->rows(), n.parents[0]->cols());
    for (int r = 0; r < g.rows(); ++r) {
      g.row(r) = n.grad(r, 0) *
                 (n.parents[0]->value.row(r).array() - n.value(r, 0)).exp().matrix();
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef logsumexp_cols(const NodeRef& a) {
  Matrix out(1, a->cols());
  for (int c = 0; c < a->cols(); ++c) {
    const double m = a->value.col(c).maxCoeff();
    out(0, c) = m + std::log((a->value.col(c).array() - m).exp().sum());
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    Matrix g(n.parents[0]->rows(), n.parents[0]->cols());
    for (int c = 0; c < g.cols(); ++c) {
      g.col(c) = n.grad(0, c) *
                 (n.parents[0]->value.col(c).array() - n.value(0, c)).exp().matrix();
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef sum_all(const NodeRef& a) {
  Matrix out(1, 1);
  out(0, 0) = a->value.sum();
  return make_node(std::move(out), {a}, [](Node& n) {
    accumulate(n.parents[0],
               Matrix::Constant(n.parents[0]->rows(), n.parents[0]->cols(), n.grad(0, 0)));
  });
}

NodeRef row_sums(const NodeRef& a) {
  Matrix out = a->value.rowwise().sum();
  return make_node(std::move(out), {a}, [](Node& n) {
    Matrix g(n.parents[0]->rows(), n.parents[0]->cols());
    for (int r = 0; r < g.rows(); ++r) g.row(r).setConstant(n.grad(r, 0));
    accumulate(n.parents[0], g);
  });
}

NodeRef col_sums(const NodeRef& a) {
  Matrix out = a->value.colwise().sum();
  return make_node(std::move(out), {a}, [](Node& n) {
    Matrix g(n.parents[0]->rows(), n.parents[0]->cols());
    for (int c = 0; c < g.cols(); ++c) g.col(c).setConstant(n.grad(0, c));
    accumulate(n.parents[0], g);
  });
}

NodeRef row_min(const NodeRef& a) {
  if (a->cols() < 1) throw std::invalid_argument("row_min: empty rows");
  Matrix out(a->rows(), 1);
  std::vector<int> argmin(a->rows());
  for (int r = 0; r < a->rows(); ++r) {
    Eigen::Index c;
    out(r, 0) = a->value.row(r).minCoeff(&c);
    argmin[r] = static_cast<int>(c);
  }
  return make_node(std::move(out), {a}, [argmin](Node& n) {
    Matrix g = Matrix::Zero(n.parents[0]->rows(), n.parents[0]->cols());
    for (int r = 0; r < g.rows(); ++r) g(r, argmin[r]) = n.grad(r, 0);
    accumulate(n.parents[0], g);
  });
}

NodeRef gather_rows(const NodeRef& a, const std::vector<int>& idx) {
  Matrix out(idx.size(), a->cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a->rows()) {
      throw std::invalid_argument("gather_rows: index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = a->value.row(idx[i]);
  }
  return make_node(std::move(out), {a}, [idx](Node& n) {
    Matrix g = Matrix::Zero(n.parents[0]->rows(), n.parents[0]->cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef concat_cols(const NodeRef& a, const NodeRef& b) {
  if (a->rows() != b->rows()) throw std::invalid_argument("concat_cols: row mismatch");
  Matrix out(a->rows(), a->cols() + b->cols());
  out.leftCols(a->cols()) = a->value;
  out.rightCols(b->cols()) = b->value;
  return make_node(std::move(out), {a, b}, [](Node& n) {
    const int ca = n.parents[0]->cols();
    const int cb = n.parents[1]->cols();
    accumulate(n.parents[0], n.grad.leftCols(ca));
    accumulate(n.parents[1], n.grad.rightCols(cb));
  });
}

NodeRef slice_cols(const NodeRef& a, int c0, int c1) {
  if (c0 < 0 || c1 > a->cols() || c0 >= c1) {
    throw std::invalid_argument("slice_cols: bad range");
  }
  Matrix out = a->value.middleCols(c0, c1 - c0);
  return make_node(std::move(out), {a}, [c0, c1](Node& n) {
    Matrix g = Matrix::Zero(n.parents[0]->rows(), n.parents[0]->cols());
    g.middleCols(c0, c1 - c0) = n.grad;
    accumulate(n.parents[0], g);
  });
}

NodeRef segment_max(const NodeRef& a, const std::vector<int>& segment_of_row,
                    int num_segments) {
  if (static_cast<int>(segment_of_row.size()) != a->rows()) {
    throw std::invalid_argument("segment_max: segment map size mismatch");
  }
  Matrix out = Matrix::Constant(num_segments, a->cols(),
                                -std::numeric_limits<double>::infinity());
  std::vector<std::vector<int>> arg(num_segments, std::vector<int>(a->cols(), -1));
  for (int r = 0; r < a->rows(); ++r) {
    const int s = segment_of_row[r];
    if (s < 0 || s >= num_segments) throw std::invalid_argument("segment_max: bad segment id");
    for (int c = 0; c < a->cols(); ++c) {
      if (a->value(r, c) > out(s, c)) {
        out(s, c) = a->value(r, c);
        arg[s][c] = r;
      }
    }
  }
  for (int s = 0; s < num_segments; ++s) {
    if (arg[s][0] < 0) throw std::invalid_argument("segment_max: empty segment");
  }
  return make_node(std::move(out), {a}, [arg](Node& n) {
    Matrix g = Matrix::Zero(n.parents[0]->rows(), n.parents[0]->cols());
    for (size_t s = 0; s < arg.size(); ++s) {
      for (size_t c = 0; c < arg[s].size(); ++c) {
        g(arg[s][c], static_cast<Eigen::Index>(c)) +=
            n.grad(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c));
      }
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef row_l2_normalize(const NodeRef& a, double eps) {
  Matrix out(a->rows(), a->cols());
  std::vector<double> norms(a->rows());
  for (int r = 0; r < a->rows(); ++r) {
    norms[r] = std::max(a->value.row(r).norm(), eps);
    out.row(r) = a->value.row(r) / norms[r];
  }
  return make_node(std::move(out), {a}, [norms](Node& n) {
    Matrix g(n.parents[0]->rows(), n.parents[0]->cols());
    for (int r = 0; r < g.rows(); ++r) {
      const auto y = n.value.row(r);          // normalized row
      const auto gr = n.grad.row(r);
      g.row(r) = (gr - y * gr.dot(y)) / norms[r];
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef layer_norm_rows(const NodeRef& a, double eps) {
  const int cols = a->cols();
  if (cols < 1) throw std::invalid_argument("layer_norm_rows: empty rows");
  Matrix out(a->rows(), cols);
  std::vector<double> inv_sigma(a->rows());
  for (int r = 0; r < a->rows(); ++r) {
    const double mu = a->value.row(r).mean();
    const double var = (a->value.row(r).array() - mu).square().mean();
    inv_sigma[r] = 1.0 / std::sqrt(var + eps);
    out.row(r) = (a->value.row(r).array() - mu) * inv_sigma[r];
  }
  return make_node(std::move(out), {a}, [inv_sigma](Node& n) {
    Matrix g(n.parents[0]->rows(), n.parents[0]->cols());
    for (int r = 0; r < n.rows(); ++r) {
      const auto y = n.value.row(r);
      const auto gr = n.grad.row(r);
      const double mean_g = gr.mean();
      const double mean_gy = gr.cwiseProduct(y).mean();
      g.row(r) = inv_sigma[r] * ((gr.array() - mean_g) - y.array() * mean_gy);
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef clamp_row_norm(const NodeRef& a, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clamp_row_norm: max_norm must be positive");
  Matrix out(a->rows(), a->cols());
  std::vector<double> norms(a->rows());
  for (int r = 0; r < a->rows(); ++r) {
    norms[r] = a->value.row(r).norm();
    out.row(r) = norms[r] > max_norm ? (a->value.row(r) * (max_norm / norms[r])).eval()
                                     : a->value.row(r);
  }
  return make_node(std::move(out), {a}, [norms, max_norm](Node& n) {
    Matrix g(n.parents[0]->rows(), n.parents[0]->cols());
    for (int r = 0; r < g.rows(); ++r) {
      if (norms[r] <= max_norm) {
        g.row(r) = n.grad.row(r);
      } else {
        // d/dx of r0 * x / |x|: (r0/|x|) (I - x x^T / |x|^2).
        const auto x = n.parents[0]->value.row(r);
        const auto gr = n.grad.row(r);
        const double inv = 1.0 / norms[r];
        g.row(r) = max_norm * inv * (gr - x * (gr.dot(x) * inv * inv));
      }
    }
    accumulate(n.parents[0], g);
  });
}

NodeRef pairwise_sqdist(const NodeRef& a, const NodeRef& b) {
  if (a->cols() != b->cols()) throw std::invalid_argument("pairwise_sqdist: dim mismatch");
  Matrix out(a->rows(), b->rows());
  for (int i = 0; i < a->rows(); ++i) {
    for (int j = 0; j < b->rows(); ++j) {
      out(i, j) = (a->value.row(i) - b->value.row(j)).squaredNorm();
    }
  }
  return make_node(std::move(out), {a, b}, [](Node& n) {
    const Matrix& av = n.parents[0]->value;
    const Matrix& bv = n.parents[1]->value;
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    Matrix gb = Matrix::Zero(bv.rows(), bv.cols());
    for (int i = 0; i < av.rows(); ++i) {
      for (int j = 0; j < bv.rows(); ++j) {
        const double w = 2.0 * n.grad(i, j);
        if (w == 0.0) continue;
        const auto diff = (av.row(i) - bv.row(j)).eval();
        ga.row(i) += w * diff;
        gb.row(j) -= w * diff;
      }
    }
    accumulate(n.parents[0], ga);
    accumulate(n.parents[1], gb);
  });
}

NodeRef apply_rotary_rows(const NodeRef& vecs, const NodeRef& angles) {
  if (vecs->cols() % 2 != 0 || vecs->cols() != 2 * angles->cols() ||
      vecs->rows() != angles->rows()) {
    throw std::invalid_argument("apply_rotary_rows: shape mismatch");
  }
  const int half = angles->cols();
  Matrix out(vecs->rows(), vecs->cols());
  for (int r = 0; r < vecs->rows(); ++r) {
    for (int k = 0; k < half; ++k) {
      const double c = std::cos(angles->value(r, k));
      const double s = std::sin(angles->value(r, k));
      const double u = vecs->value(r, 2 * k);
      const double v = vecs->value(r, 2 * k + 1);
      out(r, 2 * k) = u * c - v * s;
      out(r, 2 * k + 1) = u * s + v * c;
    }
  }
  return make_node(std::move(out), {vecs, angles}, [half](Node& n) {
    const Matrix& xv = n.parents[0]->value;
    const Matrix& th = n.parents[1]->value;
    Matrix gx = Matrix::Zero(xv.rows(), xv.cols());
    Matrix gt = Matrix::Zero(th.rows(), th.cols());
    for (int r = 0; r < xv.rows(); ++r) {
      for (int k = 0; k < half; ++k) {
        const double c = std::cos(th(r, k));
        const double s = std::sin(th(r, k));
        const double u = xv(r, 2 * k);
        const double v = xv(r, 2 * k + 1);
        const double gu = n.grad(r, 2 * k);
        const double gv = n.grad(r, 2 * k + 1);
        gx(r, 2 * k) = gu * c + gv * s;
        gx(r, 2 * k + 1) = -gu * s + gv * c;
        gt(r, k) = gu * (-u * s - v * c) + gv * (u * c - v * s);
      }
    }
    accumulate(n.parents[0], gx);
    accumulate(n.parents[1], gt);
  });
}

NodeRef augment_dustbin(const NodeRef& scores, const NodeRef& alpha) {
  if (alpha->rows() != 1 || alpha->cols() != 1) {
    throw std::invalid_argument("augment_dustbin: alpha must be 1 x 1");
  }
  const int m = scores->rows();
  const int n = scores->cols();
  Matrix out = Matrix::Constant(m + 1, n + 1, alpha->value(0, 0));
  out.topLeftCorner(m, n) = scores->value;
  return make_node(std::move(out), {scores, alpha}, [m, n](Node& ndn) {
    accumulate(ndn.parents[0], ndn.grad.topLeftCorner(m, n));
    Matrix ga(1, 1);
    ga(0, 0) = ndn.grad.row(m).sum() + ndn.grad.col(n).sum() - ndn.grad(m, n);
    accumulate(ndn.parents[1], ga);
  });
}

void backward(const NodeRef& output) {
  if (output->rows() != 1 || output->cols() != 1) {
    throw std::invalid_argument("backward: output must be a 1 x 1 scalar node");
  }
  output->grad_ref()(0, 0) += 1.0;

  // Iterative post-order DFS gives a topological order; walking it in
  // reverse visits every node exactly once before any of its parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(output.get(), 0);
  visited.insert(output.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad_set) node->backward_fn(*node);
  }
}

double finite_diff_check(
    const std::function<NodeRef(const std::vector<NodeRef>&)>& build,
    const std::vector<Matrix>& params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

  auto evaluate = [&](const std::vector<Matrix>& values) {
    std::vector<NodeRef> leaves;
    leaves.reserve(values.size());
    for (const auto& v : values) leaves.push_back(leaf(v));
    NodeRef out = build(leaves);
    if (out->rows() != 1 || out->cols() != 1) {
      throw std::invalid_argument("finite_diff_check: builder must return a scalar");
    }
    if (!std::isfinite(out->value(0, 0))) {
      throw EvaluationFailure("finite_diff_check: non-finite objective");
    }
    return std::make_pair(out, std::move(leaves));
  };

  auto [out, leaves] = evaluate(params);
  backward(out);
  std::vector<Matrix> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(l->grad_ref());

  double max_err = 0.0;
  std::vector<Matrix> work = params;
  for (size_t t = 0; t < work.size(); ++t) {
    for (Eigen::Index i = 0; i < work[t].size(); ++i) {
      const double saved = work[t](i);
      work[t](i) = saved + step;
      const double fp = evaluate(work).first->value(0, 0);
      work[t](i) = saved - step;
      const double fm = evaluate(work).first->value(0, 0);
      work[t](i) = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[t](i);
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace rdm::numerics
