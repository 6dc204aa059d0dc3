#include "rdm/matching.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <stdexcept>

namespace rdm::matching {

namespace {

using numerics::add_col_vec;
using numerics::add_row_vec;
using numerics::add_scalar;
using numerics::constant;
using numerics::exp_;
using numerics::leaf;
using numerics::logsumexp_cols;
using numerics::logsumexp_rows;
using numerics::matmul;
using numerics::neg;
using numerics::row_l2_normalize;
using numerics::scale;
using numerics::sub;
using numerics::transpose;

}  // namespace

NodeRef gaussian_correlation_graph(const NodeRef& ha, const NodeRef& hb) {
  if (ha->cols() != hb->cols()) {
    throw std::invalid_argument("gaussian_correlation: feature dim mismatch");
  }
  for (int r = 0; r < ha->rows(); ++r) {
    if (ha->value.row(r).norm() < 1e-12) {
      throw std::invalid_argument("gaussian_correlation: zero-norm feature row");
    }
  }
  for (int r = 0; r < hb->rows(); ++r) {
    if (hb->value.row(r).norm() < 1e-12) {
      throw std::invalid_argument("gaussian_correlation: zero-norm feature row");
    }
  }
  NodeRef na = row_l2_normalize(ha);
  NodeRef nb = row_l2_normalize(hb);
  // On unit rows |a-b|^2 = 2 - 2 a.b, so c = exp(2 a.b - 2).
  NodeRef dots = matmul(na, transpose(nb));
  return exp_(add_scalar(scale(dots, 2.0), -2.0));
}

Matrix gaussian_correlation(const Matrix& ha, const Matrix& hb) {
  return gaussian_correlation_graph(constant(ha), constant(hb))->value;
}

Matrix dual_normalize(const Matrix& c) {
  if ((c.array() < 0.0).any()) {
    throw std::invalid_argument("dual_normalize: negative entries");
  }
  Eigen::VectorXd row_sums = c.rowwise().sum();
  Eigen::RowVectorXd col_sums = c.colwise().sum();
  if ((row_sums.array() <= 0.0).any() || (col_sums.array() <= 0.0).any()) {
    throw std::invalid_argument("dual_normalize: zero row or column sum");
  }
  Matrix out(c.rows(), c.cols());
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      out(i, j) = (c(i, j) / row_sums(i)) * (c(i, j) / col_sums(j));
    }
  }
  return out;
}

CoarseCorrespondences topk_correspondences(const Matrix& scores, int n_c) {
  if (n_c < 1) throw std::invalid_argument("topk_correspondences: n_c must be >= 1");
  CoarseCorrespondences all;
  all.reserve(static_cast<size_t>(scores.rows()) * scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      all.push_back({static_cast<int>(i), static_cast<int>(j), scores(i, j)});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const CoarseMatch& x, const CoarseMatch& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  if (static_cast<int>(all.size()) > n_c) all.resize(n_c);
  return all;
}

NodeRef patch_score_matrix_graph(const NodeRef& fa, const NodeRef& fb) {
  if (fa->cols() != fb->cols()) {
    throw std::invalid_argument("patch_score_matrix: feature dim mismatch");
  }
  return scale(matmul(fa, transpose(fb)), 1.0 / std::sqrt(static_cast<double>(fa->cols())));
}

Matrix patch_score_matrix(const Matrix& fa, const Matrix& fb) {
  return patch_score_matrix_graph(constant(fa), constant(fb))->value;
}

NodeRef sinkhorn_with_dustbin_graph(const NodeRef& scores, const NodeRef& alpha,
                                    int iters) {
  if (iters < 1) throw std::invalid_argument("sinkhorn: iters must be >= 1");
  if (!numerics::all_finite(scores->value)) {
    throw std::invalid_argument("sinkhorn: non-finite scores");
  }
  const int m = scores->rows();
  const int n = scores->cols();
  NodeRef s = numerics::augment_dustbin(scores, alpha);

  // log marginals: interior mass 1 per point, the dustbin absorbs the rest.
  Matrix log_a = Matrix::Zero(m + 1, 1);
  log_a(m, 0) = std::log(static_cast<double>(n));
  Matrix log_b = Matrix::Zero(1, n + 1);
  log_b(0, n) = std::log(static_cast<double>(m));
  NodeRef la = constant(log_a);
  NodeRef lb = constant(log_b);

  NodeRef u = constant(Matrix::Zero(m + 1, 1));
  NodeRef v = constant(Matrix::Zero(1, n + 1));
  for (int it = 0; it < iters; ++it) {
    u = sub(la, logsumexp_rows(add_row_vec(s, v)));
    v = sub(lb, logsumexp_cols(add_col_vec(s, u)));
  }
  return exp_(add_col_vec(add_row_vec(s, v), u));
}

AssignmentMatrix sinkhorn_with_dustbin(const Matrix& scores, double alpha, int iters) {
  Matrix a(1, 1);
  a(0, 0) = alpha;
  NodeRef z = sinkhorn_with_dustbin_graph(constant(scores), constant(a), iters);
  return {z->value, static_cast<int>(scores.rows()), static_cast<int>(scores.cols())};
}

DenseCorrespondences extract_dense_matches(const AssignmentMatrix& z,
                                           const std::vector<int>& patch_a,
                                           const std::vector<int>& patch_b,
                                           int patch_id) {
  const int m = z.interior_rows;
  const int n = z.interior_cols;
  if (z.transport.rows() != m + 1 || z.transport.cols() != n + 1) {
    throw std::invalid_argument("extract_dense_matches: transport shape mismatch");
  }
  if (static_cast<int>(patch_a.size()) != m || static_cast<int>(patch_b.size()) != n) {
    throw std::invalid_argument("extract_dense_matches: patch size mismatch");
  }
  DenseCorrespondences out;
  std::set<std::pair<int, int>> seen;
  auto emit = [&](int r, int c) {
    const auto key = std::make_pair(patch_a[r], patch_b[c]);
    if (seen.insert(key).second) {
      out.matches.push_back({key.first, key.second, z.transport(r, c), patch_id});
    }
  };
  // Row side first, then column side; dustbin argmax means unmatched.
  for (int r = 0; r < m; ++r) {
    Eigen::Index c;
    z.transport.row(r).maxCoeff(&c);
    if (c < n) emit(r, static_cast<int>(c));
  }
  for (int c = 0; c < n; ++c) {
    Eigen::Index r;
    z.transport.col(c).maxCoeff(&r);
    if (r < m) emit(static_cast<int>(r), c);
  }
  return out;
}

MatchLift lift_match(const MatchWeights& w, std::vector<NodeRef>* leaves,
                     std::vector<std::string>* names) {
  MatchLift lift;
  lift.detection = superpoint::lift_detection(w.detection, leaves, names);
  lift.matcher = roformer::lift_attention(w.matcher, leaves, names, "roformer2");
  lift.dustbin_alpha = leaves ? leaf(w.dustbin_alpha) : constant(w.dustbin_alpha);
  if (leaves) leaves->push_back(lift.dustbin_alpha);
  if (names) names->push_back("matching.dustbin_alpha");
  return lift;
}

MatchGraphResult match_pair_graph(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                  const MatchLift& lift, const MatchConfig& cfg,
                                  std::mt19937_64* subsample_rng) {
  if (cloud_a.points.empty() || cloud_b.points.empty()) {
    throw std::invalid_argument("match_pair: empty cloud");
  }
  MatchGraphResult res;
  res.detection = superpoint::detect_superpoints_graph(cloud_a, cloud_b, lift.detection,
                                                       cfg.detection);

  auto pos_mat = [](const std::vector<geometry::Point3>& pts) {
    Matrix m(pts.size(), 3);
    for (size_t i = 0; i < pts.size(); ++i) {
      m(static_cast<Eigen::Index>(i), 0) = pts[i].x;
      m(static_cast<Eigen::Index>(i), 1) = pts[i].y;
      m(static_cast<Eigen::Index>(i), 2) = pts[i].z;
    }
    return m;
  };

  // Re-enhance the shifted superpoints with the second attention stack.
  auto [ha, hb] = roformer::stack_forward(
      lift.matcher, res.detection.sp_feat_a,
      constant(pos_mat(res.detection.sp_a.superpoints)), res.detection.sp_feat_b,
      constant(pos_mat(res.detection.sp_b.superpoints)), cfg.detection.kind);
  res.coarse_feat_a = ha;
  res.coarse_feat_b = hb;

  NodeRef corr = gaussian_correlation_graph(ha, hb);
  res.coarse = topk_correspondences(dual_normalize(corr->value), cfg.num_coarse);

  const auto& part_a = res.detection.part_a.patches;
  const auto& part_b = res.detection.part_b.patches;
  for (size_t ci = 0; ci < res.coarse.size(); ++ci) {
    const CoarseMatch& cm = res.coarse[ci];
    std::vector<int> pa = part_a[cm.a];
    std::vector<int> pb = part_b[cm.b];
    if (static_cast<int>(pa.size()) < cfg.min_patch_points ||
        static_cast<int>(pb.size()) < cfg.min_patch_points) {
      continue;
    }
    if (cfg.max_patch_points > 0 && subsample_rng) {
      auto cap = [&](std::vector<int>& v) {
        if (static_cast<int>(v.size()) > cfg.max_patch_points) {
          std::shuffle(v.begin(), v.end(), *subsample_rng);
          v.resize(cfg.max_patch_points);
          std::sort(v.begin(), v.end());
        }
      };
      cap(pa);
      cap(pb);
    }
    NodeRef fa = numerics::gather_rows(res.detection.enc_a.fine_features, pa);
    NodeRef fb = numerics::gather_rows(res.detection.enc_b.fine_features, pb);
    NodeRef scores = patch_score_matrix_graph(fa, fb);
    NodeRef z = sinkhorn_with_dustbin_graph(scores, lift.dustbin_alpha, cfg.sinkhorn_iters);
    PatchAssignment pa_out;
    pa_out.coarse_index = static_cast<int>(ci);
    pa_out.points_a = std::move(pa);
    pa_out.points_b = std::move(pb);
    pa_out.transport = z;
    res.patches.push_back(std::move(pa_out));
  }

  // Deterministic union: patch order, row side before column side, dedup on
  // the global (a, b) pair.
  std::set<std::pair<int, int>> seen;
  for (const auto& p : res.patches) {
    AssignmentMatrix z{p.transport->value, static_cast<int>(p.points_a.size()),
                       static_cast<int>(p.points_b.size())};
    DenseCorrespondences local =
        extract_dense_matches(z, p.points_a, p.points_b, p.coarse_index);
    for (const auto& m : local.matches) {
      if (seen.insert({m.a, m.b}).second) res.dense.matches.push_back(m);
    }
  }
  return res;
}

std::pair<CoarseCorrespondences, DenseCorrespondences> match_pair(
    const PointCloud& cloud_a, const PointCloud& cloud_b, const MatchWeights& w,
    const MatchConfig& cfg) {
  MatchGraphResult res = match_pair_graph(cloud_a, cloud_b, lift_match(w), cfg);
  return {std::move(res.coarse), std::move(res.dense)};
}

void write_correspondences(std::ostream& os, const CoarseCorrespondences& coarse,
                           const DenseCorrespondences& dense) {
  os << "# coarse " << coarse.size() << "\n";
  for (const auto& c : coarse) os << c.a << " " << c.b << " " << c.score << "\n";
  os << "# dense " << dense.matches.size() << "\n";
  for (const auto& d : dense.matches) os << d.a << " " << d.b << " " << d.score << "\n";
}

}  // namespace rdm::matching
