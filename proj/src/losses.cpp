#include "rdm/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "rdm/errors.hpp"

namespace rdm::losses {

namespace {

using geometry::Point3;
using numerics::add;
using numerics::add_col_vec;
using numerics::add_const;
using numerics::add_row_vec;
using numerics::add_scalar;
using numerics::col_sums;
using numerics::constant;
using numerics::log_;
using numerics::logsumexp_rows;
using numerics::matmul;
using numerics::mul_const;
using numerics::neg;
using numerics::pairwise_sqdist;
using numerics::relu;
using numerics::row_l2_normalize;
using numerics::row_min;
using numerics::row_sums;
using numerics::scale;
using numerics::signed_square;
using numerics::softplus;
using numerics::sqrt_clamped;
using numerics::sum_all;
using numerics::transpose;

constexpr double kMaskedOut = -1e30;

Matrix points_matrix(const std::vector<Point3>& pts) {
  Matrix m(pts.size(), 3);
  for (size_t i = 0; i < pts.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = pts[i].x;
    m(static_cast<Eigen::Index>(i), 1) = pts[i].y;
    m(static_cast<Eigen::Index>(i), 2) = pts[i].z;
  }
  return m;
}

NodeRef align_rows(const NodeRef& points, const RigidTransform& gt) {
  Matrix rt = gt.rotation.transpose();
  Matrix tr(1, 3);
  tr << gt.translation.x(), gt.translation.y(), gt.translation.z();
  return add_row_vec(matmul(points, constant(std::move(rt))), constant(std::move(tr)));
}

}  // namespace

GroundTruthSupervision build_supervision(const std::vector<Point3>& fine_a,
                                         const std::vector<Point3>& fine_b,
                                         const PatchPartition& part_a,
                                         const PatchPartition& part_b,
                                         const RigidTransform& gt, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("build_supervision: tau must be positive");
  GroundTruthSupervision sup;
  sup.gt = gt;
  sup.tau = tau;
  const int na = static_cast<int>(part_a.patches.size());
  const int nb = static_cast<int>(part_b.patches.size());
  sup.overlap = Matrix::Zero(na, nb);
  if (fine_b.empty()) return sup;

  geometry::HashGrid grid(fine_b, tau);
  std::vector<int> hits;
  std::vector<int> patches_hit;
  for (int i = 0; i < na; ++i) {
    for (int a_idx : part_a.patches[i]) {
      grid.query_radius(gt(fine_a[a_idx]), tau, hits);
      patches_hit.clear();
      for (int b_idx : hits) {
        const int pj = part_b.patch_of_point[b_idx];
        bool seen = false;
        for (int p : patches_hit) {
          if (p == pj) {
            seen = true;
            break;
          }
        }
        if (!seen) patches_hit.push_back(pj);
      }
      for (int pj : patches_hit) sup.overlap(i, pj) += 1.0;
    }
    if (!part_a.patches[i].empty()) {
      sup.overlap.row(i) /= static_cast<double>(part_a.patches[i].size());
    }
  }
  return sup;
}

Matrix gt_match_matrix(const std::vector<Point3>& fine_a,
                       const std::vector<Point3>& fine_b,
                       const std::vector<int>& points_a, const std::vector<int>& points_b,
                       const RigidTransform& gt, double tau) {
  const int m = static_cast<int>(points_a.size());
  const int n = static_cast<int>(points_b.size());
  Matrix mat = Matrix::Zero(m + 1, n + 1);
  const double t2 = tau * tau;

  std::vector<Eigen::Vector3d> a_pts(m);
  for (int i = 0; i < m; ++i) a_pts[i] = gt(fine_a[points_a[i]].vec());
  std::vector<Eigen::Vector3d> b_pts(n);
  for (int j = 0; j < n; ++j) b_pts[j] = fine_b[points_b[j]].vec();

  std::vector<int> nearest_of_a(m, -1), nearest_of_b(n, -1);
  for (int i = 0; i < m; ++i) {
    double best = t2;
    for (int j = 0; j < n; ++j) {
      const double d = (a_pts[i] - b_pts[j]).squaredNorm();
      if (d < best || (d == best && nearest_of_a[i] == -1)) {
        best = d;
        nearest_of_a[i] = j;
      }
    }
  }
  for (int j = 0; j < n; ++j) {
    double best = t2;
    for (int i = 0; i < m; ++i) {
      const double d = (a_pts[i] - b_pts[j]).squaredNorm();
      if (d < best || (d == best && nearest_of_b[j] == -1)) {
        best = d;
        nearest_of_b[j] = i;
      }
    }
  }
  for (int i = 0; i < m; ++i) {
    const int j = nearest_of_a[i];
    if (j >= 0 && nearest_of_b[j] == i) {
      mat(i, j) = 1.0;
    } else {
      mat(i, n) = 1.0;
    }
  }
  for (int j = 0; j < n; ++j) {
    const int i = nearest_of_b[j];
    if (!(i >= 0 && nearest_of_a[i] == j)) mat(m, j) = 1.0;
  }
  return mat;
}

std::pair<NodeRef, NodeRef> superpoint_chamfer_losses(const NodeRef& proposals_a,
                                                      const NodeRef& proposals_b,
                                                      const PointCloud& cloud_a,
                                                      const PointCloud& cloud_b,
                                                      const RigidTransform& gt) {
  if (proposals_a->rows() == 0 || proposals_b->rows() == 0) {
    throw std::invalid_argument("superpoint_chamfer_losses: empty proposal set");
  }
  if (cloud_a.points.empty() || cloud_b.points.empty()) {
    throw std::invalid_argument("superpoint_chamfer_losses: empty cloud");
  }
  // Proposals are only comparable across clouds in a common frame.
  NodeRef aligned_a = align_rows(proposals_a, gt);
  NodeRef cross = pairwise_sqdist(aligned_a, proposals_b);
  NodeRef ls1 = add(sum_all(row_min(cross)), sum_all(row_min(transpose(cross))));

  NodeRef da = pairwise_sqdist(proposals_a, constant(points_matrix(cloud_a.points)));
  NodeRef db = pairwise_sqdist(proposals_b, constant(points_matrix(cloud_b.points)));
  NodeRef ls2 = add(sum_all(row_min(da)), sum_all(row_min(db)));
  return {ls1, ls2};
}

namespace {

// One side of the circle loss: anchors are rows of `overlap` with at least
// one positive. Exponents use signed squares of the margin violations, so
// pulling positives in / pushing negatives out can only lower the loss.
std::pair<NodeRef, bool> circle_loss_side(const NodeRef& feat_anchor,
                                          const NodeRef& feat_other,
                                          const Matrix& overlap,
                                          const CircleLossParams& p) {
  const int rows = static_cast<int>(overlap.rows());
  const int cols = static_cast<int>(overlap.cols());
  Matrix pos_mask = Matrix::Zero(rows, cols);
  Matrix neg_mask = Matrix::Zero(rows, cols);
  Matrix anchor = Matrix::Zero(rows, 1);
  int anchor_count = 0;
  for (int i = 0; i < rows; ++i) {
    bool has_pos = false;
    for (int j = 0; j < cols; ++j) {
      if (overlap(i, j) >= p.pos_overlap) {
        pos_mask(i, j) = 1.0;
        has_pos = true;
      } else if (overlap(i, j) == 0.0) {
        neg_mask(i, j) = 1.0;
      }
    }
    if (has_pos) {
      anchor(i, 0) = 1.0;
      ++anchor_count;
    }
  }
  if (anchor_count == 0) {
    return {constant(Matrix::Zero(1, 1)), true};
  }

  NodeRef na = row_l2_normalize(feat_anchor);
  NodeRef nb = row_l2_normalize(feat_other);
  NodeRef dist = sqrt_clamped(pairwise_sqdist(na, nb));

  NodeRef pos_exp = mul_const(signed_square(add_scalar(dist, -p.pos_margin)),
                              p.gamma * overlap);
  NodeRef neg_exp = scale(signed_square(add_scalar(dist, -p.neg_margin)), -p.gamma);

  auto masked = [&](const NodeRef& e, const Matrix& mask) {
    Matrix off = (Matrix::Ones(rows, cols) - mask) * kMaskedOut;
    return add_const(mul_const(e, mask), off);
  };
  NodeRef lse_pos = logsumexp_rows(masked(pos_exp, pos_mask));
  NodeRef lse_neg = logsumexp_rows(masked(neg_exp, neg_mask));
  NodeRef per_anchor = softplus(add(lse_pos, lse_neg));
  NodeRef total = sum_all(mul_const(per_anchor, anchor));
  return {scale(total, 1.0 / static_cast<double>(anchor_count)), false};
}

}  // namespace

CircleLossResult overlap_circle_loss(const NodeRef& feat_a, const NodeRef& feat_b,
                                     const GroundTruthSupervision& supervision,
                                     const CircleLossParams& params) {
  if (feat_a->rows() != supervision.overlap.rows() ||
      feat_b->rows() != supervision.overlap.cols()) {
    throw std::invalid_argument("overlap_circle_loss: feature/overlap shape mismatch");
  }
  auto [la, da] = circle_loss_side(feat_a, feat_b, supervision.overlap, params);
  Matrix overlap_t = supervision.overlap.transpose();
  auto [lb, db] = circle_loss_side(feat_b, feat_a, overlap_t, params);
  CircleLossResult out;
  out.value = scale(add(la, lb), 0.5);
  out.degenerate = da && db;
  return out;
}

NodeRef gap_loss(const NodeRef& transport, const Matrix& gt_matches, double eta) {
  const int rows = static_cast<int>(transport->rows());
  const int cols = static_cast<int>(transport->cols());
  if (gt_matches.rows() != rows || gt_matches.cols() != cols || rows < 2 || cols < 2) {
    throw std::invalid_argument("gap_loss: transport and supervision must conform");
  }
  const int m = rows - 1;
  const int n = cols - 1;
  for (int r = 0; r < m; ++r) {
    if (std::abs(gt_matches.row(r).sum() - 1.0) > 1e-12) {
      throw InvalidSupervisionError("gap_loss: interior row without exactly one match");
    }
  }
  for (int c = 0; c < n; ++c) {
    if (std::abs(gt_matches.col(c).sum() - 1.0) > 1e-12) {
      throw InvalidSupervisionError("gap_loss: interior column without exactly one match");
    }
  }

  Matrix interior_rows_mask = Matrix::Zero(rows, 1);
  for (int r = 0; r < m; ++r) interior_rows_mask(r, 0) = 1.0;
  Matrix interior_cols_mask = Matrix::Zero(1, cols);
  for (int c = 0; c < n; ++c) interior_cols_mask(0, c) = 1.0;

  NodeRef picked = mul_const(transport, gt_matches);

  // Row side: hinge of (Z - r + eta) summed over all columns, plus one per
  // column, inside a log; interior rows only.
  NodeRef r_vec = row_sums(picked);
  NodeRef row_hinges = relu(add_scalar(add_col_vec(transport, neg(r_vec)), eta));
  NodeRef row_terms = log_(add_scalar(row_sums(row_hinges), static_cast<double>(cols)));
  NodeRef row_part = scale(sum_all(mul_const(row_terms, interior_rows_mask)),
                           1.0 / static_cast<double>(m));

  NodeRef c_vec = col_sums(picked);
  NodeRef col_hinges = relu(add_scalar(add_row_vec(transport, neg(c_vec)), eta));
  NodeRef col_terms = log_(add_scalar(col_sums(col_hinges), static_cast<double>(rows)));
  NodeRef col_part = scale(sum_all(mul_const(col_terms, interior_cols_mask)),
                           1.0 / static_cast<double>(n));

  return add(row_part, col_part);
}

LossBreakdown total_loss(const NodeRef& ls1, const NodeRef& ls2, const NodeRef& lc,
                         const NodeRef& lf) {
  LossBreakdown out;
  out.ls1 = ls1;
  out.ls2 = ls2;
  out.lc = lc;
  out.lf = lf;
  out.total = add(add(ls1, ls2), add(lc, lf));
  out.ls1_value = ls1->value(0, 0);
  out.ls2_value = ls2->value(0, 0);
  out.lc_value = lc->value(0, 0);
  out.lf_value = lf->value(0, 0);
  out.total_value = out.total->value(0, 0);
  return out;
}

}  // namespace rdm::losses
