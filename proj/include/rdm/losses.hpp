#pragma once

#include <vector>

#include "rdm/autodiff.hpp"
#include "rdm/geometry.hpp"

namespace rdm::losses {

using geometry::PatchPartition;
using geometry::PointCloud;
using geometry::RigidTransform;
using numerics::Matrix;
using numerics::NodeRef;

// Ground-truth targets for one cloud pair: the patch overlap-ratio matrix and
// the data needed to build per patch-pair match matrices.
struct GroundTruthSupervision {
  RigidTransform gt;
  double tau = 0.6;
  Matrix overlap;  // |patches A| x |patches B|, entries in [0, 1]
};

// overlap(i, j) = fraction of fine points in patch i of A whose nearest
// point in patch j of B lies within tau after applying gt.
GroundTruthSupervision build_supervision(const std::vector<geometry::Point3>& fine_a,
                                         const std::vector<geometry::Point3>& fine_b,
                                         const PatchPartition& part_a,
                                         const PatchPartition& part_b,
                                         const RigidTransform& gt, double tau);

// Mutual-nearest one-to-one match matrix over two point index sets, dustbin
// row/column included: interior (m, n) is 1 iff the points are each other's
// nearest neighbour within tau; unmatched points mark their dustbin entry.
Matrix gt_match_matrix(const std::vector<geometry::Point3>& fine_a,
                       const std::vector<geometry::Point3>& fine_b,
                       const std::vector<int>& points_a, const std::vector<int>& points_b,
                       const RigidTransform& gt, double tau);

// Symmetric chamfer objectives over proposal coordinates:
//   first  — squared nearest-neighbour distances between the two proposal
//            sets compared in the gt-aligned frame;
//   second — squared distance from each proposal to its nearest raw
//            measurement point in its own cloud.
std::pair<NodeRef, NodeRef> superpoint_chamfer_losses(const NodeRef& proposals_a,
                                                      const NodeRef& proposals_b,
                                                      const PointCloud& cloud_a,
                                                      const PointCloud& cloud_b,
                                                      const RigidTransform& gt);

struct CircleLossParams {
  double pos_margin = 0.1;
  double neg_margin = 1.4;
  double gamma = 24.0;
  double pos_overlap = 0.1;  // minimum overlap for the positive set
};

struct CircleLossResult {
  NodeRef value;        // 1 x 1
  bool degenerate = false;  // no anchor patches on either side
};

// Overlap-aware circle loss on L2-normalized coarse features, averaged over
// A-side and B-side anchors. Feature distances enter through signed-square
// margins so the loss is monotone along every positive and negative distance
// and vanishes as all margins are satisfied.
CircleLossResult overlap_circle_loss(const NodeRef& feat_a, const NodeRef& feat_b,
                                     const GroundTruthSupervision& supervision,
                                     const CircleLossParams& params);

// Gap objective on one dustbin-augmented assignment: drives the true match of
// every row/column above its competitors by the margin eta, inside a log.
NodeRef gap_loss(const NodeRef& transport, const Matrix& gt_matches, double eta);

struct LossBreakdown {
  NodeRef ls1, ls2, lc, lf;
  NodeRef total;
  double ls1_value = 0.0, ls2_value = 0.0, lc_value = 0.0, lf_value = 0.0,
         total_value = 0.0;
};

// Unit-weight sum of the four components.
LossBreakdown total_loss(const NodeRef& ls1, const NodeRef& ls2, const NodeRef& lc,
                         const NodeRef& lf);

}  // namespace rdm::losses
