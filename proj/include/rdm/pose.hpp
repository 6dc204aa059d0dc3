#pragma once

#include <iosfwd>
#include <vector>

#include "rdm/geometry.hpp"
#include "rdm/matching.hpp"

namespace rdm::pose {

using geometry::Point3;
using geometry::PointCloud;
using geometry::RigidTransform;

struct WeightedCorrespondence {
  Point3 a;
  Point3 b;
  double weight = 1.0;
};

struct PoseEstimate {
  RigidTransform transform;
  int inlier_count = 0;
  double inlier_threshold = 0.0;
  bool converged = false;
};

// Closed-form minimizer of sum w_k |R a_k + t - b_k|^2 with det(R) = +1
// enforced by sign correction on the smallest singular vector.
// Throws InsufficientDataError below 3 correspondences and
// DegenerateConfigurationError for collinear or zero-weight input.
RigidTransform weighted_svd(const std::vector<WeightedCorrespondence>& corrs);

// Fixed-seed RANSAC: 3-point samples, consensus by residual threshold,
// final refit on the best consensus set. Bit-reproducible for a given seed.
PoseEstimate ransac_registration(const matching::DenseCorrespondences& corrs,
                                 const PointCloud& cloud_a, const PointCloud& cloud_b,
                                 int iters, double inlier_threshold, uint64_t seed);

// Local-to-global registration: per-patch weighted SVD candidates scored by
// global inlier count, then refinement rounds refitting on the current global
// inliers. A refinement step that would reduce the inlier count is rejected,
// so the count is non-decreasing across rounds.
PoseEstimate local_to_global_registration(const matching::DenseCorrespondences& corrs,
                                          const PointCloud& cloud_a,
                                          const PointCloud& cloud_b,
                                          double inlier_threshold, int refine_rounds);

// One line of 12 numbers: row-major 3x4 [R|t].
void write_pose_line(std::ostream& os, const RigidTransform& t);

}  // namespace rdm::pose
