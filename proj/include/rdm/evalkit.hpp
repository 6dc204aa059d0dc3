#pragma once

#include <iosfwd>
#include <vector>

#include "rdm/geometry.hpp"
#include "rdm/matching.hpp"

namespace rdm::evalkit {

using geometry::PointCloud;
using geometry::RigidTransform;

struct PairResult {
  double inlier_ratio = 0.0;
  double rre_deg = 0.0;
  double rte_m = 0.0;
  bool registered = false;
};

struct TrajectoryStats {
  double rot_rmse_deg = 0.0, rot_mae_deg = 0.0, rot_std_deg = 0.0;
  double trans_rmse_cm = 0.0, trans_mae_cm = 0.0, trans_std_cm = 0.0;
};

// Fraction of correspondences with |gt(a) - b| <= residual_threshold.
double inlier_ratio(const matching::DenseCorrespondences& corrs,
                    const PointCloud& cloud_a, const PointCloud& cloud_b,
                    const RigidTransform& gt, double residual_threshold);

// Fraction of pairs with inlier ratio strictly above the threshold.
double feature_match_recall(const std::vector<double>& pair_irs, double ir_threshold);

// (rre degrees, rte meters): geodesic rotation distance and Euclidean
// translation distance.
std::pair<double, double> relative_errors(const RigidTransform& est,
                                          const RigidTransform& gt);

// Fraction of pairs with rre <= rot_thr and rte <= trans_thr.
double registration_recall(const std::vector<PairResult>& results, double rot_thr_deg,
                           double trans_thr_m);

// Absolute pose k = relative_1 ∘ ... ∘ relative_k, starting from identity.
std::vector<RigidTransform> chain_trajectory(const std::vector<RigidTransform>& relatives);

TrajectoryStats trajectory_stats(const std::vector<RigidTransform>& est,
                                 const std::vector<RigidTransform>& gt);

// CSV with one row per pair: pair_id,ir,rre_deg,rte_m,registered.
void write_pair_report(std::ostream& os, const std::vector<PairResult>& results);
// Key-value summary block.
void write_summary(std::ostream& os, const std::vector<PairResult>& results,
                   double fmr_threshold, double rot_thr_deg, double trans_thr_m,
                   int failures);
// Recall sweep holding the other threshold at its default:
// kind,threshold,recall rows for rotation and translation sweeps.
void write_threshold_sweep(std::ostream& os, const std::vector<PairResult>& results,
                           const std::vector<double>& rot_thresholds_deg,
                           const std::vector<double>& trans_thresholds_m,
                           double default_rot_deg, double default_trans_m);

}  // namespace rdm::evalkit
