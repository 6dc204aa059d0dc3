#include "rdm/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "rdm/errors.hpp"

namespace rdm::evalkit {

double inlier_ratio(const matching::DenseCorrespondences& corrs,
                    const PointCloud& cloud_a, const PointCloud& cloud_b,
                    const RigidTransform& gt, double residual_threshold) {
  if (corrs.matches.empty()) {
    throw UndefinedMetricError("inlier_ratio: no correspondences");
  }
  const double t2 = residual_threshold * residual_threshold;
  int inliers = 0;
  for (const auto& m : corrs.matches) {
    const Eigen::Vector3d r = gt(cloud_a.points[m.a].vec()) - cloud_b.points[m.b].vec();
    if (r.squaredNorm() <= t2) ++inliers;
  }
  return static_cast<double>(inliers) / static_cast<double>(corrs.matches.size());
}

double feature_match_recall(const std::vector<double>& pair_irs, double ir_threshold) {
  if (pair_irs.empty()) throw UndefinedMetricError("feature_match_recall: empty input");
  int hits = 0;
  for (double ir : pair_irs) {
    if (ir > ir_threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pair_irs.size());
}

std::pair<double, double> relative_errors(const RigidTransform& est,
                                          const RigidTransform& gt) {
  const Eigen::Matrix3d rel = gt.rotation.transpose() * est.rotation;
  // Geodesic angle arccos((trace - 1) / 2), evaluated through atan2 of the
  // skew part so near-zero angles keep full precision instead of saturating
  // at the arccos conditioning floor.
  const Eigen::Vector3d axial(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0),
                              rel(1, 0) - rel(0, 1));
  const double cos_term = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double rre = std::atan2(0.5 * axial.norm(), cos_term) * 180.0 / std::numbers::pi;
  const double rte = (est.translation - gt.translation).norm();
  return {rre, rte};
}

double registration_recall(const std::vector<PairResult>& results, double rot_thr_deg,
                           double trans_thr_m) {
  if (results.empty()) throw UndefinedMetricError("registration_recall: empty input");
  int hits = 0;
  for (const auto& r : results) {
    if (r.rre_deg <= rot_thr_deg && r.rte_m <= trans_thr_m) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

std::vector<RigidTransform> chain_trajectory(const std::vector<RigidTransform>& relatives) {
  if (relatives.empty()) throw std::invalid_argument("chain_trajectory: empty input");
  std::vector<RigidTransform> absolute;
  absolute.reserve(relatives.size());
  RigidTransform current = RigidTransform::identity();
  for (const auto& rel : relatives) {
    current = geometry::compose(current, rel);
    absolute.push_back(current);
  }
  return absolute;
}

TrajectoryStats trajectory_stats(const std::vector<RigidTransform>& est,
                                 const std::vector<RigidTransform>& gt) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("trajectory_stats: length mismatch");
  }
  if (est.empty()) throw std::invalid_argument("trajectory_stats: empty input");
  std::vector<double> rot_err(est.size()), trans_err(est.size());
  for (size_t i = 0; i < est.size(); ++i) {
    auto [rre, rte] = relative_errors(est[i], gt[i]);
    rot_err[i] = rre;
    trans_err[i] = rte * 100.0;  // cm
  }
  auto stats = [](const std::vector<double>& e, double& rmse, double& mae, double& sd) {
    double sum = 0.0, sum_sq = 0.0;
    for (double v : e) {
      sum += std::abs(v);
      sum_sq += v * v;
    }
    const double n = static_cast<double>(e.size());
    mae = sum / n;
    rmse = std::sqrt(sum_sq / n);
    const double var = std::max(0.0, sum_sq / n - (sum / n) * (sum / n));
    sd = std::sqrt(var);
  };
  TrajectoryStats out;
  stats(rot_err, out.rot_rmse_deg, out.rot_mae_deg, out.rot_std_deg);
  stats(trans_err, out.trans_rmse_cm, out.trans_mae_cm, out.trans_std_cm);
  return out;
}

void write_pair_report(std::ostream& os, const std::vector<PairResult>& results) {
  os << "pair_id,ir,rre_deg,rte_m,registered\n";
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    os << i << "," << r.inlier_ratio << "," << r.rre_deg << "," << r.rte_m << ","
       << (r.registered ? 1 : 0) << "\n";
  }
}

void write_summary(std::ostream& os, const std::vector<PairResult>& results,
                   double fmr_threshold, double rot_thr_deg, double trans_thr_m,
                   int failures) {
  double ir_sum = 0.0, rre_sum = 0.0, rte_sum = 0.0;
  std::vector<double> irs;
  irs.reserve(results.size());
  for (const auto& r : results) {
    ir_sum += r.inlier_ratio;
    rre_sum += r.rre_deg;
    rte_sum += r.rte_m;
    irs.push_back(r.inlier_ratio);
  }
  const double n = results.empty() ? 1.0 : static_cast<double>(results.size());
  os << "pairs = " << results.size() << "\n";
  os << "failures = " << failures << "\n";
  if (!results.empty()) {
    os << "mean_ir = " << ir_sum / n << "\n";
    os << "fmr = " << feature_match_recall(irs, fmr_threshold) << "\n";
    os << "rr = " << registration_recall(results, rot_thr_deg, trans_thr_m) << "\n";
    os << "mean_rre_deg = " << rre_sum / n << "\n";
    os << "mean_rte_m = " << rte_sum / n << "\n";
  }
}

void write_threshold_sweep(std::ostream& os, const std::vector<PairResult>& results,
                           const std::vector<double>& rot_thresholds_deg,
                           const std::vector<double>& trans_thresholds_m,
                           double default_rot_deg, double default_trans_m) {
  os << "kind,threshold,recall\n";
  for (double thr : rot_thresholds_deg) {
    os << "rotation," << thr << "," << registration_recall(results, thr, default_trans_m)
       << "\n";
  }
  for (double thr : trans_thresholds_m) {
    os << "translation," << thr << ","
       << registration_recall(results, default_rot_deg, thr) << "\n";
  }
}

}  // namespace rdm::evalkit
