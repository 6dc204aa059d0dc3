#include "rdm/pose.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <map>
#include <ostream>
#include <random>

#include "rdm/errors.hpp"

namespace rdm::pose {

RigidTransform weighted_svd(const std::vector<WeightedCorrespondence>& corrs) {
  if (corrs.size() < 3) {
    throw InsufficientDataError("weighted_svd: need at least 3 correspondences");
  }
  double total = 0.0;
  for (const auto& c : corrs) {
    if (c.weight < 0.0) throw std::invalid_argument("weighted_svd: negative weight");
    total += c.weight;
  }
  if (!(total > 0.0)) {
    throw DegenerateConfigurationError("weighted_svd: total weight is zero");
  }
  Eigen::Vector3d ca = Eigen::Vector3d::Zero();
  Eigen::Vector3d cb = Eigen::Vector3d::Zero();
  for (const auto& c : corrs) {
    ca += c.weight * c.a.vec();
    cb += c.weight * c.b.vec();
  }
  ca /= total;
  cb /= total;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (const auto& c : corrs) {
    h += c.weight * (c.a.vec() - ca) * (c.b.vec() - cb).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d& sv = svd.singularValues();
  // Collinear input leaves the rotation about the line unconstrained.
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateConfigurationError("weighted_svd: degenerate correspondence geometry");
  }
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform out;
  out.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  out.translation = cb - out.rotation * ca;
  return out;
}

namespace {

int count_inliers(const RigidTransform& t, const matching::DenseCorrespondences& corrs,
                  const PointCloud& cloud_a, const PointCloud& cloud_b,
                  double threshold) {
  int count = 0;
  const double t2 = threshold * threshold;
  for (const auto& m : corrs.matches) {
    const Eigen::Vector3d r = t(cloud_a.points[m.a].vec()) - cloud_b.points[m.b].vec();
    if (r.squaredNorm() <= t2) ++count;
  }
  return count;
}

std::vector<WeightedCorrespondence> inlier_set(
    const RigidTransform& t, const matching::DenseCorrespondences& corrs,
    const PointCloud& cloud_a, const PointCloud& cloud_b, double threshold,
    bool score_weights) {
  std::vector<WeightedCorrespondence> out;
  const double t2 = threshold * threshold;
  for (const auto& m : corrs.matches) {
    const Eigen::Vector3d r = t(cloud_a.points[m.a].vec()) - cloud_b.points[m.b].vec();
    if (r.squaredNorm() <= t2) {
      out.push_back({cloud_a.points[m.a], cloud_b.points[m.b],
                     score_weights ? m.score : 1.0});
    }
  }
  return out;
}

bool low_confidence(int inliers, size_t total) {
  return inliers < 3 || inliers < static_cast<int>(0.05 * static_cast<double>(total));
}

}  // namespace

PoseEstimate ransac_registration(const matching::DenseCorrespondences& corrs,
                                 const PointCloud& cloud_a, const PointCloud& cloud_b,
                                 int iters, double inlier_threshold, uint64_t seed) {
  const size_t n = corrs.matches.size();
  if (n < 3) throw InsufficientDataError("ransac: need at least 3 correspondences");
  if (iters < 1) throw std::invalid_argument("ransac: iters must be >= 1");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  RigidTransform best;
  int best_count = -1;
  for (int it = 0; it < iters; ++it) {
    size_t i = pick(rng), j = pick(rng), k = pick(rng);
    if (i == j || j == k || i == k) continue;
    std::vector<WeightedCorrespondence> sample{
        {cloud_a.points[corrs.matches[i].a], cloud_b.points[corrs.matches[i].b], 1.0},
        {cloud_a.points[corrs.matches[j].a], cloud_b.points[corrs.matches[j].b], 1.0},
        {cloud_a.points[corrs.matches[k].a], cloud_b.points[corrs.matches[k].b], 1.0}};
    RigidTransform t;
    try {
      t = weighted_svd(sample);
    } catch (const DegenerateConfigurationError&) {
      continue;
    }
    const int count = count_inliers(t, corrs, cloud_a, cloud_b, inlier_threshold);
    if (count > best_count) {
      best_count = count;
      best = t;
    }
  }
  if (best_count < 3) {
    throw InsufficientDataError("ransac: no sample reached a 3-inlier consensus");
  }
  auto consensus = inlier_set(best, corrs, cloud_a, cloud_b, inlier_threshold, false);
  RigidTransform refined = best;
  try {
    refined = weighted_svd(consensus);
  } catch (const DegenerateConfigurationError&) {
  }
  int refined_count = count_inliers(refined, corrs, cloud_a, cloud_b, inlier_threshold);
  if (refined_count < best_count) {
    refined = best;
    refined_count = best_count;
  }
  PoseEstimate out;
  out.transform = refined;
  out.inlier_count = refined_count;
  out.inlier_threshold = inlier_threshold;
  out.converged = !low_confidence(refined_count, n);
  return out;
}

PoseEstimate local_to_global_registration(const matching::DenseCorrespondences& corrs,
                                          const PointCloud& cloud_a,
                                          const PointCloud& cloud_b,
                                          double inlier_threshold, int refine_rounds) {
  std::map<int, std::vector<const matching::DenseMatch*>> by_patch;
  for (const auto& m : corrs.matches) by_patch[m.patch].push_back(&m);

  RigidTransform best;
  int best_count = -1;
  for (const auto& [patch, matches] : by_patch) {
    if (matches.size() < 3) continue;
    std::vector<WeightedCorrespondence> wc;
    wc.reserve(matches.size());
    for (const auto* m : matches) {
      wc.push_back({cloud_a.points[m->a], cloud_b.points[m->b], m->score});
    }
    RigidTransform t;
    try {
      t = weighted_svd(wc);
    } catch (const DegenerateConfigurationError&) {
      continue;
    }
    const int count = count_inliers(t, corrs, cloud_a, cloud_b, inlier_threshold);
    if (count > best_count) {  // ties keep the lowest patch index
      best_count = count;
      best = t;
    }
  }
  if (best_count < 0) {
    throw InsufficientDataError("lgr: no patch provided 3 or more matches");
  }

  for (int round = 0; round < refine_rounds; ++round) {
    auto inliers = inlier_set(best, corrs, cloud_a, cloud_b, inlier_threshold, true);
    if (inliers.size() < 3) break;
    RigidTransform refined;
    try {
      refined = weighted_svd(inliers);
    } catch (const DegenerateConfigurationError&) {
      break;
    }
    const int count = count_inliers(refined, corrs, cloud_a, cloud_b, inlier_threshold);
    if (count < best_count) break;  // never let refinement lose inliers
    best = refined;
    best_count = count;
  }

  PoseEstimate out;
  out.transform = best;
  out.inlier_count = best_count;
  out.inlier_threshold = inlier_threshold;
  out.converged = !low_confidence(best_count, corrs.matches.size());
  return out;
}

void write_pose_line(std::ostream& os, const RigidTransform& t) {
  os.precision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) os << t.rotation(r, c) << " ";
    os << t.translation(r);
    if (r < 2) os << " ";
  }
  os << "\n";
}

}  // namespace rdm::pose
