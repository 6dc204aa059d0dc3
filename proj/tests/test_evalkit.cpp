#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>
#include <random>
#include <sstream>

#include "rdm/errors.hpp"
#include "rdm/evalkit.hpp"

using namespace rdm::evalkit;
using rdm::geometry::Point3;
using rdm::geometry::PointCloud;
using rdm::geometry::RigidTransform;

namespace {

std::mt19937_64 g_rng(2024);

RigidTransform random_transform(double max_angle, double max_trans) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector3d axis(u(g_rng), u(g_rng), u(g_rng));
  axis.normalize();
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(max_angle * u(g_rng), axis).matrix();
  t.translation << max_trans * u(g_rng), max_trans * u(g_rng), max_trans * u(g_rng);
  return t;
}

}  // namespace

TEST_CASE("inlier_ratio: perfect, hopeless, and mixed") {
  PointCloud a, b;
  rdm::matching::DenseCorrespondences corrs;
  for (int i = 0; i < 10; ++i) {
    Point3 p{static_cast<double>(i), 0.0, 0.0};
    a.points.push_back(p);
    b.points.push_back(p);
    corrs.matches.push_back({i, i, 1.0, 0});
  }
  CHECK(inlier_ratio(corrs, a, b, RigidTransform::identity(), 0.6) == doctest::Approx(1.0));

  PointCloud far = b;
  for (auto& p : far.points) p.x += 10.0;
  CHECK(inlier_ratio(corrs, a, far, RigidTransform::identity(), 0.6) == doctest::Approx(0.0));

  PointCloud half = b;
  for (int i = 0; i < 5; ++i) half.points[i].x += 10.0;
  CHECK(inlier_ratio(corrs, a, half, RigidTransform::identity(), 0.6) == doctest::Approx(0.5));

  rdm::matching::DenseCorrespondences empty;
  CHECK_THROWS_AS(inlier_ratio(empty, a, b, RigidTransform::identity(), 0.6),
                  rdm::UndefinedMetricError);
}

TEST_CASE("feature_match_recall: all pass, strict boundary, counting oracle") {
  CHECK(feature_match_recall({1.0, 1.0, 1.0}, 0.05) == doctest::Approx(1.0));
  // Strictly greater than the threshold counts; equality does not.
  CHECK(feature_match_recall({0.04, 0.06}, 0.05) == doctest::Approx(0.5));
  CHECK(feature_match_recall({0.05, 0.06}, 0.05) == doctest::Approx(0.5));

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> irs(100);
  for (auto& v : irs) v = u(g_rng);
  int expect = 0;
  for (double v : irs) {
    if (v > 0.3) ++expect;
  }
  CHECK(feature_match_recall(irs, 0.3) == doctest::Approx(expect / 100.0));
  CHECK_THROWS_AS(feature_match_recall({}, 0.05), rdm::UndefinedMetricError);
}

TEST_CASE("relative_errors: identity, antipodal, quaternion oracle") {
  RigidTransform t = random_transform(1.0, 5.0);
  auto [rre0, rte0] = relative_errors(t, t);
  CHECK(rre0 == 0.0);
  CHECK(rte0 == 0.0);

  RigidTransform half_turn = t;
  half_turn.rotation =
      t.rotation * Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitZ()).matrix();
  auto [rre180, rte180] = relative_errors(half_turn, t);
  CHECK(rre180 == doctest::Approx(180.0).epsilon(1e-9));

  for (int trial = 0; trial < 50; ++trial) {
    RigidTransform gt = random_transform(1.5, 5.0);
    RigidTransform est = random_transform(1.5, 5.0);
    auto [rre, rte] = relative_errors(est, gt);
    Eigen::Quaterniond qg(gt.rotation), qe(est.rotation);
    const double oracle = qg.angularDistance(qe) * 180.0 / M_PI;
    CHECK(std::abs(rre - oracle) < 1e-9);
    CHECK(rte == doctest::Approx((est.translation - gt.translation).norm()));
  }
}

TEST_CASE("rre is symmetric") {
  RigidTransform a = random_transform(2.0, 3.0);
  RigidTransform b = random_transform(2.0, 3.0);
  CHECK(relative_errors(a, b).first == doctest::Approx(relative_errors(b, a).first).epsilon(1e-12));
}

TEST_CASE("registration_recall: exact, conjunction rule, counting oracle") {
  std::vector<PairResult> all_exact(4);
  CHECK(registration_recall(all_exact, 5.0, 2.0) == doctest::Approx(1.0));

  std::vector<PairResult> one{{0.9, 6.0, 1.0, false}};
  CHECK(registration_recall(one, 5.0, 2.0) == doctest::Approx(0.0));
  one[0] = {0.9, 4.0, 3.0, false};
  CHECK(registration_recall(one, 5.0, 2.0) == doctest::Approx(0.0));
  one[0] = {0.9, 4.0, 1.0, false};
  CHECK(registration_recall(one, 5.0, 2.0) == doctest::Approx(1.0));

  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<PairResult> mixed(60);
  int expect = 0;
  for (auto& r : mixed) {
    r.rre_deg = u(g_rng);
    r.rte_m = u(g_rng) / 3.0;
    if (r.rre_deg <= 5.0 && r.rte_m <= 2.0) ++expect;
  }
  CHECK(registration_recall(mixed, 5.0, 2.0) == doctest::Approx(expect / 60.0));
  CHECK_THROWS_AS(registration_recall({}, 5.0, 2.0), rdm::UndefinedMetricError);
}

TEST_CASE("chain_trajectory: identity, two translations, matrix-product oracle") {
  std::vector<RigidTransform> ids(5);
  auto chained = chain_trajectory(ids);
  for (const auto& t : chained) {
    CHECK((t.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(t.translation.norm() == 0.0);
  }

  RigidTransform t1, t2;
  t1.translation << 1, 0, 0;
  t2.translation << 0, 1, 0;
  auto two = chain_trajectory({t1, t2});
  CHECK(two.back().translation.x() == doctest::Approx(1.0));
  CHECK(two.back().translation.y() == doctest::Approx(1.0));
  CHECK(two.back().translation.z() == doctest::Approx(0.0));

  std::vector<RigidTransform> walk;
  for (int i = 0; i < 50; ++i) walk.push_back(random_transform(0.3, 1.0));
  auto abs_poses = chain_trajectory(walk);
  Eigen::Matrix4d acc = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 50; ++i) {
    Eigen::Matrix4d step = Eigen::Matrix4d::Identity();
    step.topLeftCorner<3, 3>() = walk[i].rotation;
    step.topRightCorner<3, 1>() = walk[i].translation;
    acc = acc * step;
    CHECK((abs_poses[i].rotation - acc.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((abs_poses[i].translation - acc.topRightCorner<3, 1>()).norm() < 1e-9);
  }
}

TEST_CASE("chaining inverted relatives returns to the identity") {
  std::vector<RigidTransform> walk;
  for (int i = 0; i < 20; ++i) walk.push_back(random_transform(0.4, 2.0));
  std::vector<RigidTransform> forward_back = walk;
  for (int i = 19; i >= 0; --i) forward_back.push_back(rdm::geometry::inverse(walk[i]));
  auto chained = chain_trajectory(forward_back);
  CHECK((chained.back().rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(chained.back().translation.norm() < 1e-9);
}

TEST_CASE("trajectory_stats: zero errors and ordering invariant") {
  std::vector<RigidTransform> traj;
  for (int i = 0; i < 10; ++i) traj.push_back(random_transform(0.5, 3.0));
  TrajectoryStats zero = trajectory_stats(traj, traj);
  CHECK(zero.rot_rmse_deg == 0.0);
  CHECK(zero.trans_rmse_cm == 0.0);

  std::vector<RigidTransform> est = traj;
  for (auto& t : est) {
    t.translation += Eigen::Vector3d::Random() * 0.2;
    t.rotation = t.rotation * Eigen::AngleAxisd(0.01 * Eigen::Vector3d::Random().x(),
                                                Eigen::Vector3d::UnitZ())
                                  .matrix();
  }
  TrajectoryStats stats = trajectory_stats(est, traj);
  CHECK(stats.rot_rmse_deg >= stats.rot_mae_deg);
  CHECK(stats.trans_rmse_cm >= stats.trans_mae_cm);
  CHECK(stats.rot_mae_deg >= 0.0);
  CHECK_THROWS_AS(trajectory_stats(est, std::vector<RigidTransform>(3)),
                  std::invalid_argument);
}

TEST_CASE("threshold sweep recall is monotone non-decreasing") {
  std::uniform_real_distribution<double> u(0.0, 8.0);
  std::vector<PairResult> results(40);
  for (auto& r : results) {
    r.rre_deg = u(g_rng);
    r.rte_m = u(g_rng) / 2.0;
  }
  std::vector<double> rot_thr{0.5, 1, 2, 3, 5, 8, 10};
  double prev = 0.0;
  for (double thr : rot_thr) {
    const double rec = registration_recall(results, thr, 2.0);
    CHECK(rec >= prev);
    prev = rec;
  }
  prev = 0.0;
  for (double thr : {0.2, 0.5, 1.0, 2.0, 4.0}) {
    const double rec = registration_recall(results, 5.0, thr);
    CHECK(rec >= prev);
    prev = rec;
  }

  std::ostringstream os;
  write_threshold_sweep(os, results, rot_thr, {0.5, 1.0, 2.0}, 5.0, 2.0);
  CHECK(os.str().find("kind,threshold,recall") == 0);
  CHECK(os.str().find("rotation,") != std::string::npos);
  CHECK(os.str().find("translation,") != std::string::npos);
}

TEST_CASE("pair report and summary formats") {
  std::vector<PairResult> results{{0.8, 1.0, 0.2, true}, {0.4, 9.0, 2.5, false}};
  std::ostringstream os;
  write_pair_report(os, results);
  CHECK(os.str().find("pair_id,ir,rre_deg,rte_m,registered") == 0);
  CHECK(os.str().find("0,0.8,1,0.2,1") != std::string::npos);

  std::ostringstream sum;
  write_summary(sum, results, 0.05, 5.0, 2.0, 0);
  CHECK(sum.str().find("pairs = 2") != std::string::npos);
  CHECK(sum.str().find("rr = 0.5") != std::string::npos);
}
