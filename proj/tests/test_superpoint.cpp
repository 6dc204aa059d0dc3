#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "rdm/superpoint.hpp"

using namespace rdm::superpoint;
using rdm::geometry::Point3;
using rdm::geometry::PointCloud;
using rdm::numerics::Matrix;

namespace {

std::mt19937_64 g_rng(1234);

PointCloud box_scene(int n, double extent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-extent, extent);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (int i = 0; i < n; ++i) cloud.points.push_back({d(rng), d(rng), std::abs(d(rng)) * 0.2});
  return cloud;
}

DetectionWeights small_weights(int dim) {
  DetectionWeights w;
  w.encoder = init_encoder_weights(dim, g_rng);
  w.stack = rdm::roformer::init_attention_weights(dim, 1, g_rng);
  w.vote = init_vote_weights(dim, g_rng);
  return w;
}

}  // namespace

TEST_CASE("encode: single point has one fine point, one node, finite features") {
  EncoderWeights w = init_encoder_weights(8, g_rng);
  PointCloud cloud;
  cloud.points = {{1.0, 2.0, 0.5}};
  EncoderOutput out = encode(cloud, w, 0.6, 4.8);
  CHECK(out.fine_points.size() == 1);
  CHECK(out.nodes.size() == 1);
  CHECK(out.fine_to_node == std::vector<int>{0});
  CHECK(rdm::numerics::all_finite(out.node_features));
  CHECK(rdm::numerics::all_finite(out.fine_features));
  PointCloud empty;
  CHECK_THROWS_AS(encode(empty, w, 0.6, 4.8), std::invalid_argument);
}

TEST_CASE("encode: grid-multiple translation moves points, features unchanged") {
  EncoderWeights w = init_encoder_weights(8, g_rng);
  PointCloud cloud = box_scene(400, 6.0, g_rng);
  EncoderOutput base = encode(cloud, w, 0.6, 4.8);

  PointCloud moved = cloud;
  for (auto& p : moved.points) {
    p.x += 9.6;  // multiple of every level size
    p.y -= 4.8;
  }
  EncoderOutput shifted = encode(moved, w, 0.6, 4.8);
  REQUIRE(shifted.nodes.size() == base.nodes.size());
  REQUIRE(shifted.fine_points.size() == base.fine_points.size());
  for (size_t i = 0; i < base.nodes.size(); ++i) {
    CHECK(shifted.nodes[i].x - base.nodes[i].x == doctest::Approx(9.6).epsilon(1e-9));
    CHECK(shifted.nodes[i].y - base.nodes[i].y == doctest::Approx(-4.8).epsilon(1e-9));
  }
  CHECK((shifted.node_features - base.node_features).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((shifted.fine_features - base.fine_features).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("encode: node count equals a grid-count oracle at the coarse voxel") {
  EncoderWeights w = init_encoder_weights(8, g_rng);
  // Three clusters well apart plus scattered points.
  PointCloud cloud;
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    const double cx = 12.0 * c;
    for (int i = 0; i < 120; ++i) {
      cloud.points.push_back({cx + d(g_rng), d(g_rng), std::abs(d(g_rng))});
    }
  }
  EncoderOutput out = encode(cloud, w, 0.6, 4.8);
  PointCloud fine = rdm::geometry::voxel_downsample(cloud, 0.6);
  PointCloud fine_cloud;
  fine_cloud.points = fine.points;
  PointCloud nodes = rdm::geometry::voxel_downsample(fine_cloud, 4.8);
  CHECK(out.fine_points.size() == fine.points.size());
  CHECK(out.nodes.size() == nodes.points.size());
}

TEST_CASE("vote_offsets: zero weights give zero offsets and unchanged proposals") {
  const int dim = 8;
  MlpWeights vote;
  vote.layers.push_back({Matrix::Zero(dim, dim), Matrix::Zero(1, dim),
                         rdm::numerics::Activation::LeakyRelu});
  vote.layers.push_back({Matrix::Zero(dim, 3 + dim), Matrix::Zero(1, 3 + dim),
                         rdm::numerics::Activation::Identity});
  Matrix feat = rdm::numerics::random_uniform(5, dim, -1.0, 1.0, g_rng);
  std::vector<Point3> nodes(5);
  for (int i = 0; i < 5; ++i) nodes[i] = {static_cast<double>(i), 0.0, 0.0};
  VoteOutput out = vote_offsets(feat, nodes, vote, 2.4);
  CHECK(out.offsets.cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 5; ++i) CHECK(out.proposals(i, 0) == doctest::Approx(nodes[i].x));
  CHECK((out.features - feat).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vote_offsets: long raw offsets are clamped to the radius, direction kept") {
  const int dim = 4;
  // Single linear layer emitting a constant offset of length 10 along +x.
  MlpWeights vote;
  Matrix w2 = Matrix::Zero(dim, 3 + dim);
  Matrix b2 = Matrix::Zero(1, 3 + dim);
  b2(0, 0) = 10.0;
  vote.layers.push_back({w2, b2, rdm::numerics::Activation::Identity});
  Matrix feat = rdm::numerics::random_uniform(3, dim, -1.0, 1.0, g_rng);
  std::vector<Point3> nodes(3, Point3{0, 0, 0});
  VoteOutput out = vote_offsets(feat, nodes, vote, 2.4);
  for (int i = 0; i < 3; ++i) {
    CHECK(out.offsets(i, 0) == doctest::Approx(2.4));
    CHECK(out.offsets(i, 1) == doctest::Approx(0.0));
    CHECK(out.offsets.row(i).norm() == doctest::Approx(2.4));
  }
}

TEST_CASE("vote_offsets: x-blind weights give mirror-consistent offsets") {
  // Construction: every feature path ignores the x coordinate sign and the
  // vote head emits zero x offset, so mirroring the scene about x = 0
  // mirrors the offsets exactly.
  const int dim = 8;
  EncoderWeights enc = init_encoder_weights(dim, g_rng);
  // Channels are (dx, dy, dz, range, horizontal range); only dx is
  // mirror-sensitive.
  auto zero_x_input = [](MlpWeights& m) { m.layers.front().weight.row(0).setZero(); };
  zero_x_input(enc.point_mlp);
  for (auto& st : enc.stages) zero_x_input(st.member_mlp);

  MlpWeights vote = init_vote_weights(dim, g_rng);
  vote.layers.back().weight.col(0).setZero();
  if (vote.layers.back().bias) vote.layers.back().bias->coeffRef(0, 0) = 0.0;

  PointCloud cloud = box_scene(300, 5.0, g_rng);
  PointCloud mirrored = cloud;
  for (auto& p : mirrored.points) p.x = -p.x;

  EncoderOutput e1 = encode(cloud, enc, 0.6, 4.8);
  EncoderOutput e2 = encode(mirrored, enc, 0.6, 4.8);
  REQUIRE(e1.nodes.size() == e2.nodes.size());

  VoteOutput v1 = vote_offsets(e1.node_features, e1.nodes, vote, 2.4);
  VoteOutput v2 = vote_offsets(e2.node_features, e2.nodes, vote, 2.4);

  // Mirrored voxel cells enumerate in a different order; match nodes by
  // mirrored coordinates.
  for (size_t i = 0; i < e1.nodes.size(); ++i) {
    const Point3 want{-e1.nodes[i].x, e1.nodes[i].y, e1.nodes[i].z};
    int j = -1;
    for (size_t k = 0; k < e2.nodes.size(); ++k) {
      if (rdm::geometry::distance(e2.nodes[k], want) < 1e-9) {
        j = static_cast<int>(k);
        break;
      }
    }
    REQUIRE(j >= 0);
    CHECK(std::abs(v2.offsets(j, 0) - (-v1.offsets(i, 0))) < 1e-6);
    CHECK(std::abs(v2.offsets(j, 1) - v1.offsets(i, 1)) < 1e-6);
    CHECK(std::abs(v2.offsets(j, 2) - v1.offsets(i, 2)) < 1e-6);
  }
}

TEST_CASE("radius_filter: well separated proposals all survive") {
  std::vector<Point3> props{{0, 0, 0}, {10, 0, 0}, {20, 0, 0}};
  Matrix feats = rdm::numerics::random_uniform(3, 4, -1.0, 1.0, g_rng);
  SuperpointSet out = radius_filter(props, feats, 2.0);
  CHECK(out.superpoints.size() == 3);
  CHECK(out.source_node == std::vector<int>{0, 1, 2});
}

TEST_CASE("radius_filter: the earlier of two close proposals wins") {
  std::vector<Point3> props{{0, 0, 0}, {0.5, 0, 0}};
  Matrix feats = rdm::numerics::random_uniform(2, 4, -1.0, 1.0, g_rng);
  SuperpointSet out = radius_filter(props, feats, 2.0);
  REQUIRE(out.superpoints.size() == 1);
  CHECK(out.source_node[0] == 0);
  CHECK((out.features.row(0) - feats.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("radius_filter: matches a sequential greedy oracle and is idempotent") {
  std::uniform_real_distribution<double> d(-8.0, 8.0);
  std::vector<Point3> props(100);
  for (auto& p : props) p = {d(g_rng), d(g_rng), d(g_rng)};
  Matrix feats = rdm::numerics::random_uniform(100, 4, -1.0, 1.0, g_rng);
  const double radius = 2.4;
  SuperpointSet out = radius_filter(props, feats, radius);

  std::vector<int> expect;
  for (int i = 0; i < 100; ++i) {
    bool keep = true;
    for (int j : expect) {
      if (rdm::geometry::distance(props[i], props[j]) <= radius) {
        keep = false;
        break;
      }
    }
    if (keep) expect.push_back(i);
  }
  CHECK(out.source_node == expect);

  SuperpointSet again = radius_filter(out.superpoints, out.features, radius);
  CHECK(again.superpoints.size() == out.superpoints.size());
  for (size_t i = 0; i < again.superpoints.size(); ++i) {
    CHECK(rdm::geometry::distance(again.superpoints[i], out.superpoints[i]) == 0.0);
  }

  // Survivors are pairwise separated by more than the radius.
  for (size_t i = 0; i < out.superpoints.size(); ++i) {
    for (size_t j = i + 1; j < out.superpoints.size(); ++j) {
      CHECK(rdm::geometry::distance(out.superpoints[i], out.superpoints[j]) > radius);
    }
  }
}

TEST_CASE("detect_superpoints: disabled voting returns the raw nodes") {
  DetectionWeights w = small_weights(8);
  DetectionConfig cfg;
  cfg.voting_enabled = false;
  PointCloud a = box_scene(500, 8.0, g_rng);
  PointCloud b = box_scene(500, 8.0, g_rng);
  DetectionResult res = detect_superpoints(a, b, w, cfg);
  REQUIRE(res.sp_a.superpoints.size() == res.enc_a.nodes.size());
  for (size_t i = 0; i < res.sp_a.superpoints.size(); ++i) {
    CHECK(rdm::geometry::distance(res.sp_a.superpoints[i], res.enc_a.nodes[i]) == 0.0);
  }
  size_t covered = 0;
  for (const auto& patch : res.part_a.patches) covered += patch.size();
  CHECK(covered == res.enc_a.fine_points.size());
}

TEST_CASE("detect_superpoints: identical clouds give identical superpoint sets") {
  DetectionWeights w = small_weights(8);
  DetectionConfig cfg;
  PointCloud a = box_scene(500, 8.0, g_rng);
  DetectionResult res = detect_superpoints(a, a, w, cfg);
  REQUIRE(res.sp_a.superpoints.size() == res.sp_b.superpoints.size());
  for (size_t i = 0; i < res.sp_a.superpoints.size(); ++i) {
    CHECK(rdm::geometry::distance(res.sp_a.superpoints[i], res.sp_b.superpoints[i]) < 1e-9);
  }
}

TEST_CASE("detect_superpoints: offsets never exceed the clamp radius") {
  DetectionWeights w = small_weights(8);
  // Inflate the vote head so raw offsets would be far beyond the clamp.
  w.vote.layers.back().weight *= 50.0;
  DetectionConfig cfg;
  PointCloud a = box_scene(400, 8.0, g_rng);
  PointCloud b = box_scene(400, 8.0, g_rng);

  auto lift = lift_detection(w);
  Detection det = detect_superpoints_graph(a, b, lift, cfg);
  const Matrix& nodes_a_offsets =
      Matrix(det.proposals_a->value);
  for (int i = 0; i < det.proposals_a->rows(); ++i) {
    const Point3 node = det.enc_a.out.nodes[i];
    const double dist = std::sqrt(
        std::pow(nodes_a_offsets(i, 0) - node.x, 2) +
        std::pow(nodes_a_offsets(i, 1) - node.y, 2) +
        std::pow(nodes_a_offsets(i, 2) - node.z, 2));
    CHECK(dist <= cfg.clamp_radius + 1e-9);
  }
}

TEST_CASE("encoder checkpoint round trip") {
  EncoderWeights w = init_encoder_weights(8, g_rng);
  rdm::numerics::ParamSet p;
  store_encoder_weights(w, p);
  EncoderWeights back = load_encoder_weights(p);
  PointCloud cloud = box_scene(200, 5.0, g_rng);
  EncoderOutput o1 = encode(cloud, w, 0.6, 4.8);
  EncoderOutput o2 = encode(cloud, back, 0.6, 4.8);
  CHECK((o1.node_features - o2.node_features).cwiseAbs().maxCoeff() == 0.0);
  CHECK((o1.fine_features - o2.fine_features).cwiseAbs().maxCoeff() == 0.0);
}
