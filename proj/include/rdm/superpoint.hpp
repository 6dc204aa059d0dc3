#pragma once

#include <random>
#include <vector>

#include "rdm/autodiff.hpp"
#include "rdm/checkpoint.hpp"
#include "rdm/geometry.hpp"
#include "rdm/mlp.hpp"
#include "rdm/roformer.hpp"

namespace rdm::superpoint {

using geometry::PatchPartition;
using geometry::Point3;
using geometry::PointCloud;
using numerics::Matrix;
using numerics::MlpWeights;
using numerics::NodeRef;

// Hierarchical voxel-pooling encoder: the raw cloud is grid-pooled through
// fine_voxel -> 2x -> 4x -> 8x resolutions (0.6 m to 4.8 m by default). Each
// level centroid aggregates the finer level over a ball neighborhood: a
// small MLP runs on per-neighbor height offset, 3D range, and horizontal
// range (all invariant to vertical-axis rotation), max-pools per centroid,
// then refines with a feature MLP. A mirrored unpooling decoder
// with skip concatenation brings node-level context back to the fine
// points. Features depend only on relative coordinates, so they are
// unchanged when the cloud is translated by an exact grid multiple.
struct EncoderWeights {
  MlpWeights point_mlp;   // 3 -> d, raw points into fine voxels
  MlpWeights feat_mlp0;   // d -> d
  struct Stage {
    MlpWeights member_mlp;  // (3 + d) -> d
    MlpWeights feat_mlp;    // d -> d
  };
  std::vector<Stage> stages;  // three downsampling stages
  struct UpStage {
    MlpWeights fuse_mlp;  // 2d -> d, unpooled parent feature + skip
  };
  std::vector<UpStage> ups;  // mirrored decoder stages back to the fine level
  int feature_dim = 0;
};

EncoderWeights init_encoder_weights(int feature_dim, std::mt19937_64& rng);
void store_encoder_weights(const EncoderWeights& w, numerics::ParamSet& out);
EncoderWeights load_encoder_weights(const numerics::ParamSet& in);

struct EncoderOutput {
  std::vector<Point3> nodes;        // coarse level (~4.8 m spacing)
  Matrix node_features;
  std::vector<Point3> fine_points;  // fine level (~0.6 m spacing)
  Matrix fine_features;
  std::vector<int> fine_to_node;    // pooling trace, fine index -> node index
};

// Graph-level encode result; value views live in `out`.
struct EncodeGraph {
  EncoderOutput out;
  NodeRef node_features;
  NodeRef fine_features;
};

struct EncoderLift {
  numerics::MlpGraph point_mlp, feat_mlp0;
  std::vector<std::pair<numerics::MlpGraph, numerics::MlpGraph>> stages;
  std::vector<numerics::MlpGraph> ups;
};
EncoderLift lift_encoder(const EncoderWeights& w, std::vector<NodeRef>* leaves = nullptr,
                         std::vector<std::string>* names = nullptr);

EncodeGraph encode_graph(const PointCloud& cloud, const EncoderLift& lift,
                         double fine_voxel, double coarse_voxel);
EncoderOutput encode(const PointCloud& cloud, const EncoderWeights& w,
                     double fine_voxel, double coarse_voxel);

struct VoteOutput {
  Matrix offsets;          // per-node 3-vector, norm <= clamp radius
  Matrix feature_offsets;  // per-node feature delta
  Matrix proposals;        // nodes + offsets
  Matrix features;         // enhanced features + feature offsets
};

struct VoteGraph {
  NodeRef offsets;
  NodeRef feature_offsets;
  NodeRef proposals;
  NodeRef features;
};

// Vote head: MLP on the enhanced node features producing a geometric offset
// (clamped to clamp_radius) and a feature offset.
VoteGraph vote_offsets_graph(const NodeRef& enhanced, const std::vector<Point3>& nodes,
                             const numerics::MlpGraph& vote_mlp, double clamp_radius);
VoteOutput vote_offsets(const Matrix& enhanced, const std::vector<Point3>& nodes,
                        const MlpWeights& vote_mlp, double clamp_radius);

MlpWeights init_vote_weights(int feature_dim, std::mt19937_64& rng);

struct SuperpointSet {
  std::vector<Point3> superpoints;
  Matrix features;
  std::vector<int> source_node;  // proposal index each kept superpoint came from
};

// Greedy suppression in input order: a proposal survives iff no previously
// kept proposal lies within `radius`.
SuperpointSet radius_filter(const std::vector<Point3>& proposals, const Matrix& features,
                            double radius);

struct DetectionConfig {
  double fine_voxel = 0.6;
  double coarse_voxel = 4.8;
  double clamp_radius = 2.4;
  double filter_radius = 2.4;
  bool voting_enabled = true;
  roformer::EmbeddingKind kind = roformer::EmbeddingKind::Rotary;
};

struct DetectionWeights {
  EncoderWeights encoder;
  roformer::AttentionWeights stack;  // detection-stage attention
  MlpWeights vote;
};

// Full detection result. NodeRefs are populated on the graph path and give
// losses access to proposals and features; value members are always set.
struct Detection {
  EncodeGraph enc_a, enc_b;
  NodeRef enhanced_a, enhanced_b;       // post-attention node features
  NodeRef proposals_a, proposals_b;     // pre-filter proposal coordinates
  NodeRef prop_feat_a, prop_feat_b;
  SuperpointSet sp_a, sp_b;
  NodeRef sp_feat_a, sp_feat_b;         // features of kept superpoints
  PatchPartition part_a, part_b;        // fine points grouped by superpoint
};

struct DetectionLift {
  EncoderLift encoder;
  roformer::AttentionGraph stack;
  numerics::MlpGraph vote;
};
DetectionLift lift_detection(const DetectionWeights& w,
                             std::vector<NodeRef>* leaves = nullptr,
                             std::vector<std::string>* names = nullptr);

Detection detect_superpoints_graph(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                   const DetectionLift& lift, const DetectionConfig& cfg);

// Value-level wrapper: superpoint sets plus fine-point partitions.
struct DetectionResult {
  SuperpointSet sp_a, sp_b;
  PatchPartition part_a, part_b;
  EncoderOutput enc_a, enc_b;
};
DetectionResult detect_superpoints(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                   const DetectionWeights& w, const DetectionConfig& cfg);

}  // namespace rdm::superpoint
