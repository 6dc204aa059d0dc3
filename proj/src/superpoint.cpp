#include "rdm/superpoint.hpp"

#include <cmath>
#include <stdexcept>

namespace rdm::superpoint {

namespace {

using geometry::VoxelPartition;
using geometry::voxel_partition;
using numerics::add;
using numerics::clamp_row_norm;
using numerics::concat_cols;
using numerics::constant;
using numerics::gather_rows;
using numerics::matmul;
using numerics::mlp_forward;
using numerics::segment_max;
using numerics::slice_cols;

// Neighborhood grouping for one pooling level: every centroid aggregates the
// finer-level points inside a ball around it (its own voxel members are
// always included so no segment is empty). Neighbor lists are capped to the
// nearest `max_neighbors`, ordered by (distance, index) for determinism.
struct Grouping {
  std::vector<int> member_point;    // row -> finer-level point index
  std::vector<int> segment_of_row;  // row -> centroid index
};

constexpr int kMaxNeighbors = 32;

Grouping ball_grouping(const std::vector<Point3>& points, const VoxelPartition& part,
                       double radius) {
  geometry::HashGrid grid(points, radius);
  Grouping g;
  std::vector<int> hits;
  std::vector<std::pair<double, int>> ranked;
  for (size_t v = 0; v < part.centroids.size(); ++v) {
    const Point3& c = part.centroids[v];
    grid.query_radius(c, radius, hits);
    ranked.clear();
    for (int idx : hits) {
      ranked.emplace_back(geometry::squared_distance(points[idx], c), idx);
    }
    for (int idx : part.members[v]) {
      const double d = geometry::squared_distance(points[idx], c);
      if (d > radius * radius) ranked.emplace_back(d, idx);  // outside the ball
    }
    std::sort(ranked.begin(), ranked.end());
    const int take = std::min<int>(kMaxNeighbors, static_cast<int>(ranked.size()));
    for (int k = 0; k < take; ++k) {
      g.member_point.push_back(ranked[k].second);
      g.segment_of_row.push_back(static_cast<int>(v));
    }
  }
  return g;
}

// Per-neighbor geometry channels relative to the centroid: height offset,
// 3D range, and horizontal range. All three are invariant to rotations
// about the vertical axis, so descriptors of the same surface patch agree
// across views that differ by planar motion.
Matrix relative_coords(const std::vector<Point3>& points, const VoxelPartition& part,
                       const Grouping& g) {
  Matrix m(g.member_point.size(), 3);
  for (size_t r = 0; r < g.member_point.size(); ++r) {
    const Point3& p = points[g.member_point[r]];
    const Point3& c = part.centroids[g.segment_of_row[r]];
    const double dx = p.x - c.x;
    const double dy = p.y - c.y;
    const double dz = p.z - c.z;
    const Eigen::Index row = static_cast<Eigen::Index>(r);
    m(row, 0) = dz;
    m(row, 1) = std::sqrt(dx * dx + dy * dy + dz * dz);
    m(row, 2) = std::sqrt(dx * dx + dy * dy);
  }
  return m;
}

numerics::MlpGraph lift_named(const MlpWeights& w, const std::string& prefix,
                              std::vector<NodeRef>* leaves,
                              std::vector<std::string>* names) {
  numerics::MlpGraph g;
  for (size_t i = 0; i < w.layers.size(); ++i) {
    numerics::MlpGraph::Layer gl;
    gl.weight = leaves ? numerics::leaf(w.layers[i].weight)
                       : numerics::constant(w.layers[i].weight);
    if (leaves) leaves->push_back(gl.weight);
    if (names) names->push_back(prefix + "." + std::to_string(i) + ".weight");
    if (w.layers[i].bias) {
      gl.bias = leaves ? numerics::leaf(*w.layers[i].bias)
                       : numerics::constant(*w.layers[i].bias);
      if (leaves) leaves->push_back(gl.bias);
      if (names) names->push_back(prefix + "." + std::to_string(i) + ".bias");
    }
    gl.act = w.layers[i].act;
    g.layers.push_back(std::move(gl));
  }
  return g;
}

void store_mlp(const MlpWeights& m, const std::string& prefix, numerics::ParamSet& out) {
  for (size_t i = 0; i < m.layers.size(); ++i) {
    out.tensors[prefix + "." + std::to_string(i) + ".weight"] = m.layers[i].weight;
    if (m.layers[i].bias) {
      out.tensors[prefix + "." + std::to_string(i) + ".bias"] = *m.layers[i].bias;
    }
  }
}

MlpWeights load_mlp(const numerics::ParamSet& in, const std::string& prefix) {
  MlpWeights m;
  for (size_t i = 0;; ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    if (!in.has(base + ".weight")) break;
    numerics::MlpLayer l;
    l.weight = in.at(base + ".weight");
    if (in.has(base + ".bias")) l.bias = in.at(base + ".bias");
    m.layers.push_back(std::move(l));
  }
  if (m.layers.empty()) throw std::invalid_argument("no mlp under prefix " + prefix);
  for (size_t i = 0; i < m.layers.size(); ++i) {
    m.layers[i].act = (i + 1 < m.layers.size()) ? numerics::Activation::LeakyRelu
                                                : numerics::Activation::Identity;
  }
  return m;
}

}  // namespace

EncoderWeights init_encoder_weights(int feature_dim, std::mt19937_64& rng) {
  EncoderWeights w;
  w.feature_dim = feature_dim;
  w.point_mlp = numerics::make_mlp({3, feature_dim, feature_dim}, rng);
  w.feat_mlp0 = numerics::make_mlp({feature_dim, feature_dim}, rng);
  for (int s = 0; s < 3; ++s) {
    EncoderWeights::Stage st;
    st.member_mlp = numerics::make_mlp({3 + feature_dim, feature_dim, feature_dim}, rng);
    st.feat_mlp = numerics::make_mlp({feature_dim, feature_dim}, rng);
    w.stages.push_back(std::move(st));
  }
  for (int s = 0; s < 3; ++s) {
    EncoderWeights::UpStage us;
    us.fuse_mlp = numerics::make_mlp({2 * feature_dim, feature_dim, feature_dim}, rng);
    w.ups.push_back(std::move(us));
  }
  return w;
}

void store_encoder_weights(const EncoderWeights& w, numerics::ParamSet& out) {
  store_mlp(w.point_mlp, "encoder.point_mlp", out);
  store_mlp(w.feat_mlp0, "encoder.feat_mlp0", out);
  for (size_t s = 0; s < w.stages.size(); ++s) {
    store_mlp(w.stages[s].member_mlp, "encoder.stage" + std::to_string(s) + ".member", out);
    store_mlp(w.stages[s].feat_mlp, "encoder.stage" + std::to_string(s) + ".feat", out);
  }
  for (size_t s = 0; s < w.ups.size(); ++s) {
    store_mlp(w.ups[s].fuse_mlp, "decoder.up" + std::to_string(s) + ".fuse", out);
  }
}

EncoderWeights load_encoder_weights(const numerics::ParamSet& in) {
  EncoderWeights w;
  w.point_mlp = load_mlp(in, "encoder.point_mlp");
  w.feat_mlp0 = load_mlp(in, "encoder.feat_mlp0");
  for (size_t s = 0;; ++s) {
    const std::string base = "encoder.stage" + std::to_string(s);
    if (!in.has(base + ".member.0.weight")) break;
    EncoderWeights::Stage st;
    st.member_mlp = load_mlp(in, base + ".member");
    st.feat_mlp = load_mlp(in, base + ".feat");
    w.stages.push_back(std::move(st));
  }
  for (size_t s = 0;; ++s) {
    const std::string base = "decoder.up" + std::to_string(s);
    if (!in.has(base + ".fuse.0.weight")) break;
    EncoderWeights::UpStage us;
    us.fuse_mlp = load_mlp(in, base + ".fuse");
    w.ups.push_back(std::move(us));
  }
  w.feature_dim = w.point_mlp.output_dim();
  return w;
}

EncoderLift lift_encoder(const EncoderWeights& w, std::vector<NodeRef>* leaves,
                         std::vector<std::string>* names) {
  EncoderLift lift;
  lift.point_mlp = lift_named(w.point_mlp, "encoder.point_mlp", leaves, names);
  lift.feat_mlp0 = lift_named(w.feat_mlp0, "encoder.feat_mlp0", leaves, names);
  for (size_t s = 0; s < w.stages.size(); ++s) {
    const std::string base = "encoder.stage" + std::to_string(s);
    lift.stages.emplace_back(lift_named(w.stages[s].member_mlp, base + ".member", leaves, names),
                             lift_named(w.stages[s].feat_mlp, base + ".feat", leaves, names));
  }
  for (size_t s = 0; s < w.ups.size(); ++s) {
    lift.ups.push_back(
        lift_named(w.ups[s].fuse_mlp, "decoder.up" + std::to_string(s) + ".fuse", leaves, names));
  }
  return lift;
}

EncodeGraph encode_graph(const PointCloud& cloud, const EncoderLift& lift,
                         double fine_voxel, double coarse_voxel) {
  if (cloud.points.empty()) throw std::invalid_argument("encode: empty cloud");
  if (!(fine_voxel > 0.0) || !(coarse_voxel > fine_voxel)) {
    throw std::invalid_argument("encode: bad voxel sizes");
  }

  // Level geometry: raw -> fine voxels, then three pooling stages up to the
  // coarse resolution.
  const int num_stages = static_cast<int>(lift.stages.size());
  std::vector<VoxelPartition> levels;
  levels.push_back(voxel_partition(cloud.points, fine_voxel));
  double size = fine_voxel;
  for (int s = 0; s < num_stages; ++s) {
    size *= 2.0;
    levels.push_back(voxel_partition(levels.back().centroids, size));
  }

  // Raw points -> fine-level features: each fine centroid pools an MLP over
  // its ball neighborhood of raw points.
  Grouping g0 = ball_grouping(cloud.points, levels[0], fine_voxel);
  NodeRef x = constant(relative_coords(cloud.points, levels[0], g0));
  x = mlp_forward(lift.point_mlp, x);
  x = segment_max(x, g0.segment_of_row, static_cast<int>(levels[0].centroids.size()));
  x = mlp_forward(lift.feat_mlp0, x);

  std::vector<NodeRef> level_feats;  // encoder features per level
  level_feats.push_back(x);
  double level_size = fine_voxel;
  for (int s = 0; s < num_stages; ++s) {
    level_size *= 2.0;
    const VoxelPartition& part = levels[s + 1];
    Grouping g = ball_grouping(levels[s].centroids, part, level_size);
    NodeRef coords = constant(relative_coords(levels[s].centroids, part, g));
    NodeRef h = concat_cols(coords, gather_rows(level_feats.back(), g.member_point));
    h = mlp_forward(lift.stages[s].first, h);
    h = segment_max(h, g.segment_of_row, static_cast<int>(part.centroids.size()));
    h = mlp_forward(lift.stages[s].second, h);
    level_feats.push_back(h);
  }

  // Decoder: unpool down the hierarchy with skip concatenation. Fine
  // descriptors are centered across the cloud and normalized to norm
  // sqrt(d): centering removes the shared activation-mean direction that
  // would otherwise make every descriptor look alike, and the fixed norm
  // puts match scores on a stable scale.
  NodeRef d = level_feats.back();
  for (int s = num_stages - 1; s >= 0; --s) {
    NodeRef up = gather_rows(d, levels[s + 1].voxel_of_point);
    d = mlp_forward(lift.ups[num_stages - 1 - s], concat_cols(up, level_feats[s]));
  }
  NodeRef mean = numerics::scale(numerics::col_sums(d), 1.0 / static_cast<double>(d->rows()));
  d = numerics::add_row_vec(d, numerics::neg(mean));
  d = numerics::scale(numerics::row_l2_normalize(d),
                      std::sqrt(static_cast<double>(d->cols())));

  EncodeGraph out;
  out.node_features = level_feats.back();
  out.fine_features = d;
  out.out.nodes = levels.back().centroids;
  out.out.fine_points = levels.front().centroids;
  out.out.node_features = out.node_features->value;
  out.out.fine_features = out.fine_features->value;
  out.out.fine_to_node.resize(levels.front().centroids.size());
  for (size_t i = 0; i < out.out.fine_to_node.size(); ++i) {
    int idx = static_cast<int>(i);
    for (int s = 1; s <= num_stages; ++s) idx = levels[s].voxel_of_point[idx];
    out.out.fine_to_node[i] = idx;
  }
  return out;
}

EncoderOutput encode(const PointCloud& cloud, const EncoderWeights& w,
                     double fine_voxel, double coarse_voxel) {
  return encode_graph(cloud, lift_encoder(w), fine_voxel, coarse_voxel).out;
}

MlpWeights init_vote_weights(int feature_dim, std::mt19937_64& rng) {
  return numerics::make_mlp({feature_dim, feature_dim, 3 + feature_dim}, rng);
}

VoteGraph vote_offsets_graph(const NodeRef& enhanced, const std::vector<Point3>& nodes,
                             const numerics::MlpGraph& vote_mlp, double clamp_radius) {
  if (enhanced->rows() != static_cast<int>(nodes.size())) {
    throw std::invalid_argument("vote_offsets: feature rows must match node count");
  }
  NodeRef raw = mlp_forward(vote_mlp, enhanced);
  if (raw->cols() != 3 + enhanced->cols()) {
    throw std::invalid_argument("vote_offsets: vote head must emit 3 + feature_dim columns");
  }
  VoteGraph g;
  g.offsets = clamp_row_norm(slice_cols(raw, 0, 3), clamp_radius);
  g.feature_offsets = slice_cols(raw, 3, raw->cols());
  Matrix node_mat(nodes.size(), 3);
  for (size_t i = 0; i < nodes.size(); ++i) {
    node_mat(static_cast<Eigen::Index>(i), 0) = nodes[i].x;
    node_mat(static_cast<Eigen::Index>(i), 1) = nodes[i].y;
    node_mat(static_cast<Eigen::Index>(i), 2) = nodes[i].z;
  }
  g.proposals = add(g.offsets, constant(std::move(node_mat)));
  g.features = add(enhanced, g.feature_offsets);
  return g;
}

VoteOutput vote_offsets(const Matrix& enhanced, const std::vector<Point3>& nodes,
                        const MlpWeights& vote_mlp, double clamp_radius) {
  VoteGraph g = vote_offsets_graph(constant(enhanced), nodes, numerics::lift_mlp(vote_mlp),
                                   clamp_radius);
  return {g.offsets->value, g.feature_offsets->value, g.proposals->value,
          g.features->value};
}

SuperpointSet radius_filter(const std::vector<Point3>& proposals, const Matrix& features,
                            double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius_filter: radius must be positive");
  if (features.rows() != static_cast<Eigen::Index>(proposals.size())) {
    throw std::invalid_argument("radius_filter: feature rows must match proposals");
  }
  SuperpointSet out;
  for (size_t i = 0; i < proposals.size(); ++i) {
    bool keep = true;
    for (const Point3& kept : out.superpoints) {
      if (geometry::distance(proposals[i], kept) <= radius) {
        keep = false;
        break;
      }
    }
    if (keep) {
      out.superpoints.push_back(proposals[i]);
      out.source_node.push_back(static_cast<int>(i));
    }
  }
  out.features.resize(out.superpoints.size(), features.cols());
  for (size_t i = 0; i < out.source_node.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(out.source_node[i]);
  }
  return out;
}

DetectionLift lift_detection(const DetectionWeights& w, std::vector<NodeRef>* leaves,
                             std::vector<std::string>* names) {
  DetectionLift lift;
  lift.encoder = lift_encoder(w.encoder, leaves, names);
  lift.stack = roformer::lift_attention(w.stack, leaves, names, "roformer");
  lift.vote = lift_named(w.vote, "vote", leaves, names);
  return lift;
}

namespace {

std::vector<Point3> proposal_points(const NodeRef& proposals) {
  std::vector<Point3> pts(proposals->rows());
  for (int i = 0; i < proposals->rows(); ++i) {
    pts[i] = {proposals->value(i, 0), proposals->value(i, 1), proposals->value(i, 2)};
  }
  return pts;
}

}  // namespace

Detection detect_superpoints_graph(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                   const DetectionLift& lift, const DetectionConfig& cfg) {
  if (cloud_a.points.empty() || cloud_b.points.empty()) {
    throw std::invalid_argument("detect_superpoints: empty cloud");
  }
  Detection det;
  det.enc_a = encode_graph(cloud_a, lift.encoder, cfg.fine_voxel, cfg.coarse_voxel);
  det.enc_b = encode_graph(cloud_b, lift.encoder, cfg.fine_voxel, cfg.coarse_voxel);

  auto pos_mat = [](const std::vector<Point3>& pts) {
    Matrix m(pts.size(), 3);
    for (size_t i = 0; i < pts.size(); ++i) {
      m(static_cast<Eigen::Index>(i), 0) = pts[i].x;
      m(static_cast<Eigen::Index>(i), 1) = pts[i].y;
      m(static_cast<Eigen::Index>(i), 2) = pts[i].z;
    }
    return m;
  };

  auto [fa, fb] = roformer::stack_forward(
      lift.stack, det.enc_a.node_features, constant(pos_mat(det.enc_a.out.nodes)),
      det.enc_b.node_features, constant(pos_mat(det.enc_b.out.nodes)), cfg.kind);
  det.enhanced_a = fa;
  det.enhanced_b = fb;

  auto detect_side = [&](const EncodeGraph& enc, const NodeRef& enhanced,
                         NodeRef& proposals, NodeRef& prop_feat, SuperpointSet& sp,
                         NodeRef& sp_feat, PatchPartition& part) {
    if (cfg.voting_enabled) {
      VoteGraph vote = vote_offsets_graph(enhanced, enc.out.nodes, lift.vote,
                                          cfg.clamp_radius);
      proposals = vote.proposals;
      prop_feat = vote.features;
      sp = radius_filter(proposal_points(proposals), prop_feat->value, cfg.filter_radius);
      sp_feat = gather_rows(prop_feat, sp.source_node);
    } else {
      // Bypass: raw nodes become the superpoints.
      proposals = constant(pos_mat(enc.out.nodes));
      prop_feat = enhanced;
      sp.superpoints = enc.out.nodes;
      sp.features = enhanced->value;
      sp.source_node.resize(enc.out.nodes.size());
      for (size_t i = 0; i < sp.source_node.size(); ++i) sp.source_node[i] = static_cast<int>(i);
      sp_feat = enhanced;
    }
    PointCloud fine;
    fine.points = enc.out.fine_points;
    part = geometry::point_to_node_partition(fine, sp.superpoints);
  };

  detect_side(det.enc_a, det.enhanced_a, det.proposals_a, det.prop_feat_a, det.sp_a,
              det.sp_feat_a, det.part_a);
  detect_side(det.enc_b, det.enhanced_b, det.proposals_b, det.prop_feat_b, det.sp_b,
              det.sp_feat_b, det.part_b);
  return det;
}

DetectionResult detect_superpoints(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                   const DetectionWeights& w, const DetectionConfig& cfg) {
  Detection det = detect_superpoints_graph(cloud_a, cloud_b, lift_detection(w), cfg);
  DetectionResult out;
  out.sp_a = std::move(det.sp_a);
  out.sp_b = std::move(det.sp_b);
  out.part_a = std::move(det.part_a);
  out.part_b = std::move(det.part_b);
  out.enc_a = std::move(det.enc_a.out);
  out.enc_b = std::move(det.enc_b.out);
  return out;
}

}  // namespace rdm::superpoint
