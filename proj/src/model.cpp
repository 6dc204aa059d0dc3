#include "rdm/model.hpp"

#include <random>

#include "rdm/errors.hpp"
#include "rdm/pose.hpp"

namespace rdm::model {

using numerics::Matrix;
using numerics::NodeRef;

ModelWeights init_model(const cli::Config& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ModelWeights w;
  w.match.detection.encoder = superpoint::init_encoder_weights(cfg.feature_dim, rng);
  w.match.detection.stack =
      roformer::init_attention_weights(cfg.feature_dim, cfg.layers, rng);
  w.match.detection.vote = superpoint::init_vote_weights(cfg.feature_dim, rng);
  w.match.matcher = roformer::init_attention_weights(cfg.feature_dim, cfg.layers, rng);
  w.match.dustbin_alpha = Matrix::Constant(1, 1, 1.0);
  return w;
}

numerics::ParamSet to_param_set(const ModelWeights& w) {
  numerics::ParamSet p;
  superpoint::store_encoder_weights(w.match.detection.encoder, p);
  roformer::store_attention_weights(w.match.detection.stack, "roformer", p);
  for (size_t i = 0; i < w.match.detection.vote.layers.size(); ++i) {
    const auto& l = w.match.detection.vote.layers[i];
    p.tensors["vote." + std::to_string(i) + ".weight"] = l.weight;
    if (l.bias) p.tensors["vote." + std::to_string(i) + ".bias"] = *l.bias;
  }
  roformer::store_attention_weights(w.match.matcher, "roformer2", p);
  p.tensors["matching.dustbin_alpha"] = w.match.dustbin_alpha;
  return p;
}

ModelWeights from_param_set(const numerics::ParamSet& p) {
  ModelWeights w;
  w.match.detection.encoder = superpoint::load_encoder_weights(p);
  w.match.detection.stack = roformer::load_attention_weights(p, "roformer");
  for (size_t i = 0;; ++i) {
    const std::string base = "vote." + std::to_string(i);
    if (!p.has(base + ".weight")) break;
    numerics::MlpLayer l;
    l.weight = p.at(base + ".weight");
    if (p.has(base + ".bias")) l.bias = p.at(base + ".bias");
    w.match.detection.vote.layers.push_back(std::move(l));
  }
  for (size_t i = 0; i < w.match.detection.vote.layers.size(); ++i) {
    w.match.detection.vote.layers[i].act =
        (i + 1 < w.match.detection.vote.layers.size()) ? numerics::Activation::LeakyRelu
                                                       : numerics::Activation::Identity;
  }
  w.match.matcher = roformer::load_attention_weights(p, "roformer2");
  w.match.dustbin_alpha = p.at("matching.dustbin_alpha");
  return w;
}

matching::MatchConfig match_config(const cli::Config& cfg) {
  matching::MatchConfig mc;
  mc.detection.fine_voxel = cfg.fine_voxel;
  mc.detection.coarse_voxel = cfg.coarse_voxel;
  mc.detection.clamp_radius = cfg.clamp_radius;
  mc.detection.filter_radius = cfg.filter_radius;
  mc.detection.voting_enabled = cfg.voting_enabled;
  mc.detection.kind = roformer::embedding_kind_from_string(cfg.embedding);
  mc.num_coarse = cfg.num_coarse;
  mc.sinkhorn_iters = cfg.sinkhorn_iters;
  mc.min_patch_points = 3;
  mc.max_patch_points = 0;
  mc.feature_dim = cfg.feature_dim;
  return mc;
}

SceneLoss build_scene_loss(const datakit::RegistrationPair& pair, const ModelWeights& w,
                           const cli::Config& cfg, std::mt19937_64* subsample_rng) {
  SceneLoss out;
  matching::MatchLift lift = matching::lift_match(w.match, &out.leaves, &out.names);

  matching::MatchConfig mc = match_config(cfg);
  mc.max_patch_points = cfg.train_max_patch_points;
  mc.num_coarse = std::min(cfg.num_coarse, cfg.train_max_pairs);

  matching::MatchGraphResult res = matching::match_pair_graph(
      pair.source.cloud, pair.target.cloud, lift, mc, subsample_rng);

  const auto& det = res.detection;
  losses::GroundTruthSupervision sup = losses::build_supervision(
      det.enc_a.out.fine_points, det.enc_b.out.fine_points, det.part_a, det.part_b,
      pair.gt_relative, cfg.match_tau);

  NodeRef ls1, ls2;
  if (cfg.voting_enabled) {
    std::tie(ls1, ls2) = losses::superpoint_chamfer_losses(
        det.proposals_a, det.proposals_b, pair.source.cloud, pair.target.cloud,
        pair.gt_relative);
  } else {
    ls1 = numerics::constant(Matrix::Zero(1, 1));
    ls2 = numerics::constant(Matrix::Zero(1, 1));
  }

  losses::CircleLossParams cp;
  cp.pos_margin = cfg.circle_pos_margin;
  cp.neg_margin = cfg.circle_neg_margin;
  cp.gamma = cfg.circle_gamma;
  losses::CircleLossResult circle =
      losses::overlap_circle_loss(res.coarse_feat_a, res.coarse_feat_b, sup, cp);

  NodeRef lf;
  if (res.patches.empty()) {
    lf = numerics::constant(Matrix::Zero(1, 1));
  } else {
    NodeRef acc;
    for (const auto& p : res.patches) {
      Matrix gt_m = losses::gt_match_matrix(det.enc_a.out.fine_points,
                                            det.enc_b.out.fine_points, p.points_a,
                                            p.points_b, pair.gt_relative, cfg.match_tau);
      NodeRef term = losses::gap_loss(p.transport, gt_m, cfg.gap_eta);
      acc = acc ? numerics::add(acc, term) : term;
    }
    lf = numerics::scale(acc, 1.0 / (2.0 * static_cast<double>(res.patches.size())));
  }

  out.breakdown = losses::total_loss(ls1, ls2, circle.value, lf);
  return out;
}

RegistrationOutput register_pair(const geometry::PointCloud& cloud_a,
                                 const geometry::PointCloud& cloud_b,
                                 const ModelWeights& w, const cli::Config& cfg) {
  matching::MatchConfig mc = match_config(cfg);
  matching::MatchGraphResult res =
      matching::match_pair_graph(cloud_a, cloud_b, matching::lift_match(w.match), mc);

  RegistrationOutput out;
  out.coarse = std::move(res.coarse);
  out.dense = std::move(res.dense);
  out.fine_a.points = res.detection.enc_a.out.fine_points;
  out.fine_b.points = res.detection.enc_b.out.fine_points;
  out.fine_count_a = static_cast<int>(out.fine_a.points.size());
  out.fine_count_b = static_cast<int>(out.fine_b.points.size());

  if (cfg.estimator == "svd") {
    std::vector<pose::WeightedCorrespondence> wc;
    wc.reserve(out.dense.matches.size());
    for (const auto& m : out.dense.matches) {
      wc.push_back({out.fine_a.points[m.a], out.fine_b.points[m.b], m.score});
    }
    out.estimate.transform = pose::weighted_svd(wc);
    out.estimate.inlier_threshold = cfg.inlier_threshold;
    const double t2 = cfg.inlier_threshold * cfg.inlier_threshold;
    for (const auto& m : out.dense.matches) {
      const Eigen::Vector3d r = out.estimate.transform(out.fine_a.points[m.a].vec()) -
                                out.fine_b.points[m.b].vec();
      if (r.squaredNorm() <= t2) ++out.estimate.inlier_count;
    }
    out.estimate.converged = out.estimate.inlier_count >= 3;
  } else if (cfg.estimator == "ransac") {
    out.estimate = pose::ransac_registration(out.dense, out.fine_a, out.fine_b,
                                             cfg.ransac_iters, cfg.inlier_threshold,
                                             cfg.seed);
  } else {
    out.estimate = pose::local_to_global_registration(
        out.dense, out.fine_a, out.fine_b, cfg.inlier_threshold, cfg.lgr_refine_rounds);
  }
  return out;
}

}  // namespace rdm::model
