#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace rdm::cli {

// Pipeline and training configuration. File format: UTF-8 "key = value"
// lines, '#' starts a comment; command-line flags override file values.
struct Config {
  // geometry / pipeline
  double fine_voxel = 0.6;
  double coarse_voxel = 4.8;
  int feature_dim = 64;
  int layers = 3;
  int num_coarse = 128;
  int sinkhorn_iters = 100;
  double clamp_radius = 2.4;
  double filter_radius = 2.4;
  bool voting_enabled = true;
  std::string embedding = "rotary";
  std::string estimator = "lgr";  // svd | ransac | lgr
  int ransac_iters = 50000;
  int lgr_refine_rounds = 5;

  // metrics
  double inlier_threshold = 0.6;
  double rr_rot_threshold_deg = 5.0;
  double rr_trans_threshold_m = 2.0;
  double fmr_threshold = 0.05;

  // losses
  double circle_pos_margin = 0.1;
  double circle_neg_margin = 1.4;
  double circle_gamma = 24.0;
  double gap_eta = 0.5;
  double match_tau = 0.6;

  // training
  double lr = 1e-4;
  double lr_decay_factor = 0.95;
  int lr_decay_epochs = 4;
  double grad_clip = 10.0;
  int train_max_pairs = 24;        // fine-loss patch pairs per step
  int train_max_patch_points = 32; // patch subsample cap during training
  uint64_t seed = 7;

  // synthetic scenes
  int synth_objects = 12;
  double synth_extent = 20.0;
  double synth_overlap = 0.6;
  double synth_noise = 0.05;

  void validate() const;
};

Config parse_config_file(const std::string& path);
// Applies "key=value" overrides on top of `base`.
Config apply_overrides(Config base, const std::map<std::string, std::string>& kv);

}  // namespace rdm::cli
