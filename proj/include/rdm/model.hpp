#pragma once

#include <string>
#include <vector>

#include "rdm/checkpoint.hpp"
#include "rdm/config.hpp"
#include "rdm/datakit.hpp"
#include "rdm/losses.hpp"
#include "rdm/matching.hpp"
#include "rdm/pose.hpp"

namespace rdm::model {

// All trainable state of the registration pipeline.
struct ModelWeights {
  matching::MatchWeights match;
};

ModelWeights init_model(const cli::Config& cfg);
numerics::ParamSet to_param_set(const ModelWeights& w);
ModelWeights from_param_set(const numerics::ParamSet& p);

matching::MatchConfig match_config(const cli::Config& cfg);

// Training graph for one pair: the full pipeline forward plus all four loss
// terms. `leaves`/`names` receive the lifted parameters for the optimizer.
struct SceneLoss {
  losses::LossBreakdown breakdown;
  std::vector<numerics::NodeRef> leaves;
  std::vector<std::string> names;
};
SceneLoss build_scene_loss(const datakit::RegistrationPair& pair, const ModelWeights& w,
                           const cli::Config& cfg, std::mt19937_64* subsample_rng);

// Full registration of one pair with the configured estimator.
struct RegistrationOutput {
  matching::CoarseCorrespondences coarse;
  matching::DenseCorrespondences dense;
  pose::PoseEstimate estimate;
  int fine_count_a = 0;
  int fine_count_b = 0;
  geometry::PointCloud fine_a;
  geometry::PointCloud fine_b;
};
RegistrationOutput register_pair(const geometry::PointCloud& cloud_a,
                                 const geometry::PointCloud& cloud_b,
                                 const ModelWeights& w, const cli::Config& cfg);

}  // namespace rdm::model
