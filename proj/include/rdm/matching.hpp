#pragma once

#include <string>
#include <vector>

#include "rdm/autodiff.hpp"
#include "rdm/geometry.hpp"
#include "rdm/superpoint.hpp"

namespace rdm::matching {

using geometry::PointCloud;
using numerics::Matrix;
using numerics::NodeRef;

struct CoarseMatch {
  int a = 0;  // superpoint index in A
  int b = 0;  // superpoint index in B
  double score = 0.0;
};

// Scores descending; ties broken by (row, col).
using CoarseCorrespondences = std::vector<CoarseMatch>;

// Dustbin-augmented transport in the exp domain: (M+1) x (N+1), interior row
// marginals 1, dustbin marginals N resp. M.
struct AssignmentMatrix {
  Matrix transport;
  int interior_rows = 0;
  int interior_cols = 0;
};

struct DenseMatch {
  int a = 0;  // fine point index in A
  int b = 0;  // fine point index in B
  double score = 0.0;
  int patch = 0;  // coarse-match index this pair came from
};

struct DenseCorrespondences {
  std::vector<DenseMatch> matches;
};

// Gaussian correlation between row-normalized feature sets:
// c_ij = exp(-|h_i - h_j|^2) on unit rows, entries in (0, 1].
Matrix gaussian_correlation(const Matrix& ha, const Matrix& hb);
NodeRef gaussian_correlation_graph(const NodeRef& ha, const NodeRef& hb);

// Row/column normalization product suppressing ambiguous many-to-many matches.
Matrix dual_normalize(const Matrix& c);

// The n_c globally largest entries as (row, col, score), descending score,
// ties by (row, col).
CoarseCorrespondences topk_correspondences(const Matrix& scores, int n_c);

// Scaled dot products between patch feature sets: F_a F_b^T / sqrt(d).
Matrix patch_score_matrix(const Matrix& fa, const Matrix& fb);
NodeRef patch_score_matrix_graph(const NodeRef& fa, const NodeRef& fb);

// Log-domain Sinkhorn over the dustbin-augmented score matrix. Row marginals
// are (1,...,1,N), column marginals (1,...,1,M); alpha fills the appended row
// and column (corner included).
AssignmentMatrix sinkhorn_with_dustbin(const Matrix& scores, double alpha, int iters);
NodeRef sinkhorn_with_dustbin_graph(const NodeRef& scores, const NodeRef& alpha,
                                    int iters);

// Mutual row/column argmax extraction; a point whose argmax is the dustbin
// stays unmatched. Results are the deduplicated union of both sides, row side
// first. Indices are mapped through the given patch membership lists.
DenseCorrespondences extract_dense_matches(const AssignmentMatrix& z,
                                           const std::vector<int>& patch_a,
                                           const std::vector<int>& patch_b,
                                           int patch_id = 0);

struct MatchConfig {
  superpoint::DetectionConfig detection;
  int num_coarse = 128;      // coarse correspondences kept
  int sinkhorn_iters = 100;
  double dustbin_alpha = 1.0;
  int min_patch_points = 3;  // patches below this skip dense matching
  int max_patch_points = 0;  // 0 = unlimited; larger patches are subsampled
  int feature_dim = 64;
};

struct MatchWeights {
  superpoint::DetectionWeights detection;
  roformer::AttentionWeights matcher;  // second attention stack
  Matrix dustbin_alpha;                // 1 x 1, learnable
};

// One dense-matched patch pair on the graph path.
struct PatchAssignment {
  int coarse_index = 0;
  std::vector<int> points_a;  // fine indices entering the score matrix
  std::vector<int> points_b;
  NodeRef transport;          // (M+1) x (N+1)
};

struct MatchGraphResult {
  superpoint::Detection detection;
  NodeRef coarse_feat_a, coarse_feat_b;  // matcher-stack output
  CoarseCorrespondences coarse;
  std::vector<PatchAssignment> patches;
  DenseCorrespondences dense;
};

struct MatchLift {
  superpoint::DetectionLift detection;
  roformer::AttentionGraph matcher;
  NodeRef dustbin_alpha;
};
MatchLift lift_match(const MatchWeights& w, std::vector<NodeRef>* leaves = nullptr,
                     std::vector<std::string>* names = nullptr);

MatchGraphResult match_pair_graph(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                  const MatchLift& lift, const MatchConfig& cfg,
                                  std::mt19937_64* subsample_rng = nullptr);

std::pair<CoarseCorrespondences, DenseCorrespondences> match_pair(
    const PointCloud& cloud_a, const PointCloud& cloud_b, const MatchWeights& w,
    const MatchConfig& cfg);

// Text dump: "# coarse <n>" / "# dense <n>" headers, one "a b score" line per
// match.
void write_correspondences(std::ostream& os, const CoarseCorrespondences& coarse,
                           const DenseCorrespondences& dense);

}  // namespace rdm::matching
