#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rdm/autodiff.hpp"
#include "rdm/checkpoint.hpp"
#include "rdm/geometry.hpp"
#include "rdm/matrix.hpp"
#include "rdm/mlp.hpp"

namespace rdm::roformer {

using geometry::Point3;
using numerics::Matrix;
using numerics::MlpWeights;
using numerics::NodeRef;

enum class EmbeddingKind { Rotary, Vanilla, AbsolutePosition, PairwiseGeometric };
EmbeddingKind embedding_kind_from_string(const std::string& s);
std::string to_string(EmbeddingKind k);

struct LinearWeights {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

// One interleaving: self-attention within each cloud, then cross-attention,
// each followed by a residual add and a feed-forward sublayer.
struct AttentionLayerWeights {
  LinearWeights q_self, k_self, v_self;
  MlpWeights ffn_self;
  LinearWeights q_cross, k_cross, v_cross;
  MlpWeights ffn_cross;
};

struct AttentionWeights {
  MlpWeights rot_map;  // pure linear, 3 -> feature_dim / 2
  std::vector<AttentionLayerWeights> layers;
  int feature_dim = 0;

  int depth() const { return static_cast<int>(layers.size()); }
};

// ffn_hidden <= 0 selects a hidden width equal to feature_dim.
AttentionWeights init_attention_weights(int feature_dim, int num_layers,
                                        std::mt19937_64& rng, int ffn_hidden = 0);

// Checkpoint names: "<prefix>.layer{i}.{q|k|v|ffn}.{self|cross}.*" plus
// "<prefix>.rot_map".
void store_attention_weights(const AttentionWeights& w, const std::string& prefix,
                             numerics::ParamSet& out);
AttentionWeights load_attention_weights(const numerics::ParamSet& in,
                                        const std::string& prefix);

// Extra weights for the comparison embeddings. The pairwise-geometric kind
// materializes one distance-bucket embedding vector per node pair, which
// makes its storage quadratic in the node count.
struct BaselineWeights {
  LinearWeights ape;        // 3 -> feature_dim, added to features up front
  Matrix geo_table;         // num_buckets x pair_dim
  LinearWeights geo_query;  // feature_dim -> pair_dim
  double geo_bucket_size = 1.0;
};
BaselineWeights init_baseline_weights(int feature_dim, int pair_dim, int num_buckets,
                                      double bucket_size, std::mt19937_64& rng);

// --- value-level operations ------------------------------------------------

// Per-point angle vectors: row i holds the d/2 rotation angles of point i.
// rot_map must be a single pure-linear layer (3 -> d/2); anything else
// breaks the additivity contract and is rejected.
Matrix rotary_angles(const std::vector<Point3>& positions, const MlpWeights& rot_map);

// Rotates consecutive pairs (v0,v1), (v2,v3), ... by the matching angles.
std::vector<double> apply_rotary(const std::vector<double>& vec,
                                 const std::vector<double>& angles);

// Single rotary self-attention application using the first layer's self
// projections: alpha = softmax((R q)^T R k), output rows = alpha * v.
Matrix rotary_self_attention(const Matrix& features,
                             const std::vector<Point3>& positions,
                             const AttentionWeights& w);

// Plain attention between feature sets (no positional term).
Matrix cross_attention(const Matrix& query_features, const Matrix& source_features,
                       const AttentionWeights& w);

// Full interleaved stack on a cloud pair, value level.
std::pair<Matrix, Matrix> roformer_stack(const Matrix& feat_a,
                                         const std::vector<Point3>& pos_a,
                                         const Matrix& feat_b,
                                         const std::vector<Point3>& pos_b,
                                         const AttentionWeights& w,
                                         EmbeddingKind kind = EmbeddingKind::Rotary,
                                         const BaselineWeights* baselines = nullptr);

// --- graph-level builders ----------------------------------------------------

struct AttentionGraph {
  numerics::MlpGraph rot_map;
  struct Layer {
    NodeRef qw_s, qb_s, kw_s, kb_s, vw_s, vb_s;
    numerics::MlpGraph ffn_s;
    NodeRef qw_c, qb_c, kw_c, kb_c, vw_c, vb_c;
    numerics::MlpGraph ffn_c;
  };
  std::vector<Layer> layers;
};

AttentionGraph lift_attention(const AttentionWeights& w,
                              std::vector<NodeRef>* leaves = nullptr,
                              std::vector<std::string>* names = nullptr,
                              const std::string& prefix = "");

NodeRef rotary_angles_graph(const NodeRef& positions, const AttentionGraph& g);

// Interleaved stack over graph nodes; positions may be constants or live
// nodes (gradients then flow into them). Supports Rotary, Vanilla and
// AbsolutePosition kinds; the pairwise-geometric kind exists only on the
// inference path.
std::pair<NodeRef, NodeRef> stack_forward(const AttentionGraph& g, NodeRef feat_a,
                                          NodeRef pos_a, NodeRef feat_b, NodeRef pos_b,
                                          EmbeddingKind kind = EmbeddingKind::Rotary,
                                          const BaselineWeights* baselines = nullptr);

// --- instrumented inference path --------------------------------------------

// Tracks transient buffer bytes on the inference path so the benchmark can
// report a peak auxiliary allocation estimate.
struct AllocTracker {
  static void reset();
  static void add(size_t bytes);
  static void remove(size_t bytes);
  static size_t peak_bytes();
  static size_t current_bytes();
};

// Streaming forward pass: attention rows are processed in blocks, so no
// n x n score matrix is ever materialized for the rotary / vanilla / APE
// kinds. The pairwise-geometric kind builds its pair-embedding tensor up
// front. Output matches stack_forward within floating-point noise.
std::pair<Matrix, Matrix> stack_infer(const AttentionWeights& w, const Matrix& feat_a,
                                      const std::vector<Point3>& pos_a,
                                      const Matrix& feat_b,
                                      const std::vector<Point3>& pos_b,
                                      EmbeddingKind kind,
                                      const BaselineWeights* baselines = nullptr);

}  // namespace rdm::roformer
