#pragma once

#include <optional>
#include <random>
#include <vector>

#include "rdm/autodiff.hpp"
#include "rdm/matrix.hpp"

namespace rdm::numerics {

enum class Activation { Identity, LeakyRelu };

// One affine layer: x (n x in) -> x * weight (in x out) [+ bias (1 x out)].
// A pure-linear layer has no bias and Identity activation.
struct MlpLayer {
  Matrix weight;
  std::optional<Matrix> bias;
  Activation act = Activation::LeakyRelu;
};

struct MlpWeights {
  std::vector<MlpLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.rows()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.cols()); }
  bool pure_linear() const;
  // Throws if consecutive layer dimensions do not chain.
  void validate() const;
};

// Weight nodes lifted into a graph, mirroring MlpWeights layer by layer.
struct MlpGraph {
  struct Layer {
    NodeRef weight;
    NodeRef bias;  // null when absent
    Activation act;
  };
  std::vector<Layer> layers;
};

// Lifts weights into graph leaves; appends them to `leaves` when non-null
// (weight first, then bias, per layer).
MlpGraph lift_mlp(const MlpWeights& w, std::vector<NodeRef>* leaves = nullptr);

NodeRef mlp_forward(const MlpGraph& g, const NodeRef& x);
// Convenience overload; the weights are lifted as constants.
NodeRef mlp_forward(const MlpWeights& w, const NodeRef& x);
Matrix mlp_apply(const MlpWeights& w, const Matrix& x);

// Uniform He-style init. Hidden layers use LeakyRelu, the last layer is
// affine with Identity activation.
MlpWeights make_mlp(const std::vector<int>& dims, std::mt19937_64& rng,
                    bool final_bias = true);
// Single layer, no bias, Identity activation.
MlpWeights make_pure_linear(int in, int out, std::mt19937_64& rng, double scale);

}  // namespace rdm::numerics
