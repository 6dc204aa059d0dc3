#include "rdm/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace rdm::numerics {

bool MlpWeights::pure_linear() const {
  if (layers.size() != 1) return false;
  const auto& l = layers.front();
  return !l.bias.has_value() && l.act == Activation::Identity;
}

void MlpWeights::validate() const {
  if (layers.empty()) throw std::invalid_argument("mlp: no layers");
  for (size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].weight.cols() != layers[i + 1].weight.rows()) {
      throw std::invalid_argument("mlp: layer dimensions do not chain");
    }
  }
  for (const auto& l : layers) {
    if (l.bias && (l.bias->rows() != 1 || l.bias->cols() != l.weight.cols())) {
      throw std::invalid_argument("mlp: bias shape mismatch");
    }
  }
}

MlpGraph lift_mlp(const MlpWeights& w, std::vector<NodeRef>* leaves) {
  w.validate();
  MlpGraph g;
  for (const auto& l : w.layers) {
    MlpGraph::Layer gl;
    gl.weight = leaf(l.weight);
    if (leaves) leaves->push_back(gl.weight);
    if (l.bias) {
      gl.bias = leaf(*l.bias);
      if (leaves) leaves->push_back(gl.bias);
    }
    gl.act = l.act;
    g.layers.push_back(std::move(gl));
  }
  return g;
}

NodeRef mlp_forward(const MlpGraph& g, const NodeRef& x) {
  NodeRef h = x;
  for (const auto& l : g.layers) {
    if (h->cols() != l.weight->rows()) {
      throw std::invalid_argument("mlp_forward: input dimension mismatch");
    }
    h = matmul(h, l.weight);
    if (l.bias) h = add_row_vec(h, l.bias);
    if (l.act == Activation::LeakyRelu) h = leaky_relu(h);
  }
  return h;
}

NodeRef mlp_forward(const MlpWeights& w, const NodeRef& x) {
  return mlp_forward(lift_mlp(w), x);
}

Matrix mlp_apply(const MlpWeights& w, const Matrix& x) {
  w.validate();
  Matrix h = x;
  for (const auto& l : w.layers) {
    if (h.cols() != l.weight.rows()) {
      throw std::invalid_argument("mlp_apply: input dimension mismatch");
    }
    h = h * l.weight;
    if (l.bias) h.rowwise() += Eigen::RowVectorXd(l.bias->row(0));
    if (l.act == Activation::LeakyRelu) {
      h = h.unaryExpr([](double v) { return v > 0.0 ? v : 0.01 * v; });
    }
  }
  return h;
}

MlpWeights make_mlp(const std::vector<int>& dims, std::mt19937_64& rng,
                    bool final_bias) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least two dims");
  MlpWeights w;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = (i + 2 == dims.size());
    MlpLayer layer;
    const double scale = std::sqrt(2.0 / static_cast<double>(dims[i]));
    layer.weight = random_uniform(dims[i], dims[i + 1], -scale, scale, rng);
    if (!last || final_bias) layer.bias = Matrix::Zero(1, dims[i + 1]);
    layer.act = last ? Activation::Identity : Activation::LeakyRelu;
    w.layers.push_back(std::move(layer));
  }
  return w;
}

MlpWeights make_pure_linear(int in, int out, std::mt19937_64& rng, double scale) {
  MlpWeights w;
  MlpLayer layer;
  layer.weight = random_uniform(in, out, -scale, scale, rng);
  layer.act = Activation::Identity;
  w.layers.push_back(std::move(layer));
  return w;
}

}  // namespace rdm::numerics
