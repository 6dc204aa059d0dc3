#include "rdm/roformer.hpp"

#include <atomic>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace rdm::roformer {

namespace {

using numerics::add;
using numerics::add_row_vec;
using numerics::apply_rotary_rows;
using numerics::constant;
using numerics::leaf;
using numerics::matmul;
using numerics::mlp_forward;
using numerics::softmax_rows;
using numerics::transpose;

Matrix positions_matrix(const std::vector<Point3>& pos) {
  Matrix m(pos.size(), 3);
  for (size_t i = 0; i < pos.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = pos[i].x;
    m(static_cast<Eigen::Index>(i), 1) = pos[i].y;
    m(static_cast<Eigen::Index>(i), 2) = pos[i].z;
  }
  return m;
}

LinearWeights init_linear(int in, int out, std::mt19937_64& rng) {
  const double s = std::sqrt(1.0 / static_cast<double>(in));
  return {numerics::random_uniform(in, out, -s, s, rng), Matrix::Zero(1, out)};
}

}  // namespace

EmbeddingKind embedding_kind_from_string(const std::string& s) {
  if (s == "rotary") return EmbeddingKind::Rotary;
  if (s == "vanilla") return EmbeddingKind::Vanilla;
  if (s == "absolute-position" || s == "ape") return EmbeddingKind::AbsolutePosition;
  if (s == "pairwise-geometric" || s == "geo") return EmbeddingKind::PairwiseGeometric;
  throw std::invalid_argument("unknown embedding kind: " + s);
}

std::string to_string(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::Rotary: return "rotary";
    case EmbeddingKind::Vanilla: return "vanilla";
    case EmbeddingKind::AbsolutePosition: return "absolute-position";
    case EmbeddingKind::PairwiseGeometric: return "pairwise-geometric";
  }
  return "?";
}

AttentionWeights init_attention_weights(int feature_dim, int num_layers,
                                        std::mt19937_64& rng, int ffn_hidden) {
  if (feature_dim < 2 || feature_dim % 2 != 0) {
    throw std::invalid_argument("feature_dim must be even and >= 2");
  }
  if (num_layers < 1) throw std::invalid_argument("need at least one layer");
  if (ffn_hidden <= 0) ffn_hidden = feature_dim;
  AttentionWeights w;
  w.feature_dim = feature_dim;
  w.rot_map = numerics::make_pure_linear(3, feature_dim / 2, rng, 0.5);
  for (int i = 0; i < num_layers; ++i) {
    AttentionLayerWeights l;
    l.q_self = init_linear(feature_dim, feature_dim, rng);
    l.k_self = init_linear(feature_dim, feature_dim, rng);
    l.v_self = init_linear(feature_dim, feature_dim, rng);
    l.ffn_self = numerics::make_mlp({feature_dim, ffn_hidden, feature_dim}, rng);
    l.q_cross = init_linear(feature_dim, feature_dim, rng);
    l.k_cross = init_linear(feature_dim, feature_dim, rng);
    l.v_cross = init_linear(feature_dim, feature_dim, rng);
    l.ffn_cross = numerics::make_mlp({feature_dim, ffn_hidden, feature_dim}, rng);
    w.layers.push_back(std::move(l));
  }
  return w;
}

BaselineWeights init_baseline_weights(int feature_dim, int pair_dim, int num_buckets,
                                      double bucket_size, std::mt19937_64& rng) {
  BaselineWeights b;
  b.ape = init_linear(3, feature_dim, rng);
  b.geo_table = numerics::random_uniform(num_buckets, pair_dim, -0.5, 0.5, rng);
  b.geo_query = init_linear(feature_dim, pair_dim, rng);
  b.geo_bucket_size = bucket_size;
  return b;
}

namespace {

void store_mlp(const MlpWeights& m, const std::string& prefix, numerics::ParamSet& out) {
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    out.tensors[base + ".weight"] = m.layers[i].weight;
    if (m.layers[i].bias) out.tensors[base + ".bias"] = *m.layers[i].bias;
  }
}

MlpWeights load_mlp(const numerics::ParamSet& in, const std::string& prefix,
                    size_t num_layers, numerics::Activation hidden_act) {
  MlpWeights m;
  for (size_t i = 0; i < num_layers; ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    numerics::MlpLayer l;
    l.weight = in.at(base + ".weight");
    if (in.has(base + ".bias")) l.bias = in.at(base + ".bias");
    l.act = (i + 1 < num_layers) ? hidden_act : numerics::Activation::Identity;
    m.layers.push_back(std::move(l));
  }
  return m;
}

void store_linear(const LinearWeights& l, const std::string& prefix,
                  numerics::ParamSet& out) {
  out.tensors[prefix + ".weight"] = l.weight;
  out.tensors[prefix + ".bias"] = l.bias;
}

LinearWeights load_linear(const numerics::ParamSet& in, const std::string& prefix) {
  return {in.at(prefix + ".weight"), in.at(prefix + ".bias")};
}

}  // namespace

void store_attention_weights(const AttentionWeights& w, const std::string& prefix,
                             numerics::ParamSet& out) {
  out.tensors[prefix + ".rot_map"] = w.rot_map.layers.front().weight;
  for (size_t i = 0; i < w.layers.size(); ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    store_linear(w.layers[i].q_self, base + ".q.self", out);
    store_linear(w.layers[i].k_self, base + ".k.self", out);
    store_linear(w.layers[i].v_self, base + ".v.self", out);
    store_mlp(w.layers[i].ffn_self, base + ".ffn.self", out);
    store_linear(w.layers[i].q_cross, base + ".q.cross", out);
    store_linear(w.layers[i].k_cross, base + ".k.cross", out);
    store_linear(w.layers[i].v_cross, base + ".v.cross", out);
    store_mlp(w.layers[i].ffn_cross, base + ".ffn.cross", out);
  }
}

AttentionWeights load_attention_weights(const numerics::ParamSet& in,
                                        const std::string& prefix) {
  AttentionWeights w;
  {
    numerics::MlpLayer l;
    l.weight = in.at(prefix + ".rot_map");
    l.act = numerics::Activation::Identity;
    w.rot_map.layers.push_back(std::move(l));
  }
  w.feature_dim = static_cast<int>(w.rot_map.layers.front().weight.cols()) * 2;
  for (size_t i = 0;; ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    if (!in.has(base + ".q.self.weight")) break;
    AttentionLayerWeights l;
    l.q_self = load_linear(in, base + ".q.self");
    l.k_self = load_linear(in, base + ".k.self");
    l.v_self = load_linear(in, base + ".v.self");
    l.ffn_self = load_mlp(in, base + ".ffn.self", 2, numerics::Activation::LeakyRelu);
    l.q_cross = load_linear(in, base + ".q.cross");
    l.k_cross = load_linear(in, base + ".k.cross");
    l.v_cross = load_linear(in, base + ".v.cross");
    l.ffn_cross = load_mlp(in, base + ".ffn.cross", 2, numerics::Activation::LeakyRelu);
    w.layers.push_back(std::move(l));
  }
  if (w.layers.empty()) throw std::invalid_argument("no attention layers under prefix " + prefix);
  return w;
}

Matrix rotary_angles(const std::vector<Point3>& positions, const MlpWeights& rot_map) {
  if (!rot_map.pure_linear()) {
    throw std::invalid_argument("rotary map must be a single pure-linear layer");
  }
  if (rot_map.input_dim() != 3) {
    throw std::invalid_argument("rotary map must take 3-dimensional positions");
  }
  return positions_matrix(positions) * rot_map.layers.front().weight;
}

std::vector<double> apply_rotary(const std::vector<double>& vec,
                                 const std::vector<double>& angles) {
  if (vec.size() % 2 != 0 || vec.size() != 2 * angles.size()) {
    throw std::invalid_argument("apply_rotary: vector length must be twice the angle count");
  }
  std::vector<double> out(vec.size());
  for (size_t k = 0; k < angles.size(); ++k) {
    const double c = std::cos(angles[k]);
    const double s = std::sin(angles[k]);
    out[2 * k] = vec[2 * k] * c - vec[2 * k + 1] * s;
    out[2 * k + 1] = vec[2 * k] * s + vec[2 * k + 1] * c;
  }
  return out;
}

namespace {

void rotate_rows_in_place(Matrix& m, const Matrix& angles) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index k = 0; k < angles.cols(); ++k) {
      const double c = std::cos(angles(r, k));
      const double s = std::sin(angles(r, k));
      const double u = m(r, 2 * k);
      const double v = m(r, 2 * k + 1);
      m(r, 2 * k) = u * c - v * s;
      m(r, 2 * k + 1) = u * s + v * c;
    }
  }
}

Matrix linear_apply(const LinearWeights& l, const Matrix& x) {
  Matrix out = x * l.weight;
  out.rowwise() += Eigen::RowVectorXd(l.bias.row(0));
  return out;
}

void softmax_rows_in_place(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

void layer_norm_in_place(Matrix& m, double eps = 1e-6) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mu = m.row(r).mean();
    const double var = (m.row(r).array() - mu).square().mean();
    m.row(r) = (m.row(r).array() - mu) / std::sqrt(var + eps);
  }
}

}  // namespace

Matrix rotary_self_attention(const Matrix& features,
                             const std::vector<Point3>& positions,
                             const AttentionWeights& w) {
  if (features.rows() == 0) throw std::invalid_argument("rotary_self_attention: empty input");
  if (features.rows() != static_cast<Eigen::Index>(positions.size())) {
    throw std::invalid_argument("rotary_self_attention: feature rows must match positions");
  }
  const auto& l = w.layers.front();
  Matrix q = linear_apply(l.q_self, features);
  Matrix k = linear_apply(l.k_self, features);
  const Matrix v = linear_apply(l.v_self, features);
  const Matrix angles = rotary_angles(positions, w.rot_map);
  rotate_rows_in_place(q, angles);
  rotate_rows_in_place(k, angles);
  Matrix scores = q * k.transpose();
  softmax_rows_in_place(scores);
  return scores * v;
}

Matrix cross_attention(const Matrix& query_features, const Matrix& source_features,
                       const AttentionWeights& w) {
  if (query_features.rows() == 0 || source_features.rows() == 0) {
    throw std::invalid_argument("cross_attention: empty input");
  }
  if (query_features.cols() != source_features.cols()) {
    throw std::invalid_argument("cross_attention: feature dimension mismatch");
  }
  const auto& l = w.layers.front();
  const Matrix q = linear_apply(l.q_cross, query_features);
  const Matrix k = linear_apply(l.k_cross, source_features);
  const Matrix v = linear_apply(l.v_cross, source_features);
  Matrix scores = q * k.transpose();
  softmax_rows_in_place(scores);
  return scores * v;
}

AttentionGraph lift_attention(const AttentionWeights& w, std::vector<NodeRef>* leaves,
                              std::vector<std::string>* names,
                              const std::string& prefix) {
  auto push = [&](const Matrix& m, const std::string& name) {
    NodeRef n = leaves ? leaf(m) : constant(m);
    if (leaves) leaves->push_back(n);
    if (names) names->push_back(prefix + name);
    return n;
  };
  AttentionGraph g;
  {
    numerics::MlpGraph::Layer rl;
    rl.weight = push(w.rot_map.layers.front().weight, ".rot_map");
    rl.act = numerics::Activation::Identity;
    g.rot_map.layers.push_back(std::move(rl));
  }
  for (size_t i = 0; i < w.layers.size(); ++i) {
    const std::string base = ".layer" + std::to_string(i);
    const auto& l = w.layers[i];
    AttentionGraph::Layer gl;
    gl.qw_s = push(l.q_self.weight, base + ".q.self.weight");
    gl.qb_s = push(l.q_self.bias, base + ".q.self.bias");
    gl.kw_s = push(l.k_self.weight, base + ".k.self.weight");
    gl.kb_s = push(l.k_self.bias, base + ".k.self.bias");
    gl.vw_s = push(l.v_self.weight, base + ".v.self.weight");
    gl.vb_s = push(l.v_self.bias, base + ".v.self.bias");
    for (size_t j = 0; j < l.ffn_self.layers.size(); ++j) {
      numerics::MlpGraph::Layer fl;
      fl.weight = push(l.ffn_self.layers[j].weight,
                       base + ".ffn.self." + std::to_string(j) + ".weight");
      if (l.ffn_self.layers[j].bias) {
        fl.bias = push(*l.ffn_self.layers[j].bias,
                       base + ".ffn.self." + std::to_string(j) + ".bias");
      }
      fl.act = l.ffn_self.layers[j].act;
      gl.ffn_s.layers.push_back(std::move(fl));
    }
    gl.qw_c = push(l.q_cross.weight, base + ".q.cross.weight");
    gl.qb_c = push(l.q_cross.bias, base + ".q.cross.bias");
    gl.kw_c = push(l.k_cross.weight, base + ".k.cross.weight");
    gl.kb_c = push(l.k_cross.bias, base + ".k.cross.bias");
    gl.vw_c = push(l.v_cross.weight, base + ".v.cross.weight");
    gl.vb_c = push(l.v_cross.bias, base + ".v.cross.bias");
    for (size_t j = 0; j < l.ffn_cross.layers.size(); ++j) {
      numerics::MlpGraph::Layer fl;
      fl.weight = push(l.ffn_cross.layers[j].weight,
                       base + ".ffn.cross." + std::to_string(j) + ".weight");
      if (l.ffn_cross.layers[j].bias) {
        fl.bias = push(*l.ffn_cross.layers[j].bias,
                       base + ".ffn.cross." + std::to_string(j) + ".bias");
      }
      fl.act = l.ffn_cross.layers[j].act;
      gl.ffn_c.layers.push_back(std::move(fl));
    }
    g.layers.push_back(std::move(gl));
  }
  return g;
}

NodeRef rotary_angles_graph(const NodeRef& positions, const AttentionGraph& g) {
  return matmul(positions, g.rot_map.layers.front().weight);
}

namespace {

NodeRef projected(const NodeRef& x, const NodeRef& w, const NodeRef& b) {
  return add_row_vec(matmul(x, w), b);
}

NodeRef self_block(const AttentionGraph::Layer& l, const NodeRef& x,
                   const NodeRef& angles) {
  NodeRef q = projected(x, l.qw_s, l.qb_s);
  NodeRef k = projected(x, l.kw_s, l.kb_s);
  NodeRef v = projected(x, l.vw_s, l.vb_s);
  if (angles) {
    q = apply_rotary_rows(q, angles);
    k = apply_rotary_rows(k, angles);
  }
  NodeRef attn = matmul(softmax_rows(matmul(q, transpose(k))), v);
  NodeRef h = numerics::layer_norm_rows(add(x, attn));
  return numerics::layer_norm_rows(add(h, mlp_forward(l.ffn_s, h)));
}

NodeRef cross_block(const AttentionGraph::Layer& l, const NodeRef& xq,
                    const NodeRef& xs) {
  NodeRef q = projected(xq, l.qw_c, l.qb_c);
  NodeRef k = projected(xs, l.kw_c, l.kb_c);
  NodeRef v = projected(xs, l.vw_c, l.vb_c);
  NodeRef attn = matmul(softmax_rows(matmul(q, transpose(k))), v);
  NodeRef h = numerics::layer_norm_rows(add(xq, attn));
  return numerics::layer_norm_rows(add(h, mlp_forward(l.ffn_c, h)));
}

}  // namespace

std::pair<NodeRef, NodeRef> stack_forward(const AttentionGraph& g, NodeRef feat_a,
                                          NodeRef pos_a, NodeRef feat_b, NodeRef pos_b,
                                          EmbeddingKind kind,
                                          const BaselineWeights* baselines) {
  if (feat_a->rows() == 0 || feat_b->rows() == 0) {
    throw std::invalid_argument("stack_forward: empty input");
  }
  if (kind == EmbeddingKind::PairwiseGeometric) {
    throw std::invalid_argument("pairwise-geometric kind is inference-only");
  }
  NodeRef xa = feat_a;
  NodeRef xb = feat_b;
  if (kind == EmbeddingKind::AbsolutePosition) {
    if (!baselines) throw std::invalid_argument("absolute-position kind needs baseline weights");
    NodeRef w = constant(baselines->ape.weight);
    NodeRef b = constant(baselines->ape.bias);
    xa = add(xa, add_row_vec(matmul(pos_a, w), b));
    xb = add(xb, add_row_vec(matmul(pos_b, w), b));
  }
  NodeRef th_a, th_b;
  if (kind == EmbeddingKind::Rotary) {
    th_a = rotary_angles_graph(pos_a, g);
    th_b = rotary_angles_graph(pos_b, g);
  }
  for (const auto& l : g.layers) {
    xa = self_block(l, xa, th_a);
    xb = self_block(l, xb, th_b);
    NodeRef na = cross_block(l, xa, xb);
    NodeRef nb = cross_block(l, xb, xa);
    xa = na;
    xb = nb;
  }
  return {xa, xb};
}

std::pair<Matrix, Matrix> roformer_stack(const Matrix& feat_a,
                                         const std::vector<Point3>& pos_a,
                                         const Matrix& feat_b,
                                         const std::vector<Point3>& pos_b,
                                         const AttentionWeights& w, EmbeddingKind kind,
                                         const BaselineWeights* baselines) {
  if (w.layers.empty()) throw std::invalid_argument("roformer_stack: no layers");
  if (feat_a.rows() != static_cast<Eigen::Index>(pos_a.size()) ||
      feat_b.rows() != static_cast<Eigen::Index>(pos_b.size())) {
    throw std::invalid_argument("roformer_stack: feature rows must match positions");
  }
  if (kind == EmbeddingKind::PairwiseGeometric) {
    return stack_infer(w, feat_a, pos_a, feat_b, pos_b, kind, baselines);
  }
  AttentionGraph g = lift_attention(w);
  auto [na, nb] = stack_forward(g, constant(feat_a), constant(positions_matrix(pos_a)),
                                constant(feat_b), constant(positions_matrix(pos_b)),
                                kind, baselines);
  return {na->value, nb->value};
}

// --- inference path ----------------------------------------------------------

namespace {

std::atomic<size_t> g_current{0};
std::atomic<size_t> g_peak{0};

struct Tracked {
  size_t bytes = 0;
  explicit Tracked(size_t b) : bytes(b) { AllocTracker::add(bytes); }
  Tracked(const Tracked&) = delete;
  ~Tracked() { AllocTracker::remove(bytes); }
};

size_t matrix_bytes(Eigen::Index r, Eigen::Index c) {
  return static_cast<size_t>(r) * static_cast<size_t>(c) * sizeof(double);
}

// Pair-embedding tensor of the pairwise-geometric kind: one pair_dim vector
// per node pair, quadratic in the node count by construction.
struct GeoPairTensor {
  int n = 0;
  int pair_dim = 0;
  std::vector<double> data;  // (i * n + j) * pair_dim

  const double* pair(int i, int j) const { return data.data() + (static_cast<size_t>(i) * n + j) * pair_dim; }
};

GeoPairTensor build_geo_pairs(const std::vector<Point3>& pos, const BaselineWeights& b) {
  GeoPairTensor t;
  t.n = static_cast<int>(pos.size());
  t.pair_dim = static_cast<int>(b.geo_table.cols());
  t.data.resize(static_cast<size_t>(t.n) * t.n * t.pair_dim);
  const int buckets = static_cast<int>(b.geo_table.rows());
  for (int i = 0; i < t.n; ++i) {
    for (int j = 0; j < t.n; ++j) {
      const double d = geometry::distance(pos[i], pos[j]);
      int bkt = static_cast<int>(d / b.geo_bucket_size);
      if (bkt >= buckets) bkt = buckets - 1;
      double* dst = t.data.data() + (static_cast<size_t>(i) * t.n + j) * t.pair_dim;
      for (int c = 0; c < t.pair_dim; ++c) dst[c] = b.geo_table(bkt, c);
    }
  }
  return t;
}

// Blocked attention: no full score matrix is materialized.
void attention_into(const Matrix& q, const Matrix& k, const Matrix& v, Matrix& out,
                    const GeoPairTensor* geo, const Matrix* geo_q) {
  const int n = static_cast<int>(k.rows());
  const int block = 128;
  for (int r0 = 0; r0 < q.rows(); r0 += block) {
    const int len = std::min<int>(block, static_cast<int>(q.rows()) - r0);
    Tracked tr(matrix_bytes(len, n));
    Matrix s = q.middleRows(r0, len) * k.transpose();
    if (geo) {
      for (int i = 0; i < len; ++i) {
        for (int j = 0; j < n; ++j) {
          const double* pe = geo->pair(r0 + i, j);
          double acc = 0.0;
          for (int c = 0; c < geo->pair_dim; ++c) acc += (*geo_q)(r0 + i, c) * pe[c];
          s(i, j) += acc;
        }
      }
    }
    softmax_rows_in_place(s);
    out.middleRows(r0, len) = s * v;
  }
}

struct InferScratch {
  const AttentionWeights* w;
  EmbeddingKind kind;
  const BaselineWeights* baselines;
};

Matrix ffn_apply_tracked(const MlpWeights& m, const Matrix& x) {
  Tracked tr(matrix_bytes(x.rows(), m.layers.front().weight.cols()));
  return numerics::mlp_apply(m, x);
}

void self_block_infer(const InferScratch& ctx, const AttentionLayerWeights& l,
                      Matrix& x, const Matrix* angles, const GeoPairTensor* geo) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Tracked tq(matrix_bytes(n, d)), tk(matrix_bytes(n, d)), tv(matrix_bytes(n, d)),
      to(matrix_bytes(n, d));
  Matrix q = linear_apply(l.q_self, x);
  Matrix k = linear_apply(l.k_self, x);
  Matrix v = linear_apply(l.v_self, x);
  if (angles) {
    rotate_rows_in_place(q, *angles);
    rotate_rows_in_place(k, *angles);
  }
  Matrix geo_q;
  std::unique_ptr<Tracked> tgq;
  if (geo) {
    tgq = std::make_unique<Tracked>(matrix_bytes(n, ctx.baselines->geo_query.weight.cols()));
    geo_q = linear_apply(ctx.baselines->geo_query, x);
  }
  Matrix out(n, d);
  attention_into(q, k, v, out, geo, geo ? &geo_q : nullptr);
  x += out;
  layer_norm_in_place(x);
  x += ffn_apply_tracked(l.ffn_self, x);
  layer_norm_in_place(x);
}

void cross_block_infer(const AttentionLayerWeights& l, Matrix& xq, const Matrix& xs) {
  const Eigen::Index n = xq.rows();
  const Eigen::Index m = xs.rows();
  const Eigen::Index d = xq.cols();
  Tracked tq(matrix_bytes(n, d)), tk(matrix_bytes(m, d)), tv(matrix_bytes(m, d)),
      to(matrix_bytes(n, d));
  Matrix q = linear_apply(l.q_cross, xq);
  Matrix k = linear_apply(l.k_cross, xs);
  Matrix v = linear_apply(l.v_cross, xs);
  Matrix out(n, d);
  attention_into(q, k, v, out, nullptr, nullptr);
  xq += out;
  layer_norm_in_place(xq);
  xq += ffn_apply_tracked(l.ffn_cross, xq);
  layer_norm_in_place(xq);
}

}  // namespace

void AllocTracker::reset() {
  g_current = 0;
  g_peak = 0;
}

void AllocTracker::add(size_t bytes) {
  const size_t now = g_current.fetch_add(bytes) + bytes;
  size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void AllocTracker::remove(size_t bytes) { g_current.fetch_sub(bytes); }

size_t AllocTracker::peak_bytes() { return g_peak.load(); }

size_t AllocTracker::current_bytes() { return g_current.load(); }

std::pair<Matrix, Matrix> stack_infer(const AttentionWeights& w, const Matrix& feat_a,
                                      const std::vector<Point3>& pos_a,
                                      const Matrix& feat_b,
                                      const std::vector<Point3>& pos_b,
                                      EmbeddingKind kind,
                                      const BaselineWeights* baselines) {
  if (feat_a.rows() == 0 || feat_b.rows() == 0) {
    throw std::invalid_argument("stack_infer: empty input");
  }
  if ((kind == EmbeddingKind::AbsolutePosition ||
       kind == EmbeddingKind::PairwiseGeometric) &&
      baselines == nullptr) {
    throw std::invalid_argument("baseline weights required for this kind");
  }
  InferScratch ctx{&w, kind, baselines};
  Matrix xa = feat_a;
  Matrix xb = feat_b;
  Tracked txa(matrix_bytes(xa.rows(), xa.cols()));
  Tracked txb(matrix_bytes(xb.rows(), xb.cols()));

  Matrix th_a, th_b;
  std::unique_ptr<Tracked> t_tha, t_thb;
  if (kind == EmbeddingKind::Rotary) {
    th_a = rotary_angles(pos_a, w.rot_map);
    th_b = rotary_angles(pos_b, w.rot_map);
    t_tha = std::make_unique<Tracked>(matrix_bytes(th_a.rows(), th_a.cols()));
    t_thb = std::make_unique<Tracked>(matrix_bytes(th_b.rows(), th_b.cols()));
  } else if (kind == EmbeddingKind::AbsolutePosition) {
    xa += linear_apply(baselines->ape, positions_matrix(pos_a));
    xb += linear_apply(baselines->ape, positions_matrix(pos_b));
  }

  GeoPairTensor geo_a, geo_b;
  std::unique_ptr<Tracked> t_ga, t_gb;
  if (kind == EmbeddingKind::PairwiseGeometric) {
    geo_a = build_geo_pairs(pos_a, *baselines);
    t_ga = std::make_unique<Tracked>(geo_a.data.size() * sizeof(double));
    geo_b = build_geo_pairs(pos_b, *baselines);
    t_gb = std::make_unique<Tracked>(geo_b.data.size() * sizeof(double));
  }

  const bool rotary = kind == EmbeddingKind::Rotary;
  const bool geo = kind == EmbeddingKind::PairwiseGeometric;
  for (const auto& l : w.layers) {
    self_block_infer(ctx, l, xa, rotary ? &th_a : nullptr, geo ? &geo_a : nullptr);
    self_block_infer(ctx, l, xb, rotary ? &th_b : nullptr, geo ? &geo_b : nullptr);
    Matrix na = xa;
    Tracked tna(matrix_bytes(na.rows(), na.cols()));
    cross_block_infer(l, na, xb);
    cross_block_infer(l, xb, xa);
    xa = std::move(na);
  }
  return {xa, xb};
}

}  // namespace rdm::roformer
