#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "evg/autodiff.hpp"
#include "evg/graph.hpp"

namespace evg::tea {

using ad::Tape;
using ad::Tensor;
using ad::Var;

constexpr std::size_t kEdgeAttrDim = 2;

/// Weights of one TEA layer mapping in_dim node features to out_dim.
/// Matrices are stored (rows x cols) exactly as they act on column vectors:
/// w0 hidden x 2, w1 in x hidden, wq/wk/wv/w2 out x in, biases 1 x out.
struct TeaLayerParams {
  Tensor w0, w1;
  Tensor wq, wk, wv;
  Tensor bq, bk, bv;
  Tensor w2;
  bool use_edge_gate = true;

  /// Glorot-uniform weights, zero biases.
  static TeaLayerParams init(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, bool use_edge_gate,
                             std::mt19937_64& rng);

  std::size_t in_dim() const { return w2.cols(); }
  std::size_t out_dim() const { return w2.rows(); }
  std::size_t hidden_dim() const { return w0.rows(); }

  /// Throws DimensionMismatch when shapes disagree.
  void validate() const;
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// Directed message list: an entry (src=j, dst=i) for every j in N(i),
/// ordered by dst. Undirected graph edges contribute both directions with
/// the same attributes.
struct MessageEdges {
  std::size_t num_nodes = 0;
  ad::Index src;
  ad::Index dst;
  Tensor attrs{0, kEdgeAttrDim};  // (alpha, beta) per message

  std::size_t size() const { return src.size(); }

  static MessageEdges from_graph(const EventGraph& g);
  static MessageEdges from_edges(std::size_t num_nodes, std::span<const Edge> edges,
                                 std::span<const std::array<float, 2>> attrs, bool directed);
};

/// sigmoid(W1 W0 e) * v_j per message row; identity when the gate is off.
Var edge_gate(Tape& tape, TeaLayerParams& p, Var neighbor_feats, Var edge_attrs);

struct TeaOutput {
  Var out;        // M x out_dim
  Var attention;  // one coefficient per message, aligned with MessageEdges
};

/// One TEA layer: Q_i = Wq v_i + bq, K_j = Wk vbar_j + bk, eta = softmax over
/// N(i) of Q_i.K_j / sqrt(d), out_i = W2 v_i + sum_j eta (Wv vbar_j + bv).
/// `layer` labels NonFiniteActivation errors.
TeaOutput tea_forward(Tape& tape, TeaLayerParams& p, Var x, const MessageEdges& edges, std::size_t layer = 0);

struct PoolParams {
  TeaLayerParams scorer;  // out_dim 1
  double keep_ratio = 0.5;
};

struct PoolResult {
  Var features;                     // kept rows of x * z
  Var scores;                       // z for every input node, M x 1
  MessageEdges edges;               // messages among kept nodes, reindexed
  ad::Index kept;                   // ascending original indices
  std::vector<std::size_t> offsets; // per-graph ranges after pooling
};

/// Number of nodes kept from a graph of `nodes` nodes.
std::size_t pooled_size(std::size_t nodes, double keep_ratio);

/// Attention-scored top-k pooling, applied per graph of a disjoint-union
/// batch given by node `offsets` (size B + 1). Within a graph, nodes are
/// ranked by z = sigmoid(scorer(x)); equal scores favour the lower index.
PoolResult sag_pool(Tape& tape, PoolParams& pool, Var x, const MessageEdges& edges,
                    std::span<const std::size_t> offsets, std::size_t layer = 0);

/// Mean of the rows of each graph; throws EmptyGraph for empty ranges.
Var global_mean_pool(Var x, std::span<const std::size_t> offsets);

enum class Mode { Train, Eval };

struct BatchNormState {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState init(std::size_t dim);
};

/// Train mode normalizes with batch statistics (and reports them through
/// `moments`); eval mode uses the running statistics.
Var batch_norm(Tape& tape, BatchNormState& state, Var x, Mode mode, ad::BatchMoments* moments = nullptr);

/// running <- (1 - momentum) running + momentum batch, with the unbiased
/// variance of `rows` samples.
void update_running_stats(BatchNormState& state, const ad::BatchMoments& moments, std::size_t rows);

struct ModelConfig {
  std::size_t input_dim = 3;
  std::vector<std::size_t> layer_dims{64, 64};
  std::size_t hidden_dim = 32;
  std::vector<std::size_t> head_dims{32};
  std::size_t num_classes = 2;
  std::vector<std::size_t> pool_after{0};  // TEA layers followed by pooling
  double keep_ratio = 0.5;
  bool use_edge_gate = true;
  std::uint64_t seed = 0;
};

struct LayerBlock {
  TeaLayerParams tea;
  BatchNormState bn;
  std::optional<PoolParams> pool;
};

struct DenseLayer {
  Tensor w;  // out x in
  Tensor b;  // 1 x out
};

struct ModelParams {
  ModelConfig config;
  std::vector<LayerBlock> layers;
  std::vector<DenseLayer> head;

  static ModelParams init(const ModelConfig& config);

  /// Learnable tensors in declaration order.
  std::vector<Tensor*> parameters();
  /// Learnable tensors followed by batch-norm running statistics.
  std::vector<Tensor*> state();
  std::vector<const Tensor*> state() const;
};

/// Disjoint union of graphs: node tables stacked, message indices offset.
struct GraphBatch {
  Tensor features;
  MessageEdges edges;
  std::vector<std::size_t> offsets;
  std::vector<int> labels;  // -1 when a graph is unlabeled

  std::size_t num_graphs() const { return offsets.size() - 1; }

  static GraphBatch from_graphs(std::span<const EventGraph* const> graphs);
  static GraphBatch from_graphs(std::span<const EventGraph> graphs);
};

struct ForwardResult {
  Var logits;  // num_graphs x num_classes
  std::vector<ad::BatchMoments> moments;
  std::vector<std::size_t> moment_rows;
};

/// [TEA -> batch norm -> ELU -> optional pooling] per layer, global mean
/// pooling, then the dense head (ELU between dense layers).
ForwardResult classifier_forward(Tape& tape, ModelParams& model, const GraphBatch& batch, Mode mode);

/// Folds the batch statistics of a train-mode forward into the running ones.
void apply_batch_moments(ModelParams& model, const ForwardResult& result);

/// Eval-mode logits without touching any model state.
Tensor predict_logits(const ModelParams& model, const GraphBatch& batch);

}  // namespace evg::tea
