#include "evg/tea.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace evg::tea {

namespace {

// Binds model tensors to a tape: as differentiable leaves when gradients are
// wanted (the caller then owns a mutable model), read-only otherwise.
class Binder {
 public:
  Binder(Tape& tape, bool grads) : tape_(tape), grads_(grads) {}

  Var operator()(const Tensor& t) const { return grads_ ? tape_.param(const_cast<Tensor&>(t)) : tape_.input(t); }
  Tape& tape() const { return tape_; }

 private:
  Tape& tape_;
  bool grads_;
};

Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return Tensor::uniform(rows, cols, -limit, limit, rng);
}

void expect_shape(const Tensor& t, std::size_t rows, std::size_t cols, const char* name) {
  if (t.rows() != rows || t.cols() != cols) {
    throw Error(Errc::DimensionMismatch, std::string(name) + " is " + std::to_string(t.rows()) + "x" +
                                             std::to_string(t.cols()) + ", expected " + std::to_string(rows) + "x" +
                                             std::to_string(cols));
  }
}

void check_finite(Var v, std::size_t layer, const char* what) {
  if (!v.value().all_finite()) {
    throw Error(Errc::NonFiniteActivation, std::string(what) + " of layer " + std::to_string(layer) + " is not finite");
  }
}

Var gate_impl(const Binder& bind, const TeaLayerParams& p, Var neighbor_feats, Var edge_attrs) {
  if (!p.use_edge_gate) return neighbor_feats;
  if (edge_attrs.cols() != kEdgeAttrDim || edge_attrs.rows() != neighbor_feats.rows()) {
    throw Error(Errc::DimensionMismatch, "edge attributes must be one (alpha, beta) row per neighbour");
  }
  if (neighbor_feats.cols() != p.in_dim()) throw Error(Errc::DimensionMismatch, "neighbour features do not match w1");
  Var hidden = ad::linear(edge_attrs, bind(p.w0));
  Var gate = ad::sigmoid(ad::linear(hidden, bind(p.w1)));
  return ad::hadamard(gate, neighbor_feats);
}

TeaOutput tea_impl(const Binder& bind, const TeaLayerParams& p, Var x, const MessageEdges& edges, std::size_t layer) {
  Tape& tape = bind.tape();
  p.validate();
  if (x.cols() != p.in_dim()) {
    throw Error(Errc::DimensionMismatch, "layer " + std::to_string(layer) + " expects " + std::to_string(p.in_dim()) +
                                             " input features, got " + std::to_string(x.cols()));
  }
  if (x.rows() != edges.num_nodes) throw Error(Errc::DimensionMismatch, "node count differs from message list");

  Var self_term = ad::linear(x, bind(p.w2));
  if (edges.size() == 0) {
    check_finite(self_term, layer, "output");
    return {self_term, tape.constant(Tensor(0, 1))};
  }

  Var neighbors = ad::gather_rows(x, edges.src);
  Var gated = gate_impl(bind, p, neighbors, tape.constant(edges.attrs));
  Var queries = ad::add_row(ad::linear(x, bind(p.wq)), bind(p.bq));
  Var keys = ad::add_row(ad::linear(gated, bind(p.wk)), bind(p.bk));
  Var scores = ad::scale(ad::sum_rows(ad::hadamard(ad::gather_rows(queries, edges.dst), keys)),
                         1.0 / std::sqrt(static_cast<double>(p.out_dim())));
  Var attention = ad::segment_softmax(scores, edges.dst);
  Var values = ad::add_row(ad::linear(gated, bind(p.wv)), bind(p.bv));
  Var messages = ad::segment_sum(ad::scale_rows(values, attention), edges.dst, edges.num_nodes);
  Var out = ad::add(self_term, messages);
  check_finite(out, layer, "output");
  return {out, attention};
}

PoolResult pool_impl(const Binder& bind, const PoolParams& pool, Var x, const MessageEdges& edges,
                     std::span<const std::size_t> offsets, std::size_t layer) {
  if (!(pool.keep_ratio > 0.0 && pool.keep_ratio <= 1.0)) throw Error(Errc::Precondition, "keep_ratio must lie in (0, 1]");
  if (pool.scorer.out_dim() != 1) throw Error(Errc::DimensionMismatch, "pool scorer must have output width 1");
  if (offsets.empty() || offsets.back() != x.rows()) throw Error(Errc::DimensionMismatch, "graph offsets do not cover the node table");

  PoolResult r;
  r.scores = ad::sigmoid(tea_impl(bind, pool.scorer, x, edges, layer).out);
  const Tensor& z = r.scores.value();

  r.offsets.push_back(0);
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    const std::size_t lo = offsets[g], hi = offsets[g + 1];
    if (hi <= lo) throw Error(Errc::EmptyGraph, "graph " + std::to_string(g) + " has no nodes to pool");
    std::vector<std::uint32_t> order(hi - lo);
    std::iota(order.begin(), order.end(), static_cast<std::uint32_t>(lo));
    const std::size_t keep = pooled_size(hi - lo, pool.keep_ratio);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    r.kept.insert(r.kept.end(), order.begin(), order.end());
    r.offsets.push_back(r.kept.size());
  }

  r.features = ad::gather_rows(ad::scale_rows(x, r.scores), r.kept);

  constexpr auto kDropped = static_cast<std::uint32_t>(-1);
  std::vector<std::uint32_t> remap(x.rows(), kDropped);
  for (std::size_t i = 0; i < r.kept.size(); ++i) remap[r.kept[i]] = static_cast<std::uint32_t>(i);
  r.edges.num_nodes = r.kept.size();
  std::vector<double> attrs;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto s = remap[edges.src[e]], d = remap[edges.dst[e]];
    if (s == kDropped || d == kDropped) continue;
    r.edges.src.push_back(s);
    r.edges.dst.push_back(d);
    attrs.push_back(edges.attrs(e, 0));
    attrs.push_back(edges.attrs(e, 1));
  }
  r.edges.attrs = Tensor(r.edges.src.size(), kEdgeAttrDim, std::move(attrs));
  return r;
}

Var batch_norm_impl(const Binder& bind, const BatchNormState& state, Var x, Mode mode, ad::BatchMoments* moments) {
  const std::size_t c = x.cols();
  if (state.gamma.cols() != c) throw Error(Errc::DimensionMismatch, "batch norm width differs from its input");
  if (mode == Mode::Train) return ad::batch_norm(x, bind(state.gamma), bind(state.beta), state.eps, moments);

  const std::size_t n = x.rows();
  Tensor scale(n, c), shift(1, c);
  for (std::size_t j = 0; j < c; ++j) {
    const double s = state.gamma[j] / std::sqrt(state.running_var[j] + state.eps);
    for (std::size_t i = 0; i < n; ++i) scale(i, j) = s;
    shift[j] = state.beta[j] - state.running_mean[j] * s;
  }
  Tape& tape = bind.tape();
  return ad::add_row(ad::hadamard(x, tape.constant(std::move(scale))), tape.constant(std::move(shift)));
}

ForwardResult forward_impl(const Binder& bind, const ModelParams& model, const GraphBatch& batch, Mode mode) {
  Tape& tape = bind.tape();
  if (batch.features.cols() != model.config.input_dim) {
    throw Error(Errc::DimensionMismatch, "graphs carry " + std::to_string(batch.features.cols()) +
                                             " node features, model expects " + std::to_string(model.config.input_dim));
  }
  ForwardResult result;
  Var h = tape.constant(batch.features);
  MessageEdges edges = batch.edges;
  std::vector<std::size_t> offsets = batch.offsets;

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerBlock& block = model.layers[l];
    h = tea_impl(bind, block.tea, h, edges, l).out;
    ad::BatchMoments moments;
    h = batch_norm_impl(bind, block.bn, h, mode, mode == Mode::Train ? &moments : nullptr);
    if (mode == Mode::Train) {
      result.moments.push_back(std::move(moments));
      result.moment_rows.push_back(h.rows());
    }
    h = ad::elu(h);
    if (block.pool) {
      PoolResult pooled = pool_impl(bind, *block.pool, h, edges, offsets, l);
      h = pooled.features;
      edges = std::move(pooled.edges);
      offsets = std::move(pooled.offsets);
    }
  }

  h = global_mean_pool(h, offsets);
  for (std::size_t i = 0; i < model.head.size(); ++i) {
    h = ad::add_row(ad::linear(h, bind(model.head[i].w)), bind(model.head[i].b));
    if (i + 1 < model.head.size()) h = ad::elu(h);
  }
  result.logits = h;
  return result;
}

void append_graph(GraphBatch& batch, const EventGraph& g, std::vector<double>& feats, std::vector<double>& attrs) {
  const std::size_t base = batch.offsets.back();
  for (float f : g.features) feats.push_back(f);
  MessageEdges m = MessageEdges::from_edges(g.num_nodes, g.edges, g.edge_attrs, g.directed);
  for (std::size_t e = 0; e < m.size(); ++e) {
    batch.edges.src.push_back(static_cast<std::uint32_t>(base + m.src[e]));
    batch.edges.dst.push_back(static_cast<std::uint32_t>(base + m.dst[e]));
    attrs.push_back(m.attrs(e, 0));
    attrs.push_back(m.attrs(e, 1));
  }
  batch.offsets.push_back(base + g.num_nodes);
  batch.labels.push_back(g.label.value_or(-1));
}

}  // namespace

// ---------------------------------------------------------------- layer params

TeaLayerParams TeaLayerParams::init(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, bool use_edge_gate,
                                    std::mt19937_64& rng) {
  if (in_dim == 0 || hidden_dim == 0 || out_dim == 0) throw Error(Errc::DimensionMismatch, "layer dimensions must be positive");
  TeaLayerParams p;
  p.w0 = glorot(hidden_dim, kEdgeAttrDim, rng);
  p.w1 = glorot(in_dim, hidden_dim, rng);
  p.wq = glorot(out_dim, in_dim, rng);
  p.wk = glorot(out_dim, in_dim, rng);
  p.wv = glorot(out_dim, in_dim, rng);
  p.bq = Tensor(1, out_dim);
  p.bk = Tensor(1, out_dim);
  p.bv = Tensor(1, out_dim);
  p.w2 = glorot(out_dim, in_dim, rng);
  p.use_edge_gate = use_edge_gate;
  return p;
}

void TeaLayerParams::validate() const {
  const std::size_t in = in_dim(), out = out_dim(), hid = hidden_dim();
  expect_shape(w0, hid, kEdgeAttrDim, "w0");
  expect_shape(w1, in, hid, "w1");
  expect_shape(wq, out, in, "wq");
  expect_shape(wk, out, in, "wk");
  expect_shape(wv, out, in, "wv");
  expect_shape(bq, 1, out, "bq");
  expect_shape(bk, 1, out, "bk");
  expect_shape(bv, 1, out, "bv");
}

std::vector<Tensor*> TeaLayerParams::tensors() { return {&w0, &w1, &wq, &wk, &wv, &bq, &bk, &bv, &w2}; }

std::vector<const Tensor*> TeaLayerParams::tensors() const { return {&w0, &w1, &wq, &wk, &wv, &bq, &bk, &bv, &w2}; }

// ---------------------------------------------------------------- messages

MessageEdges MessageEdges::from_edges(std::size_t num_nodes, std::span<const Edge> edges,
                                      std::span<const std::array<float, 2>> attrs, bool directed) {
  if (edges.size() != attrs.size()) throw Error(Errc::DimensionMismatch, "one attribute row per edge required");
  struct Msg {
    std::uint32_t src, dst;
    std::size_t edge;
  };
  std::vector<Msg> msgs;
  msgs.reserve(edges.size() * (directed ? 1 : 2));
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].src >= num_nodes || edges[e].dst >= num_nodes) throw Error(Errc::DimensionMismatch, "edge endpoint out of range");
    msgs.push_back({edges[e].src, edges[e].dst, e});
    if (!directed) msgs.push_back({edges[e].dst, edges[e].src, e});
  }
  std::stable_sort(msgs.begin(), msgs.end(), [](const Msg& a, const Msg& b) { return a.dst < b.dst; });
  MessageEdges m;
  m.num_nodes = num_nodes;
  m.src.reserve(msgs.size());
  m.dst.reserve(msgs.size());
  std::vector<double> a;
  a.reserve(msgs.size() * kEdgeAttrDim);
  for (const auto& msg : msgs) {
    m.src.push_back(msg.src);
    m.dst.push_back(msg.dst);
    a.push_back(attrs[msg.edge][0]);
    a.push_back(attrs[msg.edge][1]);
  }
  m.attrs = Tensor(msgs.size(), kEdgeAttrDim, std::move(a));
  return m;
}

MessageEdges MessageEdges::from_graph(const EventGraph& g) {
  return from_edges(g.num_nodes, g.edges, g.edge_attrs, g.directed);
}

// ---------------------------------------------------------------- public ops

Var edge_gate(Tape& tape, TeaLayerParams& p, Var neighbor_feats, Var edge_attrs) {
  return gate_impl(Binder(tape, true), p, neighbor_feats, edge_attrs);
}

TeaOutput tea_forward(Tape& tape, TeaLayerParams& p, Var x, const MessageEdges& edges, std::size_t layer) {
  return tea_impl(Binder(tape, true), p, x, edges, layer);
}

std::size_t pooled_size(std::size_t nodes, double keep_ratio) {
  const double exact = keep_ratio * static_cast<double>(nodes);
  const auto u = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(u, 1, nodes);
}

PoolResult sag_pool(Tape& tape, PoolParams& pool, Var x, const MessageEdges& edges,
                    std::span<const std::size_t> offsets, std::size_t layer) {
  return pool_impl(Binder(tape, true), pool, x, edges, offsets, layer);
}

Var global_mean_pool(Var x, std::span<const std::size_t> offsets) {
  if (offsets.size() < 2 || offsets.back() != x.rows()) throw Error(Errc::DimensionMismatch, "graph offsets do not cover the node table");
  ad::Index segment(x.rows());
  Tensor inv_counts(offsets.size() - 1, 1);
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    if (offsets[g + 1] <= offsets[g]) throw Error(Errc::EmptyGraph, "graph " + std::to_string(g) + " has no nodes");
    for (std::size_t i = offsets[g]; i < offsets[g + 1]; ++i) segment[i] = static_cast<std::uint32_t>(g);
    inv_counts[g] = 1.0 / static_cast<double>(offsets[g + 1] - offsets[g]);
  }
  Var sums = ad::segment_sum(x, segment, offsets.size() - 1);
  return ad::scale_rows(sums, x.tape->constant(std::move(inv_counts)));
}

BatchNormState BatchNormState::init(std::size_t dim) {
  BatchNormState s;
  s.gamma = Tensor(1, dim, 1.0);
  s.beta = Tensor(1, dim, 0.0);
  s.running_mean = Tensor(1, dim, 0.0);
  s.running_var = Tensor(1, dim, 1.0);
  return s;
}

Var batch_norm(Tape& tape, BatchNormState& state, Var x, Mode mode, ad::BatchMoments* moments) {
  return batch_norm_impl(Binder(tape, true), state, x, mode, moments);
}

void update_running_stats(BatchNormState& state, const ad::BatchMoments& moments, std::size_t rows) {
  const double m = state.momentum;
  const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
  for (std::size_t j = 0; j < state.running_mean.size(); ++j) {
    state.running_mean[j] = (1 - m) * state.running_mean[j] + m * moments.mean[j];
    state.running_var[j] = (1 - m) * state.running_var[j] + m * moments.var[j] * unbias;
  }
}

// ---------------------------------------------------------------- model

ModelParams ModelParams::init(const ModelConfig& config) {
  if (config.layer_dims.empty()) throw Error(Errc::Precondition, "model needs at least one TEA layer");
  if (config.num_classes < 1 || config.input_dim < 1) throw Error(Errc::Precondition, "input width and class count must be positive");
  if (!(config.keep_ratio > 0.0 && config.keep_ratio <= 1.0)) throw Error(Errc::Precondition, "keep_ratio must lie in (0, 1]");
  for (auto l : config.pool_after) {
    if (l >= config.layer_dims.size()) throw Error(Errc::Precondition, "pool_after names a missing layer");
  }

  std::mt19937_64 rng(config.seed);
  ModelParams m;
  m.config = config;
  std::size_t in = config.input_dim;
  for (std::size_t l = 0; l < config.layer_dims.size(); ++l) {
    const std::size_t out = config.layer_dims[l];
    LayerBlock block;
    block.tea = TeaLayerParams::init(in, config.hidden_dim, out, config.use_edge_gate, rng);
    block.bn = BatchNormState::init(out);
    if (std::find(config.pool_after.begin(), config.pool_after.end(), l) != config.pool_after.end()) {
      block.pool = PoolParams{TeaLayerParams::init(out, config.hidden_dim, 1, config.use_edge_gate, rng), config.keep_ratio};
    }
    m.layers.push_back(std::move(block));
    in = out;
  }
  std::vector<std::size_t> widths = config.head_dims;
  widths.push_back(config.num_classes);
  for (std::size_t out : widths) {
    m.head.push_back({glorot(out, in, rng), Tensor(1, out)});
    in = out;
  }
  for (Tensor* t : m.parameters()) t->set_requires_grad(true);
  return m;
}

std::vector<Tensor*> ModelParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& block : layers) {
    for (Tensor* t : block.tea.tensors()) out.push_back(t);
    out.push_back(&block.bn.gamma);
    out.push_back(&block.bn.beta);
    if (block.pool)
      for (Tensor* t : block.pool->scorer.tensors()) out.push_back(t);
  }
  for (auto& d : head) {
    out.push_back(&d.w);
    out.push_back(&d.b);
  }
  return out;
}

std::vector<Tensor*> ModelParams::state() {
  std::vector<Tensor*> out = parameters();
  for (auto& block : layers) {
    out.push_back(&block.bn.running_mean);
    out.push_back(&block.bn.running_var);
  }
  return out;
}

std::vector<const Tensor*> ModelParams::state() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<ModelParams*>(this)->state()) out.push_back(t);
  return out;
}

GraphBatch GraphBatch::from_graphs(std::span<const EventGraph* const> graphs) {
  GraphBatch batch;
  batch.offsets.push_back(0);
  std::vector<double> feats, attrs;
  std::size_t dim = 0;
  for (const EventGraph* g : graphs) {
    if (!feats.empty() && g->feature_dim != dim) throw Error(Errc::DimensionMismatch, "graphs in a batch must share a feature width");
    dim = g->feature_dim;
    append_graph(batch, *g, feats, attrs);
  }
  batch.features = Tensor(batch.offsets.back(), dim, std::move(feats));
  batch.edges.num_nodes = batch.offsets.back();
  batch.edges.attrs = Tensor(batch.edges.src.size(), kEdgeAttrDim, std::move(attrs));
  return batch;
}

GraphBatch GraphBatch::from_graphs(std::span<const EventGraph> graphs) {
  std::vector<const EventGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return from_graphs(std::span<const EventGraph* const>(ptrs));
}

ForwardResult classifier_forward(Tape& tape, ModelParams& model, const GraphBatch& batch, Mode mode) {
  return forward_impl(Binder(tape, true), model, batch, mode);
}

void apply_batch_moments(ModelParams& model, const ForwardResult& result) {
  for (std::size_t l = 0; l < result.moments.size() && l < model.layers.size(); ++l) {
    update_running_stats(model.layers[l].bn, result.moments[l], result.moment_rows[l]);
  }
}

Tensor predict_logits(const ModelParams& model, const GraphBatch& batch) {
  Tape tape;
  return forward_impl(Binder(tape, false), model, batch, Mode::Eval).logits.value();
}

}  // namespace evg::tea
