#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "expass/graph.hpp"
#include "expass/rng.hpp"
#include "expass/tape.hpp"
#include "expass/tensor.hpp"

namespace expass {

enum class Arch { GCN, GraphConv, GraphSAGE, GIN };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::GCN: return "gcn";
    case Arch::GraphConv: return "graphconv";
    case Arch::GraphSAGE: return "graphsage";
    case Arch::GIN: return "gin";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "gcn") return Arch::GCN;
  if (s == "graphconv") return Arch::GraphConv;
  if (s == "graphsage") return Arch::GraphSAGE;
  if (s == "gin") return Arch::GIN;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

/// Weights for one GNN. Per-layer tensors by architecture:
///   GCN        {W}
///   GraphConv  {W_self, W_neigh}
///   GraphSAGE  {W_self, W_neigh}
///   GIN        {W_mlp1, W_mlp2}
/// plus a hidden x classes readout after mean pooling. No bias terms.
struct ModelParams {
  Arch arch = Arch::GCN;
  int input_dim = 0, hidden_dim = 0, num_classes = 0, depth = 0;
  std::vector<std::vector<Tensor>> layers;
  Tensor readout;
};

inline int tensors_per_layer(Arch a) { return a == Arch::GCN ? 1 : 2; }

inline std::vector<Tensor*> param_tensors(ModelParams& p) {
  std::vector<Tensor*> out;
  for (auto& layer : p.layers)
    for (auto& w : layer) out.push_back(&w);
  out.push_back(&p.readout);
  return out;
}

inline std::vector<const Tensor*> param_tensors(const ModelParams& p) {
  std::vector<const Tensor*> out;
  for (const auto& layer : p.layers)
    for (const auto& w : layer) out.push_back(&w);
  out.push_back(&p.readout);
  return out;
}

inline Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
  for (double& x : w) x = rng.uniform(-bound, bound);
  return Tensor(fan_in, fan_out, std::move(w));
}

inline ModelParams init_params(Arch arch, int input_dim, int hidden_dim, int num_classes,
                               int depth, std::uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1 || num_classes < 1 || depth < 1)
    throw std::invalid_argument("init_params: invalid dimensions");
  Rng rng(derive_seed(seed, "init_params"));
  ModelParams p;
  p.arch = arch;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.num_classes = num_classes;
  p.depth = depth;
  for (int l = 0; l < depth; ++l) {
    const int in = (l == 0) ? input_dim : hidden_dim;
    std::vector<Tensor> layer;
    switch (arch) {
      case Arch::GCN:
        layer.push_back(glorot_uniform(in, hidden_dim, rng));
        break;
      case Arch::GraphConv:
      case Arch::GraphSAGE:
        layer.push_back(glorot_uniform(in, hidden_dim, rng));
        layer.push_back(glorot_uniform(in, hidden_dim, rng));
        break;
      case Arch::GIN:
        layer.push_back(glorot_uniform(in, hidden_dim, rng));
        layer.push_back(glorot_uniform(hidden_dim, hidden_dim, rng));
        break;
    }
    p.layers.push_back(std::move(layer));
  }
  p.readout = glorot_uniform(hidden_dim, num_classes, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Edge weights

/// Per-graph edge scores in [0,1], stored aligned with Graph::edges (one
/// score per undirected edge, so symmetry is structural). Default all-ones.
struct EdgeWeights {
  std::vector<double> score;

  static EdgeWeights ones(std::size_t num_edges) {
    return EdgeWeights{std::vector<double>(num_edges, 1.0)};
  }

  std::size_t size() const { return score.size(); }
  double operator[](std::size_t e) const { return score[e]; }
};

inline void validate_edge_weights(const EdgeWeights& w, const Graph& g) {
  if (w.size() != g.edges.size())
    throw std::invalid_argument("edge weights: " + std::to_string(w.size()) + " scores for " +
                                std::to_string(g.edges.size()) + " edges");
  for (double s : w.score)
    if (!(s >= 0.0 && s <= 1.0))
      throw std::invalid_argument("edge weights: score " + std::to_string(s) + " outside [0,1]");
}

/// Build weights from an explicit (u,v)->score map; a key that is not a graph
/// edge is a contract error. Missing edges default to 1.
inline EdgeWeights edge_weights_from_map(const Graph& g,
                                         const std::map<std::pair<int, int>, double>& scores) {
  EdgeWeights w = EdgeWeights::ones(g.edges.size());
  for (const auto& [key, s] : scores) {
    auto [u, v] = key;
    if (u > v) std::swap(u, v);
    const auto it = std::lower_bound(g.edges.begin(), g.edges.end(), std::make_pair(u, v));
    if (it == g.edges.end() || *it != std::make_pair(u, v))
      throw std::invalid_argument("edge weights: (" + std::to_string(key.first) + "," +
                                  std::to_string(key.second) + ") is not an edge");
    w.score[static_cast<std::size_t>(it - g.edges.begin())] = s;
  }
  validate_edge_weights(w, g);
  return w;
}

/// Dense N x N s-weighted adjacency (no self-loops).
inline Tensor weighted_adjacency(const Graph& g, const EdgeWeights& w) {
  validate_edge_weights(w, g);
  const int n = g.num_nodes;
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [u, v] = g.edges[e];
    a[static_cast<std::size_t>(u) * n + v] = w.score[e];
    a[static_cast<std::size_t>(v) * n + u] = w.score[e];
  }
  return Tensor(n, n, std::move(a));
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardNodes {
  std::vector<NodeId> layer_outputs;  // post-activation H^(l), one per layer
  NodeId pooled = -1;                 // 1 x hidden mean-pool readout input
  NodeId logits = -1;                 // 1 x classes
};

inline std::vector<NodeId> load_params(Tape& tape, const ModelParams& p) {
  std::vector<NodeId> ids;
  for (const Tensor* t : param_tensors(p)) ids.push_back(tape.input(*t));
  return ids;
}

/// Architecture forward on an already-built tape. `sa` is the s-weighted
/// adjacency node (N x N, zero diagonal) and `x` the feature node; both may
/// be constants or differentiable subgraphs (the explainer path). Layer
/// rules, each followed by ReLU:
///   GCN        H' = D^-1/2 (sA + I) D^-1/2 H W, D = row sums of sA + I
///   GraphConv  H' = H Wa + (sA) H Wn
///   GraphSAGE  H' = H Wa + rownorm(sA) H Wn   (zero row when sum s = 0)
///   GIN        H' = relu((H + sA H) W1) W2
/// Readout: mean pool over nodes, then a single linear map to logits.
inline ForwardNodes forward_on_tape(Tape& tape, const ModelParams& p, const Graph& g, NodeId sa,
                                    NodeId x, const std::vector<NodeId>& param_ids) {
  if (g.feature_dim() != p.input_dim)
    throw std::invalid_argument("forward: graph feature dim " + std::to_string(g.feature_dim()) +
                                " != model input dim " + std::to_string(p.input_dim));
  const int n = g.num_nodes;
  const int per_layer = tensors_per_layer(p.arch);

  NodeId gcn_norm = -1;
  NodeId sage_inv = -1;
  if (p.arch == Arch::GCN) {
    const NodeId dhat = tape.add_scalar(tape.row_sum(sa), 1.0);
    const NodeId r = tape.rsqrt(dhat);
    const NodeId outer = tape.matmul(r, tape.transpose(r));
    const NodeId ahat = tape.add(sa, tape.input(Tensor::identity(n)));
    gcn_norm = tape.hadamard(ahat, outer);
  } else if (p.arch == Arch::GraphSAGE) {
    sage_inv = tape.safe_reciprocal(tape.row_sum(sa));
  }

  ForwardNodes out;
  NodeId h = x;
  for (int l = 0; l < p.depth; ++l) {
    const NodeId w0 = param_ids[static_cast<std::size_t>(l) * per_layer];
    NodeId z = -1;
    switch (p.arch) {
      case Arch::GCN:
        z = tape.matmul(gcn_norm, tape.matmul(h, w0));
        break;
      case Arch::GraphConv: {
        const NodeId wn = param_ids[static_cast<std::size_t>(l) * per_layer + 1];
        z = tape.add(tape.matmul(h, w0), tape.matmul(tape.matmul(sa, h), wn));
        break;
      }
      case Arch::GraphSAGE: {
        const NodeId wn = param_ids[static_cast<std::size_t>(l) * per_layer + 1];
        const NodeId agg = tape.scale_rows(tape.matmul(sa, h), sage_inv);
        z = tape.add(tape.matmul(h, w0), tape.matmul(agg, wn));
        break;
      }
      case Arch::GIN: {
        const NodeId w1 = param_ids[static_cast<std::size_t>(l) * per_layer + 1];
        const NodeId summed = tape.add(h, tape.matmul(sa, h));
        z = tape.matmul(tape.relu(tape.matmul(summed, w0)), w1);
        break;
      }
    }
    h = tape.relu(z);
    out.layer_outputs.push_back(h);
  }

  const NodeId pool = tape.input(Tensor::full(1, n, 1.0 / n));
  out.pooled = tape.matmul(pool, h);
  out.logits = tape.matmul(out.pooled, param_ids.back());
  return out;
}

/// Forward with constant masks; returns graph-level logits (1 x classes).
inline Tensor forward(const ModelParams& p, const Graph& g, const EdgeWeights& w) {
  Tape tape;
  const auto pids = load_params(tape, p);
  const NodeId sa = tape.input(weighted_adjacency(g, w));
  const NodeId x = tape.input(g.features);
  return tape.value(forward_on_tape(tape, p, g, sa, x, pids).logits);
}

inline Tensor forward(const ModelParams& p, const Graph& g) {
  return forward(p, g, EdgeWeights::ones(g.edges.size()));
}

/// Per-layer node embeddings H^(l); the last entry is the pre-readout matrix.
inline std::vector<Tensor> node_embeddings(const ModelParams& p, const Graph& g,
                                           const EdgeWeights& w) {
  Tape tape;
  const auto pids = load_params(tape, p);
  const NodeId sa = tape.input(weighted_adjacency(g, w));
  const NodeId x = tape.input(g.features);
  const auto fw = forward_on_tape(tape, p, g, sa, x, pids);
  std::vector<Tensor> out;
  for (NodeId id : fw.layer_outputs) out.push_back(tape.value(id));
  return out;
}

inline std::vector<Tensor> node_embeddings(const ModelParams& p, const Graph& g) {
  return node_embeddings(p, g, EdgeWeights::ones(g.edges.size()));
}

/// Mean-pooled pre-logit graph embedding (1 x hidden).
inline Tensor graph_embedding(const ModelParams& p, const Graph& g, const EdgeWeights& w) {
  Tape tape;
  const auto pids = load_params(tape, p);
  const NodeId sa = tape.input(weighted_adjacency(g, w));
  const NodeId x = tape.input(g.features);
  const auto fw = forward_on_tape(tape, p, g, sa, x, pids);
  return tape.value(fw.pooled);
}

}  // namespace expass
