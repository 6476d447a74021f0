#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "expass/layers.hpp"
#include "expass/metrics.hpp"
#include "expass/rng.hpp"

namespace expass {

enum class ExplainerKind { GNNExplainer, IntegratedGradients, GroundTruth, None };

inline const char* explainer_name(ExplainerKind k) {
  switch (k) {
    case ExplainerKind::GNNExplainer: return "GNNExplainer";
    case ExplainerKind::IntegratedGradients: return "IntegratedGradients";
    case ExplainerKind::GroundTruth: return "GroundTruth";
    case ExplainerKind::None: return "None";
  }
  return "?";
}

/// Edge/node/feature importance scores for one graph, all in [0,1].
struct Explanation {
  int graph_id = -1;
  EdgeWeights edge_scores;
  std::optional<std::vector<double>> node_scores;
  std::optional<std::vector<double>> feature_scores;
  ExplainerKind source = ExplainerKind::GNNExplainer;
};

struct ExplainerConfig {
  int epochs = 200;
  double lr = 0.01;
  int runs = 5;  // GNNExplainer; Integrated Gradients is deterministic (1)
  double size_coeff = 0.005;
  double entropy_coeff = 1.0;
  int ig_steps = 50;
  double init_std = 0.1;        // stddev of the N(0, 0.1) mask-logit init
  bool use_feature_mask = false;  // attribute explanations off unless enabled
};

inline void validate_explainer_config(const ExplainerConfig& c) {
  if (c.epochs < 1 || c.runs < 1 || c.ig_steps < 1)
    throw std::invalid_argument("explainer config: counts must be positive");
  if (!(c.lr > 0.0)) throw std::invalid_argument("explainer config: lr must be > 0");
  if (c.init_std < 0.0) throw std::invalid_argument("explainer config: negative init_std");
}

// ---------------------------------------------------------------------------
// Mask post-processing

/// Node scores -> symmetric edge scores, s_uv = (s_u + s_v) / 2.
inline EdgeWeights node_to_edge(const std::vector<double>& node_scores, const Graph& g) {
  if (static_cast<int>(node_scores.size()) != g.num_nodes)
    throw std::invalid_argument("node_to_edge: score count != num_nodes");
  EdgeWeights w;
  w.score.reserve(g.edges.size());
  for (const auto& [u, v] : g.edges) w.score.push_back(0.5 * (node_scores[u] + node_scores[v]));
  return w;
}

/// Edge scores -> node scores, s_u = mean over incident edges (0 for
/// isolated nodes).
inline std::vector<double> edge_to_node(const EdgeWeights& w, const Graph& g) {
  validate_edge_weights(w, g);
  std::vector<double> sum(g.num_nodes, 0.0);
  std::vector<int> cnt(g.num_nodes, 0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [u, v] = g.edges[e];
    sum[u] += w.score[e];
    sum[v] += w.score[e];
    ++cnt[u];
    ++cnt[v];
  }
  std::vector<double> out(g.num_nodes, 0.0);
  for (int i = 0; i < g.num_nodes; ++i)
    if (cnt[i] > 0) out[i] = sum[i] / cnt[i];
  return out;
}

/// Binary mask keeping the ceil(k_frac * |E|) highest-scoring undirected
/// edges; ties broken by (score desc, edge id asc).
inline EdgeWeights topk_mask(const EdgeWeights& scores, double k_frac) {
  if (!(k_frac > 0.0 && k_frac <= 1.0))
    throw std::invalid_argument("topk_mask: k_frac out of (0,1]");
  const std::size_t e = scores.size();
  const std::size_t keep =
      std::min(e, static_cast<std::size_t>(std::ceil(k_frac * static_cast<double>(e))));
  std::vector<std::size_t> order(e);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.score[a] != scores.score[b]) return scores.score[a] > scores.score[b];
    return a < b;
  });
  EdgeWeights mask{std::vector<double>(e, 0.0)};
  for (std::size_t i = 0; i < keep; ++i) mask.score[order[i]] = 1.0;
  return mask;
}

/// Node-mask hardening: keep the ceil(k_frac * N) top nodes (ties by id asc);
/// an edge survives iff both endpoints are kept.
inline EdgeWeights node_topk_mask(const std::vector<double>& node_scores, double k_frac,
                                  const Graph& g) {
  if (!(k_frac > 0.0 && k_frac <= 1.0))
    throw std::invalid_argument("node_topk_mask: k_frac out of (0,1]");
  if (static_cast<int>(node_scores.size()) != g.num_nodes)
    throw std::invalid_argument("node_topk_mask: score count != num_nodes");
  const int keep = std::min(
      g.num_nodes, static_cast<int>(std::ceil(k_frac * static_cast<double>(g.num_nodes))));
  std::vector<int> order(g.num_nodes);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (node_scores[a] != node_scores[b]) return node_scores[a] > node_scores[b];
    return a < b;
  });
  std::vector<char> kept(g.num_nodes, 0);
  for (int i = 0; i < keep; ++i) kept[order[i]] = 1;
  EdgeWeights mask{std::vector<double>(g.edges.size(), 0.0)};
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (kept[g.edges[e].first] && kept[g.edges[e].second]) mask.score[e] = 1.0;
  return mask;
}

/// Per-edge (and per-feature / per-node, when present in every input) lower
/// median over runs. All inputs must explain the same graph with the same
/// source.
inline Explanation median_aggregate(const std::vector<Explanation>& runs) {
  if (runs.empty()) throw std::invalid_argument("median_aggregate: empty input");
  for (const auto& e : runs) {
    if (e.graph_id != runs[0].graph_id)
      throw std::invalid_argument("median_aggregate: mixed graph ids");
    if (e.source != runs[0].source)
      throw std::invalid_argument("median_aggregate: mixed sources");
    if (e.edge_scores.size() != runs[0].edge_scores.size())
      throw std::invalid_argument("median_aggregate: edge count mismatch");
  }
  const auto lower_median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[(v.size() - 1) / 2];
  };
  Explanation out;
  out.graph_id = runs[0].graph_id;
  out.source = runs[0].source;
  out.edge_scores.score.resize(runs[0].edge_scores.size());
  for (std::size_t e = 0; e < out.edge_scores.size(); ++e) {
    std::vector<double> v;
    v.reserve(runs.size());
    for (const auto& r : runs) v.push_back(r.edge_scores.score[e]);
    out.edge_scores.score[e] = lower_median(std::move(v));
  }
  const auto median_optional = [&](auto getter) -> std::optional<std::vector<double>> {
    for (const auto& r : runs)
      if (!getter(r).has_value()) return std::nullopt;
    const std::size_t n = getter(runs[0])->size();
    for (const auto& r : runs)
      if (getter(r)->size() != n)
        throw std::invalid_argument("median_aggregate: score length mismatch");
    std::vector<double> med(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v;
      v.reserve(runs.size());
      for (const auto& r : runs) v.push_back((*getter(r))[i]);
      med[i] = lower_median(std::move(v));
    }
    return med;
  };
  out.feature_scores =
      median_optional([](const Explanation& e) -> const auto& { return e.feature_scores; });
  out.node_scores =
      median_optional([](const Explanation& e) -> const auto& { return e.node_scores; });
  return out;
}

// ---------------------------------------------------------------------------
// GNNExplainer

namespace detail {

struct MaskAdam {
  std::vector<double> m, v;
  long step = 0;
  void update(std::vector<double>& x, const std::vector<double>& g, double lr) {
    if (m.empty()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    ++step;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

struct ExplainerObjective {
  NodeId loss = -1;       // data + size + entropy
  NodeId data_term = -1;  // cross-entropy of the target class on the masked graph
  NodeId edge_logits = -1;
  NodeId feat_logits = -1;
};

/// Masked-graph objective of one explainer step:
///   loss = -log softmax(f(X', A o sigmoid(m_e)))[target]
///          + size_coeff * sum sigmoid(m_e)
///          + entropy_coeff * mean H(sigmoid(m_e))
/// where X' = X o sigmoid(m_x) when the feature mask is enabled and X
/// otherwise (edge-mask-only is the default protocol).
inline ExplainerObjective explainer_objective(Tape& tape, const ModelParams& params,
                                              const Graph& g, int target_class,
                                              const ExplainerConfig& cfg,
                                              const std::vector<double>& edge_logits,
                                              const std::vector<double>& feat_logits) {
  ExplainerObjective obj;
  const auto pids = load_params(tape, params);
  obj.edge_logits = tape.input(Tensor::column_vector(edge_logits));
  obj.feat_logits = tape.input(Tensor::row_vector(feat_logits));
  const NodeId edge_s = tape.sigmoid(obj.edge_logits);
  const NodeId sa = tape.edge_scatter(edge_s, g.edges, g.num_nodes);
  const NodeId x = cfg.use_feature_mask
                       ? tape.scale_cols(tape.input(g.features), tape.sigmoid(obj.feat_logits))
                       : tape.input(g.features);
  const auto fw = forward_on_tape(tape, params, g, sa, x, pids);

  const NodeId ls = tape.log_softmax(fw.logits);
  std::vector<double> onehot(params.num_classes, 0.0);
  onehot[target_class] = 1.0;
  obj.data_term = tape.scale(tape.sum(tape.hadamard(ls, tape.input(Tensor::row_vector(onehot)))),
                             -1.0);

  NodeId loss = obj.data_term;
  if (!g.edges.empty()) {
    loss = tape.add(loss, tape.scale(tape.sum(edge_s), cfg.size_coeff));
    loss = tape.add(loss,
                    tape.scale(tape.mean(tape.binary_entropy_logits(obj.edge_logits)),
                               cfg.entropy_coeff));
  }
  obj.loss = loss;
  return obj;
}

}  // namespace detail

/// Learn sigmoid-squashed edge and feature masks by gradient descent on the
/// masked-graph cross-entropy plus size and entropy regularizers (model
/// weights frozen, one logit per undirected edge shared across both
/// directions). `target_class` must be the model's current prediction for
/// the graph; correctness filtering is the caller's job.
inline Explanation gnn_explainer(const ModelParams& params, const Graph& g, int target_class,
                                 const ExplainerConfig& cfg, std::uint64_t seed) {
  validate_explainer_config(cfg);
  if (target_class < 0 || target_class >= params.num_classes)
    throw std::invalid_argument("gnn_explainer: target class out of range");

  Rng rng(derive_seed(seed, "gnn_explainer_init"));
  std::vector<double> edge_logits(g.edges.size());
  for (double& m : edge_logits) m = cfg.init_std * rng.normal();
  std::vector<double> feat_logits(g.feature_dim());
  for (double& m : feat_logits) m = cfg.init_std * rng.normal();

  detail::MaskAdam adam_e, adam_x;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape tape;
    detail::ExplainerObjective obj;
    try {
      obj = detail::explainer_objective(tape, params, g, target_class, cfg, edge_logits,
                                        feat_logits);
    } catch (const std::domain_error& e) {
      throw std::runtime_error(std::string("gnn_explainer: non-finite loss at epoch ") +
                               std::to_string(epoch) + ": " + e.what());
    }
    tape.backward(obj.loss);
    if (!g.edges.empty() && tape.has_grad(obj.edge_logits))
      adam_e.update(edge_logits, tape.grad(obj.edge_logits).data(), cfg.lr);
    if (cfg.use_feature_mask && g.feature_dim() > 0 && tape.has_grad(obj.feat_logits))
      adam_x.update(feat_logits, tape.grad(obj.feat_logits).data(), cfg.lr);
  }

  Explanation out;
  out.graph_id = -1;
  out.source = ExplainerKind::GNNExplainer;
  out.edge_scores.score.resize(edge_logits.size());
  for (std::size_t e = 0; e < edge_logits.size(); ++e)
    out.edge_scores.score[e] = sigmoid_value(edge_logits[e]);
  if (cfg.use_feature_mask) {
    std::vector<double> fs(feat_logits.size());
    for (std::size_t i = 0; i < fs.size(); ++i) fs[i] = sigmoid_value(feat_logits[i]);
    out.feature_scores = std::move(fs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Integrated Gradients

/// Node attributions from a zero baseline: for each feature entry,
/// x * (1/m) sum_{k=1..m} d f_target(k/m * X) / dx, summed per node.
/// node_scores are |sums| min-max normalized to [0,1]; an all-constant
/// attribution vector degenerates to uniform 0.5.
inline Explanation integrated_gradients(const ModelParams& params, const Graph& g,
                                        int target_class, const ExplainerConfig& cfg) {
  validate_explainer_config(cfg);
  if (target_class < 0 || target_class >= params.num_classes)
    throw std::invalid_argument("integrated_gradients: target class out of range");

  const EdgeWeights ones = EdgeWeights::ones(g.edges.size());
  const Tensor sa_const = weighted_adjacency(g, ones);
  std::vector<double> grad_sum(g.features.size(), 0.0);
  for (int k = 1; k <= cfg.ig_steps; ++k) {
    const double alpha = static_cast<double>(k) / cfg.ig_steps;
    Tape tape;
    const auto pids = load_params(tape, params);
    const NodeId x = tape.input(scale(g.features, alpha));
    const NodeId sa = tape.input(sa_const);
    const auto fw = forward_on_tape(tape, params, g, sa, x, pids);
    std::vector<double> pick(params.num_classes, 0.0);
    pick[target_class] = 1.0;
    const NodeId f_c = tape.sum(tape.hadamard(fw.logits, tape.input(Tensor::row_vector(pick))));
    tape.backward(f_c);
    if (tape.has_grad(x)) {
      const auto& gx = tape.grad(x).data();
      for (std::size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += gx[i];
    }
  }

  const int d = g.feature_dim();
  std::vector<double> node_attr(g.num_nodes, 0.0);
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j = 0; j < d; ++j)
      node_attr[i] +=
          g.features(i, j) * grad_sum[static_cast<std::size_t>(i) * d + j] / cfg.ig_steps;

  std::vector<double> scores(g.num_nodes);
  for (int i = 0; i < g.num_nodes; ++i) scores[i] = std::fabs(node_attr[i]);
  const auto [mn_it, mx_it] = std::minmax_element(scores.begin(), scores.end());
  const double mn = scores.empty() ? 0.0 : *mn_it;
  const double mx = scores.empty() ? 0.0 : *mx_it;
  if (mx - mn < 1e-300) {
    std::fill(scores.begin(), scores.end(), 0.5);  // degenerate: uniform
  } else {
    for (double& s : scores) s = (s - mn) / (mx - mn);
  }

  Explanation out;
  out.graph_id = -1;
  out.source = ExplainerKind::IntegratedGradients;
  out.edge_scores = node_to_edge(scores, g);
  out.node_scores = std::move(scores);
  // raw per-node attributions are useful for the completeness check
  out.feature_scores = std::nullopt;
  return out;
}

/// Raw (signed, unnormalized) per-node IG attributions; their sum
/// approximates f_target(X) - f_target(0) as ig_steps grows.
inline std::vector<double> integrated_gradients_raw(const ModelParams& params, const Graph& g,
                                                    int target_class, int ig_steps) {
  ExplainerConfig cfg;
  cfg.ig_steps = ig_steps;
  const EdgeWeights ones = EdgeWeights::ones(g.edges.size());
  const Tensor sa_const = weighted_adjacency(g, ones);
  std::vector<double> grad_sum(g.features.size(), 0.0);
  for (int k = 1; k <= ig_steps; ++k) {
    const double alpha = static_cast<double>(k) / ig_steps;
    Tape tape;
    const auto pids = load_params(tape, params);
    const NodeId x = tape.input(scale(g.features, alpha));
    const NodeId sa = tape.input(sa_const);
    const auto fw = forward_on_tape(tape, params, g, sa, x, pids);
    std::vector<double> pick(params.num_classes, 0.0);
    pick[target_class] = 1.0;
    const NodeId f_c = tape.sum(tape.hadamard(fw.logits, tape.input(Tensor::row_vector(pick))));
    tape.backward(f_c);
    if (tape.has_grad(x)) {
      const auto& gx = tape.grad(x).data();
      for (std::size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += gx[i];
    }
  }
  const int d = g.feature_dim();
  std::vector<double> node_attr(g.num_nodes, 0.0);
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j = 0; j < d; ++j)
      node_attr[i] += g.features(i, j) * grad_sum[static_cast<std::size_t>(i) * d + j] / ig_steps;
  return node_attr;
}

// ---------------------------------------------------------------------------
// Dispatch helpers

/// One explanation per the configured protocol: GNNExplainer is the lower
/// median over cfg.runs independent runs; Integrated Gradients is a single
/// deterministic run.
inline Explanation explain_graph(const ModelParams& params, const Graph& g, int graph_id,
                                 int target_class, ExplainerKind kind, const ExplainerConfig& cfg,
                                 std::uint64_t seed) {
  Explanation out;
  switch (kind) {
    case ExplainerKind::GNNExplainer: {
      std::vector<Explanation> runs;
      runs.reserve(cfg.runs);
      for (int r = 0; r < cfg.runs; ++r) {
        Explanation e = gnn_explainer(params, g, target_class, cfg,
                                      derive_seed(seed, "explainer_run", r));
        e.graph_id = graph_id;
        runs.push_back(std::move(e));
      }
      out = runs.size() == 1 ? std::move(runs[0]) : median_aggregate(runs);
      break;
    }
    case ExplainerKind::IntegratedGradients:
      out = integrated_gradients(params, g, target_class, cfg);
      break;
    case ExplainerKind::GroundTruth: {
      out.source = ExplainerKind::GroundTruth;
      out.edge_scores.score.assign(g.edges.size(), 0.0);
      for (int e : g.ground_truth_edges) out.edge_scores.score[e] = 1.0;
      break;
    }
    case ExplainerKind::None:
      throw std::invalid_argument("explain_graph: kind is None");
  }
  out.graph_id = graph_id;
  return out;
}

/// Hard mask for training or evaluation at the given topK: edge explainers
/// mask edges directly, node explainers keep the topK nodes.
inline EdgeWeights harden_explanation(const Explanation& e, double k_frac, const Graph& g) {
  if (e.source == ExplainerKind::IntegratedGradients && e.node_scores)
    return node_topk_mask(*e.node_scores, k_frac, g);
  return topk_mask(e.edge_scores, k_frac);
}

/// Mean GEF over a set of graphs: explain each graph's prediction, harden at
/// eval_topk, and compare masked vs full prediction distributions.
inline double gef_protocol(const ModelParams& params, const std::vector<Graph>& graphs,
                           ExplainerKind kind, const ExplainerConfig& cfg, double eval_topk,
                           std::uint64_t seed) {
  if (graphs.empty()) throw std::invalid_argument("gef_protocol: no graphs");
  double total = 0.0;
  int counted = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = graphs[gi];
    const Tensor logits = forward(params, g);
    std::vector<double> p_full(params.num_classes);
    {
      Tape t;
      const NodeId ls = t.log_softmax(t.input(logits));
      for (int c = 0; c < params.num_classes; ++c) p_full[c] = std::exp(t.value(ls)(0, c));
    }
    int pred = 0;
    for (int c = 1; c < params.num_classes; ++c)
      if (logits(0, c) > logits(0, pred)) pred = c;
    Explanation e;
    try {
      e = explain_graph(params, g, static_cast<int>(gi), pred, kind, cfg,
                        derive_seed(seed, "gef_protocol", gi));
    } catch (const std::exception&) {
      continue;  // skip-warnings propagate as skipped graphs
    }
    const EdgeWeights mask = harden_explanation(e, eval_topk, g);
    const Tensor masked_logits = forward(params, g, mask);
    std::vector<double> p_masked(params.num_classes);
    {
      Tape t;
      const NodeId ls = t.log_softmax(t.input(masked_logits));
      for (int c = 0; c < params.num_classes; ++c) p_masked[c] = std::exp(t.value(ls)(0, c));
    }
    total += gef(p_full, p_masked);
    ++counted;
  }
  if (counted == 0) throw std::runtime_error("gef_protocol: every explanation failed");
  return total / counted;
}

}  // namespace expass
