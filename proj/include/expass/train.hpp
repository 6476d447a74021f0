#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "expass/explain.hpp"
#include "expass/layers.hpp"
#include "expass/metrics.hpp"
#include "expass/rng.hpp"

namespace expass {

struct TrainConfig {
  int epochs = 150;          // 150 for MUTAG/synthetic, 200 for Proteins/DD
  double lr = 0.01;
  int hidden = 32;
  int depth = 3;
  int burn_in = 10;
  double sample_frac = 0.4;
  double topk = 0.4;
  ExplainerKind explainer = ExplainerKind::None;
  ExplainerConfig explainer_cfg;
  double dropedge_p = 0.0;  // 0 disables
  int batch_size = 32;
  std::uint64_t seed = 0;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (c.burn_in >= c.epochs && c.explainer != ExplainerKind::None)
    throw std::invalid_argument("train config: burn_in must be < epochs");
  for (auto [v, name] : {std::pair{c.sample_frac, "sample_frac"}, {c.topk, "topk"},
                         {c.dropedge_p, "dropedge_p"}})
    if (v < 0.0 || v > 1.0)
      throw std::invalid_argument(std::string("train config: ") + name + " out of [0,1]");
  if (c.dropedge_p >= 1.0) throw std::invalid_argument("train config: dropedge_p must be < 1");
  if (c.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(c.lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
  validate_explainer_config(c.explainer_cfg);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<Tensor> m, v;
  long step = 0;
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

  static AdamState like(const ModelParams& p) {
    AdamState s;
    for (const Tensor* t : param_tensors(p)) {
      s.m.push_back(Tensor::zeros(t->rows(), t->cols()));
      s.v.push_back(Tensor::zeros(t->rows(), t->cols()));
    }
    return s;
  }
};

/// Standard bias-corrected Adam update over all parameter tensors.
inline void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state,
                      double lr) {
  const auto tensors = param_tensors(params);
  if (grads.size() != tensors.size() || state.m.size() != tensors.size())
    throw std::invalid_argument("adam_step: gradient/state count mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (!grads[t].same_shape(*tensors[t]))
      throw std::invalid_argument("adam_step: grad shape " + grads[t].shape_str() +
                                  " != param shape " + tensors[t]->shape_str());
    std::vector<double> m = state.m[t].data();
    std::vector<double> v = state.v[t].data();
    std::vector<double> x = tensors[t]->data();
    const auto& g = grads[t].data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = AdamState::beta1 * m[i] + (1.0 - AdamState::beta1) * g[i];
      v[i] = AdamState::beta2 * v[i] + (1.0 - AdamState::beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + AdamState::eps);
    }
    const int r = tensors[t]->rows(), c = tensors[t]->cols();
    state.m[t] = Tensor(r, c, std::move(m));
    state.v[t] = Tensor(r, c, std::move(v));
    *tensors[t] = Tensor(r, c, std::move(x));
  }
}

// ---------------------------------------------------------------------------
// Losses and evaluation

/// -class_weights[label] * log_softmax(logits)[label] as a tape node.
inline NodeId weighted_cross_entropy(Tape& tape, NodeId logits, int label,
                                     const std::vector<double>& class_weights) {
  const Tensor& lv = tape.value(logits);
  if (lv.rows() != 1) throw std::invalid_argument("weighted_cross_entropy: logits must be 1xC");
  if (label < 0 || label >= lv.cols())
    throw std::invalid_argument("weighted_cross_entropy: label out of range");
  std::vector<double> pick(lv.cols(), 0.0);
  pick[label] = 1.0;
  const NodeId ls = tape.log_softmax(logits);
  const NodeId picked = tape.sum(tape.hadamard(ls, tape.input(Tensor::row_vector(pick))));
  return tape.scale(picked, -class_weights[label]);
}

/// Inverse-class-frequency weights over a training split, normalized to
/// mean 1.
inline std::vector<double> inverse_frequency_weights(const GraphSet& train_set) {
  std::vector<double> count(train_set.num_classes, 0.0);
  for (const Graph& g : train_set.graphs) count[g.label] += 1.0;
  std::vector<double> w(train_set.num_classes, 0.0);
  for (int c = 0; c < train_set.num_classes; ++c)
    w[c] = count[c] > 0.0 ? static_cast<double>(train_set.size()) / count[c] : 0.0;
  double mean = std::accumulate(w.begin(), w.end(), 0.0) / w.size();
  if (mean <= 0.0) mean = 1.0;
  for (double& x : w) x /= mean;
  return w;
}

/// Independently zero each undirected edge with probability p (both
/// directions together).
inline EdgeWeights apply_dropedge(const Graph& g, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("apply_dropedge: p out of [0,1)");
  EdgeWeights w = EdgeWeights::ones(g.edges.size());
  if (p == 0.0) return w;
  for (double& s : w.score) s = rng.bernoulli(p) ? 0.0 : 1.0;
  return w;
}

struct EvalResult {
  std::vector<int> predictions;
  std::vector<std::vector<double>> probabilities;
  double loss = 0.0;  // mean weighted cross-entropy
};

/// Pure inference over a list of graphs; masks default to all-ones and class
/// weights to uniform 1.
inline EvalResult evaluate(const ModelParams& params, const std::vector<Graph>& graphs,
                           const std::vector<const EdgeWeights*>* masks = nullptr,
                           const std::vector<double>* class_weights = nullptr) {
  EvalResult out;
  std::vector<double> uniform(params.num_classes, 1.0);
  const std::vector<double>& cw = class_weights ? *class_weights : uniform;
  double total_loss = 0.0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = graphs[gi];
    const EdgeWeights ones = EdgeWeights::ones(g.edges.size());
    const EdgeWeights& w = (masks && (*masks)[gi]) ? *(*masks)[gi] : ones;
    Tape tape;
    const auto pids = load_params(tape, params);
    const NodeId sa = tape.input(weighted_adjacency(g, w));
    const NodeId x = tape.input(g.features);
    const auto fw = forward_on_tape(tape, params, g, sa, x, pids);
    const NodeId ls = tape.log_softmax(fw.logits);
    std::vector<double> prob(params.num_classes);
    int pred = 0;
    for (int c = 0; c < params.num_classes; ++c) {
      prob[c] = std::exp(tape.value(ls)(0, c));
      if (prob[c] > prob[pred]) pred = c;
    }
    total_loss += -cw[g.label] * tape.value(ls)(0, g.label);
    out.predictions.push_back(pred);
    out.probabilities.push_back(std::move(prob));
  }
  out.loss = graphs.empty() ? 0.0 : total_loss / static_cast<double>(graphs.size());
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct RoundLog {
  int epoch = 0;                         // 1-based epoch after which the round ran
  std::vector<int> explained;            // train-split indices that received a mask
  std::vector<int> predictions;          // model predictions for those graphs
  std::vector<int> skipped;              // explainer failures
};

struct TrainHooks {
  std::function<void(int epoch, const ModelParams&)> on_epoch;
  std::function<void(const RoundLog&)> on_round;
};

struct TrainResult {
  ModelParams params;
  std::vector<RunRecord> records;
  std::map<int, Explanation> final_explanations;  // train-split index -> explanation
  std::map<int, EdgeWeights> final_masks;         // installed binary masks
  std::vector<RoundLog> rounds;
};

/// Vanilla / EXPASS / DropEdge training. Per epoch: shuffled mini-batches,
/// each graph forwarded with its current EdgeWeights (all-ones by default, a
/// fresh DropEdge mask when dropedge_p > 0, or the installed explanation
/// mask), summed batch loss, one Adam step per batch. After every epoch e
/// with burn_in <= e < epochs (EXPASS mode): freeze params, find correctly
/// predicted training graphs, sample floor(sample_frac * count), explain
/// each (median over runs), harden at topk, and install the mask for
/// subsequent epochs. Masks persist until overwritten. Explainer failures
/// skip that graph with a warning, never abort.
inline TrainResult train(const ModelParams& model_init, const GraphSet& train_set,
                         const GraphSet& val_set, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}) {
  validate_train_config(cfg);
  const int n = train_set.size();
  if (n == 0) throw std::invalid_argument("train: empty training split");

  TrainResult result;
  result.params = model_init;
  AdamState adam = AdamState::like(result.params);
  const std::vector<double> class_weights = inverse_frequency_weights(train_set);

  std::vector<std::optional<EdgeWeights>> masks(n);
  const bool expass_mode = cfg.explainer != ExplainerKind::None;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // per-epoch DropEdge masks
    std::vector<EdgeWeights> drop_masks;
    if (cfg.dropedge_p > 0.0) {
      drop_masks.reserve(n);
      for (int gi = 0; gi < n; ++gi) {
        Rng rng(derive_seed(cfg.seed, "dropedge", static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(gi)));
        drop_masks.push_back(apply_dropedge(train_set.graphs[gi], cfg.dropedge_p, rng));
      }
    }
    const auto mask_of = [&](int gi) -> EdgeWeights {
      if (masks[gi]) return *masks[gi];
      if (cfg.dropedge_p > 0.0) return drop_masks[gi];
      return EdgeWeights::ones(train_set.graphs[gi].edges.size());
    };

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    {
      Rng rng(derive_seed(cfg.seed, "epoch_shuffle", static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
    }

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      Tape tape;
      const auto pids = load_params(tape, result.params);
      NodeId batch_loss = -1;
      for (int bi = start; bi < stop; ++bi) {
        const int gi = order[bi];
        const Graph& g = train_set.graphs[gi];
        const NodeId sa = tape.input(weighted_adjacency(g, mask_of(gi)));
        const NodeId x = tape.input(g.features);
        const auto fw = forward_on_tape(tape, result.params, g, sa, x, pids);
        const NodeId loss = weighted_cross_entropy(tape, fw.logits, g.label, class_weights);
        batch_loss = (batch_loss < 0) ? loss : tape.add(batch_loss, loss);
      }
      tape.backward(batch_loss);
      std::vector<Tensor> grads;
      grads.reserve(pids.size());
      const auto tensors = param_tensors(result.params);
      for (std::size_t t = 0; t < pids.size(); ++t)
        grads.push_back(tape.has_grad(pids[t])
                            ? tape.grad(pids[t])
                            : Tensor::zeros(tensors[t]->rows(), tensors[t]->cols()));
      adam_step(result.params, grads, adam, cfg.lr);
    }

    // explanation round
    if (expass_mode && epoch >= cfg.burn_in && epoch < cfg.epochs) {
      const EvalResult eval = evaluate(result.params, train_set.graphs);
      std::vector<int> correct;
      for (int gi = 0; gi < n; ++gi)
        if (eval.predictions[gi] == train_set.graphs[gi].label) correct.push_back(gi);
      {
        Rng rng(derive_seed(cfg.seed, "round_sample", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(correct);
      }
      const int take = static_cast<int>(std::floor(cfg.sample_frac * correct.size()));
      RoundLog round;
      round.epoch = epoch;
      for (int si = 0; si < take; ++si) {
        const int gi = correct[si];
        const Graph& g = train_set.graphs[gi];
        if (g.edges.empty()) continue;
        try {
          Explanation e = explain_graph(
              result.params, g, gi, eval.predictions[gi], cfg.explainer, cfg.explainer_cfg,
              derive_seed(cfg.seed, "round_explain", static_cast<std::uint64_t>(epoch),
                          static_cast<std::uint64_t>(gi)));
          EdgeWeights hard = harden_explanation(e, cfg.topk, g);
          masks[gi] = hard;
          result.final_masks[gi] = std::move(hard);
          result.final_explanations[gi] = std::move(e);
          round.explained.push_back(gi);
          round.predictions.push_back(eval.predictions[gi]);
        } catch (const std::exception& ex) {
          std::cerr << "warning: explainer failed on graph " << gi << ": " << ex.what() << "\n";
          round.skipped.push_back(gi);
        }
      }
      if (hooks.on_round) hooks.on_round(round);
      result.rounds.push_back(std::move(round));
    }

    // per-epoch metrics rows (train with current masks, val unmasked)
    int masked_count = 0;
    for (const auto& m : masks) masked_count += m.has_value();
    {
      std::vector<const EdgeWeights*> mask_ptrs(n, nullptr);
      std::vector<EdgeWeights> storage(n);
      for (int gi = 0; gi < n; ++gi) {
        storage[gi] = mask_of(gi);
        mask_ptrs[gi] = &storage[gi];
      }
      const EvalResult tr = evaluate(result.params, train_set.graphs, &mask_ptrs, &class_weights);
      RunRecord row;
      row.seed = cfg.seed;
      row.epoch = epoch;
      row.split = "train";
      row.loss = tr.loss;
      row.masked_graph_count = masked_count;
      if (train_set.num_classes == 2) {
        std::vector<double> pos_prob;
        std::vector<int> labels;
        for (int gi = 0; gi < n; ++gi) {
          pos_prob.push_back(tr.probabilities[gi][1]);
          labels.push_back(train_set.graphs[gi].label);
        }
        row.auroc = auroc(pos_prob, labels);
        row.f1 = f1(tr.predictions, labels);
      }
      result.records.push_back(std::move(row));
    }
    if (val_set.size() > 0) {
      const EvalResult va = evaluate(result.params, val_set.graphs, nullptr, &class_weights);
      RunRecord row;
      row.seed = cfg.seed;
      row.epoch = epoch;
      row.split = "val";
      row.loss = va.loss;
      row.masked_graph_count = 0;
      if (val_set.num_classes == 2) {
        std::vector<double> pos_prob;
        std::vector<int> labels;
        for (int gi = 0; gi < val_set.size(); ++gi) {
          pos_prob.push_back(va.probabilities[gi][1]);
          labels.push_back(val_set.graphs[gi].label);
        }
        try {
          row.auroc = auroc(pos_prob, labels);
        } catch (const std::invalid_argument&) {
          row.auroc = 0.5;  // tiny val splits can be single-class
        }
        row.f1 = f1(va.predictions, labels);
      }
      result.records.push_back(std::move(row));
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, result.params);
  }
  return result;
}

}  // namespace expass
