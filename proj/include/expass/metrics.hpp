#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "expass/eigen.hpp"
#include "expass/graph.hpp"
#include "expass/tape.hpp"
#include "expass/tensor.hpp"

namespace expass {

/// Mann-Whitney AUROC from positive-class probabilities; ties count 1/2.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y == 1)
      ++n_pos;
    else if (y == 0)
      ++n_neg;
    else
      throw std::invalid_argument("auroc: labels must be binary");
  }
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: undefined, only one class present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// F1 of the positive class (class 1); optionally macro-averaged over both
/// classes. 0 when the precision/recall denominator is 0.
inline double f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                 bool macro = false) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("f1: size mismatch");
  const auto f1_of = [&](int positive) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool p = predictions[i] == positive, t = labels[i] == positive;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const double denom = 2 * tp + fp + fn;
    return denom == 0.0 ? 0.0 : 2 * tp / denom;
  };
  if (!macro) return f1_of(1);
  return 0.5 * (f1_of(0) + f1_of(1));
}

/// Graph explanation faithfulness: 1 - exp(-KL(p_full || p_masked)).
/// Natural log; terms with p_full[i] = 0 contribute 0; p_masked entries are
/// clamped at 1e-12 to avoid infinities.
inline double gef(const std::vector<double>& p_full, const std::vector<double>& p_masked) {
  if (p_full.size() != p_masked.size() || p_full.empty())
    throw std::invalid_argument("gef: distribution size mismatch");
  const auto check = [](const std::vector<double>& p, const char* which) {
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string("gef: negative mass in ") + which);
      s += v;
    }
    if (std::fabs(s - 1.0) > 1e-9)
      throw std::invalid_argument(std::string("gef: ") + which + " sums to " + std::to_string(s));
  };
  check(p_full, "p_full");
  check(p_masked, "p_masked");
  double kl = 0.0;
  for (std::size_t i = 0; i < p_full.size(); ++i) {
    if (p_full[i] == 0.0) continue;
    kl += p_full[i] * std::log(p_full[i] / std::max(p_masked[i], 1e-12));
  }
  kl = std::max(kl, 0.0);
  return 1.0 - std::exp(-kl);
}

/// Dirichlet energy tr(H^T Delta~ H) of node embeddings over a graph.
inline double dirichlet_energy(const Tensor& h, const SpectralPack& pack) {
  if (h.rows() != pack.delta_tilde.rows())
    throw std::invalid_argument("dirichlet_energy: H has " + std::to_string(h.rows()) +
                                " rows for " + std::to_string(pack.delta_tilde.rows()) + " nodes");
  const Tensor dh = matmul(pack.delta_tilde, h);
  double e = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) e += h.data()[i] * dh.data()[i];
  return e;
}

/// Group distance ratio: mean inter-group pairwise L2 distance over mean
/// intra-group pairwise distance (intra clamped at 1e-12; identical
/// embeddings therefore give 0). Rows of `embeddings` are instances.
inline double gdr(const Tensor& embeddings, const std::vector<int>& labels) {
  const int n = embeddings.rows();
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("gdr: size mismatch");
  std::vector<int> distinct(labels);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw std::domain_error("gdr: needs at least two groups");

  double inter_sum = 0.0, intra_sum = 0.0;
  long inter_cnt = 0, intra_cnt = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (int k = 0; k < embeddings.cols(); ++k) {
        const double diff = embeddings(i, k) - embeddings(j, k);
        d2 += diff * diff;
      }
      const double d = std::sqrt(d2);
      if (labels[i] == labels[j]) {
        intra_sum += d;
        ++intra_cnt;
      } else {
        inter_sum += d;
        ++inter_cnt;
      }
    }
  }
  if (intra_cnt == 0 || inter_cnt == 0)
    throw std::domain_error("gdr: degenerate grouping (every group needs >= 2 members)");
  const double inter = inter_sum / inter_cnt;
  const double intra = intra_sum / intra_cnt;
  return inter / std::max(intra, 1e-12);
}

// ---------------------------------------------------------------------------
// Theory oracles

struct EnergyBoundResult {
  double e_prev = 0.0;
  double e_next = 0.0;
  double lower = 0.0;        // spectrum-exact sandwich, asserted
  double upper = 0.0;
  double reference_lower = 0.0;  // (1-lambda_1)^2 s_min E, reported only
  double reference_upper = 0.0;  // (1-lambda_0)^2 s_max E, reported only
};

/// Dirichlet-energy sandwich for one linear propagation step H' = P H W.
/// The asserted bounds use the exact eigenvalues of Delta~ restricted to the
/// modes actually present in H; the looser reference factors (lambda_1 closest to 1,
/// lambda_0 closest to 0, both nonzero) are reported as diagnostics.
inline EnergyBoundResult energy_bound_check(const SpectralPack& pack, const Tensor& h,
                                            const Tensor& w) {
  EnergyBoundResult r;
  r.e_prev = dirichlet_energy(h, pack);
  const Tensor h_next = matmul(matmul(pack.p, h), w);
  r.e_next = dirichlet_energy(h_next, pack);

  const auto gw = symmetric_eigen(gram(w));
  const double s_min = std::max(0.0, gw.values.front());
  const double s_max = std::max(0.0, gw.values.back());

  const auto eig = symmetric_eigen(pack.delta_tilde);
  const Tensor coeff = matmul_tn(eig.vectors, h);  // row k = components on eigenvector k
  const int n = pack.delta_tilde.rows();
  std::vector<double> weight(n, 0.0);
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    double norm2 = 0.0;
    for (int j = 0; j < coeff.cols(); ++j) norm2 += coeff(k, j) * coeff(k, j);
    weight[k] = eig.values[k] * norm2;
    total += weight[k];
  }

  double lo_factor = 0.0, hi_factor = 0.0;
  bool any = false;
  for (int k = 0; k < n; ++k) {
    if (weight[k] <= 1e-12 * std::max(total, 1e-300)) continue;
    const double f = (1.0 - eig.values[k]) * (1.0 - eig.values[k]);
    if (!any) {
      lo_factor = hi_factor = f;
      any = true;
    } else {
      lo_factor = std::min(lo_factor, f);
      hi_factor = std::max(hi_factor, f);
    }
  }
  r.lower = any ? lo_factor * s_min * r.e_prev : 0.0;
  r.upper = any ? hi_factor * s_max * r.e_prev : 0.0;

  double lambda0 = 0.0, lambda1 = 0.0;
  double best0 = -1.0, best1 = -1.0;
  for (double lam : eig.values) {
    if (lam <= 1e-9) continue;  // nonzero eigenvalues only
    if (best0 < 0.0 || std::fabs(lam) < best0) {
      best0 = std::fabs(lam);
      lambda0 = lam;
    }
    if (best1 < 0.0 || std::fabs(lam - 1.0) < best1) {
      best1 = std::fabs(lam - 1.0);
      lambda1 = lam;
    }
  }
  r.reference_lower = (1.0 - lambda1) * (1.0 - lambda1) * s_min * r.e_prev;
  r.reference_upper = (1.0 - lambda0) * (1.0 - lambda0) * s_max * r.e_prev;
  return r;
}

struct Theorem1Result {
  std::vector<double> lhs;  // ||h_u - h'_u|| per node
  std::vector<double> rhs;  // weight-difference bound per node
};

/// Restricted single-layer bound: both layers evaluated from the same
/// previous-layer embeddings with a full (all-ones) mask and sigmoid
/// activation,
///   h_u  = sigmoid(h_u W_a  + (sum_v h_v) W_n),
/// so ||h_u - h'_u|| <= ||Wa - Wa'|| ||h_u|| + ||Wn - Wn'|| sum_v ||h_v||
/// holds without any faithfulness assumption.
inline Theorem1Result theorem1_check(const Tensor& wa, const Tensor& wa_alt, const Tensor& wn,
                                     const Tensor& wn_alt, const Tensor& h_prev, const Graph& g) {
  if (h_prev.rows() != g.num_nodes)
    throw std::invalid_argument("theorem1_check: embeddings rows != num_nodes");
  const auto adj = neighbor_lists(g);
  const double na = spectral_norm(sub(wa, wa_alt));
  const double nn = spectral_norm(sub(wn, wn_alt));

  const auto row_norm = [&](const Tensor& t, int i) {
    double s = 0.0;
    for (int j = 0; j < t.cols(); ++j) s += t(i, j) * t(i, j);
    return std::sqrt(s);
  };

  const int n = g.num_nodes;
  const int d = h_prev.cols();
  Theorem1Result out;
  out.lhs.resize(n);
  out.rhs.resize(n);
  std::vector<double> neigh_sum(static_cast<std::size_t>(n) * d, 0.0);
  for (int u = 0; u < n; ++u)
    for (const auto& nb : adj[u])
      for (int j = 0; j < d; ++j)
        neigh_sum[static_cast<std::size_t>(u) * d + j] += h_prev(nb.node, j);
  const Tensor neigh(n, d, std::move(neigh_sum));

  const Tensor z = add(matmul(h_prev, wa), matmul(neigh, wn));
  const Tensor z_alt = add(matmul(h_prev, wa_alt), matmul(neigh, wn_alt));
  for (int u = 0; u < n; ++u) {
    double diff2 = 0.0;
    for (int j = 0; j < z.cols(); ++j) {
      const double d1 = sigmoid_value(z(u, j)) - sigmoid_value(z_alt(u, j));
      diff2 += d1 * d1;
    }
    out.lhs[u] = std::sqrt(diff2);
    double nb_norms = 0.0;
    for (const auto& nb : adj[u]) nb_norms += row_norm(h_prev, nb.node);
    out.rhs[u] = na * row_norm(h_prev, u) + nn * nb_norms;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// One per-epoch metrics row for CSV emission.
struct RunRecord {
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double auroc = 0.0;
  double f1 = 0.0;
  std::optional<double> gef;
  std::optional<std::vector<double>> gdr_per_layer;
  std::optional<std::vector<double>> dirichlet_per_layer;
  int masked_graph_count = 0;
};

}  // namespace expass
