#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "expass/graph.hpp"
#include "expass/layers.hpp"
#include "expass/rng.hpp"
#include "expass/tensor.hpp"

namespace test_helpers {

inline bool approx(double a, double b, double tol = 1e-9) { return std::fabs(a - b) <= tol; }

inline bool approx_tensor(const expass::Tensor& a, const expass::Tensor& b, double tol = 1e-9) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::fabs(a.data()[i] - b.data()[i]) > tol) return false;
  return true;
}

inline expass::Tensor random_tensor(expass::Rng& rng, int rows, int cols, double scale = 1.0) {
  std::vector<double> d(static_cast<std::size_t>(rows) * cols);
  for (double& v : d) v = scale * rng.normal();
  return expass::Tensor(rows, cols, std::move(d));
}

inline expass::Graph random_graph(expass::Rng& rng, int n, double p, int feature_dim) {
  std::vector<std::pair<int, int>> edges;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v)
      if (rng.bernoulli(p)) edges.push_back({u, v});
  std::vector<double> feat(static_cast<std::size_t>(n) * feature_dim);
  for (double& v : feat) v = rng.normal();
  return expass::make_graph(n, std::move(edges),
                            expass::Tensor(n, feature_dim, std::move(feat)),
                            static_cast<int>(rng.uniform_int(0, 1)));
}

/// Inverse of parse_tu_dataset for round-trip tests: writes the mandatory TU
/// files (plus node labels when present) for a GraphSet.
inline void write_tu(const std::filesystem::path& dir, const std::string& name,
                     const expass::GraphSet& set) {
  std::filesystem::create_directories(dir);
  std::ofstream a(dir / (name + "_A.txt"));
  std::ofstream ind(dir / (name + "_graph_indicator.txt"));
  std::ofstream lab(dir / (name + "_graph_labels.txt"));
  bool any_node_labels = false;
  for (const auto& g : set.graphs) any_node_labels |= !g.node_labels.empty();
  std::ofstream nlab;
  if (any_node_labels) nlab.open(dir / (name + "_node_labels.txt"));

  int offset = 0;
  for (std::size_t gi = 0; gi < set.graphs.size(); ++gi) {
    const expass::Graph& g = set.graphs[gi];
    for (int i = 0; i < g.num_nodes; ++i) {
      ind << (gi + 1) << "\n";
      if (any_node_labels) nlab << (g.node_labels.empty() ? 0 : g.node_labels[i]) << "\n";
    }
    for (const auto& [u, v] : g.edges) {
      a << (offset + u + 1) << ", " << (offset + v + 1) << "\n";
      a << (offset + v + 1) << ", " << (offset + u + 1) << "\n";  // directed duplicates
    }
    lab << g.label << "\n";
    offset += g.num_nodes;
  }
}

/// Brute-force AUROC over all positive/negative pairs (ties count 1/2).
inline double brute_force_auroc(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Pairwise form of the Dirichlet energy (sums both orientations of every
/// edge of A~, including the vanishing self-loop terms): the independent
/// oracle for the trace form.
inline double pairwise_dirichlet(const expass::Tensor& h, const expass::SpectralPack& pack) {
  const int n = h.rows();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (pack.a_tilde(i, j) == 0.0) continue;
      double d2 = 0.0;
      for (int k = 0; k < h.cols(); ++k) {
        const double diff = h(i, k) / std::sqrt(pack.d_tilde[i]) -
                            h(j, k) / std::sqrt(pack.d_tilde[j]);
        d2 += diff * diff;
      }
      total += pack.a_tilde(i, j) * d2;
    }
  }
  return 0.5 * total;
}

}  // namespace test_helpers
