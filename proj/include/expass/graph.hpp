#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "expass/eigen.hpp"
#include "expass/rng.hpp"
#include "expass/tensor.hpp"

namespace expass {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Immutable undirected graph instance. Edges are stored once with u < v,
/// sorted and duplicate-free; no self-loops (self-loops exist only inside
/// the augmented adjacency).
struct Graph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  Tensor features;  // num_nodes x d
  int label = 0;
  std::vector<int> node_labels;        // empty when absent
  std::vector<int> ground_truth_edges; // edge indices; synthetic motifs only

  int feature_dim() const { return features.cols(); }
  int num_edges() const { return static_cast<int>(edges.size()); }
};

inline Graph make_graph(int num_nodes, std::vector<std::pair<int, int>> edges, Tensor features,
                        int label, std::vector<int> node_labels = {}) {
  if (num_nodes < 0) throw std::invalid_argument("graph: negative node count");
  if (features.rows() != num_nodes)
    throw std::invalid_argument("graph: features have " + std::to_string(features.rows()) +
                                " rows for " + std::to_string(num_nodes) + " nodes");
  for (auto& [u, v] : edges) {
    if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes)
      throw std::invalid_argument("graph: edge endpoint out of range");
    if (u == v) throw std::invalid_argument("graph: self-loop at node " + std::to_string(u));
    if (u > v) std::swap(u, v);
  }
  std::sort(edges.begin(), edges.end());
  if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
    throw std::invalid_argument("graph: duplicate edge");
  if (!node_labels.empty() && static_cast<int>(node_labels.size()) != num_nodes)
    throw std::invalid_argument("graph: node_labels length mismatch");
  Graph g;
  g.num_nodes = num_nodes;
  g.edges = std::move(edges);
  g.features = std::move(features);
  g.label = label;
  g.node_labels = std::move(node_labels);
  return g;
}

struct NeighborRef {
  int node;
  int edge_id;
};

inline std::vector<std::vector<NeighborRef>> neighbor_lists(const Graph& g) {
  std::vector<std::vector<NeighborRef>> adj(g.num_nodes);
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto [u, v] = g.edges[e];
    adj[u].push_back({v, e});
    adj[v].push_back({u, e});
  }
  return adj;
}

inline std::vector<int> degrees(const Graph& g) {
  std::vector<int> d(g.num_nodes, 0);
  for (const auto& [u, v] : g.edges) {
    ++d[u];
    ++d[v];
  }
  return d;
}

struct GraphSet {
  std::vector<Graph> graphs;
  int num_classes = 0;
  int feature_dim = 0;
  std::string name;

  int size() const { return static_cast<int>(graphs.size()); }
};

inline void validate_graph_set(const GraphSet& s) {
  for (const Graph& g : s.graphs) {
    if (g.feature_dim() != s.feature_dim)
      throw std::invalid_argument("graph set '" + s.name + "': inconsistent feature_dim");
    if (g.label < 0 || g.label >= s.num_classes)
      throw std::invalid_argument("graph set '" + s.name + "': label out of range");
  }
}

// ---------------------------------------------------------------------------
// Spectral quantities

/// Augmented adjacency/Laplacian bundle: A~ = A + I, D~ = D + I,
/// Delta~ = I - D~^{-1/2} A~ D~^{-1/2}, P = I - Delta~ (entrywise, so
/// Delta~ + P == I holds exactly in the stored arithmetic).
struct SpectralPack {
  Tensor a_tilde;
  std::vector<double> d_tilde;
  Tensor delta_tilde;
  Tensor p;
  std::vector<double> eigenvalues;  // of delta_tilde, ascending
};

inline SpectralPack spectral_pack(const Graph& g) {
  const int n = g.num_nodes;
  if (n < 1) throw std::invalid_argument("spectral_pack: empty graph");
  std::vector<double> at(static_cast<std::size_t>(n) * n, 0.0);
  for (const auto& [u, v] : g.edges) {
    at[static_cast<std::size_t>(u) * n + v] = 1.0;
    at[static_cast<std::size_t>(v) * n + u] = 1.0;
  }
  for (int i = 0; i < n; ++i) at[static_cast<std::size_t>(i) * n + i] = 1.0;

  SpectralPack pack;
  pack.d_tilde.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += at[static_cast<std::size_t>(i) * n + j];
    pack.d_tilde[i] = s;
  }

  std::vector<double> delta(static_cast<std::size_t>(n) * n);
  std::vector<double> p(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double norm = at[static_cast<std::size_t>(i) * n + j] /
                          std::sqrt(pack.d_tilde[i] * pack.d_tilde[j]);
      const double d = (i == j ? 1.0 : 0.0) - norm;
      delta[static_cast<std::size_t>(i) * n + j] = d;
      p[static_cast<std::size_t>(i) * n + j] = (i == j ? 1.0 : 0.0) - d;
    }
  }
  pack.a_tilde = Tensor(n, n, std::move(at));
  pack.delta_tilde = Tensor(n, n, std::move(delta));
  pack.p = Tensor(n, n, std::move(p));

  // Null-vector check: Delta~ annihilates (sqrt(1+deg_i))_i.
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += pack.delta_tilde(i, j) * std::sqrt(pack.d_tilde[j]);
    if (std::fabs(acc) > 1e-9)
      throw std::runtime_error("spectral_pack: Laplacian null-vector residual " +
                               std::to_string(acc));
  }

  pack.eigenvalues = symmetric_eigen(pack.delta_tilde).values;
  return pack;
}

// ---------------------------------------------------------------------------
// TU-format ingestion

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("missing file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline long parse_int(const std::string& s, const std::string& file, std::size_t lineno) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(file + ":" + std::to_string(lineno) + ": expected integer, got '" + s + "'");
  }
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos != s.size())
    throw ParseError(file + ":" + std::to_string(lineno) + ": trailing junk in '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

/// Parse a TU-style plain-text dataset: `<name>_A.txt` (comma-separated,
/// 1-indexed edge pairs), `<name>_graph_indicator.txt`, `<name>_graph_labels.txt`,
/// and optionally `<name>_node_labels.txt` / `<name>_node_attributes.txt`.
/// Node labels are one-hot encoded as features unless attributes are present
/// (attributes win). Graph labels are remapped to contiguous 0-based classes.
inline GraphSet parse_tu_dataset(const std::filesystem::path& directory, const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path a_path = directory / (name + "_A.txt");
  const fs::path ind_path = directory / (name + "_graph_indicator.txt");
  const fs::path lab_path = directory / (name + "_graph_labels.txt");
  const fs::path nlab_path = directory / (name + "_node_labels.txt");
  const fs::path nattr_path = directory / (name + "_node_attributes.txt");

  const auto ind_lines = detail::read_lines(ind_path);
  const int total_nodes = static_cast<int>(ind_lines.size());
  std::vector<int> graph_of(total_nodes);
  int num_graphs = 0;
  for (int i = 0; i < total_nodes; ++i) {
    const long gid = detail::parse_int(ind_lines[i], ind_path.filename().string(), i + 1);
    if (gid < 1)
      throw ParseError(ind_path.filename().string() + ":" + std::to_string(i + 1) +
                       ": graph indicator must be >= 1");
    graph_of[i] = static_cast<int>(gid - 1);
    num_graphs = std::max(num_graphs, static_cast<int>(gid));
  }

  const auto lab_lines = detail::read_lines(lab_path);
  if (static_cast<int>(lab_lines.size()) != num_graphs)
    throw ParseError(lab_path.filename().string() + ": expected " + std::to_string(num_graphs) +
                     " labels, found " + std::to_string(lab_lines.size()));
  std::vector<long> raw_labels(num_graphs);
  for (int i = 0; i < num_graphs; ++i)
    raw_labels[i] = detail::parse_int(lab_lines[i], lab_path.filename().string(), i + 1);
  std::vector<long> classes(raw_labels);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  const auto class_of = [&](long raw) {
    return static_cast<int>(std::lower_bound(classes.begin(), classes.end(), raw) -
                            classes.begin());
  };

  // Local node index within each graph = position among that graph's nodes.
  std::vector<int> local_index(total_nodes), graph_size(num_graphs, 0);
  for (int i = 0; i < total_nodes; ++i) local_index[i] = graph_size[graph_of[i]]++;

  std::vector<std::set<std::pair<int, int>>> edge_sets(num_graphs);
  const auto a_lines = detail::read_lines(a_path);
  const std::string a_name = a_path.filename().string();
  for (std::size_t li = 0; li < a_lines.size(); ++li) {
    if (a_lines[li].empty()) continue;
    const auto parts = detail::split_csv(a_lines[li]);
    if (parts.size() != 2)
      throw ParseError(a_name + ":" + std::to_string(li + 1) + ": expected 'u, v'");
    const long u1 = detail::parse_int(parts[0], a_name, li + 1);
    const long v1 = detail::parse_int(parts[1], a_name, li + 1);
    if (u1 < 1 || u1 > total_nodes || v1 < 1 || v1 > total_nodes)
      throw ParseError(a_name + ":" + std::to_string(li + 1) + ": node index out of range");
    const int u = static_cast<int>(u1 - 1), v = static_cast<int>(v1 - 1);
    if (graph_of[u] != graph_of[v])
      throw ParseError(a_name + ":" + std::to_string(li + 1) + ": edge crosses graph boundary");
    if (u == v)
      throw ParseError(a_name + ":" + std::to_string(li + 1) + ": self-loop not allowed");
    const int a = std::min(local_index[u], local_index[v]);
    const int b = std::max(local_index[u], local_index[v]);
    edge_sets[graph_of[u]].insert({a, b});  // (u,v)/(v,u) duplicates collapse here
  }

  // Features: attributes file wins over node labels; otherwise one-hot labels;
  // otherwise a constant scalar 1 per node.
  std::vector<std::vector<double>> node_features(total_nodes);
  std::vector<int> node_label_vals;
  int feature_dim = 0;
  if (fs::exists(nattr_path)) {
    const auto lines = detail::read_lines(nattr_path);
    if (static_cast<int>(lines.size()) != total_nodes)
      throw ParseError(nattr_path.filename().string() + ": expected " +
                       std::to_string(total_nodes) + " rows");
    for (int i = 0; i < total_nodes; ++i) {
      for (const auto& tok : detail::split_csv(lines[i])) {
        try {
          node_features[i].push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw ParseError(nattr_path.filename().string() + ":" + std::to_string(i + 1) +
                           ": bad attribute '" + tok + "'");
        }
      }
      if (i == 0)
        feature_dim = static_cast<int>(node_features[0].size());
      else if (static_cast<int>(node_features[i].size()) != feature_dim)
        throw ParseError(nattr_path.filename().string() + ":" + std::to_string(i + 1) +
                         ": ragged attribute row");
    }
    if (fs::exists(nlab_path)) {
      const auto lines2 = detail::read_lines(nlab_path);
      node_label_vals.resize(total_nodes);
      for (int i = 0; i < total_nodes && i < static_cast<int>(lines2.size()); ++i)
        node_label_vals[i] =
            static_cast<int>(detail::parse_int(lines2[i], nlab_path.filename().string(), i + 1));
    }
  } else if (fs::exists(nlab_path)) {
    const auto lines = detail::read_lines(nlab_path);
    if (static_cast<int>(lines.size()) != total_nodes)
      throw ParseError(nlab_path.filename().string() + ": expected " +
                       std::to_string(total_nodes) + " rows");
    std::vector<long> raw(total_nodes);
    for (int i = 0; i < total_nodes; ++i)
      raw[i] = detail::parse_int(lines[i], nlab_path.filename().string(), i + 1);
    std::vector<long> values(raw);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    feature_dim = static_cast<int>(values.size());
    node_label_vals.resize(total_nodes);
    for (int i = 0; i < total_nodes; ++i) {
      const int k = static_cast<int>(std::lower_bound(values.begin(), values.end(), raw[i]) -
                                     values.begin());
      node_label_vals[i] = static_cast<int>(raw[i]);
      node_features[i].assign(feature_dim, 0.0);
      node_features[i][k] = 1.0;
    }
  } else {
    feature_dim = 1;
    for (auto& f : node_features) f.assign(1, 1.0);
  }

  GraphSet set;
  set.name = name;
  set.num_classes = static_cast<int>(classes.size());
  set.feature_dim = feature_dim;
  std::vector<std::vector<int>> members(num_graphs);
  for (int i = 0; i < total_nodes; ++i) members[graph_of[i]].push_back(i);
  for (int gi = 0; gi < num_graphs; ++gi) {
    const int n = graph_size[gi];
    std::vector<double> feat(static_cast<std::size_t>(n) * feature_dim);
    std::vector<int> nlabels;
    if (!node_label_vals.empty()) nlabels.resize(n);
    for (int global : members[gi]) {
      const int i = local_index[global];
      std::copy(node_features[global].begin(), node_features[global].end(),
                feat.begin() + static_cast<std::size_t>(i) * feature_dim);
      if (!node_label_vals.empty()) nlabels[i] = node_label_vals[global];
    }
    std::vector<std::pair<int, int>> edges(edge_sets[gi].begin(), edge_sets[gi].end());
    set.graphs.push_back(make_graph(n, std::move(edges), Tensor(n, feature_dim, std::move(feat)),
                                    class_of(raw_labels[gi]), std::move(nlabels)));
  }
  validate_graph_set(set);
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic motif generator

/// Erdos-Renyi base graphs (p = 2/base_size, resampled until connected); with
/// the given probability a 4-node cycle motif is attached by one bridge edge
/// and the graph is labeled 1, otherwise 0. Features are one-hot degree
/// capped at 10. The four cycle edges are recorded per graph as the
/// ground-truth explanation (the bridge is attachment, not motif).
inline GraphSet synthetic_motif_dataset(int n_graphs, int base_size, double motif_attach_prob,
                                        std::uint64_t seed) {
  if (n_graphs < 2) throw std::invalid_argument("synthetic_motif_dataset: need n_graphs >= 2");
  if (base_size < 6) throw std::invalid_argument("synthetic_motif_dataset: need base_size >= 6");
  if (motif_attach_prob < 0.0 || motif_attach_prob > 1.0)
    throw std::invalid_argument("synthetic_motif_dataset: motif_attach_prob out of [0,1]");

  constexpr int kDegreeCap = 10;
  const double p = 2.0 / base_size;

  GraphSet set;
  set.name = "synthetic_motif";
  set.num_classes = 2;
  set.feature_dim = kDegreeCap + 1;

  for (int gi = 0; gi < n_graphs; ++gi) {
    Rng rng(derive_seed(seed, "synthetic_motif", static_cast<std::uint64_t>(gi)));

    std::vector<std::pair<int, int>> base_edges;
    for (int attempt = 0;; ++attempt) {
      base_edges.clear();
      for (int u = 0; u < base_size; ++u)
        for (int v = u + 1; v < base_size; ++v)
          if (rng.bernoulli(p)) base_edges.push_back({u, v});
      // connectivity check
      std::vector<std::vector<int>> adj(base_size);
      for (const auto& [u, v] : base_edges) {
        adj[u].push_back(v);
        adj[v].push_back(u);
      }
      std::vector<char> seen(base_size, 0);
      std::queue<int> q;
      q.push(0);
      seen[0] = 1;
      int reached = 1;
      while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int v : adj[u])
          if (!seen[v]) {
            seen[v] = 1;
            ++reached;
            q.push(v);
          }
      }
      if (reached == base_size) break;
      if (attempt > 10000)
        throw std::runtime_error("synthetic_motif_dataset: could not sample a connected base");
    }

    const bool has_motif = rng.bernoulli(motif_attach_prob);
    int n = base_size;
    std::vector<std::pair<int, int>> edges = base_edges;
    std::vector<std::pair<int, int>> motif_edges;
    if (has_motif) {
      const int m0 = n;  // 4-cycle on nodes m0..m0+3
      motif_edges = {{m0, m0 + 1}, {m0 + 1, m0 + 2}, {m0 + 2, m0 + 3}, {m0, m0 + 3}};
      const int anchor = static_cast<int>(rng.uniform_int(0, base_size - 1));
      const int port = m0 + static_cast<int>(rng.uniform_int(0, 3));
      edges.insert(edges.end(), motif_edges.begin(), motif_edges.end());
      edges.push_back({anchor, port});  // bridge: attachment, not ground truth
      n += 4;
    }

    std::vector<int> deg(n, 0);
    for (const auto& [u, v] : edges) {
      ++deg[u];
      ++deg[v];
    }
    std::vector<double> feat(static_cast<std::size_t>(n) * (kDegreeCap + 1), 0.0);
    for (int i = 0; i < n; ++i)
      feat[static_cast<std::size_t>(i) * (kDegreeCap + 1) + std::min(deg[i], kDegreeCap)] = 1.0;

    Graph g = make_graph(n, std::move(edges), Tensor(n, kDegreeCap + 1, std::move(feat)),
                         has_motif ? 1 : 0);
    if (has_motif) {
      for (auto [u, v] : motif_edges) {
        if (u > v) std::swap(u, v);
        const auto it = std::lower_bound(g.edges.begin(), g.edges.end(), std::make_pair(u, v));
        g.ground_truth_edges.push_back(static_cast<int>(it - g.edges.begin()));
      }
      std::sort(g.ground_truth_edges.begin(), g.ground_truth_edges.end());
    }
    set.graphs.push_back(std::move(g));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitResult {
  GraphSet train, val, test;
  std::vector<int> train_ids, val_ids, test_ids;  // indices into the source set
};

/// Stratified split with largest-remainder rounding per class. Parts with a
/// zero ratio stay empty; every part with a positive ratio must end up
/// nonempty, and every class must have at least as many graphs as there are
/// positive-ratio parts.
inline SplitResult split(const GraphSet& set, const std::array<double, 3>& ratios,
                         std::uint64_t seed) {
  double total = ratios[0] + ratios[1] + ratios[2];
  if (std::fabs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split: ratios sum to " + std::to_string(total));
  for (double r : ratios)
    if (r < 0.0) throw std::invalid_argument("split: negative ratio");

  int positive_parts = 0;
  for (double r : ratios)
    if (r > 0.0) ++positive_parts;

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < set.size(); ++i) by_class[set.graphs[i].label].push_back(i);

  // Global part sizes by largest remainder, then per-class floors; each
  // class's leftover graphs fill whatever global capacity remains, preferring
  // the part with the largest per-class fractional quota.
  const int total_n = set.size();
  std::array<int, 3> target{};
  {
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double quota = ratios[k] * total_n;
      target[k] = static_cast<int>(std::floor(quota + 1e-12));
      frac[k] = quota - target[k];
      assigned += target[k];
    }
    while (assigned < total_n) {
      int best = -1;
      for (int k = 0; k < 3; ++k)
        if (ratios[k] > 0.0 && (best < 0 || frac[k] > frac[best])) best = k;
      target[best] += 1;
      frac[best] = -1.0;
      ++assigned;
    }
  }

  std::array<std::vector<int>, 3> parts;
  std::array<int, 3> capacity = target;
  std::vector<std::pair<int, std::vector<int>>> classes(by_class.begin(), by_class.end());
  // floors first, for every class
  std::vector<std::array<int, 3>> count(classes.size(), {0, 0, 0});
  std::vector<std::array<double, 3>> frac(classes.size(), {0.0, 0.0, 0.0});
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    auto& [label, ids] = classes[ci];
    if (static_cast<int>(ids.size()) < positive_parts)
      throw std::invalid_argument("split: class " + std::to_string(label) + " has only " +
                                  std::to_string(ids.size()) + " graphs for " +
                                  std::to_string(positive_parts) + " parts");
    Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(label)));
    rng.shuffle(ids);
    for (int k = 0; k < 3; ++k) {
      const double quota = ratios[k] * static_cast<double>(ids.size());
      count[ci][k] = static_cast<int>(std::floor(quota + 1e-12));
      frac[ci][k] = quota - count[ci][k];
      capacity[k] -= count[ci][k];
    }
  }
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    int leftover = static_cast<int>(classes[ci].second.size());
    for (int k = 0; k < 3; ++k) leftover -= count[ci][k];
    while (leftover > 0) {
      int best = -1;
      for (int k = 0; k < 3; ++k)
        if (ratios[k] > 0.0 && capacity[k] > 0 && (best < 0 || frac[ci][k] > frac[ci][best]))
          best = k;
      if (best < 0) throw std::logic_error("split: no capacity left");
      count[ci][best] += 1;
      capacity[best] -= 1;
      frac[ci][best] = -1.0;
      --leftover;
    }
    int pos = 0;
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < count[ci][k]; ++c) parts[k].push_back(classes[ci].second[pos++]);
  }

  for (int k = 0; k < 3; ++k) {
    std::sort(parts[k].begin(), parts[k].end());
    if (ratios[k] > 0.0 && parts[k].empty())
      throw std::invalid_argument("split: part " + std::to_string(k) + " empty after rounding");
  }

  SplitResult out;
  const auto build = [&](const std::vector<int>& ids) {
    GraphSet s;
    s.num_classes = set.num_classes;
    s.feature_dim = set.feature_dim;
    s.name = set.name;
    for (int i : ids) s.graphs.push_back(set.graphs[i]);
    return s;
  };
  out.train = build(parts[0]);
  out.val = build(parts[1]);
  out.test = build(parts[2]);
  out.train_ids = parts[0];
  out.val_ids = parts[1];
  out.test_ids = parts[2];
  return out;
}

}  // namespace expass
