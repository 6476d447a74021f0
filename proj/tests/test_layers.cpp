#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "expass/layers.hpp"
#include "expass/tape.hpp"
#include "helpers.hpp"

using expass::Arch;
using expass::EdgeWeights;
using expass::Graph;
using expass::NodeId;
using expass::Tape;
using expass::Tensor;
using test_helpers::approx_tensor;
using test_helpers::random_graph;

namespace {

const std::vector<Arch> kArchs = {Arch::GCN, Arch::GraphConv, Arch::GraphSAGE, Arch::GIN};

Graph permuted(const Graph& g, const std::vector<int>& perm) {
  std::vector<std::pair<int, int>> edges;
  for (const auto& [u, v] : g.edges) edges.push_back({perm[u], perm[v]});
  std::vector<double> feat(g.features.size());
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j = 0; j < g.feature_dim(); ++j)
      feat[static_cast<std::size_t>(perm[i]) * g.feature_dim() + j] = g.features(i, j);
  return expass::make_graph(g.num_nodes, std::move(edges),
                            Tensor(g.num_nodes, g.feature_dim(), std::move(feat)), g.label);
}

Graph edgeless(const Graph& g) {
  return expass::make_graph(g.num_nodes, {}, g.features, g.label);
}

}  // namespace

TEST_SUITE("layers") {
  TEST_CASE("init_params: deterministic, bounded, documented shapes") {
    const auto a = expass::init_params(Arch::GCN, 7, 32, 2, 3, 9);
    const auto b = expass::init_params(Arch::GCN, 7, 32, 2, 3, 9);
    const auto c = expass::init_params(Arch::GCN, 7, 32, 2, 3, 10);
    REQUIRE(a.layers.size() == 3);
    for (int l = 0; l < 3; ++l) {
      REQUIRE(a.layers[l].size() == 1);
      CHECK(a.layers[l][0] == b.layers[l][0]);
      const int fan_in = l == 0 ? 7 : 32;
      const double bound = std::sqrt(6.0 / (fan_in + 32));
      for (double w : a.layers[l][0].data()) CHECK(std::fabs(w) <= bound);
    }
    CHECK(a.readout.rows() == 32);
    CHECK(a.readout.cols() == 2);
    CHECK(a.readout == b.readout);
    CHECK_FALSE(a.readout == c.readout);

    const auto gin = expass::init_params(Arch::GIN, 7, 32, 2, 3, 9);
    CHECK(gin.layers[0].size() == 2);
    CHECK(gin.layers[0][0].rows() == 7);
    CHECK(gin.layers[0][1].rows() == 32);
  }

  TEST_CASE("edge weights: non-edge key is a contract error") {
    expass::Rng rng(1);
    const Graph g = random_graph(rng, 6, 0.5, 3);
    CHECK_THROWS_AS(expass::edge_weights_from_map(g, {{{0, 0}, 0.5}}), std::invalid_argument);
    std::map<std::pair<int, int>, double> missing = {{{5, 5}, 1.0}};
    CHECK_THROWS_AS(expass::edge_weights_from_map(g, missing), std::invalid_argument);
    CHECK_THROWS_AS(expass::validate_edge_weights(EdgeWeights{{2.0}}, g), std::invalid_argument);
  }

  TEST_CASE("forward: all-ones weights match the default bitwise") {
    expass::Rng rng(2);
    for (Arch arch : kArchs) {
      const Graph g = random_graph(rng, 9, 0.4, 4);
      const auto params = expass::init_params(arch, 4, 8, 2, 3, 77);
      const Tensor a = expass::forward(params, g, EdgeWeights::ones(g.edges.size()));
      const Tensor b = expass::forward(params, g);
      CHECK(a == b);
    }
  }

  TEST_CASE("forward: single isolated node, GCN, identity weights") {
    std::vector<double> feat = {0.3, 0.0, 1.2};
    const Graph g = expass::make_graph(1, {}, Tensor(1, 3, feat), 0);
    auto params = expass::init_params(Arch::GCN, 3, 3, 2, 1, 5);
    params.layers[0][0] = Tensor::identity(3);
    const Tensor logits = expass::forward(params, g);
    const Tensor expected = expass::matmul(Tensor(1, 3, feat), params.readout);
    CHECK(approx_tensor(logits, expected, 1e-12));
  }

  TEST_CASE("forward: zero mask equals the edgeless graph (GraphConv/SAGE/GIN)") {
    expass::Rng rng(3);
    for (Arch arch : {Arch::GraphConv, Arch::GraphSAGE, Arch::GIN}) {
      for (int trial = 0; trial < 20; ++trial) {
        const Graph g = random_graph(rng, 4 + static_cast<int>(rng.uniform_int(0, 8)), 0.5, 3);
        const auto params = expass::init_params(arch, 3, 6, 2, 2, trial);
        const EdgeWeights zeros{std::vector<double>(g.edges.size(), 0.0)};
        const Tensor masked = expass::forward(params, g, zeros);
        const Tensor bare = expass::forward(params, edgeless(g));
        CHECK(approx_tensor(masked, bare, 1e-9));
      }
    }
  }

  TEST_CASE("forward: GCN zero mask under recomputed degrees equals the edgeless graph") {
    // masked edges leave the normalizer too, so D-hat collapses to I and the
    // zero-mask forward coincides with the edgeless forward
    expass::Rng rng(4);
    const Graph g = random_graph(rng, 8, 0.5, 3);
    const auto params = expass::init_params(Arch::GCN, 3, 6, 2, 3, 0);
    const EdgeWeights zeros{std::vector<double>(g.edges.size(), 0.0)};
    CHECK(approx_tensor(expass::forward(params, g, zeros), expass::forward(params, edgeless(g)),
                        1e-9));
  }

  TEST_CASE("forward: permutation invariance of the readout") {
    expass::Rng rng(5);
    for (Arch arch : kArchs) {
      const Graph g = random_graph(rng, 10, 0.4, 4);
      std::vector<int> perm(g.num_nodes);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      const auto params = expass::init_params(arch, 4, 8, 2, 3, 21);
      const Tensor a = expass::forward(params, g);
      const Tensor b = expass::forward(params, permuted(g, perm));
      CHECK(approx_tensor(a, b, 1e-9));
    }
  }

  TEST_CASE("forward: fractional masks accepted, dimension mismatch rejected") {
    expass::Rng rng(6);
    const Graph g = random_graph(rng, 6, 0.6, 3);
    const auto params = expass::init_params(Arch::GraphConv, 3, 4, 2, 2, 1);
    EdgeWeights frac = EdgeWeights::ones(g.edges.size());
    for (double& s : frac.score) s = 0.5;
    CHECK_NOTHROW(expass::forward(params, g, frac));
    const auto wrong = expass::init_params(Arch::GraphConv, 5, 4, 2, 2, 1);
    CHECK_THROWS_AS(expass::forward(wrong, g), std::invalid_argument);
  }

  TEST_CASE("node_embeddings: per-layer shapes, determinism, shared computation") {
    expass::Rng rng(7);
    const Graph g = random_graph(rng, 7, 0.5, 5);
    const auto params = expass::init_params(Arch::GraphSAGE, 5, 32, 2, 3, 2);
    const auto embs = expass::node_embeddings(params, g);
    REQUIRE(embs.size() == 3);
    for (const Tensor& h : embs) {
      CHECK(h.rows() == 7);
      CHECK(h.cols() == 32);
    }
    CHECK(embs[2] == expass::node_embeddings(params, g)[2]);

    // the last entry is the pre-readout matrix used by forward
    const Tensor logits = expass::forward(params, g);
    std::vector<double> pooled(32, 0.0);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 32; ++j) pooled[j] += embs[2](i, j) / 7.0;
    const Tensor expected = expass::matmul(Tensor(1, 32, std::move(pooled)), params.readout);
    CHECK(approx_tensor(logits, expected, 1e-12));
  }

  TEST_CASE("gradients of the full forward pass grad_check for every weight tensor") {
    expass::Rng rng(8);
    for (Arch arch : kArchs) {
      const Graph g = random_graph(rng, 8, 0.5, 3);
      const auto params = expass::init_params(arch, 3, 5, 2, 2, 3);
      const auto tensors = expass::param_tensors(params);
      const Tensor sa = expass::weighted_adjacency(g, EdgeWeights::ones(g.edges.size()));
      for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        const auto f = [&](Tape& t, NodeId xid) {
          std::vector<NodeId> pids;
          for (std::size_t k = 0; k < tensors.size(); ++k)
            pids.push_back(k == ti ? xid : t.input(*tensors[k]));
          const auto fw =
              expass::forward_on_tape(t, params, g, t.input(sa), t.input(g.features), pids);
          return t.sum(fw.logits);
        };
        const auto res = expass::grad_check(f, *tensors[ti], 1e-5);
        CHECK(res.max_rel_err < 1e-4);
      }
    }
  }
}
