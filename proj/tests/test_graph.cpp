#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "expass/graph.hpp"
#include "helpers.hpp"

using expass::GraphSet;
using expass::Tensor;
using test_helpers::approx;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("expass_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// TU directory for MUTAG, when the user has supplied it (no network in the
/// build environment, so the MUTAG checks are data-gated).
std::optional<fs::path> mutag_dir() {
  if (const char* env = std::getenv("EXPASS_MUTAG_DIR")) {
    if (fs::exists(fs::path(env) / "MUTAG_A.txt")) return fs::path(env);
  }
#ifdef EXPASS_SOURCE_DIR
  const fs::path local = fs::path(EXPASS_SOURCE_DIR) / "data" / "MUTAG";
  if (fs::exists(local / "MUTAG_A.txt")) return local;
#endif
  return std::nullopt;
}

GraphSet two_triangles() {
  GraphSet set;
  set.num_classes = 2;
  set.feature_dim = 2;
  set.name = "tri";
  for (int gi = 0; gi < 2; ++gi) {
    std::vector<double> feat = {1, 0, 0, 1, 1, 0};
    set.graphs.push_back(expass::make_graph(3, {{0, 1}, {1, 2}, {0, 2}},
                                            Tensor(3, 2, std::move(feat)), gi, {0, 1, 0}));
  }
  return set;
}

}  // namespace

TEST_SUITE("graph") {
  TEST_CASE("make_graph validates") {
    CHECK_THROWS_AS(expass::make_graph(2, {{0, 2}}, Tensor::zeros(2, 1), 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(expass::make_graph(2, {{1, 1}}, Tensor::zeros(2, 1), 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(expass::make_graph(2, {{0, 1}, {1, 0}}, Tensor::zeros(2, 1), 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(expass::make_graph(2, {{0, 1}}, Tensor::zeros(3, 1), 0),
                    std::invalid_argument);
    const auto g = expass::make_graph(3, {{2, 0}, {1, 0}}, Tensor::zeros(3, 1), 0);
    CHECK(g.edges == std::vector<std::pair<int, int>>{{0, 1}, {0, 2}});
  }

  TEST_CASE("parse_tu_dataset: two-triangle fixture") {
    const fs::path dir = temp_dir("tri");
    test_helpers::write_tu(dir, "tri", two_triangles());
    const GraphSet parsed = expass::parse_tu_dataset(dir, "tri");
    CHECK(parsed.size() == 2);
    CHECK(parsed.num_classes == 2);
    for (const auto& g : parsed.graphs) {
      CHECK(g.num_nodes == 3);
      CHECK(g.num_edges() == 3);
    }
    CHECK(parsed.graphs[0].label == 0);
    CHECK(parsed.graphs[1].label == 1);
    // node labels one-hot encoded as features (two distinct labels)
    CHECK(parsed.feature_dim == 2);
    CHECK(parsed.graphs[0].features(0, 0) == 1.0);
    CHECK(parsed.graphs[0].features(1, 1) == 1.0);
  }

  TEST_CASE("parse_tu_dataset: declared 1-node graph with no incident edges") {
    const fs::path dir = temp_dir("lonely");
    std::ofstream(dir / "lonely_A.txt") << "2, 3\n3, 2\n";
    std::ofstream(dir / "lonely_graph_indicator.txt") << "1\n2\n2\n";
    std::ofstream(dir / "lonely_graph_labels.txt") << "5\n6\n";
    const GraphSet parsed = expass::parse_tu_dataset(dir, "lonely");
    CHECK(parsed.size() == 2);
    CHECK(parsed.graphs[0].num_nodes == 1);
    CHECK(parsed.graphs[0].num_edges() == 0);
    CHECK(parsed.graphs[1].num_edges() == 1);
    CHECK(parsed.num_classes == 2);
  }

  TEST_CASE("parse_tu_dataset: errors carry file and line") {
    const fs::path dir = temp_dir("bad");
    CHECK_THROWS_AS(expass::parse_tu_dataset(dir, "nope"), expass::ParseError);

    std::ofstream(dir / "bad_graph_indicator.txt") << "1\n1\n2\n2\n";
    std::ofstream(dir / "bad_graph_labels.txt") << "0\n1\n";
    std::ofstream(dir / "bad_A.txt") << "1, 2\n1, 9\n";
    CHECK_THROWS_WITH_AS(expass::parse_tu_dataset(dir, "bad"), doctest::Contains("bad_A.txt:2"),
                         expass::ParseError);

    std::ofstream(dir / "bad_A.txt") << "1, 2\n2, 3\n";  // crosses graphs 1 and 2
    CHECK_THROWS_WITH_AS(expass::parse_tu_dataset(dir, "bad"),
                         doctest::Contains("crosses graph boundary"), expass::ParseError);
  }

  TEST_CASE("parse_tu_dataset: attributes win over node labels") {
    const fs::path dir = temp_dir("attr");
    std::ofstream(dir / "attr_A.txt") << "1, 2\n2, 1\n3, 4\n4, 3\n";
    std::ofstream(dir / "attr_graph_indicator.txt") << "1\n1\n2\n2\n";
    std::ofstream(dir / "attr_graph_labels.txt") << "0\n1\n";
    std::ofstream(dir / "attr_node_labels.txt") << "0\n1\n2\n3\n";
    std::ofstream(dir / "attr_node_attributes.txt") << "0.5, 1.5\n2.5, 3.5\n4.5, 5.5\n6.5, 7.5\n";
    const GraphSet parsed = expass::parse_tu_dataset(dir, "attr");
    CHECK(parsed.feature_dim == 2);
    CHECK(parsed.graphs[0].features(0, 1) == 1.5);
    CHECK(parsed.graphs[1].features(1, 0) == 6.5);
    CHECK(parsed.graphs[0].node_labels.size() == 2);  // labels still carried
  }

  TEST_CASE("property: parse after write_tu is identity on edges and labels") {
    expass::Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
      GraphSet set;
      set.num_classes = 2;
      set.feature_dim = 1;
      set.name = "rt";
      const int n_graphs = 2 + static_cast<int>(rng.uniform_int(0, 3));
      for (int gi = 0; gi < n_graphs; ++gi) {
        const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
        auto g = test_helpers::random_graph(rng, n, 0.5, 1);
        g.label = gi % 2;
        std::vector<double> ones(n, 1.0);
        g.features = Tensor(n, 1, std::move(ones));
        set.graphs.push_back(std::move(g));
      }
      const fs::path dir = temp_dir("roundtrip" + std::to_string(trial));
      test_helpers::write_tu(dir, "rt", set);
      const GraphSet parsed = expass::parse_tu_dataset(dir, "rt");
      REQUIRE(parsed.size() == set.size());
      for (int gi = 0; gi < set.size(); ++gi) {
        CHECK(parsed.graphs[gi].edges == set.graphs[gi].edges);
        CHECK(parsed.graphs[gi].label == set.graphs[gi].label);
      }
    }
  }

  TEST_CASE("parse_tu_dataset: MUTAG when present" * doctest::description("data-gated")) {
    const auto dir = mutag_dir();
    if (!dir) {
      MESSAGE("SKIP: MUTAG dataset not present (set EXPASS_MUTAG_DIR or add data/MUTAG)");
      return;
    }
    const GraphSet mutag = expass::parse_tu_dataset(*dir, "MUTAG");
    CHECK(mutag.size() == 188);
    CHECK(mutag.num_classes == 2);
  }

  TEST_CASE("synthetic_motif_dataset: determinism and label iff motif") {
    const GraphSet a = expass::synthetic_motif_dataset(30, 10, 0.5, 123);
    const GraphSet b = expass::synthetic_motif_dataset(30, 10, 0.5, 123);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) {
      CHECK(a.graphs[i].edges == b.graphs[i].edges);
      CHECK(a.graphs[i].label == b.graphs[i].label);
      CHECK(a.graphs[i].features == b.graphs[i].features);
      CHECK((a.graphs[i].label == 1) == !a.graphs[i].ground_truth_edges.empty());
      if (a.graphs[i].label == 1) {
        CHECK(a.graphs[i].num_nodes == 14);
        CHECK(a.graphs[i].ground_truth_edges.size() == 4);  // the 4-cycle
      } else {
        CHECK(a.graphs[i].num_nodes == 10);
      }
    }
    CHECK(a.feature_dim == 11);  // one-hot degree capped at 10
  }

  TEST_CASE("synthetic_motif_dataset: class balance within 15% over 10 seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const GraphSet set = expass::synthetic_motif_dataset(500, 12, 0.5, seed);
      int positives = 0;
      for (const auto& g : set.graphs) positives += g.label;
      CHECK(positives >= 175);  // 250 +- 15% of 500
      CHECK(positives <= 325);
    }
  }

  TEST_CASE("synthetic_motif_dataset: preconditions") {
    CHECK_THROWS_AS(expass::synthetic_motif_dataset(1, 10, 0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(expass::synthetic_motif_dataset(10, 5, 0.5, 0), std::invalid_argument);
  }

  TEST_CASE("spectral_pack: single node") {
    const auto g = expass::make_graph(1, {}, Tensor::zeros(1, 1), 0);
    const auto pack = expass::spectral_pack(g);
    CHECK(pack.delta_tilde == Tensor(1, 1, {0.0}));
    CHECK(pack.p == Tensor(1, 1, {1.0}));
    CHECK(pack.eigenvalues[0] == 0.0);
  }

  TEST_CASE("spectral_pack: two nodes one edge has eigenvalues {0, 1}") {
    const auto g = expass::make_graph(2, {{0, 1}}, Tensor::zeros(2, 1), 0);
    const auto pack = expass::spectral_pack(g);
    CHECK(approx(pack.delta_tilde(0, 0), 0.5, 1e-15));
    CHECK(approx(pack.delta_tilde(0, 1), -0.5, 1e-15));
    REQUIRE(pack.eigenvalues.size() == 2);
    CHECK(approx(pack.eigenvalues[0], 0.0, 1e-12));
    CHECK(approx(pack.eigenvalues[1], 1.0, 1e-12));
  }

  TEST_CASE("spectral_pack: invariants on random graphs") {
    expass::Rng rng(17);
    for (int trial = 0; trial < 25; ++trial) {
      const int n = 2 + static_cast<int>(rng.uniform_int(0, 10));
      const auto g = test_helpers::random_graph(rng, n, 0.4, 1);
      const auto pack = expass::spectral_pack(g);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          CHECK(std::fabs(pack.delta_tilde(i, j) - pack.delta_tilde(j, i)) <= 1e-12);
          // Delta~ + P = I exactly, same construction arithmetic
          CHECK(pack.delta_tilde(i, j) + pack.p(i, j) == (i == j ? 1.0 : 0.0));
        }
      CHECK(pack.eigenvalues.front() > -1e-9);
      CHECK(pack.eigenvalues.front() < 1e-9);
      CHECK(pack.eigenvalues.back() < 2.0);
    }
  }

  TEST_CASE("split: exact division 8/1/1") {
    GraphSet set;
    set.num_classes = 2;
    set.feature_dim = 1;
    for (int i = 0; i < 10; ++i)
      set.graphs.push_back(expass::make_graph(2, {{0, 1}}, Tensor::zeros(2, 1), i % 2));
    const auto parts = expass::split(set, {0.8, 0.1, 0.1}, 7);
    CHECK(parts.train.size() == 8);
    CHECK(parts.val.size() == 1);
    CHECK(parts.test.size() == 1);
  }

  TEST_CASE("split: 188 graphs with 125/63 labels at (0.8, 0, 0.2)") {
    // the MUTAG class profile, fabricated so the rounding arithmetic is
    // covered without the dataset itself
    GraphSet set;
    set.num_classes = 2;
    set.feature_dim = 1;
    for (int i = 0; i < 188; ++i)
      set.graphs.push_back(expass::make_graph(2, {{0, 1}}, Tensor::zeros(2, 1), i < 125 ? 0 : 1));
    const auto parts = expass::split(set, {0.8, 0.0, 0.2}, 3);
    CHECK(parts.val.size() == 0);
    CHECK(parts.train.size() >= 149);
    CHECK(parts.train.size() <= 151);
    CHECK(parts.test.size() == 188 - parts.train.size());
  }

  TEST_CASE("split: deterministic, disjoint, covering, stratified") {
    const GraphSet set = expass::synthetic_motif_dataset(40, 8, 0.5, 11);
    const auto p1 = expass::split(set, {0.6, 0.2, 0.2}, 5);
    const auto p2 = expass::split(set, {0.6, 0.2, 0.2}, 5);
    CHECK(p1.train_ids == p2.train_ids);
    CHECK(p1.val_ids == p2.val_ids);
    CHECK(p1.test_ids == p2.test_ids);

    std::set<int> seen;
    for (const auto* ids : {&p1.train_ids, &p1.val_ids, &p1.test_ids})
      for (int id : *ids) CHECK(seen.insert(id).second);
    CHECK(static_cast<int>(seen.size()) == set.size());

    // stratification: per-class train share close to 0.6
    int pos_total = 0, pos_train = 0;
    for (const auto& g : set.graphs) pos_total += g.label;
    for (const auto& g : p1.train.graphs) pos_train += g.label;
    CHECK(std::abs(pos_train * 10 - pos_total * 6) <= 10);  // within one graph per class
  }

  TEST_CASE("split: errors") {
    GraphSet set;
    set.num_classes = 2;
    set.feature_dim = 1;
    for (int i = 0; i < 4; ++i)
      set.graphs.push_back(expass::make_graph(2, {{0, 1}}, Tensor::zeros(2, 1), i == 0 ? 1 : 0));
    // class 1 has a single graph but three positive parts
    CHECK_THROWS_AS(expass::split(set, {0.4, 0.3, 0.3}, 0), std::invalid_argument);
    CHECK_THROWS_AS(expass::split(set, {0.5, 0.2, 0.2}, 0), std::invalid_argument);
  }

  TEST_CASE("split: MUTAG 80/20 when present" * doctest::description("data-gated")) {
    const auto dir = mutag_dir();
    if (!dir) {
      MESSAGE("SKIP: MUTAG dataset not present");
      return;
    }
    const GraphSet mutag = expass::parse_tu_dataset(*dir, "MUTAG");
    const auto parts = expass::split(mutag, {0.8, 0.0, 0.2}, 0);
    CHECK(parts.train.size() >= 149);
    CHECK(parts.train.size() <= 151);
    CHECK(parts.val.size() == 0);
    CHECK(parts.test.size() == 188 - parts.train.size());
  }
}
