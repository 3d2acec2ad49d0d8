#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "albumcrf/corpus.hpp"
#include "albumcrf/error.hpp"
#include "albumcrf/graph.hpp"
#include "albumcrf/rng.hpp"
#include "albumcrf/util.hpp"

using namespace albumcrf;

namespace {

Instance node(const std::string& id, const std::string& album, double feature) {
  Instance inst;
  inst.instance_id = id;
  inst.photo_id = id + "_p";
  inst.album_id = album;
  inst.event_id = "ev_" + album;
  inst.identity = id;
  inst.head_features = {feature};
  inst.context_features = {feature};
  return inst;
}

PairScoreFn constant_scorer(double w) {
  return [w](const Instance&, const Instance&) { return w; };
}

}  // namespace

TEST_CASE("full_edge_count matches the problem-size arithmetic") {
  CHECK(full_edge_count(6443) == 20752903ULL);
  CHECK(full_edge_count(4820) == 11613790ULL);
  CHECK(full_edge_count(0) == 0ULL);
  CHECK(full_edge_count(1) == 0ULL);
  CHECK(full_edge_count(2) == 1ULL);
  // No overflow up to a million nodes.
  CHECK(full_edge_count(1000000) == 499999500000ULL);
}

TEST_CASE("album pruning materializes within-album cliques only") {
  std::vector<Instance> instances = {node("a", "al0", 0.1), node("b", "al0", 0.2),
                                     node("c", "al0", 0.3), node("d", "al1", 0.4),
                                     node("e", "al1", 0.5)};
  const RecognitionGraph graph = build_graph(instances, constant_scorer(0.7), PruningConfig{});
  CHECK(graph.pruning_log.full_edge_count == 10);      // C(5,2)
  CHECK(graph.pruning_log.after_album_pruning == 4);   // C(3,2) + C(2,2)
  CHECK(graph.pruning_log.after_negative_pruning == 4);
  for (const GraphEdge& e : graph.edges) {
    CHECK(graph.nodes[e.i].album_id == graph.nodes[e.j].album_id);
    CHECK(e.i < e.j);
    CHECK(e.weight == 0.7);
  }
}

TEST_CASE("no-pruning ablation materializes the full graph within limits") {
  std::vector<Instance> instances = {node("a", "al0", 0.1), node("b", "al1", 0.2),
                                     node("c", "al2", 0.3)};
  PruningConfig pruning;
  pruning.album_pruning = false;

  SUBCASE("requires the materialize flag") {
    CHECK_THROWS_AS(build_graph(instances, constant_scorer(0.5), pruning), ConfigError);
  }

  SUBCASE("scores every pair when enabled") {
    pruning.materialize_full = true;
    const RecognitionGraph graph = build_graph(instances, constant_scorer(0.5), pruning);
    CHECK(graph.edges.size() == 3);
    CHECK(graph.pruning_log.after_album_pruning == 3);  // nothing pruned
  }
}

TEST_CASE("negative edge pruning keeps weights >= beta") {
  std::vector<Instance> instances = {node("a", "al0", 0.1), node("b", "al0", 0.2),
                                     node("c", "al0", 0.3)};
  RecognitionGraph graph = build_graph(instances, nullptr, PruningConfig{});
  REQUIRE(graph.edges.size() == 3);
  graph.edges[0].weight = 0.3;
  graph.edges[1].weight = 0.5;
  graph.edges[2].weight = 0.9;

  SUBCASE("beta 0 keeps everything") {
    CHECK(prune_negative_edges(graph, 0.0).edges.size() == 3);
  }
  SUBCASE("threshold is inclusive") {
    const RecognitionGraph pruned = prune_negative_edges(graph, 0.5);
    CHECK(pruned.edges.size() == 2);
    CHECK(pruned.pruning_log.after_negative_pruning == 2);
    CHECK(pruned.pruning_log.after_album_pruning == 3);
  }
  SUBCASE("beta 1 keeps only weight-1 edges; above 1 is rejected") {
    graph.edges[2].weight = 1.0;
    CHECK(prune_negative_edges(graph, 1.0).edges.size() == 1);
    CHECK_THROWS_AS(prune_negative_edges(graph, 1.0 + 1e-9), ConfigError);
    PruningConfig bad;
    bad.beta = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("negative pruning is monotone in beta") {
  Rng rng(7);
  std::vector<Instance> instances;
  for (int i = 0; i < 20; ++i)
    instances.push_back(node("n" + std::to_string(i), "al" + std::to_string(i % 3), 0.0));
  RecognitionGraph graph = build_graph(instances, nullptr, PruningConfig{});
  for (GraphEdge& e : graph.edges) e.weight = rng.uniform();

  auto edge_set = [](const RecognitionGraph& g) {
    std::set<std::pair<int, int>> s;
    for (const GraphEdge& e : g.edges) s.insert({e.i, e.j});
    return s;
  };
  const auto survivors_03 = edge_set(prune_negative_edges(graph, 0.3));
  const auto survivors_06 = edge_set(prune_negative_edges(graph, 0.6));
  for (const auto& e : survivors_06) CHECK(survivors_03.count(e) == 1);
}

TEST_CASE("graph stats summarize counts and the largest clique") {
  SUBCASE("single album") {
    std::vector<Instance> instances;
    for (int i = 0; i < 7; ++i) instances.push_back(node("n" + std::to_string(i), "al0", 0.0));
    const GraphStats stats = graph_stats(build_graph(instances, nullptr, PruningConfig{}));
    CHECK(stats.node_count == 7);
    CHECK(stats.album_count == 1);
    CHECK(stats.largest_clique == 7);
    CHECK(stats.pruning_log.after_album_pruning == full_edge_count(7));
  }

  SUBCASE("empty edge set after pruning") {
    std::vector<Instance> instances = {node("a", "al0", 0.0), node("b", "al0", 0.0)};
    RecognitionGraph graph = build_graph(instances, constant_scorer(0.2), PruningConfig{});
    graph = prune_negative_edges(graph, 0.9);
    const GraphStats stats = graph_stats(graph);
    CHECK(stats.pruning_log.after_negative_pruning == 0);
  }
}

TEST_CASE("album pruning count equals the clique sum over random partitions") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + static_cast<int>(rng.uniform_index(60));
    const int albums = 1 + static_cast<int>(rng.uniform_index(8));
    std::vector<Instance> instances;
    std::map<std::string, std::uint64_t> album_sizes;
    for (int i = 0; i < n; ++i) {
      const std::string album = "al" + std::to_string(rng.uniform_index(albums));
      instances.push_back(node("n" + std::to_string(i), album, 0.0));
      ++album_sizes[album];
    }
    const RecognitionGraph graph = build_graph(instances, nullptr, PruningConfig{});

    // Oracle: direct histogram arithmetic.
    std::uint64_t expected = 0;
    for (const auto& [album, size] : album_sizes) expected += full_edge_count(size);
    CHECK(graph.pruning_log.after_album_pruning == expected);
    CHECK(graph.pruning_log.full_edge_count == full_edge_count(n));

    // Direct pair counting oracle.
    std::uint64_t pair_count = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (instances[i].album_id == instances[j].album_id) ++pair_count;
      }
    }
    CHECK(graph.pruning_log.after_album_pruning == pair_count);
  }
}

TEST_CASE("album pruning drops the edge count by at least the album-size ratio") {
  // With the largest album at most n/10, the within-album count is at most
  // ~10% of the full graph; generated corpora land far below that.
  GeneratorConfig gen;
  gen.n_identities = 40;
  gen.instances_per_identity = 10;
  gen.head_dim = 2;
  gen.context_dim = 2;
  const Corpus corpus = generate_corpus(gen, 3);
  const RecognitionGraph graph =
      build_graph(corpus.instances, nullptr, PruningConfig{});
  const GraphStats stats = graph_stats(graph);
  REQUIRE(stats.largest_clique <= stats.node_count / 10);
  CHECK(stats.pruning_log.after_album_pruning * 10 <= stats.pruning_log.full_edge_count);
}

TEST_CASE("graph edges have no duplicates or self loops") {
  std::vector<Instance> instances;
  for (int i = 0; i < 12; ++i)
    instances.push_back(node("n" + std::to_string(i), "al" + std::to_string(i % 2), 0.0));
  const RecognitionGraph graph = build_graph(instances, constant_scorer(1.0), PruningConfig{});
  std::set<std::pair<int, int>> seen;
  for (const GraphEdge& e : graph.edges) {
    CHECK(e.i != e.j);
    CHECK(seen.insert({e.i, e.j}).second);
  }
}

TEST_CASE("build_graph rejects weights outside [0, 1]") {
  std::vector<Instance> instances = {node("a", "al0", 0.0), node("b", "al0", 0.0)};
  CHECK_THROWS_AS(build_graph(instances, constant_scorer(1.2), PruningConfig{}), DataError);
}

TEST_CASE("graph dump writes the edge list and stats sidecar") {
  std::vector<Instance> instances = {node("a", "al0", 0.0), node("b", "al0", 0.0)};
  const RecognitionGraph graph = build_graph(instances, constant_scorer(0.8), PruningConfig{});
  const auto dir = std::filesystem::temp_directory_path();
  const std::string edges_path = (dir / "graph_edges.csv").string();
  const std::string stats_path = (dir / "graph_stats.json").string();
  dump_graph(graph, edges_path, stats_path);
  const std::string csv = read_text_file(edges_path);
  CHECK(csv.find("i,j,weight") != std::string::npos);
  CHECK(csv.find("a,b,0.800000") != std::string::npos);
  const std::string stats = read_text_file(stats_path);
  CHECK(stats.find("\"full_edge_count\": 1") != std::string::npos);
  std::remove(edges_path.c_str());
  std::remove(stats_path.c_str());
}
