#include "albumcrf/graph.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "albumcrf/error.hpp"
#include "albumcrf/util.hpp"

namespace albumcrf {

void PruningConfig::validate() const {
  if (beta < 0.0 || beta > 1.0) throw ConfigError("pruning: beta must be in [0, 1]");
}

std::uint64_t full_edge_count(std::uint64_t n) {
  if (n < 2) return 0;
  // One of n, n-1 is even; divide it first so the product never overflows
  // for n up to ~6e9.
  return (n % 2 == 0) ? (n / 2) * (n - 1) : n * ((n - 1) / 2);
}

void RecognitionGraph::rebuild_album_index() {
  album_nodes.clear();
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    album_nodes[nodes[i].album_id].push_back(i);
  }
}

RecognitionGraph build_graph(const std::vector<Instance>& instances,
                             const PairScoreFn& scorer, const PruningConfig& pruning) {
  pruning.validate();
  if (instances.empty()) throw DataError("build_graph: no nodes");

  RecognitionGraph graph;
  graph.nodes.reserve(instances.size());
  for (const Instance& inst : instances) {
    graph.nodes.push_back({inst.instance_id, inst.album_id});
  }
  graph.rebuild_album_index();
  graph.pruning_log.full_edge_count = full_edge_count(instances.size());

  if (!pruning.album_pruning) {
    if (!pruning.materialize_full)
      throw ConfigError(
          "build_graph: album_pruning off requires materialize_full (no-pruning ablation)");
    if (static_cast<int>(instances.size()) > PruningConfig::kMaterializeLimit)
      throw ConfigError("build_graph: full graph materialization refused above " +
                        std::to_string(PruningConfig::kMaterializeLimit) + " nodes");
    const int n = static_cast<int>(instances.size());
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        graph.edges.push_back({i, j, 0.0});
      }
    }
  } else {
    for (const auto& [album, members] : graph.album_nodes) {
      for (std::size_t a = 0; a < members.size(); ++a) {
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          graph.edges.push_back({members[a], members[b], 0.0});
        }
      }
    }
  }

  if (scorer) {
    // Edges are independent; score them in parallel.
    parallel_for(graph.edges.size(), [&](std::size_t e) {
      GraphEdge& edge = graph.edges[e];
      const double w = scorer(instances[edge.i], instances[edge.j]);
      if (!(w >= 0.0 && w <= 1.0))
        throw DataError("build_graph: matcher weight outside [0, 1]: " + std::to_string(w));
      edge.weight = w;
    });
  }

  graph.pruning_log.after_album_pruning =
      pruning.album_pruning ? graph.edges.size() : graph.pruning_log.full_edge_count;
  graph.pruning_log.after_negative_pruning = graph.edges.size();
  return graph;
}

RecognitionGraph prune_negative_edges(const RecognitionGraph& graph, double beta) {
  if (beta < 0.0 || beta > 1.0) throw ConfigError("prune_negative_edges: beta must be in [0, 1]");
  RecognitionGraph out;
  out.nodes = graph.nodes;
  out.pruning_log = graph.pruning_log;
  out.album_nodes = graph.album_nodes;
  out.edges.reserve(graph.edges.size());
  for (const GraphEdge& e : graph.edges) {
    if (e.weight >= beta) out.edges.push_back(e);
  }
  out.pruning_log.after_negative_pruning = out.edges.size();
  return out;
}

GraphStats graph_stats(const RecognitionGraph& graph) {
  GraphStats stats;
  stats.node_count = static_cast<int>(graph.nodes.size());
  stats.album_count = static_cast<int>(graph.album_nodes.size());
  stats.pruning_log = graph.pruning_log;
  for (const auto& [album, members] : graph.album_nodes) {
    stats.largest_clique = std::max(stats.largest_clique, static_cast<int>(members.size()));
  }
  return stats;
}

void dump_graph(const RecognitionGraph& graph, const std::string& edges_csv_path,
                const std::string& stats_json_path) {
  std::string csv = "i,j,weight\n";
  for (const GraphEdge& e : graph.edges) {
    csv += graph.nodes[e.i].instance_id + "," + graph.nodes[e.j].instance_id + "," +
           format_double(e.weight, 6) + "\n";
  }
  write_text_file(edges_csv_path, csv);

  const GraphStats stats = graph_stats(graph);
  nlohmann::ordered_json j;
  j["nodes"] = stats.node_count;
  j["albums"] = stats.album_count;
  j["full_edge_count"] = stats.pruning_log.full_edge_count;
  j["after_album_pruning"] = stats.pruning_log.after_album_pruning;
  j["after_negative_pruning"] = stats.pruning_log.after_negative_pruning;
  j["largest_clique"] = stats.largest_clique;
  write_text_file(stats_json_path, j.dump(2) + "\n");
}

}  // namespace albumcrf
