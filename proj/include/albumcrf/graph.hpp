#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "albumcrf/corpus.hpp"

namespace albumcrf {

struct PruningConfig {
  bool album_pruning = true;
  double beta = 0.5;
  // Materializes the full cross-album graph for the "no pruning" ablation;
  // refused above kMaterializeLimit nodes.
  bool materialize_full = false;

  static constexpr int kMaterializeLimit = 5000;
  void validate() const;
};

struct GraphNode {
  std::string instance_id;
  std::string album_id;
};

struct GraphEdge {
  int i = 0;
  int j = 0;  // i < j
  double weight = 0.0;
};

struct PruningLog {
  std::uint64_t full_edge_count = 0;       // C(n, 2), never materialized
  std::uint64_t after_album_pruning = 0;
  std::uint64_t after_negative_pruning = 0;
};

struct RecognitionGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  PruningLog pruning_log;
  std::map<std::string, std::vector<int>> album_nodes;  // album -> node indices

  void rebuild_album_index();
};

std::uint64_t full_edge_count(std::uint64_t n);

using PairScoreFn = std::function<double(const Instance&, const Instance&)>;

// Scores within-album pairs with the matcher (or every pair when
// album_pruning is off and materialize_full is set). The full edge count is
// always computed arithmetically.
RecognitionGraph build_graph(const std::vector<Instance>& instances,
                             const PairScoreFn& scorer, const PruningConfig& pruning);

// Keeps edges with weight >= beta and updates the pruning log.
RecognitionGraph prune_negative_edges(const RecognitionGraph& graph, double beta);

struct GraphStats {
  int node_count = 0;
  int album_count = 0;
  PruningLog pruning_log;
  int largest_clique = 0;  // size of the largest album clique
};

GraphStats graph_stats(const RecognitionGraph& graph);

// CSV edge list plus JSON stats sidecar.
void dump_graph(const RecognitionGraph& graph, const std::string& edges_csv_path,
                const std::string& stats_json_path);

}  // namespace albumcrf
