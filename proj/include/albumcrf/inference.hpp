#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "albumcrf/graph.hpp"

namespace albumcrf {

struct InferenceParams {
  double alpha = 100.0;
  int max_iterations = 50;
  double damping = 0.5;
  double convergence_tol = 1e-9;
  std::uint64_t enumeration_budget = 1000000;

  void validate() const;
};

// One inference problem: n nodes with K-way unary scores and weighted
// agreement edges. The objective is
//   (1/n) sum_i unaries[i][y_i]  +  (alpha/|E|) sum_{(i,j)} 1[y_i=y_j] w_ij
// with the pairwise term defined as 0 when there are no edges.
struct CliqueProblem {
  std::vector<std::vector<double>> unaries;  // n x K
  std::vector<GraphEdge> edges;

  int num_nodes() const { return static_cast<int>(unaries.size()); }
  int num_labels() const { return unaries.empty() ? 0 : static_cast<int>(unaries[0].size()); }
};

struct Labeling {
  std::vector<int> labels;
  double objective_value = 0.0;
  bool converged = true;
  int iterations = 0;
};

double objective(const CliqueProblem& problem, const std::vector<int>& labels, double alpha);

// Global argmax by exhaustive enumeration; ties break to the
// lexicographically smallest label vector. Refuses when K^n exceeds budget.
Labeling exact_map(const CliqueProblem& problem, double alpha,
                   std::uint64_t budget = 1000000);

// Damped synchronous max-sum message passing; beliefs decoded after
// convergence or max_iterations, per-node ties to the smallest label.
Labeling max_product(const CliqueProblem& problem, const InferenceParams& params);

// Exact max-sum on the star rooted at the query: neighbor subtrees decouple,
// so each contributes max_yj [ unary_j(yj)/n + (alpha/|E|) 1[yj=y] w_qj ].
int tree_approx_query(const CliqueProblem& problem, int query, const InferenceParams& params);

enum class InferenceMode { UnaryOnly, JointTree, JointMaxProduct };
const char* to_string(InferenceMode m);

struct QueryInference {
  int label = -1;
  std::string album;
  int clique_size = 1;
  int clique_edges = 0;
  int iterations = 0;
  bool converged = true;
  double objective_value = 0.0;
};

// Runs the chosen solver on the query's album clique (nodes sharing the
// query's album, with the surviving edges among them).
QueryInference infer_query(const RecognitionGraph& graph,
                           const std::vector<std::vector<double>>& node_unaries,
                           int query_node, const InferenceParams& params, InferenceMode mode);

}  // namespace albumcrf
