#include "albumcrf/inference.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "albumcrf/error.hpp"

namespace albumcrf {

void InferenceParams::validate() const {
  if (alpha < 0) throw ConfigError("inference: alpha must be >= 0");
  if (max_iterations < 1) throw ConfigError("inference: max_iterations must be >= 1");
  if (damping < 0 || damping >= 1) throw ConfigError("inference: damping must be in [0, 1)");
  if (!(convergence_tol > 0)) throw ConfigError("inference: convergence_tol must be > 0");
}

const char* to_string(InferenceMode m) {
  switch (m) {
    case InferenceMode::UnaryOnly: return "unary_only";
    case InferenceMode::JointTree: return "joint_tree";
    case InferenceMode::JointMaxProduct: return "joint_maxproduct";
  }
  return "unary_only";
}

double objective(const CliqueProblem& problem, const std::vector<int>& labels, double alpha) {
  const int n = problem.num_nodes();
  if (n < 1) throw DataError("objective: empty problem");
  if (static_cast<int>(labels.size()) != n)
    throw DataError("objective: labeling does not cover every node");
  const int num_labels = problem.num_labels();
  double unary_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_labels)
      throw DataError("objective: label out of range for node " + std::to_string(i));
    unary_sum += problem.unaries[i][labels[i]];
  }
  double value = unary_sum / n;
  if (!problem.edges.empty()) {
    double pairwise_sum = 0.0;
    for (const GraphEdge& e : problem.edges) {
      if (labels[e.i] == labels[e.j]) pairwise_sum += e.weight;
    }
    value += alpha * pairwise_sum / static_cast<double>(problem.edges.size());
  }
  return value;
}

Labeling exact_map(const CliqueProblem& problem, double alpha, std::uint64_t budget) {
  const int n = problem.num_nodes();
  if (n < 1) throw DataError("exact_map: empty problem");
  const int num_labels = problem.num_labels();

  double states = 1.0;
  for (int i = 0; i < n; ++i) states *= num_labels;
  if (states > static_cast<double>(budget))
    throw RuntimeError("exact_map: " + std::to_string(num_labels) + "^" + std::to_string(n) +
                       " states exceeds enumeration budget " + std::to_string(budget));

  std::vector<int> current(n, 0);
  Labeling best;
  best.labels = current;
  best.objective_value = objective(problem, current, alpha);

  // Odometer with node 0 most significant: enumeration order is
  // lexicographic, so strict improvement keeps the smallest tied vector.
  while (true) {
    int pos = n - 1;
    while (pos >= 0 && current[pos] == num_labels - 1) {
      current[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++current[pos];
    const double value = objective(problem, current, alpha);
    if (value > best.objective_value) {
      best.objective_value = value;
      best.labels = current;
    }
  }
  return best;
}

Labeling max_product(const CliqueProblem& problem, const InferenceParams& params) {
  params.validate();
  const int n = problem.num_nodes();
  if (n < 1) throw DataError("max_product: empty problem");
  const int num_labels = problem.num_labels();
  const int num_edges = static_cast<int>(problem.edges.size());

  // Node potentials and edge agreement bonuses of the additive objective.
  const double inv_n = 1.0 / n;
  const double edge_scale = num_edges > 0 ? params.alpha / num_edges : 0.0;

  // Two directed messages per edge: slot 2e is i->j, slot 2e+1 is j->i.
  std::vector<std::vector<double>> messages(2 * num_edges,
                                            std::vector<double>(num_labels, 0.0));
  std::vector<std::vector<double>> fresh = messages;

  std::vector<std::vector<int>> incident(n);  // node -> directed slots arriving at it
  for (int e = 0; e < num_edges; ++e) {
    incident[problem.edges[e].j].push_back(2 * e);
    incident[problem.edges[e].i].push_back(2 * e + 1);
  }

  Labeling result;
  result.converged = false;

  std::vector<double> h(num_labels);
  int iter = 0;
  for (; iter < params.max_iterations; ++iter) {
    double max_delta = 0.0;
    for (int e = 0; e < num_edges; ++e) {
      const GraphEdge& edge = problem.edges[e];
      const double bonus = edge_scale * edge.weight;
      for (int dir = 0; dir < 2; ++dir) {
        const int src = dir == 0 ? edge.i : edge.j;
        const int slot = 2 * e + dir;
        const int reverse = 2 * e + (1 - dir);
        // h(y) = unary(src, y)/n + incoming messages except the reverse one
        for (int y = 0; y < num_labels; ++y) h[y] = problem.unaries[src][y] * inv_n;
        for (int in_slot : incident[src]) {
          if (in_slot == reverse) continue;
          const std::vector<double>& msg = messages[in_slot];
          for (int y = 0; y < num_labels; ++y) h[y] += msg[y];
        }
        double h_max = h[0];
        for (int y = 1; y < num_labels; ++y) h_max = std::max(h_max, h[y]);
        std::vector<double>& out = fresh[slot];
        double out_max = -1e300;
        for (int y = 0; y < num_labels; ++y) {
          out[y] = std::max(h_max, h[y] + bonus);
          out_max = std::max(out_max, out[y]);
        }
        // Normalize and damp.
        const std::vector<double>& old = messages[slot];
        for (int y = 0; y < num_labels; ++y) {
          const double v = params.damping * old[y] + (1.0 - params.damping) * (out[y] - out_max);
          max_delta = std::max(max_delta, std::abs(v - old[y]));
          out[y] = v;
        }
      }
    }
    messages.swap(fresh);
    if (max_delta < params.convergence_tol) {
      result.converged = true;
      ++iter;
      break;
    }
  }
  result.iterations = iter;

  result.labels.resize(n);
  std::vector<double> belief(num_labels);
  for (int i = 0; i < n; ++i) {
    for (int y = 0; y < num_labels; ++y) belief[y] = problem.unaries[i][y] * inv_n;
    for (int in_slot : incident[i]) {
      for (int y = 0; y < num_labels; ++y) belief[y] += messages[in_slot][y];
    }
    int best = 0;
    for (int y = 1; y < num_labels; ++y) {
      if (belief[y] > belief[best]) best = y;
    }
    result.labels[i] = best;
  }
  result.objective_value = objective(problem, result.labels, params.alpha);
  return result;
}

int tree_approx_query(const CliqueProblem& problem, int query, const InferenceParams& params) {
  params.validate();
  const int n = problem.num_nodes();
  if (query < 0 || query >= n) throw DataError("tree_approx_query: query not in clique");
  const int num_labels = problem.num_labels();
  const double inv_n = 1.0 / n;
  const double edge_scale =
      problem.edges.empty() ? 0.0 : params.alpha / static_cast<double>(problem.edges.size());

  std::vector<double> score(num_labels);
  for (int y = 0; y < num_labels; ++y) score[y] = problem.unaries[query][y] * inv_n;

  for (const GraphEdge& e : problem.edges) {
    int neighbor;
    if (e.i == query) neighbor = e.j;
    else if (e.j == query) neighbor = e.i;
    else continue;
    const std::vector<double>& u = problem.unaries[neighbor];
    double detached = u[0];
    for (int y = 1; y < num_labels; ++y) detached = std::max(detached, u[y]);
    detached *= inv_n;
    const double bonus = edge_scale * e.weight;
    for (int y = 0; y < num_labels; ++y) {
      score[y] += std::max(detached, u[y] * inv_n + bonus);
    }
  }

  int best = 0;
  for (int y = 1; y < num_labels; ++y) {
    if (score[y] > score[best]) best = y;
  }
  return best;
}

QueryInference infer_query(const RecognitionGraph& graph,
                           const std::vector<std::vector<double>>& node_unaries,
                           int query_node, const InferenceParams& params, InferenceMode mode) {
  if (query_node < 0 || query_node >= static_cast<int>(graph.nodes.size()))
    throw DataError("infer_query: query node out of range");
  if (node_unaries.size() != graph.nodes.size())
    throw DataError("infer_query: unary predictions missing for some nodes");

  QueryInference out;
  out.album = graph.nodes[query_node].album_id;

  const std::vector<double>& query_unary = node_unaries[query_node];
  auto unary_argmax = [&]() {
    int best = 0;
    for (int y = 1; y < static_cast<int>(query_unary.size()); ++y) {
      if (query_unary[y] > query_unary[best]) best = y;
    }
    return best;
  };

  if (mode == InferenceMode::UnaryOnly) {
    out.label = unary_argmax();
    return out;
  }

  // Extract the query's album clique: member nodes plus surviving edges.
  const auto it = graph.album_nodes.find(out.album);
  if (it == graph.album_nodes.end()) throw DataError("infer_query: query album missing");
  const std::vector<int>& members = it->second;

  std::unordered_map<int, int> local_of;
  local_of.reserve(members.size());
  CliqueProblem problem;
  problem.unaries.reserve(members.size());
  for (int m : members) {
    local_of[m] = static_cast<int>(problem.unaries.size());
    problem.unaries.push_back(node_unaries[m]);
  }
  for (const GraphEdge& e : graph.edges) {
    auto a = local_of.find(e.i);
    if (a == local_of.end()) continue;
    auto b = local_of.find(e.j);
    if (b == local_of.end()) continue;
    problem.edges.push_back({a->second, b->second, e.weight});
  }
  out.clique_size = problem.num_nodes();
  out.clique_edges = static_cast<int>(problem.edges.size());

  const int local_query = local_of.at(query_node);
  if (mode == InferenceMode::JointTree) {
    out.label = tree_approx_query(problem, local_query, params);
    return out;
  }

  const Labeling labeling = max_product(problem, params);
  out.label = labeling.labels[local_query];
  out.iterations = labeling.iterations;
  out.converged = labeling.converged;
  out.objective_value = labeling.objective_value;
  return out;
}

}  // namespace albumcrf
