#include <doctest.h>

#include <cmath>

#include "albumcrf/error.hpp"
#include "albumcrf/inference.hpp"
#include "albumcrf/rng.hpp"

using namespace albumcrf;

namespace {

// Independent straight-line enumeration oracle: visits every labeling in
// lexicographic order (node 0 most significant) and keeps the first best.
Labeling enumerate_oracle(const CliqueProblem& problem, double alpha) {
  const int n = problem.num_nodes();
  const int k = problem.num_labels();
  std::vector<int> labels(n, 0);
  Labeling best;
  best.labels = labels;
  best.objective_value = -1e300;
  while (true) {
    double value = 0.0;
    for (int i = 0; i < n; ++i) value += problem.unaries[i][labels[i]];
    value /= n;
    if (!problem.edges.empty()) {
      double pairwise = 0.0;
      for (const GraphEdge& e : problem.edges) {
        if (labels[e.i] == labels[e.j]) pairwise += e.weight;
      }
      value += alpha * pairwise / problem.edges.size();
    }
    if (value > best.objective_value) {
      best.objective_value = value;
      best.labels = labels;
    }
    int pos = n - 1;
    while (pos >= 0 && labels[pos] == k - 1) {
      labels[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++labels[pos];
  }
  return best;
}

CliqueProblem random_problem(int n, int k, bool full_clique, Rng& rng) {
  CliqueProblem problem;
  problem.unaries.resize(n);
  for (auto& u : problem.unaries) {
    u.resize(k);
    double sum = 0.0;
    for (double& v : u) {
      v = -std::log(1.0 - rng.uniform());
      sum += v;
    }
    for (double& v : u) v /= sum;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (full_clique || rng.bernoulli(0.6)) {
        problem.edges.push_back({i, j, rng.uniform()});
      }
    }
  }
  return problem;
}

CliqueProblem random_tree(int n, int k, Rng& rng) {
  CliqueProblem problem = random_problem(n, k, false, rng);
  problem.edges.clear();
  for (int i = 1; i < n; ++i) {
    const int parent = static_cast<int>(rng.uniform_index(i));
    problem.edges.push_back({std::min(parent, i), std::max(parent, i), rng.uniform()});
  }
  return problem;
}

// The spec'd two-node instance: phi1 = (0.9, 0.1), phi2 = (0.4, 0.6),
// one edge with psi = 1, alpha = 1.
CliqueProblem two_node_example() {
  CliqueProblem problem;
  problem.unaries = {{0.9, 0.1}, {0.4, 0.6}};
  problem.edges = {{0, 1, 1.0}};
  return problem;
}

}  // namespace

TEST_CASE("objective values on the hand-enumerated two-node example") {
  const CliqueProblem problem = two_node_example();
  CHECK(objective(problem, {0, 0}, 1.0) == doctest::Approx(1.65).epsilon(1e-12));
  CHECK(objective(problem, {0, 1}, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(objective(problem, {1, 1}, 1.0) == doctest::Approx(1.35).epsilon(1e-12));
  CHECK(objective(problem, {1, 0}, 1.0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("objective with alpha 0 is the mean unary of the chosen labels") {
  const CliqueProblem problem = two_node_example();
  CHECK(objective(problem, {0, 1}, 0.0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("objective with no edges avoids dividing by zero") {
  CliqueProblem problem;
  problem.unaries = {{0.2, 0.8}, {0.6, 0.4}};
  CHECK(objective(problem, {1, 0}, 100.0) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("objective rejects incomplete labelings") {
  const CliqueProblem problem = two_node_example();
  CHECK_THROWS_AS(objective(problem, {0}, 1.0), DataError);
  CHECK_THROWS_AS(objective(problem, {0, 5}, 1.0), DataError);
}

TEST_CASE("exact_map solves the two-node example") {
  const Labeling best = exact_map(two_node_example(), 1.0);
  CHECK(best.labels == std::vector<int>{0, 0});
  CHECK(best.objective_value == doctest::Approx(1.65).epsilon(1e-12));
}

TEST_CASE("exact_map at alpha 0 decouples into per-node argmax") {
  Rng rng(3);
  const CliqueProblem problem = random_problem(5, 3, true, rng);
  const Labeling best = exact_map(problem, 0.0);
  for (int i = 0; i < 5; ++i) {
    int amax = 0;
    for (int y = 1; y < 3; ++y) {
      if (problem.unaries[i][y] > problem.unaries[i][amax]) amax = y;
    }
    CHECK(best.labels[i] == amax);
  }
}

TEST_CASE("exact_map matches the enumeration oracle on random cliques") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(4));
    const int k = 2 + static_cast<int>(rng.uniform_index(3));
    const double alpha = std::vector<double>{0.0, 0.1, 1.0, 100.0}[rng.uniform_index(4)];
    const CliqueProblem problem = random_problem(n, k, false, rng);
    const Labeling mine = exact_map(problem, alpha);
    const Labeling oracle = enumerate_oracle(problem, alpha);
    CHECK(mine.labels == oracle.labels);
    CHECK(mine.objective_value == doctest::Approx(oracle.objective_value).epsilon(1e-12));
  }
}

TEST_CASE("exact_map refuses beyond the enumeration budget") {
  Rng rng(7);
  const CliqueProblem problem = random_problem(7, 10, true, rng);  // 10^7 states
  CHECK_THROWS_AS(exact_map(problem, 1.0, 1000000), RuntimeError);
}

TEST_CASE("oracle pairwise pulls same-identity nodes onto the confident label") {
  // Three nodes; oracle edges connect all pairs (same identity). Node 0 is
  // one-hot on label 1, the others uniform. With alpha >= K every node takes
  // label 1; verified against the enumeration oracle.
  CliqueProblem problem;
  problem.unaries = {{0.0, 1.0, 0.0},
                     {1.0 / 3, 1.0 / 3, 1.0 / 3},
                     {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  problem.edges = {{0, 1, 1.0}, {0, 2, 1.0}, {1, 2, 1.0}};
  const Labeling best = exact_map(problem, 3.0);
  CHECK(best.labels == std::vector<int>{1, 1, 1});
  CHECK(best.labels == enumerate_oracle(problem, 3.0).labels);
}

TEST_CASE("max_product is exact on trees") {
  Rng rng(11);
  InferenceParams params;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(7));
    const int k = 2 + static_cast<int>(rng.uniform_index(3));
    params.alpha = std::vector<double>{0.1, 1.0, 100.0}[rng.uniform_index(3)];
    const CliqueProblem problem = random_tree(n, k, rng);
    const Labeling approx = max_product(problem, params);
    const Labeling exact = exact_map(problem, params.alpha);
    CHECK(approx.objective_value == doctest::Approx(exact.objective_value).epsilon(1e-9));
  }
}

TEST_CASE("max_product on a two-node clique is exact") {
  InferenceParams params;
  params.alpha = 1.0;
  const Labeling approx = max_product(two_node_example(), params);
  CHECK(approx.labels == std::vector<int>{0, 0});
  CHECK(approx.converged);
}

TEST_CASE("max_product stays within 0.95 of the exact objective on cliques") {
  Rng rng(13);
  InferenceParams params;
  int good = 0;
  const int trials = 300;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_index(4));
    const int k = 2 + static_cast<int>(rng.uniform_index(3));
    params.alpha = std::vector<double>{0.1, 1.0, 100.0}[rng.uniform_index(3)];
    const CliqueProblem problem = random_problem(n, k, true, rng);
    const Labeling approx = max_product(problem, params);
    const Labeling exact = exact_map(problem, params.alpha);
    CHECK(approx.objective_value <= exact.objective_value + 1e-9);
    if (approx.objective_value >= 0.95 * exact.objective_value) ++good;
  }
  CHECK(good >= trials * 99 / 100);
}

TEST_CASE("max_product at alpha 0 returns per-node argmax") {
  Rng rng(17);
  InferenceParams params;
  params.alpha = 0.0;
  const CliqueProblem problem = random_problem(5, 4, true, rng);
  const Labeling approx = max_product(problem, params);
  for (int i = 0; i < 5; ++i) {
    int amax = 0;
    for (int y = 1; y < 4; ++y) {
      if (problem.unaries[i][y] > problem.unaries[i][amax]) amax = y;
    }
    CHECK(approx.labels[i] == amax);
  }
}

TEST_CASE("tree approximation equals exact_map on two-node cliques") {
  InferenceParams params;
  params.alpha = 1.0;
  CHECK(tree_approx_query(two_node_example(), 0, params) == 0);

  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    CliqueProblem problem = random_problem(2, 3, true, rng);
    params.alpha = std::vector<double>{0.0, 0.1, 1.0, 100.0}[rng.uniform_index(4)];
    const Labeling exact = exact_map(problem, params.alpha);
    CHECK(tree_approx_query(problem, 0, params) == exact.labels[0]);
    CHECK(tree_approx_query(problem, 1, params) == exact.labels[1]);
  }
}

TEST_CASE("tree approximation matches star enumeration on 3-node stars") {
  Rng rng(23);
  InferenceParams params;
  for (int trial = 0; trial < 100; ++trial) {
    // Star around node 0 with two leaves; the star is the whole graph, so
    // enumeration over K^3 labelings is the oracle.
    CliqueProblem problem = random_problem(3, 3, false, rng);
    problem.edges = {{0, 1, rng.uniform()}, {0, 2, rng.uniform()}};
    params.alpha = std::vector<double>{0.1, 1.0, 100.0}[rng.uniform_index(3)];
    const Labeling oracle = enumerate_oracle(problem, params.alpha);
    CHECK(tree_approx_query(problem, 0, params) == oracle.labels[0]);
  }
}

TEST_CASE("tree approximation rejects queries outside the clique") {
  InferenceParams params;
  CHECK_THROWS_AS(tree_approx_query(two_node_example(), 5, params), DataError);
}

TEST_CASE("exact_map upper-bounds max_product and tree decodes") {
  Rng rng(29);
  InferenceParams params;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_index(3));
    const int k = 2 + static_cast<int>(rng.uniform_index(3));
    params.alpha = std::vector<double>{0.1, 1.0, 100.0}[rng.uniform_index(3)];
    const CliqueProblem problem = random_problem(n, k, true, rng);
    const Labeling exact = exact_map(problem, params.alpha);
    const Labeling approx = max_product(problem, params);
    CHECK(exact.objective_value >= approx.objective_value - 1e-9);
  }
}

TEST_CASE("solvers are label-permutation equivariant") {
  Rng rng(31);
  InferenceParams params;
  params.alpha = 1.0;
  const int k = 4;
  const std::vector<int> perm = {2, 0, 3, 1};
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_index(3));
    const CliqueProblem problem = random_problem(n, k, true, rng);
    CliqueProblem permuted = problem;
    for (int i = 0; i < n; ++i) {
      for (int y = 0; y < k; ++y) permuted.unaries[i][perm[y]] = problem.unaries[i][y];
    }
    const Labeling base = max_product(problem, params);
    const Labeling mapped = max_product(permuted, params);
    for (int i = 0; i < n; ++i) CHECK(mapped.labels[i] == perm[base.labels[i]]);

    const Labeling exact_base = exact_map(problem, params.alpha);
    const Labeling exact_mapped = exact_map(permuted, params.alpha);
    for (int i = 0; i < n; ++i) CHECK(exact_mapped.labels[i] == perm[exact_base.labels[i]]);
  }
}

TEST_CASE("solvers are deterministic") {
  Rng rng(37);
  InferenceParams params;
  const CliqueProblem problem = random_problem(5, 4, true, rng);
  const Labeling a = max_product(problem, params);
  const Labeling b = max_product(problem, params);
  CHECK(a.labels == b.labels);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("infer_query dispatches on the album clique") {
  // Two albums: {0, 1} share al0 with a strong edge; node 2 is alone in al1.
  RecognitionGraph graph;
  graph.nodes = {{"q0", "al0"}, {"q1", "al0"}, {"q2", "al1"}};
  graph.edges = {{0, 1, 1.0}};
  graph.rebuild_album_index();
  const std::vector<std::vector<double>> unaries = {
      {0.4, 0.6}, {0.9, 0.1}, {0.2, 0.8}};
  InferenceParams params;
  params.alpha = 100.0;

  SUBCASE("unary only ignores edges") {
    CHECK(infer_query(graph, unaries, 0, params, InferenceMode::UnaryOnly).label == 1);
    CHECK(infer_query(graph, unaries, 1, params, InferenceMode::UnaryOnly).label == 0);
  }

  SUBCASE("joint modes pull the weak node onto its confident neighbor") {
    CHECK(infer_query(graph, unaries, 0, params, InferenceMode::JointTree).label == 0);
    CHECK(infer_query(graph, unaries, 0, params, InferenceMode::JointMaxProduct).label == 0);
  }

  SUBCASE("isolated node falls back to its unary in every mode") {
    for (InferenceMode mode : {InferenceMode::UnaryOnly, InferenceMode::JointTree,
                               InferenceMode::JointMaxProduct}) {
      CHECK(infer_query(graph, unaries, 2, params, mode).label == 1);
    }
  }

  SUBCASE("alpha 0 reduces every mode to the unary argmax") {
    params.alpha = 0.0;
    for (InferenceMode mode : {InferenceMode::UnaryOnly, InferenceMode::JointTree,
                               InferenceMode::JointMaxProduct}) {
      CHECK(infer_query(graph, unaries, 0, params, mode).label == 1);
    }
  }
}

TEST_CASE("infer_query on the oracle two-node instance recovers the evidence label") {
  // Query has a uniform unary; its clique-mate is clamped one-hot with an
  // oracle edge. Checked against exact enumeration.
  RecognitionGraph graph;
  graph.nodes = {{"q", "al0"}, {"ev", "al0"}};
  graph.edges = {{0, 1, 1.0}};
  graph.rebuild_album_index();
  const std::vector<std::vector<double>> unaries = {{1.0 / 3, 1.0 / 3, 1.0 / 3},
                                                    {0.0, 0.0, 1.0}};
  InferenceParams params;
  params.alpha = 100.0;

  CliqueProblem problem;
  problem.unaries = unaries;
  problem.edges = {{0, 1, 1.0}};
  const Labeling exact = exact_map(problem, params.alpha);
  REQUIRE(exact.labels == std::vector<int>{2, 2});

  CHECK(infer_query(graph, unaries, 0, params, InferenceMode::JointTree).label == 2);
  CHECK(infer_query(graph, unaries, 0, params, InferenceMode::JointMaxProduct).label == 2);
}
