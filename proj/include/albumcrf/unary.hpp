#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "albumcrf/corpus.hpp"

namespace albumcrf {

// Per-identity score vector; lives on the probability simplex.
struct PredictionVector {
  std::vector<double> probs;

  int argmax() const;  // ties break to the smallest index
};

// Natural-log entropy, with 0 log 0 := 0.
double entropy(const PredictionVector& p);

struct UnaryTrainConfig {
  double learning_rate = 1.0;
  int epochs = 120;
  int batch_size = 128;
  double l2_lambda = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct UnaryDataset {
  std::vector<std::vector<double>> features;  // N x D
  std::vector<int> labels;                    // indices into label_names
  std::vector<std::string> label_names;       // K class names, sorted
};

// K one-vs-rest logistic regressors over concatenated head+context features.
struct UnaryModel {
  std::vector<std::string> labels;  // K, sorted
  std::vector<double> weights;      // K x D, row-major
  std::vector<double> biases;       // K
  double l2_lambda = 0.0;
  std::string trained_on = "visible";

  int num_classes() const { return static_cast<int>(labels.size()); }
  int feature_dim() const {
    return labels.empty() ? 0 : static_cast<int>(weights.size() / labels.size());
  }
  int label_index(const std::string& label) const;  // -1 if unknown
};

// Mini-batch gradient descent on the regularized one-vs-rest log loss.
// Deterministic given config.seed.
UnaryModel train_unary(const UnaryDataset& data, const UnaryTrainConfig& config,
                       const std::string& trained_on);

// Sigmoid scores renormalized to sum 1 (renormalization preserves the argmax).
PredictionVector predict_unary(const UnaryModel& model, const std::vector<double>& features);
PredictionVector predict_unary(const UnaryModel& model, const Instance& instance);

std::vector<double> concat_features(const Instance& instance);

// Fraction of queries matching the most frequent tagged label (ties break to
// the lexicographically smallest label).
double naive_baseline_accuracy(const std::vector<std::string>& tag_labels,
                               const std::vector<std::string>& query_labels);

// Mean regularized log loss over data[subset] (all rows when subset empty),
// and its gradient. The trainer steps along this gradient; tests
// finite-difference it.
double unary_log_loss(const UnaryModel& model, const UnaryDataset& data,
                      const std::vector<int>& subset = {});
void unary_log_loss_gradient(const UnaryModel& model, const UnaryDataset& data,
                             const std::vector<int>& subset, std::vector<double>& grad_w,
                             std::vector<double>& grad_b);

nlohmann::ordered_json unary_to_json(const UnaryModel& model);
UnaryModel unary_from_json(const nlohmann::json& j);
void save_unary(const UnaryModel& model, const std::string& path);
UnaryModel load_unary(const std::string& path);

}  // namespace albumcrf
