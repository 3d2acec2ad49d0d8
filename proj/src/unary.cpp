#include "albumcrf/unary.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "albumcrf/error.hpp"
#include "albumcrf/rng.hpp"
#include "albumcrf/util.hpp"

namespace albumcrf {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

std::vector<int> full_subset(std::size_t n) {
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

}  // namespace

int PredictionVector::argmax() const {
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

double entropy(const PredictionVector& p) {
  std::vector<double> terms;
  terms.reserve(p.probs.size());
  for (double q : p.probs) {
    if (q > 0.0) terms.push_back(-q * std::log(q));
  }
  return stable_sum(terms);
}

void UnaryTrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("unary: learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("unary: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("unary: batch_size must be >= 1");
  if (l2_lambda < 0) throw ConfigError("unary: l2_lambda must be >= 0");
}

int UnaryModel::label_index(const std::string& label) const {
  auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) return -1;
  return static_cast<int>(it - labels.begin());
}

double unary_log_loss(const UnaryModel& model, const UnaryDataset& data,
                      const std::vector<int>& subset) {
  const std::vector<int>& rows = subset.empty() ? full_subset(data.features.size()) : subset;
  const int num_classes = model.num_classes();
  const int dim = model.feature_dim();
  double loss = 0.0;
  for (int r : rows) {
    const std::vector<double>& x = data.features[r];
    for (int k = 0; k < num_classes; ++k) {
      double z = model.biases[k];
      const double* w = &model.weights[static_cast<std::size_t>(k) * dim];
      for (int d = 0; d < dim; ++d) z += w[d] * x[d];
      // -y log s(z) - (1-y) log(1-s(z)), expressed via softplus for stability
      loss += (data.labels[r] == k) ? softplus(-z) : softplus(z);
    }
  }
  loss /= static_cast<double>(rows.size());
  double reg = 0.0;
  for (double w : model.weights) reg += w * w;
  return loss + 0.5 * model.l2_lambda * reg;
}

void unary_log_loss_gradient(const UnaryModel& model, const UnaryDataset& data,
                             const std::vector<int>& subset, std::vector<double>& grad_w,
                             std::vector<double>& grad_b) {
  const std::vector<int>& rows = subset.empty() ? full_subset(data.features.size()) : subset;
  const int num_classes = model.num_classes();
  const int dim = model.feature_dim();
  grad_w.assign(model.weights.size(), 0.0);
  grad_b.assign(model.biases.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (int r : rows) {
    const std::vector<double>& x = data.features[r];
    for (int k = 0; k < num_classes; ++k) {
      double z = model.biases[k];
      const double* w = &model.weights[static_cast<std::size_t>(k) * dim];
      for (int d = 0; d < dim; ++d) z += w[d] * x[d];
      const double residual = (sigmoid(z) - (data.labels[r] == k ? 1.0 : 0.0)) * inv_n;
      double* gw = &grad_w[static_cast<std::size_t>(k) * dim];
      for (int d = 0; d < dim; ++d) gw[d] += residual * x[d];
      grad_b[k] += residual;
    }
  }
  for (std::size_t i = 0; i < grad_w.size(); ++i) {
    grad_w[i] += model.l2_lambda * model.weights[i];
  }
}

UnaryModel train_unary(const UnaryDataset& data, const UnaryTrainConfig& config,
                       const std::string& trained_on) {
  config.validate();
  if (data.features.empty()) throw DataError("unary training: empty dataset");
  if (data.features.size() != data.labels.size())
    throw DataError("unary training: features/labels size mismatch");

  const int num_classes = static_cast<int>(data.label_names.size());
  const int dim = static_cast<int>(data.features[0].size());
  std::vector<int> class_counts(num_classes, 0);
  for (std::size_t r = 0; r < data.labels.size(); ++r) {
    if (static_cast<int>(data.features[r].size()) != dim)
      throw DataError("unary training: ragged feature dimensions");
    if (data.labels[r] < 0 || data.labels[r] >= num_classes)
      throw DataError("unary training: label index out of range");
    ++class_counts[data.labels[r]];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (class_counts[k] == 0)
      throw DataError("unary training: identity with zero examples: " + data.label_names[k]);
  }

  UnaryModel model;
  model.labels = data.label_names;
  model.weights.assign(static_cast<std::size_t>(num_classes) * dim, 0.0);
  model.biases.assign(num_classes, 0.0);
  model.l2_lambda = config.l2_lambda;
  model.trained_on = trained_on;

  Rng rng(mix_seed(config.seed, 0x0e));
  std::vector<int> order = full_subset(data.features.size());
  std::vector<double> grad_w, grad_b;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<int> batch(order.begin() + start, order.begin() + end);
      unary_log_loss_gradient(model, data, batch, grad_w, grad_b);
      for (std::size_t i = 0; i < model.weights.size(); ++i)
        model.weights[i] -= config.learning_rate * grad_w[i];
      for (std::size_t i = 0; i < model.biases.size(); ++i)
        model.biases[i] -= config.learning_rate * grad_b[i];
    }
    for (double w : model.weights) {
      if (!std::isfinite(w))
        throw RuntimeError("unary training diverged at epoch " + std::to_string(epoch + 1));
    }
  }
  return model;
}

PredictionVector predict_unary(const UnaryModel& model, const std::vector<double>& features) {
  const int dim = model.feature_dim();
  if (static_cast<int>(features.size()) != dim)
    throw DataError("predict_unary: feature dimension mismatch (got " +
                    std::to_string(features.size()) + ", model expects " +
                    std::to_string(dim) + ")");
  const int num_classes = model.num_classes();
  PredictionVector p;
  p.probs.resize(num_classes);
  double total = 0.0;
  for (int k = 0; k < num_classes; ++k) {
    double z = model.biases[k];
    const double* w = &model.weights[static_cast<std::size_t>(k) * dim];
    for (int d = 0; d < dim; ++d) z += w[d] * features[d];
    p.probs[k] = sigmoid(z);
    total += p.probs[k];
  }
  for (double& q : p.probs) q /= total;
  return p;
}

std::vector<double> concat_features(const Instance& instance) {
  std::vector<double> f;
  f.reserve(instance.head_features.size() + instance.context_features.size());
  f.insert(f.end(), instance.head_features.begin(), instance.head_features.end());
  f.insert(f.end(), instance.context_features.begin(), instance.context_features.end());
  return f;
}

PredictionVector predict_unary(const UnaryModel& model, const Instance& instance) {
  return predict_unary(model, concat_features(instance));
}

double naive_baseline_accuracy(const std::vector<std::string>& tag_labels,
                               const std::vector<std::string>& query_labels) {
  if (tag_labels.empty()) throw DataError("naive baseline: empty tag multiset");
  if (query_labels.empty()) throw DataError("naive baseline: no queries");
  std::map<std::string, int> counts;
  for (const auto& l : tag_labels) ++counts[l];
  std::string best;
  int best_count = -1;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {  // map order => ties pick smallest label
      best = label;
      best_count = count;
    }
  }
  int correct = 0;
  for (const auto& l : query_labels) {
    if (l == best) ++correct;
  }
  return static_cast<double>(correct) / query_labels.size();
}

nlohmann::ordered_json unary_to_json(const UnaryModel& model) {
  nlohmann::ordered_json j;
  j["labels"] = model.labels;
  j["weights"] = model.weights;
  j["biases"] = model.biases;
  j["l2_lambda"] = model.l2_lambda;
  j["trained_on"] = model.trained_on;
  return j;
}

UnaryModel unary_from_json(const nlohmann::json& j) {
  UnaryModel model;
  try {
    model.labels = j.at("labels").get<std::vector<std::string>>();
    model.weights = j.at("weights").get<std::vector<double>>();
    model.biases = j.at("biases").get<std::vector<double>>();
    model.l2_lambda = j.at("l2_lambda").get<double>();
    model.trained_on = j.at("trained_on").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("unary model: ") + e.what());
  }
  if (model.labels.empty() || model.biases.size() != model.labels.size() ||
      model.weights.size() % model.labels.size() != 0)
    throw DataError("unary model: inconsistent shapes");
  return model;
}

void save_unary(const UnaryModel& model, const std::string& path) {
  write_text_file(path, unary_to_json(model).dump(2) + "\n");
}

UnaryModel load_unary(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return unary_from_json(j);
}

}  // namespace albumcrf
