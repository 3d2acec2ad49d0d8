#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "albumcrf/corpus.hpp"
#include "albumcrf/unary.hpp"

namespace albumcrf {

// Which obfuscation states the two sides of a pair carry.
enum class PairRegime { VisiblePair, ObfuscatedPair, MixedPair };
const char* to_string(PairRegime r);
PairRegime pair_regime_from_string(const std::string& s);
PairRegime regime_of_pair(bool a_obfuscated, bool b_obfuscated);

// Three fully connected layers; ReLU after the first two, 2-way softmax at
// the end (no-match, match).
struct MlpParams {
  int input_dim = 0;
  int hidden = 0;
  std::vector<double> w1, b1;  // hidden x input_dim
  std::vector<double> w2, b2;  // hidden x hidden
  std::vector<double> w3, b3;  // 2 x hidden

  std::size_t parameter_count() const;
};

// Match probability for a concatenated pair vector, evaluation mode.
double mlp_match_prob(const MlpParams& params, const std::vector<double>& pair_features);

struct PairDataset {
  std::vector<std::vector<double>> features;   // per-instance rows (head+context)
  std::vector<std::pair<int, int>> pairs;      // indices into features
  std::vector<int> labels;                     // 1 = match, 0 = no-match
};

struct MatcherTrainConfig {
  int hidden = 64;
  double learning_rate = 3e-3;
  int iterations = 1200;      // mini-batches; fine-tuning phases run half
  int batch_size = 100;
  double positive_fraction = 0.1;  // fixed 1:9 positive:negative batches
  double dropout = 0.5;
  double grad_clip = 10.0;    // global L2 norm
  std::uint64_t seed = 0;

  void validate() const;
};

// Adam on the pair cross-entropy with 1:9 batch composition and train-time
// dropout. Pass init to fine-tune a pretrained model; otherwise weights start
// from seeded Gaussian init. Deterministic given config.seed.
MlpParams train_matcher(const PairDataset& data, const MatcherTrainConfig& config,
                        const MlpParams* init = nullptr);

struct MatcherModel {
  enum class Kind { Trained, UnaryBaseline, Oracle };
  Kind kind = Kind::Oracle;
  MlpParams mlp;                                // Trained
  std::shared_ptr<const UnaryModel> unary;      // UnaryBaseline
  PairRegime regime = PairRegime::VisiblePair;

  static MatcherModel trained(MlpParams params, PairRegime regime);
  static MatcherModel unary_baseline(std::shared_ptr<const UnaryModel> unary);
  static MatcherModel oracle();
};

// Symmetrized match probability in [0, 1]. Trained averages both input
// orders; Oracle is the ground-truth identity indicator.
double match_prob(const MatcherModel& model, const Instance& a, const Instance& b);

// psi = 1 - H/2 when the argmaxes agree, H/2 otherwise, with H the mean of
// the two prediction entropies; clamped to [0, 1].
double unary_baseline_match(const PredictionVector& pi, const PredictionVector& pj);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;  // negatives scored >= threshold
  double fnr = 0.0;  // positives scored <  threshold
};

struct RocCurve {
  std::vector<RocPoint> points;  // thresholds ascending
  double eer_threshold = 0.0;
  double eer_rate = 0.0;
  double eer_accuracy = 0.0;  // 1 - rate at the FPR/FNR crossing
};

// Sweeps every distinct score as a threshold and finds the FPR = FNR
// crossing by linear interpolation between adjacent thresholds.
RocCurve eval_matcher(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean cross-entropy over data[subset] (dropout-free) and its gradient;
// the trainer steps a masked variant, tests finite-difference this one.
double matcher_loss(const MlpParams& params, const PairDataset& data,
                    const std::vector<int>& subset = {});
void matcher_gradient(const MlpParams& params, const PairDataset& data,
                      const std::vector<int>& subset, MlpParams& grad);

nlohmann::ordered_json matcher_to_json(const MatcherModel& model);
MatcherModel matcher_from_json(const nlohmann::json& j);
void save_matcher(const MatcherModel& model, const std::string& path);
MatcherModel load_matcher(const std::string& path);

void dump_pair_scores(const std::string& path, const std::vector<std::string>& ids_i,
                      const std::vector<std::string>& ids_j,
                      const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace albumcrf
