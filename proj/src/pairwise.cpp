#include "albumcrf/pairwise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "albumcrf/error.hpp"
#include "albumcrf/rng.hpp"
#include "albumcrf/util.hpp"

namespace albumcrf {

namespace {

struct ForwardState {
  std::vector<double> z1, a1, z2, a2, z3;
  double p_match = 0.0;
  double p_nomatch = 0.0;
};

// Forward pass; masks (0/1 per hidden unit, already scaled by 1/(1-p)) are
// applied after each ReLU when given.
void mlp_forward(const MlpParams& m, const std::vector<double>& x,
                 const std::vector<double>* mask1, const std::vector<double>* mask2,
                 ForwardState& s) {
  const int h = m.hidden;
  const int in = m.input_dim;
  s.z1.assign(h, 0.0);
  for (int r = 0; r < h; ++r) {
    double z = m.b1[r];
    const double* w = &m.w1[static_cast<std::size_t>(r) * in];
    for (int c = 0; c < in; ++c) z += w[c] * x[c];
    s.z1[r] = z;
  }
  s.a1 = s.z1;
  for (double& v : s.a1) v = std::max(0.0, v);
  if (mask1) {
    for (int r = 0; r < h; ++r) s.a1[r] *= (*mask1)[r];
  }

  s.z2.assign(h, 0.0);
  for (int r = 0; r < h; ++r) {
    double z = m.b2[r];
    const double* w = &m.w2[static_cast<std::size_t>(r) * h];
    for (int c = 0; c < h; ++c) z += w[c] * s.a1[c];
    s.z2[r] = z;
  }
  s.a2 = s.z2;
  for (double& v : s.a2) v = std::max(0.0, v);
  if (mask2) {
    for (int r = 0; r < h; ++r) s.a2[r] *= (*mask2)[r];
  }

  s.z3.assign(2, 0.0);
  for (int r = 0; r < 2; ++r) {
    double z = m.b3[r];
    const double* w = &m.w3[static_cast<std::size_t>(r) * h];
    for (int c = 0; c < h; ++c) z += w[c] * s.a2[c];
    s.z3[r] = z;
  }
  const double mx = std::max(s.z3[0], s.z3[1]);
  const double e0 = std::exp(s.z3[0] - mx);
  const double e1 = std::exp(s.z3[1] - mx);
  s.p_nomatch = e0 / (e0 + e1);
  s.p_match = e1 / (e0 + e1);
}

// Accumulates d(cross-entropy)/d(params) for one example into grad.
void mlp_backward(const MlpParams& m, const std::vector<double>& x, int label,
                  const std::vector<double>* mask1, const std::vector<double>* mask2,
                  const ForwardState& s, MlpParams& grad) {
  const int h = m.hidden;
  const int in = m.input_dim;

  double dz3[2] = {s.p_nomatch - (label == 0 ? 1.0 : 0.0),
                   s.p_match - (label == 1 ? 1.0 : 0.0)};
  std::vector<double> da2(h, 0.0);
  for (int r = 0; r < 2; ++r) {
    double* gw = &grad.w3[static_cast<std::size_t>(r) * h];
    const double* w = &m.w3[static_cast<std::size_t>(r) * h];
    for (int c = 0; c < h; ++c) {
      gw[c] += dz3[r] * s.a2[c];
      da2[c] += dz3[r] * w[c];
    }
    grad.b3[r] += dz3[r];
  }

  std::vector<double> dz2(h);
  for (int r = 0; r < h; ++r) {
    double d = da2[r];
    if (mask2) d *= (*mask2)[r];
    dz2[r] = s.z2[r] > 0.0 ? d : 0.0;
  }
  std::vector<double> da1(h, 0.0);
  for (int r = 0; r < h; ++r) {
    double* gw = &grad.w2[static_cast<std::size_t>(r) * h];
    const double* w = &m.w2[static_cast<std::size_t>(r) * h];
    for (int c = 0; c < h; ++c) {
      gw[c] += dz2[r] * s.a1[c];
      da1[c] += dz2[r] * w[c];
    }
    grad.b2[r] += dz2[r];
  }

  for (int r = 0; r < h; ++r) {
    double d = da1[r];
    if (mask1) d *= (*mask1)[r];
    const double dz1 = s.z1[r] > 0.0 ? d : 0.0;
    double* gw = &grad.w1[static_cast<std::size_t>(r) * in];
    for (int c = 0; c < in; ++c) gw[c] += dz1 * x[c];
    grad.b1[r] += dz1;
  }
}

void zero_like(const MlpParams& m, MlpParams& grad) {
  grad.input_dim = m.input_dim;
  grad.hidden = m.hidden;
  grad.w1.assign(m.w1.size(), 0.0);
  grad.b1.assign(m.b1.size(), 0.0);
  grad.w2.assign(m.w2.size(), 0.0);
  grad.b2.assign(m.b2.size(), 0.0);
  grad.w3.assign(m.w3.size(), 0.0);
  grad.b3.assign(m.b3.size(), 0.0);
}

void scale_params(MlpParams& p, double s) {
  for (auto* v : {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3}) {
    for (double& x : *v) x *= s;
  }
}

double squared_norm(const MlpParams& p) {
  double n = 0.0;
  for (const auto* v : {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3}) {
    for (double x : *v) n += x * x;
  }
  return n;
}

std::vector<double> pair_vector(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> x;
  x.reserve(a.size() + b.size());
  x.insert(x.end(), a.begin(), a.end());
  x.insert(x.end(), b.begin(), b.end());
  return x;
}

}  // namespace

const char* to_string(PairRegime r) {
  switch (r) {
    case PairRegime::VisiblePair: return "visible-pair";
    case PairRegime::ObfuscatedPair: return "obfuscated-pair";
    case PairRegime::MixedPair: return "mixed-pair";
  }
  return "visible-pair";
}

PairRegime pair_regime_from_string(const std::string& s) {
  if (s == "visible-pair") return PairRegime::VisiblePair;
  if (s == "obfuscated-pair") return PairRegime::ObfuscatedPair;
  if (s == "mixed-pair") return PairRegime::MixedPair;
  throw ConfigError("unknown pair regime: " + s);
}

PairRegime regime_of_pair(bool a_obfuscated, bool b_obfuscated) {
  if (!a_obfuscated && !b_obfuscated) return PairRegime::VisiblePair;
  if (a_obfuscated && b_obfuscated) return PairRegime::ObfuscatedPair;
  return PairRegime::MixedPair;
}

std::size_t MlpParams::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
}

double mlp_match_prob(const MlpParams& params, const std::vector<double>& pair_features) {
  if (static_cast<int>(pair_features.size()) != params.input_dim)
    throw DataError("matcher: pair feature dimension mismatch");
  ForwardState s;
  mlp_forward(params, pair_features, nullptr, nullptr, s);
  return s.p_match;
}

void MatcherTrainConfig::validate() const {
  if (hidden < 1) throw ConfigError("matcher: hidden width must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("matcher: learning_rate must be > 0");
  if (iterations < 1) throw ConfigError("matcher: iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("matcher: batch_size must be >= 1");
  if (positive_fraction <= 0 || positive_fraction >= 1)
    throw ConfigError("matcher: positive_fraction must be in (0, 1)");
  if (dropout < 0 || dropout >= 1) throw ConfigError("matcher: dropout must be in [0, 1)");
}

double matcher_loss(const MlpParams& params, const PairDataset& data,
                    const std::vector<int>& subset) {
  std::vector<int> all;
  const std::vector<int>* rows = &subset;
  if (subset.empty()) {
    all.resize(data.pairs.size());
    std::iota(all.begin(), all.end(), 0);
    rows = &all;
  }
  ForwardState s;
  double loss = 0.0;
  for (int r : *rows) {
    const auto& [i, j] = data.pairs[r];
    mlp_forward(params, pair_vector(data.features[i], data.features[j]), nullptr, nullptr, s);
    const double p = data.labels[r] == 1 ? s.p_match : s.p_nomatch;
    loss += -std::log(std::max(p, 1e-300));
  }
  return loss / static_cast<double>(rows->size());
}

void matcher_gradient(const MlpParams& params, const PairDataset& data,
                      const std::vector<int>& subset, MlpParams& grad) {
  std::vector<int> all;
  const std::vector<int>* rows = &subset;
  if (subset.empty()) {
    all.resize(data.pairs.size());
    std::iota(all.begin(), all.end(), 0);
    rows = &all;
  }
  zero_like(params, grad);
  ForwardState s;
  for (int r : *rows) {
    const auto& [i, j] = data.pairs[r];
    const std::vector<double> x = pair_vector(data.features[i], data.features[j]);
    mlp_forward(params, x, nullptr, nullptr, s);
    mlp_backward(params, x, data.labels[r], nullptr, nullptr, s, grad);
  }
  scale_params(grad, 1.0 / static_cast<double>(rows->size()));
}

MlpParams train_matcher(const PairDataset& data, const MatcherTrainConfig& config,
                        const MlpParams* init) {
  config.validate();
  if (data.pairs.empty()) throw DataError("matcher training: empty pair dataset");
  if (data.pairs.size() != data.labels.size())
    throw DataError("matcher training: pairs/labels size mismatch");

  std::vector<int> positives, negatives;
  for (int r = 0; r < static_cast<int>(data.pairs.size()); ++r) {
    (data.labels[r] == 1 ? positives : negatives).push_back(r);
  }
  if (positives.empty() || negatives.empty())
    throw DataError("matcher training: dataset needs both match and no-match pairs");

  const int input_dim = static_cast<int>(data.features.at(0).size()) * 2;
  Rng rng(mix_seed(config.seed, 0x3f));

  MlpParams m;
  if (init) {
    if (init->input_dim != input_dim)
      throw DataError("matcher fine-tune: input dimension mismatch");
    m = *init;
  } else {
    m.input_dim = input_dim;
    m.hidden = config.hidden;
    auto he_init = [&rng](std::vector<double>& w, int fan_in, std::size_t count) {
      w.resize(count);
      const double scale = std::sqrt(2.0 / fan_in);
      for (double& x : w) x = rng.normal(0.0, scale);
    };
    he_init(m.w1, input_dim, static_cast<std::size_t>(config.hidden) * input_dim);
    he_init(m.w2, config.hidden, static_cast<std::size_t>(config.hidden) * config.hidden);
    he_init(m.w3, config.hidden, static_cast<std::size_t>(2) * config.hidden);
    m.b1.assign(config.hidden, 0.0);
    m.b2.assign(config.hidden, 0.0);
    m.b3.assign(2, 0.0);
  }

  const int pos_per_batch =
      std::max(1, static_cast<int>(std::lround(config.batch_size * config.positive_fraction)));
  const int neg_per_batch = std::max(1, config.batch_size - pos_per_batch);

  MlpParams grad, adam_m, adam_v;
  zero_like(m, adam_m);
  zero_like(m, adam_v);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double beta1_t = 1.0, beta2_t = 1.0;

  ForwardState s;
  std::vector<double> mask1(m.hidden), mask2(m.hidden);
  const double keep = 1.0 - config.dropout;
  const int lr_step = std::max(1, config.iterations / 3);

  for (int it = 0; it < config.iterations; ++it) {
    // Step schedule: halve the rate at each third of the budget.
    const double lr = config.learning_rate * std::pow(0.5, it / lr_step);
    zero_like(m, grad);
    for (int b = 0; b < pos_per_batch + neg_per_batch; ++b) {
      const bool positive = b < pos_per_batch;
      const auto& pool = positive ? positives : negatives;
      const int r = pool[rng.uniform_index(pool.size())];
      auto [i, j] = data.pairs[r];
      // Concatenation is order-sensitive but the relation is symmetric;
      // drawing both orders keeps the net from keying on slot position.
      if (rng.bernoulli(0.5)) std::swap(i, j);
      const std::vector<double> x = pair_vector(data.features[i], data.features[j]);
      const std::vector<double>* m1 = nullptr;
      const std::vector<double>* m2 = nullptr;
      if (config.dropout > 0.0) {
        for (int u = 0; u < m.hidden; ++u) mask1[u] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
        for (int u = 0; u < m.hidden; ++u) mask2[u] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
        m1 = &mask1;
        m2 = &mask2;
      }
      mlp_forward(m, x, m1, m2, s);
      mlp_backward(m, x, data.labels[r], m1, m2, s, grad);
    }
    scale_params(grad, 1.0 / (pos_per_batch + neg_per_batch));

    if (config.grad_clip > 0.0) {
      const double norm = std::sqrt(squared_norm(grad));
      if (norm > config.grad_clip) scale_params(grad, config.grad_clip / norm);
    }

    beta1_t *= beta1;
    beta2_t *= beta2;
    auto adam_step = [&](std::vector<double>& w, std::vector<double>& gm,
                         std::vector<double>& gv, const std::vector<double>& g) {
      for (std::size_t k = 0; k < w.size(); ++k) {
        gm[k] = beta1 * gm[k] + (1.0 - beta1) * g[k];
        gv[k] = beta2 * gv[k] + (1.0 - beta2) * g[k] * g[k];
        const double mhat = gm[k] / (1.0 - beta1_t);
        const double vhat = gv[k] / (1.0 - beta2_t);
        w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    };
    adam_step(m.w1, adam_m.w1, adam_v.w1, grad.w1);
    adam_step(m.b1, adam_m.b1, adam_v.b1, grad.b1);
    adam_step(m.w2, adam_m.w2, adam_v.w2, grad.w2);
    adam_step(m.b2, adam_m.b2, adam_v.b2, grad.b2);
    adam_step(m.w3, adam_m.w3, adam_v.w3, grad.w3);
    adam_step(m.b3, adam_m.b3, adam_v.b3, grad.b3);

    if ((it + 1) % 100 == 0 || it + 1 == config.iterations) {
      for (double w : m.w3) {
        if (!std::isfinite(w))
          throw RuntimeError("matcher training diverged at iteration " + std::to_string(it + 1));
      }
    }
  }
  return m;
}

MatcherModel MatcherModel::trained(MlpParams params, PairRegime regime) {
  MatcherModel model;
  model.kind = Kind::Trained;
  model.mlp = std::move(params);
  model.regime = regime;
  return model;
}

MatcherModel MatcherModel::unary_baseline(std::shared_ptr<const UnaryModel> unary) {
  MatcherModel model;
  model.kind = Kind::UnaryBaseline;
  model.unary = std::move(unary);
  return model;
}

MatcherModel MatcherModel::oracle() {
  MatcherModel model;
  model.kind = Kind::Oracle;
  return model;
}

double unary_baseline_match(const PredictionVector& pi, const PredictionVector& pj) {
  const double mean_entropy = 0.5 * (entropy(pi) + entropy(pj));
  const double psi = pi.argmax() == pj.argmax() ? 1.0 - 0.5 * mean_entropy
                                                : 0.5 * mean_entropy;
  return std::clamp(psi, 0.0, 1.0);
}

double match_prob(const MatcherModel& model, const Instance& a, const Instance& b) {
  switch (model.kind) {
    case MatcherModel::Kind::Oracle:
      return a.identity == b.identity ? 1.0 : 0.0;
    case MatcherModel::Kind::UnaryBaseline:
      return unary_baseline_match(predict_unary(*model.unary, a),
                                  predict_unary(*model.unary, b));
    case MatcherModel::Kind::Trained: {
      const std::vector<double> fa = concat_features(a);
      const std::vector<double> fb = concat_features(b);
      const double ab = mlp_match_prob(model.mlp, pair_vector(fa, fb));
      const double ba = mlp_match_prob(model.mlp, pair_vector(fb, fa));
      return 0.5 * (ab + ba);
    }
  }
  return 0.0;
}

RocCurve eval_matcher(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DataError("eval_matcher: scores/labels size mismatch");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  }
  if (pos.empty() || neg.empty())
    throw DataError("eval_matcher: both match and no-match labels required");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  // Sentinel above every score: FPR 0, FNR 1, so the curve always crosses.
  thresholds.push_back(thresholds.back() + 1.0);

  RocCurve curve;
  curve.points.reserve(thresholds.size());
  for (double t : thresholds) {
    RocPoint point;
    point.threshold = t;
    const auto neg_geq = neg.end() - std::lower_bound(neg.begin(), neg.end(), t);
    const auto pos_lt = std::lower_bound(pos.begin(), pos.end(), t) - pos.begin();
    point.fpr = static_cast<double>(neg_geq) / neg.size();
    point.fnr = static_cast<double>(pos_lt) / pos.size();
    curve.points.push_back(point);
  }

  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const RocPoint& p = curve.points[i];
    const double diff = p.fpr - p.fnr;
    if (diff == 0.0) {
      curve.eer_threshold = p.threshold;
      curve.eer_rate = p.fpr;
      break;
    }
    if (diff < 0.0) {
      // Crossed between i-1 and i; interpolate both rates linearly.
      const RocPoint& a = curve.points[i - 1];
      const double da = a.fpr - a.fnr;
      const double lambda = da / (da - diff);
      curve.eer_threshold = a.threshold + lambda * (p.threshold - a.threshold);
      curve.eer_rate = a.fpr + lambda * (p.fpr - a.fpr);
      break;
    }
  }
  curve.eer_accuracy = 1.0 - curve.eer_rate;
  return curve;
}

namespace {

nlohmann::ordered_json layer_json(const std::vector<double>& w, const std::vector<double>& b,
                                  int rows, int cols) {
  nlohmann::ordered_json j;
  j["rows"] = rows;
  j["cols"] = cols;
  j["weights"] = w;
  j["biases"] = b;
  return j;
}

void layer_from_json(const nlohmann::json& j, std::vector<double>& w, std::vector<double>& b,
                     int expect_rows, int expect_cols) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  if (rows != expect_rows || cols != expect_cols)
    throw DataError("matcher model: unexpected layer shape");
  w = j.at("weights").get<std::vector<double>>();
  b = j.at("biases").get<std::vector<double>>();
  if (static_cast<int>(w.size()) != rows * cols || static_cast<int>(b.size()) != rows)
    throw DataError("matcher model: layer size mismatch");
}

}  // namespace

nlohmann::ordered_json matcher_to_json(const MatcherModel& model) {
  nlohmann::ordered_json j;
  switch (model.kind) {
    case MatcherModel::Kind::Trained: {
      j["variant"] = "trained";
      j["regime"] = to_string(model.regime);
      j["input_dim"] = model.mlp.input_dim;
      j["hidden"] = model.mlp.hidden;
      nlohmann::ordered_json layers = nlohmann::ordered_json::array();
      layers.push_back(layer_json(model.mlp.w1, model.mlp.b1, model.mlp.hidden,
                                  model.mlp.input_dim));
      layers.push_back(layer_json(model.mlp.w2, model.mlp.b2, model.mlp.hidden,
                                  model.mlp.hidden));
      layers.push_back(layer_json(model.mlp.w3, model.mlp.b3, 2, model.mlp.hidden));
      j["layers"] = layers;
      break;
    }
    case MatcherModel::Kind::UnaryBaseline:
      j["variant"] = "unary_baseline";
      j["regime"] = to_string(model.regime);
      j["unary"] = unary_to_json(*model.unary);
      break;
    case MatcherModel::Kind::Oracle:
      j["variant"] = "oracle";
      j["regime"] = to_string(model.regime);
      break;
  }
  return j;
}

MatcherModel matcher_from_json(const nlohmann::json& j) {
  MatcherModel model;
  try {
    const std::string variant = j.at("variant").get<std::string>();
    model.regime = pair_regime_from_string(j.at("regime").get<std::string>());
    if (variant == "trained") {
      model.kind = MatcherModel::Kind::Trained;
      model.mlp.input_dim = j.at("input_dim").get<int>();
      model.mlp.hidden = j.at("hidden").get<int>();
      const auto& layers = j.at("layers");
      if (layers.size() != 3) throw DataError("matcher model: expected 3 layers");
      layer_from_json(layers[0], model.mlp.w1, model.mlp.b1, model.mlp.hidden,
                      model.mlp.input_dim);
      layer_from_json(layers[1], model.mlp.w2, model.mlp.b2, model.mlp.hidden,
                      model.mlp.hidden);
      layer_from_json(layers[2], model.mlp.w3, model.mlp.b3, 2, model.mlp.hidden);
    } else if (variant == "unary_baseline") {
      model.kind = MatcherModel::Kind::UnaryBaseline;
      model.unary = std::make_shared<UnaryModel>(unary_from_json(j.at("unary")));
    } else if (variant == "oracle") {
      model.kind = MatcherModel::Kind::Oracle;
    } else {
      throw DataError("matcher model: unknown variant " + variant);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("matcher model: ") + e.what());
  }
  return model;
}

void save_matcher(const MatcherModel& model, const std::string& path) {
  write_text_file(path, matcher_to_json(model).dump(2) + "\n");
}

MatcherModel load_matcher(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return matcher_from_json(j);
}

void dump_pair_scores(const std::string& path, const std::vector<std::string>& ids_i,
                      const std::vector<std::string>& ids_j,
                      const std::vector<double>& scores, const std::vector<int>& labels) {
  std::string out = "instance_i,instance_j,score,label\n";
  for (std::size_t r = 0; r < scores.size(); ++r) {
    out += ids_i[r] + "," + ids_j[r] + "," + format_double(scores[r], 6) + "," +
           std::to_string(labels[r]) + "\n";
  }
  write_text_file(path, out);
}

}  // namespace albumcrf
