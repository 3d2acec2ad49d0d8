#include "albumcrf/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <unordered_map>

#include "albumcrf/error.hpp"
#include "albumcrf/rng.hpp"
#include "albumcrf/util.hpp"

namespace albumcrf {

namespace {

constexpr std::uint64_t kObfStream = 0x0b5;
constexpr std::uint64_t kPretrainCorpusStream = 0x9c1;
constexpr std::uint64_t kUnaryVisibleSeed = 0x10;
constexpr std::uint64_t kUnaryAdaptedSeed = 0x11;
constexpr std::uint64_t kMixedSideStream = 0x77;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::uint64_t obf_seed(std::uint64_t corpus_seed, const std::string& instance_id) {
  return mix_seed(mix_seed(corpus_seed, kObfStream), hash_str(instance_id));
}

bool scenario_uses_obfuscation(ScenarioKind kind) {
  return kind == ScenarioKind::S2 || kind == ScenarioKind::S3 ||
         kind == ScenarioKind::S3Prime || kind == ScenarioKind::S3DoublePrime;
}

}  // namespace

const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::UnaryOnly: return "unary_only";
    case RunMode::JointTree: return "joint_tree";
    case RunMode::JointMaxProduct: return "joint_maxproduct";
    case RunMode::JointOracle: return "joint_oracle";
  }
  return "unary_only";
}

RunMode run_mode_from_string(const std::string& s) {
  if (s == "unary_only") return RunMode::UnaryOnly;
  if (s == "joint_tree") return RunMode::JointTree;
  if (s == "joint_maxproduct") return RunMode::JointMaxProduct;
  if (s == "joint_oracle") return RunMode::JointOracle;
  throw ConfigError("unknown mode: " + s);
}

const char* to_string(MatcherKind k) {
  return k == MatcherKind::Trained ? "trained" : "unary_baseline";
}

MatcherKind matcher_kind_from_string(const std::string& s) {
  if (s == "trained") return MatcherKind::Trained;
  if (s == "unary_baseline") return MatcherKind::UnaryBaseline;
  throw ConfigError("unknown matcher kind: " + s);
}

ExperimentConfig ExperimentConfig::normalized() const {
  ExperimentConfig cfg = *this;
  if (cfg.scenario.kind == ScenarioKind::S0 || cfg.scenario.kind == ScenarioKind::S1) {
    cfg.obfuscation = ObfuscationType::Visible;
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  if (scenario.kind == ScenarioKind::S1 && !(scenario.tau > 0))
    throw ConfigError("S1 requires tau > 0");
  if (scenario_uses_obfuscation(scenario.kind) && obfuscation == ObfuscationType::Visible)
    throw ConfigError(std::string(to_string(scenario.kind)) +
                      " requires a non-visible obfuscation type");
  if (blur_strength < 0 || blur_strength > 1)
    throw ConfigError("blur_strength must be in [0, 1]");
  if (generator.has_value() == !corpus_path.empty())
    throw ConfigError("config needs exactly one corpus source (generator or path)");
  if (generator) generator->validate();
  pruning.validate();
  inference.validate();
  unary_train.validate();
  matcher_train.validate();
}

nlohmann::ordered_json generator_to_json(const GeneratorConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_identities"] = cfg.n_identities;
  j["instances_per_identity"] = cfg.instances_per_identity;
  j["events_per_identity"] = cfg.events_per_identity;
  j["albums_per_event"] = cfg.albums_per_event;
  j["head_dim"] = cfg.head_dim;
  j["context_dim"] = cfg.context_dim;
  j["identity_signal_weight"] = cfg.identity_signal_weight;
  j["event_signal_weight"] = cfg.event_signal_weight;
  j["noise_sigma"] = cfg.noise_sigma;
  return j;
}

GeneratorConfig generator_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  cfg.n_identities = j.value("n_identities", cfg.n_identities);
  cfg.instances_per_identity = j.value("instances_per_identity", cfg.instances_per_identity);
  cfg.events_per_identity = j.value("events_per_identity", cfg.events_per_identity);
  cfg.albums_per_event = j.value("albums_per_event", cfg.albums_per_event);
  cfg.head_dim = j.value("head_dim", cfg.head_dim);
  cfg.context_dim = j.value("context_dim", cfg.context_dim);
  cfg.identity_signal_weight = j.value("identity_signal_weight", cfg.identity_signal_weight);
  cfg.event_signal_weight = j.value("event_signal_weight", cfg.event_signal_weight);
  cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
  return cfg;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["scenario"] = to_string(cfg.scenario.kind);
  j["tau"] = cfg.scenario.tau;
  j["obfuscation"] = to_string(cfg.obfuscation);
  j["blur_strength"] = cfg.blur_strength;
  j["sigma_blur"] = cfg.sigma_blur;
  j["domain"] = to_string(cfg.domain);
  j["mode"] = to_string(cfg.mode);
  j["matcher"] = to_string(cfg.matcher);
  j["pruning"] = {{"album_pruning", cfg.pruning.album_pruning},
                  {"beta", cfg.pruning.beta},
                  {"materialize_full", cfg.pruning.materialize_full}};
  j["inference"] = {{"alpha", cfg.inference.alpha},
                    {"max_iterations", cfg.inference.max_iterations},
                    {"damping", cfg.inference.damping},
                    {"convergence_tol", cfg.inference.convergence_tol},
                    {"enumeration_budget", cfg.inference.enumeration_budget}};
  j["seeds"] = {{"corpus", cfg.seeds.corpus},
                {"splits", cfg.seeds.splits},
                {"tags", cfg.seeds.tags},
                {"training", cfg.seeds.training}};
  if (cfg.generator) {
    j["corpus"] = {{"generator", generator_to_json(*cfg.generator)}};
  } else {
    j["corpus"] = {{"path", cfg.corpus_path}};
  }
  j["unary_train"] = {{"learning_rate", cfg.unary_train.learning_rate},
                      {"epochs", cfg.unary_train.epochs},
                      {"batch_size", cfg.unary_train.batch_size},
                      {"l2_lambda", cfg.unary_train.l2_lambda}};
  j["matcher_train"] = {{"hidden", cfg.matcher_train.hidden},
                        {"learning_rate", cfg.matcher_train.learning_rate},
                        {"iterations", cfg.matcher_train.iterations},
                        {"batch_size", cfg.matcher_train.batch_size},
                        {"positive_fraction", cfg.matcher_train.positive_fraction},
                        {"dropout", cfg.matcher_train.dropout},
                        {"grad_clip", cfg.matcher_train.grad_clip}};
  j["pretrain_matcher"] = cfg.pretrain_matcher;
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("scenario")) cfg.scenario.kind = scenario_from_string(j["scenario"]);
    cfg.scenario.tau = j.value("tau", cfg.scenario.tau);
    if (j.contains("obfuscation"))
      cfg.obfuscation = obfuscation_type_from_string(j["obfuscation"]);
    cfg.blur_strength = j.value("blur_strength", cfg.blur_strength);
    cfg.sigma_blur = j.value("sigma_blur", cfg.sigma_blur);
    if (j.contains("domain")) cfg.domain = domain_mode_from_string(j["domain"]);
    if (j.contains("mode")) cfg.mode = run_mode_from_string(j["mode"]);
    if (j.contains("matcher")) cfg.matcher = matcher_kind_from_string(j["matcher"]);
    if (j.contains("pruning")) {
      const auto& p = j["pruning"];
      cfg.pruning.album_pruning = p.value("album_pruning", cfg.pruning.album_pruning);
      cfg.pruning.beta = p.value("beta", cfg.pruning.beta);
      cfg.pruning.materialize_full = p.value("materialize_full", cfg.pruning.materialize_full);
    }
    if (j.contains("inference")) {
      const auto& p = j["inference"];
      cfg.inference.alpha = p.value("alpha", cfg.inference.alpha);
      cfg.inference.max_iterations = p.value("max_iterations", cfg.inference.max_iterations);
      cfg.inference.damping = p.value("damping", cfg.inference.damping);
      cfg.inference.convergence_tol = p.value("convergence_tol", cfg.inference.convergence_tol);
      cfg.inference.enumeration_budget =
          p.value("enumeration_budget", cfg.inference.enumeration_budget);
    }
    if (j.contains("seeds")) {
      const auto& p = j["seeds"];
      cfg.seeds.corpus = p.value("corpus", cfg.seeds.corpus);
      cfg.seeds.splits = p.value("splits", cfg.seeds.splits);
      cfg.seeds.tags = p.value("tags", cfg.seeds.tags);
      cfg.seeds.training = p.value("training", cfg.seeds.training);
    }
    if (j.contains("corpus")) {
      const auto& c = j["corpus"];
      if (c.contains("generator")) cfg.generator = generator_from_json(c["generator"]);
      if (c.contains("path")) cfg.corpus_path = c["path"].get<std::string>();
    } else {
      cfg.generator = GeneratorConfig{};
    }
    if (j.contains("unary_train")) {
      const auto& p = j["unary_train"];
      cfg.unary_train.learning_rate = p.value("learning_rate", cfg.unary_train.learning_rate);
      cfg.unary_train.epochs = p.value("epochs", cfg.unary_train.epochs);
      cfg.unary_train.batch_size = p.value("batch_size", cfg.unary_train.batch_size);
      cfg.unary_train.l2_lambda = p.value("l2_lambda", cfg.unary_train.l2_lambda);
    }
    if (j.contains("matcher_train")) {
      const auto& p = j["matcher_train"];
      cfg.matcher_train.hidden = p.value("hidden", cfg.matcher_train.hidden);
      cfg.matcher_train.learning_rate =
          p.value("learning_rate", cfg.matcher_train.learning_rate);
      cfg.matcher_train.iterations = p.value("iterations", cfg.matcher_train.iterations);
      cfg.matcher_train.batch_size = p.value("batch_size", cfg.matcher_train.batch_size);
      cfg.matcher_train.positive_fraction =
          p.value("positive_fraction", cfg.matcher_train.positive_fraction);
      cfg.matcher_train.dropout = p.value("dropout", cfg.matcher_train.dropout);
      cfg.matcher_train.grad_clip = p.value("grad_clip", cfg.matcher_train.grad_clip);
    }
    cfg.pretrain_matcher = j.value("pretrain_matcher", cfg.pretrain_matcher);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

namespace {

// Everything run_scenario assembles before the inference loop.
struct Pipeline {
  ExperimentConfig cfg;
  Corpus corpus;
  SplitAssignment splits;
  TagSet tags;
  double effective_tau = 0;
  ObfuscationPlan plan;
  BlurParams blur;
  std::vector<Instance> rendered;  // corpus with the plan applied

  std::vector<std::string> labels;  // unary label vector (sorted identities)
  std::shared_ptr<UnaryModel> model_visible;  // null when the plan obfuscates split0
  std::shared_ptr<UnaryModel> model_adapted;  // null in visible-only scenarios

  std::map<PairRegime, MatcherModel> matchers;  // trained/unary_baseline banks

  std::vector<Instance> node_instances;  // split1 queries first, then evidence
  std::vector<int> node_corpus_index;
  int num_queries = 0;
  std::vector<std::vector<double>> node_unaries;
  RecognitionGraph graph;
};

const UnaryModel& unary_for_state(const Pipeline& p, bool node_obfuscated) {
  if (node_obfuscated) {
    if (!p.model_adapted) throw RuntimeError("internal: obfuscated node without adapted model");
    // Adapted evaluation path: obfuscated instances meet the model trained on
    // the same obfuscation regime.
    if (p.model_adapted->trained_on != to_string(p.cfg.obfuscation))
      throw RuntimeError("internal: regime mismatch between node and unary model");
    return *p.model_adapted;
  }
  if (p.model_visible) return *p.model_visible;
  return *p.model_adapted;  // S3': only an obfuscation-trained model exists
}

std::vector<double> one_hot(int index, int num_classes) {
  std::vector<double> v(num_classes, 0.0);
  v[index] = 1.0;
  return v;
}

// Per-instance feature rows for matcher training under one pair regime:
// visible rows, obfuscated rows, or (mixed) a seeded coin per pair choosing
// which side is obfuscated.
PairDataset build_pair_dataset(const Corpus& corpus, const std::vector<int>& member_indices,
                               PairRegime regime, const Obfuscation& obf_type,
                               const BlurParams& blur, std::uint64_t corpus_seed,
                               std::uint64_t mix_stream) {
  PairDataset data;
  std::unordered_map<int, int> visible_row, obf_row;

  auto row_visible = [&](int idx) {
    auto it = visible_row.find(idx);
    if (it != visible_row.end()) return it->second;
    data.features.push_back(concat_features(corpus.instances[idx]));
    visible_row[idx] = static_cast<int>(data.features.size()) - 1;
    return visible_row[idx];
  };
  auto row_obfuscated = [&](int idx) {
    auto it = obf_row.find(idx);
    if (it != obf_row.end()) return it->second;
    const Instance& inst = corpus.instances[idx];
    Instance copy = inst;
    copy.head_features = apply_obfuscation(inst.head_features, obf_type, blur,
                                           obf_seed(corpus_seed, inst.instance_id));
    data.features.push_back(concat_features(copy));
    obf_row[idx] = static_cast<int>(data.features.size()) - 1;
    return obf_row[idx];
  };

  // Within-album pairs only; these are the edges inference will see.
  std::map<std::string, std::vector<int>> albums;
  for (int idx : member_indices) albums[corpus.instances[idx].album_id].push_back(idx);

  Rng side_rng(mix_seed(corpus_seed, mix_seed(kMixedSideStream, mix_stream)));
  for (const auto& [album, members] : albums) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        int ra, rb;
        switch (regime) {
          case PairRegime::VisiblePair:
            ra = row_visible(members[a]);
            rb = row_visible(members[b]);
            break;
          case PairRegime::ObfuscatedPair:
            ra = row_obfuscated(members[a]);
            rb = row_obfuscated(members[b]);
            break;
          case PairRegime::MixedPair:
          default:
            if (side_rng.bernoulli(0.5)) {
              ra = row_obfuscated(members[a]);
              rb = row_visible(members[b]);
            } else {
              ra = row_visible(members[a]);
              rb = row_obfuscated(members[b]);
            }
            break;
        }
        data.pairs.emplace_back(ra, rb);
        data.labels.push_back(corpus.instances[members[a]].identity ==
                                      corpus.instances[members[b]].identity
                                  ? 1
                                  : 0);
      }
    }
  }
  return data;
}

bool has_both_labels(const PairDataset& data) {
  bool pos = false, neg = false;
  for (int l : data.labels) (l == 1 ? pos : neg) = true;
  return pos && neg;
}

std::vector<PairRegime> required_regimes(const ExperimentConfig& cfg) {
  if (!scenario_uses_obfuscation(cfg.scenario.kind) ||
      cfg.obfuscation == ObfuscationType::Visible)
    return {PairRegime::VisiblePair};
  switch (cfg.scenario.kind) {
    case ScenarioKind::S2:
      return {PairRegime::VisiblePair, PairRegime::MixedPair};
    case ScenarioKind::S3:
      return {PairRegime::ObfuscatedPair};
    case ScenarioKind::S3Prime:
    case ScenarioKind::S3DoublePrime:
      return {PairRegime::VisiblePair, PairRegime::MixedPair, PairRegime::ObfuscatedPair};
    default:
      return {PairRegime::VisiblePair};
  }
}

void train_matcher_bank(Pipeline& p, const std::vector<int>& tagged_indices) {
  const ExperimentConfig& cfg = p.cfg;
  const Obfuscation obf_type{cfg.obfuscation, cfg.blur_strength};

  if (cfg.matcher == MatcherKind::UnaryBaseline) {
    // The baseline scores pairs straight from the unary predictions; per-pair
    // regime dispatch happens in the scorer via the unary model bank.
    for (PairRegime regime : required_regimes(cfg)) {
      std::shared_ptr<const UnaryModel> m =
          p.model_visible ? p.model_visible : p.model_adapted;
      MatcherModel model = MatcherModel::unary_baseline(m);
      model.regime = regime;
      p.matchers.emplace(regime, std::move(model));
    }
    return;
  }

  // Pretraining uses a generated corpus with fresh latent identities, the
  // stand-in for a disjoint-identity train partition. Ingested corpora have
  // no such source, so fine-tuning starts from scratch there.
  std::optional<Corpus> pretrain;
  std::vector<int> pretrain_all;
  BlurParams pretrain_blur;
  if (cfg.pretrain_matcher && cfg.generator) {
    pretrain = generate_corpus(*cfg.generator, mix_seed(cfg.seeds.corpus, kPretrainCorpusStream));
    pretrain_all.resize(pretrain->instances.size());
    for (int i = 0; i < static_cast<int>(pretrain_all.size()); ++i) pretrain_all[i] = i;
    pretrain_blur.corpus_head_mean = pretrain->head_feature_mean();
    pretrain_blur.sigma_blur = cfg.sigma_blur;
  }

  int regime_index = 0;
  for (PairRegime regime : required_regimes(cfg)) {
    MatcherTrainConfig pre_cfg = cfg.matcher_train;
    pre_cfg.seed = mix_seed(cfg.seeds.training, 0x20 + 2 * regime_index);
    MatcherTrainConfig fine_cfg = cfg.matcher_train;
    fine_cfg.iterations = std::max(1, cfg.matcher_train.iterations / 2);
    fine_cfg.seed = mix_seed(cfg.seeds.training, 0x21 + 2 * regime_index);
    ++regime_index;

    std::optional<MlpParams> pretrained;
    if (pretrain) {
      const std::uint64_t pretrain_seed = mix_seed(cfg.seeds.corpus, kPretrainCorpusStream);
      PairDataset pre_data =
          build_pair_dataset(*pretrain, pretrain_all, regime, obf_type, pretrain_blur,
                             pretrain_seed, static_cast<std::uint64_t>(regime));
      if (has_both_labels(pre_data)) {
        pretrained = train_matcher(pre_data, pre_cfg);
      }
    }

    PairDataset fine_data =
        build_pair_dataset(p.corpus, tagged_indices, regime, obf_type, p.blur,
                           cfg.seeds.corpus, static_cast<std::uint64_t>(regime));
    MlpParams params;
    if (has_both_labels(fine_data)) {
      params = train_matcher(fine_data, fine_cfg, pretrained ? &*pretrained : nullptr);
    } else if (pretrained) {
      // Too few tagged within-album pairs to fine-tune (very low tag rates);
      // fall back to the pretrained weights.
      params = *pretrained;
    } else {
      throw DataError("matcher training: tagged within-album pairs lack both labels and "
                      "no pretraining source is available");
    }
    p.matchers.emplace(regime, MatcherModel::trained(std::move(params), regime));
  }
}

PairScoreFn make_scorer(const Pipeline& p) {
  if (p.cfg.mode == RunMode::JointOracle) {
    return [](const Instance& a, const Instance& b) {
      return a.identity == b.identity ? 1.0 : 0.0;
    };
  }
  if (p.cfg.matcher == MatcherKind::UnaryBaseline) {
    return [&p](const Instance& a, const Instance& b) {
      const bool a_obf = a.obfuscation.type != ObfuscationType::Visible;
      const bool b_obf = b.obfuscation.type != ObfuscationType::Visible;
      const PredictionVector pa = predict_unary(unary_for_state(p, a_obf), a);
      const PredictionVector pb = predict_unary(unary_for_state(p, b_obf), b);
      return unary_baseline_match(pa, pb);
    };
  }
  return [&p](const Instance& a, const Instance& b) {
    const PairRegime regime = regime_of_pair(a.obfuscation.type != ObfuscationType::Visible,
                                             b.obfuscation.type != ObfuscationType::Visible);
    auto it = p.matchers.find(regime);
    if (it == p.matchers.end())
      throw RuntimeError(std::string("internal: no matcher for regime ") + to_string(regime));
    return match_prob(it->second, a, b);
  };
}

}  // namespace

ExperimentResult run_scenario(const ExperimentConfig& raw_config, RunArtifacts* artifacts) {
  Timer total_timer;
  Pipeline p;
  p.cfg = raw_config.normalized();
  p.cfg.validate();
  const ExperimentConfig& cfg = p.cfg;

  ExperimentResult result;
  result.config = cfg;
  result.config_echo = config_to_json(cfg);

  // Corpus, splits, tags, plan.
  Timer corpus_timer;
  p.corpus = cfg.generator ? generate_corpus(*cfg.generator, cfg.seeds.corpus)
                           : load_corpus(cfg.corpus_path);
  p.splits = make_splits(p.corpus, cfg.domain, cfg.seeds.splits);

  std::size_t split0_total = 0;
  for (const Instance& inst : p.corpus.instances) {
    if (p.splits.side(inst.instance_id) == 0) ++split0_total;
  }
  const double mean_split0 =
      static_cast<double>(split0_total) / p.corpus.identities().size();

  if (cfg.scenario.kind == ScenarioKind::S0) {
    // Every head is tagged, split1 included; queries arrive clamped.
    p.effective_tau = mean_split0;
    p.tags.tau = mean_split0;
    for (const Instance& inst : p.corpus.instances) p.tags.tagged.insert(inst.instance_id);
  } else {
    p.effective_tau =
        cfg.scenario.kind == ScenarioKind::S1 ? cfg.scenario.tau : mean_split0;
    p.tags = sample_tags(p.corpus, p.splits, p.effective_tau, cfg.seeds.tags);
  }
  result.effective_tau = p.effective_tau;

  const Obfuscation obf_type{cfg.obfuscation, cfg.blur_strength};
  if (cfg.scenario.kind == ScenarioKind::S2) {
    // Base rendering keeps everything visible; each query's obfuscation is
    // re-applied inside the loop (the plan is per-query in this scenario).
    p.plan.scenario = ScenarioKind::S2;
    for (const Instance& inst : p.corpus.instances)
      p.plan.state[inst.instance_id] = Obfuscation{ObfuscationType::Visible, 0.0};
  } else {
    p.plan = plan_obfuscation(cfg.scenario, p.corpus, p.splits, p.tags, obf_type);
  }

  p.blur.corpus_head_mean = p.corpus.head_feature_mean();
  p.blur.sigma_blur = cfg.sigma_blur;

  p.rendered = p.corpus.instances;
  for (Instance& inst : p.rendered) {
    const Obfuscation& o = p.plan.of(inst.instance_id);
    if (o.type != ObfuscationType::Visible) {
      inst.head_features = apply_obfuscation(inst.head_features, o, p.blur,
                                             obf_seed(cfg.seeds.corpus, inst.instance_id));
      inst.obfuscation = o;
    }
  }
  result.seconds.corpus = corpus_timer.elapsed();

  // Unary models.
  Timer unary_timer;
  std::vector<int> tagged_indices;
  for (int i = 0; i < static_cast<int>(p.corpus.instances.size()); ++i) {
    const Instance& inst = p.corpus.instances[i];
    if (p.splits.side(inst.instance_id) == 0 && p.tags.contains(inst.instance_id))
      tagged_indices.push_back(i);
  }
  {
    std::set<std::string> label_set;
    for (int i : tagged_indices) label_set.insert(p.corpus.instances[i].identity);
    p.labels.assign(label_set.begin(), label_set.end());
  }

  auto label_index = [&p](const std::string& identity) {
    const auto it = std::lower_bound(p.labels.begin(), p.labels.end(), identity);
    if (it == p.labels.end() || *it != identity)
      throw DataError("identity missing from tag labels: " + identity);
    return static_cast<int>(it - p.labels.begin());
  };

  const bool scenario_obf = scenario_uses_obfuscation(cfg.scenario.kind) &&
                            cfg.obfuscation != ObfuscationType::Visible;
  const bool plan_obfuscates_split0 = cfg.scenario.kind == ScenarioKind::S3 ||
                                      cfg.scenario.kind == ScenarioKind::S3Prime;

  auto build_unary_dataset = [&](bool force_obfuscation) {
    UnaryDataset data;
    data.label_names = p.labels;
    for (int i : tagged_indices) {
      const Instance& src = force_obfuscation ? p.corpus.instances[i] : p.rendered[i];
      if (force_obfuscation) {
        Instance copy = src;
        copy.head_features = apply_obfuscation(src.head_features, obf_type, p.blur,
                                               obf_seed(cfg.seeds.corpus, src.instance_id));
        data.features.push_back(concat_features(copy));
      } else {
        data.features.push_back(concat_features(src));
      }
      data.labels.push_back(label_index(src.identity));
    }
    return data;
  };

  {
    UnaryTrainConfig train_cfg = cfg.unary_train;
    const UnaryDataset plan_data = build_unary_dataset(false);
    if (plan_obfuscates_split0) {
      train_cfg.seed = mix_seed(cfg.seeds.training, kUnaryAdaptedSeed);
      p.model_adapted = std::make_shared<UnaryModel>(
          train_unary(plan_data, train_cfg, to_string(cfg.obfuscation)));
    } else {
      train_cfg.seed = mix_seed(cfg.seeds.training, kUnaryVisibleSeed);
      p.model_visible =
          std::make_shared<UnaryModel>(train_unary(plan_data, train_cfg, "visible"));
      const bool queries_obfuscated = cfg.scenario.kind == ScenarioKind::S2 ||
                                      cfg.scenario.kind == ScenarioKind::S3DoublePrime;
      if (scenario_obf && queries_obfuscated) {
        // Obfuscated queries always meet a model trained on obfuscated
        // copies of the tagged features, even when the tags themselves stay
        // visible; this makes the S2 and S3 unary paths coincide.
        UnaryTrainConfig adapted_cfg = cfg.unary_train;
        adapted_cfg.seed = mix_seed(cfg.seeds.training, kUnaryAdaptedSeed);
        p.model_adapted = std::make_shared<UnaryModel>(
            train_unary(build_unary_dataset(true), adapted_cfg, to_string(cfg.obfuscation)));
      }
    }
  }
  result.seconds.unary = unary_timer.elapsed();

  // Matcher bank.
  Timer matcher_timer;
  const bool needs_matcher =
      cfg.mode == RunMode::JointTree || cfg.mode == RunMode::JointMaxProduct;
  if (needs_matcher) train_matcher_bank(p, tagged_indices);
  result.seconds.matcher = matcher_timer.elapsed();

  // Graph over split1 plus tagged evidence nodes.
  Timer graph_timer;
  for (int i = 0; i < static_cast<int>(p.corpus.instances.size()); ++i) {
    if (p.splits.side(p.corpus.instances[i].instance_id) == 1) {
      p.node_instances.push_back(p.rendered[i]);
      p.node_corpus_index.push_back(i);
    }
  }
  p.num_queries = static_cast<int>(p.node_instances.size());
  for (int i : tagged_indices) {
    p.node_instances.push_back(p.rendered[i]);
    p.node_corpus_index.push_back(i);
  }

  const bool joint_mode = cfg.mode != RunMode::UnaryOnly;
  const PairScoreFn scorer = joint_mode ? make_scorer(p) : PairScoreFn{};
  p.graph = build_graph(p.node_instances, scorer, cfg.pruning);

  if (needs_matcher) {
    // Matcher quality on the scored album pairs, before negative pruning.
    std::vector<double> scores;
    std::vector<int> labels01;
    scores.reserve(p.graph.edges.size());
    for (const GraphEdge& e : p.graph.edges) {
      scores.push_back(e.weight);
      labels01.push_back(p.node_instances[e.i].identity == p.node_instances[e.j].identity
                             ? 1
                             : 0);
    }
    const bool pos = std::find(labels01.begin(), labels01.end(), 1) != labels01.end();
    const bool neg = std::find(labels01.begin(), labels01.end(), 0) != labels01.end();
    if (pos && neg) result.matcher_eer_accuracy = eval_matcher(scores, labels01).eer_accuracy;
  }

  // Negative edge pruning; skipped for the oracle.
  if (needs_matcher && cfg.pruning.beta > 0.0) {
    p.graph = prune_negative_edges(p.graph, cfg.pruning.beta);
  }
  result.graph = graph_stats(p.graph);
  result.seconds.graph = graph_timer.elapsed();

  // Per-node unary predictions (tagged nodes are clamped one-hot evidence).
  Timer inference_timer;
  const int num_classes = static_cast<int>(p.labels.size());
  p.node_unaries.resize(p.node_instances.size());
  parallel_for(p.node_instances.size(), [&](std::size_t n) {
    const Instance& inst = p.node_instances[n];
    if (p.tags.contains(inst.instance_id)) {
      p.node_unaries[n] = one_hot(label_index(inst.identity), num_classes);
    } else {
      const bool obf = inst.obfuscation.type != ObfuscationType::Visible;
      p.node_unaries[n] = predict_unary(unary_for_state(p, obf), inst).probs;
    }
  });

  const InferenceMode solver_mode = cfg.mode == RunMode::JointMaxProduct
                                        ? InferenceMode::JointMaxProduct
                                        : InferenceMode::JointTree;
  const bool is_s2 = cfg.scenario.kind == ScenarioKind::S2;

  result.records.resize(p.num_queries);
  if (artifacts) artifacts->traces.resize(p.num_queries);

  // Album-level cache for max-product without per-query overrides: the
  // whole-clique labeling is decoded once and shared by its queries.
  std::map<std::string, std::vector<int>> album_labeling;
  if (cfg.mode == RunMode::JointMaxProduct && !is_s2) {
    std::vector<const std::string*> albums;
    for (auto it = p.graph.album_nodes.begin(); it != p.graph.album_nodes.end(); ++it)
      albums.push_back(&it->first);
    std::vector<std::vector<int>> labelings(albums.size());
    parallel_for(albums.size(), [&](std::size_t a) {
      const std::vector<int>& members = p.graph.album_nodes.at(*albums[a]);
      CliqueProblem problem;
      std::unordered_map<int, int> local;
      for (int m : members) {
        local[m] = static_cast<int>(problem.unaries.size());
        problem.unaries.push_back(p.node_unaries[m]);
      }
      for (const GraphEdge& e : p.graph.edges) {
        auto i = local.find(e.i);
        auto j = local.find(e.j);
        if (i != local.end() && j != local.end())
          problem.edges.push_back({i->second, j->second, e.weight});
      }
      labelings[a] = max_product(problem, cfg.inference).labels;
    });
    for (std::size_t a = 0; a < albums.size(); ++a)
      album_labeling[*albums[a]] = std::move(labelings[a]);
  }

  parallel_for(static_cast<std::size_t>(p.num_queries), [&](std::size_t q) {
    const Instance& base = p.node_instances[q];
    QueryInference trace;
    trace.album = base.album_id;

    if (is_s2 && !p.tags.contains(base.instance_id)) {
      // Re-plan for this query: obfuscate its head, rebuild its unary and its
      // incident edges; the rest of the album graph is reused as-is.
      Instance query = p.corpus.instances[p.node_corpus_index[q]];
      query.head_features = apply_obfuscation(
          query.head_features, obf_type, p.blur, obf_seed(cfg.seeds.corpus, query.instance_id));
      query.obfuscation = obf_type;
      const std::vector<double> q_unary =
          predict_unary(unary_for_state(p, true), query).probs;

      if (cfg.mode == RunMode::UnaryOnly) {
        int best = 0;
        for (int y = 1; y < num_classes; ++y)
          if (q_unary[y] > q_unary[best]) best = y;
        trace.label = best;
      } else {
        const std::vector<int>& members = p.graph.album_nodes.at(base.album_id);
        CliqueProblem problem;
        std::unordered_map<int, int> local;
        for (int m : members) {
          local[m] = static_cast<int>(problem.unaries.size());
          problem.unaries.push_back(static_cast<int>(q) == m ? q_unary : p.node_unaries[m]);
        }
        const int local_q = local.at(static_cast<int>(q));
        for (const GraphEdge& e : p.graph.edges) {
          auto i = local.find(e.i);
          auto j = local.find(e.j);
          if (i == local.end() || j == local.end()) continue;
          if (e.i == static_cast<int>(q) || e.j == static_cast<int>(q)) continue;
          problem.edges.push_back({i->second, j->second, e.weight});
        }
        const bool apply_beta = cfg.mode != RunMode::JointOracle && cfg.pruning.beta > 0.0;
        for (int m : members) {
          if (m == static_cast<int>(q)) continue;
          const double w = scorer(query, p.node_instances[m]);
          if (apply_beta && w < cfg.pruning.beta) continue;
          problem.edges.push_back({std::min(local_q, local.at(m)),
                                   std::max(local_q, local.at(m)), w});
        }
        trace.clique_size = problem.num_nodes();
        trace.clique_edges = static_cast<int>(problem.edges.size());
        if (solver_mode == InferenceMode::JointTree) {
          trace.label = tree_approx_query(problem, local_q, cfg.inference);
        } else {
          const Labeling labeling = max_product(problem, cfg.inference);
          trace.label = labeling.labels[local_q];
          trace.iterations = labeling.iterations;
          trace.converged = labeling.converged;
          trace.objective_value = labeling.objective_value;
        }
      }
    } else if (cfg.mode == RunMode::UnaryOnly) {
      trace = infer_query(p.graph, p.node_unaries, static_cast<int>(q), cfg.inference,
                          InferenceMode::UnaryOnly);
    } else if (cfg.mode == RunMode::JointMaxProduct) {
      const auto it = album_labeling.find(base.album_id);
      if (it == album_labeling.end())
        throw RuntimeError("internal: album labeling missing for " + base.album_id);
      const std::vector<int>& members = p.graph.album_nodes.at(base.album_id);
      const auto pos = std::find(members.begin(), members.end(), static_cast<int>(q));
      trace.label = it->second[pos - members.begin()];
      trace.clique_size = static_cast<int>(members.size());
    } else {
      trace = infer_query(p.graph, p.node_unaries, static_cast<int>(q), cfg.inference,
                          InferenceMode::JointTree);
    }

    QueryRecord& record = result.records[q];
    record.query_id = base.instance_id;
    record.true_identity = p.corpus.instances[p.node_corpus_index[q]].identity;
    record.predicted = p.labels.at(trace.label);
    record.album = base.album_id;
    record.correct = record.predicted == record.true_identity;
    if (artifacts) artifacts->traces[q] = trace;
  });

  int correct = 0;
  for (const QueryRecord& r : result.records) correct += r.correct ? 1 : 0;
  result.accuracy =
      result.records.empty() ? 0.0 : static_cast<double>(correct) / result.records.size();

  std::vector<std::string> tag_labels;
  for (const Instance& inst : p.corpus.instances) {
    if (p.tags.contains(inst.instance_id)) tag_labels.push_back(inst.identity);
  }
  std::vector<std::string> query_labels;
  for (const QueryRecord& r : result.records) query_labels.push_back(r.true_identity);
  result.naive_baseline = naive_baseline_accuracy(tag_labels, query_labels);

  result.seconds.inference = inference_timer.elapsed();
  result.seconds.total = total_timer.elapsed();
  if (artifacts) artifacts->graph = p.graph;
  return result;
}

Metrics evaluate(const ExperimentResult& result) {
  if (result.records.empty()) throw DataError("evaluate: no per-query records");
  Metrics metrics;
  metrics.accuracy = result.accuracy;
  metrics.chance_multiple =
      result.naive_baseline > 0 ? result.accuracy / result.naive_baseline : 0.0;
  std::map<std::string, std::pair<int, int>> per_album;  // correct, total
  for (const QueryRecord& r : result.records) {
    auto& [c, t] = per_album[r.album];
    c += r.correct ? 1 : 0;
    t += 1;
  }
  for (const auto& [album, ct] : per_album) {
    metrics.per_album_accuracy[album] = static_cast<double>(ct.first) / ct.second;
  }
  return metrics;
}

}  // namespace albumcrf
