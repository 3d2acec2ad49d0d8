#include "albumcrf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "albumcrf/error.hpp"
#include "albumcrf/rng.hpp"
#include "albumcrf/util.hpp"

namespace albumcrf {

namespace {

// Stream salts for deriving independent RNG streams from one corpus seed.
constexpr std::uint64_t kIdentityHeadStream = 0x1d;
constexpr std::uint64_t kIdentityContextStream = 0x2c;
constexpr std::uint64_t kEventStream = 0x3e;
constexpr std::uint64_t kNoiseStream = 0x4a;
constexpr std::uint64_t kAssignStream = 0x5b;

std::vector<double> unit_vector(int dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      v[i] = rng.normal();
      norm2 += v[i] * v[i];
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

std::string zero_pad(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

}  // namespace

const char* to_string(ObfuscationType t) {
  switch (t) {
    case ObfuscationType::Visible: return "visible";
    case ObfuscationType::Blur: return "blur";
    case ObfuscationType::Black: return "black";
    case ObfuscationType::White: return "white";
  }
  return "visible";
}

ObfuscationType obfuscation_type_from_string(const std::string& s) {
  if (s == "visible") return ObfuscationType::Visible;
  if (s == "blur") return ObfuscationType::Blur;
  if (s == "black") return ObfuscationType::Black;
  if (s == "white") return ObfuscationType::White;
  throw ConfigError("unknown obfuscation type: " + s);
}

const char* to_string(DomainMode m) {
  return m == DomainMode::WithinEvents ? "within" : "across";
}

DomainMode domain_mode_from_string(const std::string& s) {
  if (s == "within") return DomainMode::WithinEvents;
  if (s == "across") return DomainMode::AcrossEvents;
  throw ConfigError("unknown domain mode: " + s);
}

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::S0: return "S0";
    case ScenarioKind::S1: return "S1";
    case ScenarioKind::S2: return "S2";
    case ScenarioKind::S3: return "S3";
    case ScenarioKind::S3Prime: return "S3p";
    case ScenarioKind::S3DoublePrime: return "S3pp";
  }
  return "S1";
}

ScenarioKind scenario_from_string(const std::string& s) {
  if (s == "S0") return ScenarioKind::S0;
  if (s == "S1") return ScenarioKind::S1;
  if (s == "S2") return ScenarioKind::S2;
  if (s == "S3") return ScenarioKind::S3;
  if (s == "S3p" || s == "S3'") return ScenarioKind::S3Prime;
  if (s == "S3pp" || s == "S3''") return ScenarioKind::S3DoublePrime;
  throw ConfigError("unknown scenario: " + s);
}

void GeneratorConfig::validate() const {
  if (n_identities < 1) throw ConfigError("generator: n_identities must be >= 1");
  if (instances_per_identity < 2)
    throw ConfigError("generator: instances_per_identity must be >= 2 (splits need two halves)");
  if (events_per_identity < 1) throw ConfigError("generator: events_per_identity must be >= 1");
  if (albums_per_event < 1) throw ConfigError("generator: albums_per_event must be >= 1");
  if (head_dim < 1) throw ConfigError("generator: head_dim must be >= 1");
  if (context_dim < 1) throw ConfigError("generator: context_dim must be >= 1");
  if (identity_signal_weight < 0) throw ConfigError("generator: identity_signal_weight must be >= 0");
  if (event_signal_weight < 0) throw ConfigError("generator: event_signal_weight must be >= 0");
  if (!(noise_sigma > 0)) throw ConfigError("generator: noise_sigma must be > 0");
}

void Corpus::finalize() {
  identities_.clear();
  by_album_.clear();
  by_identity_.clear();
  by_event_.clear();
  id_to_index_.clear();

  std::map<std::string, std::string> photo_album;
  std::map<std::string, std::string> album_event;
  std::set<std::string> identity_set;

  for (int i = 0; i < static_cast<int>(instances.size()); ++i) {
    const Instance& inst = instances[i];
    if (!id_to_index_.emplace(inst.instance_id, i).second)
      throw DataError("duplicate instance_id: " + inst.instance_id);
    if (static_cast<int>(inst.head_features.size()) != head_dim ||
        static_cast<int>(inst.context_features.size()) != context_dim)
      throw DataError("instance " + inst.instance_id + ": feature dimension mismatch");

    auto pa = photo_album.emplace(inst.photo_id, inst.album_id);
    if (!pa.second && pa.first->second != inst.album_id)
      throw DataError("photo " + inst.photo_id + " maps to multiple albums");
    auto ae = album_event.emplace(inst.album_id, inst.event_id);
    if (!ae.second && ae.first->second != inst.event_id)
      throw DataError("album " + inst.album_id + " maps to multiple events");

    by_album_[inst.album_id].push_back(i);
    by_identity_[inst.identity].push_back(i);
    by_event_[inst.event_id].push_back(i);
    identity_set.insert(inst.identity);
  }
  identities_.assign(identity_set.begin(), identity_set.end());
  if (head_dim < 1 || context_dim < 1)
    throw DataError("corpus: feature dimensions must be >= 1");
}

int Corpus::index_of(const std::string& instance_id) const {
  auto it = id_to_index_.find(instance_id);
  return it == id_to_index_.end() ? -1 : it->second;
}

const Instance& Corpus::at(const std::string& instance_id) const {
  const int idx = index_of(instance_id);
  if (idx < 0) throw DataError("unknown instance_id: " + instance_id);
  return instances[idx];
}

std::vector<double> Corpus::head_feature_mean() const {
  std::vector<double> mean(head_dim, 0.0);
  if (instances.empty()) return mean;
  for (const Instance& inst : instances) {
    for (int d = 0; d < head_dim; ++d) mean[d] += inst.head_features[d];
  }
  const double inv = 1.0 / static_cast<double>(instances.size());
  for (double& m : mean) m *= inv;
  return mean;
}

Corpus generate_corpus(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();

  // Pool of events shared by identities; on average ~5 identities attend the
  // same event, which gives albums a social mix of people.
  const double kMeanIdentitiesPerEvent = 5.0;
  const int total_events = std::max(
      config.events_per_identity,
      static_cast<int>(std::ceil(config.n_identities * config.events_per_identity /
                                 kMeanIdentitiesPerEvent)));

  Rng assign_rng(mix_seed(seed, kAssignStream));
  Rng noise_rng(mix_seed(seed, kNoiseStream));

  // Latent unit vectors: one per identity for heads, one per identity and one
  // per event for context.
  std::vector<std::vector<double>> id_head(config.n_identities);
  std::vector<std::vector<double>> id_ctx(config.n_identities);
  for (int k = 0; k < config.n_identities; ++k) {
    Rng rh(mix_seed(mix_seed(seed, kIdentityHeadStream), k));
    Rng rc(mix_seed(mix_seed(seed, kIdentityContextStream), k));
    id_head[k] = unit_vector(config.head_dim, rh);
    id_ctx[k] = unit_vector(config.context_dim, rc);
  }
  std::vector<std::vector<double>> ev_ctx(total_events);
  for (int e = 0; e < total_events; ++e) {
    Rng re(mix_seed(mix_seed(seed, kEventStream), e));
    ev_ctx[e] = unit_vector(config.context_dim, re);
  }

  // Each identity attends events_per_identity distinct events; instances are
  // spread round-robin over them so every attended event is populated.
  std::vector<std::vector<std::size_t>> events_of(config.n_identities);
  for (int k = 0; k < config.n_identities; ++k) {
    events_of[k] = assign_rng.sample_without_replacement(
        total_events, static_cast<std::size_t>(config.events_per_identity));
  }

  Corpus corpus;
  corpus.head_dim = config.head_dim;
  corpus.context_dim = config.context_dim;
  corpus.provenance.kind = Provenance::Kind::Synthetic;
  corpus.provenance.seed = seed;
  corpus.provenance.generator = config;
  corpus.instances.reserve(static_cast<std::size_t>(config.n_identities) *
                           config.instances_per_identity);

  int instance_counter = 0;
  for (int k = 0; k < config.n_identities; ++k) {
    for (int i = 0; i < config.instances_per_identity; ++i) {
      const std::size_t event_idx = events_of[k][i % config.events_per_identity];
      const int album_slot = static_cast<int>(assign_rng.uniform_index(config.albums_per_event));

      Instance inst;
      inst.identity = "id" + zero_pad(k, 4);
      inst.event_id = "ev" + zero_pad(static_cast<int>(event_idx), 4);
      inst.album_id = inst.event_id + "_al" + zero_pad(album_slot, 2);
      inst.instance_id = "i" + zero_pad(instance_counter, 6);
      inst.photo_id = inst.album_id + "_ph" + zero_pad(instance_counter, 6);
      ++instance_counter;

      inst.head_features.resize(config.head_dim);
      for (int d = 0; d < config.head_dim; ++d) {
        inst.head_features[d] = config.identity_signal_weight * id_head[k][d] +
                                noise_rng.normal(0.0, config.noise_sigma);
      }
      inst.context_features.resize(config.context_dim);
      for (int d = 0; d < config.context_dim; ++d) {
        inst.context_features[d] = config.identity_signal_weight * id_ctx[k][d] +
                                   config.event_signal_weight * ev_ctx[event_idx][d] +
                                   noise_rng.normal(0.0, config.noise_sigma);
      }
      corpus.instances.push_back(std::move(inst));
    }
  }
  corpus.finalize();
  return corpus;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const Instance& inst : corpus.instances) {
    nlohmann::ordered_json j;
    j["instance_id"] = inst.instance_id;
    j["photo_id"] = inst.photo_id;
    j["album_id"] = inst.album_id;
    j["event_id"] = inst.event_id;
    j["identity"] = inst.identity;
    j["head_features"] = inst.head_features;
    j["context_features"] = inst.context_features;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  write_text_file(path, corpus_to_jsonl(corpus));
}

Corpus load_corpus(const std::string& path) {
  const std::string text = read_text_file(path);
  Corpus corpus;
  corpus.provenance.kind = Provenance::Kind::Ingested;
  corpus.provenance.path = path;

  static const char* kFields[] = {"instance_id", "photo_id", "album_id",
                                  "event_id",    "identity", "head_features",
                                  "context_features"};

  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  std::unordered_set<std::string> seen_ids;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    for (const char* field : kFields) {
      if (!j.contains(field))
        throw DataError("line " + std::to_string(line_no) + ": missing field '" +
                        field + "'");
    }
    Instance inst;
    try {
      inst.instance_id = j["instance_id"].get<std::string>();
      inst.photo_id = j["photo_id"].get<std::string>();
      inst.album_id = j["album_id"].get<std::string>();
      inst.event_id = j["event_id"].get<std::string>();
      inst.identity = j["identity"].get<std::string>();
      inst.head_features = j["head_features"].get<std::vector<double>>();
      inst.context_features = j["context_features"].get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (corpus.instances.empty()) {
      corpus.head_dim = static_cast<int>(inst.head_features.size());
      corpus.context_dim = static_cast<int>(inst.context_features.size());
    } else if (static_cast<int>(inst.head_features.size()) != corpus.head_dim ||
               static_cast<int>(inst.context_features.size()) != corpus.context_dim) {
      throw DataError("line " + std::to_string(line_no) + ": feature dimension mismatch");
    }
    if (!seen_ids.insert(inst.instance_id).second)
      throw DataError("line " + std::to_string(line_no) + ": duplicate instance_id '" +
                      inst.instance_id + "'");
    corpus.instances.push_back(std::move(inst));
  }
  if (corpus.instances.empty()) throw DataError(path + ": no instances");
  corpus.finalize();
  return corpus;
}

int SplitAssignment::side(const std::string& instance_id) const {
  auto it = side_of.find(instance_id);
  if (it == side_of.end()) throw DataError("instance not in split assignment: " + instance_id);
  return it->second;
}

std::vector<int> SplitAssignment::split_indices(const Corpus& corpus, int side) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(corpus.instances.size()); ++i) {
    if (this->side(corpus.instances[i].instance_id) == side) out.push_back(i);
  }
  return out;
}

SplitAssignment make_splits(const Corpus& corpus, DomainMode mode, std::uint64_t seed) {
  SplitAssignment splits;
  splits.domain_mode = mode;

  std::vector<std::string> too_few;
  std::vector<std::string> single_event;
  for (const auto& [identity, indices] : corpus.by_identity()) {
    if (indices.size() < 2) too_few.push_back(identity);
  }
  if (!too_few.empty()) {
    std::string msg = "identities with fewer than 2 instances:";
    for (const auto& id : too_few) msg += " " + id;
    throw DataError(msg);
  }

  Rng rng(mix_seed(seed, 0x51));

  if (mode == DomainMode::WithinEvents) {
    for (const auto& [identity, indices] : corpus.by_identity()) {
      std::vector<int> order = indices;
      rng.shuffle(order);
      const std::size_t split0_count = (order.size() + 1) / 2;  // odd counts to split0
      for (std::size_t i = 0; i < order.size(); ++i) {
        splits.side_of[corpus.instances[order[i]].instance_id] =
            i < split0_count ? 0 : 1;
      }
    }
    return splits;
  }

  // AcrossEvents: whole events go to one side. Events are shuffled, then
  // greedily placed on the lighter side so the halves stay close; exact
  // +/-1 balance holds when an identity's events are near-equal in size.
  for (const auto& [identity, indices] : corpus.by_identity()) {
    std::map<std::string, std::vector<int>> events;
    for (int idx : indices) events[corpus.instances[idx].event_id].push_back(idx);
    if (events.size() < 2) {
      single_event.push_back(identity);
      continue;
    }
    std::vector<std::pair<std::string, std::vector<int>>> order(events.begin(), events.end());
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.second.size() > b.second.size();
    });
    std::size_t count0 = 0;
    std::size_t count1 = 0;
    for (const auto& [event_id, ev_indices] : order) {
      const int side = (count0 <= count1) ? 0 : 1;
      (side == 0 ? count0 : count1) += ev_indices.size();
      for (int idx : ev_indices) {
        splits.side_of[corpus.instances[idx].instance_id] = side;
      }
    }
  }
  if (!single_event.empty()) {
    std::string msg = "across-events split needs >= 2 events per identity; offending:";
    for (const auto& id : single_event) msg += " " + id;
    throw DataError(msg);
  }
  return splits;
}

TagSet sample_tags(const Corpus& corpus, const SplitAssignment& splits, double tau,
                   std::uint64_t seed) {
  if (!(tau > 0)) throw ConfigError("tau must be > 0");

  // Per-identity split0 instance lists, in corpus order.
  std::map<std::string, std::vector<int>> split0;
  std::size_t total0 = 0;
  for (int i = 0; i < static_cast<int>(corpus.instances.size()); ++i) {
    if (splits.side(corpus.instances[i].instance_id) == 0) {
      split0[corpus.instances[i].identity].push_back(i);
      ++total0;
    }
  }
  for (const auto& identity : corpus.identities()) {
    if (split0.find(identity) == split0.end())
      throw DataError("identity missing from split0: " + identity);
  }
  const double mean_size = static_cast<double>(total0) / split0.size();
  if (tau > mean_size + 1e-12)
    throw ConfigError("tau exceeds mean split0 size (" + std::to_string(mean_size) + ")");

  TagSet tags;
  tags.tau = tau;
  Rng rng(mix_seed(seed, 0x7a));
  for (const auto& [identity, indices] : split0) {
    const double target = tau * static_cast<double>(indices.size()) / mean_size;
    const double floor_part = std::floor(target);
    std::size_t count = static_cast<std::size_t>(floor_part);
    if (rng.bernoulli(target - floor_part)) ++count;
    count = std::max<std::size_t>(1, std::min(count, indices.size()));
    for (std::size_t pick : rng.sample_without_replacement(indices.size(), count)) {
      tags.tagged.insert(corpus.instances[indices[pick]].instance_id);
    }
  }
  return tags;
}

std::vector<double> apply_obfuscation(const std::vector<double>& head_features,
                                      const Obfuscation& obf, const BlurParams& params,
                                      std::uint64_t seed) {
  switch (obf.type) {
    case ObfuscationType::Visible:
      return head_features;
    case ObfuscationType::Black:
      return std::vector<double>(head_features.size(), -1.0);
    case ObfuscationType::White:
      return std::vector<double>(head_features.size(), 1.0);
    case ObfuscationType::Blur: {
      const double s = obf.strength;
      if (s < 0.0 || s > 1.0) throw ConfigError("blur strength must be in [0, 1]");
      if (params.corpus_head_mean.size() != head_features.size())
        throw DataError("blur: corpus mean dimension mismatch");
      if (s == 0.0) return head_features;
      Rng rng(mix_seed(seed, 0xb1));
      std::vector<double> out(head_features.size());
      const double noise_sigma = s * params.sigma_blur;
      for (std::size_t d = 0; d < head_features.size(); ++d) {
        out[d] = (1.0 - s) * head_features[d] + s * params.corpus_head_mean[d] +
                 rng.normal(0.0, noise_sigma);
      }
      return out;
    }
  }
  return head_features;
}

bool ObfuscationPlan::obfuscated(const std::string& instance_id) const {
  auto it = state.find(instance_id);
  return it != state.end() && it->second.type != ObfuscationType::Visible;
}

const Obfuscation& ObfuscationPlan::of(const std::string& instance_id) const {
  static const Obfuscation kVisible{ObfuscationType::Visible, 0.0};
  auto it = state.find(instance_id);
  return it == state.end() ? kVisible : it->second;
}

ObfuscationPlan plan_obfuscation(const Scenario& scenario, const Corpus& corpus,
                                 const SplitAssignment& splits, const TagSet& tags,
                                 const Obfuscation& type,
                                 const std::optional<std::string>& query) {
  ObfuscationPlan plan;
  plan.scenario = scenario.kind;
  const Obfuscation visible{ObfuscationType::Visible, 0.0};

  const bool needs_type = scenario.kind == ScenarioKind::S2 ||
                          scenario.kind == ScenarioKind::S3 ||
                          scenario.kind == ScenarioKind::S3Prime ||
                          scenario.kind == ScenarioKind::S3DoublePrime;
  if (needs_type && type.type == ObfuscationType::Visible)
    throw ConfigError(std::string(to_string(scenario.kind)) +
                      " requires a non-visible obfuscation type");

  switch (scenario.kind) {
    case ScenarioKind::S0:
    case ScenarioKind::S1:
      for (const Instance& inst : corpus.instances) plan.state[inst.instance_id] = visible;
      break;
    case ScenarioKind::S2: {
      if (!query) throw ConfigError("S2 requires a query instance");
      const int q = corpus.index_of(*query);
      if (q < 0) throw DataError("S2 query not in corpus: " + *query);
      if (splits.side(*query) != 1)
        throw ConfigError("S2 query must be in split1: " + *query);
      if (tags.contains(*query))
        throw ConfigError("S2 query must be non-tagged: " + *query);
      for (const Instance& inst : corpus.instances)
        plan.state[inst.instance_id] = inst.instance_id == *query ? type : visible;
      break;
    }
    case ScenarioKind::S3:
      for (const Instance& inst : corpus.instances) plan.state[inst.instance_id] = type;
      break;
    case ScenarioKind::S3Prime:
      for (const Instance& inst : corpus.instances)
        plan.state[inst.instance_id] = splits.side(inst.instance_id) == 0 ? type : visible;
      break;
    case ScenarioKind::S3DoublePrime:
      for (const Instance& inst : corpus.instances)
        plan.state[inst.instance_id] = splits.side(inst.instance_id) == 1 ? type : visible;
      break;
  }
  return plan;
}

}  // namespace albumcrf
