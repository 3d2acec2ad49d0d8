#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace albumcrf {

enum class ObfuscationType { Visible, Blur, Black, White };

const char* to_string(ObfuscationType t);
ObfuscationType obfuscation_type_from_string(const std::string& s);

// Transform applied to an instance's head features. strength is only
// meaningful for Blur.
struct Obfuscation {
  ObfuscationType type = ObfuscationType::Visible;
  double strength = 0.6;
};

// One annotated head: where it was seen, who it is, and its feature vectors.
// Obfuscation never touches context_features.
struct Instance {
  std::string instance_id;
  std::string photo_id;
  std::string album_id;
  std::string event_id;
  std::string identity;
  std::vector<double> head_features;
  std::vector<double> context_features;
  Obfuscation obfuscation;  // current state of head_features
};

// Settings for the synthetic corpus generator. Feature vectors are built from
// per-identity and per-event latent unit vectors plus Gaussian noise, so that
// same-identity instances cluster and same-event instances share context.
struct GeneratorConfig {
  int n_identities = 100;
  int instances_per_identity = 20;
  int events_per_identity = 4;
  int albums_per_event = 2;
  int head_dim = 32;
  int context_dim = 32;
  double identity_signal_weight = 2.0;
  double event_signal_weight = 2.5;
  double noise_sigma = 0.55;

  void validate() const;  // throws ConfigError
};

struct Provenance {
  enum class Kind { Synthetic, Ingested };
  Kind kind = Kind::Synthetic;
  std::uint64_t seed = 0;
  GeneratorConfig generator;  // Synthetic only
  std::string path;           // Ingested only
};

class Corpus {
 public:
  std::vector<Instance> instances;
  int head_dim = 0;
  int context_dim = 0;
  Provenance provenance;

  // Builds lookup indices and checks structural invariants (unique ids,
  // photo->album and album->event consistency, uniform dimensions).
  void finalize();

  const std::vector<std::string>& identities() const { return identities_; }
  const std::map<std::string, std::vector<int>>& albums() const { return by_album_; }
  const std::map<std::string, std::vector<int>>& by_identity() const { return by_identity_; }
  const std::map<std::string, std::vector<int>>& by_event() const { return by_event_; }
  int index_of(const std::string& instance_id) const;  // -1 if unknown
  const Instance& at(const std::string& instance_id) const;

  std::vector<double> head_feature_mean() const;

 private:
  std::vector<std::string> identities_;
  std::map<std::string, std::vector<int>> by_album_;
  std::map<std::string, std::vector<int>> by_identity_;
  std::map<std::string, std::vector<int>> by_event_;
  std::unordered_map<std::string, int> id_to_index_;
};

Corpus generate_corpus(const GeneratorConfig& config, std::uint64_t seed);

// JSON Lines, one instance per line; ".gz" paths are gzip-compressed.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);
std::string corpus_to_jsonl(const Corpus& corpus);

enum class DomainMode { WithinEvents, AcrossEvents };
const char* to_string(DomainMode m);
DomainMode domain_mode_from_string(const std::string& s);

struct SplitAssignment {
  std::unordered_map<std::string, int> side_of;  // instance_id -> 0 | 1
  DomainMode domain_mode = DomainMode::WithinEvents;

  int side(const std::string& instance_id) const;
  // Instance indices of one side, in corpus order.
  std::vector<int> split_indices(const Corpus& corpus, int side) const;
};

// Per-identity halving of the corpus (odd counts round into split0).
// AcrossEvents assigns whole events to one side, keeping the per-identity
// event sets of the two splits disjoint.
SplitAssignment make_splits(const Corpus& corpus, DomainMode mode, std::uint64_t seed);

struct TagSet {
  std::unordered_set<std::string> tagged;  // subset of split0
  double tau = 0.0;

  bool contains(const std::string& instance_id) const {
    return tagged.count(instance_id) > 0;
  }
};

// Samples tagged instances from split0 at an average rate of tau per
// identity (stochastically rounded, at least one per identity).
TagSet sample_tags(const Corpus& corpus, const SplitAssignment& splits, double tau,
                   std::uint64_t seed);

struct BlurParams {
  std::vector<double> corpus_head_mean;
  double sigma_blur = 0.25;
};

// Black -> all -1, White -> all +1, Blur(s) -> shrink toward the corpus mean
// plus noise scaled by s, Visible -> identity. Deterministic given seed.
std::vector<double> apply_obfuscation(const std::vector<double>& head_features,
                                      const Obfuscation& obf, const BlurParams& params,
                                      std::uint64_t seed);

enum class ScenarioKind { S0, S1, S2, S3, S3Prime, S3DoublePrime };
const char* to_string(ScenarioKind k);
ScenarioKind scenario_from_string(const std::string& s);

struct Scenario {
  ScenarioKind kind = ScenarioKind::S1;
  double tau = 10.0;  // S1 tag rate; other scenarios tag all of split0
};

// Which instances a scenario obfuscates:
//   S0, S1          -> none
//   S2              -> exactly the (non-tagged) query
//   S3              -> everything
//   S3'             -> all of split0, split1 visible
//   S3''            -> split0 visible, all of split1
struct ObfuscationPlan {
  ScenarioKind scenario = ScenarioKind::S0;
  std::unordered_map<std::string, Obfuscation> state;  // one entry per instance

  bool obfuscated(const std::string& instance_id) const;
  const Obfuscation& of(const std::string& instance_id) const;
};

ObfuscationPlan plan_obfuscation(const Scenario& scenario, const Corpus& corpus,
                                 const SplitAssignment& splits, const TagSet& tags,
                                 const Obfuscation& type,
                                 const std::optional<std::string>& query = std::nullopt);

}  // namespace albumcrf
