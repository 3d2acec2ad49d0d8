#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "albumcrf/corpus.hpp"
#include "albumcrf/graph.hpp"
#include "albumcrf/inference.hpp"
#include "albumcrf/pairwise.hpp"
#include "albumcrf/unary.hpp"

namespace albumcrf {

enum class RunMode { UnaryOnly, JointTree, JointMaxProduct, JointOracle };
const char* to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);

enum class MatcherKind { Trained, UnaryBaseline };
const char* to_string(MatcherKind k);
MatcherKind matcher_kind_from_string(const std::string& s);

struct ExperimentSeeds {
  std::uint64_t corpus = 42;
  std::uint64_t splits = 1;
  std::uint64_t tags = 2;
  std::uint64_t training = 3;
};

struct ExperimentConfig {
  Scenario scenario;
  ObfuscationType obfuscation = ObfuscationType::Visible;
  double blur_strength = 0.6;
  double sigma_blur = 0.25;
  DomainMode domain = DomainMode::WithinEvents;
  PruningConfig pruning;
  InferenceParams inference;
  RunMode mode = RunMode::JointTree;
  MatcherKind matcher = MatcherKind::Trained;
  ExperimentSeeds seeds;
  std::optional<GeneratorConfig> generator;  // exactly one of generator / corpus_path
  std::string corpus_path;
  UnaryTrainConfig unary_train;
  MatcherTrainConfig matcher_train;
  bool pretrain_matcher = true;

  // S0/S1 force obfuscation type Visible.
  ExperimentConfig normalized() const;
  void validate() const;
};

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

nlohmann::ordered_json generator_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_from_json(const nlohmann::json& j);

struct QueryRecord {
  std::string query_id;
  std::string true_identity;
  std::string predicted;
  std::string album;
  bool correct = false;
};

struct StageSeconds {
  double corpus = 0, unary = 0, matcher = 0, graph = 0, inference = 0, total = 0;
};

struct ExperimentResult {
  ExperimentConfig config;  // normalized copy
  nlohmann::ordered_json config_echo;
  double effective_tau = 0;
  std::vector<QueryRecord> records;
  double accuracy = 0;
  double naive_baseline = 0;
  std::optional<double> matcher_eer_accuracy;
  GraphStats graph;
  StageSeconds seconds;
};

// Optional extras for dump/trace flags.
struct RunArtifacts {
  RecognitionGraph graph;
  std::vector<QueryInference> traces;  // aligned with result.records
};

// Full pipeline: corpus -> splits -> tags -> obfuscation plan ->
// regime-adapted unary -> per-regime matcher -> album graph with tagged
// evidence nodes -> per-query inference -> aggregation.
ExperimentResult run_scenario(const ExperimentConfig& config,
                              RunArtifacts* artifacts = nullptr);

struct Metrics {
  double accuracy = 0;
  double chance_multiple = 0;
  std::map<std::string, double> per_album_accuracy;
};

Metrics evaluate(const ExperimentResult& result);

nlohmann::ordered_json result_to_json(const ExperimentResult& result,
                                      bool include_timing = true);

enum class ReportFormat { Json, Csv };

// report.csv / report.json plus plot_data.json under out_dir.
void emit_report(const std::vector<ExperimentResult>& results, const std::string& out_dir,
                 ReportFormat format);

}  // namespace albumcrf
