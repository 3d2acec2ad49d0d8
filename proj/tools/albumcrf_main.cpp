// Command-line front end: corpus generation, splitting, model training,
// scenario runs, parameter sweeps, and report generation.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "albumcrf/error.hpp"
#include "albumcrf/harness.hpp"
#include "albumcrf/rng.hpp"
#include "albumcrf/util.hpp"

namespace fs = std::filesystem;
using namespace albumcrf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scenario;
  std::optional<double> tau;
  std::optional<std::string> obfuscation;
  std::optional<std::string> domain;
  std::optional<std::string> mode;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::string out = "out";
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  cmd->add_option("--seed", flags.seed, "base seed (derives corpus/splits/tags/training)");
  cmd->add_option("--scenario", flags.scenario, "S0|S1|S2|S3|S3p|S3pp");
  cmd->add_option("--tau", flags.tau, "tag rate for S1");
  cmd->add_option("--obfuscation", flags.obfuscation, "visible|blur|black|white");
  cmd->add_option("--domain", flags.domain, "within|across");
  cmd->add_option("--mode", flags.mode,
                  "unary_only|joint_tree|joint_maxproduct|joint_oracle");
  cmd->add_option("--alpha", flags.alpha, "unary/pairwise balance");
  cmd->add_option("--beta", flags.beta, "negative edge pruning threshold");
  cmd->add_option("--out", flags.out, "output directory");
}

ExperimentConfig config_from_flags(const CommonFlags& flags) {
  ExperimentConfig cfg;
  if (!flags.config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(flags.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(flags.config_path + ": " + e.what());
    }
    cfg = config_from_json(j);
  } else {
    cfg.generator = GeneratorConfig{};
  }
  if (flags.seed) {
    cfg.seeds.corpus = *flags.seed;
    cfg.seeds.splits = mix_seed(*flags.seed, 1);
    cfg.seeds.tags = mix_seed(*flags.seed, 2);
    cfg.seeds.training = mix_seed(*flags.seed, 3);
  }
  if (flags.scenario) cfg.scenario.kind = scenario_from_string(*flags.scenario);
  if (flags.tau) cfg.scenario.tau = *flags.tau;
  if (flags.obfuscation) cfg.obfuscation = obfuscation_type_from_string(*flags.obfuscation);
  if (flags.domain) cfg.domain = domain_mode_from_string(*flags.domain);
  if (flags.mode) cfg.mode = run_mode_from_string(*flags.mode);
  if (flags.alpha) cfg.inference.alpha = *flags.alpha;
  if (flags.beta) cfg.pruning.beta = *flags.beta;
  return cfg;
}

void write_result_files(const ExperimentResult& result, const RunArtifacts& artifacts,
                        const std::string& out_dir, bool trace) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_text_file((dir / "result.json").string(), result_to_json(result).dump(2) + "\n");
  dump_graph(artifacts.graph, (dir / "graph_edges.csv").string(),
             (dir / "graph_stats.json").string());
  if (trace) {
    std::string lines;
    for (std::size_t i = 0; i < artifacts.traces.size(); ++i) {
      const QueryInference& t = artifacts.traces[i];
      nlohmann::ordered_json j;
      j["clique"] = t.album;
      j["mode"] = to_string(result.config.mode);
      j["iterations"] = t.iterations;
      j["converged"] = t.converged;
      j["objective_value"] = t.objective_value;
      j["predicted"] = result.records[i].predicted;
      lines += j.dump() + "\n";
    }
    write_text_file((dir / "trace.jsonl").string(), lines);
  }
  std::cout << "scenario " << to_string(result.config.scenario.kind) << " "
            << to_string(result.config.domain) << " " << to_string(result.config.mode)
            << ": accuracy " << format_double(result.accuracy, 4) << " (naive "
            << format_double(result.naive_baseline, 4) << ", queries "
            << result.records.size() << ")\n";
}

int cmd_generate(const CommonFlags& flags, const std::string& corpus_out) {
  GeneratorConfig gen;
  std::uint64_t seed = flags.seed.value_or(42);
  if (!flags.config_path.empty()) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(flags.config_path));
    if (j.contains("generator")) {
      gen = generator_from_json(j["generator"]);
    } else if (j.contains("corpus") && j["corpus"].contains("generator")) {
      gen = generator_from_json(j["corpus"]["generator"]);
    }
    if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
    if (flags.seed) seed = *flags.seed;
  }
  const Corpus corpus = generate_corpus(gen, seed);
  save_corpus(corpus, corpus_out);
  std::cout << "wrote " << corpus.instances.size() << " instances ("
            << corpus.identities().size() << " identities) to " << corpus_out << "\n";
  return kExitOk;
}

int cmd_split(const std::string& corpus_path, const std::string& domain,
              std::uint64_t seed, const std::string& out_path) {
  const Corpus corpus = load_corpus(corpus_path);
  const SplitAssignment splits =
      make_splits(corpus, domain_mode_from_string(domain), seed);
  nlohmann::ordered_json j;
  j["domain_mode"] = domain;
  nlohmann::ordered_json assignment;
  for (const Instance& inst : corpus.instances) {
    assignment[inst.instance_id] = splits.side(inst.instance_id);
  }
  j["assignment"] = assignment;
  write_text_file(out_path, j.dump(2) + "\n");
  std::cout << "wrote split assignment for " << corpus.instances.size() << " instances to "
            << out_path << "\n";
  return kExitOk;
}

int cmd_train_unary(const CommonFlags& flags, const std::string& corpus_path,
                    const std::string& model_out) {
  ExperimentConfig cfg = config_from_flags(flags);
  const Corpus corpus = load_corpus(corpus_path);
  const SplitAssignment splits = make_splits(corpus, cfg.domain, cfg.seeds.splits);
  const TagSet tags = sample_tags(corpus, splits, cfg.scenario.tau, cfg.seeds.tags);

  BlurParams blur{corpus.head_feature_mean(), cfg.sigma_blur};
  const Obfuscation obf{cfg.obfuscation, cfg.blur_strength};

  UnaryDataset data;
  {
    std::set<std::string> label_set;
    for (const Instance& inst : corpus.instances) {
      if (tags.contains(inst.instance_id)) label_set.insert(inst.identity);
    }
    data.label_names.assign(label_set.begin(), label_set.end());
  }
  for (const Instance& inst : corpus.instances) {
    if (!tags.contains(inst.instance_id)) continue;
    Instance copy = inst;
    if (obf.type != ObfuscationType::Visible) {
      copy.head_features = apply_obfuscation(inst.head_features, obf, blur,
                                             mix_seed(cfg.seeds.corpus, hash_str(inst.instance_id)));
    }
    data.features.push_back(concat_features(copy));
    const auto it =
        std::lower_bound(data.label_names.begin(), data.label_names.end(), inst.identity);
    data.labels.push_back(static_cast<int>(it - data.label_names.begin()));
  }
  UnaryTrainConfig train_cfg = cfg.unary_train;
  train_cfg.seed = cfg.seeds.training;
  const UnaryModel model = train_unary(data, train_cfg, to_string(cfg.obfuscation));
  save_unary(model, model_out);
  std::cout << "trained unary model on " << data.features.size() << " tagged instances ("
            << model.num_classes() << " identities) -> " << model_out << "\n";
  return kExitOk;
}

int cmd_train_matcher(const CommonFlags& flags, const std::string& corpus_path,
                      const std::string& regime_name, const std::string& model_out,
                      const std::string& scores_out) {
  ExperimentConfig cfg = config_from_flags(flags);
  const PairRegime regime = pair_regime_from_string(regime_name);
  const Corpus corpus = load_corpus(corpus_path);
  const SplitAssignment splits = make_splits(corpus, cfg.domain, cfg.seeds.splits);
  BlurParams blur{corpus.head_feature_mean(), cfg.sigma_blur};
  const Obfuscation obf{cfg.obfuscation, cfg.blur_strength};
  if (regime != PairRegime::VisiblePair && obf.type == ObfuscationType::Visible)
    throw ConfigError("regime " + regime_name + " needs --obfuscation");

  // Within-album pairs among split0 (tagged side) instances per regime.
  auto dataset_for = [&](int side) {
    PairDataset data;
    std::vector<int> vis_row(corpus.instances.size(), -1);
    std::vector<int> obf_row(corpus.instances.size(), -1);
    auto visible_of = [&](int idx) {
      if (vis_row[idx] < 0) {
        data.features.push_back(concat_features(corpus.instances[idx]));
        vis_row[idx] = static_cast<int>(data.features.size()) - 1;
      }
      return vis_row[idx];
    };
    auto obf_of = [&](int idx) {
      if (obf_row[idx] < 0) {
        Instance copy = corpus.instances[idx];
        copy.head_features =
            apply_obfuscation(copy.head_features, obf, blur,
                              mix_seed(cfg.seeds.corpus, hash_str(copy.instance_id)));
        data.features.push_back(concat_features(copy));
        obf_row[idx] = static_cast<int>(data.features.size()) - 1;
      }
      return obf_row[idx];
    };
    Rng side_rng(mix_seed(cfg.seeds.corpus, 0x99));
    for (const auto& [album, members] : corpus.albums()) {
      for (std::size_t a = 0; a < members.size(); ++a) {
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          const int ia = members[a];
          const int ib = members[b];
          if (splits.side(corpus.instances[ia].instance_id) != side) continue;
          if (splits.side(corpus.instances[ib].instance_id) != side) continue;
          int ra, rb;
          if (regime == PairRegime::VisiblePair) {
            ra = visible_of(ia);
            rb = visible_of(ib);
          } else if (regime == PairRegime::ObfuscatedPair) {
            ra = obf_of(ia);
            rb = obf_of(ib);
          } else if (side_rng.bernoulli(0.5)) {
            ra = obf_of(ia);
            rb = visible_of(ib);
          } else {
            ra = visible_of(ia);
            rb = obf_of(ib);
          }
          data.pairs.emplace_back(ra, rb);
          data.labels.push_back(
              corpus.instances[ia].identity == corpus.instances[ib].identity ? 1 : 0);
        }
      }
    }
    return data;
  };

  MatcherTrainConfig train_cfg = cfg.matcher_train;
  train_cfg.seed = cfg.seeds.training;
  const PairDataset train_data = dataset_for(0);
  const MlpParams params = train_matcher(train_data, train_cfg);
  const MatcherModel model = MatcherModel::trained(params, regime);
  save_matcher(model, model_out);
  std::cout << "trained " << regime_name << " matcher on " << train_data.pairs.size()
            << " pairs -> " << model_out << "\n";

  if (!scores_out.empty()) {
    // Held-out scores on split1 pairs.
    const PairDataset eval_data = dataset_for(1);
    std::vector<double> scores;
    std::vector<std::string> ids_i, ids_j;
    for (const auto& [i, j] : eval_data.pairs) {
      std::vector<double> x = eval_data.features[i];
      x.insert(x.end(), eval_data.features[j].begin(), eval_data.features[j].end());
      scores.push_back(mlp_match_prob(params, x));
      ids_i.push_back("row" + std::to_string(i));
      ids_j.push_back("row" + std::to_string(j));
    }
    dump_pair_scores(scores_out, ids_i, ids_j, scores, eval_data.labels);
    if (!scores.empty()) {
      try {
        const RocCurve curve = eval_matcher(scores, eval_data.labels);
        std::cout << "held-out eer_accuracy " << format_double(curve.eer_accuracy, 4) << "\n";
      } catch (const DataError&) {
        // single-label held-out set; scores were still dumped
      }
    }
  }
  return kExitOk;
}

int cmd_run(const CommonFlags& flags, bool trace) {
  const ExperimentConfig cfg = config_from_flags(flags);
  RunArtifacts artifacts;
  const ExperimentResult result = run_scenario(cfg, &artifacts);
  write_result_files(result, artifacts, flags.out, trace);
  return kExitOk;
}

int cmd_sweep(const CommonFlags& flags) {
  if (flags.config_path.empty()) throw ConfigError("sweep requires --config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(flags.config_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(flags.config_path + ": " + e.what());
  }
  ExperimentConfig base =
      j.contains("base") ? config_from_json(j["base"]) : ExperimentConfig{};
  if (!j.contains("base")) base.generator = GeneratorConfig{};

  std::vector<double> taus, alphas, betas;
  std::vector<std::string> scenarios, obfuscations, domains, modes;
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    if (s.contains("tau")) taus = s["tau"].get<std::vector<double>>();
    if (s.contains("alpha")) alphas = s["alpha"].get<std::vector<double>>();
    if (s.contains("beta")) betas = s["beta"].get<std::vector<double>>();
    if (s.contains("scenario")) scenarios = s["scenario"].get<std::vector<std::string>>();
    if (s.contains("obfuscation"))
      obfuscations = s["obfuscation"].get<std::vector<std::string>>();
    if (s.contains("domain")) domains = s["domain"].get<std::vector<std::string>>();
    if (s.contains("mode")) modes = s["mode"].get<std::vector<std::string>>();
  }
  if (taus.empty()) taus = {base.scenario.tau};
  if (alphas.empty()) alphas = {base.inference.alpha};
  if (betas.empty()) betas = {base.pruning.beta};
  if (scenarios.empty()) scenarios = {to_string(base.scenario.kind)};
  if (obfuscations.empty()) obfuscations = {to_string(base.obfuscation)};
  if (domains.empty()) domains = {to_string(base.domain)};
  if (modes.empty()) modes = {to_string(base.mode)};

  fs::create_directories(flags.out);
  std::vector<ExperimentResult> results;
  int run_index = 0;
  for (const std::string& scenario : scenarios) {
    for (const std::string& obf : obfuscations) {
      for (const std::string& domain : domains) {
        for (const std::string& mode : modes) {
          for (double tau : taus) {
            for (double alpha : alphas) {
              for (double beta : betas) {
                ExperimentConfig cfg = base;
                cfg.scenario.kind = scenario_from_string(scenario);
                cfg.scenario.tau = tau;
                cfg.obfuscation = obfuscation_type_from_string(obf);
                cfg.domain = domain_mode_from_string(domain);
                cfg.mode = run_mode_from_string(mode);
                cfg.inference.alpha = alpha;
                cfg.pruning.beta = beta;
                const ExperimentResult result = run_scenario(cfg);
                results.push_back(result);
                const std::string name =
                    "run" + std::to_string(run_index++) + "_" + scenario + "_" + obf + "_" +
                    domain + "_" + mode + ".json";
                write_text_file((fs::path(flags.out) / name).string(),
                                result_to_json(result).dump(2) + "\n");
                std::cout << name << ": accuracy " << format_double(result.accuracy, 4)
                          << "\n";
              }
            }
          }
        }
      }
    }
  }
  emit_report(results, flags.out, ReportFormat::Csv);
  emit_report(results, flags.out, ReportFormat::Json);
  std::cout << "sweep wrote " << results.size() << " runs + report to " << flags.out << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out,
               const std::string& format) {
  std::vector<std::string> files;
  for (const std::string& input : inputs) {
    if (fs::is_directory(input)) {
      for (const auto& entry : fs::directory_iterator(input)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path().string());
      }
      std::sort(files.begin(), files.end());
    } else {
      files.push_back(input);
    }
  }
  std::vector<ExperimentResult> results;
  for (const std::string& file : files) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(file));
    } catch (const nlohmann::json::exception&) {
      continue;  // not a result file
    }
    if (!j.is_object() || !j.contains("config") || !j.contains("queries")) continue;
    ExperimentResult r;
    r.config = config_from_json(j["config"]);
    r.config_echo = j["config"];
    r.effective_tau = j.value("effective_tau", 0.0);
    r.accuracy = j["accuracy"].get<double>();
    r.naive_baseline = j["naive_baseline"].get<double>();
    if (!j["matcher_eer_accuracy"].is_null())
      r.matcher_eer_accuracy = j["matcher_eer_accuracy"].get<double>();
    r.graph.node_count = j["graph"]["nodes"].get<int>();
    r.graph.album_count = j["graph"]["albums"].get<int>();
    r.graph.pruning_log.full_edge_count = j["graph"]["full_edge_count"].get<std::uint64_t>();
    r.graph.pruning_log.after_album_pruning =
        j["graph"]["after_album_pruning"].get<std::uint64_t>();
    r.graph.pruning_log.after_negative_pruning =
        j["graph"]["after_negative_pruning"].get<std::uint64_t>();
    r.graph.largest_clique = j["graph"]["largest_clique"].get<int>();
    for (const auto& q : j["queries"]) {
      QueryRecord record;
      record.query_id = q["id"].get<std::string>();
      record.true_identity = q["truth"].get<std::string>();
      record.predicted = q["predicted"].get<std::string>();
      record.album = q["album"].get<std::string>();
      record.correct = q["correct"].get<bool>();
      r.records.push_back(std::move(record));
    }
    results.push_back(std::move(r));
  }
  if (results.empty()) throw DataError("report: no result files found");
  emit_report(results, out, format == "csv" ? ReportFormat::Csv : ReportFormat::Json);
  std::cout << "report over " << results.size() << " results -> " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"album-graph person recognition experiments"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* generate = app.add_subcommand("generate", "generate a synthetic corpus");
  std::string corpus_out = "corpus.jsonl";
  add_common_flags(generate, flags);
  generate->add_option("--corpus-out", corpus_out, "output corpus path (.jsonl or .jsonl.gz)");

  auto* split = app.add_subcommand("split", "compute split0/split1 assignment");
  std::string corpus_path, split_domain = "within", split_out = "splits.json";
  std::uint64_t split_seed = 1;
  split->add_option("--corpus", corpus_path, "corpus path")->required();
  split->add_option("--domain", split_domain, "within|across");
  split->add_option("--seed", split_seed, "split seed");
  split->add_option("--out", split_out, "output path");

  auto* train_unary_cmd = app.add_subcommand("train-unary", "train the unary model");
  std::string tu_corpus, tu_out = "unary.json";
  add_common_flags(train_unary_cmd, flags);
  train_unary_cmd->add_option("--corpus", tu_corpus, "corpus path")->required();
  train_unary_cmd->add_option("--model-out", tu_out, "model output path");

  auto* train_matcher_cmd = app.add_subcommand("train-matcher", "train a pairwise matcher");
  std::string tm_corpus, tm_out = "matcher.json", tm_regime = "visible-pair", tm_scores;
  add_common_flags(train_matcher_cmd, flags);
  train_matcher_cmd->add_option("--corpus", tm_corpus, "corpus path")->required();
  train_matcher_cmd->add_option("--regime", tm_regime,
                                "visible-pair|obfuscated-pair|mixed-pair");
  train_matcher_cmd->add_option("--model-out", tm_out, "model output path");
  train_matcher_cmd->add_option("--pair-scores", tm_scores,
                                "optional held-out pair score CSV");

  auto* run = app.add_subcommand("run", "run one scenario end to end");
  bool trace = false;
  add_common_flags(run, flags);
  run->add_flag("--trace", trace, "write per-query inference trace");

  auto* sweep = app.add_subcommand("sweep", "run a config-driven parameter grid");
  add_common_flags(sweep, flags);

  auto* report = app.add_subcommand("report", "aggregate result files into a report");
  std::vector<std::string> report_inputs;
  std::string report_out = "out", report_format = "csv";
  report->add_option("--in", report_inputs, "result files or directories")->required();
  report->add_option("--out", report_out, "output directory");
  report->add_option("--format", report_format, "csv|json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (generate->parsed()) return cmd_generate(flags, corpus_out);
    if (split->parsed()) return cmd_split(corpus_path, split_domain, split_seed, split_out);
    if (train_unary_cmd->parsed()) return cmd_train_unary(flags, tu_corpus, tu_out);
    if (train_matcher_cmd->parsed())
      return cmd_train_matcher(flags, tm_corpus, tm_regime, tm_out, tm_scores);
    if (run->parsed()) return cmd_run(flags, trace);
    if (sweep->parsed()) return cmd_sweep(flags);
    if (report->parsed()) return cmd_report(report_inputs, report_out, report_format);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
