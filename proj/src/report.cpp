#include <algorithm>
#include <filesystem>
#include <set>

#include "albumcrf/error.hpp"
#include "albumcrf/harness.hpp"
#include "albumcrf/util.hpp"

namespace albumcrf {

nlohmann::ordered_json result_to_json(const ExperimentResult& result, bool include_timing) {
  nlohmann::ordered_json j;
  j["config"] = result.config_echo;
  j["effective_tau"] = result.effective_tau;
  j["accuracy"] = result.accuracy;
  j["naive_baseline"] = result.naive_baseline;
  j["chance_multiple"] =
      result.naive_baseline > 0 ? result.accuracy / result.naive_baseline : 0.0;
  if (result.matcher_eer_accuracy) {
    j["matcher_eer_accuracy"] = *result.matcher_eer_accuracy;
  } else {
    j["matcher_eer_accuracy"] = nullptr;
  }
  j["graph"] = {{"nodes", result.graph.node_count},
                {"albums", result.graph.album_count},
                {"full_edge_count", result.graph.pruning_log.full_edge_count},
                {"after_album_pruning", result.graph.pruning_log.after_album_pruning},
                {"after_negative_pruning", result.graph.pruning_log.after_negative_pruning},
                {"largest_clique", result.graph.largest_clique}};
  nlohmann::ordered_json queries = nlohmann::ordered_json::array();
  const std::string mode = to_string(result.config.mode);
  for (const QueryRecord& r : result.records) {
    queries.push_back({{"id", r.query_id},
                       {"truth", r.true_identity},
                       {"predicted", r.predicted},
                       {"mode", mode},
                       {"album", r.album},
                       {"correct", r.correct}});
  }
  j["queries"] = queries;
  if (include_timing) {
    j["timing"] = {{"corpus_s", result.seconds.corpus},
                   {"unary_s", result.seconds.unary},
                   {"matcher_s", result.seconds.matcher},
                   {"graph_s", result.seconds.graph},
                   {"inference_s", result.seconds.inference},
                   {"total_s", result.seconds.total}};
  }
  return j;
}

namespace {

std::string csv_row(const ExperimentResult& r) {
  const ExperimentConfig& cfg = r.config;
  std::string eer = r.matcher_eer_accuracy ? format_double(*r.matcher_eer_accuracy, 6) : "";
  return std::string(to_string(cfg.scenario.kind)) + "," + format_double(r.effective_tau, 2) +
         "," + to_string(cfg.obfuscation) + "," + to_string(cfg.domain) + "," +
         to_string(cfg.mode) + "," + format_double(r.accuracy, 6) + "," +
         format_double(r.naive_baseline, 6) + "," + eer + "," +
         std::to_string(r.graph.node_count) + "," +
         std::to_string(r.graph.pruning_log.after_negative_pruning) + "," +
         format_double(r.seconds.total, 3);
}

// Series identity for plot data: everything but the x variable.
std::string series_key(const ExperimentResult& r, bool x_is_tau) {
  std::string key;
  if (!x_is_tau) key += std::string("tau=") + format_double(r.effective_tau, 2) + " ";
  if (x_is_tau) key += std::string(to_string(r.config.scenario.kind)) + " ";
  key += std::string(to_string(r.config.obfuscation)) + " " +
         to_string(r.config.domain) + " " + to_string(r.config.mode);
  return key;
}

}  // namespace

void emit_report(const std::vector<ExperimentResult>& results, const std::string& out_dir,
                 ReportFormat format) {
  if (results.empty()) throw DataError("emit_report: no results");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  if (format == ReportFormat::Csv) {
    std::string csv =
        "scenario,tau,obfuscation,domain_mode,mode,accuracy,naive,eer_accuracy,nodes,"
        "edges_pruned,seconds\n";
    for (const ExperimentResult& r : results) csv += csv_row(r) + "\n";
    write_text_file((dir / "report.csv").string(), csv);
  } else {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const ExperimentResult& r : results) arr.push_back(result_to_json(r));
    write_text_file((dir / "report.json").string(), arr.dump(2) + "\n");
  }

  // Plot data: x is the tag rate when it varies, otherwise the scenario.
  std::set<double> taus;
  for (const ExperimentResult& r : results) taus.insert(r.effective_tau);
  const bool x_is_tau = taus.size() > 1;

  nlohmann::ordered_json plot;
  plot["x_label"] = x_is_tau ? "tau" : "scenario";
  std::vector<std::string> x_values;
  if (x_is_tau) {
    nlohmann::ordered_json xs = nlohmann::ordered_json::array();
    for (double t : taus) {
      xs.push_back(t);
      x_values.push_back(format_double(t, 2));
    }
    plot["x"] = xs;
  } else {
    std::set<std::string> scenarios;
    for (const ExperimentResult& r : results)
      scenarios.insert(to_string(r.config.scenario.kind));
    nlohmann::ordered_json xs = nlohmann::ordered_json::array();
    for (const std::string& s : scenarios) {
      xs.push_back(s);
      x_values.push_back(s);
    }
    plot["x"] = xs;
  }

  std::map<std::string, std::map<std::string, double>> series;  // key -> x -> accuracy
  for (const ExperimentResult& r : results) {
    const std::string x = x_is_tau ? format_double(r.effective_tau, 2)
                                   : std::string(to_string(r.config.scenario.kind));
    series[series_key(r, x_is_tau)][x] = r.accuracy;
  }
  nlohmann::ordered_json series_json = nlohmann::ordered_json::array();
  for (const auto& [key, points] : series) {
    nlohmann::ordered_json ys = nlohmann::ordered_json::array();
    for (const std::string& x : x_values) {
      auto it = points.find(x);
      if (it == points.end()) {
        ys.push_back(nullptr);
      } else {
        ys.push_back(it->second);
      }
    }
    series_json.push_back({{"name", key}, {"y", ys}});
  }
  plot["series"] = series_json;
  write_text_file((dir / "plot_data.json").string(), plot.dump(2) + "\n");
}

}  // namespace albumcrf
