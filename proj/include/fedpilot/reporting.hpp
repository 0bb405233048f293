// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace fedpilot {

struct RunRecord {
  std::string source;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  double mean_utilization = 0.0;
  std::vector<double> accuracy_by_round;     // index = round
  std::vector<double> utilization_by_round;  // index = round
  // selection_counts[j][t]: participating clients that trained layer j in round t.
  std::vector<std::vector<int>> selection_counts;
  std::vector<int> participants_by_round;
};

// All runs sharing strategy, aggregation rule and data distribution.
struct RunSummary {
  std::string strategy;
  std::string aggregation;
  std::string distribution;
  std::vector<RunRecord> runs;

  std::string key() const { return strategy + "/" + aggregation + "/" + distribution; }
  double mean_final_accuracy() const;
  double min_final_accuracy() const;
  double max_final_accuracy() const;
  double mean_utilization() const;
  // frequency[j][t] in [0, 1], averaged over runs.
  std::vector<std::vector<double>> selection_frequency() const;
  // Counts summed over runs.
  std::vector<std::vector<int>> selection_counts() const;
};

// Parses one metrics.jsonl stream. Throws ParseError with the line number on
// malformed input.
RunRecord parse_metrics(std::istream& is, const std::string& source, std::string* strategy,
                        std::string* aggregation, std::string* distribution);

std::vector<RunSummary> summarize(const std::vector<std::filesystem::path>& metrics_files);

// Every metrics.jsonl below `dir`, sorted.
std::vector<std::filesystem::path> find_metrics_files(const std::filesystem::path& dir);

nlohmann::json to_json(const std::vector<RunSummary>& summaries);

// summary.json plus tables/*.csv.
void write_report(const std::vector<RunSummary>& summaries, const std::filesystem::path& out_dir);

}  // namespace fedpilot
