// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/reporting.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "fedpilot/errors.hpp"

namespace fedpilot {

namespace {

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> finals(const RunSummary& s) {
  std::vector<double> out;
  for (const auto& r : s.runs) out.push_back(r.final_accuracy);
  return out;
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  return os;
}

}  // namespace

double RunSummary::mean_final_accuracy() const { return mean(finals(*this)); }

double RunSummary::min_final_accuracy() const {
  const auto f = finals(*this);
  return f.empty() ? 0.0 : *std::min_element(f.begin(), f.end());
}

double RunSummary::max_final_accuracy() const {
  const auto f = finals(*this);
  return f.empty() ? 0.0 : *std::max_element(f.begin(), f.end());
}

double RunSummary::mean_utilization() const {
  std::vector<double> u;
  for (const auto& r : runs) u.push_back(r.mean_utilization);
  return mean(u);
}

std::vector<std::vector<int>> RunSummary::selection_counts() const {
  std::vector<std::vector<int>> out;
  for (const auto& r : runs) {
    if (out.empty()) {
      out = r.selection_counts;
      continue;
    }
    for (std::size_t j = 0; j < out.size() && j < r.selection_counts.size(); ++j) {
      for (std::size_t t = 0; t < out[j].size() && t < r.selection_counts[j].size(); ++t) {
        out[j][t] += r.selection_counts[j][t];
      }
    }
  }
  return out;
}

std::vector<std::vector<double>> RunSummary::selection_frequency() const {
  std::vector<std::vector<double>> out;
  if (runs.empty()) return out;
  const auto& first = runs.front().selection_counts;
  out.assign(first.size(), std::vector<double>(first.empty() ? 0 : first.front().size(), 0.0));
  for (const auto& r : runs) {
    for (std::size_t j = 0; j < out.size() && j < r.selection_counts.size(); ++j) {
      for (std::size_t t = 0; t < out[j].size() && t < r.selection_counts[j].size(); ++t) {
        const int n = r.participants_by_round[t];
        if (n > 0) out[j][t] += static_cast<double>(r.selection_counts[j][t]) / n;
      }
    }
  }
  for (auto& row : out) {
    for (auto& v : row) v /= static_cast<double>(runs.size());
  }
  return out;
}

RunRecord parse_metrics(std::istream& is, const std::string& source, std::string* strategy,
                        std::string* aggregation, std::string* distribution) {
  RunRecord rec;
  rec.source = source;
  std::string line;
  int line_no = 0;
  std::vector<double> util;
  bool any = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) -> ParseError {
      return ParseError(source + ":" + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("malformed JSON (") + e.what() + ")");
    }
    try {
      const int round = j.at("round").get<int>();
      if (round != static_cast<int>(rec.accuracy_by_round.size())) {
        throw fail("expected round " + std::to_string(rec.accuracy_by_round.size()) + ", got " +
                   std::to_string(round));
      }
      if (!any) {
        rec.seed = j.at("seed").get<std::uint64_t>();
        if (strategy) *strategy = j.at("strategy").get<std::string>();
        if (aggregation) *aggregation = j.at("aggregation").get<std::string>();
        if (distribution) *distribution = j.at("distribution").get<std::string>();
        any = true;
      }
      rec.accuracy_by_round.push_back(j.at("accuracy").get<double>());
      rec.utilization_by_round.push_back(j.at("mean_utilization").get<double>());
      const auto& alpha = j.at("alpha");
      if (rec.selection_counts.empty()) rec.selection_counts.resize(alpha.size());
      if (alpha.size() != rec.selection_counts.size()) throw fail("alpha length changed");
      int participants = 0;
      for (const auto& c : j.at("clients")) {
        if (!c.at("excluded").get<bool>()) ++participants;
      }
      rec.participants_by_round.push_back(participants);
      for (std::size_t l = 0; l < alpha.size(); ++l) {
        rec.selection_counts[l].push_back(alpha[l].get<int>());
      }
      if (round > 0 && participants > 0) util.push_back(rec.utilization_by_round.back());
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("missing or mistyped field (") + e.what() + ")");
    }
  }
  if (!any) throw ParseError(source + ": no metrics records");
  rec.final_accuracy = rec.accuracy_by_round.back();
  rec.best_accuracy = *std::max_element(rec.accuracy_by_round.begin(), rec.accuracy_by_round.end());
  rec.mean_utilization = mean(util);
  return rec;
}

std::vector<RunSummary> summarize(const std::vector<std::filesystem::path>& metrics_files) {
  std::map<std::string, RunSummary> groups;
  for (const auto& p : metrics_files) {
    std::ifstream is(p);
    if (!is) throw ParseError("cannot open " + p.string());
    std::string strategy;
    std::string aggregation;
    std::string distribution;
    RunRecord rec = parse_metrics(is, p.string(), &strategy, &aggregation, &distribution);
    RunSummary& g = groups[strategy + "/" + aggregation + "/" + distribution];
    g.strategy = strategy;
    g.aggregation = aggregation;
    g.distribution = distribution;
    g.runs.push_back(std::move(rec));
  }
  std::vector<RunSummary> out;
  for (auto& [k, g] : groups) {
    std::stable_sort(g.runs.begin(), g.runs.end(),
                     [](const RunRecord& a, const RunRecord& b) { return a.seed < b.seed; });
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<std::filesystem::path> find_metrics_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "metrics.jsonl") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json to_json(const std::vector<RunSummary>& summaries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : summaries) {
    nlohmann::json runs = nlohmann::json::array();
    std::vector<std::uint64_t> seeds;
    for (const auto& r : s.runs) {
      seeds.push_back(r.seed);
      runs.push_back({{"seed", r.seed},
                      {"source", r.source},
                      {"final_accuracy", r.final_accuracy},
                      {"best_accuracy", r.best_accuracy},
                      {"mean_utilization", r.mean_utilization}});
    }
    arr.push_back({{"strategy", s.strategy},
                   {"aggregation", s.aggregation},
                   {"distribution", s.distribution},
                   {"seeds", seeds},
                   {"mean_final_accuracy", s.mean_final_accuracy()},
                   {"final_accuracy_range", {s.min_final_accuracy(), s.max_final_accuracy()}},
                   {"mean_utilization", s.mean_utilization()},
                   {"runs", std::move(runs)},
                   {"selection_frequency", s.selection_frequency()}});
  }
  return arr;
}

void write_report(const std::vector<RunSummary>& summaries, const std::filesystem::path& out_dir) {
  const auto tables = out_dir / "tables";
  std::filesystem::create_directories(tables);
  open_out(out_dir / "summary.json") << to_json(summaries).dump(2) << '\n';

  // Method x distribution table of mean final accuracy.
  std::set<std::string> dists;
  std::set<std::string> methods;
  std::map<std::pair<std::string, std::string>, const RunSummary*> cell;
  for (const auto& s : summaries) {
    const std::string method = s.strategy + "+" + s.aggregation;
    dists.insert(s.distribution);
    methods.insert(method);
    cell[{method, s.distribution}] = &s;
  }
  {
    auto os = open_out(tables / "accuracy_table.csv");
    os << "method";
    for (const auto& d : dists) os << ',' << d;
    os << '\n';
    for (const auto& m : methods) {
      os << m;
      for (const auto& d : dists) {
        os << ',';
        if (auto it = cell.find({m, d}); it != cell.end()) os << it->second->mean_final_accuracy();
      }
      os << '\n';
    }
  }
  {
    auto os = open_out(tables / "runs.csv");
    os << "strategy,aggregation,distribution,seed,final_accuracy,best_accuracy,mean_utilization\n";
    for (const auto& s : summaries) {
      for (const auto& r : s.runs) {
        os << s.strategy << ',' << s.aggregation << ',' << s.distribution << ',' << r.seed << ','
           << r.final_accuracy << ',' << r.best_accuracy << ',' << r.mean_utilization << '\n';
      }
    }
  }
  {
    auto os = open_out(tables / "summary.csv");
    os << "strategy,aggregation,distribution,runs,mean_final_accuracy,min_final_accuracy,"
          "max_final_accuracy,mean_utilization\n";
    for (const auto& s : summaries) {
      os << s.strategy << ',' << s.aggregation << ',' << s.distribution << ',' << s.runs.size()
         << ',' << s.mean_final_accuracy() << ',' << s.min_final_accuracy() << ','
         << s.max_final_accuracy() << ',' << s.mean_utilization() << '\n';
    }
  }
  {
    auto os = open_out(tables / "accuracy_by_round.csv");
    os << "strategy,aggregation,distribution,seed,round,accuracy,mean_utilization\n";
    for (const auto& s : summaries) {
      for (const auto& r : s.runs) {
        for (std::size_t t = 0; t < r.accuracy_by_round.size(); ++t) {
          os << s.strategy << ',' << s.aggregation << ',' << s.distribution << ',' << r.seed << ','
             << t << ',' << r.accuracy_by_round[t] << ',' << r.utilization_by_round[t] << '\n';
        }
      }
    }
  }
  {
    auto os = open_out(tables / "accuracy_vs_utilization.csv");
    os << "strategy,aggregation,distribution,mean_utilization,mean_final_accuracy\n";
    for (const auto& s : summaries) {
      os << s.strategy << ',' << s.aggregation << ',' << s.distribution << ',' << s.mean_utilization()
         << ',' << s.mean_final_accuracy() << '\n';
    }
  }
  for (const auto& s : summaries) {
    const auto freq = s.selection_frequency();
    auto os = open_out(tables / ("selection_frequency_" + sanitize(s.key()) + ".csv"));
    os << "layer";
    if (!freq.empty()) {
      for (std::size_t t = 0; t < freq.front().size(); ++t) os << ",round_" << t;
    }
    os << '\n';
    for (std::size_t j = 0; j < freq.size(); ++j) {
      os << j;
      for (double v : freq[j]) os << ',' << v;
      os << '\n';
    }
  }
}

}  // namespace fedpilot
