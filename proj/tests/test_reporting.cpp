// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "fedpilot/errors.hpp"
#include "fedpilot/reporting.hpp"
#include "fedpilot/simulator.hpp"

using namespace fedpilot;

namespace {

SimulationConfig small_config(std::uint64_t seed) {
  SimulationConfig c;
  c.seed = seed;
  c.rounds = 3;
  c.num_clients = 6;
  c.model.num_blocks = 4;
  c.model.hidden = 6;
  c.model.rank = 1;
  c.model.input_dim = 6;
  c.model.num_classes = 3;
  c.task.num_classes = 3;
  c.task.feature_dim = 6;
  c.task.samples_per_class = 30;
  c.train.batch_size = 4;
  c.ig_samples = 8;
  c.threads = 1;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fedpilot_test_report_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json line(int round, double acc, std::vector<int> alpha, nlohmann::json clients) {
  return {{"round", round},        {"strategy", "fedpilot"}, {"aggregation", "comagg"},
          {"distribution", "iid"}, {"seed", 7},              {"accuracy", acc},
          {"loss", 1.0},           {"mean_utilization", 0.5}, {"alpha", alpha},
          {"clients", clients}};
}

nlohmann::json client(int id, bool excluded, const std::string& map, double util) {
  return {{"id", id},        {"level", 1},       {"excluded", excluded}, {"fallback", false},
          {"map", map},      {"memory_bytes", 1}, {"capacity_bytes", 2}, {"utilization", util}};
}

}  // namespace

TEST_CASE("single run: the report echoes the run") {
  const auto dir = scratch("single");
  const auto s = run_experiment(small_config(1), dir / "runs" / "a");
  const auto summaries = summarize(find_metrics_files(dir / "runs"));
  REQUIRE(summaries.size() == 1);
  const auto& r = summaries[0];
  CHECK(r.key() == s.strategy + "/" + s.aggregation + "/" + s.distribution);
  REQUIRE(r.runs.size() == 1);
  CHECK(r.mean_final_accuracy() == s.final_accuracy);
  CHECK(r.min_final_accuracy() == s.final_accuracy);
  CHECK(r.max_final_accuracy() == s.final_accuracy);
  CHECK(r.runs[0].best_accuracy == s.best_accuracy);
  CHECK(r.mean_utilization() == doctest::Approx(s.mean_utilization).epsilon(1e-12));
  CHECK(r.runs[0].accuracy_by_round.size() == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("two seeds: mean and range") {
  const auto dir = scratch("two");
  const auto a = run_experiment(small_config(1), dir / "s1");
  const auto b = run_experiment(small_config(2), dir / "s2");
  const auto summaries = summarize(find_metrics_files(dir));
  REQUIRE(summaries.size() == 1);
  const auto& r = summaries[0];
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].seed == 1);
  CHECK(r.runs[1].seed == 2);
  CHECK(r.mean_final_accuracy() == doctest::Approx((a.final_accuracy + b.final_accuracy) / 2));
  CHECK(r.min_final_accuracy() == std::min(a.final_accuracy, b.final_accuracy));
  CHECK(r.max_final_accuracy() == std::max(a.final_accuracy, b.final_accuracy));

  // A different aggregation rule lands in its own group.
  auto c = small_config(1);
  c.aggregation = AggregationRule::kFedAvg;
  run_experiment(c, dir / "fedavg");
  CHECK(summarize(find_metrics_files(dir)).size() == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed input names the line") {
  std::string st, ag, di;
  {
    std::istringstream is(line(0, 0.1, {0, 0}, nlohmann::json::array()).dump() + "\n{not json\n");
    try {
      parse_metrics(is, "m.jsonl", &st, &ag, &di);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("m.jsonl:2") != std::string::npos);
    }
  }
  {
    auto bad = line(0, 0.1, {0, 0}, nlohmann::json::array());
    bad.erase("accuracy");
    std::istringstream is(bad.dump() + "\n");
    try {
      parse_metrics(is, "m.jsonl", &st, &ag, &di);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("m.jsonl:1") != std::string::npos);
    }
  }
  {
    std::istringstream is(line(0, 0.1, {0, 0}, nlohmann::json::array()).dump() + "\n" +
                          line(2, 0.1, {0, 0}, nlohmann::json::array()).dump() + "\n");
    CHECK_THROWS_AS(parse_metrics(is, "m.jsonl", &st, &ag, &di), ParseError);
  }
  {
    std::istringstream is("");
    CHECK_THROWS_AS(parse_metrics(is, "m.jsonl", &st, &ag, &di), ParseError);
  }
}

TEST_CASE("selection counts come from the participating clients") {
  std::ostringstream os;
  os << line(0, 0.1, {0, 0, 0}, nlohmann::json::array()).dump() << '\n';
  os << line(1, 0.4, {2, 1, 0},
             {client(0, false, "110", 0.8), client(1, false, "100", 0.6), client(2, true, "", 0.0)})
            .dump()
     << '\n';
  os << line(2, 0.5, {1, 1, 1}, {client(3, false, "111", 0.9)}).dump() << '\n';
  std::istringstream is(os.str());
  std::string st, ag, di;
  const auto r = parse_metrics(is, "x", &st, &ag, &di);
  CHECK(st == "fedpilot");
  CHECK(ag == "comagg");
  CHECK(di == "iid");
  CHECK(r.seed == 7);
  CHECK(r.final_accuracy == 0.5);
  CHECK(r.best_accuracy == 0.5);
  CHECK(r.participants_by_round == std::vector<int>{0, 2, 1});
  CHECK(r.selection_counts[0] == std::vector<int>{0, 2, 1});
  CHECK(r.selection_counts[2] == std::vector<int>{0, 0, 1});
  CHECK(r.mean_utilization == doctest::Approx(0.5));

  RunSummary s{"fedpilot", "comagg", "iid", {r, r}};
  const auto f = s.selection_frequency();
  CHECK(f[0][1] == 1.0);
  CHECK(f[1][1] == 0.5);
  CHECK(f[2][0] == 0.0);
  CHECK(s.selection_counts()[0][1] == 4);
}

TEST_CASE("simulated selection counts agree with alpha and maps") {
  const auto dir = scratch("alpha");
  run_experiment(small_config(4), dir);
  std::ifstream is(dir / "metrics.jsonl");
  std::string st, ag, di;
  const auto r = parse_metrics(is, "metrics.jsonl", &st, &ag, &di);
  std::ifstream raw(dir / "metrics.jsonl");
  std::string l;
  while (std::getline(raw, l)) {
    const auto j = nlohmann::json::parse(l);
    const int t = j.at("round").get<int>();
    const auto alpha = j.at("alpha").get<std::vector<int>>();
    for (std::size_t b = 0; b < alpha.size(); ++b) CHECK(r.selection_counts[b][t] == alpha[b]);
    for (std::size_t b = 0; b < alpha.size(); ++b) CHECK(r.selection_counts[b][t] <= r.participants_by_round[t]);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("write_report produces the summary and tables") {
  const auto dir = scratch("write");
  run_experiment(small_config(1), dir / "runs" / "a");
  auto c = small_config(1);
  c.strategy = Strategy::kMemorySaver;
  c.aggregation = AggregationRule::kFedAvg;
  run_experiment(c, dir / "runs" / "b");
  const auto summaries = summarize(find_metrics_files(dir / "runs"));
  write_report(summaries, dir / "report");
  const auto j = nlohmann::json::parse(slurp(dir / "report" / "summary.json"));
  CHECK(j == to_json(summaries));
  for (const char* f : {"accuracy_table.csv", "runs.csv", "summary.csv", "accuracy_by_round.csv",
                        "accuracy_vs_utilization.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / "report" / "tables" / f), f);
  }
  int freq_tables = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "report" / "tables")) {
    freq_tables += e.path().filename().string().rfind("selection_frequency_", 0) == 0;
  }
  CHECK(freq_tables == 2);
  const auto runs_csv = slurp(dir / "report" / "tables" / "runs.csv");
  CHECK(std::count(runs_csv.begin(), runs_csv.end(), '\n') == 3);
  std::filesystem::remove_all(dir);
}
