// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: simulate, allocate, memory, report.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "fedpilot/allocator.hpp"
#include "fedpilot/errors.hpp"
#include "fedpilot/memory_model.hpp"
#include "fedpilot/reporting.hpp"
#include "fedpilot/simulator.hpp"
#include "json.hpp"

namespace {

using fedpilot::Bytes;
using nlohmann::json;

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw fedpilot::ConfigError("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw fedpilot::ConfigError(path + ": " + e.what());
  }
}

fedpilot::ModelProfile load_profile(const std::string& arg) {
  if (arg == "vit-base") return fedpilot::profile_from_json(json(arg));
  return fedpilot::profile_from_json(read_json_file(arg));
}

// Accepts plain bytes or a decimal number with an MB/GB suffix.
Bytes parse_capacity(const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw fedpilot::ConfigError("capacity: not a number: " + text);
  }
  std::string unit = text.substr(pos);
  for (auto& c : unit) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  double scale = 1.0;
  if (unit == "GB") {
    scale = static_cast<double>(fedpilot::kGigabyte);
  } else if (unit == "MB") {
    scale = static_cast<double>(fedpilot::kMegabyte);
  } else if (!unit.empty() && unit != "B") {
    throw fedpilot::ConfigError("capacity: unknown unit " + unit);
  }
  if (v < 0) throw fedpilot::ConfigError("capacity: must be >= 0");
  return static_cast<Bytes>(v * scale);
}

// JSON array, {"values": [...]}, or whitespace-separated numbers.
std::vector<double> load_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw fedpilot::ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '[' || text[first] == '{')) {
    json j;
    try {
      j = json::parse(text);
      if (j.is_object()) j = j.at("values");
      return j.get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw fedpilot::ConfigError(path + ": " + e.what());
    }
  }
  std::vector<double> out;
  std::istringstream in(text);
  double v = 0.0;
  while (in >> v) out.push_back(v);
  if (!in.eof()) throw fedpilot::ConfigError(path + ": malformed values list");
  return out;
}

int run_simulate(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                 const std::string& out) {
  json j = read_json_file(config_path);
  fedpilot::SimulationConfig cfg = fedpilot::config_from_json(j);
  if (seed) cfg.seed = *seed;
  const auto summary = fedpilot::run_experiment(cfg, out, &std::cerr);
  std::cout << fedpilot::to_json(summary).dump(2) << '\n';
  return 0;
}

int run_allocate(const std::string& profile_arg, const std::string& capacity,
                 const std::string& values_path, std::int64_t batch, const std::string& trace) {
  fedpilot::KnapsackInstance inst;
  inst.profile = load_profile(profile_arg);
  inst.capacity_bytes = parse_capacity(capacity);
  inst.batch = batch;
  inst.values = load_values(values_path);
  const auto result = fedpilot::optimize_allocation(inst);
  if (!trace.empty()) {
    std::ofstream os(trace);
    if (!os) throw fedpilot::Error("cannot open " + trace);
    fedpilot::write_trace_jsonl(os, result);
  }
  json out = {{"map", result.map.to_string()},
              {"total_value", result.total_value},
              {"seeded", result.seeded},
              {"capacity_bytes", inst.capacity_bytes},
              {"memory", fedpilot::to_json(result.memory)}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_memory(const std::string& profile_arg, const std::string& bits, std::int64_t batch) {
  const auto profile = load_profile(profile_arg);
  const auto map = fedpilot::AllocationMap::from_string(bits);
  const auto m = fedpilot::total_memory(profile, map, batch);
  json out = fedpilot::to_json(m);
  out["map"] = map.to_string();
  out["batch"] = batch;
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_report(const std::string& in, const std::string& out) {
  const auto files = fedpilot::find_metrics_files(in);
  if (files.empty()) throw fedpilot::ConfigError("no metrics.jsonl found under " + in);
  const auto summaries = fedpilot::summarize(files);
  fedpilot::write_report(summaries, out);
  std::cout << "wrote report for " << files.size() << " runs in " << summaries.size()
            << " groups to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-aware partial LoRA allocation for federated fine-tuning"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  auto* sim = app.add_subcommand("simulate", "run a federated simulation from a config file");
  sim->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  sim->add_option("--seed", seed, "override the config seed");
  sim->add_option("--out", out_dir, "output directory");

  std::string profile_arg;
  std::string capacity;
  std::string values_path;
  std::int64_t batch = 1;
  std::string trace;
  auto* alloc = app.add_subcommand("allocate", "solve one client's allocation problem");
  alloc->add_option("--profile", profile_arg, "profile JSON file or 'vit-base'")->required();
  alloc->add_option("--capacity", capacity, "capacity in bytes, or with MB/GB suffix")->required();
  alloc->add_option("--values", values_path, "per-block values file")->required();
  alloc->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
  alloc->add_option("--trace", trace, "write the selection trace as JSONL");

  std::string bits;
  auto* mem = app.add_subcommand("memory", "memory breakdown of an allocation map");
  mem->add_option("--profile", profile_arg, "profile JSON file or 'vit-base'")->required();
  mem->add_option("--map", bits, "allocation bits, leftmost is block 0")->required();
  mem->add_option("--batch", batch, "batch size")->required()->check(CLI::PositiveNumber);

  std::string report_in;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "summarize metrics from finished runs");
  rep->add_option("--in", report_in, "directory searched for metrics.jsonl")
      ->required()
      ->check(CLI::ExistingDirectory);
  rep->add_option("--out", report_out, "report output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(config_path, seed, out_dir);
    if (alloc->parsed()) return run_allocate(profile_arg, capacity, values_path, batch, trace);
    if (mem->parsed()) return run_memory(profile_arg, bits, batch);
    if (rep->parsed()) return run_report(report_in, report_out);
  } catch (const fedpilot::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const fedpilot::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
