// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Federated fine-tuning simulator. Each round the server samples clients,
// every sampled client picks the adapters it can afford under its memory
// capacity, trains them locally, and the server aggregates the sparse
// per-layer updates into the global adapters.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fedpilot/aggregation.hpp"
#include "fedpilot/memory_model.hpp"
#include "fedpilot/partition.hpp"
#include "fedpilot/scoring.hpp"
#include "fedpilot/toy_model.hpp"
#include "json.hpp"

namespace fedpilot {

enum class Strategy { kFedPilot, kFedRaRandom, kMemorySaver, kMemoryHogger, kExclusive, kFull };

Strategy parse_strategy(std::string_view name);
std::string_view to_string(Strategy s);

inline constexpr int kNumCapacityLevels = 4;

struct SimulationConfig {
  std::uint64_t seed = 1;
  int rounds = 60;
  Strategy strategy = Strategy::kFedPilot;
  AggregationRule aggregation = AggregationRule::kComAgg;
  // Apply aggregated deltas only to layers someone trained this round.
  bool freeze_unreached_layers = false;

  int num_clients = 20;
  double sampling_rate = 0.5;
  std::array<int, kNumCapacityLevels> level_ratio = {4, 3, 2, 1};
  double capacity_headroom = 1.05;
  // Explicit per-level capacities; derived from the profile when absent.
  std::optional<std::array<Bytes, kNumCapacityLevels>> level_capacity_bytes;

  ToyModelConfig model;
  // Explicit profile; when absent one is generated from the toy dimensions.
  std::optional<ModelProfile> profile;
  std::int64_t profile_seq_len = 8;
  std::int64_t profile_bytes_per_elem = 8;
  std::int64_t profile_optimizer_states = 3;
  Bytes profile_context_bytes = 100'000;

  SyntheticTask task;
  PartitionSpec partition;  // num_clients and seed are filled in from above
  TrainOptions train;

  int t_ig = 10;
  int t_agg = 10;
  int ig_samples = 50;
  int ig_batch_size = 0;  // 0: use train.batch_size
  int allocation_cadence = 1;
  double min_normalized_weight = 1e-9;  // allocator weight floor
  int checkpoint_every = 0;
  int threads = 0;  // 0: hardware concurrency

  std::string distribution_label() const;
  int effective_ig_batch() const { return ig_batch_size > 0 ? ig_batch_size : train.batch_size; }
};

// Throws ConfigError naming the offending field path.
SimulationConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimulationConfig& c);

struct ClientSpec {
  int id = 0;
  int level = 1;  // 1..4
  Bytes capacity_bytes = 0;
  std::vector<int> data_indices;
  std::vector<int> ig_indices;
  int batch_size = 1;
};

// Capacity level (1-based) per client: the first ceil(r1*v/sum) clients get
// level 1, the next ceil(r2*v/sum) level 2, and so on.
std::vector<int> assign_capacity_levels(int num_clients, const std::array<int, kNumCapacityLevels>& ratio);

// Level 1 fits Memory Saver with floor(l/3) modules, level 4 the full map,
// both times `headroom`; levels 2-3 are linear in between.
std::array<Bytes, kNumCapacityLevels> scaled_level_capacities(const ModelProfile& profile,
                                                              std::int64_t batch, double headroom);

struct AllocationDecision {
  std::optional<AllocationMap> map;  // nullopt: client excluded this round
  bool fallback = false;             // random strategy fell back to Memory Saver
  std::string note;
};

inline constexpr int kRandomAllocationDraws = 100;

// Allocation for the non-knapsack strategies. `rng` is only used by the
// random strategy.
AllocationDecision baseline_allocation(Strategy strategy, const ClientSpec& client,
                                       const ModelProfile& profile, std::int64_t batch,
                                       std::mt19937_64& rng);

struct ClientRoundInfo {
  int client_id = 0;
  int level = 0;
  bool excluded = false;
  bool fallback = false;
  AllocationMap map;
  Bytes memory_bytes = 0;
  Bytes capacity_bytes = 0;
  double utilization = 0.0;
};

struct RoundMetrics {
  int round = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<ClientRoundInfo> clients;
  std::vector<int> alpha;
  double mean_utilization = 0.0;  // over participating clients; 0 if none
  double wall_seconds = 0.0;
};

struct ClientMemory {
  std::optional<IGScoreRecord> last_record;
  std::optional<AllocationMap> last_allocation;
  int allocation_round = -1;
};

struct GlobalState {
  int round = 0;
  LoraParams params;
  LoraParams prev_delta;
  ScoreHistory scores;
  ContributionHistory contributions;
  std::vector<ClientMemory> clients;
};

// splitmix64-based stream derivation so per-client randomness does not depend
// on execution order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);

class Simulator {
 public:
  explicit Simulator(SimulationConfig config);

  const SimulationConfig& config() const { return config_; }
  const ModelProfile& profile() const { return profile_; }
  const std::vector<ClientSpec>& clients() const { return clients_; }
  const ToyLoRANet& base_net() const { return base_net_; }
  const TrainTestSplit& data() const { return data_; }
  const std::vector<std::vector<int>>& client_partition() const { return partition_; }
  const std::array<Bytes, kNumCapacityLevels>& level_capacities() const { return level_caps_; }

  GlobalState initial_state() const;
  // Evaluation of the current global model without training (round 0).
  RoundMetrics evaluate_state(const GlobalState& state) const;
  // One protocol round: sample, allocate, train, aggregate, evaluate.
  RoundMetrics run_round(GlobalState& state) const;

  std::vector<int> sample_clients(int round) const;
  ToyLoRANet net_with(const LoraParams& params) const;

 private:
  AllocationDecision allocate(const ClientSpec& client, const ClientMemory& memory,
                              const GlobalState& state, int round) const;

  SimulationConfig config_;
  TrainTestSplit data_;
  std::vector<std::vector<int>> partition_;
  ToyLoRANet base_net_;
  ModelProfile profile_;
  std::array<Bytes, kNumCapacityLevels> level_caps_{};
  std::vector<ClientSpec> clients_;
};

nlohmann::json to_json(const RoundMetrics& m, const SimulationConfig& c);

struct ExperimentSummary {
  std::string strategy;
  std::string aggregation;
  std::string distribution;
  std::uint64_t seed = 0;
  int rounds = 0;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  double final_loss = 0.0;
  double mean_utilization = 0.0;
  int excluded_client_rounds = 0;
};

nlohmann::json to_json(const ExperimentSummary& s);

// Runs all rounds. Writes metrics.jsonl, timing.jsonl, summary.json,
// partition.json, config.json and (for the knapsack strategy)
// score_history.jsonl into `out_dir` when it is non-empty. Progress and
// warnings go to `log` when given.
ExperimentSummary run_experiment(const SimulationConfig& config,
                                 const std::filesystem::path& out_dir, std::ostream* log = nullptr);

}  // namespace fedpilot
