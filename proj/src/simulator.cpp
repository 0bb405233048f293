// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <thread>

#include "fedpilot/allocator.hpp"
#include "fedpilot/errors.hpp"

namespace fedpilot {

Strategy parse_strategy(std::string_view name) {
  if (name == "fedpilot") return Strategy::kFedPilot;
  if (name == "fedra_random") return Strategy::kFedRaRandom;
  if (name == "ms" || name == "memory_saver") return Strategy::kMemorySaver;
  if (name == "mh" || name == "memory_hogger") return Strategy::kMemoryHogger;
  if (name == "el" || name == "exclusive") return Strategy::kExclusive;
  if (name == "full") return Strategy::kFull;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kFedPilot:
      return "fedpilot";
    case Strategy::kFedRaRandom:
      return "fedra_random";
    case Strategy::kMemorySaver:
      return "ms";
    case Strategy::kMemoryHogger:
      return "mh";
    case Strategy::kExclusive:
      return "el";
    case Strategy::kFull:
      return "full";
  }
  return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a,
                          std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ stream);
  h = mix(h ^ a);
  return mix(h ^ b);
}

namespace {

enum Stream : std::uint64_t {
  kModelStream = 1,
  kDataStream,
  kPartitionStream,
  kIgStream,
  kSampleStream,
  kTrainStream,
  kAllocStream,
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results are written
// by index, so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<int> assign_capacity_levels(int num_clients,
                                        const std::array<int, kNumCapacityLevels>& ratio) {
  const int total = std::accumulate(ratio.begin(), ratio.end(), 0);
  if (total <= 0) throw PreconditionError("level ratio must have a positive sum");
  std::vector<int> levels;
  levels.reserve(static_cast<std::size_t>(num_clients));
  for (int k = 0; k < kNumCapacityLevels; ++k) {
    const int want = (ratio[static_cast<std::size_t>(k)] * num_clients + total - 1) / total;
    for (int i = 0; i < want && static_cast<int>(levels.size()) < num_clients; ++i) {
      levels.push_back(k + 1);
    }
  }
  // Ceil rounding over-covers, but keep the lowest level as the remainder sink.
  while (static_cast<int>(levels.size()) < num_clients) levels.push_back(1);
  return levels;
}

std::array<Bytes, kNumCapacityLevels> scaled_level_capacities(const ModelProfile& profile,
                                                              std::int64_t batch, double headroom) {
  const int l = profile.num_blocks;
  const auto low = static_cast<double>(
      total_memory(profile, naive_map(NaiveKind::kMemorySaver, l / 3, l), batch).total_bytes);
  const auto high = static_cast<double>(
      total_memory(profile, naive_map(NaiveKind::kFull, l, l), batch).total_bytes);
  std::array<Bytes, kNumCapacityLevels> caps{};
  for (int k = 0; k < kNumCapacityLevels; ++k) {
    const double t = static_cast<double>(k) / (kNumCapacityLevels - 1);
    caps[static_cast<std::size_t>(k)] = static_cast<Bytes>(std::floor(headroom * (low + t * (high - low))));
  }
  return caps;
}

AllocationDecision baseline_allocation(Strategy strategy, const ClientSpec& client,
                                       const ModelProfile& profile, std::int64_t batch,
                                       std::mt19937_64& rng) {
  const int l = profile.num_blocks;
  const AllocationMap full(l, true);
  auto fits = [&](const AllocationMap& m) {
    return total_memory(profile, m, batch).total_bytes <= client.capacity_bytes;
  };
  AllocationDecision d;
  switch (strategy) {
    case Strategy::kFull:
      d.map = full;
      return d;
    case Strategy::kExclusive:
      if (fits(full)) {
        d.map = full;
      } else {
        d.note = "cannot train all modules";
      }
      return d;
    case Strategy::kMemorySaver:
    case Strategy::kMemoryHogger: {
      const NaiveKind kind =
          strategy == Strategy::kMemorySaver ? NaiveKind::kMemorySaver : NaiveKind::kMemoryHogger;
      if (auto u = max_feasible_u(profile, kind, client.capacity_bytes, batch)) {
        d.map = naive_map(kind, *u, l);
      } else {
        d.note = "base memory exceeds capacity";
      }
      return d;
    }
    case Strategy::kFedRaRandom: {
      std::bernoulli_distribution coin(0.5);
      for (int draw = 0; draw < kRandomAllocationDraws; ++draw) {
        AllocationMap m(l);
        for (int j = 0; j < l; ++j) m.set(j, coin(rng));
        if (fits(m)) {
          d.map = std::move(m);
          return d;
        }
      }
      d.fallback = true;
      d.note = "no feasible random draw, using Memory Saver";
      if (auto u = max_feasible_u(profile, NaiveKind::kMemorySaver, client.capacity_bytes, batch)) {
        d.map = naive_map(NaiveKind::kMemorySaver, *u, l);
      }
      return d;
    }
    case Strategy::kFedPilot:
      break;
  }
  throw PreconditionError("baseline_allocation does not handle the knapsack strategy");
}

Simulator::Simulator(SimulationConfig config)
    : config_(std::move(config)),
      data_(generate(config_.task, derive_seed(config_.seed, kDataStream))),
      base_net_(ToyLoRANet::random(config_.model, derive_seed(config_.seed, kModelStream))) {
  PartitionSpec spec = config_.partition;
  spec.num_clients = config_.num_clients;
  spec.seed = derive_seed(config_.seed, kPartitionStream);
  partition_ = partition(data_.train.labels, config_.task.num_classes, spec);

  if (config_.profile) {
    profile_ = *config_.profile;
  } else {
    const auto& m = config_.model;
    profile_ = generated_profile(m.num_blocks, m.hidden, config_.profile_seq_len, m.rank,
                                 config_.profile_bytes_per_elem, config_.profile_optimizer_states,
                                 base_net_.frozen_param_count() * config_.profile_bytes_per_elem,
                                 config_.profile_context_bytes);
    // One adapter (down + up) per toy block.
    profile_.lora_param_count_per_block = 2LL * m.hidden * m.rank;
  }
  if (profile_.num_blocks != config_.model.num_blocks) {
    throw ConfigError("config.profile.num_blocks: must equal model.num_blocks");
  }

  level_caps_ = config_.level_capacity_bytes
                    ? *config_.level_capacity_bytes
                    : scaled_level_capacities(profile_, config_.train.batch_size,
                                              config_.capacity_headroom);

  const auto levels = assign_capacity_levels(config_.num_clients, config_.level_ratio);
  for (int i = 0; i < config_.num_clients; ++i) {
    ClientSpec c;
    c.id = i;
    c.level = levels[static_cast<std::size_t>(i)];
    c.capacity_bytes = level_caps_[static_cast<std::size_t>(c.level - 1)];
    c.data_indices = partition_[static_cast<std::size_t>(i)];
    c.batch_size = config_.train.batch_size;
    if (c.data_indices.empty()) {
      throw PreconditionError("client " + std::to_string(i) + " received no data");
    }
    std::vector<int> pool = c.data_indices;
    std::mt19937_64 rng(derive_seed(config_.seed, kIgStream, static_cast<std::uint64_t>(i)));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), static_cast<std::size_t>(config_.ig_samples)));
    std::sort(pool.begin(), pool.end());
    c.ig_indices = std::move(pool);
    clients_.push_back(std::move(c));
  }
}

ToyLoRANet Simulator::net_with(const LoraParams& params) const {
  ToyLoRANet net = base_net_;
  net.set_lora(params);
  return net;
}

GlobalState Simulator::initial_state() const {
  return GlobalState{
      0,
      base_net_.lora(),
      zeros_like(base_net_.lora()),
      ScoreHistory(config_.model.num_blocks, config_.t_ig),
      ContributionHistory(config_.model.num_blocks, config_.t_agg),
      std::vector<ClientMemory>(static_cast<std::size_t>(config_.num_clients)),
  };
}

std::vector<int> Simulator::sample_clients(int round) const {
  const int v = config_.num_clients;
  const int k = std::min(v, static_cast<int>(std::ceil(config_.sampling_rate * v - 1e-9)));
  std::vector<int> ids(static_cast<std::size_t>(v));
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(derive_seed(config_.seed, kSampleStream, static_cast<std::uint64_t>(round)));
  // Partial Fisher-Yates.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, v - 1);
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(pick(rng))]);
  }
  ids.resize(static_cast<std::size_t>(std::max(k, 1)));
  std::sort(ids.begin(), ids.end());
  return ids;
}

AllocationDecision Simulator::allocate(const ClientSpec& client, const ClientMemory& memory,
                                       const GlobalState& state, int round) const {
  const std::int64_t batch = config_.train.batch_size;
  if (config_.strategy != Strategy::kFedPilot) {
    std::mt19937_64 rng(derive_seed(config_.seed, kAllocStream, static_cast<std::uint64_t>(client.id),
                                    static_cast<std::uint64_t>(round)));
    return baseline_allocation(config_.strategy, client, profile_, batch, rng);
  }
  AllocationDecision d;
  const bool reuse = memory.last_allocation && memory.allocation_round >= 0 &&
                     round - memory.allocation_round < config_.allocation_cadence;
  if (reuse) {
    d.map = memory.last_allocation;
    return d;
  }
  KnapsackInstance instance{profile_, client.capacity_bytes, batch,
                            value_function(state.scores, memory.last_record, memory.last_allocation),
                            config_.min_normalized_weight};
  try {
    d.map = optimize_allocation(instance).map;
  } catch (const InfeasibleClient& e) {
    d.note = e.what();
  }
  return d;
}

RoundMetrics Simulator::evaluate_state(const GlobalState& state) const {
  RoundMetrics m;
  m.round = state.round;
  const EvalResult ev = evaluate(net_with(state.params), data_.test);
  m.accuracy = ev.accuracy;
  m.loss = ev.loss;
  m.alpha.assign(static_cast<std::size_t>(config_.model.num_blocks), 0);
  return m;
}

RoundMetrics Simulator::run_round(GlobalState& state) const {
  const auto t0 = std::chrono::steady_clock::now();
  const int round = state.round + 1;
  const std::int64_t batch = config_.train.batch_size;

  // (1) sample clients, (2) allocate adapters under each capacity.
  struct Job {
    const ClientSpec* client;
    AllocationMap map;
    std::optional<IGScoreRecord> record;
    SparseDelta delta;
  };
  std::vector<Job> jobs;
  std::vector<ClientRoundInfo> infos;
  for (int id : sample_clients(round)) {
    const ClientSpec& client = clients_[static_cast<std::size_t>(id)];
    const AllocationDecision d = allocate(client, state.clients[static_cast<std::size_t>(id)], state, round);
    ClientRoundInfo info;
    info.client_id = id;
    info.level = client.level;
    info.capacity_bytes = client.capacity_bytes;
    info.fallback = d.fallback;
    if (!d.map) {
      info.excluded = true;
      infos.push_back(std::move(info));
      continue;
    }
    info.map = *d.map;
    info.memory_bytes = total_memory(profile_, *d.map, batch).total_bytes;
    info.utilization =
        static_cast<double>(info.memory_bytes) / static_cast<double>(client.capacity_bytes);
    if (config_.strategy != Strategy::kFull && info.memory_bytes > client.capacity_bytes) {
      throw InvariantViolation("round " + std::to_string(round) + ": client " + std::to_string(id) +
                               " allocation uses " + std::to_string(info.memory_bytes) +
                               " B > capacity " + std::to_string(client.capacity_bytes) + " B");
    }
    jobs.push_back({&client, *d.map, std::nullopt, {}});
    infos.push_back(std::move(info));
  }

  // (3)-(5) local scoring and training on a copy of the global model.
  const ToyLoRANet global_net = net_with(state.params);
  const int threads = config_.threads > 0 ? config_.threads
                                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    Job& job = jobs[i];
    const ClientSpec& c = *job.client;
    if (config_.strategy == Strategy::kFedPilot && !job.map.none()) {
      IGScoreRecord rec = local_ig_scores(global_net, job.map, data_.train.subset(c.ig_indices),
                                          config_.effective_ig_batch());
      rec.round = round;
      rec.client_id = c.id;
      job.record = std::move(rec);
    }
    std::mt19937_64 rng(derive_seed(config_.seed, kTrainStream, static_cast<std::uint64_t>(c.id),
                                    static_cast<std::uint64_t>(round)));
    job.delta = local_train(global_net, data_.train.subset(c.data_indices), job.map, config_.train, rng);
  });

  // (6) aggregate and update the global adapters.
  std::vector<ClientUpdate> updates;
  updates.reserve(jobs.size());
  for (auto& job : jobs) updates.push_back({job.client->id, job.map, std::move(job.delta)});
  AggregationResult agg;
  switch (config_.aggregation) {
    case AggregationRule::kComAgg:
      agg = com_agg(state.prev_delta, updates, state.contributions);
      break;
    case AggregationRule::kComAggFixed:
      agg = com_agg_fixed(state.prev_delta, updates);
      break;
    case AggregationRule::kFedAvg:
      agg = fed_avg(state.params, updates);
      break;
  }
  LoraParams applied = agg.delta;
  if (config_.freeze_unreached_layers) {
    for (std::size_t j = 0; j < applied.size(); ++j) {
      if (agg.alpha[j] == 0) applied[j] = LoraModule::zeros_like(applied[j]);
    }
  }
  state.params = apply_delta(state.params, applied);
  state.prev_delta = std::move(agg.delta);

  std::vector<IGScoreRecord> records;
  for (const auto& job : jobs) {
    auto& mem = state.clients[static_cast<std::size_t>(job.client->id)];
    if (config_.strategy == Strategy::kFedPilot) {
      mem.last_record = job.record.value_or(IGScoreRecord{round, job.client->id, {}});
      if (job.record) records.push_back(*job.record);
      if (mem.allocation_round < 0 || round - mem.allocation_round >= config_.allocation_cadence) {
        mem.allocation_round = round;
      }
    }
    mem.last_allocation = job.map;
  }
  if (config_.strategy == Strategy::kFedPilot) {
    state.scores = update_history(std::move(state.scores), records, round);
  }
  state.round = round;

  RoundMetrics m = evaluate_state(state);
  m.clients = std::move(infos);
  m.alpha = std::move(agg.alpha);
  double util = 0.0;
  int n = 0;
  for (const auto& c : m.clients) {
    if (c.excluded) continue;
    util += c.utilization;
    ++n;
  }
  m.mean_utilization = n > 0 ? util / n : 0.0;
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

nlohmann::json to_json(const RoundMetrics& m, const SimulationConfig& c) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& ci : m.clients) {
    clients.push_back({{"id", ci.client_id},
                       {"level", ci.level},
                       {"excluded", ci.excluded},
                       {"fallback", ci.fallback},
                       {"map", ci.excluded ? std::string() : ci.map.to_string()},
                       {"memory_bytes", ci.memory_bytes},
                       {"capacity_bytes", ci.capacity_bytes},
                       {"utilization", ci.utilization}});
  }
  // Wall time is kept out of this record so the stream is reproducible.
  return {{"round", m.round},
          {"strategy", to_string(c.strategy)},
          {"aggregation", to_string(c.aggregation)},
          {"distribution", c.distribution_label()},
          {"seed", c.seed},
          {"accuracy", m.accuracy},
          {"loss", m.loss},
          {"mean_utilization", m.mean_utilization},
          {"alpha", m.alpha},
          {"clients", std::move(clients)}};
}

nlohmann::json to_json(const ExperimentSummary& s) {
  return {{"strategy", s.strategy},
          {"aggregation", s.aggregation},
          {"distribution", s.distribution},
          {"seed", s.seed},
          {"rounds", s.rounds},
          {"final_accuracy", s.final_accuracy},
          {"best_accuracy", s.best_accuracy},
          {"final_loss", s.final_loss},
          {"mean_utilization", s.mean_utilization},
          {"excluded_client_rounds", s.excluded_client_rounds}};
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  return os;
}

}  // namespace

ExperimentSummary run_experiment(const SimulationConfig& config,
                                 const std::filesystem::path& out_dir, std::ostream* log) {
  const Simulator sim(config);
  const bool write = !out_dir.empty();
  std::ofstream metrics_os;
  std::ofstream timing_os;
  std::ofstream scores_os;
  if (write) {
    std::filesystem::create_directories(out_dir);
    open_out(out_dir / "config.json") << to_json(config).dump(2) << '\n';
    PartitionSpec spec = config.partition;
    spec.num_clients = config.num_clients;
    spec.seed = derive_seed(config.seed, kPartitionStream);
    open_out(out_dir / "partition.json") << partition_manifest(spec, sim.client_partition()).dump() << '\n';
    metrics_os = open_out(out_dir / "metrics.jsonl");
    timing_os = open_out(out_dir / "timing.jsonl");
    if (config.strategy == Strategy::kFedPilot) scores_os = open_out(out_dir / "score_history.jsonl");
  }

  ExperimentSummary s;
  s.strategy = to_string(config.strategy);
  s.aggregation = to_string(config.aggregation);
  s.distribution = config.distribution_label();
  s.seed = config.seed;
  s.rounds = config.rounds;

  GlobalState state = sim.initial_state();
  RoundMetrics m = sim.evaluate_state(state);
  double util_sum = 0.0;
  int util_rounds = 0;
  s.best_accuracy = m.accuracy;
  for (int t = 0;; ++t) {
    if (write) {
      metrics_os << to_json(m, config).dump() << '\n';
      timing_os << nlohmann::json{{"round", m.round}, {"wall_seconds", m.wall_seconds}}.dump() << '\n';
      if (scores_os.is_open() && t > 0) scores_os << to_json(state.scores, state.round).dump() << '\n';
      if (config.checkpoint_every > 0 && t > 0 && t % config.checkpoint_every == 0) {
        std::filesystem::create_directories(out_dir / "checkpoints");
        open_out(out_dir / "checkpoints" / ("round_" + std::to_string(t) + ".json"))
            << nlohmann::json{{"round", t},
                              {"params", to_json(state.params)},
                              {"prev_delta", to_json(state.prev_delta)}}
                   .dump()
            << '\n';
      }
    }
    s.final_accuracy = m.accuracy;
    s.final_loss = m.loss;
    s.best_accuracy = std::max(s.best_accuracy, m.accuracy);
    if (t > 0) {
      for (const auto& c : m.clients) {
        if (c.excluded) {
          ++s.excluded_client_rounds;
          if (log) *log << "warning: round " << m.round << " client " << c.client_id << " excluded\n";
        }
      }
      if (std::any_of(m.clients.begin(), m.clients.end(), [](const auto& c) { return !c.excluded; })) {
        util_sum += m.mean_utilization;
        ++util_rounds;
      }
    }
    if (t == config.rounds) break;
    m = sim.run_round(state);
    if (log) {
      *log << "round " << m.round << " acc=" << m.accuracy << " loss=" << m.loss
           << " util=" << m.mean_utilization << '\n';
    }
  }
  s.mean_utilization = util_rounds > 0 ? util_sum / util_rounds : 0.0;
  if (write) open_out(out_dir / "summary.json") << to_json(s).dump(2) << '\n';
  return s;
}

}  // namespace fedpilot
