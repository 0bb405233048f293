// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <algorithm>
#include <initializer_list>
#include <sstream>

#include "fedpilot/errors.hpp"
#include "fedpilot/simulator.hpp"

namespace fedpilot {

namespace {

// Reads one JSON object while tracking its dotted path for error messages.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  T get(const char* key, T fallback) const {
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(key, "has the wrong type");
    }
  }

  FieldReader child(const char* key) const { return FieldReader(j_.at(key), field(key)); }
  const nlohmann::json& raw(const char* key) const { return j_.at(key); }

  void only(std::initializer_list<const char*> known) const {
    for (const auto& [k, v] : j_.items()) {
      if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
        throw ConfigError(path_ + "." + k + ": unknown field");
      }
    }
  }

  std::string field(const char* key) const { return path_ + "." + key; }

  [[noreturn]] void fail(const char* key, const std::string& msg) const {
    throw ConfigError(field(key) + ": " + msg);
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

template <typename T>
void require(bool ok, const FieldReader& r, const char* key, const T& msg) {
  if (!ok) r.fail(key, msg);
}

}  // namespace

std::string SimulationConfig::distribution_label() const {
  std::ostringstream os;
  switch (partition.scheme) {
    case PartitionScheme::kIid:
      os << "iid";
      break;
    case PartitionScheme::kPathological:
      os << "pathological(" << partition.classes_per_client << ")";
      break;
    case PartitionScheme::kDirichlet:
      os << "dirichlet(" << partition.dirichlet_alpha << ")";
      break;
    case PartitionScheme::kPathologicalDirichlet:
      os << "pathological(" << partition.classes_per_client << ")+dirichlet("
         << partition.dirichlet_alpha << ")";
      break;
  }
  return os.str();
}

SimulationConfig config_from_json(const nlohmann::json& j) {
  SimulationConfig c;
  const FieldReader root(j, "config");
  root.only({"seed", "rounds", "strategy", "aggregation", "freeze_unreached_layers", "clients",
             "model", "profile", "task", "partition", "train", "t_ig", "t_agg", "ig_samples",
             "ig_batch_size", "allocation_cadence", "min_normalized_weight", "checkpoint_every", "threads"});

  c.seed = root.get<std::uint64_t>("seed", c.seed);
  c.rounds = root.get("rounds", c.rounds);
  require(c.rounds >= 0, root, "rounds", "must be >= 0");
  try {
    c.strategy = parse_strategy(root.get<std::string>("strategy", "fedpilot"));
  } catch (const ConfigError& e) {
    root.fail("strategy", e.what());
  }
  try {
    c.aggregation = parse_aggregation_rule(root.get<std::string>("aggregation", "comagg"));
  } catch (const ConfigError& e) {
    root.fail("aggregation", e.what());
  }
  c.freeze_unreached_layers = root.get("freeze_unreached_layers", c.freeze_unreached_layers);

  if (root.has("clients")) {
    const auto r = root.child("clients");
    r.only({"count", "sampling_rate", "level_ratio", "capacity_headroom", "level_capacity_bytes"});
    c.num_clients = r.get("count", c.num_clients);
    require(c.num_clients >= 1, r, "count", "must be >= 1");
    c.sampling_rate = r.get("sampling_rate", c.sampling_rate);
    require(c.sampling_rate > 0.0 && c.sampling_rate <= 1.0, r, "sampling_rate", "must be in (0, 1]");
    c.level_ratio = r.get("level_ratio", c.level_ratio);
    require(std::all_of(c.level_ratio.begin(), c.level_ratio.end(), [](int v) { return v >= 0; }) &&
                std::any_of(c.level_ratio.begin(), c.level_ratio.end(), [](int v) { return v > 0; }),
            r, "level_ratio", "needs non-negative entries with a positive sum");
    c.capacity_headroom = r.get("capacity_headroom", c.capacity_headroom);
    require(c.capacity_headroom > 0.0, r, "capacity_headroom", "must be > 0");
    if (r.has("level_capacity_bytes")) {
      c.level_capacity_bytes = r.get("level_capacity_bytes", std::array<Bytes, kNumCapacityLevels>{});
      require(std::all_of(c.level_capacity_bytes->begin(), c.level_capacity_bytes->end(),
                          [](Bytes b) { return b > 0; }),
              r, "level_capacity_bytes", "entries must be positive");
    }
  }

  if (root.has("model")) {
    const auto r = root.child("model");
    r.only({"num_blocks", "hidden", "rank", "input_dim", "num_classes", "lora_alpha", "weight_gain",
            "bias_std", "lora_init_std", "activation"});
    try {
      c.model = toy_config_from_json(root.raw("model"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config.model: " + std::string(e.what()));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config.") + e.what());
    }
    require(c.model.num_blocks >= 1, r, "num_blocks", "must be >= 1");
    require(c.model.hidden >= 1, r, "hidden", "must be >= 1");
    require(c.model.rank >= 1, r, "rank", "must be >= 1");
    require(c.model.input_dim >= 1, r, "input_dim", "must be >= 1");
    require(c.model.num_classes >= 2, r, "num_classes", "must be >= 2");
  }

  if (root.has("profile")) {
    const auto r = root.child("profile");
    if (r.has("num_blocks")) {
      try {
        c.profile = profile_from_json(root.raw("profile"));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("config.") + e.what());
      }
      require(c.profile->num_blocks == c.model.num_blocks, r, "num_blocks",
              "must equal model.num_blocks");
    } else {
      r.only({"seq_len", "bytes_per_elem", "optimizer_states", "context_bytes"});
      c.profile_seq_len = r.get("seq_len", c.profile_seq_len);
      require(c.profile_seq_len >= 1, r, "seq_len", "must be >= 1");
      c.profile_bytes_per_elem = r.get("bytes_per_elem", c.profile_bytes_per_elem);
      require(c.profile_bytes_per_elem >= 1, r, "bytes_per_elem", "must be >= 1");
      c.profile_optimizer_states = r.get("optimizer_states", c.profile_optimizer_states);
      require(c.profile_optimizer_states >= 1, r, "optimizer_states", "must be >= 1");
      c.profile_context_bytes = r.get("context_bytes", c.profile_context_bytes);
      require(c.profile_context_bytes >= 1, r, "context_bytes", "must be >= 1");
    }
  }

  if (root.has("task")) {
    const auto r = root.child("task");
    r.only({"num_classes", "feature_dim", "samples_per_class", "center_scale", "noise_scale"});
    c.task.num_classes = r.get("num_classes", c.task.num_classes);
    c.task.feature_dim = r.get("feature_dim", c.task.feature_dim);
    c.task.samples_per_class = r.get("samples_per_class", c.task.samples_per_class);
    require(c.task.samples_per_class >= 2, r, "samples_per_class", "must be >= 2");
    c.task.center_scale = r.get("center_scale", c.task.center_scale);
    require(c.task.center_scale > 0.0, r, "center_scale", "must be > 0");
    c.task.noise_scale = r.get("noise_scale", c.task.noise_scale);
    require(c.task.noise_scale >= 0.0, r, "noise_scale", "must be >= 0");
  }
  if (c.task.num_classes != c.model.num_classes) {
    throw ConfigError("config.task.num_classes: must equal model.num_classes");
  }
  if (c.task.feature_dim != c.model.input_dim) {
    throw ConfigError("config.task.feature_dim: must equal model.input_dim");
  }

  if (root.has("partition")) {
    const auto r = root.child("partition");
    r.only({"scheme", "classes_per_client", "dirichlet_alpha"});
    try {
      c.partition.scheme = parse_partition_scheme(r.get<std::string>("scheme", "iid"));
    } catch (const ConfigError& e) {
      r.fail("scheme", e.what());
    }
    c.partition.classes_per_client = r.get("classes_per_client", c.partition.classes_per_client);
    require(c.partition.classes_per_client >= 1 &&
                c.partition.classes_per_client <= c.task.num_classes,
            r, "classes_per_client", "must be in [1, num_classes]");
    c.partition.dirichlet_alpha = r.get("dirichlet_alpha", c.partition.dirichlet_alpha);
    require(c.partition.dirichlet_alpha > 0.0, r, "dirichlet_alpha", "must be > 0");
  }

  if (root.has("train")) {
    const auto r = root.child("train");
    r.only({"lr", "epochs", "batch_size"});
    c.train.lr = r.get("lr", c.train.lr);
    require(c.train.lr > 0.0, r, "lr", "must be > 0");
    c.train.epochs = r.get("epochs", c.train.epochs);
    require(c.train.epochs >= 1, r, "epochs", "must be >= 1");
    c.train.batch_size = r.get("batch_size", c.train.batch_size);
    require(c.train.batch_size >= 1, r, "batch_size", "must be >= 1");
  }

  c.t_ig = root.get("t_ig", c.t_ig);
  require(c.t_ig >= 1, root, "t_ig", "must be >= 1");
  c.t_agg = root.get("t_agg", c.t_agg);
  require(c.t_agg >= 1, root, "t_agg", "must be >= 1");
  c.ig_samples = root.get("ig_samples", c.ig_samples);
  require(c.ig_samples >= 1, root, "ig_samples", "must be >= 1");
  c.ig_batch_size = root.get("ig_batch_size", c.ig_batch_size);
  require(c.ig_batch_size >= 0, root, "ig_batch_size", "must be >= 0");
  c.allocation_cadence = root.get("allocation_cadence", c.allocation_cadence);
  require(c.allocation_cadence >= 1, root, "allocation_cadence", "must be >= 1");
  c.min_normalized_weight = root.get("min_normalized_weight", c.min_normalized_weight);
  require(c.min_normalized_weight > 0.0 && c.min_normalized_weight <= 1.0, root,
          "min_normalized_weight", "must be in (0, 1]");
  c.checkpoint_every = root.get("checkpoint_every", c.checkpoint_every);
  require(c.checkpoint_every >= 0, root, "checkpoint_every", "must be >= 0");
  c.threads = root.get("threads", c.threads);
  require(c.threads >= 0, root, "threads", "must be >= 0");

  c.partition.num_clients = c.num_clients;
  c.partition.min_samples = 2 * c.train.batch_size;
  return c;
}

nlohmann::json to_json(const SimulationConfig& c) {
  nlohmann::json clients = {{"count", c.num_clients},
                            {"sampling_rate", c.sampling_rate},
                            {"level_ratio", c.level_ratio},
                            {"capacity_headroom", c.capacity_headroom}};
  if (c.level_capacity_bytes) clients["level_capacity_bytes"] = *c.level_capacity_bytes;
  nlohmann::json profile;
  if (c.profile) {
    profile = to_json(*c.profile);
  } else {
    profile = {{"seq_len", c.profile_seq_len},
               {"bytes_per_elem", c.profile_bytes_per_elem},
               {"optimizer_states", c.profile_optimizer_states},
               {"context_bytes", c.profile_context_bytes}};
  }
  return {
      {"seed", c.seed},
      {"rounds", c.rounds},
      {"strategy", to_string(c.strategy)},
      {"aggregation", to_string(c.aggregation)},
      {"freeze_unreached_layers", c.freeze_unreached_layers},
      {"clients", std::move(clients)},
      {"model", to_json(c.model)},
      {"profile", std::move(profile)},
      {"task",
       {{"num_classes", c.task.num_classes},
        {"feature_dim", c.task.feature_dim},
        {"samples_per_class", c.task.samples_per_class},
        {"center_scale", c.task.center_scale},
        {"noise_scale", c.task.noise_scale}}},
      {"partition",
       {{"scheme", to_string(c.partition.scheme)},
        {"classes_per_client", c.partition.classes_per_client},
        {"dirichlet_alpha", c.partition.dirichlet_alpha}}},
      {"train", {{"lr", c.train.lr}, {"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}}},
      {"t_ig", c.t_ig},
      {"t_agg", c.t_agg},
      {"ig_samples", c.ig_samples},
      {"ig_batch_size", c.ig_batch_size},
      {"allocation_cadence", c.allocation_cadence},
      {"min_normalized_weight", c.min_normalized_weight},
      {"checkpoint_every", c.checkpoint_every},
      {"threads", c.threads},
  };
}

}  // namespace fedpilot
