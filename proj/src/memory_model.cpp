// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/memory_model.hpp"

#include <algorithm>
#include <numeric>

#include "fedpilot/errors.hpp"

namespace fedpilot {

namespace {

void require_positive(std::int64_t v, const char* name) {
  if (v <= 0) {
    throw PreconditionError(std::string("profile field '") + name + "' must be positive");
  }
}

void check_map(const ModelProfile& profile, const AllocationMap& map) {
  if (map.size() != profile.num_blocks) {
    throw ProfileMismatch("allocation map has " + std::to_string(map.size()) +
                          " blocks, profile has " + std::to_string(profile.num_blocks));
  }
}

// Sum of static elements from block `from` (0-based) to the last block.
std::int64_t static_suffix(const ModelProfile& profile, int from) {
  return std::accumulate(profile.static_act_per_sample.begin() + from,
                         profile.static_act_per_sample.end(), std::int64_t{0});
}

}  // namespace

void ModelProfile::validate() const {
  require_positive(num_blocks, "num_blocks");
  require_positive(hidden_size, "hidden_size");
  require_positive(seq_len, "seq_len");
  require_positive(lora_rank, "lora_rank");
  require_positive(bytes_per_elem, "bytes_per_elem");
  require_positive(optimizer_states, "optimizer_states");
  require_positive(frozen_param_bytes, "frozen_param_bytes");
  require_positive(lora_param_count_per_block, "lora_param_count_per_block");
  require_positive(context_bytes, "context_bytes");
  const auto l = static_cast<std::size_t>(num_blocks);
  if (static_act_per_sample.size() != l || dynamic_act_per_sample.size() != l) {
    throw PreconditionError("activation lists must have exactly num_blocks entries");
  }
  for (std::size_t j = 0; j < l; ++j) {
    require_positive(static_act_per_sample[j], "static_act_per_sample");
    require_positive(dynamic_act_per_sample[j], "dynamic_act_per_sample");
  }
}

AllocationMap AllocationMap::from_string(std::string_view bits) {
  std::vector<bool> out;
  out.reserve(bits.size());
  for (char c : bits) {
    if (c == '0') {
      out.push_back(false);
    } else if (c == '1') {
      out.push_back(true);
    } else {
      throw ParseError("allocation map must contain only '0'/'1', got '" + std::string(bits) +
                       "'");
    }
  }
  return AllocationMap(std::move(out));
}

std::string AllocationMap::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (bool b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

int AllocationMap::count() const {
  return static_cast<int>(std::count(bits_.begin(), bits_.end(), true));
}

std::optional<int> AllocationMap::earliest() const {
  for (std::size_t j = 0; j < bits_.size(); ++j) {
    if (bits_[j]) return static_cast<int>(j);
  }
  return std::nullopt;
}

std::vector<int> AllocationMap::trainable() const {
  std::vector<int> out;
  for (std::size_t j = 0; j < bits_.size(); ++j) {
    if (bits_[j]) out.push_back(static_cast<int>(j));
  }
  return out;
}

std::int64_t reference_static_elems(std::int64_t seq_len, std::int64_t hidden) {
  return 9 * seq_len * hidden + 2 * seq_len * seq_len;
}

std::int64_t reference_dynamic_elems(std::int64_t seq_len, std::int64_t hidden,
                                     std::int64_t rank) {
  return 2 * seq_len * hidden + 2 * seq_len * rank;
}

std::int64_t reference_lora_params(std::int64_t hidden, std::int64_t rank) {
  return 2 * (hidden * rank + rank * hidden);
}

ModelProfile generated_profile(int num_blocks, std::int64_t hidden, std::int64_t seq_len,
                               std::int64_t rank, std::int64_t bytes_per_elem,
                               std::int64_t optimizer_states, Bytes frozen_param_bytes,
                               Bytes context_bytes) {
  ModelProfile p;
  p.num_blocks = num_blocks;
  p.hidden_size = hidden;
  p.seq_len = seq_len;
  p.lora_rank = rank;
  p.bytes_per_elem = bytes_per_elem;
  p.optimizer_states = optimizer_states;
  p.frozen_param_bytes = frozen_param_bytes;
  p.lora_param_count_per_block = reference_lora_params(hidden, rank);
  p.static_act_per_sample.assign(static_cast<std::size_t>(num_blocks),
                                 reference_static_elems(seq_len, hidden));
  p.dynamic_act_per_sample.assign(static_cast<std::size_t>(num_blocks),
                                  reference_dynamic_elems(seq_len, hidden, rank));
  p.context_bytes = context_bytes;
  p.validate();
  return p;
}

ModelProfile reference_vit_profile(const ReferenceProfileOptions& opts) {
  constexpr std::int64_t kElem = 4;
  return generated_profile(/*num_blocks=*/12, /*hidden=*/768, /*seq_len=*/197, /*rank=*/16,
                           kElem, /*optimizer_states=*/3, opts.frozen_param_count * kElem,
                           opts.context_bytes);
}

MemoryBreakdown total_memory(const ModelProfile& profile, const AllocationMap& map,
                             std::int64_t batch) {
  check_map(profile, map);
  if (batch < 1) throw PreconditionError("batch must be >= 1");

  const std::int64_t eta = profile.bytes_per_elem;
  MemoryBreakdown m;
  m.params_bytes = profile.frozen_param_bytes +
                   static_cast<Bytes>(profile.num_blocks) * profile.lora_param_count_per_block * eta;
  std::int64_t dynamic_elems = 0;
  for (int j : map.trainable()) {
    dynamic_elems += profile.dynamic_act_per_sample[static_cast<std::size_t>(j)];
  }
  // Optimizer states are per parameter; no batch factor.
  m.optimizer_bytes =
      profile.optimizer_states * eta * profile.lora_param_count_per_block * map.count();
  m.dynamic_act_bytes = batch * eta * dynamic_elems;
  if (auto first = map.earliest()) {
    m.static_act_bytes = batch * eta * static_suffix(profile, *first);
  }
  m.context_bytes = profile.context_bytes;
  m.total_bytes = m.params_bytes + m.optimizer_bytes + m.dynamic_act_bytes + m.static_act_bytes +
                  m.context_bytes;
  return m;
}

Bytes marginal_weight(const ModelProfile& profile, const AllocationMap& current, int candidate,
                      std::int64_t batch) {
  check_map(profile, current);
  if (candidate < 0 || candidate >= profile.num_blocks) {
    throw PreconditionError("candidate block " + std::to_string(candidate) + " out of range");
  }
  if (current.test(candidate)) {
    throw PreconditionError("candidate block " + std::to_string(candidate) +
                            " is already trainable");
  }
  if (batch < 1) throw PreconditionError("batch must be >= 1");

  const auto first = current.earliest();
  if (!first) {
    return total_memory(profile, AllocationMap(profile.num_blocks).with(candidate), batch)
        .total_bytes;
  }
  const std::int64_t eta = profile.bytes_per_elem;
  const auto jc = static_cast<std::size_t>(candidate);
  Bytes w = profile.optimizer_states * eta * profile.lora_param_count_per_block +
            batch * eta * profile.dynamic_act_per_sample[jc];
  if (candidate < *first) {
    // Static frontier moves up to the candidate: blocks [candidate, first).
    std::int64_t extra = 0;
    for (int j = candidate; j < *first; ++j) {
      extra += profile.static_act_per_sample[static_cast<std::size_t>(j)];
    }
    w += batch * eta * extra;
  }
  return w;
}

AllocationMap naive_map(NaiveKind kind, int u, int num_blocks) {
  if (num_blocks < 0 || u < 0 || u > num_blocks) {
    throw PreconditionError("u=" + std::to_string(u) + " out of range [0, " +
                            std::to_string(num_blocks) + "]");
  }
  AllocationMap m(num_blocks);
  switch (kind) {
    case NaiveKind::kMemorySaver:
      for (int j = num_blocks - u; j < num_blocks; ++j) m.set(j);
      break;
    case NaiveKind::kMemoryHogger:
      for (int j = 0; j < u; ++j) m.set(j);
      break;
    case NaiveKind::kExclusive:
    case NaiveKind::kFull:
      m = AllocationMap(num_blocks, true);
      break;
  }
  return m;
}

std::optional<int> max_feasible_u(const ModelProfile& profile, NaiveKind kind, Bytes capacity,
                                  std::int64_t batch) {
  const int l = profile.num_blocks;
  auto fits = [&](int u) {
    return total_memory(profile, naive_map(kind, u, l), batch).total_bytes <= capacity;
  };
  if (!fits(0)) return std::nullopt;
  // Memory is monotone in u for both suffix and prefix maps.
  int lo = 0;
  int hi = l;
  while (lo < hi) {
    const int mid = lo + (hi - lo + 1) / 2;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

namespace {

std::vector<std::int64_t> int_list(const nlohmann::json& j, const char* key) {
  std::vector<std::int64_t> out;
  for (const auto& v : j.at(key)) out.push_back(v.get<std::int64_t>());
  return out;
}

}  // namespace

ModelProfile profile_from_json(const nlohmann::json& j) {
  if (j.is_string() && j.get<std::string>() == "vit-base") return reference_vit_profile();
  if (!j.is_object()) throw ConfigError("profile: expected an object");
  try {
    ModelProfile p;
    p.num_blocks = j.at("num_blocks").get<int>();
    p.hidden_size = j.at("hidden_size").get<std::int64_t>();
    p.seq_len = j.at("seq_len").get<std::int64_t>();
    p.lora_rank = j.at("lora_rank").get<std::int64_t>();
    p.bytes_per_elem = j.value("bytes_per_elem", std::int64_t{4});
    p.optimizer_states = j.value("optimizer_states", std::int64_t{3});
    if (j.contains("frozen_param_bytes")) {
      p.frozen_param_bytes = j.at("frozen_param_bytes").get<Bytes>();
    } else {
      p.frozen_param_bytes = j.at("frozen_param_count").get<std::int64_t>() * p.bytes_per_elem;
    }
    p.lora_param_count_per_block =
        j.value("lora_param_count_per_block", reference_lora_params(p.hidden_size, p.lora_rank));
    const auto l = static_cast<std::size_t>(std::max(p.num_blocks, 0));
    if (j.contains("static_act_per_sample")) {
      p.static_act_per_sample = int_list(j, "static_act_per_sample");
    } else {
      p.static_act_per_sample.assign(l, reference_static_elems(p.seq_len, p.hidden_size));
    }
    if (j.contains("dynamic_act_per_sample")) {
      p.dynamic_act_per_sample = int_list(j, "dynamic_act_per_sample");
    } else {
      p.dynamic_act_per_sample.assign(
          l, reference_dynamic_elems(p.seq_len, p.hidden_size, p.lora_rank));
    }
    if (j.contains("context_bytes")) {
      p.context_bytes = j.at("context_bytes").get<Bytes>();
    } else {
      p.context_bytes = static_cast<Bytes>(j.at("context_mb").get<double>() * kMegabyte);
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("profile: ") + e.what());
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("profile: ") + e.what());
  }
}

nlohmann::json to_json(const ModelProfile& p) {
  return {
      {"num_blocks", p.num_blocks},
      {"hidden_size", p.hidden_size},
      {"seq_len", p.seq_len},
      {"lora_rank", p.lora_rank},
      {"bytes_per_elem", p.bytes_per_elem},
      {"optimizer_states", p.optimizer_states},
      {"frozen_param_bytes", p.frozen_param_bytes},
      {"lora_param_count_per_block", p.lora_param_count_per_block},
      {"static_act_per_sample", p.static_act_per_sample},
      {"dynamic_act_per_sample", p.dynamic_act_per_sample},
      {"context_bytes", p.context_bytes},
  };
}

nlohmann::json to_json(const MemoryBreakdown& m) {
  return {
      {"params_bytes", m.params_bytes},
      {"optimizer_bytes", m.optimizer_bytes},
      {"dynamic_act_bytes", m.dynamic_act_bytes},
      {"static_act_bytes", m.static_act_bytes},
      {"context_bytes", m.context_bytes},
      {"total_bytes", m.total_bytes},
      {"total_gb", to_gb(m.total_bytes)},
  };
}

}  // namespace fedpilot
