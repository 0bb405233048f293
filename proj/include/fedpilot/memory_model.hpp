// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytical GPU-memory model for partial LoRA fine-tuning.
//
// Memory is split into frozen+LoRA parameters, optimizer states for the
// trainable LoRA modules, activations and a constant context term. Activations
// come in two flavours:
//   * dynamic: only kept for blocks whose LoRA module is trainable;
//   * static: needed by nonlinear derivatives, so every block from the
//     earliest trainable one to the last must keep them.
//
// All arithmetic is exact integer math in bytes. Blocks are 0-based in the
// API; block j here is block j+1 in the usual 1-based notation.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fedpilot {

using Bytes = std::int64_t;

inline constexpr Bytes kMegabyte = 1'000'000;
inline constexpr Bytes kGigabyte = 1'000'000'000;

inline double to_gb(Bytes b) { return static_cast<double>(b) / static_cast<double>(kGigabyte); }

struct ModelProfile {
  int num_blocks = 0;
  std::int64_t hidden_size = 0;
  std::int64_t seq_len = 0;
  std::int64_t lora_rank = 0;
  std::int64_t bytes_per_elem = 4;
  std::int64_t optimizer_states = 3;
  Bytes frozen_param_bytes = 0;
  std::int64_t lora_param_count_per_block = 0;
  std::vector<std::int64_t> static_act_per_sample;   // elements per sample, per block
  std::vector<std::int64_t> dynamic_act_per_sample;  // elements per sample, per block
  Bytes context_bytes = 0;

  // Throws PreconditionError when a count is non-positive or a list has the
  // wrong length.
  void validate() const;

  ModelProfile with_context(Bytes context) const {
    ModelProfile p = *this;
    p.context_bytes = context;
    return p;
  }
};

class AllocationMap {
 public:
  AllocationMap() = default;
  explicit AllocationMap(int num_blocks, bool value = false)
      : bits_(static_cast<std::size_t>(num_blocks), value) {}
  explicit AllocationMap(std::vector<bool> bits) : bits_(std::move(bits)) {}

  // Parses "001111"; leftmost character is block 0.
  static AllocationMap from_string(std::string_view bits);
  std::string to_string() const;

  int size() const { return static_cast<int>(bits_.size()); }
  bool test(int j) const { return bits_.at(static_cast<std::size_t>(j)); }
  bool operator[](int j) const { return bits_[static_cast<std::size_t>(j)]; }
  void set(int j, bool value = true) { bits_.at(static_cast<std::size_t>(j)) = value; }
  AllocationMap with(int j) const {
    AllocationMap m = *this;
    m.set(j);
    return m;
  }

  int count() const;
  bool none() const { return count() == 0; }
  // Smallest trainable block index, or nullopt for the empty map.
  std::optional<int> earliest() const;
  std::vector<int> trainable() const;

  bool operator==(const AllocationMap&) const = default;

 private:
  std::vector<bool> bits_;
};

struct MemoryBreakdown {
  Bytes params_bytes = 0;
  Bytes optimizer_bytes = 0;
  Bytes dynamic_act_bytes = 0;
  Bytes static_act_bytes = 0;
  Bytes context_bytes = 0;
  Bytes total_bytes = 0;

  Bytes activation_bytes() const { return dynamic_act_bytes + static_act_bytes; }
};

enum class NaiveKind { kMemorySaver, kMemoryHogger, kExclusive, kFull };

// Per-sample activation sizes of a transformer block with LoRA on query and
// value projections.
std::int64_t reference_static_elems(std::int64_t seq_len, std::int64_t hidden);
std::int64_t reference_dynamic_elems(std::int64_t seq_len, std::int64_t hidden,
                                     std::int64_t rank);
// Query and value adapters, each an H x r and an r x H factor.
std::int64_t reference_lora_params(std::int64_t hidden, std::int64_t rank);

// Context memory (MB) of the ViT-base reference per capacity level 1..4.
inline constexpr std::array<Bytes, 4> kVitContextMb = {380, 2280, 4170, 5800};
inline constexpr std::int64_t kVitFrozenParamCount = 86'389'248;

struct ReferenceProfileOptions {
  Bytes context_bytes = kVitContextMb[3] * kMegabyte;
  std::int64_t frozen_param_count = kVitFrozenParamCount;
};

// ViT-base with rank-16 LoRA on query/value, 32-bit, Adam-style optimizer.
ModelProfile reference_vit_profile(const ReferenceProfileOptions& opts = {});

// Builds a profile whose activation lists follow the reference formulas.
ModelProfile generated_profile(int num_blocks, std::int64_t hidden, std::int64_t seq_len,
                               std::int64_t rank, std::int64_t bytes_per_elem,
                               std::int64_t optimizer_states, Bytes frozen_param_bytes,
                               Bytes context_bytes);

MemoryBreakdown total_memory(const ModelProfile& profile, const AllocationMap& map,
                             std::int64_t batch);

// Item weight used by the allocator. For an empty current map this is the
// full memory of the singleton map {candidate}; otherwise it is the exact
// increase in total memory when `candidate` becomes trainable.
Bytes marginal_weight(const ModelProfile& profile, const AllocationMap& current,
                      int candidate, std::int64_t batch);

AllocationMap naive_map(NaiveKind kind, int u, int num_blocks);

// Largest u such that naive_map(kind, u) fits `capacity`. Returns nullopt
// when even u = 0 does not fit.
std::optional<int> max_feasible_u(const ModelProfile& profile, NaiveKind kind, Bytes capacity,
                                  std::int64_t batch);

ModelProfile profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelProfile& p);
nlohmann::json to_json(const MemoryBreakdown& m);

}  // namespace fedpilot
