// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include "fedpilot/lora.hpp"
#include "fedpilot/memory_model.hpp"

namespace fedpilot {

struct ClientUpdate {
  int client_id = 0;
  AllocationMap allocation;
  SparseDelta delta;  // present exactly for the blocks set in `allocation`
};

// Per-layer participation counts over the last `window_len` rounds.
class ContributionHistory {
 public:
  ContributionHistory(int num_blocks, int window_len);

  int num_blocks() const { return static_cast<int>(counts_.size()); }
  int window_len() const { return window_len_; }
  const std::deque<int>& counts(int j) const { return counts_.at(static_cast<std::size_t>(j)); }

  // Mean of the buffered counts; 0 when nothing is buffered.
  double beta(int j) const;
  void push(std::span<const int> alpha);

 private:
  int window_len_;
  std::vector<std::deque<int>> counts_;
};

struct AggregationResult {
  LoraParams delta;
  std::vector<int> alpha;  // contributors per layer this round
};

enum class AggregationRule { kComAgg, kComAggFixed, kFedAvg };

AggregationRule parse_aggregation_rule(std::string_view name);
std::string_view to_string(AggregationRule rule);

// Compensated aggregation. Per layer j with alpha contributors and beta the
// windowed mean of past counts:
//   new = beta/(alpha+beta) * prev + alpha/(alpha+beta) * mean(client deltas)
// Layers nobody trained carry `prev` forward. `history` is read for beta and
// then updated with this round's counts.
AggregationResult com_agg(const LoraParams& prev, std::span<const ClientUpdate> updates,
                          ContributionHistory& history);

// Same rule with both coefficients pinned to 1.
AggregationResult com_agg_fixed(const LoraParams& prev, std::span<const ClientUpdate> updates);

// Per-layer mean over contributors; zero where nobody contributed.
// `shape` supplies layer shapes for the zero layers.
AggregationResult fed_avg(const LoraParams& shape, std::span<const ClientUpdate> updates);

LoraParams apply_delta(const LoraParams& params, const LoraParams& delta);

}  // namespace fedpilot
