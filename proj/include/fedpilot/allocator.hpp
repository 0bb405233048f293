// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "fedpilot/memory_model.hpp"
#include "json.hpp"

namespace fedpilot {

struct KnapsackInstance {
  ModelProfile profile;
  Bytes capacity_bytes = 0;
  std::int64_t batch = 1;
  std::vector<double> values;  // one non-negative value per block
  // Lower end of the normalized weight range, in (0, 1].
  double min_normalized_weight = 1e-9;

  void validate() const;
};

struct SelectionStep {
  int step = 0;
  int block = 0;
  Bytes raw_weight = 0;
  double normalized_weight = 0.0;
  double ratio = 0.0;
};

struct AllocationResult {
  AllocationMap map;
  double total_value = 0.0;
  MemoryBreakdown memory;
  std::vector<SelectionStep> trace;
  // True when the solution was grown from the best feasible singleton
  // rather than from the empty map.
  bool seeded = false;
};

// Greedy value/weight knapsack over LoRA modules with dynamic item weights.
//
// Each step recomputes every unselected module's marginal memory, min-max
// normalizes those weights into [min_normalized_weight, 1] and picks the
// feasible module with the best value / normalized weight (ties go to the
// deeper block). The classic best-single-item safeguard is applied: the
// greedy is also grown from the most valuable feasible singleton and the
// better of the two maximal solutions is returned.
//
// Throws InfeasibleClient when frozen parameters plus context alone exceed
// the capacity.
AllocationResult optimize_allocation(const KnapsackInstance& instance);

nlohmann::json to_json(const SelectionStep& s);
// One JSON object per trace step.
void write_trace_jsonl(std::ostream& os, const AllocationResult& result);

}  // namespace fedpilot
