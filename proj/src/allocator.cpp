// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>

#include "fedpilot/errors.hpp"

namespace fedpilot {

void KnapsackInstance::validate() const {
  profile.validate();
  if (capacity_bytes <= 0) throw PreconditionError("capacity_bytes must be positive");
  if (batch < 1) throw PreconditionError("batch must be >= 1");
  if (!(min_normalized_weight > 0.0 && min_normalized_weight <= 1.0)) {
    throw PreconditionError("min_normalized_weight must be in (0, 1]");
  }
  if (values.size() != static_cast<std::size_t>(profile.num_blocks)) {
    throw ProfileMismatch("values has " + std::to_string(values.size()) + " entries, profile has " +
                          std::to_string(profile.num_blocks) + " blocks");
  }
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) {
      throw PreconditionError("module values must be finite and non-negative");
    }
  }
}

namespace {

struct Candidate {
  int block;
  Bytes raw;
};

// Grows `result` greedily until no unselected module fits the residual budget.
void grow(const KnapsackInstance& in, AllocationResult& result, Bytes residual) {
  const int l = in.profile.num_blocks;
  const double floor = in.min_normalized_weight;
  std::vector<Candidate> candidates;
  candidates.reserve(static_cast<std::size_t>(l));
  for (int step = static_cast<int>(result.trace.size()); step < l; ++step) {
    candidates.clear();
    for (int j = 0; j < l; ++j) {
      if (!result.map.test(j)) {
        candidates.push_back({j, marginal_weight(in.profile, result.map, j, in.batch)});
      }
    }
    if (candidates.empty()) break;

    const auto [lo_it, hi_it] = std::minmax_element(
        candidates.begin(), candidates.end(),
        [](const Candidate& a, const Candidate& b) { return a.raw < b.raw; });
    const Bytes lo = lo_it->raw;
    const Bytes hi = hi_it->raw;

    std::optional<SelectionStep> best;
    for (const Candidate& c : candidates) {
      if (c.raw > residual) continue;
      double norm = 1.0;
      if (hi > lo) {
        const double unit = static_cast<double>(c.raw - lo) / static_cast<double>(hi - lo);
        norm = floor + (1.0 - floor) * unit;
      }
      const double ratio = in.values[static_cast<std::size_t>(c.block)] / norm;
      // Candidates are scanned in increasing block order, so >= prefers the
      // deeper block on equal ratios.
      if (!best || ratio >= best->ratio) {
        best = SelectionStep{step, c.block, c.raw, norm, ratio};
      }
    }
    if (!best) break;

    result.map.set(best->block);
    result.total_value += in.values[static_cast<std::size_t>(best->block)];
    residual -= best->raw_weight;
    result.trace.push_back(*best);
  }
}

}  // namespace

AllocationResult optimize_allocation(const KnapsackInstance& in) {
  in.validate();
  const int l = in.profile.num_blocks;
  const AllocationMap empty(l);
  const Bytes base = total_memory(in.profile, empty, in.batch).total_bytes;
  if (base > in.capacity_bytes) {
    throw InfeasibleClient("base memory " + std::to_string(base) + " B exceeds capacity " +
                           std::to_string(in.capacity_bytes) + " B");
  }

  AllocationResult greedy{empty, 0.0, {}, {}, false};
  grow(in, greedy, in.capacity_bytes);

  // Most valuable feasible singleton; deeper block on ties.
  std::optional<int> best_single;
  for (int j = 0; j < l; ++j) {
    const Bytes w = marginal_weight(in.profile, empty, j, in.batch);
    if (w > in.capacity_bytes) continue;
    if (!best_single ||
        in.values[static_cast<std::size_t>(j)] >= in.values[static_cast<std::size_t>(*best_single)]) {
      best_single = j;
    }
  }

  AllocationResult result = std::move(greedy);
  if (best_single && in.values[static_cast<std::size_t>(*best_single)] > 0.0 &&
      !result.map.test(*best_single)) {
    AllocationResult seeded{empty.with(*best_single), in.values[static_cast<std::size_t>(*best_single)],
                            {}, {}, true};
    const Bytes w = marginal_weight(in.profile, empty, *best_single, in.batch);
    seeded.trace.push_back({0, *best_single, w, 1.0, in.values[static_cast<std::size_t>(*best_single)]});
    grow(in, seeded, in.capacity_bytes - w);
    if (seeded.total_value > result.total_value) result = std::move(seeded);
  }

  result.memory = total_memory(in.profile, result.map, in.batch);
  return result;
}

nlohmann::json to_json(const SelectionStep& s) {
  return {{"step", s.step},
          {"block", s.block},
          {"raw_weight", s.raw_weight},
          {"normalized_weight", s.normalized_weight},
          {"ratio", s.ratio}};
}

void write_trace_jsonl(std::ostream& os, const AllocationResult& result) {
  for (const auto& s : result.trace) {
    nlohmann::json j = to_json(s);
    j["seeded"] = result.seeded;
    os << j.dump() << '\n';
  }
}

}  // namespace fedpilot
