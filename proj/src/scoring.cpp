// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedpilot/errors.hpp"

namespace fedpilot {

IGScoreRecord local_ig_scores(const ToyLoRANet& net, const AllocationMap& allocation,
                              const Dataset& ig_data, int ig_batch_size, double loss_scale) {
  if (ig_data.empty()) throw PreconditionError("IG dataset is empty");
  if (ig_batch_size < 1) throw PreconditionError("IG batch size must be >= 1");
  IGScoreRecord record;
  if (allocation.none()) return record;

  std::vector<int> order(static_cast<std::size_t>(ig_data.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto bsz = static_cast<std::size_t>(ig_batch_size);
  for (std::size_t begin = 0; begin < order.size(); begin += bsz) {
    const std::size_t end = std::min(order.size(), begin + bsz);
    const Dataset batch = ig_data.subset(std::span<const int>(order).subspan(begin, end - begin));
    const ForwardCache cache = forward(net, batch.features, allocation);
    for (const auto& [j, g] : backward(net, cache, batch.labels, allocation, loss_scale)) {
      const double s = g.squared_norm();
      if (!std::isfinite(s)) {
        throw NumericalError("non-finite gradient for module " + std::to_string(j));
      }
      record.module_scores[j] += s;
    }
  }
  return record;
}

ScoreHistory::ScoreHistory(int num_blocks, int window_len)
    : window_len_(window_len), buffers_(static_cast<std::size_t>(num_blocks)) {
  if (window_len < 1) throw PreconditionError("score window must be >= 1");
}

bool ScoreHistory::empty() const {
  return std::all_of(buffers_.begin(), buffers_.end(), [](const auto& b) { return b.empty(); });
}

double ScoreHistory::temporal_mean(int j) const {
  const auto& b = buffer(j);
  if (b.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& e : b) sum += e.mean_score;
  return sum / static_cast<double>(b.size());
}

ScoreHistory update_history(ScoreHistory history, std::span<const IGScoreRecord> records,
                            int round) {
  const int l = history.num_blocks();
  std::vector<std::vector<double>> per_module(static_cast<std::size_t>(l));
  for (const auto& r : records) {
    if (r.round != round) {
      throw PreconditionError("IG record from round " + std::to_string(r.round) +
                              " passed to update for round " + std::to_string(round));
    }
    for (const auto& [j, s] : r.module_scores) {
      if (j < 0 || j >= l) throw PreconditionError("IG record names an unknown module");
      per_module[static_cast<std::size_t>(j)].push_back(s);
    }
  }
  for (int j = 0; j < l; ++j) {
    auto& scores = per_module[static_cast<std::size_t>(j)];
    auto& buf = history.buffers_[static_cast<std::size_t>(j)];
    if (!scores.empty()) {
      // Summing in sorted order makes the mean independent of client order.
      std::sort(scores.begin(), scores.end());
      const double sum = std::accumulate(scores.begin(), scores.end(), 0.0);
      buf.push_back({round, sum / static_cast<double>(scores.size())});
    }
    while (!buf.empty() && buf.front().round <= round - history.window_len_) buf.pop_front();
  }
  return history;
}

std::vector<double> value_function(const ScoreHistory& history,
                                   const std::optional<IGScoreRecord>& last_record,
                                   const std::optional<AllocationMap>& last_allocation) {
  const int l = history.num_blocks();
  if (history.empty() && !last_record) return std::vector<double>(static_cast<std::size_t>(l), 1.0);

  std::vector<double> values(static_cast<std::size_t>(l), 0.0);
  for (int j = 0; j < l; ++j) {
    double local = 0.0;
    if (last_record) {
      if (auto it = last_record->module_scores.find(j); it != last_record->module_scores.end()) {
        local = it->second;
      }
    }
    const double trained_before = (last_allocation && last_allocation->test(j)) ? 1.0 : 0.0;
    values[static_cast<std::size_t>(j)] = (local + history.temporal_mean(j)) / (trained_before + 1.0);
  }
  return values;
}

nlohmann::json to_json(const IGScoreRecord& r) {
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& [j, s] : r.module_scores) scores[std::to_string(j)] = s;
  return {{"round", r.round}, {"client_id", r.client_id}, {"module_scores", std::move(scores)}};
}

nlohmann::json to_json(const ScoreHistory& h, int round) {
  nlohmann::json modules = nlohmann::json::array();
  for (int j = 0; j < h.num_blocks(); ++j) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : h.buffer(j)) entries.push_back({e.round, e.mean_score});
    modules.push_back({{"block", j}, {"entries", std::move(entries)}, {"temporal_mean", h.temporal_mean(j)}});
  }
  return {{"round", round}, {"window_len", h.window_len()}, {"modules", std::move(modules)}};
}

}  // namespace fedpilot
