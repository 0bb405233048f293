// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Information-gain (IG) scores and the module value function.
//
// A client's IG score for module j is the sum, over mini-batches of its IG
// dataset, of the squared L2 norm of the loss gradient restricted to that
// module's adapter. The server keeps per-round cross-client means in a short
// temporal window; a client's value for module j blends its own last score
// with the windowed mean.

#pragma once

#include <deque>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedpilot/dataset.hpp"
#include "fedpilot/memory_model.hpp"
#include "fedpilot/toy_model.hpp"
#include "json.hpp"

namespace fedpilot {

struct IGScoreRecord {
  int round = 0;
  int client_id = 0;
  std::map<int, double> module_scores;  // only trainable blocks
};

IGScoreRecord local_ig_scores(const ToyLoRANet& net, const AllocationMap& allocation,
                              const Dataset& ig_data, int ig_batch_size,
                              double loss_scale = 1.0);

class ScoreHistory {
 public:
  struct Entry {
    int round;
    double mean_score;
  };

  ScoreHistory(int num_blocks, int window_len);

  int num_blocks() const { return static_cast<int>(buffers_.size()); }
  int window_len() const { return window_len_; }
  bool empty() const;
  const std::deque<Entry>& buffer(int j) const { return buffers_.at(static_cast<std::size_t>(j)); }

  // Windowed mean of the buffered cross-client means, 0 when the buffer is
  // empty.
  double temporal_mean(int j) const;

 private:
  friend ScoreHistory update_history(ScoreHistory history, std::span<const IGScoreRecord> records,
                                     int round);
  int window_len_;
  std::vector<std::deque<Entry>> buffers_;
};

// Appends this round's cross-client means and drops entries that fall out of
// the window (rounds <= round - window_len).
ScoreHistory update_history(ScoreHistory history, std::span<const IGScoreRecord> records,
                            int round);

// Per-module values for one client. `last_record` and `last_allocation`
// come from the client's most recent participation. With an empty history
// and no record every module gets 1.0.
std::vector<double> value_function(const ScoreHistory& history,
                                   const std::optional<IGScoreRecord>& last_record,
                                   const std::optional<AllocationMap>& last_allocation);

nlohmann::json to_json(const IGScoreRecord& r);
// Snapshot of every buffer, tagged with the round it was taken at.
nlohmann::json to_json(const ScoreHistory& h, int round);

}  // namespace fedpilot
