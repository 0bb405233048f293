// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/aggregation.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "fedpilot/errors.hpp"

namespace fedpilot {

ContributionHistory::ContributionHistory(int num_blocks, int window_len)
    : window_len_(window_len), counts_(static_cast<std::size_t>(num_blocks)) {
  if (window_len < 1) throw PreconditionError("aggregation window must be >= 1");
}

double ContributionHistory::beta(int j) const {
  const auto& c = counts(j);
  if (c.empty()) return 0.0;
  return static_cast<double>(std::accumulate(c.begin(), c.end(), 0)) /
         static_cast<double>(c.size());
}

void ContributionHistory::push(std::span<const int> alpha) {
  if (alpha.size() != counts_.size()) throw ShapeMismatch("alpha length != number of layers");
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    if (alpha[j] < 0) throw PreconditionError("participation counts must be non-negative");
    counts_[j].push_back(alpha[j]);
    while (static_cast<int>(counts_[j].size()) > window_len_) counts_[j].pop_front();
  }
}

AggregationRule parse_aggregation_rule(std::string_view name) {
  if (name == "comagg") return AggregationRule::kComAgg;
  if (name == "comagg_fixed") return AggregationRule::kComAggFixed;
  if (name == "fedavg") return AggregationRule::kFedAvg;
  throw ConfigError("unknown aggregation rule '" + std::string(name) + "'");
}

std::string_view to_string(AggregationRule rule) {
  switch (rule) {
    case AggregationRule::kComAgg:
      return "comagg";
    case AggregationRule::kComAggFixed:
      return "comagg_fixed";
    case AggregationRule::kFedAvg:
      return "fedavg";
  }
  return "?";
}

namespace {

struct LayerMeans {
  std::vector<std::optional<LoraModule>> mean;  // nullopt where alpha = 0
  std::vector<int> alpha;
};

// Validates every update against `shape` and averages per layer, summing in
// ascending client-id order.
LayerMeans layer_means(const LoraParams& shape, std::span<const ClientUpdate> updates) {
  const int l = static_cast<int>(shape.size());
  std::vector<const ClientUpdate*> ordered;
  for (const auto& u : updates) ordered.push_back(&u);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

  for (const auto* u : ordered) {
    if (u->allocation.size() != l) {
      throw ShapeMismatch("client " + std::to_string(u->client_id) + " allocation has wrong length");
    }
    for (const auto& [j, d] : u->delta) {
      if (j < 0 || j >= l) throw ShapeMismatch("delta for unknown layer " + std::to_string(j));
      if (!u->allocation.test(j)) {
        throw PreconditionError("client " + std::to_string(u->client_id) +
                                " sent a delta for frozen layer " + std::to_string(j));
      }
      if (!d.same_shape(shape[static_cast<std::size_t>(j)])) {
        throw ShapeMismatch("client " + std::to_string(u->client_id) + " layer " +
                            std::to_string(j) + " delta has wrong shape");
      }
    }
    for (int j : u->allocation.trainable()) {
      if (!u->delta.contains(j)) {
        throw PreconditionError("client " + std::to_string(u->client_id) +
                                " is missing the delta for trainable layer " + std::to_string(j));
      }
    }
  }

  LayerMeans out;
  out.mean.resize(shape.size());
  out.alpha.assign(shape.size(), 0);
  for (int j = 0; j < l; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    LoraModule sum = LoraModule::zeros_like(shape[ju]);
    int n = 0;
    for (const auto* u : ordered) {
      if (!u->allocation.test(j)) continue;
      const auto& d = u->delta.at(j);
      sum.down += d.down;
      sum.up += d.up;
      ++n;
    }
    out.alpha[ju] = n;
    if (n > 0) {
      sum.down /= static_cast<double>(n);
      sum.up /= static_cast<double>(n);
      out.mean[ju] = std::move(sum);
    }
  }
  return out;
}

LoraModule blend(const LoraModule& prev, double w_prev, const LoraModule& mean, double w_mean) {
  return {w_prev * prev.down + w_mean * mean.down, w_prev * prev.up + w_mean * mean.up};
}

}  // namespace

AggregationResult com_agg(const LoraParams& prev, std::span<const ClientUpdate> updates,
                          ContributionHistory& history) {
  if (history.num_blocks() != static_cast<int>(prev.size())) {
    throw ShapeMismatch("contribution history has the wrong number of layers");
  }
  LayerMeans means = layer_means(prev, updates);
  AggregationResult out;
  out.alpha = means.alpha;
  out.delta.reserve(prev.size());
  for (std::size_t j = 0; j < prev.size(); ++j) {
    const double alpha = means.alpha[j];
    const double beta = history.beta(static_cast<int>(j));
    if (alpha == 0.0) {
      // Nothing new for this layer: keep compensating with the last update.
      out.delta.push_back(prev[j]);
      continue;
    }
    out.delta.push_back(blend(prev[j], beta / (alpha + beta), *means.mean[j], alpha / (alpha + beta)));
  }
  history.push(out.alpha);
  return out;
}

AggregationResult com_agg_fixed(const LoraParams& prev, std::span<const ClientUpdate> updates) {
  LayerMeans means = layer_means(prev, updates);
  AggregationResult out;
  out.alpha = means.alpha;
  for (std::size_t j = 0; j < prev.size(); ++j) {
    if (means.alpha[j] == 0) {
      out.delta.push_back(prev[j]);
    } else {
      out.delta.push_back(blend(prev[j], 0.5, *means.mean[j], 0.5));
    }
  }
  return out;
}

AggregationResult fed_avg(const LoraParams& shape, std::span<const ClientUpdate> updates) {
  LayerMeans means = layer_means(shape, updates);
  AggregationResult out;
  out.alpha = means.alpha;
  for (std::size_t j = 0; j < shape.size(); ++j) {
    out.delta.push_back(means.mean[j] ? std::move(*means.mean[j]) : LoraModule::zeros_like(shape[j]));
  }
  return out;
}

LoraParams apply_delta(const LoraParams& params, const LoraParams& delta) {
  if (params.size() != delta.size()) throw ShapeMismatch("delta has the wrong number of layers");
  LoraParams out;
  out.reserve(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (!params[j].same_shape(delta[j])) {
      throw ShapeMismatch("delta layer " + std::to_string(j) + " has the wrong shape");
    }
    out.push_back({params[j].down + delta[j].down, params[j].up + delta[j].up});
  }
  return out;
}

}  // namespace fedpilot
