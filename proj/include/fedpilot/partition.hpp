// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic Gaussian-cluster classification data and client partitioners
// (IID, pathological label skew, Dirichlet quantity skew, or both).

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fedpilot/dataset.hpp"
#include "json.hpp"

namespace fedpilot {

struct SyntheticTask {
  int num_classes = 10;
  int feature_dim = 32;
  int samples_per_class = 200;
  double center_scale = 1.0;  // std of class-center coordinates
  double noise_scale = 1.0;   // std of per-sample noise around the center
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

// Deterministic given (task, seed). The 80/20 split is stratified per class.
TrainTestSplit generate(const SyntheticTask& task, std::uint64_t seed);

enum class PartitionScheme { kIid, kPathological, kDirichlet, kPathologicalDirichlet };

PartitionScheme parse_partition_scheme(std::string_view name);
std::string_view to_string(PartitionScheme s);

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::kIid;
  int num_clients = 10;
  int classes_per_client = 2;    // pathological schemes
  double dirichlet_alpha = 1.0;  // dirichlet schemes
  int min_samples = 1;           // floor per client for dirichlet draws
  std::uint64_t seed = 0;
};

// Client -> sample indices into `labels`. Every index appears exactly once.
std::vector<std::vector<int>> partition(std::span<const int> labels, int num_classes,
                                        const PartitionSpec& spec);

nlohmann::json partition_manifest(const PartitionSpec& spec,
                                  const std::vector<std::vector<int>>& clients);

}  // namespace fedpilot
