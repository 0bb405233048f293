// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fedpilot {

// Row i of `features` is sample i with label labels[i].
struct Dataset {
  Eigen::MatrixXd features;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  bool empty() const { return labels.empty(); }

  Dataset subset(std::span<const int> indices) const {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(indices[i]);
      out.labels.push_back(labels[static_cast<std::size_t>(indices[i])]);
    }
    return out;
  }
};

}  // namespace fedpilot
