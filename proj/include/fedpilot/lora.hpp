// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <map>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace fedpilot {

// One block's adapter. The block weight becomes W0 + scale * down * up with
// down: H x r and up: r x H (row-vector convention, y = x W).
struct LoraModule {
  Eigen::MatrixXd down;
  Eigen::MatrixXd up;

  bool same_shape(const LoraModule& o) const {
    return down.rows() == o.down.rows() && down.cols() == o.down.cols() &&
           up.rows() == o.up.rows() && up.cols() == o.up.cols();
  }
  double squared_norm() const { return down.squaredNorm() + up.squaredNorm(); }
  static LoraModule zeros_like(const LoraModule& m) {
    return {Eigen::MatrixXd::Zero(m.down.rows(), m.down.cols()),
            Eigen::MatrixXd::Zero(m.up.rows(), m.up.cols())};
  }
};

// Dense adapter set, one entry per block.
using LoraParams = std::vector<LoraModule>;

// Per-block entries only for the blocks a client trained.
using SparseDelta = std::map<int, LoraModule>;

LoraParams zeros_like(const LoraParams& p);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LoraParams& p);
LoraParams lora_params_from_json(const nlohmann::json& j);

}  // namespace fedpilot
