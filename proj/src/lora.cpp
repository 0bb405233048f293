// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/lora.hpp"

#include "fedpilot/errors.hpp"

namespace fedpilot {

LoraParams zeros_like(const LoraParams& p) {
  LoraParams out;
  out.reserve(p.size());
  for (const auto& m : p) out.push_back(LoraModule::zeros_like(m));
  return out;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ShapeMismatch("matrix data length does not match rows*cols");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

nlohmann::json to_json(const LoraParams& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : p) {
    arr.push_back({{"down", matrix_to_json(m.down)}, {"up", matrix_to_json(m.up)}});
  }
  return arr;
}

LoraParams lora_params_from_json(const nlohmann::json& j) {
  LoraParams out;
  for (const auto& m : j) {
    out.push_back({matrix_from_json(m.at("down")), matrix_from_json(m.at("up"))});
  }
  return out;
}

}  // namespace fedpilot
