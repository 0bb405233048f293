// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small stack of l blocks with frozen base weights and per-block LoRA
// adapters. Forward/backward are written by hand so that freezing semantics
// (which activations must be kept, where gradients stop) are explicit:
//
//   h_0 = x E
//   z_j = h_{j-1} (W0_j + s * down_j * up_j) + b_j,   h_j = act(z_j)
//   logits = h_l Head
//
// E, W0, b and Head are frozen; only the adapters train.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedpilot/dataset.hpp"
#include "fedpilot/lora.hpp"
#include "fedpilot/memory_model.hpp"
#include "json.hpp"

namespace fedpilot {

enum class Activation { kTanh, kIdentity };

struct ToyModelConfig {
  int num_blocks = 12;
  int hidden = 16;
  int rank = 2;
  int input_dim = 32;
  int num_classes = 10;
  double lora_alpha = 2.0;     // adapter scale is lora_alpha / rank
  double weight_gain = 1.0;    // std of W0 entries is gain / sqrt(hidden)
  double bias_std = 0.1;
  double lora_init_std = 0.1;  // std of `down`; `up` starts at zero
  Activation activation = Activation::kTanh;

  double scale() const { return lora_alpha / rank; }
};

struct FrozenWeights {
  Eigen::MatrixXd embed;                 // input_dim x H
  std::vector<Eigen::MatrixXd> base;     // l of H x H
  std::vector<Eigen::RowVectorXd> bias;  // l of 1 x H
  Eigen::MatrixXd head;                  // H x num_classes
};

class ToyLoRANet {
 public:
  ToyLoRANet(ToyModelConfig config, FrozenWeights frozen, LoraParams lora);

  // Frozen weights and adapters drawn from `seed`. Adapters follow the usual
  // LoRA init, so the initial network equals its frozen base.
  static ToyLoRANet random(const ToyModelConfig& config, std::uint64_t seed);

  const ToyModelConfig& config() const { return config_; }
  const FrozenWeights& frozen() const { return frozen_; }
  const LoraParams& lora() const { return lora_; }
  int num_blocks() const { return config_.num_blocks; }

  void set_lora(LoraParams lora);
  // Adds `step` to block j's adapter in place.
  void add_to_module(int j, const LoraModule& step);

  Eigen::MatrixXd effective_weight(int j) const;

  // Bumped on every parameter change; caches record it.
  std::uint64_t version() const { return version_; }

  std::int64_t frozen_param_count() const;

 private:
  void check_lora(const LoraParams& lora) const;

  ToyModelConfig config_;
  FrozenWeights frozen_;
  LoraParams lora_;
  std::uint64_t version_ = 0;
};

// Activations kept for backward. `block_outputs[j]` (static analog) is held
// for every block from the earliest trainable one on, since the nonlinearity
// derivative needs it whether or not block j trains. `block_inputs[j]`
// (dynamic analog) is only held for trainable blocks.
struct ForwardCache {
  AllocationMap allocation;
  std::uint64_t net_version = 0;
  Eigen::MatrixXd logits;
  std::vector<std::optional<Eigen::MatrixXd>> block_outputs;
  std::vector<std::optional<Eigen::MatrixXd>> block_inputs;

  int static_count() const;
  int dynamic_count() const;
};

using ModuleGrads = std::map<int, LoraModule>;

Eigen::MatrixXd logits(const ToyLoRANet& net, const Eigen::MatrixXd& features);

ForwardCache forward(const ToyLoRANet& net, const Eigen::MatrixXd& features,
                     const AllocationMap& allocation);

// Mean cross-entropy over rows.
double cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels);

// Gradients of loss_scale * mean cross-entropy for the trainable blocks.
ModuleGrads backward(const ToyLoRANet& net, const ForwardCache& cache,
                     std::span<const int> labels, const AllocationMap& allocation,
                     double loss_scale = 1.0);

struct TrainOptions {
  int epochs = 1;
  int batch_size = 16;
  double lr = 0.1;
};

// Plain SGD over the local data; returns (after - before) per trainable block.
SparseDelta local_train(const ToyLoRANet& start, const Dataset& data,
                        const AllocationMap& allocation, const TrainOptions& opts,
                        std::mt19937_64& rng);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

EvalResult evaluate(const ToyLoRANet& net, const Dataset& data);

// Shapes plus row-major arrays; doubles round-trip exactly.
nlohmann::json snapshot_to_json(const ToyLoRANet& net);
ToyLoRANet snapshot_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ToyModelConfig& c);
ToyModelConfig toy_config_from_json(const nlohmann::json& j);

}  // namespace fedpilot
