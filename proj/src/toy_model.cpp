// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedpilot/errors.hpp"

namespace fedpilot {

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double stddev,
                         std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act) {
  if (act == Activation::kIdentity) return z;
  return z.array().tanh().matrix();
}

// Derivative of the activation expressed through its output.
Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& out, Activation act) {
  if (act == Activation::kIdentity) return Eigen::MatrixXd::Ones(out.rows(), out.cols());
  return (1.0 - out.array().square()).matrix();
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

void check_labels(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw ShapeMismatch("label count does not match batch size");
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) throw ShapeMismatch("label out of range");
  }
}

}  // namespace

ToyLoRANet::ToyLoRANet(ToyModelConfig config, FrozenWeights frozen, LoraParams lora)
    : config_(config), frozen_(std::move(frozen)), lora_(std::move(lora)) {
  const int l = config_.num_blocks;
  const int h = config_.hidden;
  if (l <= 0 || h <= 0 || config_.rank <= 0 || config_.input_dim <= 0 ||
      config_.num_classes <= 0) {
    throw PreconditionError("toy model dimensions must be positive");
  }
  if (frozen_.embed.rows() != config_.input_dim || frozen_.embed.cols() != h ||
      frozen_.head.rows() != h || frozen_.head.cols() != config_.num_classes ||
      static_cast<int>(frozen_.base.size()) != l || static_cast<int>(frozen_.bias.size()) != l) {
    throw ShapeMismatch("frozen weights do not match the toy model config");
  }
  for (int j = 0; j < l; ++j) {
    if (frozen_.base[j].rows() != h || frozen_.base[j].cols() != h || frozen_.bias[j].size() != h) {
      throw ShapeMismatch("frozen block " + std::to_string(j) + " has the wrong shape");
    }
  }
  check_lora(lora_);
}

void ToyLoRANet::check_lora(const LoraParams& lora) const {
  if (static_cast<int>(lora.size()) != config_.num_blocks) {
    throw ShapeMismatch("expected " + std::to_string(config_.num_blocks) + " adapters");
  }
  for (std::size_t j = 0; j < lora.size(); ++j) {
    const auto& m = lora[j];
    if (m.down.rows() != config_.hidden || m.down.cols() != config_.rank ||
        m.up.rows() != config_.rank || m.up.cols() != config_.hidden) {
      throw ShapeMismatch("adapter " + std::to_string(j) + " has the wrong shape");
    }
  }
}

ToyLoRANet ToyLoRANet::random(const ToyModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FrozenWeights fw;
  fw.embed = gaussian(c.input_dim, c.hidden, 1.0 / std::sqrt(double(c.input_dim)), rng);
  for (int j = 0; j < c.num_blocks; ++j) {
    fw.base.push_back(gaussian(c.hidden, c.hidden, c.weight_gain / std::sqrt(double(c.hidden)), rng));
    fw.bias.push_back(gaussian(1, c.hidden, c.bias_std, rng));
  }
  fw.head = gaussian(c.hidden, c.num_classes, 1.0 / std::sqrt(double(c.hidden)), rng);
  LoraParams lora;
  for (int j = 0; j < c.num_blocks; ++j) {
    lora.push_back({gaussian(c.hidden, c.rank, c.lora_init_std, rng),
                    Eigen::MatrixXd::Zero(c.rank, c.hidden)});
  }
  return ToyLoRANet(c, std::move(fw), std::move(lora));
}

void ToyLoRANet::set_lora(LoraParams lora) {
  check_lora(lora);
  lora_ = std::move(lora);
  ++version_;
}

void ToyLoRANet::add_to_module(int j, const LoraModule& step) {
  auto& m = lora_.at(static_cast<std::size_t>(j));
  if (!m.same_shape(step)) throw ShapeMismatch("adapter update has the wrong shape");
  m.down += step.down;
  m.up += step.up;
  ++version_;
}

Eigen::MatrixXd ToyLoRANet::effective_weight(int j) const {
  const auto& m = lora_.at(static_cast<std::size_t>(j));
  return frozen_.base[static_cast<std::size_t>(j)] + config_.scale() * (m.down * m.up);
}

std::int64_t ToyLoRANet::frozen_param_count() const {
  std::int64_t n = frozen_.embed.size() + frozen_.head.size();
  for (int j = 0; j < config_.num_blocks; ++j) {
    n += frozen_.base[j].size() + frozen_.bias[j].size();
  }
  return n;
}

int ForwardCache::static_count() const {
  return static_cast<int>(std::count_if(block_outputs.begin(), block_outputs.end(),
                                        [](const auto& a) { return a.has_value(); }));
}

int ForwardCache::dynamic_count() const {
  return static_cast<int>(std::count_if(block_inputs.begin(), block_inputs.end(),
                                        [](const auto& a) { return a.has_value(); }));
}

Eigen::MatrixXd logits(const ToyLoRANet& net, const Eigen::MatrixXd& features) {
  return forward(net, features, AllocationMap(net.num_blocks())).logits;
}

ForwardCache forward(const ToyLoRANet& net, const Eigen::MatrixXd& features,
                     const AllocationMap& allocation) {
  const auto& c = net.config();
  if (features.cols() != c.input_dim) {
    throw ShapeMismatch("feature dimension " + std::to_string(features.cols()) + " != " +
                        std::to_string(c.input_dim));
  }
  if (allocation.size() != c.num_blocks) {
    throw ProfileMismatch("allocation map length does not match the model");
  }
  const auto l = static_cast<std::size_t>(c.num_blocks);
  ForwardCache cache;
  cache.allocation = allocation;
  cache.net_version = net.version();
  cache.block_outputs.resize(l);
  cache.block_inputs.resize(l);
  const int first = allocation.earliest().value_or(c.num_blocks);

  Eigen::MatrixXd h = features * net.frozen().embed;
  for (int j = 0; j < c.num_blocks; ++j) {
    if (allocation.test(j)) cache.block_inputs[static_cast<std::size_t>(j)] = h;
    Eigen::MatrixXd z = h * net.effective_weight(j);
    z.rowwise() += net.frozen().bias[static_cast<std::size_t>(j)];
    h = activate(z, c.activation);
    if (j >= first) cache.block_outputs[static_cast<std::size_t>(j)] = h;
  }
  cache.logits = h * net.frozen().head;
  return cache;
}

double cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  if (labels.empty()) throw PreconditionError("cross-entropy of an empty batch");
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += lse - logits(r, labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(logits.rows());
}

ModuleGrads backward(const ToyLoRANet& net, const ForwardCache& cache,
                     std::span<const int> labels, const AllocationMap& allocation,
                     double loss_scale) {
  if (cache.net_version != net.version() || !(cache.allocation == allocation)) {
    throw StaleCache("forward cache does not match the current parameters or allocation");
  }
  check_labels(cache.logits, labels);
  ModuleGrads grads;
  const auto first = allocation.earliest();
  if (!first) return grads;

  const auto& c = net.config();
  const double batch = static_cast<double>(cache.logits.rows());
  Eigen::MatrixXd g = softmax_rows(cache.logits);
  for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  g *= loss_scale / batch;
  g = g * net.frozen().head.transpose();

  for (int j = c.num_blocks - 1; j >= *first; --j) {
    const auto ju = static_cast<std::size_t>(j);
    const Eigen::MatrixXd gz =
        (g.array() * activation_grad(*cache.block_outputs[ju], c.activation).array()).matrix();
    if (allocation.test(j)) {
      const auto& x = *cache.block_inputs[ju];
      const auto& m = net.lora()[ju];
      LoraModule grad;
      grad.down = c.scale() * (x.transpose() * (gz * m.up.transpose()));
      grad.up = c.scale() * ((x * m.down).transpose() * gz);
      grads.emplace(j, std::move(grad));
    }
    if (j > *first) g = gz * net.effective_weight(j).transpose();
  }
  return grads;
}

SparseDelta local_train(const ToyLoRANet& start, const Dataset& data,
                        const AllocationMap& allocation, const TrainOptions& opts,
                        std::mt19937_64& rng) {
  if (data.empty()) throw PreconditionError("local dataset is empty");
  if (opts.batch_size < 1 || opts.epochs < 0) throw PreconditionError("invalid train options");
  SparseDelta delta;
  if (allocation.none()) return delta;

  ToyLoRANet net = start;
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(opts.batch_size));
      const Dataset batch = data.subset(std::span<const int>(order).subspan(begin, end - begin));
      const ForwardCache cache = forward(net, batch.features, allocation);
      const double loss = cross_entropy(cache.logits, batch.labels);
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(begin));
      }
      for (const auto& [j, g] : backward(net, cache, batch.labels, allocation)) {
        net.add_to_module(j, {-opts.lr * g.down, -opts.lr * g.up});
      }
    }
  }
  for (int j : allocation.trainable()) {
    const auto ju = static_cast<std::size_t>(j);
    delta.emplace(j, LoraModule{net.lora()[ju].down - start.lora()[ju].down,
                                net.lora()[ju].up - start.lora()[ju].up});
  }
  return delta;
}

EvalResult evaluate(const ToyLoRANet& net, const Dataset& data) {
  if (data.empty()) return {};
  const Eigen::MatrixXd out = logits(net, data.features);
  int correct = 0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Eigen::Index arg = 0;
    out.row(r).maxCoeff(&arg);
    if (arg == data.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return {static_cast<double>(correct) / data.size(), cross_entropy(out, data.labels)};
}

nlohmann::json to_json(const ToyModelConfig& c) {
  return {{"num_blocks", c.num_blocks},
          {"hidden", c.hidden},
          {"rank", c.rank},
          {"input_dim", c.input_dim},
          {"num_classes", c.num_classes},
          {"lora_alpha", c.lora_alpha},
          {"weight_gain", c.weight_gain},
          {"bias_std", c.bias_std},
          {"lora_init_std", c.lora_init_std},
          {"activation", c.activation == Activation::kTanh ? "tanh" : "identity"}};
}

ToyModelConfig toy_config_from_json(const nlohmann::json& j) {
  ToyModelConfig c;
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.hidden = j.value("hidden", c.hidden);
  c.rank = j.value("rank", c.rank);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.weight_gain = j.value("weight_gain", c.weight_gain);
  c.bias_std = j.value("bias_std", c.bias_std);
  c.lora_init_std = j.value("lora_init_std", c.lora_init_std);
  const std::string act = j.value("activation", std::string("tanh"));
  if (act == "tanh") {
    c.activation = Activation::kTanh;
  } else if (act == "identity") {
    c.activation = Activation::kIdentity;
  } else {
    throw ConfigError("model.activation: expected 'tanh' or 'identity', got '" + act + "'");
  }
  return c;
}

nlohmann::json snapshot_to_json(const ToyLoRANet& net) {
  nlohmann::json base = nlohmann::json::array();
  nlohmann::json bias = nlohmann::json::array();
  for (int j = 0; j < net.num_blocks(); ++j) {
    base.push_back(matrix_to_json(net.frozen().base[static_cast<std::size_t>(j)]));
    bias.push_back(matrix_to_json(net.frozen().bias[static_cast<std::size_t>(j)]));
  }
  return {{"config", to_json(net.config())},
          {"embed", matrix_to_json(net.frozen().embed)},
          {"base", std::move(base)},
          {"bias", std::move(bias)},
          {"head", matrix_to_json(net.frozen().head)},
          {"lora", to_json(net.lora())}};
}

ToyLoRANet snapshot_from_json(const nlohmann::json& j) {
  FrozenWeights fw;
  fw.embed = matrix_from_json(j.at("embed"));
  for (const auto& m : j.at("base")) fw.base.push_back(matrix_from_json(m));
  for (const auto& m : j.at("bias")) fw.bias.push_back(matrix_from_json(m));
  fw.head = matrix_from_json(j.at("head"));
  return ToyLoRANet(toy_config_from_json(j.at("config")), std::move(fw),
                    lora_params_from_json(j.at("lora")));
}

}  // namespace fedpilot
