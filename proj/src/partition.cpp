// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fedpilot/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fedpilot/errors.hpp"

namespace fedpilot {

TrainTestSplit generate(const SyntheticTask& task, std::uint64_t seed) {
  if (task.num_classes < 1 || task.feature_dim < 1 || task.samples_per_class < 2) {
    throw PreconditionError("synthetic task needs >= 1 class, >= 1 feature, >= 2 samples per class");
  }
  if (task.noise_scale < 0.0 || task.center_scale <= 0.0) {
    throw PreconditionError("synthetic task scales must be non-negative (center scale positive)");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Eigen::MatrixXd centers(task.num_classes, task.feature_dim);
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    for (Eigen::Index d = 0; d < centers.cols(); ++d) centers(c, d) = task.center_scale * unit(rng);
  }
  for (Eigen::Index a = 0; a < centers.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < centers.rows(); ++b) {
      if (centers.row(a) == centers.row(b)) throw PreconditionError("class centers collide");
    }
  }

  const int n_train = static_cast<int>(std::floor(0.8 * task.samples_per_class));
  const int n_test = task.samples_per_class - n_train;
  TrainTestSplit out;
  out.train.features.resize(static_cast<Eigen::Index>(n_train) * task.num_classes, task.feature_dim);
  out.test.features.resize(static_cast<Eigen::Index>(n_test) * task.num_classes, task.feature_dim);
  Eigen::Index tr = 0;
  Eigen::Index te = 0;
  for (int c = 0; c < task.num_classes; ++c) {
    for (int s = 0; s < task.samples_per_class; ++s) {
      Eigen::RowVectorXd x = centers.row(c);
      for (Eigen::Index d = 0; d < x.size(); ++d) x(d) += task.noise_scale * unit(rng);
      if (s < n_train) {
        out.train.features.row(tr++) = x;
        out.train.labels.push_back(c);
      } else {
        out.test.features.row(te++) = x;
        out.test.labels.push_back(c);
      }
    }
  }
  return out;
}

PartitionScheme parse_partition_scheme(std::string_view name) {
  if (name == "iid") return PartitionScheme::kIid;
  if (name == "pathological") return PartitionScheme::kPathological;
  if (name == "dirichlet") return PartitionScheme::kDirichlet;
  if (name == "pathological_dirichlet") return PartitionScheme::kPathologicalDirichlet;
  throw ConfigError("unknown partition scheme '" + std::string(name) + "'");
}

std::string_view to_string(PartitionScheme s) {
  switch (s) {
    case PartitionScheme::kIid:
      return "iid";
    case PartitionScheme::kPathological:
      return "pathological";
    case PartitionScheme::kDirichlet:
      return "dirichlet";
    case PartitionScheme::kPathologicalDirichlet:
      return "pathological_dirichlet";
  }
  return "?";
}

namespace {

using ClassIndex = std::vector<std::vector<int>>;

ClassIndex by_class(std::span<const int> labels, int num_classes) {
  ClassIndex out(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw PreconditionError("label out of range");
    out[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  return out;
}

// For each class, the clients allowed to hold it. Client i takes k
// consecutive entries of a shuffled cyclic class list.
std::vector<std::vector<int>> class_holders(const PartitionSpec& spec, int num_classes,
                                            std::mt19937_64& rng) {
  const int k = spec.classes_per_client;
  if (k < 1 || k > num_classes) {
    throw PreconditionError("classes_per_client must be in [1, num_classes]");
  }
  if (static_cast<long>(k) * spec.num_clients < num_classes) {
    throw PreconditionError("classes_per_client * num_clients < num_classes: some class would be unused");
  }
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> holders(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < spec.num_clients; ++i) {
    for (int m = 0; m < k; ++m) {
      const int c = order[static_cast<std::size_t>((i * k + m) % num_classes)];
      holders[static_cast<std::size_t>(c)].push_back(i);
    }
  }
  return holders;
}

// Splits `idx` among `holders` with proportions drawn from Dir(alpha).
void dirichlet_split(const std::vector<int>& idx, const std::vector<int>& holders, double alpha,
                     std::mt19937_64& rng, std::vector<std::vector<int>>& clients) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(holders.size());
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    std::fill(p.begin(), p.end(), 1.0);
    total = static_cast<double>(p.size());
  }
  const auto n = static_cast<double>(idx.size());
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t h = 0; h < holders.size(); ++h) {
    cum += p[h] / total;
    const std::size_t end =
        (h + 1 == holders.size()) ? idx.size() : std::min(idx.size(), static_cast<std::size_t>(std::floor(cum * n)));
    auto& dst = clients[static_cast<std::size_t>(holders[h])];
    for (std::size_t i = begin; i < std::max(begin, end); ++i) dst.push_back(idx[i]);
    begin = std::max(begin, end);
  }
}

}  // namespace

std::vector<std::vector<int>> partition(std::span<const int> labels, int num_classes,
                                        const PartitionSpec& spec) {
  if (spec.num_clients < 1) throw PreconditionError("num_clients must be >= 1");
  std::mt19937_64 rng(spec.seed);
  ClassIndex classes = by_class(labels, num_classes);
  for (auto& c : classes) std::shuffle(c.begin(), c.end(), rng);

  const auto v = static_cast<std::size_t>(spec.num_clients);
  std::vector<std::vector<int>> clients(v);

  std::vector<std::vector<int>> holders(static_cast<std::size_t>(num_classes));
  const bool pathological = spec.scheme == PartitionScheme::kPathological ||
                            spec.scheme == PartitionScheme::kPathologicalDirichlet;
  if (pathological) {
    holders = class_holders(spec, num_classes, rng);
  } else {
    std::vector<int> all(v);
    std::iota(all.begin(), all.end(), 0);
    std::fill(holders.begin(), holders.end(), all);
  }

  switch (spec.scheme) {
    case PartitionScheme::kIid:
    case PartitionScheme::kPathological: {
      // Deal each class round-robin over its holders; the running offset
      // keeps client totals balanced across classes.
      std::size_t offset = 0;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto& hs = holders[c];
        for (int idx : classes[c]) {
          clients[static_cast<std::size_t>(hs[offset % hs.size()])].push_back(idx);
          ++offset;
        }
      }
      break;
    }
    case PartitionScheme::kDirichlet:
    case PartitionScheme::kPathologicalDirichlet: {
      if (!(spec.dirichlet_alpha > 0.0)) throw PreconditionError("dirichlet_alpha must be > 0");
      if (static_cast<std::size_t>(spec.min_samples) * v > labels.size()) {
        throw PreconditionError("not enough samples for the per-client minimum");
      }
      constexpr int kMaxAttempts = 1000;
      bool ok = false;
      for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
        for (auto& c : clients) c.clear();
        for (std::size_t c = 0; c < classes.size(); ++c) {
          dirichlet_split(classes[c], holders[c], spec.dirichlet_alpha, rng, clients);
        }
        ok = std::all_of(clients.begin(), clients.end(), [&](const auto& c) {
          return static_cast<int>(c.size()) >= spec.min_samples;
        });
      }
      if (!ok) {
        throw PreconditionError("could not draw a Dirichlet partition meeting min_samples=" +
                                std::to_string(spec.min_samples));
      }
      break;
    }
  }
  for (auto& c : clients) std::sort(c.begin(), c.end());
  return clients;
}

nlohmann::json partition_manifest(const PartitionSpec& spec,
                                  const std::vector<std::vector<int>>& clients) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < clients.size(); ++i) {
    arr.push_back({{"client_id", i}, {"indices", clients[i]}});
  }
  return {{"scheme", to_string(spec.scheme)},
          {"num_clients", spec.num_clients},
          {"classes_per_client", spec.classes_per_client},
          {"dirichlet_alpha", spec.dirichlet_alpha},
          {"seed", spec.seed},
          {"clients", std::move(arr)}};
}

}  // namespace fedpilot
