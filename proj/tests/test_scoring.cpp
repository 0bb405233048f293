// Copyright (c) 2026, The fedpilot Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "fedpilot/allocator.hpp"
#include "fedpilot/errors.hpp"
#include "fedpilot/scoring.hpp"

using namespace fedpilot;

namespace {

IGScoreRecord record(int round, int client, std::map<int, double> scores) {
  return {round, client, std::move(scores)};
}

Dataset make_data(int n, int dim, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset d;
  d.features.resize(n, dim);
  for (Eigen::Index i = 0; i < d.features.size(); ++i) d.features.data()[i] = g(rng);
  for (int i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(rng() % classes));
  return d;
}

ToyModelConfig tiny() {
  ToyModelConfig c;
  c.num_blocks = 2;
  c.hidden = 3;
  c.rank = 1;
  c.input_dim = 3;
  c.num_classes = 2;
  return c;
}

// Hand-set 2-block net with nonzero adapters.
ToyLoRANet hand_net() {
  const auto c = tiny();
  FrozenWeights f;
  f.embed = Eigen::MatrixXd::Identity(3, 3);
  f.embed(0, 1) = 0.5;
  for (int j = 0; j < 2; ++j) {
    Eigen::MatrixXd w(3, 3);
    w << 0.3, -0.2, 0.1, 0.0, 0.4, -0.3, 0.2, 0.1, 0.5;
    f.base.push_back(w * (j + 1));
    Eigen::RowVectorXd b(3);
    b << 0.1, -0.1, 0.05 * j;
    f.bias.push_back(b);
  }
  f.head.resize(3, 2);
  f.head << 1.0, -1.0, 0.5, 0.2, -0.3, 0.7;
  LoraParams lora(2);
  for (int j = 0; j < 2; ++j) {
    lora[j].down.resize(3, 1);
    lora[j].down << 0.2, -0.1 * (j + 1), 0.3;
    lora[j].up.resize(1, 3);
    lora[j].up << -0.4, 0.25, 0.1 * (j + 1);
  }
  return ToyLoRANet(c, f, lora);
}

double loss(const ToyLoRANet& net, const Dataset& d) {
  return cross_entropy(logits(net, d.features), d.labels);
}

}  // namespace

TEST_CASE("empty allocation gives an empty record; empty data is an error") {
  const auto net = hand_net();
  const auto d = make_data(4, 3, 2, 1);
  CHECK(local_ig_scores(net, AllocationMap(2), d, 2).module_scores.empty());
  CHECK_THROWS_AS(local_ig_scores(net, AllocationMap(2, true), Dataset{}, 2), PreconditionError);
}

TEST_CASE("single mini-batch score equals the finite-difference gradient norm squared") {
  ToyLoRANet net = hand_net();
  const auto d = make_data(5, 3, 2, 2);
  const auto alloc = AllocationMap(2, true);
  const auto rec = local_ig_scores(net, alloc, d, 5);
  REQUIRE(rec.module_scores.size() == 2);
  const double eps = 1e-6;
  for (int j = 0; j < 2; ++j) {
    double fd_norm = 0.0;
    for (int which = 0; which < 2; ++which) {
      const auto size = which == 0 ? net.lora()[j].down.size() : net.lora()[j].up.size();
      for (Eigen::Index i = 0; i < size; ++i) {
        LoraParams p = net.lora();
        LoraParams m = net.lora();
        (which == 0 ? p[j].down : p[j].up).data()[i] += eps;
        (which == 0 ? m[j].down : m[j].up).data()[i] -= eps;
        ToyLoRANet np = net;
        ToyLoRANet nm = net;
        np.set_lora(p);
        nm.set_lora(m);
        const double g = (loss(np, d) - loss(nm, d)) / (2 * eps);
        fd_norm += g * g;
      }
    }
    CHECK(std::abs(rec.module_scores.at(j) - fd_norm) / fd_norm < 1e-4);
  }
}

TEST_CASE("scores sum over mini-batches and only cover trainable modules") {
  const auto net = hand_net();
  const auto d = make_data(7, 3, 2, 3);
  const auto alloc = AllocationMap::from_string("01");
  const auto full = local_ig_scores(net, alloc, d, 3);
  REQUIRE(full.module_scores.size() == 1);
  REQUIRE(full.module_scores.count(1) == 1);
  double sum = 0.0;
  for (const auto& idx : {std::vector<int>{0, 1, 2}, std::vector<int>{3, 4, 5}, std::vector<int>{6}}) {
    sum += local_ig_scores(net, alloc, d.subset(idx), 100).module_scores.at(1);
  }
  CHECK(full.module_scores.at(1) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("loss scaling by c scales scores by c squared and keeps the allocation") {
  ToyModelConfig c;
  c.num_blocks = 12;
  c.hidden = 6;
  c.rank = 2;
  c.input_dim = 5;
  c.num_classes = 3;
  ToyLoRANet net = ToyLoRANet::random(c, 4);
  const auto d = make_data(10, 5, 3, 5);
  const auto alloc = AllocationMap::from_string("001101011111");
  const auto a = local_ig_scores(net, alloc, d, 4, 1.0);
  const auto b = local_ig_scores(net, alloc, d, 4, 3.0);
  for (const auto& [j, s] : a.module_scores) {
    CHECK(b.module_scores.at(j) == doctest::Approx(9.0 * s).epsilon(1e-12));
  }
  // Ranking under the allocator is unchanged.
  auto hist = update_history(ScoreHistory(12, 5), std::vector<IGScoreRecord>{a}, 0);
  auto hist_b = update_history(ScoreHistory(12, 5), std::vector<IGScoreRecord>{b}, 0);
  const auto va = value_function(hist, a, alloc);
  const auto vb = value_function(hist_b, b, alloc);
  for (std::size_t j = 0; j < va.size(); ++j) CHECK(vb[j] == doctest::Approx(9.0 * va[j]));
  KnapsackInstance ia{reference_vit_profile(), 30 * kGigabyte, 496, va};
  KnapsackInstance ib{reference_vit_profile(), 30 * kGigabyte, 496, vb};
  CHECK(optimize_allocation(ia).map == optimize_allocation(ib).map);
}

TEST_CASE("history means") {
  ScoreHistory h(4, 3);
  h = update_history(h, std::vector<IGScoreRecord>{record(0, 1, {{3, 5.0}})}, 0);
  CHECK(h.buffer(3).back().mean_score == 5.0);
  h = update_history(h, std::vector<IGScoreRecord>{record(1, 1, {{3, 2.0}}), record(1, 2, {{3, 4.0}})}, 1);
  CHECK(h.buffer(3).back().mean_score == 3.0);
  CHECK(h.buffer(3).size() == 2);
  CHECK(h.buffer(0).empty());
  CHECK(h.temporal_mean(3) == doctest::Approx(4.0));
  CHECK(h.temporal_mean(0) == 0.0);
  CHECK_THROWS_AS(update_history(h, std::vector<IGScoreRecord>{record(1, 1, {{0, 1.0}})}, 2),
                  PreconditionError);
}

TEST_CASE("window eviction: a stale large score stops mattering") {
  ScoreHistory h(2, 3);
  h = update_history(h, std::vector<IGScoreRecord>{record(0, 0, {{0, 1e6}})}, 0);
  for (int t = 1; t <= 2; ++t) {
    h = update_history(h, std::vector<IGScoreRecord>{record(t, 0, {{0, 1.0}})}, t);
    CHECK(h.temporal_mean(0) > 1000.0);
  }
  h = update_history(h, std::vector<IGScoreRecord>{record(3, 0, {{0, 1.0}})}, 3);
  CHECK(h.temporal_mean(0) == 1.0);
  CHECK(h.buffer(0).size() == 3);
  // Rounds without any reports still advance the window.
  h = update_history(h, std::vector<IGScoreRecord>{}, 6);
  CHECK(h.buffer(0).empty());
}

TEST_CASE("value function") {
  ScoreHistory h(3, 1);
  SUBCASE("cold start is uniform") {
    CHECK(value_function(h, std::nullopt, std::nullopt) == std::vector<double>(3, 1.0));
  }
  SUBCASE("single client, window 1: collapses to its own score") {
    const auto r = record(0, 0, {{1, 2.5}});
    h = update_history(h, std::vector<IGScoreRecord>{r}, 0);
    const auto v = value_function(h, r, AllocationMap::from_string("010"));
    CHECK(v[1] == doctest::Approx(2.5));
    CHECK(v[0] == 0.0);
    CHECK(v[2] == 0.0);
  }
  SUBCASE("untrained module takes the temporal mean") {
    h = update_history(h, std::vector<IGScoreRecord>{record(0, 7, {{2, 4.0}})}, 0);
    const auto mine = record(0, 0, {{1, 1.0}});
    const auto v = value_function(h, mine, AllocationMap::from_string("010"));
    CHECK(v[2] == doctest::Approx(4.0));
    CHECK(v[1] == doctest::Approx(0.5));  // (1 + 0) / 2
  }
}

TEST_CASE("sparsity: modules nobody trains fall to zero once the window passes") {
  ScoreHistory h(3, 2);
  h = update_history(h, std::vector<IGScoreRecord>{record(0, 0, {{0, 1.0}, {2, 3.0}})}, 0);
  for (int t = 1; t < 5; ++t) {
    h = update_history(h, std::vector<IGScoreRecord>{record(t, 0, {{2, 3.0}})}, t);
  }
  const auto v = value_function(h, record(4, 0, {{2, 3.0}}), AllocationMap::from_string("001"));
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == doctest::Approx(3.0));
}

TEST_CASE("permutation equivariance of client ids and order") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<IGScoreRecord> recs;
  for (int c = 0; c < 9; ++c) {
    std::map<int, double> s;
    for (int j = 0; j < 5; ++j) {
      if (rng() % 2) s[j] = u(rng);
    }
    recs.push_back(record(0, c, s));
  }
  const auto base = update_history(ScoreHistory(5, 4), recs, 0);
  for (int trial = 0; trial < 10; ++trial) {
    auto perm = recs;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i].client_id = static_cast<int>(100 - i);
    const auto h = update_history(ScoreHistory(5, 4), perm, 0);
    for (int j = 0; j < 5; ++j) CHECK(h.temporal_mean(j) == base.temporal_mean(j));
  }
}

TEST_CASE("score history serialization") {
  ScoreHistory h(2, 2);
  h = update_history(h, std::vector<IGScoreRecord>{record(0, 0, {{1, 2.0}})}, 0);
  const auto j = to_json(h, 0);
  CHECK(j.at("modules").size() == 2);
  CHECK(j.at("modules")[1].at("temporal_mean").get<double>() == 2.0);
  CHECK(to_json(record(3, 4, {{1, 0.5}})).at("module_scores").at("1").get<double>() == 0.5);
}
