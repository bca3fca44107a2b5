#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "dpcml/dpcml.hpp"
#include "oracles.hpp"

namespace dpcml::ref {

struct GradCase {
  EmbeddingStore<double> store;
  std::vector<Triplet> triplets;
  ModelConfig config;
};

// Random batch over a random store: every user gets 1-3 triplets with S
// negatives drawn from items other than the positive.
inline GradCase random_grad_case(std::size_t users, std::size_t items, std::size_t C, std::size_t d,
                                 ScoreVariant variant, DcrsVariant dcrs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase g;
  g.config.C = static_cast<std::uint32_t>(C);
  g.config.d = static_cast<std::uint32_t>(d);
  g.config.variant = variant;
  g.config.dcrs_variant = dcrs;
  g.config.margin = std::array{0.5, 1.0, 1.5}[rng() % 3];
  g.config.eta = dcrs == DcrsVariant::off ? 0.0 : std::array{1.0, 10.0}[rng() % 2];
  // Alternate bands so both the lower and the upper DCRS branch get exercised.
  if (rng() % 2) {
    g.config.delta1 = 0.1;
    g.config.delta2 = 0.5;
  } else {
    g.config.delta1 = 1.5;
    g.config.delta2 = 3.0;
  }
  g.store = random_store<double>(users, items, C, d, variant, seed);
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t n = 1 + rng() % 3;
    for (std::size_t t = 0; t < n; ++t) {
      Triplet tr;
      tr.u = static_cast<UserIndex>(u);
      tr.v_pos = static_cast<ItemIndex>(rng() % items);
      const std::size_t S = 1 + rng() % 3;
      while (tr.v_negs.size() < S) {
        const auto v = static_cast<ItemIndex>(rng() % items);
        if (v != tr.v_pos) tr.v_negs.push_back(v);
      }
      g.triplets.push_back(tr);
    }
  }
  return g;
}

// True when every hinge, every min over user vectors and every DCRS band
// edge is at least `gap` away from its kink.
inline bool kink_free(const GradCase& g, double gap = 1e-3) {
  const auto& s = g.store;
  auto min_gap_ok = [&](std::size_t u, std::size_t v) {
    if (s.C() < 2) return true;
    std::vector<double> vals;
    for (std::size_t c = 0; c < s.C(); ++c) vals.push_back(vector_score(s.variant(), s.user(u, c), s.item(v)));
    std::sort(vals.begin(), vals.end());
    return vals[1] - vals[0] > gap;
  };
  for (const auto& t : g.triplets) {
    if (!min_gap_ok(t.u, t.v_pos)) return false;
    for (auto n : t.v_negs) {
      if (!min_gap_ok(t.u, n)) return false;
      const double h = g.config.margin + brute_score(s, t.u, t.v_pos) - brute_score(s, t.u, n);
      if (std::abs(h) < gap) return false;
    }
    if (s.C() >= 2 && g.config.dcrs_variant != DcrsVariant::off) {
      const double delta = user_diversity(s, t.u);
      if (std::abs(delta - g.config.delta1) < gap || std::abs(delta - g.config.delta2) < gap) return false;
    }
  }
  return true;
}

struct GradCheck {
  double max_rel_error = 0.0;
  double directional_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central differences of batch_objective(...).total over every coordinate
// of both tables. Relative error is |a - f| / max(|a|, |f|, floor); the
// floor keeps coordinates whose true derivative is 0 from dividing noise by
// noise.
inline GradCheck check_gradients(GradCase g, double h = 1e-5, double floor = 1e-6) {
  GradientSink<double> sink(g.store);
  batch_gradients(g.store, std::span<const Triplet>(g.triplets), g.config, sink);
  const auto [gu, gi] = dense_gradient(g.store, sink);

  auto objective = [&] { return batch_objective(g.store, std::span<const Triplet>(g.triplets), g.config).total; };
  GradCheck out;
  auto probe = [&](double& x, double analytic) {
    const double saved = x;
    x = saved + h;
    const double up = objective();
    x = saved - h;
    const double down = objective();
    x = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
    ++out.coordinates;
  };
  auto users = g.store.user_table();
  for (std::size_t k = 0; k < users.size(); ++k) probe(users[k], gu[k]);
  auto items = g.store.item_table();
  for (std::size_t k = 0; k < items.size(); ++k) probe(items[k], gi[k]);

  // Directional derivative along a random direction.
  std::mt19937_64 rng(users.size() * 31 + items.size());
  std::normal_distribution<double> normal;
  std::vector<double> du(users.size()), di(items.size());
  double analytic = 0.0;
  for (std::size_t k = 0; k < du.size(); ++k) analytic += (du[k] = normal(rng)) * gu[k];
  for (std::size_t k = 0; k < di.size(); ++k) analytic += (di[k] = normal(rng)) * gi[k];
  auto shift = [&](double t) {
    auto ut = g.store.user_table();
    auto it = g.store.item_table();
    for (std::size_t k = 0; k < du.size(); ++k) ut[k] += t * du[k];
    for (std::size_t k = 0; k < di.size(); ++k) it[k] += t * di[k];
  };
  const auto base = g.store;
  shift(h);
  const double up = objective();
  g.store = base;
  shift(-h);
  const double down = objective();
  g.store = base;
  const double numeric = (up - down) / (2 * h);
  out.directional_rel_error =
      std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
  return out;
}

}  // namespace dpcml::ref
