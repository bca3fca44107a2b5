#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpcml/config.hpp"
#include "dpcml/data.hpp"
#include "dpcml/error.hpp"
#include "dpcml/rng.hpp"

namespace dpcml {

// C vectors per user and one per item, stored flat: user vector c of user u
// starts at (u * C + c) * d, item v at v * d.
template <class Real>
class EmbeddingStore {
 public:
  using value_type = Real;

  EmbeddingStore() = default;
  EmbeddingStore(std::size_t num_users, std::size_t num_items, std::size_t C, std::size_t d, double r,
                 ScoreVariant variant)
      : num_users_(num_users), num_items_(num_items), C_(C), d_(d), r_(r), variant_(variant),
        users_(num_users * C * d, Real(0)), items_(num_items * d, Real(0)) {
    if (C < 1 || d < 1) throw ConfigError("embedding store needs C >= 1 and d >= 1");
    if (!(r > 0)) throw ConfigError("embedding radius must be > 0");
  }

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t C() const noexcept { return C_; }
  std::size_t dim() const noexcept { return d_; }
  double radius() const noexcept { return r_; }
  ScoreVariant variant() const noexcept { return variant_; }

  std::span<Real> user(std::size_t u, std::size_t c) { return {users_.data() + (u * C_ + c) * d_, d_}; }
  std::span<const Real> user(std::size_t u, std::size_t c) const {
    return {users_.data() + (u * C_ + c) * d_, d_};
  }
  std::span<Real> item(std::size_t v) { return {items_.data() + v * d_, d_}; }
  std::span<const Real> item(std::size_t v) const { return {items_.data() + v * d_, d_}; }

  std::span<Real> user_table() noexcept { return users_; }
  std::span<const Real> user_table() const noexcept { return users_; }
  std::span<Real> item_table() noexcept { return items_; }
  std::span<const Real> item_table() const noexcept { return items_; }

  void check_user(std::size_t u) const {
    if (u >= num_users_)
      throw BoundsError("user index " + std::to_string(u) + " out of range [0, " + std::to_string(num_users_) + ")");
  }
  void check_item(std::size_t v) const {
    if (v >= num_items_)
      throw BoundsError("item index " + std::to_string(v) + " out of range [0, " + std::to_string(num_items_) + ")");
  }

  bool operator==(const EmbeddingStore&) const = default;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::size_t C_ = 1;
  std::size_t d_ = 1;
  double r_ = 1.0;
  ScoreVariant variant_ = ScoreVariant::euclidean;
  std::vector<Real> users_;
  std::vector<Real> items_;
};

template <class To, class From>
EmbeddingStore<To> convert_store(const EmbeddingStore<From>& src) {
  EmbeddingStore<To> dst(src.num_users(), src.num_items(), src.C(), src.dim(), src.radius(), src.variant());
  std::transform(src.user_table().begin(), src.user_table().end(), dst.user_table().begin(),
                 [](From x) { return static_cast<To>(x); });
  std::transform(src.item_table().begin(), src.item_table().end(), dst.item_table().begin(),
                 [](From x) { return static_cast<To>(x); });
  return dst;
}

struct Score {
  double value = 0.0;
  std::size_t argmin_c = 0;
};

template <class Real>
inline double squared_distance(std::span<const Real> a, std::span<const Real> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    acc += diff * diff;
  }
  return acc;
}

template <class Real>
inline double dot(std::span<const Real> a, std::span<const Real> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return acc;
}

template <class Real>
inline double squared_norm(std::span<const Real> a) {
  return dot(a, a);
}

// Distance between one user vector and an item under the store's variant:
// squared Euclidean, or 1 - <user, item> on the sphere.
template <class Real>
inline double vector_score(ScoreVariant variant, std::span<const Real> user, std::span<const Real> item) {
  return variant == ScoreVariant::euclidean ? squared_distance(user, item) : 1.0 - dot(user, item);
}

// Minimum over the user's C vectors; ties go to the lowest c.
template <class Real>
Score score_unchecked(const EmbeddingStore<Real>& store, std::size_t u, std::size_t v) {
  Score best{vector_score(store.variant(), store.user(u, 0), store.item(v)), 0};
  for (std::size_t c = 1; c < store.C(); ++c) {
    const double s = vector_score(store.variant(), store.user(u, c), store.item(v));
    if (s < best.value) best = {s, c};
  }
  return best;
}

template <class Real>
Score score(const EmbeddingStore<Real>& store, std::size_t u, std::size_t v) {
  store.check_user(u);
  store.check_item(v);
  return score_unchecked(store, u, v);
}

// Euclidean: vectors outside the radius-r ball are rescaled onto it.
// Spherical: every vector is rescaled to unit norm; a zero vector becomes e1.
template <class Real>
void project_vector(std::span<Real> g, ScoreVariant variant, double r) {
  const double norm = std::sqrt(squared_norm(std::span<const Real>(g)));
  if (variant == ScoreVariant::euclidean) {
    if (norm > r) {
      const double scale = r / norm;
      for (auto& x : g) x = static_cast<Real>(static_cast<double>(x) * scale);
    }
    return;
  }
  if (norm == 0.0) {
    std::fill(g.begin(), g.end(), Real(0));
    g[0] = Real(1);
    return;
  }
  for (auto& x : g) x = static_cast<Real>(static_cast<double>(x) / norm);
}

template <class Real>
void project(EmbeddingStore<Real>& store) {
  for (std::size_t u = 0; u < store.num_users(); ++u)
    for (std::size_t c = 0; c < store.C(); ++c) project_vector(store.user(u, c), store.variant(), store.radius());
  for (std::size_t v = 0; v < store.num_items(); ++v) project_vector(store.item(v), store.variant(), store.radius());
}

// Entries ~ N(0, 1/d), then projected onto the feasible set.
template <class Real = float>
EmbeddingStore<Real> init_store(std::size_t num_users, std::size_t num_items, const ModelConfig& config,
                                std::uint64_t seed) {
  EmbeddingStore<Real> store(num_users, num_items, config.C, config.d, config.r, config.variant);
  Rng rng = derive_rng(seed, {0x1417});
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config.d)));
  for (auto& x : store.user_table()) x = static_cast<Real>(normal(rng));
  for (auto& x : store.item_table()) x = static_cast<Real>(normal(rng));
  project(store);
  return store;
}

struct RankedItems {
  std::vector<ItemIndex> items;
  bool is_short = false;  // fewer than N candidates remained
};

// The N non-excluded items with the smallest score, ascending; ties by lower
// item index.
template <class Real>
RankedItems rank_items(const EmbeddingStore<Real>& store, std::size_t u, std::span<const ItemIndex> exclude,
                       std::size_t N) {
  if (N < 1) throw ConfigError("rank cutoff N must be >= 1");
  store.check_user(u);
  std::vector<char> excluded(store.num_items(), 0);
  for (ItemIndex v : exclude) {
    store.check_item(v);
    excluded[v] = 1;
  }
  std::vector<std::pair<double, ItemIndex>> scored;
  scored.reserve(store.num_items());
  for (std::size_t v = 0; v < store.num_items(); ++v)
    if (!excluded[v]) scored.emplace_back(score_unchecked(store, u, v).value, static_cast<ItemIndex>(v));

  RankedItems out;
  const std::size_t keep = std::min(N, scored.size());
  out.is_short = keep < N;
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end());
  out.items.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.items.push_back(scored[i].second);
  return out;
}

}  // namespace dpcml
