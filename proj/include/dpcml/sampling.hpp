#pragma once

#include <algorithm>
#include <random>
#include <span>
#include <vector>

#include "dpcml/config.hpp"
#include "dpcml/data.hpp"
#include "dpcml/embedding.hpp"
#include "dpcml/error.hpp"
#include "dpcml/rng.hpp"
#include "dpcml/triplet.hpp"

namespace dpcml {

// Draws negatives for a user: items outside the user's train positives.
// Validation and test items stay eligible, since training must treat them as
// unobserved. Draws are with replacement.
class NegativeSampler {
 public:
  explicit NegativeSampler(const InteractionDataset& ds) : ds_(&ds) {
    cumulative_.resize(ds.num_items);
    double total = 0.0;
    for (std::size_t v = 0; v < ds.num_items; ++v) {
      total += double(ds.item_popularity[v]) + 1.0;
      cumulative_[v] = total;
    }
  }

  bool excluded(UserIndex u, ItemIndex v) const {
    const auto& pos = ds_->train_pos[u];
    return std::binary_search(pos.begin(), pos.end(), v);
  }

  std::vector<ItemIndex> uniform(UserIndex u, std::size_t S, Rng& rng) const {
    check_candidates(u);
    std::vector<ItemIndex> out;
    out.reserve(S);
    std::vector<ItemIndex> fallback;
    while (out.size() < S) {
      if (!fallback.empty()) {
        out.push_back(fallback[uniform_index(rng, fallback.size())]);
        continue;
      }
      bool drawn = false;
      for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
        const auto v = static_cast<ItemIndex>(uniform_index(rng, ds_->num_items));
        if (!excluded(u, v)) {
          out.push_back(v);
          drawn = true;
          break;
        }
      }
      if (!drawn) fallback = candidates(u);
    }
    return out;
  }

  // Proportional to train popularity + 1 over the non-excluded items.
  std::vector<ItemIndex> popularity(UserIndex u, std::size_t S, Rng& rng) const {
    check_candidates(u);
    std::vector<ItemIndex> out;
    out.reserve(S);
    std::vector<ItemIndex> fallback;
    std::discrete_distribution<std::size_t> restricted;
    while (out.size() < S) {
      if (!fallback.empty()) {
        out.push_back(fallback[restricted(rng)]);
        continue;
      }
      bool drawn = false;
      for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
        const auto v = draw_popular(rng);
        if (!excluded(u, v)) {
          out.push_back(v);
          drawn = true;
          break;
        }
      }
      if (!drawn) {
        fallback = candidates(u);
        std::vector<double> w;
        w.reserve(fallback.size());
        for (ItemIndex v : fallback) w.push_back(double(ds_->item_popularity[v]) + 1.0);
        restricted = std::discrete_distribution<std::size_t>(w.begin(), w.end());
      }
    }
    return out;
  }

  std::vector<ItemIndex> candidates(UserIndex u) const {
    std::vector<ItemIndex> out;
    const auto& pos = ds_->train_pos[u];
    out.reserve(ds_->num_items - pos.size());
    auto it = pos.begin();
    for (ItemIndex v = 0; v < ds_->num_items; ++v) {
      while (it != pos.end() && *it < v) ++it;
      if (it == pos.end() || *it != v) out.push_back(v);
    }
    return out;
  }

 private:
  static constexpr int kMaxRejections = 64;

  ItemIndex draw_popular(Rng& rng) const {
    const double x = std::uniform_real_distribution<double>(0.0, cumulative_.back())(rng);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
    return static_cast<ItemIndex>(std::min<std::size_t>(it - cumulative_.begin(), cumulative_.size() - 1));
  }

  void check_candidates(UserIndex u) const {
    if (u >= ds_->num_users) throw BoundsError("user index out of range");
    if (ds_->train_pos[u].size() >= ds_->num_items)
      throw SamplingError("user " + std::to_string(u) + " has no negative candidates");
  }

  const InteractionDataset* ds_;
  std::vector<double> cumulative_;
};

inline std::vector<ItemIndex> sample_uniform(const InteractionDataset& ds, UserIndex u, std::size_t S, Rng& rng) {
  return NegativeSampler(ds).uniform(u, S, rng);
}

inline std::vector<ItemIndex> sample_popularity(const InteractionDataset& ds, UserIndex u, std::size_t S, Rng& rng) {
  return NegativeSampler(ds).popularity(u, S, rng);
}

// The candidate closest to the user (smallest score), i.e. the one that
// most violates the ranking inequality. Ties go to the lower item index.
template <class Real>
ItemIndex select_hard(const EmbeddingStore<Real>& store, UserIndex u, std::span<const ItemIndex> candidates) {
  if (candidates.empty()) throw SamplingError("hard selection needs at least one candidate");
  ItemIndex best = candidates.front();
  double best_score = score(store, u, best).value;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const ItemIndex v = candidates[i];
    const double s = score(store, u, v).value;
    if (s < best_score || (s == best_score && v < best)) {
      best = v;
      best_score = s;
    }
  }
  return best;
}

// Every train positive paired with every non-positive item; the exact
// pairwise risk expressed as one batch.
inline std::vector<Triplet> enumerate_triplets(const InteractionDataset& ds) {
  const NegativeSampler sampler(ds);
  std::vector<Triplet> out;
  for (UserIndex u = 0; u < ds.num_users; ++u) {
    const auto negs = sampler.candidates(u);
    if (negs.empty()) continue;
    for (ItemIndex v : ds.train_pos[u]) out.push_back(Triplet{u, v, negs});
  }
  return out;
}

}  // namespace dpcml
