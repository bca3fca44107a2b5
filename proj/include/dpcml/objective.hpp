#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "dpcml/config.hpp"
#include "dpcml/data.hpp"
#include "dpcml/embedding.hpp"
#include "dpcml/error.hpp"
#include "dpcml/triplet.hpp"

namespace dpcml {

struct LossBreakdown {
  double ranking = 0.0;
  double dcrs = 0.0;
  double total = 0.0;
};

// Sparse gradient accumulator over user vectors (u, c) and item vectors.
// Rows appear zero-initialised on first touch; untouched rows are zero.
template <class Acc>
class GradientSink {
 public:
  GradientSink() = default;
  GradientSink(std::size_t num_users, std::size_t C, std::size_t num_items, std::size_t d)
      : C_(C), d_(d), user_slot_(num_users * C, kNone), item_slot_(num_items, kNone) {}

  template <class Real>
  explicit GradientSink(const EmbeddingStore<Real>& store)
      : GradientSink(store.num_users(), store.C(), store.num_items(), store.dim()) {}

  std::size_t dim() const noexcept { return d_; }

  std::span<Acc> user_row(std::size_t u, std::size_t c) {
    return row(user_slot_, user_rows_, user_values_, u * C_ + c);
  }
  std::span<Acc> item_row(std::size_t v) { return row(item_slot_, item_rows_, item_values_, v); }

  // nullptr when the row was never touched.
  const Acc* find_user(std::size_t u, std::size_t c) const {
    const auto slot = user_slot_.at(u * C_ + c);
    return slot == kNone ? nullptr : user_values_.data() + std::size_t(slot) * d_;
  }
  const Acc* find_item(std::size_t v) const {
    const auto slot = item_slot_.at(v);
    return slot == kNone ? nullptr : item_values_.data() + std::size_t(slot) * d_;
  }

  // Flat user-row ids (u * C + c) and item ids in first-touch order.
  const std::vector<std::size_t>& touched_user_rows() const noexcept { return user_rows_; }
  const std::vector<std::size_t>& touched_items() const noexcept { return item_rows_; }
  std::span<const Acc> user_values(std::size_t k) const { return {user_values_.data() + k * d_, d_}; }
  std::span<const Acc> item_values(std::size_t k) const { return {item_values_.data() + k * d_, d_}; }

  bool empty() const noexcept { return user_rows_.empty() && item_rows_.empty(); }

  void merge(const GradientSink& other) {
    for (std::size_t k = 0; k < other.user_rows_.size(); ++k) {
      auto dst = row(user_slot_, user_rows_, user_values_, other.user_rows_[k]);
      auto src = other.user_values(k);
      for (std::size_t i = 0; i < d_; ++i) dst[i] += src[i];
    }
    for (std::size_t k = 0; k < other.item_rows_.size(); ++k) {
      auto dst = row(item_slot_, item_rows_, item_values_, other.item_rows_[k]);
      auto src = other.item_values(k);
      for (std::size_t i = 0; i < d_; ++i) dst[i] += src[i];
    }
  }

  void clear() {
    for (auto r : user_rows_) user_slot_[r] = kNone;
    for (auto r : item_rows_) item_slot_[r] = kNone;
    user_rows_.clear();
    item_rows_.clear();
    user_values_.clear();
    item_values_.clear();
  }

 private:
  static constexpr std::uint32_t kNone = UINT32_MAX;

  std::span<Acc> row(std::vector<std::uint32_t>& slots, std::vector<std::size_t>& rows, std::vector<Acc>& values,
                     std::size_t id) {
    auto& slot = slots.at(id);
    if (slot == kNone) {
      slot = static_cast<std::uint32_t>(rows.size());
      rows.push_back(id);
      values.resize(values.size() + d_, Acc(0));
    }
    return {values.data() + std::size_t(slot) * d_, d_};
  }

  std::size_t C_ = 1;
  std::size_t d_ = 1;
  std::vector<std::uint32_t> user_slot_;
  std::vector<std::uint32_t> item_slot_;
  std::vector<std::size_t> user_rows_;
  std::vector<std::size_t> item_rows_;
  std::vector<Acc> user_values_;
  std::vector<Acc> item_values_;
};

template <class Real>
double hinge_loss(const EmbeddingStore<Real>& store, std::size_t u, std::size_t v_pos, std::size_t v_neg,
                  double margin) {
  const double value = margin + score(store, u, v_pos).value - score(store, u, v_neg).value;
  return std::max(0.0, value);
}

// Half the mean squared distance between a user's vectors, summed over
// ordered pairs (c1 == c2 terms included, they vanish). Zero when C == 1.
template <class Real>
double user_diversity(const EmbeddingStore<Real>& store, std::size_t u) {
  store.check_user(u);
  const std::size_t C = store.C();
  if (C < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = 0; b < C; ++b) sum += squared_distance(store.user(u, a), store.user(u, b));
  return sum / (2.0 * double(C) * double(C - 1));
}

inline bool dcrs_uses_lower(DcrsVariant v) { return v == DcrsVariant::full || v == DcrsVariant::lower_only; }
inline bool dcrs_uses_upper(DcrsVariant v) { return v == DcrsVariant::full || v == DcrsVariant::upper_only; }

// Two-sided hinge keeping delta inside [delta1, delta2].
inline double dcrs_penalty(double delta, double delta1, double delta2, DcrsVariant variant) {
  if (variant == DcrsVariant::full && delta1 > delta2) throw ConfigError("delta1 must be <= delta2");
  double p = 0.0;
  if (dcrs_uses_lower(variant)) p += std::max(0.0, delta1 - delta);
  if (dcrs_uses_upper(variant)) p += std::max(0.0, delta - delta2);
  return p;
}

// psi for one user; a single-vector user has no diversity to control.
template <class Real>
double user_penalty(const EmbeddingStore<Real>& store, std::size_t u, const ModelConfig& config) {
  if (store.C() < 2 || config.dcrs_variant == DcrsVariant::off) return 0.0;
  return dcrs_penalty(user_diversity(store, u), config.delta1, config.delta2, config.dcrs_variant);
}

// Batch weighting shared by objective and gradients: the ranking term is a
// mean over each user's triplets, then a mean over the distinct users of the
// batch; the DCRS term is a mean over the same users.
struct BatchPlan {
  std::vector<double> triplet_weight;  // 1 / (|users| * triplets of that user)
  std::vector<UserIndex> users;        // distinct, first-appearance order
  std::vector<std::size_t> first_triplet;
  double user_weight = 0.0;  // 1 / |users|
};

inline BatchPlan plan_batch(std::span<const Triplet> triplets) {
  if (triplets.empty()) throw Error("empty triplet batch");
  BatchPlan plan;
  std::unordered_map<UserIndex, std::size_t> count;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    if (triplets[i].v_negs.empty()) throw Error("triplet without negatives");
    if (count[triplets[i].u]++ == 0) {
      plan.users.push_back(triplets[i].u);
      plan.first_triplet.push_back(i);
    }
  }
  plan.user_weight = 1.0 / double(plan.users.size());
  plan.triplet_weight.resize(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i)
    plan.triplet_weight[i] = plan.user_weight / double(count[triplets[i].u]);
  return plan;
}

template <class Real>
LossBreakdown batch_objective(const EmbeddingStore<Real>& store, std::span<const Triplet> triplets,
                              const ModelConfig& config) {
  const BatchPlan plan = plan_batch(triplets);
  LossBreakdown loss;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    double sum = 0.0;
    for (ItemIndex neg : t.v_negs) sum += hinge_loss(store, t.u, t.v_pos, neg, config.margin);
    loss.ranking += plan.triplet_weight[i] * sum / double(t.v_negs.size());
  }
  for (UserIndex u : plan.users) loss.dcrs += plan.user_weight * user_penalty(store, u, config);
  loss.total = loss.ranking + config.eta * loss.dcrs;
  return loss;
}

namespace detail {

// sink += coef * d score / d (user vector c, item v)
template <class Real, class Acc>
void add_score_gradient(const EmbeddingStore<Real>& store, std::size_t u, std::size_t c, std::size_t v, double coef,
                        GradientSink<Acc>& sink) {
  const auto gu = store.user(u, c);
  const auto gv = store.item(v);
  auto du = sink.user_row(u, c);
  auto dv = sink.item_row(v);
  const std::size_t d = store.dim();
  if (store.variant() == ScoreVariant::euclidean) {
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = 2.0 * (double(gu[k]) - double(gv[k])) * coef;
      du[k] += Acc(diff);
      dv[k] -= Acc(diff);
    }
  } else {
    for (std::size_t k = 0; k < d; ++k) {
      du[k] -= Acc(coef * double(gv[k]));
      dv[k] -= Acc(coef * double(gu[k]));
    }
  }
}

}  // namespace detail

// Weighted hinge sum of one triplet; when sink is given, also adds its
// subgradient. Inactive hinges (value <= 0) contribute nothing; the min over
// user vectors routes through the lowest minimising c.
template <class Real, class Acc>
double accumulate_triplet(const EmbeddingStore<Real>& store, const Triplet& t, double weight,
                          const ModelConfig& config, GradientSink<Acc>* sink) {
  const Score pos = score_unchecked(store, t.u, t.v_pos);
  const double w = weight / double(t.v_negs.size());
  double loss = 0.0;
  for (ItemIndex neg : t.v_negs) {
    const Score sn = score_unchecked(store, t.u, neg);
    const double h = config.margin + pos.value - sn.value;
    if (h <= 0.0) continue;
    loss += w * h;
    if (sink) {
      detail::add_score_gradient(store, t.u, pos.argmin_c, t.v_pos, w, *sink);
      detail::add_score_gradient(store, t.u, sn.argmin_c, neg, -w, *sink);
    }
  }
  return loss;
}

// Weighted DCRS penalty of one user; when sink is given, also adds
// eta * weight * d psi / d g for each of the user's vectors.
template <class Real, class Acc>
double accumulate_dcrs(const EmbeddingStore<Real>& store, std::size_t u, double weight, const ModelConfig& config,
                       GradientSink<Acc>* sink) {
  const std::size_t C = store.C();
  if (C < 2 || config.dcrs_variant == DcrsVariant::off) return 0.0;
  const double delta = user_diversity(store, u);
  const double penalty = dcrs_penalty(delta, config.delta1, config.delta2, config.dcrs_variant);
  if (!sink) return weight * penalty;

  double sign = 0.0;
  if (dcrs_uses_lower(config.dcrs_variant) && delta < config.delta1) sign -= 1.0;
  if (dcrs_uses_upper(config.dcrs_variant) && delta > config.delta2) sign += 1.0;
  if (sign == 0.0 || config.eta == 0.0) return weight * penalty;

  // d delta / d g^c = 2 / (C (C - 1)) * (C g^c - sum_c' g^c')
  const std::size_t d = store.dim();
  std::vector<double> mean_sum(d, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const auto g = store.user(u, c);
    for (std::size_t k = 0; k < d; ++k) mean_sum[k] += double(g[k]);
  }
  const double scale = sign * config.eta * weight * 2.0 / (double(C) * double(C - 1));
  for (std::size_t c = 0; c < C; ++c) {
    const auto g = store.user(u, c);
    auto row = sink->user_row(u, c);
    for (std::size_t k = 0; k < d; ++k) row[k] += Acc(scale * (double(C) * double(g[k]) - mean_sum[k]));
  }
  return weight * penalty;
}

// Analytic subgradient of batch_objective(...).total.
template <class Real, class Acc>
void batch_gradients(const EmbeddingStore<Real>& store, std::span<const Triplet> triplets, const ModelConfig& config,
                     GradientSink<Acc>& sink) {
  const BatchPlan plan = plan_batch(triplets);
  for (std::size_t i = 0; i < triplets.size(); ++i)
    accumulate_triplet(store, triplets[i], plan.triplet_weight[i], config, &sink);
  for (UserIndex u : plan.users) accumulate_dcrs(store, u, plan.user_weight, config, &sink);
}

// Full-pair empirical risk: every train positive against every item outside
// the user's train positives, per-user normalised, plus DCRS over all users.
template <class Real>
LossBreakdown exact_objective(const EmbeddingStore<Real>& store, const InteractionDataset& ds,
                              const ModelConfig& config) {
  LossBreakdown loss;
  std::size_t users = 0;
  std::vector<char> positive(ds.num_items);
  for (UserIndex u = 0; u < ds.num_users; ++u) {
    const auto& pos = ds.train_pos[u];
    std::fill(positive.begin(), positive.end(), 0);
    for (ItemIndex v : pos) positive[v] = 1;
    const std::size_t n_neg = ds.num_items - pos.size();
    ++users;
    if (pos.empty() || n_neg == 0) continue;
    double sum = 0.0;
    for (ItemIndex vp : pos)
      for (ItemIndex vn = 0; vn < ds.num_items; ++vn)
        if (!positive[vn]) sum += hinge_loss(store, u, vp, vn, config.margin);
    loss.ranking += sum / (double(pos.size()) * double(n_neg));
  }
  for (UserIndex u = 0; u < ds.num_users; ++u)
    loss.dcrs += user_penalty(store, u, config);
  loss.ranking /= double(users);
  loss.dcrs /= double(users);
  loss.total = loss.ranking + config.eta * loss.dcrs;
  return loss;
}

}  // namespace dpcml
