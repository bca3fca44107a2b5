#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpcml/config.hpp"
#include "dpcml/data.hpp"
#include "dpcml/embedding.hpp"
#include "dpcml/error.hpp"
#include "dpcml/eval.hpp"
#include "dpcml/objective.hpp"
#include "dpcml/parallel.hpp"
#include "dpcml/rng.hpp"
#include "dpcml/sampling.hpp"

namespace dpcml {

// Per-row Adam state laid out like the store it optimises. Each row keeps
// its own step count, so bias correction follows how often that row has
// been touched (lazy sparse Adam).
template <class Real>
struct AdamMoments {
  std::vector<Real> user_m, user_v, item_m, item_v;
  std::vector<std::uint32_t> user_steps, item_steps;

  AdamMoments() = default;
  explicit AdamMoments(const EmbeddingStore<Real>& store)
      : user_m(store.user_table().size(), Real(0)), user_v(store.user_table().size(), Real(0)),
        item_m(store.item_table().size(), Real(0)), item_v(store.item_table().size(), Real(0)),
        user_steps(store.num_users() * store.C(), 0), item_steps(store.num_items(), 0) {}
};

template <class Real>
struct TrainState {
  EmbeddingStore<Real> store;
  AdamMoments<Real> moments;
  std::size_t epoch = 0;
  Rng rng;
};

template <class Real = float>
TrainState<Real> init_state(const InteractionDataset& ds, const ModelConfig& config) {
  config.validate();
  TrainState<Real> state;
  state.store = init_store<Real>(ds.num_users, ds.num_items, config, config.seed);
  state.moments = AdamMoments<Real>(state.store);
  state.rng = derive_rng(config.seed, {0x7a11});
  return state;
}

struct TrainOptions {
  std::size_t workers = 1;
};

namespace detail {

// Fixed fan-out per batch; the reduction order depends only on this, never
// on the worker count.
inline constexpr std::size_t kGradientChunks = 8;

template <class Real, class Acc>
void adam_row(std::span<Real> x, std::span<Real> m, std::span<Real> v, std::uint32_t& step, std::span<const Acc> g,
              const ModelConfig& c) {
  ++step;
  const double bias1 = 1.0 - std::pow(c.beta1, double(step));
  const double bias2 = 1.0 - std::pow(c.beta2, double(step));
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double grad = double(g[k]);
    const double mk = c.beta1 * double(m[k]) + (1.0 - c.beta1) * grad;
    const double vk = c.beta2 * double(v[k]) + (1.0 - c.beta2) * grad * grad;
    m[k] = Real(mk);
    v[k] = Real(vk);
    const double update = c.lr * (mk / bias1) / (std::sqrt(vk / bias2) + c.eps_adam);
    x[k] = Real(double(x[k]) - update);
  }
}

template <class Real>
void apply_adam(EmbeddingStore<Real>& store, AdamMoments<Real>& mom, const GradientSink<double>& grad,
                const ModelConfig& config) {
  const std::size_t d = store.dim();
  const auto& urows = grad.touched_user_rows();
  for (std::size_t k = 0; k < urows.size(); ++k) {
    const std::size_t row = urows[k];
    const std::size_t u = row / store.C(), c = row % store.C();
    adam_row(store.user(u, c), std::span<Real>(mom.user_m).subspan(row * d, d),
             std::span<Real>(mom.user_v).subspan(row * d, d), mom.user_steps[row], grad.user_values(k), config);
    project_vector(store.user(u, c), store.variant(), store.radius());
  }
  const auto& items = grad.touched_items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const std::size_t v = items[k];
    adam_row(store.item(v), std::span<Real>(mom.item_m).subspan(v * d, d),
             std::span<Real>(mom.item_v).subspan(v * d, d), mom.item_steps[v], grad.item_values(k), config);
    project_vector(store.item(v), store.variant(), store.radius());
  }
}

// One pass over every train positive. With `moments` the batches are
// applied (training); without, the store is left untouched and only the
// losses are reported.
template <class Real>
LossBreakdown run_epoch(EmbeddingStore<Real>& store, AdamMoments<Real>* moments, Rng& rng,
                        const InteractionDataset& ds, const ModelConfig& config, const TrainOptions& opt) {
  check_store_matches(store.num_users(), store.num_items(), ds);
  std::vector<std::pair<UserIndex, ItemIndex>> pairs;
  pairs.reserve(ds.num_interactions(Split::train));
  for (UserIndex u = 0; u < ds.num_users; ++u)
    for (ItemIndex v : ds.train_pos[u]) pairs.emplace_back(u, v);
  if (pairs.empty()) throw EmptyDatasetError("no train interactions");
  std::shuffle(pairs.begin(), pairs.end(), rng);

  const NegativeSampler sampler(ds);
  std::vector<GradientSink<double>> chunk_sinks;
  chunk_sinks.reserve(kGradientChunks);
  for (std::size_t k = 0; k < kGradientChunks; ++k) chunk_sinks.emplace_back(store);
  GradientSink<double> batch_sink(store);

  LossBreakdown epoch;
  std::size_t batches = 0;
  std::vector<Triplet> triplets;
  for (std::size_t begin = 0; begin < pairs.size(); begin += config.batch_size, ++batches) {
    const std::size_t end = std::min(pairs.size(), begin + config.batch_size);
    triplets.clear();
    for (std::size_t i = begin; i < end; ++i) {
      const auto [u, v] = pairs[i];
      auto negs = config.sampler == Sampler::popularity ? sampler.popularity(u, config.S, rng)
                                                        : sampler.uniform(u, config.S, rng);
      triplets.push_back(Triplet{u, v, std::move(negs)});
    }

    const std::size_t n = triplets.size();
    const std::size_t chunks = std::min(kGradientChunks, n);
    auto chunk_range = [&](std::size_t k) { return std::pair{k * n / chunks, (k + 1) * n / chunks}; };

    if (config.sampler == Sampler::hard) {
      parallel_for(chunks, opt.workers, [&](std::size_t k) {
        const auto [lo, hi] = chunk_range(k);
        for (std::size_t i = lo; i < hi; ++i) {
          auto& t = triplets[i];
          t.v_negs = {select_hard(store, t.u, t.v_negs)};
        }
      });
    }

    const BatchPlan plan = plan_batch(triplets);
    std::vector<double> ranking(chunks, 0.0), dcrs(chunks, 0.0);
    GradientSink<double>* no_sink = nullptr;
    parallel_for(chunks, opt.workers, [&](std::size_t k) {
      const auto [lo, hi] = chunk_range(k);
      auto* sink = moments ? &chunk_sinks[k] : no_sink;
      if (sink) sink->clear();
      for (std::size_t i = lo; i < hi; ++i)
        ranking[k] += accumulate_triplet(store, triplets[i], plan.triplet_weight[i], config, sink);
      for (std::size_t j = 0; j < plan.users.size(); ++j)
        if (plan.first_triplet[j] >= lo && plan.first_triplet[j] < hi)
          dcrs[k] += accumulate_dcrs(store, plan.users[j], plan.user_weight, config, sink);
    });

    LossBreakdown batch;
    for (std::size_t k = 0; k < chunks; ++k) {
      batch.ranking += ranking[k];
      batch.dcrs += dcrs[k];
    }
    batch.total = batch.ranking + config.eta * batch.dcrs;
    if (!std::isfinite(batch.total)) throw DivergenceError(batches, "non-finite loss");

    epoch.ranking += batch.ranking;
    epoch.dcrs += batch.dcrs;
    epoch.total += batch.total;

    if (moments) {
      batch_sink.clear();
      for (std::size_t k = 0; k < chunks; ++k) batch_sink.merge(chunk_sinks[k]);
      apply_adam(store, *moments, batch_sink, config);
    }
  }
  epoch.ranking /= double(batches);
  epoch.dcrs /= double(batches);
  epoch.total /= double(batches);
  return epoch;
}

}  // namespace detail

// One epoch of sampled-triplet Adam training; returns the mean batch loss
// (each batch measured before its update).
template <class Real>
LossBreakdown train_epoch(TrainState<Real>& state, const InteractionDataset& ds, const ModelConfig& config,
                          const TrainOptions& opt = {}) {
  auto loss = detail::run_epoch(state.store, &state.moments, state.rng, ds, config, opt);
  ++state.epoch;
  return loss;
}

// The loss train_epoch would report from this state, with no update applied.
template <class Real>
LossBreakdown evaluate_epoch(const TrainState<Real>& state, const InteractionDataset& ds, const ModelConfig& config,
                             const TrainOptions& opt = {}) {
  auto store = state.store;
  auto rng = state.rng;
  return detail::run_epoch(store, static_cast<AdamMoments<Real>*>(nullptr), rng, ds, config, opt);
}

struct TrainLogRow {
  std::size_t epoch = 0;
  LossBreakdown loss;
  double valid_mrr = 0.0;
};

template <class Real>
struct FitResult {
  EmbeddingStore<Real> best;
  EmbeddingStore<Real> final_store;
  std::size_t best_epoch = 0;  // 0: the initial store
  double best_valid_mrr = 0.0;
  std::vector<TrainLogRow> log;
};

struct FitOptions {
  std::size_t workers = 1;
  std::function<void(const TrainLogRow&)> on_epoch;
};

// Trains for config.epochs epochs, keeping the store with the best
// validation MRR (earliest on ties).
template <class Real = float>
FitResult<Real> fit(const InteractionDataset& ds, const ModelConfig& config, const FitOptions& opt = {}) {
  auto state = init_state<Real>(ds, config);
  FitResult<Real> result;
  result.best = state.store;
  bool have_best = false;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    TrainLogRow row;
    row.loss = train_epoch(state, ds, config, TrainOptions{opt.workers});
    row.epoch = state.epoch;
    row.valid_mrr = validation_mrr(state.store, ds, opt.workers);
    if (!have_best || row.valid_mrr > result.best_valid_mrr) {
      have_best = true;
      result.best = state.store;
      result.best_epoch = row.epoch;
      result.best_valid_mrr = row.valid_mrr;
    }
    result.log.push_back(row);
    if (opt.on_epoch) opt.on_epoch(row);
  }
  result.final_store = std::move(state.store);
  return result;
}

inline std::string training_log_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "epoch,ranking,dcrs,total,valid_mrr\n";
  for (const auto& row : log)
    out += std::to_string(row.epoch) + "," + format_real(row.loss.ranking) + "," + format_real(row.loss.dcrs) + "," +
           format_real(row.loss.total) + "," + format_real(row.valid_mrr) + "\n";
  return out;
}

}  // namespace dpcml
