#pragma once

// Test-only reference implementations. Each one is written straight from
// the formulas with naive loops and shares no code path with the library
// beyond the store accessors.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dpcml/dpcml.hpp"

namespace dpcml::ref {

// --- scores --------------------------------------------------------------

template <class Real>
double brute_score(const EmbeddingStore<Real>& s, std::size_t u, std::size_t v, std::size_t* argmin = nullptr) {
  double best = 0.0;
  std::size_t best_c = 0;
  for (std::size_t c = 0; c < s.C(); ++c) {
    double value = 0.0;
    if (s.variant() == ScoreVariant::euclidean) {
      for (std::size_t k = 0; k < s.dim(); ++k) {
        const double diff = double(s.user(u, c)[k]) - double(s.item(v)[k]);
        value += diff * diff;
      }
    } else {
      double ip = 0.0;
      for (std::size_t k = 0; k < s.dim(); ++k) ip += double(s.user(u, c)[k]) * double(s.item(v)[k]);
      value = 1.0 - ip;
    }
    if (c == 0 || value < best) {
      best = value;
      best_c = c;
    }
  }
  if (argmin) *argmin = best_c;
  return best;
}

// --- ranking metrics -------------------------------------------------------

struct BruteMetrics {
  std::map<std::size_t, double> p, r, ndcg;
  double ap = 0, mrr_first = 0, mrr_sum = 0;
};

inline BruteMetrics brute_metrics(const std::vector<ItemIndex>& ranking, const std::set<ItemIndex>& rel,
                                  const std::vector<std::size_t>& cutoffs) {
  BruteMetrics m;
  for (std::size_t N : cutoffs) {
    double hits = 0, dcg = 0, idcg = 0;
    for (std::size_t j = 1; j <= N && j <= ranking.size(); ++j)
      if (rel.count(ranking[j - 1])) {
        hits += 1;
        dcg += 1.0 / std::log2(double(j) + 1.0);
      }
    for (std::size_t k = 1; k <= std::min(N, rel.size()); ++k) idcg += 1.0 / std::log2(double(k) + 1.0);
    m.p[N] = hits / double(N);
    m.r[N] = hits / double(rel.size());
    m.ndcg[N] = dcg / idcg;
  }
  // AP: precision at every position j where a relevant item sits.
  double ap = 0;
  bool first = true;
  for (std::size_t j = 1; j <= ranking.size(); ++j) {
    if (!rel.count(ranking[j - 1])) continue;
    std::size_t hits_to_j = 0;
    for (std::size_t i = 1; i <= j; ++i) hits_to_j += rel.count(ranking[i - 1]);
    ap += double(hits_to_j) / double(j);
    m.mrr_sum += 1.0 / double(j);
    if (first) {
      m.mrr_first = 1.0 / double(j);
      first = false;
    }
  }
  m.ap = ap / double(rel.size());
  return m;
}

// Full ranking by repeated selection of the minimum (score, index).
template <class Real>
std::vector<ItemIndex> brute_ranking(const EmbeddingStore<Real>& s, std::size_t u, const std::set<ItemIndex>& excluded) {
  std::vector<ItemIndex> remaining;
  for (ItemIndex v = 0; v < s.num_items(); ++v)
    if (!excluded.count(v)) remaining.push_back(v);
  std::vector<ItemIndex> out;
  while (!remaining.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < remaining.size(); ++i) {
      const double a = brute_score(s, u, remaining[i]);
      const double b = brute_score(s, u, remaining[best]);
      if (a < b || (a == b && remaining[i] < remaining[best])) best = i;
    }
    out.push_back(remaining[best]);
    remaining.erase(remaining.begin() + std::ptrdiff_t(best));
  }
  return out;
}

template <class Real>
double brute_maxdiv_list(const EmbeddingStore<Real>& s, const std::vector<ItemIndex>& top) {
  double sum = 0;
  for (auto a : top)
    for (auto b : top) {
      if (a == b) continue;
      double pair = 0;
      for (std::size_t k = 0; k < s.dim(); ++k) {
        const double diff = double(s.item(a)[k]) - double(s.item(b)[k]);
        pair += diff * diff;
      }
      sum += pair;
    }
  return sum;
}

// Report of a split straight from the definitions: every user with split
// positives, brute ranking, brute metrics, plain averages in user order.
struct BruteReport {
  std::map<std::size_t, double> p, r, ndcg, maxdiv;
  double map = 0, mrr_first = 0, mrr_sum = 0;
  std::size_t users = 0;
};

template <class Real>
BruteReport brute_evaluate(const EmbeddingStore<Real>& s, const InteractionDataset& ds, Split split,
                           EvalExclude exclude, const std::vector<std::size_t>& cutoffs,
                           const std::vector<std::size_t>& maxdiv_cutoffs) {
  BruteReport out;
  for (UserIndex u = 0; u < ds.num_users; ++u) {
    const auto& target = split == Split::valid ? ds.valid_pos[u] : split == Split::test ? ds.test_pos[u] : ds.train_pos[u];
    if (target.empty()) continue;
    std::set<ItemIndex> excluded(ds.train_pos[u].begin(), ds.train_pos[u].end());
    if (split == Split::test && exclude == EvalExclude::train_valid) excluded.insert(ds.valid_pos[u].begin(), ds.valid_pos[u].end());
    const auto ranking = brute_ranking(s, u, excluded);
    const auto m = brute_metrics(ranking, std::set<ItemIndex>(target.begin(), target.end()), cutoffs);
    for (auto N : cutoffs) {
      out.p[N] += m.p.at(N);
      out.r[N] += m.r.at(N);
      out.ndcg[N] += m.ndcg.at(N);
    }
    out.map += m.ap;
    out.mrr_first += m.mrr_first;
    out.mrr_sum += m.mrr_sum;
    for (auto N : maxdiv_cutoffs)
      out.maxdiv[N] += brute_maxdiv_list(s, std::vector<ItemIndex>(ranking.begin(), ranking.begin() + std::ptrdiff_t(std::min(N, ranking.size()))));
    ++out.users;
  }
  const double n = double(out.users);
  for (auto* m : {&out.p, &out.r, &out.ndcg, &out.maxdiv})
    for (auto& [k, v] : *m) v /= n;
  out.map /= n;
  out.mrr_first /= n;
  out.mrr_sum /= n;
  return out;
}

// Mismatch description, empty when every metric is bit-identical.
inline std::string compare_reports(const EvalReport& a, const BruteReport& b) {
  std::string msg;
  auto cmp = [&](const std::string& name, double x, double y) {
    if (x != y) msg += name + ": " + std::to_string(x) + " vs " + std::to_string(y) + "; ";
  };
  if (a.num_users_evaluated != b.users) msg += "user count differs; ";
  for (const auto& [N, v] : b.p) cmp("P@" + std::to_string(N), a.precision.at(N), v);
  for (const auto& [N, v] : b.r) cmp("R@" + std::to_string(N), a.recall.at(N), v);
  for (const auto& [N, v] : b.ndcg) cmp("NDCG@" + std::to_string(N), a.ndcg.at(N), v);
  for (const auto& [N, v] : b.maxdiv) cmp("MaxDiv@" + std::to_string(N), a.maxdiv.at(N), v);
  cmp("MAP", a.map, b.map);
  cmp("MRR", a.mrr_first_hit, b.mrr_first);
  cmp("MRR_sum", a.mrr_sum, b.mrr_sum);
  return msg;
}

// --- objective -------------------------------------------------------------

// Dense single-vector CML: one user vector each, batch loss averaged per
// user then over users, gradients as dense tables.
struct SingleVectorCml {
  std::size_t d;
  std::vector<std::vector<double>> users, items;

  template <class Real>
  static SingleVectorCml from_store(const EmbeddingStore<Real>& s) {
    SingleVectorCml m{s.dim(), {}, {}};
    for (std::size_t u = 0; u < s.num_users(); ++u) m.users.emplace_back(s.user(u, 0).begin(), s.user(u, 0).end());
    for (std::size_t v = 0; v < s.num_items(); ++v) m.items.emplace_back(s.item(v).begin(), s.item(v).end());
    return m;
  }

  double dist(std::size_t u, std::size_t v) const {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += (users[u][k] - items[v][k]) * (users[u][k] - items[v][k]);
    return s;
  }

  // Returns the loss; fills dense gradients when given.
  double loss(const std::vector<Triplet>& batch, double margin, std::vector<std::vector<double>>* gu = nullptr,
              std::vector<std::vector<double>>* gv = nullptr) const {
    std::map<UserIndex, int> per_user;
    for (const auto& t : batch) per_user[t.u]++;
    const double n_users = double(per_user.size());
    if (gu) gu->assign(users.size(), std::vector<double>(d, 0.0));
    if (gv) gv->assign(items.size(), std::vector<double>(d, 0.0));
    double total = 0;
    for (const auto& t : batch) {
      const double w = 1.0 / (n_users * per_user[t.u] * double(t.v_negs.size()));
      for (auto n : t.v_negs) {
        const double h = margin + dist(t.u, t.v_pos) - dist(t.u, n);
        if (h <= 0) continue;
        total += w * h;
        if (!gu) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double a = 2 * (users[t.u][k] - items[t.v_pos][k]);
          const double b = 2 * (users[t.u][k] - items[n][k]);
          (*gu)[t.u][k] += w * (a - b);
          (*gv)[t.v_pos][k] -= w * a;
          (*gv)[n][k] += w * b;
        }
      }
    }
    return total;
  }
};

// Exact empirical ranking risk by triple loop over users, positives and negatives.
template <class Real>
double brute_exact_risk(const EmbeddingStore<Real>& s, const InteractionDataset& ds, double margin) {
  double risk = 0;
  for (UserIndex u = 0; u < ds.num_users; ++u) {
    std::set<ItemIndex> pos(ds.train_pos[u].begin(), ds.train_pos[u].end());
    double sum = 0;
    std::size_t pairs = 0;
    for (ItemIndex p : pos)
      for (ItemIndex n = 0; n < ds.num_items; ++n) {
        if (pos.count(n)) continue;
        sum += std::max(0.0, margin + brute_score(s, u, p) - brute_score(s, u, n));
        ++pairs;
      }
    risk += sum / double(pairs);
  }
  return risk / double(ds.num_users);
}

// Densifies a sink into (user table, item table) gradients.
template <class Real>
std::pair<std::vector<double>, std::vector<double>> dense_gradient(const EmbeddingStore<Real>& s,
                                                                    const GradientSink<double>& sink) {
  std::vector<double> gu(s.user_table().size(), 0.0), gi(s.item_table().size(), 0.0);
  for (std::size_t u = 0; u < s.num_users(); ++u)
    for (std::size_t c = 0; c < s.C(); ++c)
      if (const double* g = sink.find_user(u, c))
        for (std::size_t k = 0; k < s.dim(); ++k) gu[(u * s.C() + c) * s.dim() + k] = g[k];
  for (std::size_t v = 0; v < s.num_items(); ++v)
    if (const double* g = sink.find_item(v))
      for (std::size_t k = 0; k < s.dim(); ++k) gi[v * s.dim() + k] = g[k];
  return {gu, gi};
}

// --- data ---------------------------------------------------------------------

// Random implicit dataset built through the ingestion path: each user gets
// between min_pos and max_pos distinct positives.
inline InteractionDataset random_dataset(std::size_t users, std::size_t items, std::size_t min_pos,
                                         std::size_t max_pos, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<RawRating> raw;
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(min_pos, max_pos)(rng);
    std::vector<std::size_t> all(items);
    for (std::size_t i = 0; i < items; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    for (std::size_t i = 0; i < n; ++i)
      raw.push_back(RawRating{"u" + std::to_string(u), "i" + std::to_string(all[i]), std::nullopt, std::nullopt});
  }
  // Make sure every item id appears so |I| is as requested.
  for (std::size_t i = 0; i < items; ++i)
    raw.push_back(RawRating{"u0", "i" + std::to_string(i), std::nullopt, std::nullopt});
  BuildOptions opt;
  opt.min_interactions = 3;
  opt.seed = seed;
  return build_dataset(raw, opt);
}

// Multi-interest synthetic data: items fall into `clusters` groups and each
// user draws positives from `interests` of them.
inline std::vector<RawRating> clustered_ratings(std::size_t users, std::size_t clusters, std::size_t per_cluster,
                                                std::size_t interests, std::size_t per_user, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<RawRating> raw;
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<std::size_t> cl(clusters);
    for (std::size_t k = 0; k < clusters; ++k) cl[k] = k;
    std::shuffle(cl.begin(), cl.end(), rng);
    std::set<std::size_t> chosen;
    while (chosen.size() < per_user) {
      const std::size_t k = cl[std::uniform_int_distribution<std::size_t>(0, interests - 1)(rng)];
      const std::size_t j = std::uniform_int_distribution<std::size_t>(0, per_cluster - 1)(rng);
      chosen.insert(k * per_cluster + j);
    }
    for (auto item : chosen)
      raw.push_back(RawRating{"u" + std::to_string(u), "i" + std::to_string(item), std::nullopt, std::nullopt});
  }
  return raw;
}

inline InteractionDataset clustered_dataset(std::size_t users, std::size_t clusters, std::size_t per_cluster,
                                            std::size_t interests, std::size_t per_user, std::uint64_t seed) {
  const auto raw = clustered_ratings(users, clusters, per_cluster, interests, per_user, seed);
  BuildOptions opt;
  opt.seed = seed;
  return build_dataset(raw, opt);
}

// Store with i.i.d. normal entries projected onto the variant's feasible set.
template <class Real = double>
EmbeddingStore<Real> random_store(std::size_t users, std::size_t items, std::size_t C, std::size_t d,
                                  ScoreVariant variant, std::uint64_t seed, double r = 1.0) {
  ModelConfig cfg;
  cfg.C = static_cast<std::uint32_t>(C);
  cfg.d = static_cast<std::uint32_t>(d);
  cfg.variant = variant;
  cfg.r = r;
  return init_store<Real>(users, items, cfg, seed);
}

}  // namespace dpcml::ref
