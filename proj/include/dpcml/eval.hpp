#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dpcml/config.hpp"
#include "dpcml/data.hpp"
#include "dpcml/embedding.hpp"
#include "dpcml/error.hpp"
#include "dpcml/parallel.hpp"

namespace dpcml {

struct EvalOptions {
  std::vector<std::size_t> cutoffs{3, 5};
  std::vector<std::size_t> maxdiv_cutoffs;  // empty: no MaxDiv
  EvalExclude exclude = EvalExclude::train_valid;
  std::size_t workers = 1;
};

struct EvalReport {
  std::string split;
  std::vector<std::size_t> cutoffs;
  std::map<std::size_t, double> precision;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  double map = 0.0;
  double mrr_first_hit = 0.0;
  double mrr_sum = 0.0;
  std::map<std::size_t, double> maxdiv;
  std::optional<std::map<std::uint32_t, double>> per_group_map;
  std::size_t num_users_evaluated = 0;
};

// Metrics of one user's ranking against a relevant set.
struct UserMetrics {
  std::vector<double> precision, recall, ndcg;  // aligned with the cutoffs
  double ap = 0.0;
  double mrr_first_hit = 0.0;
  double mrr_sum = 0.0;
};

// `ranking` is the full ordered candidate list (best first); `relevant` is
// sorted. Relevant items missing from the ranking count as never retrieved.
inline UserMetrics ranking_metrics(std::span<const ItemIndex> ranking, std::span<const ItemIndex> relevant,
                                   std::span<const std::size_t> cutoffs) {
  UserMetrics m;
  const double n_rel = double(relevant.size());
  if (relevant.empty()) throw Error("ranking metrics need at least one relevant item");
  auto is_relevant = [&](ItemIndex v) { return std::binary_search(relevant.begin(), relevant.end(), v); };

  std::vector<std::size_t> hit_ranks;  // 1-based
  for (std::size_t j = 0; j < ranking.size(); ++j)
    if (is_relevant(ranking[j])) hit_ranks.push_back(j + 1);

  for (std::size_t N : cutoffs) {
    double hits = 0.0, dcg = 0.0, idcg = 0.0;
    for (std::size_t rank : hit_ranks) {
      if (rank > N) break;
      hits += 1.0;
      dcg += 1.0 / std::log2(double(rank) + 1.0);
    }
    const std::size_t ideal = std::min<std::size_t>(N, relevant.size());
    for (std::size_t k = 1; k <= ideal; ++k) idcg += 1.0 / std::log2(double(k) + 1.0);
    m.precision.push_back(hits / double(N));
    m.recall.push_back(hits / n_rel);
    m.ndcg.push_back(dcg / idcg);
  }
  for (std::size_t i = 0; i < hit_ranks.size(); ++i) {
    m.ap += double(i + 1) / double(hit_ranks[i]);
    m.mrr_sum += 1.0 / double(hit_ranks[i]);
  }
  m.ap /= n_rel;
  if (!hit_ranks.empty()) m.mrr_first_hit = 1.0 / double(hit_ranks.front());
  return m;
}

// Items excluded from a user's ranking when scoring `split`: train positives
// always, validation positives too when testing under train+valid.
inline std::vector<ItemIndex> eval_exclusions(const InteractionDataset& ds, UserIndex u, Split split,
                                              EvalExclude exclude) {
  std::vector<ItemIndex> out = ds.train_pos[u];
  if (split == Split::test && exclude == EvalExclude::train_valid)
    out.insert(out.end(), ds.valid_pos[u].begin(), ds.valid_pos[u].end());
  std::sort(out.begin(), out.end());
  return out;
}

// All non-excluded items ordered by ascending score, ties by item index.
template <class Real>
std::vector<ItemIndex> full_ranking(const EmbeddingStore<Real>& store, UserIndex u,
                                    std::span<const ItemIndex> excluded_sorted) {
  std::vector<std::pair<double, ItemIndex>> scored;
  scored.reserve(store.num_items());
  auto ex = excluded_sorted.begin();
  for (std::size_t v = 0; v < store.num_items(); ++v) {
    while (ex != excluded_sorted.end() && *ex < v) ++ex;
    if (ex != excluded_sorted.end() && *ex == v) continue;
    scored.emplace_back(score_unchecked(store, u, v).value, static_cast<ItemIndex>(v));
  }
  std::sort(scored.begin(), scored.end());
  std::vector<ItemIndex> out;
  out.reserve(scored.size());
  for (const auto& [s, v] : scored) out.push_back(v);
  return out;
}

// Sum of squared distances over ordered pairs of distinct list entries.
template <class Real>
double list_maxdiv(const EmbeddingStore<Real>& store, std::span<const ItemIndex> items) {
  double sum = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = 0; j < items.size(); ++j)
      if (i != j) sum += squared_distance(store.item(items[i]), store.item(items[j]));
  return sum;
}

inline void check_store_matches(std::size_t store_users, std::size_t store_items, const InteractionDataset& ds) {
  if (store_users != ds.num_users || store_items != ds.num_items) {
    std::ostringstream msg;
    msg << "shape mismatch: dataset (" << ds.num_users << ", " << ds.num_items << ") vs checkpoint (" << store_users
        << ", " << store_items << ")";
    throw ShapeMismatchError(msg.str());
  }
}

inline std::vector<UserIndex> users_with_positives(const InteractionDataset& ds, Split split) {
  std::vector<UserIndex> users;
  for (UserIndex u = 0; u < ds.num_users; ++u)
    if (!ds.positives(u, split).empty()) users.push_back(u);
  return users;
}

template <class Real>
EvalReport evaluate(const EmbeddingStore<Real>& store, const InteractionDataset& ds, Split split,
                    const EvalOptions& opt) {
  check_store_matches(store.num_users(), store.num_items(), ds);
  for (auto N : opt.cutoffs)
    if (N < 1) throw ConfigError("cutoffs must be >= 1");
  for (auto N : opt.maxdiv_cutoffs)
    if (N < 2) throw ConfigError("MaxDiv cutoffs must be >= 2");
  const auto users = users_with_positives(ds, split);
  if (users.empty()) throw Error("split '" + std::string(to_string(split)) + "' has no positives");

  struct Slot {
    UserMetrics metrics;
    std::vector<double> maxdiv;
  };
  std::vector<Slot> slots(users.size());
  parallel_for(users.size(), opt.workers, [&](std::size_t i) {
    const UserIndex u = users[i];
    const auto excluded = eval_exclusions(ds, u, split, opt.exclude);
    const auto ranking = full_ranking(store, u, excluded);
    slots[i].metrics = ranking_metrics(ranking, ds.positives(u, split), opt.cutoffs);
    for (auto N : opt.maxdiv_cutoffs) {
      const auto top = std::span<const ItemIndex>(ranking).first(std::min(N, ranking.size()));
      slots[i].maxdiv.push_back(list_maxdiv(store, top));
    }
  });

  EvalReport r;
  r.split = std::string(to_string(split));
  r.cutoffs = opt.cutoffs;
  r.num_users_evaluated = users.size();
  const double n_users = double(users.size());
  for (std::size_t k = 0; k < opt.cutoffs.size(); ++k) {
    double p = 0, rc = 0, n = 0;
    for (const auto& s : slots) {
      p += s.metrics.precision[k];
      rc += s.metrics.recall[k];
      n += s.metrics.ndcg[k];
    }
    r.precision[opt.cutoffs[k]] = p / n_users;
    r.recall[opt.cutoffs[k]] = rc / n_users;
    r.ndcg[opt.cutoffs[k]] = n / n_users;
  }
  for (const auto& s : slots) {
    r.map += s.metrics.ap;
    r.mrr_first_hit += s.metrics.mrr_first_hit;
    r.mrr_sum += s.metrics.mrr_sum;
  }
  r.map /= n_users;
  r.mrr_first_hit /= n_users;
  r.mrr_sum /= n_users;
  for (std::size_t k = 0; k < opt.maxdiv_cutoffs.size(); ++k) {
    double sum = 0.0;
    for (const auto& s : slots) sum += s.maxdiv[k];
    r.maxdiv[opt.maxdiv_cutoffs[k]] = sum / n_users;
  }
  return r;
}

// First-hit MRR on the validation split; the model-selection criterion.
template <class Real>
double validation_mrr(const EmbeddingStore<Real>& store, const InteractionDataset& ds, std::size_t workers) {
  EvalOptions opt;
  opt.cutoffs = {1};
  opt.exclude = EvalExclude::train;
  opt.workers = workers;
  return evaluate(store, ds, Split::valid, opt).mrr_first_hit;
}

// Average over users of the summed pairwise squared item distances in the
// top-N list.
template <class Real>
double maxdiv(const EmbeddingStore<Real>& store, const InteractionDataset& ds, Split split, std::size_t N,
              EvalExclude exclude = EvalExclude::train_valid, std::size_t workers = 1) {
  if (N < 2) throw ConfigError("MaxDiv needs N >= 2");
  EvalOptions opt;
  opt.cutoffs = {N};
  opt.maxdiv_cutoffs = {N};
  opt.exclude = exclude;
  opt.workers = workers;
  return evaluate(store, ds, split, opt).maxdiv.at(N);
}

// MAP per attribute: each user's relevant set is restricted to split
// positives carrying the attribute; users with none are skipped for it.
template <class Real>
std::map<std::uint32_t, double> per_group_map(const EmbeddingStore<Real>& store, const InteractionDataset& ds,
                                              const AttributeTable& attrs, Split split,
                                              EvalExclude exclude = EvalExclude::train_valid,
                                              std::size_t workers = 1) {
  check_store_matches(store.num_users(), store.num_items(), ds);
  if (attrs.item_attributes.size() != ds.num_items) throw Error("attribute table does not match dataset");
  const auto users = users_with_positives(ds, split);
  std::vector<std::map<std::uint32_t, double>> slots(users.size());
  const std::size_t no_cutoffs[1] = {1};
  parallel_for(users.size(), workers, [&](std::size_t i) {
    const UserIndex u = users[i];
    std::map<std::uint32_t, std::vector<ItemIndex>> groups;
    for (ItemIndex v : ds.positives(u, split))
      for (auto a : attrs.of(v)) groups[a].push_back(v);
    if (groups.empty()) return;
    const auto excluded = eval_exclusions(ds, u, split, exclude);
    const auto ranking = full_ranking(store, u, excluded);
    for (auto& [a, rel] : groups) slots[i][a] = ranking_metrics(ranking, rel, no_cutoffs).ap;
  });
  std::map<std::uint32_t, std::pair<double, std::size_t>> acc;
  for (const auto& slot : slots)
    for (const auto& [a, ap] : slot) {
      acc[a].first += ap;
      acc[a].second += 1;
    }
  std::map<std::uint32_t, double> out;
  for (const auto& [a, sc] : acc) out[a] = sc.first / double(sc.second);
  return out;
}

// Fraction of ordered pairs of distinct positives (all splits) whose
// attribute sets are disjoint. nullopt when the user has < 2 positives.
inline std::optional<double> preference_diversity(const InteractionDataset& ds, const AttributeTable& attrs,
                                                  UserIndex u) {
  const auto pos = ds.all_positives(u);
  const std::size_t n = pos.size();
  if (n < 2) return std::nullopt;
  auto disjoint = [&](ItemIndex a, ItemIndex b) {
    const auto& x = attrs.of(a);
    const auto& y = attrs.of(b);
    auto i = x.begin();
    auto j = y.begin();
    while (i != x.end() && j != y.end()) {
      if (*i == *j) return false;
      if (*i < *j)
        ++i;
      else
        ++j;
    }
    return true;
  };
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) count += disjoint(pos[i], pos[j]) ? 2 : 0;
  return double(count) / (double(n) * double(n - 1));
}

// Histogram of Div(u): an exact-zero bin, `bins` equal-width bins over
// (0, 1), and an exact-one bin.
struct DivHistogram {
  std::vector<std::string> labels;
  std::vector<std::size_t> counts;
  std::vector<double> values;  // per evaluated user, in user order
  std::size_t skipped_users = 0;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

inline DivHistogram div_histogram(const InteractionDataset& ds, const AttributeTable& attrs, std::size_t bins = 10) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  DivHistogram h;
  auto edge = [&](std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", double(k) / double(bins));
    return std::string(buf);
  };
  h.labels.push_back("0");
  for (std::size_t k = 0; k < bins; ++k)
    h.labels.push_back("(" + edge(k) + "," + edge(k + 1) + (k + 1 == bins ? ")" : "]"));
  h.labels.push_back("1");
  h.counts.assign(bins + 2, 0);
  for (UserIndex u = 0; u < ds.num_users; ++u) {
    const auto div = preference_diversity(ds, attrs, u);
    if (!div) {
      ++h.skipped_users;
      continue;
    }
    h.values.push_back(*div);
    std::size_t bin;
    if (*div <= 0.0)
      bin = 0;
    else if (*div >= 1.0)
      bin = bins + 1;
    else
      bin = 1 + std::min<std::size_t>(bins - 1, std::size_t(std::ceil(*div * double(bins))) - 1);
    ++h.counts[bin];
  }
  return h;
}

struct BoundInputs {
  std::vector<double> n_pos;  // per user
  std::vector<double> n_neg;
  std::size_t d = 0;
  double r = 1.0;
  double eta = 0.0;

  static BoundInputs uniform(std::size_t users, double n_pos, double n_neg, std::size_t d, double r, double eta) {
    return BoundInputs{std::vector<double>(users, n_pos), std::vector<double>(users, n_neg), d, r, eta};
  }
};

struct BoundResult {
  double n_tilde = 0.0;
  std::optional<double> epsilon;  // empty: 3 r N <= 1, the bound is vacuous

  bool vacuous() const { return !epsilon.has_value(); }
};

// N = (4 r^2 sqrt((4 + eta)^2 / |U| + 2 / |U|^2 * sum_i (1/n_i+ + 1/n_i-)))^-2
// eps = sqrt(2 d log(3 r N) / N)
inline BoundResult generalization_bound(const BoundInputs& in) {
  const std::size_t users = in.n_pos.size();
  if (users == 0 || in.n_neg.size() != users) throw ConfigError("bound needs matching, non-empty per-user counts");
  if (in.d == 0) throw ConfigError("bound needs d > 0");
  if (!(in.r > 0.0) || !std::isfinite(in.r)) throw ConfigError("bound needs a finite radius r > 0");
  if (!(in.eta >= 0.0)) throw ConfigError("bound needs eta >= 0");
  double pair_term = 0.0;
  for (std::size_t i = 0; i < users; ++i) {
    if (!(in.n_pos[i] > 0.0) || !(in.n_neg[i] > 0.0)) throw ConfigError("per-user counts must be positive");
    pair_term += 1.0 / in.n_pos[i] + 1.0 / in.n_neg[i];
  }
  const double U = double(users);
  const double inner = (4.0 + in.eta) * (4.0 + in.eta) / U + 2.0 / (U * U) * pair_term;
  const double root = 4.0 * in.r * in.r * std::sqrt(inner);
  BoundResult out;
  out.n_tilde = 1.0 / (root * root);
  const double arg = 3.0 * in.r * out.n_tilde;
  if (arg > 1.0) out.epsilon = std::sqrt(2.0 * double(in.d) * std::log(arg) / out.n_tilde);
  return out;
}

// Per-user counts from the training split: n+ = train positives,
// n- = remaining items.
inline BoundInputs bound_inputs(const InteractionDataset& ds, std::size_t d, double r, double eta) {
  BoundInputs in;
  in.d = d;
  in.r = r;
  in.eta = eta;
  for (UserIndex u = 0; u < ds.num_users; ++u) {
    in.n_pos.push_back(double(ds.train_pos[u].size()));
    in.n_neg.push_back(double(ds.num_items - ds.train_pos[u].size()));
  }
  return in;
}

inline nlohmann::json to_json(const EvalReport& r, const AttributeTable* attrs = nullptr) {
  nlohmann::json j;
  j["split"] = r.split;
  j["num_users_evaluated"] = r.num_users_evaluated;
  auto per_cutoff = [](const std::map<std::size_t, double>& m) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [k, v] : m) o[std::to_string(k)] = v;
    return o;
  };
  j["precision"] = per_cutoff(r.precision);
  j["recall"] = per_cutoff(r.recall);
  j["ndcg"] = per_cutoff(r.ndcg);
  j["map"] = r.map;
  j["mrr_first_hit"] = r.mrr_first_hit;
  j["mrr_sum"] = r.mrr_sum;
  if (!r.maxdiv.empty()) j["maxdiv"] = per_cutoff(r.maxdiv);
  if (r.per_group_map) {
    nlohmann::json g = nlohmann::json::object();
    for (const auto& [a, v] : *r.per_group_map)
      g[attrs && a < attrs->names.size() ? attrs->names[a] : std::to_string(a)] = v;
    j["per_group_map"] = g;
  }
  return j;
}

inline std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

// Header line and one data line.
inline std::pair<std::string, std::string> to_csv_row(const EvalReport& r) {
  std::string head = "split,users", row = r.split + "," + std::to_string(r.num_users_evaluated);
  auto add = [&](const std::string& name, double value) {
    head += "," + name;
    row += "," + format_real(value);
  };
  for (auto N : r.cutoffs) add("P@" + std::to_string(N), r.precision.at(N));
  for (auto N : r.cutoffs) add("R@" + std::to_string(N), r.recall.at(N));
  for (auto N : r.cutoffs) add("NDCG@" + std::to_string(N), r.ndcg.at(N));
  add("MAP", r.map);
  add("MRR", r.mrr_first_hit);
  add("MRR_sum", r.mrr_sum);
  for (const auto& [N, v] : r.maxdiv) add("MaxDiv@" + std::to_string(N), v);
  return {head, row};
}

}  // namespace dpcml
