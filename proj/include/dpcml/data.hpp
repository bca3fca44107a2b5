#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dpcml/error.hpp"
#include "dpcml/rng.hpp"

namespace dpcml {

using UserIndex = std::uint32_t;
using ItemIndex = std::uint32_t;

struct RawRating {
  std::string user;
  std::string item;
  std::optional<double> rating;
  std::optional<std::int64_t> timestamp;
};

// movielens_dcolon: user::item::rating::timestamp
// tsv / csv: user,item[,rating[,timestamp]]
// steam: the Kaggle steam-200k dump, user,"game",behavior,value,0
enum class RatingFormat { movielens_dcolon, tsv, csv, steam };

enum class Split { train, valid, test };

inline RatingFormat parse_rating_format(std::string_view s) {
  if (s == "movielens-dcolon") return RatingFormat::movielens_dcolon;
  if (s == "tsv") return RatingFormat::tsv;
  if (s == "csv") return RatingFormat::csv;
  if (s == "steam") return RatingFormat::steam;
  throw Error("unknown ratings format '" + std::string(s) + "'");
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + std::string(s) + "'");
}

namespace detail {

inline std::vector<std::string_view> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

// Comma-separated fields with double-quote quoting ("" escapes a quote).
inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          out.back().push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        out.back().push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back().push_back(ch);
    }
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim(s);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline bool looks_like_header(std::string_view rating_field) {
  return std::any_of(rating_field.begin(), rating_field.end(),
                     [](char ch) { return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z'); });
}

}  // namespace detail

// Reads ratings from a stream and keeps the positives. With a threshold only
// rows rated >= threshold survive (rows without a rating are then rejected);
// without one every row is a positive.
inline std::vector<RawRating> parse_ratings(std::istream& in, RatingFormat format,
                                            std::optional<double> threshold) {
  using namespace detail;
  std::vector<RawRating> out;
  std::string line;
  std::size_t lineno = 0;

  // steam: positives are (user, game) pairs that were purchased and played
  // for more than zero hours.
  std::set<std::pair<std::string, std::string>> purchased;
  std::map<std::pair<std::string, std::string>, double> played;
  std::vector<std::pair<std::string, std::string>> steam_order;

  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;

    std::vector<std::string> fields;
    if (format == RatingFormat::movielens_dcolon) {
      for (auto f : split_on(view, "::")) fields.emplace_back(trim(f));
    } else if (format == RatingFormat::tsv) {
      for (auto f : split_on(view, "\t")) fields.emplace_back(trim(f));
    } else {
      for (auto& f : split_csv(view)) fields.emplace_back(trim(f));
    }

    if (format == RatingFormat::steam) {
      if (fields.size() < 4) throw ParseError(lineno, "expected user,game,behavior,value");
      if (fields[0].empty() || fields[1].empty()) throw ParseError(lineno, "empty user or item id");
      const auto value = parse_double(fields[3]);
      if (!value) {
        if (lineno == 1 && looks_like_header(fields[3])) continue;
        throw ParseError(lineno, "bad value '" + fields[3] + "'");
      }
      auto key = std::make_pair(fields[0], fields[1]);
      if (fields[2] == "purchase") {
        purchased.insert(key);
      } else if (fields[2] == "play") {
        auto [it, fresh] = played.emplace(key, *value);
        if (fresh)
          steam_order.push_back(key);
        else
          it->second = std::max(it->second, *value);
      } else {
        throw ParseError(lineno, "unknown behavior '" + fields[2] + "'");
      }
      continue;
    }

    if (fields.size() < 2) throw ParseError(lineno, "expected at least user and item fields");
    if (fields.size() > 4) throw ParseError(lineno, "too many fields");
    RawRating r;
    r.user = fields[0];
    r.item = fields[1];
    if (r.user.empty() || r.item.empty()) throw ParseError(lineno, "empty user or item id");
    if (fields.size() >= 3) {
      r.rating = parse_double(fields[2]);
      if (!r.rating) {
        if (lineno == 1 && format != RatingFormat::movielens_dcolon && looks_like_header(fields[2])) continue;
        throw ParseError(lineno, "bad rating '" + fields[2] + "'");
      }
    }
    if (fields.size() == 4) {
      r.timestamp = parse_int(fields[3]);
      if (!r.timestamp) throw ParseError(lineno, "bad timestamp '" + fields[3] + "'");
    }
    if (threshold) {
      if (!r.rating) throw ParseError(lineno, "threshold given but row has no rating");
      if (*r.rating < *threshold) continue;
    }
    out.push_back(std::move(r));
  }

  if (format == RatingFormat::steam) {
    for (const auto& key : steam_order) {
      const double hours = played.at(key);
      if (hours > 0.0 && purchased.count(key) && (!threshold || hours >= *threshold))
        out.push_back(RawRating{key.first, key.second, hours, std::nullopt});
    }
  }

  if (out.empty()) throw EmptyDatasetError("no positive interactions after filtering");
  return out;
}

inline std::vector<RawRating> load_ratings(const std::string& path, RatingFormat format,
                                           std::optional<double> threshold) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open ratings file '" + path + "'");
  return parse_ratings(in, format, threshold);
}

struct SplitFractions {
  double train = 0.6;
  double valid = 0.2;
  double test = 0.2;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

// Per-user split sizes: train = ceil(f_train * n), then the remainder is
// shared between valid and test in their relative proportion (valid rounded
// up). Every part gets at least one item; requires n >= 3.
inline SplitCounts split_counts(std::size_t n, const SplitFractions& f) {
  constexpr double slack = 1e-9;
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::ceil(f.train * static_cast<double>(n) - slack));
  c.train = std::clamp<std::size_t>(c.train, 1, n - 2);
  const std::size_t rest = n - c.train;
  const double share = f.valid / (f.valid + f.test);
  c.valid = static_cast<std::size_t>(std::ceil(share * static_cast<double>(rest) - slack));
  c.valid = std::clamp<std::size_t>(c.valid, 1, rest - 1);
  c.test = rest - c.valid;
  return c;
}

struct BuildOptions {
  std::size_t min_interactions = 5;
  SplitFractions split;
  std::uint64_t seed = 0;
  // Keep items whose every interaction belonged to filtered-out users.
  bool keep_cold_items = false;
};

struct InteractionDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::string> user_tokens;  // dense index -> token
  std::vector<std::string> item_tokens;
  std::unordered_map<std::string, UserIndex> user_index;
  std::unordered_map<std::string, ItemIndex> item_index;
  // Per-user item lists, sorted ascending.
  std::vector<std::vector<ItemIndex>> train_pos;
  std::vector<std::vector<ItemIndex>> valid_pos;
  std::vector<std::vector<ItemIndex>> test_pos;
  std::vector<std::uint32_t> item_popularity;  // train occurrences

  const std::vector<ItemIndex>& positives(UserIndex u, Split s) const {
    switch (s) {
      case Split::train: return train_pos.at(u);
      case Split::valid: return valid_pos.at(u);
      case Split::test: return test_pos.at(u);
    }
    return train_pos.at(u);
  }

  // Union of the three splits, sorted.
  std::vector<ItemIndex> all_positives(UserIndex u) const {
    std::vector<ItemIndex> all = train_pos.at(u);
    all.insert(all.end(), valid_pos.at(u).begin(), valid_pos.at(u).end());
    all.insert(all.end(), test_pos.at(u).begin(), test_pos.at(u).end());
    std::sort(all.begin(), all.end());
    return all;
  }

  std::size_t num_interactions(Split s) const {
    std::size_t n = 0;
    for (UserIndex u = 0; u < num_users; ++u) n += positives(u, s).size();
    return n;
  }

  std::size_t num_interactions() const {
    return num_interactions(Split::train) + num_interactions(Split::valid) + num_interactions(Split::test);
  }

  // ratings / (users * items)
  double density() const {
    return static_cast<double>(num_interactions()) /
           (static_cast<double>(num_users) * static_cast<double>(num_items));
  }

  void rebuild_derived() {
    user_index.clear();
    item_index.clear();
    for (UserIndex u = 0; u < user_tokens.size(); ++u) user_index.emplace(user_tokens[u], u);
    for (ItemIndex v = 0; v < item_tokens.size(); ++v) item_index.emplace(item_tokens[v], v);
    item_popularity.assign(num_items, 0);
    for (const auto& list : train_pos)
      for (ItemIndex v : list) ++item_popularity[v];
  }
};

inline InteractionDataset build_dataset(std::span<const RawRating> ratings, const BuildOptions& opt) {
  if (opt.min_interactions < 3) throw ConfigError("min_interactions must be >= 3");
  const auto& f = opt.split;
  if (!(f.train > 0 && f.valid > 0 && f.test > 0) || std::abs(f.train + f.valid + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be positive and sum to 1");

  // Provisional indices in first-seen order.
  std::vector<std::string> users, items;
  std::unordered_map<std::string, std::uint32_t> uid, iid;
  std::vector<std::vector<std::uint32_t>> pos;
  for (const auto& r : ratings) {
    if (r.user.empty() || r.item.empty()) throw Error("rating with empty user or item id");
    auto [uit, unew] = uid.emplace(r.user, static_cast<std::uint32_t>(users.size()));
    if (unew) {
      users.push_back(r.user);
      pos.emplace_back();
    }
    auto [iit, inew] = iid.emplace(r.item, static_cast<std::uint32_t>(items.size()));
    if (inew) items.push_back(r.item);
    pos[uit->second].push_back(iit->second);
  }
  // D+ is a set: duplicate rows collapse.
  for (auto& list : pos) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }

  std::vector<char> user_alive(users.size(), 1);
  std::vector<char> item_alive(items.size(), 1);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t u = 0; u < users.size(); ++u) {
      if (!user_alive[u]) continue;
      std::size_t n = 0;
      for (auto v : pos[u]) n += item_alive[v] ? 1 : 0;
      if (n < opt.min_interactions) {
        user_alive[u] = 0;
        changed = true;
      }
    }
    if (opt.keep_cold_items) break;
    std::vector<char> used(items.size(), 0);
    for (std::size_t u = 0; u < users.size(); ++u)
      if (user_alive[u])
        for (auto v : pos[u]) used[v] = 1;
    for (std::size_t v = 0; v < items.size(); ++v) {
      if (item_alive[v] && !used[v]) {
        item_alive[v] = 0;
        changed = true;
      }
    }
  }

  InteractionDataset ds;
  std::vector<std::uint32_t> item_remap(items.size(), UINT32_MAX);
  for (std::size_t v = 0; v < items.size(); ++v) {
    if (!item_alive[v]) continue;
    item_remap[v] = static_cast<ItemIndex>(ds.item_tokens.size());
    ds.item_tokens.push_back(items[v]);
  }
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (!user_alive[u]) continue;
    const auto dense = static_cast<UserIndex>(ds.user_tokens.size());
    ds.user_tokens.push_back(users[u]);

    std::vector<ItemIndex> list;
    for (auto v : pos[u])
      if (item_alive[v]) list.push_back(item_remap[v]);
    std::sort(list.begin(), list.end());
    Rng rng = derive_rng(opt.seed, {dense});
    std::shuffle(list.begin(), list.end(), rng);

    const auto counts = split_counts(list.size(), f);
    auto first = list.begin();
    auto take = [&first](std::size_t n) {
      std::vector<ItemIndex> part(first, first + static_cast<std::ptrdiff_t>(n));
      std::sort(part.begin(), part.end());
      first += static_cast<std::ptrdiff_t>(n);
      return part;
    };
    ds.train_pos.push_back(take(counts.train));
    ds.valid_pos.push_back(take(counts.valid));
    ds.test_pos.push_back(take(counts.test));
  }
  if (ds.user_tokens.empty()) throw EmptyDatasetError("every user was removed by the interaction filter");

  ds.num_users = ds.user_tokens.size();
  ds.num_items = ds.item_tokens.size();
  ds.rebuild_derived();
  return ds;
}

inline nlohmann::json to_json(const InteractionDataset& ds) {
  nlohmann::json j;
  j["format"] = "dpcml-dataset";
  j["version"] = 1;
  j["num_users"] = ds.num_users;
  j["num_items"] = ds.num_items;
  j["users"] = ds.user_tokens;
  j["items"] = ds.item_tokens;
  j["train"] = ds.train_pos;
  j["valid"] = ds.valid_pos;
  j["test"] = ds.test_pos;
  return j;
}

inline InteractionDataset dataset_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dpcml-dataset" || j.at("version") != 1) throw Error("not a dpcml dataset document");
    InteractionDataset ds;
    ds.num_users = j.at("num_users").get<std::size_t>();
    ds.num_items = j.at("num_items").get<std::size_t>();
    ds.user_tokens = j.at("users").get<std::vector<std::string>>();
    ds.item_tokens = j.at("items").get<std::vector<std::string>>();
    ds.train_pos = j.at("train").get<std::vector<std::vector<ItemIndex>>>();
    ds.valid_pos = j.at("valid").get<std::vector<std::vector<ItemIndex>>>();
    ds.test_pos = j.at("test").get<std::vector<std::vector<ItemIndex>>>();
    if (ds.user_tokens.size() != ds.num_users || ds.item_tokens.size() != ds.num_items ||
        ds.train_pos.size() != ds.num_users || ds.valid_pos.size() != ds.num_users ||
        ds.test_pos.size() != ds.num_users)
      throw Error("dataset document sizes are inconsistent");
    for (const auto* split : {&ds.train_pos, &ds.valid_pos, &ds.test_pos})
      for (const auto& list : *split)
        for (ItemIndex v : list)
          if (v >= ds.num_items) throw Error("item index out of range in dataset document");
    ds.rebuild_derived();
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed dataset document: ") + e.what());
  }
}

struct AttributeTable {
  std::vector<std::vector<std::uint32_t>> item_attributes;  // sorted ids per item
  std::vector<std::string> names;                           // id -> name
  std::size_t skipped_rows = 0;                             // unknown item tokens

  const std::vector<std::uint32_t>& of(ItemIndex v) const { return item_attributes.at(v); }
};

// movielens_genres: item::title::genre|genre|...
// tsv_multi: item<TAB>attr[<TAB>attr...]; fields may also be '|'-separated
enum class AttributeFormat { movielens_genres, tsv_multi };

inline AttributeFormat parse_attribute_format(std::string_view s) {
  if (s == "movielens-genres") return AttributeFormat::movielens_genres;
  if (s == "tsv-multi") return AttributeFormat::tsv_multi;
  throw Error("unknown attributes format '" + std::string(s) + "'");
}

inline AttributeTable parse_attributes(std::istream& in, AttributeFormat format, const InteractionDataset& ds) {
  using namespace detail;
  AttributeTable t;
  t.item_attributes.assign(ds.num_items, {});
  std::unordered_map<std::string, std::uint32_t> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    std::string_view item;
    std::vector<std::string_view> attrs;
    if (format == AttributeFormat::movielens_genres) {
      auto fields = split_on(view, "::");
      if (fields.size() < 3) throw ParseError(lineno, "expected item::title::genres");
      item = trim(fields.front());
      attrs = split_on(trim(fields.back()), "|");
    } else {
      auto fields = split_on(view, "\t");
      item = trim(fields.front());
      for (std::size_t i = 1; i < fields.size(); ++i)
        for (auto a : split_on(fields[i], "|")) attrs.push_back(a);
    }
    auto it = ds.item_index.find(std::string(item));
    if (it == ds.item_index.end()) {
      ++t.skipped_rows;
      continue;
    }
    auto& set = t.item_attributes[it->second];
    for (auto a : attrs) {
      a = trim(a);
      if (a.empty() || a == "(no genres listed)") continue;
      auto [id_it, fresh] = ids.emplace(std::string(a), static_cast<std::uint32_t>(t.names.size()));
      if (fresh) t.names.emplace_back(a);
      set.push_back(id_it->second);
    }
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
  }
  return t;
}

inline AttributeTable load_attributes(const std::string& path, AttributeFormat format,
                                      const InteractionDataset& ds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open attributes file '" + path + "'");
  return parse_attributes(in, format, ds);
}

inline nlohmann::json to_json(const AttributeTable& t) {
  return {{"format", "dpcml-attributes"}, {"version", 1}, {"names", t.names},
          {"items", t.item_attributes}, {"skipped_rows", t.skipped_rows}};
}

inline AttributeTable attributes_from_json(const nlohmann::json& j, const InteractionDataset& ds) {
  try {
    if (j.at("format") != "dpcml-attributes") throw Error("not a dpcml attributes document");
    AttributeTable t;
    t.names = j.at("names").get<std::vector<std::string>>();
    t.item_attributes = j.at("items").get<std::vector<std::vector<std::uint32_t>>>();
    t.skipped_rows = j.value("skipped_rows", std::size_t{0});
    if (t.item_attributes.size() != ds.num_items) throw Error("attribute table does not match dataset item count");
    for (const auto& set : t.item_attributes)
      for (auto a : set)
        if (a >= t.names.size()) throw Error("attribute id out of range");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed attributes document: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace dpcml
