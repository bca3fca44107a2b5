// dpcml: ingest rating files, train multi-vector metric-learning
// recommenders, evaluate them, and compute dataset statistics.
//
// Exit codes: 0 success, 1 replay mismatch, 2 usage/config/data errors,
// 3 numerical divergence.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpcml/dpcml.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitMismatch = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dpcml::IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

std::vector<std::size_t> parse_cutoffs(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto v = dpcml::detail::parse_int(tok);
    if (!v || *v < 1) throw dpcml::ConfigError("bad cutoff '" + tok + "'");
    out.push_back(static_cast<std::size_t>(*v));
  }
  if (out.empty()) throw dpcml::ConfigError("no cutoffs given");
  return out;
}

dpcml::SplitFractions parse_fractions(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto v = dpcml::detail::parse_double(tok);
    if (!v) throw dpcml::ConfigError("bad split fraction '" + tok + "'");
    parts.push_back(*v);
  }
  if (parts.size() != 3) throw dpcml::ConfigError("--split needs three fractions");
  return {parts[0], parts[1], parts[2]};
}

struct DatasetDir {
  dpcml::InteractionDataset dataset;
  std::optional<dpcml::AttributeTable> attributes;
  std::string fingerprint;
};

DatasetDir load_dataset_dir(const std::string& dir) {
  DatasetDir out;
  const std::string path = (fs::path(dir) / "dataset.json").string();
  const std::string text = read_file(path);
  out.fingerprint = hex64(fnv1a(text));
  try {
    out.dataset = dpcml::dataset_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw dpcml::Error("'" + path + "' is not valid JSON: " + e.what());
  }
  const auto attr_path = fs::path(dir) / "attributes.json";
  if (fs::exists(attr_path))
    out.attributes = dpcml::attributes_from_json(dpcml::read_json_file(attr_path.string()), out.dataset);
  return out;
}

// One manifest per output directory: the command line that produced it, the
// dataset fingerprint, and hashes of every artifact written.
void write_manifest(const fs::path& out_dir, const std::vector<std::string>& argv, const std::string& fingerprint,
                    const std::vector<std::string>& artifacts, const std::optional<json>& config = std::nullopt) {
  json m;
  m["format"] = "dpcml-manifest";
  m["version"] = 1;
  m["command"] = argv;
  m["working_directory"] = fs::current_path().string();
  if (!fingerprint.empty()) m["dataset_fingerprint"] = fingerprint;
  if (config) m["config"] = *config;
  json arts = json::array();
  for (const auto& name : artifacts)
    arts.push_back({{"path", name}, {"fnv1a64", file_hash((out_dir / name).string())}});
  m["artifacts"] = arts;
  dpcml::write_text_file((out_dir / "manifest.json").string(), m.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw dpcml::IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string ratings, format, attributes, attributes_format = "movielens-genres", out, split = "0.6,0.2,0.2";
  std::optional<double> threshold;
  bool no_threshold = false;
  std::size_t min_interactions = 5;
  std::uint64_t seed = 0;
  bool keep_cold_items = false;
};

int cmd_ingest(const IngestArgs& a, const std::vector<std::string>& argv) {
  const auto format = dpcml::parse_rating_format(a.format);
  std::optional<double> threshold = a.threshold;
  if (!threshold && !a.no_threshold && format == dpcml::RatingFormat::movielens_dcolon) threshold = 4.0;
  if (a.no_threshold) threshold.reset();

  const auto ratings = dpcml::load_ratings(a.ratings, format, threshold);
  dpcml::BuildOptions opt;
  opt.min_interactions = a.min_interactions;
  opt.split = parse_fractions(a.split);
  opt.seed = a.seed;
  opt.keep_cold_items = a.keep_cold_items;
  const auto ds = dpcml::build_dataset(ratings, opt);

  const fs::path out(a.out);
  ensure_dir(out);
  const std::string dataset_text = dpcml::to_json(ds).dump() + "\n";
  dpcml::write_text_file((out / "dataset.json").string(), dataset_text);
  std::vector<std::string> artifacts{"dataset.json"};

  json stats;
  stats["users"] = ds.num_users;
  stats["items"] = ds.num_items;
  stats["ratings"] = ds.num_interactions();
  stats["density"] = ds.density();
  stats["density_percent"] = 100.0 * ds.density();
  stats["positive_rows_read"] = ratings.size();
  stats["train"] = ds.num_interactions(dpcml::Split::train);
  stats["valid"] = ds.num_interactions(dpcml::Split::valid);
  stats["test"] = ds.num_interactions(dpcml::Split::test);
  if (threshold) stats["threshold"] = *threshold;

  if (!a.attributes.empty()) {
    const auto attrs =
        dpcml::load_attributes(a.attributes, dpcml::parse_attribute_format(a.attributes_format), ds);
    dpcml::write_text_file((out / "attributes.json").string(), dpcml::to_json(attrs).dump() + "\n");
    artifacts.push_back("attributes.json");
    stats["attributes"] = attrs.names.size();
    stats["attribute_rows_skipped"] = attrs.skipped_rows;
  }
  dpcml::write_text_file((out / "stats.json").string(), stats.dump(2) + "\n");
  artifacts.push_back("stats.json");
  write_manifest(out, argv, hex64(fnv1a(dataset_text)), artifacts);

  std::printf("users=%zu items=%zu ratings=%zu density=%.4f%%\n", ds.num_users, ds.num_items,
              ds.num_interactions(), 100.0 * ds.density());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset, config, preset, out;
  std::size_t workers = 1;
  bool quiet = false;
};

dpcml::ModelConfig resolve_config(const std::string& path, const std::string& preset_name) {
  json doc = json::object();
  if (!path.empty()) doc = dpcml::read_json_file(path);
  if (!doc.is_object()) throw dpcml::ConfigError("config must be a JSON object");
  if (!preset_name.empty() && !doc.contains("preset")) doc["preset"] = preset_name;
  return dpcml::config_from_json(doc);
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  if (a.config.empty() && a.preset.empty()) throw dpcml::ConfigError("train needs --config or --preset");
  const auto config = resolve_config(a.config, a.preset);
  const auto dir = load_dataset_dir(a.dataset);
  const auto& ds = dir.dataset;

  dpcml::FitOptions fo;
  fo.workers = a.workers;
  if (!a.quiet)
    fo.on_epoch = [](const dpcml::TrainLogRow& row) {
      std::fprintf(stderr, "epoch %zu: ranking=%.6f dcrs=%.6f total=%.6f valid_mrr=%.6f\n", row.epoch,
                   row.loss.ranking, row.loss.dcrs, row.loss.total, row.valid_mrr);
    };
  const auto result = dpcml::fit<float>(ds, config, fo);

  const fs::path out(a.out);
  ensure_dir(out);
  const json cfg = dpcml::to_json(config);
  dpcml::save_checkpoint((out / "best.ckpt").string(), result.best);
  dpcml::save_checkpoint((out / "final.ckpt").string(), result.final_store);
  json best_side{{"config", cfg}, {"epoch", result.best_epoch}, {"valid_mrr", result.best_valid_mrr}};
  json final_side{{"config", cfg}, {"epoch", result.log.size()}};
  dpcml::write_text_file((out / "best.ckpt.json").string(), best_side.dump(2) + "\n");
  dpcml::write_text_file((out / "final.ckpt.json").string(), final_side.dump(2) + "\n");
  dpcml::write_text_file((out / "train_log.csv").string(), dpcml::training_log_csv(result.log));
  write_manifest(out, argv, dir.fingerprint,
                 {"best.ckpt", "best.ckpt.json", "final.ckpt", "final.ckpt.json", "train_log.csv"}, cfg);

  std::printf("best_epoch=%zu valid_mrr=%.6f\n", result.best_epoch, result.best_valid_mrr);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string dataset, checkpoint, split = "test", cutoffs = "3,5", maxdiv_cutoffs = "3,5,10,20", exclude, out;
  bool groups = false, maxdiv = false;
  std::size_t workers = 1;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  const auto dir = load_dataset_dir(a.dataset);
  if (a.groups && !dir.attributes)
    throw dpcml::ConfigError("--groups needs item attributes; ingest the dataset with --attributes");
  const auto store = dpcml::load_checkpoint(a.checkpoint);
  dpcml::check_store_matches(store.num_users(), store.num_items(), dir.dataset);

  dpcml::EvalOptions opt;
  opt.cutoffs = parse_cutoffs(a.cutoffs);
  opt.workers = a.workers;
  const std::string sidecar = a.checkpoint + ".json";
  if (fs::exists(sidecar)) {
    const auto side = dpcml::read_json_file(sidecar);
    if (side.contains("config") && side["config"].contains("eval_exclude"))
      opt.exclude = dpcml::parse_eval_exclude(side["config"]["eval_exclude"].get<std::string>());
  }
  if (!a.exclude.empty()) opt.exclude = dpcml::parse_eval_exclude(a.exclude);
  if (a.maxdiv) opt.maxdiv_cutoffs = parse_cutoffs(a.maxdiv_cutoffs);
  const auto split = dpcml::parse_split(a.split);
  if (split == dpcml::Split::train) throw dpcml::ConfigError("evaluate on valid or test");

  auto report = dpcml::evaluate(store, dir.dataset, split, opt);
  if (a.groups) report.per_group_map = dpcml::per_group_map(store, dir.dataset, *dir.attributes, split, opt.exclude, a.workers);

  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / ("eval-" + a.split) : fs::path(a.out);
  ensure_dir(out);
  const auto [head, row] = dpcml::to_csv_row(report);
  dpcml::write_text_file((out / "report.json").string(),
                         dpcml::to_json(report, dir.attributes ? &*dir.attributes : nullptr).dump(2) + "\n");
  dpcml::write_text_file((out / "report.csv").string(), head + "\n" + row + "\n");
  write_manifest(out, argv, dir.fingerprint, {"report.json", "report.csv"});

  std::string line = a.split;
  for (auto N : report.cutoffs)
    line += " P@" + std::to_string(N) + "=" + dpcml::format_real(report.precision.at(N)) + " R@" +
            std::to_string(N) + "=" + dpcml::format_real(report.recall.at(N)) + " NDCG@" + std::to_string(N) + "=" +
            dpcml::format_real(report.ndcg.at(N));
  line += " MAP=" + dpcml::format_real(report.map) + " MRR=" + dpcml::format_real(report.mrr_first_hit);
  for (const auto& [N, v] : report.maxdiv) line += " MaxDiv@" + std::to_string(N) + "=" + dpcml::format_real(v);
  std::printf("%s\n", line.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  std::string dataset, out;
  std::size_t bins = 10;
};

int cmd_stats(const StatsArgs& a, const std::vector<std::string>& argv) {
  const auto dir = load_dataset_dir(a.dataset);
  if (!dir.attributes) throw dpcml::ConfigError("stats needs item attributes; ingest the dataset with --attributes");
  const auto hist = dpcml::div_histogram(dir.dataset, *dir.attributes, a.bins);

  const fs::path out = a.out.empty() ? fs::path(a.dataset) / "div-stats" : fs::path(a.out);
  ensure_dir(out);
  std::string csv = "bin,count\n";
  for (std::size_t k = 0; k < hist.labels.size(); ++k)
    csv += "\"" + hist.labels[k] + "\"," + std::to_string(hist.counts[k]) + "\n";
  dpcml::write_text_file((out / "div_histogram.csv").string(), csv);
  std::string per_user = "user,div\n";
  std::size_t k = 0;
  for (dpcml::UserIndex u = 0; u < dir.dataset.num_users; ++u) {
    if (dir.dataset.all_positives(u).size() < 2) continue;
    per_user += dir.dataset.user_tokens[u] + "," + dpcml::format_real(hist.values[k++]) + "\n";
  }
  dpcml::write_text_file((out / "div_users.csv").string(), per_user);
  write_manifest(out, argv, dir.fingerprint, {"div_histogram.csv", "div_users.csv"});

  const double total = double(hist.total());
  std::size_t mid = 0;
  for (double v : hist.values) mid += (v > 0.0 && v <= 0.8) ? 1 : 0;
  std::printf("users=%zu in_(0,0.8]=%.4f at_1=%.4f skipped=%zu\n", hist.total(), total > 0 ? double(mid) / total : 0.0,
              total > 0 ? double(hist.counts.back()) / total : 0.0, hist.skipped_users);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BoundArgs {
  std::string dataset, config;
  std::optional<std::size_t> users;
  std::optional<double> npos, nneg;
  std::size_t d = 100;
  double r = 1.0, eta = 10.0;
};

int cmd_bound(const BoundArgs& a) {
  std::size_t d = a.d;
  double r = a.r, eta = a.eta;
  if (!a.config.empty()) {
    const auto cfg = resolve_config(a.config, "");
    d = cfg.d;
    r = cfg.r;
    eta = cfg.eta;
  }
  dpcml::BoundInputs in;
  if (!a.dataset.empty()) {
    in = dpcml::bound_inputs(load_dataset_dir(a.dataset).dataset, d, r, eta);
  } else {
    if (!a.users || !a.npos || !a.nneg) throw dpcml::ConfigError("bound needs --dataset or --users, --npos and --nneg");
    in = dpcml::BoundInputs::uniform(*a.users, *a.npos, *a.nneg, d, r, eta);
  }
  const auto b = dpcml::generalization_bound(in);
  if (b.vacuous())
    std::printf("N_tilde=%s vacuous\n", dpcml::format_real(b.n_tilde).c_str());
  else
    std::printf("N_tilde=%s epsilon=%s\n", dpcml::format_real(b.n_tilde).c_str(),
                dpcml::format_real(*b.epsilon).c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& argv);

// Re-executes the command recorded in a manifest and compares artifact
// hashes with the recorded ones.
int cmd_replay(const std::string& manifest_path) {
  const auto m = dpcml::read_json_file(manifest_path);
  const auto command = m.at("command").get<std::vector<std::string>>();
  const auto dir = fs::absolute(manifest_path).parent_path();
  if (m.contains("working_directory")) fs::current_path(m.at("working_directory").get<std::string>());
  const int code = run(command);
  if (code != kExitOk) return code;
  int status = kExitOk;
  for (const auto& art : m.at("artifacts")) {
    const auto name = art.at("path").get<std::string>();
    const auto now = file_hash((dir / name).string());
    if (now != art.at("fnv1a64").get<std::string>()) {
      std::fprintf(stderr, "replay: %s differs\n", name.c_str());
      status = kExitMismatch;
    }
  }
  if (status == kExitOk) std::printf("replay: %zu artifacts reproduced\n", m.at("artifacts").size());
  return status;
}

int run(const std::vector<std::string>& argv) {
  CLI::App app{"Multi-vector collaborative metric learning: ingest, train, evaluate"};
  app.name("dpcml");
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Convert a rating file into a split dataset");
  ingest->add_option("--ratings", ia.ratings, "Rating file")->required();
  ingest->add_option("--format", ia.format, "Rating file format")
      ->required()
      ->check(CLI::IsMember({"movielens-dcolon", "tsv", "csv", "steam"}));
  ingest->add_option("--attributes", ia.attributes, "Item attribute file");
  ingest->add_option("--attributes-format", ia.attributes_format, "Attribute file format")
      ->check(CLI::IsMember({"movielens-genres", "tsv-multi"}));
  ingest->add_option("--threshold", ia.threshold, "Keep ratings >= threshold (default 4 for movielens-dcolon)");
  ingest->add_flag("--no-threshold", ia.no_threshold, "Treat every row as positive");
  ingest->add_option("--min-interactions", ia.min_interactions, "Drop users with fewer positives");
  ingest->add_option("--split", ia.split, "train,valid,test fractions");
  ingest->add_option("--seed", ia.seed, "Split seed")->required();
  ingest->add_flag("--keep-cold-items", ia.keep_cold_items, "Keep items left without interactions");
  ingest->add_option("--out", ia.out, "Output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and keep the best validation checkpoint");
  train->add_option("--dataset", ta.dataset, "Dataset directory")->required();
  train->add_option("--config", ta.config, "Model config JSON");
  train->add_option("--preset", ta.preset, "Base preset")->check(CLI::IsMember({"default", "dpcml1", "dpcml2", "cml"}));
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--workers", ta.workers, "Worker threads")->check(CLI::PositiveNumber);
  train->add_flag("--quiet", ta.quiet, "No per-epoch progress");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--dataset", ea.dataset, "Dataset directory")->required();
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", ea.split, "valid or test")->check(CLI::IsMember({"valid", "test"}));
  eval->add_option("--cutoffs", ea.cutoffs, "Comma-separated top-N cutoffs");
  eval->add_flag("--groups", ea.groups, "Per-attribute MAP");
  eval->add_flag("--maxdiv", ea.maxdiv, "MaxDiv at --maxdiv-cutoffs");
  eval->add_option("--maxdiv-cutoffs", ea.maxdiv_cutoffs, "Comma-separated MaxDiv cutoffs");
  eval->add_option("--exclude", ea.exclude, "Override exclusion: train or train+valid")
      ->check(CLI::IsMember({"train", "train+valid"}));
  eval->add_option("--workers", ea.workers, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--out", ea.out, "Output directory (default: <checkpoint dir>/eval-<split>)");

  StatsArgs sa;
  auto* stats = app.add_subcommand("stats", "Preference-diversity histogram over users");
  stats->add_option("--dataset", sa.dataset, "Dataset directory")->required();
  stats->add_option("--bins", sa.bins, "Histogram bins over (0, 1)")->check(CLI::PositiveNumber);
  stats->add_option("--out", sa.out, "Output directory (default: <dataset>/div-stats)");

  BoundArgs ba;
  auto* bound = app.add_subcommand("bound", "Evaluate the generalization bound");
  bound->add_option("--dataset", ba.dataset, "Dataset directory (per-user counts)");
  bound->add_option("--users", ba.users, "Number of users");
  bound->add_option("--npos", ba.npos, "Positives per user");
  bound->add_option("--nneg", ba.nneg, "Negatives per user");
  bound->add_option("--d", ba.d, "Embedding dimension");
  bound->add_option("--r", ba.r, "Norm-ball radius");
  bound->add_option("--eta", ba.eta, "Regularizer weight");
  bound->add_option("--config", ba.config, "Read d, r and eta from a model config");

  std::string manifest;
  auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest and verify its artifacts");
  replay->add_option("manifest", manifest, "manifest.json")->required();

  std::vector<std::string> args(argv.begin() + 1, argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(ia, argv);
    if (*train) return cmd_train(ta, argv);
    if (*eval) return cmd_eval(ea, argv);
    if (*stats) return cmd_stats(sa, argv);
    if (*bound) return cmd_bound(ba);
    if (*replay) return cmd_replay(manifest);
  } catch (const dpcml::DivergenceError& e) {
    std::fprintf(stderr, "error: training diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args);
}
