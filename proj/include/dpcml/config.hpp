#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dpcml/error.hpp"

namespace dpcml {

enum class ScoreVariant : std::uint32_t { euclidean = 0, spherical = 1 };
enum class Sampler { uniform, popularity, hard };
enum class DcrsVariant { full, lower_only, upper_only, off };
enum class EvalExclude { train, train_valid };

inline std::string_view to_string(ScoreVariant v) {
  return v == ScoreVariant::euclidean ? "euclidean" : "spherical";
}
inline std::string_view to_string(Sampler s) {
  switch (s) {
    case Sampler::uniform: return "uniform";
    case Sampler::popularity: return "popularity";
    case Sampler::hard: return "hard";
  }
  return "?";
}
inline std::string_view to_string(DcrsVariant v) {
  switch (v) {
    case DcrsVariant::full: return "full";
    case DcrsVariant::lower_only: return "lower-only";
    case DcrsVariant::upper_only: return "upper-only";
    case DcrsVariant::off: return "off";
  }
  return "?";
}
inline std::string_view to_string(EvalExclude e) {
  return e == EvalExclude::train ? "train" : "train+valid";
}

inline ScoreVariant parse_score_variant(std::string_view s) {
  if (s == "euclidean") return ScoreVariant::euclidean;
  if (s == "spherical") return ScoreVariant::spherical;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}
inline Sampler parse_sampler(std::string_view s) {
  if (s == "uniform") return Sampler::uniform;
  if (s == "popularity") return Sampler::popularity;
  if (s == "hard") return Sampler::hard;
  throw ConfigError("unknown sampler '" + std::string(s) + "'");
}
inline DcrsVariant parse_dcrs_variant(std::string_view s) {
  if (s == "full") return DcrsVariant::full;
  if (s == "lower-only") return DcrsVariant::lower_only;
  if (s == "upper-only") return DcrsVariant::upper_only;
  if (s == "off") return DcrsVariant::off;
  throw ConfigError("unknown dcrs_variant '" + std::string(s) + "'");
}
inline EvalExclude parse_eval_exclude(std::string_view s) {
  if (s == "train") return EvalExclude::train;
  if (s == "train+valid") return EvalExclude::train_valid;
  throw ConfigError("unknown eval_exclude '" + std::string(s) + "'");
}

// Every hyperparameter of a training run. Defaults follow the experimental
// protocol (d = 100, S = 10, batch 256, 100 epochs, Adam).
struct ModelConfig {
  std::uint32_t C = 5;
  std::uint32_t d = 100;
  double margin = 1.0;
  double eta = 10.0;
  double delta1 = 0.1;
  double delta2 = 0.5;
  std::uint32_t S = 10;
  Sampler sampler = Sampler::uniform;
  DcrsVariant dcrs_variant = DcrsVariant::full;
  ScoreVariant variant = ScoreVariant::euclidean;
  double r = 1.0;  // infinity disables clipping
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::uint32_t batch_size = 256;
  std::uint32_t epochs = 100;
  std::uint64_t seed = 0;
  EvalExclude eval_exclude = EvalExclude::train_valid;

  void validate() const {
    if (C < 1) throw ConfigError("C must be >= 1");
    if (d < 1) throw ConfigError("d must be >= 1");
    if (!(margin > 0.0) || !std::isfinite(margin)) throw ConfigError("margin must be > 0");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be >= 0");
    if (!std::isfinite(delta1) || !std::isfinite(delta2)) throw ConfigError("delta thresholds must be finite");
    if (dcrs_variant == DcrsVariant::full && delta1 > delta2)
      throw ConfigError("delta1 must be <= delta2 when dcrs_variant is full");
    if (S < 1) throw ConfigError("S must be >= 1");
    if (!(r > 0.0)) throw ConfigError("r must be > 0");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
    if (!(eps_adam > 0.0)) throw ConfigError("eps_adam must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }
};

// Named starting points. Fields given explicitly in a config document
// override the preset.
inline ModelConfig preset(std::string_view name) {
  ModelConfig cfg;
  if (name == "dpcml1") {
    cfg.sampler = Sampler::uniform;
    cfg.C = 5;
    cfg.eta = 10.0;
  } else if (name == "dpcml2") {
    cfg.sampler = Sampler::hard;
    cfg.C = 5;
    cfg.eta = 10.0;
    cfg.S = 10;
  } else if (name == "cml") {
    cfg.C = 1;
    cfg.eta = 0.0;
    cfg.dcrs_variant = DcrsVariant::off;
  } else if (name != "default") {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  return cfg;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["C"] = c.C;
  j["d"] = c.d;
  j["margin"] = c.margin;
  j["eta"] = c.eta;
  j["delta1"] = c.delta1;
  j["delta2"] = c.delta2;
  j["S"] = c.S;
  j["sampler"] = to_string(c.sampler);
  j["dcrs_variant"] = to_string(c.dcrs_variant);
  j["variant"] = to_string(c.variant);
  if (std::isinf(c.r))
    j["r"] = "inf";
  else
    j["r"] = c.r;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps_adam"] = c.eps_adam;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["eval_exclude"] = to_string(c.eval_exclude);
  return j;
}

namespace detail {

inline double json_real(const nlohmann::json& v, const char* key) {
  if (!v.is_number()) throw ConfigError(std::string(key) + " must be a number");
  return v.get<double>();
}

inline std::uint64_t json_count(const nlohmann::json& v, const char* key) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError(std::string(key) + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::uint32_t json_u32(const nlohmann::json& v, const char* key) {
  const auto n = json_count(v, key);
  if (n > std::numeric_limits<std::uint32_t>::max()) throw ConfigError(std::string(key) + " is too large");
  return static_cast<std::uint32_t>(n);
}

inline std::string json_str(const nlohmann::json& v, const char* key) {
  if (!v.is_string()) throw ConfigError(std::string(key) + " must be a string");
  return v.get<std::string>();
}

}  // namespace detail

// Parses a config document. An optional "preset" key selects the base
// config; unknown keys are rejected. The result is validated.
inline ModelConfig config_from_json(const nlohmann::json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ModelConfig c = preset(j.contains("preset") ? json_str(j.at("preset"), "preset") : "default");
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    else if (key == "C") c.C = json_u32(v, "C");
    else if (key == "d") c.d = json_u32(v, "d");
    else if (key == "margin") c.margin = json_real(v, "margin");
    else if (key == "eta") c.eta = json_real(v, "eta");
    else if (key == "delta1") c.delta1 = json_real(v, "delta1");
    else if (key == "delta2") c.delta2 = json_real(v, "delta2");
    else if (key == "S") c.S = json_u32(v, "S");
    else if (key == "sampler") c.sampler = parse_sampler(json_str(v, "sampler"));
    else if (key == "dcrs_variant") c.dcrs_variant = parse_dcrs_variant(json_str(v, "dcrs_variant"));
    else if (key == "variant") c.variant = parse_score_variant(json_str(v, "variant"));
    else if (key == "r") {
      if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf"))
        c.r = std::numeric_limits<double>::infinity();
      else
        c.r = json_real(v, "r");
    }
    else if (key == "lr") c.lr = json_real(v, "lr");
    else if (key == "beta1") c.beta1 = json_real(v, "beta1");
    else if (key == "beta2") c.beta2 = json_real(v, "beta2");
    else if (key == "eps_adam") c.eps_adam = json_real(v, "eps_adam");
    else if (key == "batch_size") c.batch_size = json_u32(v, "batch_size");
    else if (key == "epochs") c.epochs = json_u32(v, "epochs");
    else if (key == "seed") c.seed = json_count(v, "seed");
    else if (key == "eval_exclude") c.eval_exclude = parse_eval_exclude(json_str(v, "eval_exclude"));
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

}  // namespace dpcml
