#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcbal/dataset.hpp"
#include "pcbal/error.hpp"
#include "pcbal/metrics.hpp"
#include "pcbal/model.hpp"
#include "pcbal/pcb.hpp"
#include "pcbal/random.hpp"
#include "pcbal/strategies.hpp"

namespace pcbal {

inline constexpr const char* kToolName = "pcbal";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kResultsFormat = "pcbal-results/1";

// ---------------------------------------------------------------------------
// Experiment config (JSON)
//
// {
//   "strategy": "random|entropy|coreset|badge", "use_pcb": bool,
//   "aggregation": "none|as|ae", "gamma": (0,1], "rounds": int,
//   "budget": "auto" | int, "tau": float,
//   "train": {"learning_rate", "epochs", "init_std", "batch": "full"|int,
//             "schedule": "cosine"|"constant"},
//   "seed": u64, "train_data": dir, "test_data": dir, "out": dir,
//   "within_class": "random"|"score"   (optional)
// }

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::ConfigInvalid, std::string("config key '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    require(ok, ErrorCode::ConfigInvalid, "unknown config key '" + where + key + "'");
  }
}

inline std::uint64_t parse_u64(const nlohmann::json& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  require(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0), ErrorCode::ConfigInvalid,
          std::string("config key '") + key + "' must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline std::size_t parse_count(const nlohmann::json& j, const char* key, std::size_t fallback) {
  return static_cast<std::size_t>(parse_u64(j, key, fallback));
}

}  // namespace detail

struct RunSettings {
  ExperimentConfig experiment;
  std::string out;  // output directory; not part of the experiment definition
};

inline RunSettings parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  require(j.is_object(), ErrorCode::ConfigInvalid, "config must be a JSON object");
  detail::reject_unknown(j,
                         {"strategy", "use_pcb", "aggregation", "gamma", "rounds", "budget", "tau", "train", "seed",
                          "train_data", "test_data", "out", "within_class"},
                         "");
  RunSettings s;
  auto& cfg = s.experiment;
  require(j.contains("strategy"), ErrorCode::ConfigInvalid, "config needs 'strategy'");
  cfg.strategy = parse_strategy(detail::field<std::string>(j, "strategy", ""));
  cfg.use_pcb = detail::field<bool>(j, "use_pcb", false);
  cfg.aggregation = parse_aggregation(detail::field<std::string>(j, "aggregation", "none"));
  cfg.gamma = detail::field<double>(j, "gamma", 0.1);
  cfg.rounds = detail::parse_count(j, "rounds", 8);
  if (j.contains("budget") && !(j["budget"].is_string() && j["budget"] == "auto")) {
    require(j["budget"].is_number_integer() && j["budget"].get<std::int64_t>() >= 1, ErrorCode::ConfigInvalid,
            "budget must be \"auto\" or a positive integer");
    cfg.budget = j["budget"].get<std::size_t>();
  }
  cfg.tau = detail::field<double>(j, "tau", kDefaultTemperature);
  cfg.seed = detail::parse_u64(j, "seed", 0);

  const std::string within = detail::field<std::string>(j, "within_class", "random");
  require(within == "random" || within == "score", ErrorCode::ConfigInvalid, "within_class must be random|score");
  cfg.within_class = within == "random" ? WithinClassPick::Random : WithinClassPick::StrategyOrder;

  if (j.contains("train")) {
    const auto& t = j.at("train");
    require(t.is_object(), ErrorCode::ConfigInvalid, "config key 'train' must be an object");
    detail::reject_unknown(t, {"learning_rate", "epochs", "init_std", "batch", "schedule"}, "train.");
    cfg.train.learning_rate = detail::field<double>(t, "learning_rate", cfg.train.learning_rate);
    cfg.train.epochs = detail::parse_count(t, "epochs", cfg.train.epochs);
    cfg.train.init_std = detail::field<double>(t, "init_std", cfg.train.init_std);
    if (t.contains("batch") && !(t["batch"].is_string() && t["batch"] == "full")) {
      require(t["batch"].is_number_integer() && t["batch"].get<std::int64_t>() >= 1, ErrorCode::ConfigInvalid,
              "train.batch must be \"full\" or a positive integer");
      cfg.train.batch_size = t["batch"].get<std::size_t>();
    }
    const std::string schedule = detail::field<std::string>(t, "schedule", "cosine");
    require(schedule == "cosine" || schedule == "constant", ErrorCode::ConfigInvalid,
            "train.schedule must be cosine|constant");
    cfg.train.schedule = schedule == "cosine" ? LrSchedule::CosineAnnealing : LrSchedule::Constant;
  }

  auto resolve = [&](const std::string& p) {
    if (p.empty() || std::filesystem::path(p).is_absolute() || base_dir.empty()) return p;
    return (base_dir / p).lexically_normal().string();
  };
  require(j.contains("train_data") && j.contains("test_data"), ErrorCode::ConfigInvalid,
          "config needs 'train_data' and 'test_data'");
  cfg.train_data = resolve(detail::field<std::string>(j, "train_data", ""));
  cfg.test_data = resolve(detail::field<std::string>(j, "test_data", ""));
  s.out = resolve(detail::field<std::string>(j, "out", ""));
  validate(cfg);
  return s;
}

inline RunSettings load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_text(path);
  } catch (const Error&) {
    fail(ErrorCode::ConfigInvalid, "cannot read config " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j, path.parent_path());
}

// Complete echo of the experiment definition with every default filled in.
inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["strategy"] = to_string(cfg.strategy);
  j["use_pcb"] = cfg.use_pcb;
  j["aggregation"] = to_string(cfg.aggregation);
  j["gamma"] = cfg.gamma;
  j["rounds"] = cfg.rounds;
  if (cfg.budget)
    j["budget"] = *cfg.budget;
  else
    j["budget"] = "auto";
  j["tau"] = cfg.tau;
  nlohmann::json t;
  t["learning_rate"] = cfg.train.learning_rate;
  t["epochs"] = cfg.train.epochs;
  t["init_std"] = cfg.train.init_std;
  if (cfg.train.batch_size == 0)
    t["batch"] = "full";
  else
    t["batch"] = cfg.train.batch_size;
  t["schedule"] = cfg.train.schedule == LrSchedule::CosineAnnealing ? "cosine" : "constant";
  j["train"] = t;
  j["seed"] = cfg.seed;
  j["within_class"] = cfg.within_class == WithinClassPick::Random ? "random" : "score";
  j["train_data"] = cfg.train_data;
  j["test_data"] = cfg.test_data;
  return j;
}

// ---------------------------------------------------------------------------
// Results

inline nlohmann::json metadata_json() {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"format", kResultsFormat}, {"prng", Rng::kAlgorithmId}};
}

inline nlohmann::json to_json(const RoundReport& r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["selected"] = r.selected;
  j["counts"] = r.counts;
  j["imbalance"] = r.imbalance;
  j["accuracy"] = r.accuracy;
  j["fallbacks"] = r.fallbacks;
  j["informative_subset"] = r.informative_subset;
  j["pseudo_label_accuracy"] = r.pseudo_label_accuracy ? nlohmann::json(*r.pseudo_label_accuracy) : nlohmann::json();
  j["loss_initial"] = r.loss_initial;
  j["loss_final"] = r.loss_final;
  return j;
}

inline nlohmann::json to_json(const ExperimentResult& result) {
  nlohmann::json j;
  j["metadata"] = metadata_json();
  j["config"] = to_json(result.config);
  j["budget"] = result.budget;
  j["zero_shot_accuracy"] = result.zero_shot_accuracy;
  j["rounds"] = nlohmann::json::array();
  for (const auto& r : result.rounds) j["rounds"].push_back(to_json(r));
  j["final_accuracy"] = result.rounds.empty() ? 0.0 : result.rounds.back().accuracy;
  return j;
}

inline nlohmann::json to_json(const AggregateTable& agg) {
  nlohmann::json j;
  j["seeds"] = agg.seeds;
  j["metrics"] = agg.metrics;
  j["rounds"] = nlohmann::json::array();
  for (std::size_t r = 0; r < agg.mean.rows(); ++r) {
    nlohmann::json row;
    row["round"] = r + 1;
    for (std::size_t c = 0; c < agg.metrics.size(); ++c)
      row[agg.metrics[c]] = {{"mean", agg.mean(r, c)}, {"std", agg.std(r, c)}};
    j["rounds"].push_back(row);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Model files: residuals.f32 (K x D, little-endian binary32) + model.json

inline void save_model(const PromptModel& model, const std::filesystem::path& dir,
                       const nlohmann::json& config_echo = nullptr) {
  detail::ensure_directory(dir);
  std::vector<float> values(model.residuals.data().begin(), model.residuals.data().end());
  detail::write_le<float>(dir / "residuals.f32", values);
  nlohmann::json j;
  j["dim"] = model.dim();
  j["K"] = model.num_classes();
  j["tau"] = model.temperature;
  j["aggregation"] = to_string(model.aggregation);
  if (!config_echo.is_null()) j["config"] = config_echo;
  detail::write_text(dir / "model.json", j.dump(2) + "\n");
}

// `path` is the model directory or its model.json.
inline PromptModel load_model(const std::filesystem::path& path) {
  const auto dir = std::filesystem::is_directory(path) ? path : path.parent_path();
  const auto sidecar = dir / "model.json";
  require(std::filesystem::is_regular_file(sidecar), ErrorCode::IoFailure, "missing " + sidecar.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(sidecar));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestInvalid, std::string("model.json is not valid JSON: ") + e.what());
  }
  PromptModel model;
  std::size_t dim = 0;
  std::size_t k = 0;
  try {
    dim = j.at("dim").get<std::size_t>();
    k = j.at("K").get<std::size_t>();
    model.temperature = j.at("tau").get<double>();
    model.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestInvalid, std::string("model.json field error: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::ManifestInvalid, e.what());
  }
  require(dim > 0 && k > 0 && model.temperature > 0.0, ErrorCode::ManifestInvalid, "model.json has invalid shape");
  const auto values = detail::read_le<float>(dir / "residuals.f32", k * dim);
  model.residuals = Matrix<double>(k, dim);
  for (std::size_t i = 0; i < values.size(); ++i) model.residuals.data()[i] = values[i];
  return model;
}

}  // namespace pcbal
