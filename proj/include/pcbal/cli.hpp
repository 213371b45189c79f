#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pcbal/dataset.hpp"
#include "pcbal/error.hpp"
#include "pcbal/io.hpp"
#include "pcbal/metrics.hpp"
#include "pcbal/model.hpp"
#include "pcbal/pcb.hpp"

namespace pcbal::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,
  kConfigError = 2,
  kDatasetError = 3,
};

// Shortest round-trip decimal, always with a fractional part ("1.0").
inline std::string format_decimal(double value) { return nlohmann::json(value).dump(); }

struct RunOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t repeats = 1;
  std::size_t threads = 1;
  bool renormalize = false;
};

struct SynthOptions {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::string per_class;
  double sigma_img = 0.0;
  double sigma_txt = 0.0;
  std::size_t descriptions = 1;
  std::size_t test_per_class = 50;
  std::uint64_t seed = 0;
  std::string out;
};

struct ZeroShotOptions {
  std::string data;
  std::string aggregation = "none";
  double tau = kDefaultTemperature;
  std::size_t threads = 1;
  bool renormalize = false;
};

struct EvalOptions {
  std::string data;
  std::string model;
  std::size_t threads = 1;
  bool renormalize = false;
};

namespace detail {

// Thrown to leave a command with a specific exit code.
struct Exit {
  int code;
  std::string message;
};

inline int classify(const Error& e) {
  if (e.code() == ErrorCode::ConfigInvalid) return kConfigError;
  if (e.is_data_error()) return kDatasetError;
  return kRuntimeError;
}

template <typename F>
auto phase(int code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Exit{code, e.what()};
  }
}

inline std::pair<EmbeddingDataset, ClassTextBank> load_data(const std::string& dir, bool renormalize) {
  return phase(kDatasetError, [&] { return load_dataset(dir, LoadOptions{renormalize}); });
}

inline void write_run(const ExperimentResult& result, const std::filesystem::path& dir) {
  pcbal::detail::ensure_directory(dir);
  pcbal::detail::write_text(dir / "results.json", to_json(result).dump(2) + "\n");
  pcbal::detail::write_text(dir / "curves.csv", to_csv(curve_table(result)));
  nlohmann::json timing = nlohmann::json::array();
  for (const auto& r : result.rounds) timing.push_back({{"round", r.round}, {"wall_seconds", r.wall_seconds}});
  pcbal::detail::write_text(dir / "timing.json", timing.dump(2) + "\n");
  save_model(result.final_model, dir / "model", to_json(result.config));
}

// "50" or "powerlaw:<base>:<alpha>"
inline std::vector<std::size_t> parse_per_class(const std::string& spec, std::size_t classes) {
  const std::string prefix = "powerlaw:";
  try {
    if (spec.rfind(prefix, 0) == 0) {
      const auto rest = spec.substr(prefix.size());
      const auto colon = rest.find(':');
      require(colon != std::string::npos, ErrorCode::ConfigInvalid, "expected powerlaw:<base>:<alpha>");
      std::size_t used = 0;
      const double base = std::stod(rest.substr(0, colon), &used);
      require(used == colon, ErrorCode::ConfigInvalid, "bad power-law base");
      const auto alpha_text = rest.substr(colon + 1);
      const double alpha = std::stod(alpha_text, &used);
      require(used == alpha_text.size(), ErrorCode::ConfigInvalid, "bad power-law exponent");
      return power_law_counts(classes, base, alpha);
    }
    std::size_t used = 0;
    const long long count = std::stoll(spec, &used);
    require(used == spec.size() && count >= 1, ErrorCode::ConfigInvalid, "per-class count must be a positive integer");
    return std::vector<std::size_t>(classes, static_cast<std::size_t>(count));
  } catch (const std::logic_error&) {
    fail(ErrorCode::ConfigInvalid, "invalid --per-class '" + spec + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns an exit code; diagnostics go to `err` as one line.

inline int cmd_run(const RunOptions& opt, std::ostream& out) {
  auto settings = detail::phase(kConfigError, [&] { return load_config(opt.config); });
  if (!opt.out.empty()) settings.out = opt.out;
  if (opt.seed) settings.experiment.seed = *opt.seed;
  if (settings.out.empty()) throw detail::Exit{kConfigError, "no output directory: pass --out or set 'out'"};
  if (opt.repeats < 1) throw detail::Exit{kConfigError, "--repeats must be >= 1"};

  auto [train, bank] = detail::load_data(settings.experiment.train_data, opt.renormalize);
  auto [test, test_bank] = detail::load_data(settings.experiment.test_data, opt.renormalize);
  detail::phase(kConfigError, [&] { validate_inputs(train, bank, test, settings.experiment); });

  std::vector<ExperimentResult> results;
  const std::filesystem::path root(settings.out);
  for (std::size_t i = 0; i < opt.repeats; ++i) {
    ExperimentConfig cfg = settings.experiment;
    cfg.seed = settings.experiment.seed + i;
    auto result = detail::phase(kRuntimeError, [&] { return run_experiment(train, bank, test, cfg, opt.threads); });
    const auto dir = opt.repeats == 1 ? root : root / ("seed_" + std::to_string(cfg.seed));
    detail::phase(kRuntimeError, [&] { detail::write_run(result, dir); });
    const auto& last = result.rounds.back();
    out << "seed " << cfg.seed << ": zero-shot " << format_decimal(result.zero_shot_accuracy) << ", final accuracy "
        << format_decimal(last.accuracy) << ", imbalance " << format_decimal(last.imbalance) << '\n';
    results.push_back(std::move(result));
  }
  if (opt.repeats > 1) {
    detail::phase(kRuntimeError, [&] {
      nlohmann::json agg = to_json(aggregate_seeds(std::span<const ExperimentResult>(results)));
      agg["metadata"] = metadata_json();
      std::vector<std::uint64_t> seeds;
      for (const auto& r : results) seeds.push_back(r.config.seed);
      agg["seed_list"] = seeds;
      pcbal::detail::write_text(root / "aggregate.json", agg.dump(2) + "\n");
    });
  }
  return kOk;
}

inline int cmd_synth(const SynthOptions& opt, std::ostream& out) {
  SynthSpec spec;
  detail::phase(kConfigError, [&] {
    spec.num_classes = opt.classes;
    spec.dim = opt.dim;
    spec.items_per_class = detail::parse_per_class(opt.per_class, opt.classes);
    spec.test_per_class = opt.test_per_class;
    spec.noise_sigma_image = opt.sigma_img;
    spec.noise_sigma_text = opt.sigma_txt;
    spec.descriptions_per_class = opt.descriptions;
    spec.seed = opt.seed;
    validate(spec);
  });
  const auto data = generate_synthetic(spec);
  const std::filesystem::path root(opt.out);
  detail::phase(kRuntimeError, [&] {
    save_dataset(data.train, data.bank, root / "train");
    save_dataset(data.test, data.bank, root / "test");
  });
  out << "wrote " << data.train.size() << " train and " << data.test.size() << " test items to " << root.string()
      << '\n';
  return kOk;
}

inline int cmd_zeroshot(const ZeroShotOptions& opt, std::ostream& out) {
  const auto aggregation = detail::phase(kConfigError, [&] { return parse_aggregation(opt.aggregation); });
  if (!(opt.tau > 0.0)) throw detail::Exit{kConfigError, "--tau must be positive"};
  const auto [ds, bank] = detail::load_data(opt.data, opt.renormalize);
  const double acc = detail::phase(kRuntimeError, [&] {
    return evaluate(PromptModel::zero(bank.num_classes(), bank.dim, opt.tau, aggregation), bank, ds, opt.threads);
  });
  out << format_decimal(acc) << '\n';
  return kOk;
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  const auto [ds, bank] = detail::load_data(opt.data, opt.renormalize);
  const auto model = detail::phase(kDatasetError, [&] {
    auto m = load_model(opt.model);
    require(m.num_classes() == bank.num_classes() && m.dim() == bank.dim, ErrorCode::ManifestInvalid,
            "model shape does not match the dataset");
    return m;
  });
  const double acc = detail::phase(kRuntimeError, [&] { return evaluate(model, bank, ds, opt.threads); });
  out << format_decimal(acc) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Pseudo-class-balanced active learning over frozen embeddings", "pcbal"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run an active-learning experiment from a JSON config");
  run_cmd->add_option("--config", run.config, "Experiment config (JSON)")->required();
  run_cmd->add_option("--out", run.out, "Output directory (overrides 'out' in the config)");
  run_cmd->add_option("--seed", run.seed, "Seed override");
  run_cmd->add_option("--repeats", run.repeats, "Number of runs with seeds seed, seed+1, ...");
  run_cmd->add_option("--threads", run.threads, "Worker threads for scoring (0 = all cores)");
  run_cmd->add_flag("--renormalize", run.renormalize, "Repair rows that are not unit-norm instead of failing");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic train/test dataset pair");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->required();
  synth_cmd->add_option("--dim", synth.dim, "Embedding dimension")->required();
  synth_cmd->add_option("--per-class", synth.per_class, "Train items per class: N or powerlaw:<base>:<alpha>")
      ->required();
  synth_cmd->add_option("--sigma-img", synth.sigma_img, "Image noise sigma")->required();
  synth_cmd->add_option("--sigma-txt", synth.sigma_txt, "Description noise sigma")->required();
  synth_cmd->add_option("--descriptions", synth.descriptions, "Descriptions per class")->required();
  synth_cmd->add_option("--test-per-class", synth.test_per_class, "Test items per class");
  synth_cmd->add_option("--seed", synth.seed, "Seed")->required();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  ZeroShotOptions zs;
  auto* zs_cmd = app.add_subcommand("zeroshot", "Print zero-shot test accuracy");
  zs_cmd->add_option("--data", zs.data, "Dataset directory")->required();
  zs_cmd->add_option("--aggregation", zs.aggregation, "none|as|ae");
  zs_cmd->add_option("--tau", zs.tau, "Softmax temperature");
  zs_cmd->add_option("--threads", zs.threads, "Worker threads (0 = all cores)");
  zs_cmd->add_flag("--renormalize", zs.renormalize, "Repair rows that are not unit-norm instead of failing");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Print the accuracy of a saved model");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--model", ev.model, "Model directory or model.json")->required();
  eval_cmd->add_option("--threads", ev.threads, "Worker threads (0 = all cores)");
  eval_cmd->add_flag("--renormalize", ev.renormalize, "Repair rows that are not unit-norm instead of failing");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "pcbal: error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (*run_cmd) return cmd_run(run, out);
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*zs_cmd) return cmd_zeroshot(zs, out);
    if (*eval_cmd) return cmd_eval(ev, out);
  } catch (const detail::Exit& e) {
    err << "pcbal: error: " << e.message << '\n';
    return e.code;
  } catch (const Error& e) {
    err << "pcbal: error: " << e.what() << '\n';
    return detail::classify(e);
  } catch (const std::exception& e) {
    err << "pcbal: error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kRuntimeError;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace pcbal::cli
