#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcbal/dataset.hpp"
#include "pcbal/error.hpp"
#include "pcbal/metrics.hpp"
#include "pcbal/model.hpp"
#include "pcbal/random.hpp"
#include "pcbal/strategies.hpp"

namespace pcbal {

struct LabeledItem {
  std::size_t index = 0;
  ClassId label = 0;
  friend bool operator==(const LabeledItem&, const LabeledItem&) = default;
};

// Same shape, but the label is the model's guess.
struct PseudoLabeled {
  std::size_t index = 0;
  ClassId label = 0;
  friend bool operator==(const PseudoLabeled&, const PseudoLabeled&) = default;
};

// Labeled / unlabeled partition of the training pool.
struct PoolState {
  std::vector<LabeledItem> labeled;
  std::vector<std::size_t> unlabeled;  // ascending dataset indices
  std::vector<std::size_t> estimated_counts;
  std::size_t round = 0;

  static PoolState initial(std::size_t pool_size, std::size_t num_classes) {
    PoolState s;
    s.unlabeled.resize(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) s.unlabeled[i] = i;
    s.estimated_counts.assign(num_classes, 0);
    return s;
  }

  std::vector<std::size_t> labeled_indices() const {
    std::vector<std::size_t> out;
    out.reserve(labeled.size());
    for (const auto& item : labeled) out.push_back(item.index);
    return out;
  }

  friend bool operator==(const PoolState&, const PoolState&) = default;
};

// Ground-truth label source. Strategies and the model never see it.
class Oracle {
 public:
  explicit Oracle(std::vector<ClassId> labels) : labels_(std::move(labels)) {}

  ClassId label(std::size_t index) const {
    require(index < labels_.size(), ErrorCode::IndexOutOfRange,
            "oracle query for index " + std::to_string(index) + " outside the dataset");
    return labels_[index];
  }

  std::size_t size() const noexcept { return labels_.size(); }

 private:
  std::vector<ClassId> labels_;
};

inline std::vector<LabeledItem> oracle_label(const Oracle& oracle, std::span<const std::size_t> indices) {
  std::vector<LabeledItem> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back({i, oracle.label(i)});
  return out;
}

inline std::vector<PseudoLabeled> pseudo_label(const EffectiveEmbeddings& eff, const EmbeddingDataset& ds,
                                               std::span<const std::size_t> indices, std::size_t workers = 1) {
  const auto guesses = predict_labels(eff, ds, indices, workers);
  std::vector<PseudoLabeled> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = {indices[i], guesses[i]};
  return out;
}

// ---------------------------------------------------------------------------
// Balance sampler

enum class WithinClassPick {
  Random,         // uniform among the class's remaining candidates
  StrategyOrder,  // earliest remaining candidate in the strategy's ranking
};

struct BalanceResult {
  std::vector<std::size_t> query;
  // Picks where the globally least-represented class had no candidates left
  // and the next-smallest class with candidates was used instead.
  std::size_t fallbacks = 0;
};

// Builds the query one item at a time from the class with the fewest
// (estimated) labels, counting each pick's pseudo-label immediately.
// Ties between classes resolve to the lowest class index. Picked candidates
// are removed, so the query never repeats an index.
inline BalanceResult balance_sampler(std::vector<std::size_t>& estimated_counts,
                                     std::span<const PseudoLabeled> pseudo_pool, std::size_t n, Rng& rng,
                                     WithinClassPick pick = WithinClassPick::Random) {
  detail::check_budget(n, pseudo_pool.size());
  const std::size_t k_count = estimated_counts.size();
  std::vector<std::vector<std::size_t>> candidates(k_count);
  for (const auto& item : pseudo_pool) {
    require(item.label < k_count, ErrorCode::IndexOutOfRange, "pseudo-label out of range");
    candidates[item.label].push_back(item.index);
  }

  BalanceResult out;
  out.query.reserve(n);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t global = static_cast<std::size_t>(
        std::min_element(estimated_counts.begin(), estimated_counts.end()) - estimated_counts.begin());
    std::size_t cls = k_count;
    for (std::size_t k = 0; k < k_count; ++k) {
      if (candidates[k].empty()) continue;
      if (cls == k_count || estimated_counts[k] < estimated_counts[cls]) cls = k;
    }
    require(cls != k_count, ErrorCode::BudgetExceedsPool, "balance sampler ran out of candidates");
    if (cls != global) ++out.fallbacks;

    auto& bucket = candidates[cls];
    const std::size_t slot = pick == WithinClassPick::Random ? rng.uniform_index(bucket.size()) : 0;
    out.query.push_back(bucket[slot]);
    bucket.erase(bucket.begin() + static_cast<std::ptrdiff_t>(slot));
    ++estimated_counts[cls];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  StrategyKind strategy = StrategyKind::Random;
  bool use_pcb = false;
  Aggregation aggregation = Aggregation::None;
  double gamma = 0.1;
  std::size_t rounds = 8;
  std::optional<std::size_t> budget;  // empty = one label per class per round
  double tau = kDefaultTemperature;
  TrainConfig train;
  std::uint64_t seed = 0;
  WithinClassPick within_class = WithinClassPick::Random;
  std::string train_data;
  std::string test_data;
};

inline void validate(const ExperimentConfig& cfg) {
  require(cfg.gamma > 0.0 && cfg.gamma <= 1.0, ErrorCode::ConfigInvalid, "gamma must be in (0,1]");
  require(cfg.rounds >= 1, ErrorCode::ConfigInvalid, "rounds must be >= 1");
  require(!cfg.budget || *cfg.budget >= 1, ErrorCode::ConfigInvalid, "budget must be >= 1");
  require(cfg.tau > 0.0 && std::isfinite(cfg.tau), ErrorCode::ConfigInvalid, "tau must be positive");
  validate(cfg.train);
}

inline std::size_t resolve_budget(const ExperimentConfig& cfg, std::size_t num_classes) {
  return cfg.budget.value_or(num_classes);
}

inline std::size_t informative_subset_size(double gamma, std::size_t unlabeled) {
  return static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(unlabeled)));
}

// ---------------------------------------------------------------------------
// Rounds

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> selected;  // query order
  std::vector<std::size_t> counts;    // true per-class labels after this round
  double imbalance = 0.0;
  double accuracy = 0.0;
  std::size_t fallbacks = 0;
  std::size_t informative_subset = 0;  // |P|, 0 when not used
  std::optional<double> pseudo_label_accuracy;
  double loss_initial = 0.0;
  double loss_final = 0.0;
  double wall_seconds = 0.0;  // not part of the reproducible output
};

struct ExperimentResult {
  ExperimentConfig config;
  std::size_t budget = 0;
  double zero_shot_accuracy = 0.0;
  std::vector<RoundReport> rounds;
  PromptModel final_model;
};

struct ExperimentContext {
  const EmbeddingDataset& train;
  const ClassTextBank& bank;
  const EmbeddingDataset& test;
  ExperimentConfig config;
  std::size_t budget;
  std::size_t workers = 1;
};

struct RoundOutcome {
  PoolState state;
  PromptModel model;
  RoundReport report;
};

// Rounds to single precision so the in-memory model matches its saved form.
inline void quantize_to_f32(PromptModel& model) {
  for (auto& w : model.residuals.data()) w = static_cast<double>(static_cast<float>(w));
}

inline std::uint64_t training_seed(std::uint64_t experiment_seed, std::size_t round) {
  return Rng::derive(experiment_seed, 1, round);
}

inline std::vector<std::size_t> run_strategy(const ExperimentContext& ctx, const PoolState& state,
                                             const EffectiveEmbeddings& eff, std::size_t n, Rng& rng) {
  switch (ctx.config.strategy) {
    case StrategyKind::Random: return select_random(state.unlabeled, n, rng);
    case StrategyKind::Entropy: return select_entropy(eff, ctx.train, state.unlabeled, n, ctx.workers);
    case StrategyKind::Coreset:
      return select_coreset(ctx.train.items, state.labeled_indices(), state.unlabeled, n, ctx.workers);
    case StrategyKind::Badge: return select_badge(eff, ctx.train, state.unlabeled, n, rng, ctx.workers);
  }
  return {};
}

// One select -> label -> retrain cycle. `current` is the model trained in the
// previous round; the first round ignores it and samples uniformly.
inline RoundOutcome run_round(const ExperimentContext& ctx, const PoolState& state, const PromptModel& current,
                              Rng& rng) {
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n = ctx.budget;
  detail::check_budget(n, state.unlabeled.size());

  RoundOutcome out{state, current, {}};
  RoundReport& report = out.report;
  report.round = state.round + 1;

  if (state.round == 0) {
    report.selected = select_random(state.unlabeled, n, rng);
  } else {
    const auto eff = effective_text_embeddings(current, ctx.bank);
    if (ctx.config.use_pcb) {
      const std::size_t subset = informative_subset_size(ctx.config.gamma, state.unlabeled.size());
      const auto informative = run_strategy(ctx, state, eff, subset, rng);
      const auto guesses = pseudo_label(eff, ctx.train, informative, ctx.workers);
      std::size_t right = 0;
      for (const auto& g : guesses) right += g.label == ctx.train.labels[g.index] ? 1 : 0;
      report.informative_subset = subset;
      report.pseudo_label_accuracy = static_cast<double>(right) / static_cast<double>(guesses.size());

      auto estimated = state.estimated_counts;
      auto balanced = balance_sampler(estimated, guesses, n, rng, ctx.config.within_class);
      report.selected = std::move(balanced.query);
      report.fallbacks = balanced.fallbacks;
    } else {
      report.selected = run_strategy(ctx, state, eff, n, rng);
    }
  }

  const Oracle oracle(ctx.train.labels);
  for (const auto& item : oracle_label(oracle, report.selected)) out.state.labeled.push_back(item);
  std::vector<std::size_t> picked = report.selected;
  std::sort(picked.begin(), picked.end());
  std::vector<std::size_t> remaining;
  remaining.reserve(state.unlabeled.size() - picked.size());
  std::set_difference(state.unlabeled.begin(), state.unlabeled.end(), picked.begin(), picked.end(),
                      std::back_inserter(remaining));
  out.state.unlabeled = std::move(remaining);

  // Between rounds the estimate is exact: every labeled item has its oracle label.
  std::vector<ClassId> truth;
  truth.reserve(out.state.labeled.size());
  for (const auto& item : out.state.labeled) truth.push_back(item.label);
  out.state.estimated_counts = class_counts<ClassId>(truth, ctx.train.num_classes());
  out.state.round = report.round;

  std::vector<LabeledExample> examples;
  examples.reserve(out.state.labeled.size());
  for (const auto& item : out.state.labeled) examples.push_back({ctx.train.item(item.index), item.label});
  TrainConfig tc = ctx.config.train;
  tc.seed = training_seed(ctx.config.seed, report.round);
  auto trained = train(ctx.bank, examples, tc, ctx.config.aggregation, ctx.config.tau);
  quantize_to_f32(trained.model);
  out.model = std::move(trained.model);

  report.counts = out.state.estimated_counts;
  report.imbalance = imbalance_variance(report.counts);
  report.accuracy = evaluate(out.model, ctx.bank, ctx.test, ctx.workers);
  report.loss_initial = trained.loss_trace.front();
  report.loss_final = trained.loss_trace.back();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

inline void validate_inputs(const EmbeddingDataset& train, const ClassTextBank& bank, const EmbeddingDataset& test,
                            const ExperimentConfig& cfg) {
  validate(cfg);
  require(train.dim == bank.dim && test.dim == bank.dim, ErrorCode::ConfigInvalid,
          "train, test and text bank dims disagree");
  require(train.num_classes() == bank.num_classes() && test.num_classes() == bank.num_classes(),
          ErrorCode::ConfigInvalid, "train, test and text bank class counts disagree");
  if (cfg.aggregation == Aggregation::None)
    for (const auto& group : bank.per_class)
      require(group.rows() == 1, ErrorCode::ConfigInvalid,
              "aggregation 'none' needs one description per class; use 'as' or 'ae'");
  const std::size_t budget = resolve_budget(cfg, bank.num_classes());
  require(cfg.rounds * budget <= train.size(), ErrorCode::ConfigInvalid,
          "rounds * budget (" + std::to_string(cfg.rounds * budget) + ") exceeds the training pool (" +
              std::to_string(train.size()) + ")");
}

inline ExperimentResult run_experiment(const EmbeddingDataset& train, const ClassTextBank& bank,
                                       const EmbeddingDataset& test, const ExperimentConfig& cfg,
                                       std::size_t workers = 1) {
  validate_inputs(train, bank, test, cfg);
  const ExperimentContext ctx{train, bank, test, cfg, resolve_budget(cfg, bank.num_classes()), workers};

  ExperimentResult result;
  result.config = cfg;
  result.budget = ctx.budget;
  PromptModel model = PromptModel::zero(bank.num_classes(), bank.dim, cfg.tau, cfg.aggregation);
  result.zero_shot_accuracy = evaluate(model, bank, test, workers);

  Rng rng(Rng::derive(cfg.seed, 0));
  PoolState state = PoolState::initial(train.size(), train.num_classes());
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    auto outcome = run_round(ctx, state, model, rng);
    state = std::move(outcome.state);
    model = std::move(outcome.model);
    result.rounds.push_back(std::move(outcome.report));
  }
  result.final_model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Reporting helpers

inline CurveTable curve_table(const ExperimentResult& result) {
  CurveTable table;
  for (const auto& r : result.rounds)
    table.push_back({r.round, r.accuracy, r.imbalance, r.counts, r.fallbacks, r.wall_seconds});
  return table;
}

inline MetricTable metric_table(const ExperimentResult& result) {
  MetricTable t{{"accuracy", "imbalance", "fallbacks"}, Matrix<double>(result.rounds.size(), 3)};
  for (std::size_t r = 0; r < result.rounds.size(); ++r) {
    t.values(r, 0) = result.rounds[r].accuracy;
    t.values(r, 1) = result.rounds[r].imbalance;
    t.values(r, 2) = static_cast<double>(result.rounds[r].fallbacks);
  }
  return t;
}

inline AggregateTable aggregate_seeds(std::span<const ExperimentResult> results) {
  std::vector<MetricTable> tables;
  tables.reserve(results.size());
  for (const auto& r : results) tables.push_back(metric_table(r));
  return aggregate_seeds(std::span<const MetricTable>(tables));
}

}  // namespace pcbal
