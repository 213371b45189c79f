// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>

#include "pcbal/cli.hpp"
#include "pcbal/pcbal.hpp"
#include "test_support.hpp"

namespace {

using namespace pcbal;
using namespace pcbal::testing;

struct Verdict {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Random text bank plus a random item set, δ drawn per class from [1, max_delta].
struct RandomInstance {
  ClassTextBank bank;
  EmbeddingDataset ds;
};

RandomInstance random_instance(Rng& rng, std::size_t k, std::size_t dim, std::size_t items, std::size_t max_delta) {
  std::vector<std::size_t> deltas(k);
  for (auto& d : deltas) d = 1 + rng.uniform_index(max_delta);
  auto bank = random_bank(deltas, dim, rng);
  std::vector<std::vector<float>> rows;
  std::vector<ClassId> labels;
  for (std::size_t i = 0; i < items; ++i) {
    rows.push_back(random_unit(dim, rng));
    labels.push_back(static_cast<ClassId>(rng.uniform_index(k)));
  }
  return {std::move(bank), dataset_from_rows(rows, labels, k)};
}

PromptModel random_model(Rng& rng, std::size_t k, std::size_t dim, double tau, Aggregation agg, double scale) {
  auto model = PromptModel::zero(k, dim, tau, agg);
  for (auto& v : model.residuals.data()) v = scale * rng.gaussian();
  return model;
}

Verdict entropy_oracle() {
  Rng rng(101);
  const auto start = Clock::now();
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(19);
    const std::size_t dim = 4 + rng.uniform_index(29);
    const std::size_t pool_size = 1 + rng.uniform_index(1000);
    const auto agg = static_cast<Aggregation>(rng.uniform_index(3));
    const auto inst = random_instance(rng, k, dim, pool_size, agg == Aggregation::None ? 1 : 3);
    const double tau = std::vector<double>{0.01, 0.05, 0.5}[rng.uniform_index(3)];
    const auto eff = effective_text_embeddings(random_model(rng, k, dim, tau, agg, 0.05), inst.bank);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < pool_size; ++i)
      if (rng.uniform() < 0.8) pool.push_back(i);
    if (pool.empty()) pool.push_back(0);
    const std::size_t n = rng.uniform_index(pool.size() + 1);

    std::vector<std::pair<double, std::size_t>> scored;
    for (auto i : pool) {
      double h = 0.0;
      for (double p : predict_proba(eff, inst.ds.item(i)))
        if (p > 0.0) h -= p * std::log(p);
      scored.push_back({-h, i});
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::size_t> expected(n);
    for (std::size_t i = 0; i < n; ++i) expected[i] = scored[i].second;
    if (select_entropy(eff, inst.ds, pool, n) != expected) ++mismatches;
  }
  const double elapsed = seconds_since(start);
  return {mismatches == 0 && elapsed < 5.0, fmt("%d/50 mismatches, %.2f s (limit 5 s)", mismatches, elapsed)};
}

Verdict coreset_oracle() {
  Rng rng(102);
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 2 + rng.uniform_index(15);
    const std::size_t total = 2 + rng.uniform_index(199);
    Matrix<float> items(total, dim);
    for (std::size_t i = 0; i < total; ++i) {
      const auto u = random_unit(dim, rng);
      std::copy(u.begin(), u.end(), items.row(i).begin());
    }
    std::vector<std::size_t> labeled, pool;
    for (std::size_t i = 0; i < total; ++i) (rng.uniform() < 0.2 ? labeled : pool).push_back(i);
    if (pool.empty()) {
      pool.push_back(labeled.back());
      labeled.pop_back();
    }
    const std::size_t n = 1 + rng.uniform_index(std::min<std::size_t>(pool.size(), 30));
    const auto expected = brute_force_coreset(items, labeled, pool, n);
    if (select_coreset(items, labeled, pool, n) != expected) ++mismatches;
  }
  return {mismatches == 0, fmt("%d/50 mismatched index sequences", mismatches)};
}

Verdict gradients() {
  Rng rng(103);
  double worst_loss = 0.0;
  double worst_badge = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(4);
    const std::size_t dim = 2 + rng.uniform_index(7);
    const auto agg = static_cast<Aggregation>(rng.uniform_index(3));
    const std::size_t batch_size = 1 + rng.uniform_index(6);
    const auto inst = random_instance(rng, k, dim, batch_size, agg == Aggregation::None ? 1 : 3);
    const double tau = 0.1 + rng.uniform();
    const auto model = random_model(rng, k, dim, tau, agg, 0.3);
    const auto batch = examples_of(inst.ds);

    const auto analytic = loss_gradient(model, inst.bank, batch);
    const auto numeric = finite_difference_gradient(model, inst.bank, batch);
    worst_loss = std::max(worst_loss, relative_error(analytic.data(), numeric.data()));

    // BADGE: the embedding is the cross-entropy gradient of a linear head
    // whose logits reproduce the model's probabilities, W = log(p) x^T.
    const auto eff = effective_text_embeddings(model, inst.bank);
    const auto x = inst.ds.item(0);
    const auto p = predict_proba(eff, x);
    const auto y = argmax(p);
    const auto embedding = gradient_embedding(eff, x, y);
    std::vector<double> w(k * dim);
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t d = 0; d < dim; ++d) w[c * dim + d] = std::log(p[c]) * static_cast<double>(x[d]);
    auto head_loss = [&](const std::vector<double>& weights) {
      std::vector<double> z(k, 0.0);
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t d = 0; d < dim; ++d) z[c] += weights[c * dim + d] * static_cast<double>(x[d]);
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - m);
      return -(z[y] - m - std::log(sum));
    };
    std::vector<double> fd(k * dim);
    const double h = 1e-4;
    for (std::size_t j = 0; j < w.size(); ++j) {
      auto up = w, down = w;
      up[j] += h;
      down[j] -= h;
      fd[j] = (head_loss(up) - head_loss(down)) / (2 * h);
    }
    worst_badge = std::max(worst_badge, relative_error(embedding, fd));
  }
  return {worst_loss <= 1e-4 && worst_badge <= 1e-4,
          fmt("max rel. error: loss %.2e, badge %.2e (limit 1e-4)", worst_loss, worst_badge)};
}

Verdict aggregation_degeneracy() {
  Rng rng(104);
  double worst_gap = 0.0;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(10);
    const std::size_t dim = 2 + rng.uniform_index(16);
    const double tau = std::vector<double>{0.01, 0.1, 1.0}[rng.uniform_index(3)];
    const auto single = random_instance(rng, k, dim, 1, 1);
    const auto x = single.ds.item(0);
    const auto residuals = random_model(rng, k, dim, tau, Aggregation::None, 0.1).residuals;
    std::vector<std::vector<double>> outs;
    for (auto agg : {Aggregation::None, Aggregation::AS, Aggregation::AE}) {
      PromptModel m{residuals, tau, agg};
      outs.push_back(predict_proba(m, single.bank, x));
    }
    for (std::size_t j = 0; j < k; ++j) {
      worst_gap = std::max({worst_gap, std::abs(outs[0][j] - outs[1][j]), std::abs(outs[0][j] - outs[2][j])});
    }
    // Sums for multi-description banks as well.
    const auto multi = random_instance(rng, k, dim, 1, 3);
    for (auto agg : {Aggregation::AS, Aggregation::AE})
      outs.push_back(predict_proba(PromptModel{residuals, tau, agg}, multi.bank, multi.ds.item(0)));
    for (const auto& p : outs) {
      double s = 0.0;
      for (double v : p) s += v;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  return {worst_gap <= 1e-9 && worst_sum <= 1e-6,
          fmt("max |AS|AE - softmax| %.2e (limit 1e-9), max |sum - 1| %.2e (limit 1e-6)", worst_gap, worst_sum)};
}

Verdict balance_exactness() {
  Rng rng(105);
  std::size_t worst_spread = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(19);
    std::vector<std::size_t> counts(k);
    for (auto& c : counts) c = rng.uniform_index(5);
    const std::size_t top = *std::max_element(counts.begin(), counts.end());
    std::size_t deficit = 0;
    for (auto c : counts) deficit += top - c;
    const std::size_t n = deficit + rng.uniform_index(3 * k);
    std::vector<PseudoLabeled> pool;
    std::size_t index = 0;
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t i = 0; i < n + rng.uniform_index(5); ++i) pool.push_back({index++, static_cast<ClassId>(c)});
    Rng pick(Rng::derive(105, 1, static_cast<std::uint64_t>(trial)));
    auto after = counts;
    balance_sampler(after, pool, n, pick);
    const auto [lo, hi] = std::minmax_element(after.begin(), after.end());
    worst_spread = std::max(worst_spread, *hi - *lo);
  }
  std::vector<std::size_t> trace{2, 0, 1};
  const std::vector<PseudoLabeled> trace_pool{{0, 0}, {1, 1}, {2, 1}, {3, 2}, {4, 2}, {5, 1}};
  Rng trace_rng(5);
  balance_sampler(trace, trace_pool, 3, trace_rng);
  const bool trace_ok = trace == std::vector<std::size_t>{2, 2, 2};
  return {worst_spread <= 1 && trace_ok,
          fmt("max spread %zu over 20 trials (limit 1), hand trace %s", worst_spread, trace_ok ? "[2,2,2]" : "wrong")};
}

Verdict directional_fixture() {
  const auto start = Clock::now();
  struct Variant {
    StrategyKind strategy;
    bool pcb;
  };
  const std::vector<Variant> variants{{StrategyKind::Entropy, false},
                                      {StrategyKind::Entropy, true},
                                      {StrategyKind::Coreset, false},
                                      {StrategyKind::Coreset, true}};
  std::vector<double> final_imbalance(variants.size(), 0.0);
  std::vector<double> final_acc(variants.size(), 0.0);
  std::vector<double> first_acc(variants.size(), 0.0);
  std::size_t regressions = 0;  // PCB runs whose final accuracy is below round 1
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  for (auto seed : seeds) {
    const auto data = generate_synthetic(fixture_spec(seed));
    for (std::size_t v = 0; v < variants.size(); ++v) {
      ExperimentConfig cfg;
      cfg.strategy = variants[v].strategy;
      cfg.use_pcb = variants[v].pcb;
      cfg.rounds = 8;
      cfg.gamma = 0.1;
      cfg.seed = seed;
      const auto result = run_experiment(data.train, data.bank, data.test, cfg, 0);
      final_imbalance[v] += result.rounds.back().imbalance / seeds.size();
      final_acc[v] += result.rounds.back().accuracy / seeds.size();
      first_acc[v] += result.rounds.front().accuracy / seeds.size();
      if (variants[v].pcb && result.rounds.back().accuracy < result.rounds.front().accuracy) ++regressions;
    }
  }
  const double elapsed = seconds_since(start);
  const bool entropy_ok = final_imbalance[1] < final_imbalance[0];
  const bool coreset_ok = final_imbalance[3] < final_imbalance[2];
  const bool acc_ok = regressions == 0;
  return {entropy_ok && coreset_ok && acc_ok && elapsed < 60.0,
          fmt("imbalance entropy %.1f -> +pcb %.1f, coreset %.1f -> +pcb %.1f; "
              "acc round1->final entropy+pcb %.4f->%.4f, coreset+pcb %.4f->%.4f (means), %zu/6 runs regress; %.1f s (limit 60 s)",
              final_imbalance[0], final_imbalance[1], final_imbalance[2], final_imbalance[3], first_acc[1],
              final_acc[1], first_acc[3], final_acc[3], regressions, elapsed)};
}

Verdict training_sanity() {
  auto spec = noiseless_spec(10, 16, 5, 13);
  spec.noise_sigma_text = 0.5;
  const auto data = generate_synthetic(spec);
  const auto batch = examples_of(data.train);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 1;
  const auto outcome = train(data.bank, batch, cfg, Aggregation::None, kDefaultTemperature);
  std::size_t increases = 0;
  for (std::size_t i = 1; i < outcome.loss_trace.size(); ++i)
    if (outcome.loss_trace[i] > outcome.loss_trace[i - 1]) ++increases;
  const double start_acc = evaluate(PromptModel::zero(10, 16, kDefaultTemperature, Aggregation::None), data.bank, data.train);
  const double acc = evaluate(outcome.model, data.bank, data.train);
  return {acc == 1.0 && increases == 0,
          fmt("train accuracy %.4f -> %.4f, loss %.4f -> %.4f, %zu increases", start_acc, acc,
              outcome.loss_trace.front(), outcome.loss_trace.back(), increases)};
}

Verdict determinism() {
  TempDir tmp;
  const auto data = generate_synthetic(fixture_spec(7));
  save_dataset(data.train, data.bank, tmp / "train");
  save_dataset(data.test, data.bank, tmp / "test");
  nlohmann::json cfg{{"strategy", "badge"},     {"use_pcb", true},
                     {"aggregation", "none"},   {"gamma", 0.1},
                     {"rounds", 3},             {"budget", "auto"},
                     {"seed", 11},              {"train_data", (tmp / "train").string()},
                     {"test_data", (tmp / "test").string()},
                     {"train", {{"epochs", 50}}}};
  std::ofstream(tmp / "cfg.json") << cfg.dump(2);
  const std::size_t max_threads = std::max<std::size_t>(std::thread::hardware_concurrency(), 4);
  auto run = [&](const std::string& out, std::size_t threads) {
    std::ostringstream o, e;
    return cli::run_cli({"run", "--config", (tmp / "cfg.json").string(), "--out", (tmp / out).string(), "--threads",
                         std::to_string(threads)},
                        o, e);
  };
  const int c1 = run("a", 1);
  const int c2 = run("b", 1);
  const int c3 = run("c", max_threads);
  const auto a = read_file(tmp / "a" / "results.json");
  const bool repeat_ok = c1 == 0 && c2 == 0 && !a.empty() && a == read_file(tmp / "b" / "results.json");
  const bool threads_ok = c3 == 0 && a == read_file(tmp / "c" / "results.json");
  return {repeat_ok && threads_ok, fmt("rerun %s, 1 vs %zu threads %s", repeat_ok ? "identical" : "DIFFERS",
                                       max_threads, threads_ok ? "identical" : "DIFFERS")};
}

Verdict kmeanspp_law() {
  Rng data(109);
  const std::size_t count = 100;
  Matrix<double> storage(count, 5);
  for (auto& v : storage.data()) v = data.gaussian();
  const auto& vectors = storage;
  // P(second = j) = (1/M) sum_i d2(i,j) / sum_l d2(i,l), first pick uniform.
  std::vector<double> expected(count, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> d2(count);
    double total = 0.0;
    for (std::size_t j = 0; j < count; ++j) total += (d2[j] = squared_distance(vectors.row(i), vectors.row(j)));
    for (std::size_t j = 0; j < count; ++j) expected[j] += d2[j] / total / static_cast<double>(count);
  }
  const int trials = 10000;
  std::vector<double> seen(count, 0.0);
  for (int t = 0; t < trials; ++t) {
    Rng rng(Rng::derive(109, 2, static_cast<std::uint64_t>(t)));
    seen[kmeanspp_select(vectors, 2, rng)[1]] += 1.0;
  }
  std::size_t outside = 0;
  double worst_z = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    const double mean = trials * expected[j];
    const double sigma = std::sqrt(trials * expected[j] * (1.0 - expected[j]));
    const double z = std::abs(seen[j] - mean) / sigma;
    worst_z = std::max(worst_z, z);
    if (z > 3.0) ++outside;
  }
  return {outside == 0, fmt("%zu/100 categories outside 3 sigma, worst |z| = %.2f", outside, worst_z)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"entropy-oracle", entropy_oracle},
      {"coreset-oracle", coreset_oracle},
      {"gradient-correctness", gradients},
      {"aggregation-degeneracy", aggregation_degeneracy},
      {"balance-exactness", balance_exactness},
      {"directional-fixture", directional_fixture},
      {"training-sanity", training_sanity},
      {"determinism", determinism},
      {"kmeanspp-law", kmeanspp_law},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("%s  %-24s %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
