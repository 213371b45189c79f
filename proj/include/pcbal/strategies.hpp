#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcbal/dataset.hpp"
#include "pcbal/error.hpp"
#include "pcbal/matrix.hpp"
#include "pcbal/model.hpp"
#include "pcbal/parallel.hpp"
#include "pcbal/random.hpp"

namespace pcbal {

enum class StrategyKind { Random, Entropy, Coreset, Badge };

inline std::string_view to_string(StrategyKind s) {
  switch (s) {
    case StrategyKind::Random: return "random";
    case StrategyKind::Entropy: return "entropy";
    case StrategyKind::Coreset: return "coreset";
    case StrategyKind::Badge: return "badge";
  }
  return "random";
}

inline StrategyKind parse_strategy(std::string_view s) {
  if (s == "random") return StrategyKind::Random;
  if (s == "entropy") return StrategyKind::Entropy;
  if (s == "coreset") return StrategyKind::Coreset;
  if (s == "badge") return StrategyKind::Badge;
  fail(ErrorCode::ConfigInvalid, "strategy must be one of random|entropy|coreset|badge, got '" + std::string(s) + "'");
}

namespace detail {

inline void check_budget(std::size_t n, std::size_t pool) {
  require(n <= pool, ErrorCode::BudgetExceedsPool,
          "requested " + std::to_string(n) + " items from a pool of " + std::to_string(pool));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Random

inline std::vector<std::size_t> select_random(std::span<const std::size_t> pool, std::size_t n, Rng& rng) {
  detail::check_budget(n, pool.size());
  std::vector<std::size_t> items(pool.begin(), pool.end());
  // Partial Fisher-Yates: position i receives a uniform pick from the tail.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.uniform_index(items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(n);
  return items;
}

// ---------------------------------------------------------------------------
// Entropy

inline double entropy(std::span<const double> p) {
  double total = 0.0;
  for (double v : p) {
    require(v >= -1e-12 && v <= 1.0 + 1e-12, ErrorCode::NotADistribution, "probability outside [0,1]");
    total += v;
  }
  require(std::abs(total - 1.0) <= 1e-6, ErrorCode::NotADistribution, "probabilities do not sum to 1");
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// The n pool items with the highest predictive entropy, most uncertain first;
// equal entropies keep the lower dataset index first.
inline std::vector<std::size_t> select_entropy(const EffectiveEmbeddings& eff, const EmbeddingDataset& ds,
                                               std::span<const std::size_t> pool, std::size_t n,
                                               std::size_t workers = 1) {
  detail::check_budget(n, pool.size());
  std::vector<double> scores(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t i) { scores[i] = entropy(predict_proba(eff, ds.item(pool[i]))); });

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return pool[a] < pool[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), before);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pool[order[i]];
  return out;
}

// ---------------------------------------------------------------------------
// Coreset (k-center greedy)

// Repeatedly takes the pool item farthest (Euclidean) from everything already
// covered by `labeled` and earlier picks. With nothing covered yet, the
// lowest pool index starts the sequence.
inline std::vector<std::size_t> select_coreset(const Matrix<float>& items, std::span<const std::size_t> labeled,
                                               std::span<const std::size_t> pool, std::size_t n,
                                               std::size_t workers = 1) {
  detail::check_budget(n, pool.size());
  constexpr double kUncovered = std::numeric_limits<double>::infinity();
  std::vector<double> min_dist(pool.size(), kUncovered);
  std::vector<char> taken(pool.size(), 0);

  auto cover = [&](std::span<const float> center) {
    parallel_for(pool.size(), workers, [&](std::size_t i) {
      if (taken[i]) return;
      min_dist[i] = std::min(min_dist[i], squared_distance(items.row(pool[i]), center));
    });
  };
  for (std::size_t l : labeled) cover(items.row(l));

  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t best = pool.size();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (taken[i]) continue;
      if (best == pool.size() || min_dist[i] > min_dist[best] ||
          (min_dist[i] == min_dist[best] && pool[i] < pool[best]))
        best = i;
    }
    taken[best] = 1;
    out.push_back(pool[best]);
    cover(items.row(pool[best]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// BADGE

// Gradient of cross-entropy at pseudo-label `label` with respect to a linear
// output head W (logits = W x): (p - onehot(label)) outer x, flattened
// class-major into K * D entries.
inline std::vector<double> gradient_embedding_from_proba(std::span<const double> proba, std::span<const float> x,
                                                         ClassId label) {
  require(label < proba.size(), ErrorCode::IndexOutOfRange, "pseudo-label out of range");
  const std::size_t dim = x.size();
  std::vector<double> g(proba.size() * dim);
  for (std::size_t k = 0; k < proba.size(); ++k) {
    const double coeff = proba[k] - (k == label ? 1.0 : 0.0);
    for (std::size_t d = 0; d < dim; ++d) g[k * dim + d] = coeff * static_cast<double>(x[d]);
  }
  return g;
}

inline std::vector<double> gradient_embedding(const EffectiveEmbeddings& eff, std::span<const float> x,
                                              ClassId label) {
  require(label < eff.num_classes(), ErrorCode::IndexOutOfRange, "pseudo-label out of range");
  return gradient_embedding_from_proba(predict_proba(eff, x), x, label);
}

// k-means++ seeding over the rows of `vectors`; returns row indices in pick
// order. The first pick is uniform, later picks follow the D^2 law. When all
// remaining mass is zero the pick falls back to uniform over unselected rows.
inline std::vector<std::size_t> kmeanspp_select(const Matrix<double>& vectors, std::size_t n, Rng& rng,
                                                std::size_t workers = 1) {
  const std::size_t count = vectors.rows();
  detail::check_budget(n, count);
  std::vector<std::size_t> out;
  if (n == 0) return out;
  out.reserve(n);
  std::vector<char> chosen(count, 0);
  std::vector<double> d2(count, std::numeric_limits<double>::infinity());

  auto take = [&](std::size_t idx) {
    chosen[idx] = 1;
    out.push_back(idx);
    d2[idx] = 0.0;
    parallel_for(count, workers, [&](std::size_t i) {
      if (!chosen[i]) d2[i] = std::min(d2[i], squared_distance(vectors.row(i), vectors.row(idx)));
    });
  };

  auto uniform_unselected = [&] {
    std::size_t target = rng.uniform_index(count - out.size());
    for (std::size_t i = 0; i < count; ++i) {
      if (chosen[i]) continue;
      if (target == 0) return i;
      --target;
    }
    return count;  // unreachable
  };

  take(rng.uniform_index(count));
  while (out.size() < n) {
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i)
      if (!chosen[i]) total += d2[i];
    if (!(total > 0.0)) {
      take(uniform_unselected());
      continue;
    }
    const double target = rng.uniform() * total;
    double running = 0.0;
    std::size_t pick = count;
    std::size_t last_positive = count;
    for (std::size_t i = 0; i < count; ++i) {
      if (chosen[i] || d2[i] <= 0.0) continue;
      last_positive = i;
      running += d2[i];
      if (running > target) {
        pick = i;
        break;
      }
    }
    take(pick == count ? last_positive : pick);
  }
  return out;
}

// Pseudo-labels every pool item, embeds it in gradient space and seeds
// k-means++ there. Returns pool entries in pick order.
inline std::vector<std::size_t> select_badge(const EffectiveEmbeddings& eff, const EmbeddingDataset& ds,
                                             std::span<const std::size_t> pool, std::size_t n, Rng& rng,
                                             std::size_t workers = 1) {
  detail::check_budget(n, pool.size());
  const std::size_t width = eff.num_classes() * ds.dim;
  Matrix<double> embeddings(pool.size(), width);
  parallel_for(pool.size(), workers, [&](std::size_t i) {
    const auto x = ds.item(pool[i]);
    const auto p = predict_proba(eff, x);
    const auto g = gradient_embedding_from_proba(p, x, argmax(p));
    std::copy(g.begin(), g.end(), embeddings.row(i).begin());
  });
  const auto picks = kmeanspp_select(embeddings, n, rng, workers);
  std::vector<std::size_t> out(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) out[i] = pool[picks[i]];
  return out;
}

}  // namespace pcbal
