#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcbal/dataset.hpp"
#include "pcbal/error.hpp"
#include "pcbal/matrix.hpp"
#include "pcbal/parallel.hpp"
#include "pcbal/random.hpp"

namespace pcbal {

// How multiple description embeddings per class are combined.
//   None: one description per class, plain cosine softmax.
//   AS:   average of the per-description softmax mass (average similarity).
//   AE:   softmax against the averaged description embedding.
enum class Aggregation { None, AS, AE };

inline std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::None: return "none";
    case Aggregation::AS: return "as";
    case Aggregation::AE: return "ae";
  }
  return "none";
}

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "none") return Aggregation::None;
  if (s == "as") return Aggregation::AS;
  if (s == "ae") return Aggregation::AE;
  fail(ErrorCode::ConfigInvalid, "aggregation must be one of none|as|ae, got '" + std::string(s) + "'");
}

inline constexpr double kDefaultTemperature = 0.01;

// Trainable state: one residual vector per class, added to each of that
// class's description embeddings before re-normalization. Stands in for
// learned context tokens that would otherwise pass through a text encoder.
struct PromptModel {
  Matrix<double> residuals;  // K x D
  double temperature = kDefaultTemperature;
  Aggregation aggregation = Aggregation::None;

  std::size_t num_classes() const noexcept { return residuals.rows(); }
  std::size_t dim() const noexcept { return residuals.cols(); }

  static PromptModel zero(std::size_t num_classes, std::size_t dim, double temperature, Aggregation aggregation) {
    require(temperature > 0.0, ErrorCode::ConfigInvalid, "temperature must be positive");
    return PromptModel{Matrix<double>(num_classes, dim, 0.0), temperature, aggregation};
  }

  friend bool operator==(const PromptModel&, const PromptModel&) = default;
};

enum class LrSchedule { CosineAnnealing, Constant };

struct TrainConfig {
  double learning_rate = 0.002;
  std::size_t epochs = 200;
  double init_std = 0.02;
  std::size_t batch_size = 0;  // 0 = full batch
  LrSchedule schedule = LrSchedule::CosineAnnealing;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  require(cfg.learning_rate > 0.0 && std::isfinite(cfg.learning_rate), ErrorCode::ConfigInvalid,
          "learning_rate must be positive");
  require(cfg.init_std >= 0.0, ErrorCode::ConfigInvalid, "init_std must be nonnegative");
}

// Learning rate for epoch t of T under the configured schedule.
inline double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.schedule == LrSchedule::Constant || cfg.epochs == 0) return cfg.learning_rate;
  const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Effective text embeddings

struct EffectiveEmbeddings {
  Aggregation aggregation = Aggregation::None;
  double temperature = kDefaultTemperature;
  std::size_t dim = 0;
  // e'_{k,i} = normalize(t_{k,i} + w_k) and the norm before normalization.
  std::vector<Matrix<double>> descriptions;
  std::vector<std::vector<double>> description_norms;
  // AE only: normalize(mean_i t_{k,i} + w_k).
  Matrix<double> averaged;
  std::vector<double> averaged_norms;

  std::size_t num_classes() const noexcept { return descriptions.size(); }
};

namespace detail {

inline void check_shapes(const PromptModel& model, const ClassTextBank& bank) {
  require(model.num_classes() == bank.num_classes(), ErrorCode::ShapeMismatch,
          "model has " + std::to_string(model.num_classes()) + " classes, text bank has " +
              std::to_string(bank.num_classes()));
  require(model.dim() == bank.dim, ErrorCode::DimMismatch, "model dim differs from text bank dim");
  require(model.temperature > 0.0, ErrorCode::ConfigInvalid, "temperature must be positive");
}

// Normalizes `v` in place and returns its previous norm.
inline double normalize_in_place(std::span<double> v) {
  const double norm = std::sqrt(dot(std::span<const double>(v), std::span<const double>(v)));
  require(norm >= 1e-12, ErrorCode::ZeroVector, "text embedding plus residual cancels to zero");
  for (auto& x : v) x /= norm;
  return norm;
}

}  // namespace detail

inline EffectiveEmbeddings effective_text_embeddings(const PromptModel& model, const ClassTextBank& bank) {
  detail::check_shapes(model, bank);
  const std::size_t dim = bank.dim;
  EffectiveEmbeddings eff;
  eff.aggregation = model.aggregation;
  eff.temperature = model.temperature;
  eff.dim = dim;
  for (std::size_t k = 0; k < bank.num_classes(); ++k) {
    const auto& group = bank.per_class[k];
    const auto w = model.residuals.row(k);
    Matrix<double> out(group.rows(), dim);
    std::vector<double> norms(group.rows());
    for (std::size_t i = 0; i < group.rows(); ++i) {
      auto row = out.row(i);
      for (std::size_t d = 0; d < dim; ++d) row[d] = static_cast<double>(group(i, d)) + w[d];
      norms[i] = detail::normalize_in_place(row);
    }
    eff.descriptions.push_back(std::move(out));
    eff.description_norms.push_back(std::move(norms));
  }
  if (model.aggregation == Aggregation::AE) {
    eff.averaged = Matrix<double>(bank.num_classes(), dim);
    eff.averaged_norms.resize(bank.num_classes());
    for (std::size_t k = 0; k < bank.num_classes(); ++k) {
      const auto& group = bank.per_class[k];
      auto row = eff.averaged.row(k);
      for (std::size_t d = 0; d < dim; ++d) {
        double mean = 0.0;
        for (std::size_t i = 0; i < group.rows(); ++i) mean += static_cast<double>(group(i, d));
        row[d] = mean / static_cast<double>(group.rows()) + model.residuals(k, d);
      }
      eff.averaged_norms[k] = detail::normalize_in_place(row);
    }
  }
  return eff;
}

// ---------------------------------------------------------------------------
// Prediction

namespace detail {

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  return m + std::log(sum);
}

inline void softmax_in_place(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : z) v /= sum;
}

// Everything the gradient needs from one forward pass.
struct Forward {
  std::vector<double> proba;                  // K
  std::vector<std::vector<double>> cosines;   // per class, per scored embedding
  std::vector<std::vector<double>> within;    // AS: softmax over a class's own descriptions
};

inline Forward forward(const EffectiveEmbeddings& eff, std::span<const float> x) {
  require(x.size() == eff.dim, ErrorCode::DimMismatch, "image embedding dim differs from text dim");
  require(is_unit(x), ErrorCode::NormViolation, "image embedding must be unit-norm");
  const std::size_t k_count = eff.num_classes();
  const double inv_tau = 1.0 / eff.temperature;
  Forward f;
  f.proba.resize(k_count);
  f.cosines.resize(k_count);

  switch (eff.aggregation) {
    case Aggregation::None:
      for (std::size_t k = 0; k < k_count; ++k) {
        require(eff.descriptions[k].rows() == 1, ErrorCode::AggregationMismatch,
                "aggregation 'none' needs exactly one description per class; class " + std::to_string(k) +
                    " has " + std::to_string(eff.descriptions[k].rows()));
        const double c = dot(x, eff.descriptions[k].row(0));
        f.cosines[k] = {c};
        f.proba[k] = c * inv_tau;
      }
      softmax_in_place(f.proba);
      break;
    case Aggregation::AE:
      for (std::size_t k = 0; k < k_count; ++k) {
        const double c = dot(x, eff.averaged.row(k));
        f.cosines[k] = {c};
        f.proba[k] = c * inv_tau;
      }
      softmax_in_place(f.proba);
      break;
    case Aggregation::AS:
      // With q the softmax over all (class, description) pairs, the averaged
      // class mass s_k = mean_i q_{k,i} renormalizes to
      // softmax_k(logsumexp_i z_{k,i} - log delta_k).
      f.within.resize(k_count);
      for (std::size_t k = 0; k < k_count; ++k) {
        const auto& group = eff.descriptions[k];
        auto& cos = f.cosines[k];
        cos.resize(group.rows());
        std::vector<double> z(group.rows());
        for (std::size_t i = 0; i < group.rows(); ++i) {
          cos[i] = dot(x, group.row(i));
          z[i] = cos[i] * inv_tau;
        }
        f.proba[k] = log_sum_exp(z) - std::log(static_cast<double>(group.rows()));
        softmax_in_place(z);
        f.within[k] = std::move(z);
      }
      softmax_in_place(f.proba);
      break;
  }
  return f;
}

}  // namespace detail

inline std::vector<double> predict_proba(const EffectiveEmbeddings& eff, std::span<const float> x) {
  return detail::forward(eff, x).proba;
}

inline std::vector<double> predict_proba(const PromptModel& model, const ClassTextBank& bank,
                                         std::span<const float> x) {
  return predict_proba(effective_text_embeddings(model, bank), x);
}

inline std::vector<double> zero_shot_proba(const ClassTextBank& bank, Aggregation aggregation, double temperature,
                                           std::span<const float> x) {
  return predict_proba(PromptModel::zero(bank.num_classes(), bank.dim, temperature, aggregation), bank, x);
}

// Index of the largest entry; ties resolve to the lowest index.
inline ClassId argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return static_cast<ClassId>(best);
}

inline std::vector<ClassId> predict_labels(const EffectiveEmbeddings& eff, const EmbeddingDataset& ds,
                                           std::span<const std::size_t> indices, std::size_t workers = 1) {
  std::vector<ClassId> out(indices.size());
  parallel_for(indices.size(), workers, [&](std::size_t i) { out[i] = argmax(predict_proba(eff, ds.item(indices[i]))); });
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradient

inline constexpr double kLogFloor = 1e-12;

inline double cross_entropy(std::span<const double> proba, ClassId y) {
  require(y < proba.size(), ErrorCode::IndexOutOfRange, "label index out of range");
  return -std::log(std::max(proba[y], kLogFloor));
}

struct LabeledExample {
  std::span<const float> embedding;
  ClassId label = 0;
};

struct LossAndGradient {
  double loss = 0.0;        // mean cross-entropy over the batch
  Matrix<double> gradient;  // K x D, mean over the batch
};

// Exact gradient of the mean cross-entropy with respect to the residuals,
// differentiating through the re-normalization of each effective embedding:
//   d cos(x, normalize(v)) / dv = (x - cos * u) / |v|.
inline LossAndGradient loss_and_gradient(const EffectiveEmbeddings& eff, std::span<const LabeledExample> batch) {
  require(!batch.empty(), ErrorCode::EmptyInput, "loss_gradient needs a non-empty batch");
  const std::size_t k_count = eff.num_classes();
  const std::size_t dim = eff.dim;
  const double inv_tau = 1.0 / eff.temperature;
  LossAndGradient out{0.0, Matrix<double>(k_count, dim, 0.0)};

  auto accumulate = [&](std::size_t k, double coeff, double cos, std::span<const double> unit, double norm,
                        std::span<const float> x) {
    if (coeff == 0.0) return;
    const double scale = coeff * inv_tau / norm;
    auto g = out.gradient.row(k);
    for (std::size_t d = 0; d < dim; ++d) g[d] += scale * (static_cast<double>(x[d]) - cos * unit[d]);
  };

  for (const auto& ex : batch) {
    require(ex.label < k_count, ErrorCode::IndexOutOfRange, "label index out of range");
    const auto f = detail::forward(eff, ex.embedding);
    out.loss += cross_entropy(f.proba, ex.label);
    for (std::size_t k = 0; k < k_count; ++k) {
      const double target = k == ex.label ? 1.0 : 0.0;
      switch (eff.aggregation) {
        case Aggregation::None:
          accumulate(k, f.proba[k] - target, f.cosines[k][0], eff.descriptions[k].row(0),
                     eff.description_norms[k][0], ex.embedding);
          break;
        case Aggregation::AE:
          accumulate(k, f.proba[k] - target, f.cosines[k][0], eff.averaged.row(k), eff.averaged_norms[k],
                     ex.embedding);
          break;
        case Aggregation::AS:
          // dL/dz_{k,i} = p_k r_{k,i} - [k == y] r_{y,i}
          for (std::size_t i = 0; i < f.within[k].size(); ++i) {
            const double coeff = (f.proba[k] - target) * f.within[k][i];
            accumulate(k, coeff, f.cosines[k][i], eff.descriptions[k].row(i), eff.description_norms[k][i],
                       ex.embedding);
          }
          break;
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv_n;
  for (auto& v : out.gradient.data()) v *= inv_n;
  return out;
}

inline Matrix<double> loss_gradient(const PromptModel& model, const ClassTextBank& bank,
                                    std::span<const LabeledExample> batch) {
  return loss_and_gradient(effective_text_embeddings(model, bank), batch).gradient;
}

inline double mean_loss(const PromptModel& model, const ClassTextBank& bank, std::span<const LabeledExample> batch) {
  require(!batch.empty(), ErrorCode::EmptyInput, "mean_loss needs a non-empty batch");
  const auto eff = effective_text_embeddings(model, bank);
  double total = 0.0;
  for (const auto& ex : batch) total += cross_entropy(predict_proba(eff, ex.embedding), ex.label);
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Training

struct TrainOutcome {
  PromptModel model;
  // Mean training loss at the start of every epoch, followed by the loss of
  // the returned model (epochs + 1 entries).
  std::vector<double> loss_trace;
};

inline TrainOutcome train(const ClassTextBank& bank, std::span<const LabeledExample> labeled, const TrainConfig& cfg,
                          Aggregation aggregation, double temperature) {
  validate(cfg);
  require(!labeled.empty(), ErrorCode::EmptyInput, "cannot train on an empty labeled set");
  for (const auto& ex : labeled)
    require(ex.label < bank.num_classes(), ErrorCode::IndexOutOfRange, "training label out of range");

  Rng rng(cfg.seed);
  TrainOutcome out{PromptModel::zero(bank.num_classes(), bank.dim, temperature, aggregation), {}};
  auto& residuals = out.model.residuals.data();
  for (auto& w : residuals) w = cfg.init_std * rng.gaussian();

  const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= labeled.size();
  std::vector<LabeledExample> shuffled(labeled.begin(), labeled.end());
  std::vector<LabeledExample> chunk;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    if (full_batch) {
      const auto step = loss_and_gradient(effective_text_embeddings(out.model, bank), labeled);
      out.loss_trace.push_back(step.loss);
      for (std::size_t j = 0; j < residuals.size(); ++j) residuals[j] -= lr * step.gradient.data()[j];
      continue;
    }
    out.loss_trace.push_back(mean_loss(out.model, bank, labeled));
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);
    for (std::size_t begin = 0; begin < shuffled.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(shuffled.size(), begin + cfg.batch_size);
      chunk.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(begin),
                   shuffled.begin() + static_cast<std::ptrdiff_t>(end));
      const auto step = loss_and_gradient(effective_text_embeddings(out.model, bank), chunk);
      for (std::size_t j = 0; j < residuals.size(); ++j) residuals[j] -= lr * step.gradient.data()[j];
    }
  }
  out.loss_trace.push_back(mean_loss(out.model, bank, labeled));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline double evaluate(const EffectiveEmbeddings& eff, const EmbeddingDataset& test, std::size_t workers = 1) {
  require(test.dim == eff.dim, ErrorCode::DimMismatch, "test set dim differs from model dim");
  require(test.size() > 0, ErrorCode::EmptyInput, "empty test set");
  std::vector<std::size_t> all(test.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto predicted = predict_labels(eff, test, all, workers);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == test.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline double evaluate(const PromptModel& model, const ClassTextBank& bank, const EmbeddingDataset& test,
                       std::size_t workers = 1) {
  return evaluate(effective_text_embeddings(model, bank), test, workers);
}

}  // namespace pcbal
