#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcbal/error.hpp"
#include "pcbal/matrix.hpp"

namespace pcbal {

template <typename Label>
std::vector<std::size_t> class_counts(std::span<const Label> labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (Label y : labels) {
    require(static_cast<std::size_t>(y) < num_classes, ErrorCode::IndexOutOfRange,
            "class index " + std::to_string(y) + " out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

// Population variance of per-class counts (divisor K).
inline double imbalance_variance(std::span<const std::size_t> counts) {
  if (counts.empty()) return 0.0;
  const double k = static_cast<double>(counts.size());
  double mean = 0.0;
  for (auto c : counts) mean += static_cast<double>(c);
  mean /= k;
  double var = 0.0;
  for (auto c : counts) {
    const double d = static_cast<double>(c) - mean;
    var += d * d;
  }
  return var / k;
}

template <typename Label>
double accuracy(std::span<const Label> predictions, std::span<const Label> truths) {
  require(predictions.size() == truths.size(), ErrorCode::LengthMismatch, "prediction and truth lengths differ");
  require(!predictions.empty(), ErrorCode::EmptyInput, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == truths[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Seed aggregation

// One experiment's per-round metrics: rows are rounds, columns are metrics.
struct MetricTable {
  std::vector<std::string> metrics;
  Matrix<double> values;
};

struct AggregateTable {
  std::vector<std::string> metrics;
  std::size_t seeds = 0;
  Matrix<double> mean;
  Matrix<double> std;  // population standard deviation across seeds
};

inline AggregateTable aggregate_seeds(std::span<const MetricTable> results) {
  require(!results.empty(), ErrorCode::EmptyInput, "no results to aggregate");
  const auto& first = results.front();
  for (const auto& r : results)
    require(r.metrics == first.metrics && r.values.rows() == first.values.rows() &&
                r.values.cols() == first.values.cols(),
            ErrorCode::ShapeMismatch, "results disagree on rounds or metrics");

  const std::size_t rows = first.values.rows();
  const std::size_t cols = first.values.cols();
  const double n = static_cast<double>(results.size());
  AggregateTable out{first.metrics, results.size(), Matrix<double>(rows, cols), Matrix<double>(rows, cols)};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double sum = 0.0;
      for (const auto& res : results) sum += res.values(r, c);
      const double mean = sum / n;
      double var = 0.0;
      for (const auto& res : results) {
        const double d = res.values(r, c) - mean;
        var += d * d;
      }
      out.mean(r, c) = mean;
      out.std(r, c) = std::sqrt(var / n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curves

struct CurveRow {
  std::size_t round = 0;
  double accuracy = 0.0;
  double imbalance = 0.0;
  std::vector<std::size_t> counts;
  std::size_t fallbacks = 0;
  double wall_seconds = 0.0;
};

using CurveTable = std::vector<CurveRow>;

// Fixed column layout: round,accuracy,imbalance,fallbacks,counts. Wall time is
// left out so the file is reproducible.
inline std::string to_csv(const CurveTable& table) {
  // Shortest text that reads back to the same double.
  auto num = [](double v) {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
    return std::string(buf, end);
  };
  std::ostringstream os;
  os << "round,accuracy,imbalance,fallbacks,counts\n";
  for (const auto& row : table) {
    os << row.round << ',' << num(row.accuracy) << ',' << num(row.imbalance) << ',' << row.fallbacks << ',';
    for (std::size_t k = 0; k < row.counts.size(); ++k) os << (k ? ";" : "") << row.counts[k];
    os << '\n';
  }
  return os.str();
}

}  // namespace pcbal
