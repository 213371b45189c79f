#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "pcbal/pcbal.hpp"

namespace pcbal::testing {

// Directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pcbal_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<float> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> g(dim);
  for (auto& x : g) x = rng.gaussian();
  const auto u = l2_normalize(g);
  return {u.begin(), u.end()};
}

// Bank with delta_k descriptions for class k.
inline ClassTextBank random_bank(const std::vector<std::size_t>& deltas, std::size_t dim, Rng& rng) {
  ClassTextBank bank;
  bank.dim = dim;
  for (std::size_t d : deltas) {
    Matrix<float> group(d, dim);
    for (std::size_t i = 0; i < d; ++i) {
      const auto v = random_unit(dim, rng);
      std::copy(v.begin(), v.end(), group.row(i).begin());
    }
    bank.per_class.push_back(std::move(group));
  }
  return bank;
}

inline ClassTextBank bank_from_rows(const std::vector<std::vector<std::vector<float>>>& groups) {
  ClassTextBank bank;
  bank.dim = groups.front().front().size();
  for (const auto& g : groups) {
    Matrix<float> m(g.size(), bank.dim);
    for (std::size_t i = 0; i < g.size(); ++i) std::copy(g[i].begin(), g[i].end(), m.row(i).begin());
    bank.per_class.push_back(std::move(m));
  }
  return bank;
}

inline EmbeddingDataset dataset_from_rows(const std::vector<std::vector<float>>& rows,
                                          const std::vector<ClassId>& labels, std::size_t num_classes) {
  EmbeddingDataset ds;
  ds.dim = rows.front().size();
  ds.items = Matrix<float>(rows.size(), ds.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), ds.items.row(i).begin());
  ds.labels = labels;
  for (std::size_t k = 0; k < num_classes; ++k) ds.class_names.push_back("c" + std::to_string(k));
  return ds;
}

inline SynthSpec noiseless_spec(std::size_t classes, std::size_t dim, std::size_t per_class, std::uint64_t seed) {
  SynthSpec spec;
  spec.num_classes = classes;
  spec.dim = dim;
  spec.items_per_class.assign(classes, per_class);
  spec.test_per_class = per_class;
  spec.seed = seed;
  return spec;
}

// The desk-scale fixture: K=20, D=64, power-law train pool, noisy images.
inline SynthSpec fixture_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.num_classes = 20;
  spec.dim = 64;
  spec.items_per_class = power_law_counts(20, 200.0, 1.0);
  spec.noise_sigma_image = 0.6;
  spec.noise_sigma_text = 0.2;
  spec.descriptions_per_class = 1;
  spec.seed = seed;
  return spec;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline std::vector<LabeledExample> examples_of(const EmbeddingDataset& ds) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back({ds.item(i), ds.labels[i]});
  return out;
}

// Central finite differences of the mean loss with respect to every residual.
inline Matrix<double> finite_difference_gradient(PromptModel model, const ClassTextBank& bank,
                                                 std::span<const LabeledExample> batch, double h = 1e-4) {
  Matrix<double> g(model.num_classes(), model.dim());
  for (std::size_t j = 0; j < model.residuals.data().size(); ++j) {
    const double saved = model.residuals.data()[j];
    model.residuals.data()[j] = saved + h;
    const double up = mean_loss(model, bank, batch);
    model.residuals.data()[j] = saved - h;
    const double down = mean_loss(model, bank, batch);
    model.residuals.data()[j] = saved;
    g.data()[j] = (up - down) / (2.0 * h);
  }
  return g;
}

// max |a - b| relative to the largest magnitude in the reference.
inline double relative_error(std::span<const double> value, std::span<const double> reference) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    diff = std::max(diff, std::abs(value[i] - reference[i]));
    scale = std::max(scale, std::abs(reference[i]));
  }
  return diff / std::max(scale, 1e-12);
}

// Brute-force k-center greedy: recomputes every covering distance from
// scratch at each step.
inline std::vector<std::size_t> brute_force_coreset(const Matrix<float>& items, std::vector<std::size_t> covered,
                                                    const std::vector<std::size_t>& pool, std::size_t n) {
  std::vector<std::size_t> out;
  std::vector<bool> used(pool.size(), false);
  for (std::size_t step = 0; step < n; ++step) {
    double best_score = -1.0;
    std::size_t best = 0;
    bool found = false;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (used[i]) continue;
      double score = std::numeric_limits<double>::infinity();
      for (std::size_t c : covered) {
        double d = 0.0;
        for (std::size_t j = 0; j < items.cols(); ++j) {
          const double diff = static_cast<double>(items(pool[i], j)) - static_cast<double>(items(c, j));
          d += diff * diff;
        }
        score = std::min(score, d);
      }
      if (!found || score > best_score || (score == best_score && pool[i] < pool[best])) {
        best_score = score;
        best = i;
        found = true;
      }
    }
    used[best] = true;
    out.push_back(pool[best]);
    covered.push_back(pool[best]);
  }
  return out;
}

}  // namespace pcbal::testing
