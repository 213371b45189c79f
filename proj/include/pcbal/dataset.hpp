#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcbal/error.hpp"
#include "pcbal/matrix.hpp"
#include "pcbal/random.hpp"

namespace pcbal {

using ClassId = std::uint32_t;

inline constexpr const char* kFormatTag = "pcbemb/1";
inline constexpr double kNormTolerance = 1e-3;

// ---------------------------------------------------------------------------
// Vector helpers

template <typename T>
std::vector<double> l2_normalize(std::span<const T> v) {
  double norm_sq = 0.0;
  for (T x : v) norm_sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(norm_sq);
  require(norm >= 1e-12, ErrorCode::ZeroVector, "cannot normalize a zero vector");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) / norm;
  return out;
}

inline std::vector<double> l2_normalize(const std::vector<double>& v) {
  return l2_normalize(std::span<const double>(v));
}

template <typename T>
double l2_norm(std::span<const T> v) {
  return std::sqrt(dot(v, v));
}

template <typename T>
bool is_unit(std::span<const T> v, double tolerance = kNormTolerance) {
  return std::abs(l2_norm(v) - 1.0) <= tolerance;
}

// Cosine similarity of two unit vectors, clamped to [-1, 1].
template <typename A, typename B>
double cosine(std::span<const A> u, std::span<const B> v) {
  require(u.size() == v.size(), ErrorCode::DimMismatch, "cosine: dimension mismatch");
  require(is_unit(u) && is_unit(v), ErrorCode::NormViolation, "cosine: inputs must be unit-norm");
  return std::clamp(dot(u, v), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Domain types

struct EmbeddingDataset {
  std::size_t dim = 0;
  Matrix<float> items;          // one unit-norm image embedding per row
  std::vector<ClassId> labels;  // ground truth, only the oracle reads these
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return items.rows(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::span<const float> item(std::size_t i) const noexcept { return items.row(i); }

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

// Per-class description embeddings; group k holds delta_k rows.
struct ClassTextBank {
  std::size_t dim = 0;
  std::vector<Matrix<float>> per_class;
  std::vector<std::vector<std::string>> description_texts;  // optional, may be empty

  std::size_t num_classes() const noexcept { return per_class.size(); }
  std::size_t descriptions(std::size_t k) const noexcept { return per_class[k].rows(); }
  std::size_t total_descriptions() const noexcept {
    std::size_t total = 0;
    for (const auto& g : per_class) total += g.rows();
    return total;
  }

  friend bool operator==(const ClassTextBank&, const ClassTextBank&) = default;
};

struct DatasetFiles {
  std::string images = "images.f32";
  std::string labels = "labels.u32";
  std::string text = "text.f32";
};

struct DatasetManifest {
  std::string format_tag = kFormatTag;
  std::size_t dim = 0;
  std::size_t num_items = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> descriptions_per_class;
  DatasetFiles files;
  std::vector<std::vector<std::string>> description_texts;
};

struct LoadOptions {
  bool renormalize = false;  // repair rows whose norm is off instead of rejecting them
};

// ---------------------------------------------------------------------------
// Validation

inline void validate(const EmbeddingDataset& ds) {
  const std::size_t k = ds.num_classes();
  require(ds.dim > 0, ErrorCode::ManifestInvalid, "dim must be positive");
  require(k >= 2, ErrorCode::ManifestInvalid, "need at least two classes");
  require(ds.size() >= 1, ErrorCode::ManifestInvalid, "dataset has no items");
  require(ds.items.cols() == ds.dim, ErrorCode::DimMismatch, "item width does not match dim");
  require(ds.labels.size() == ds.size(), ErrorCode::ManifestInvalid, "label count does not match item count");
  std::set<std::string> seen;
  for (const auto& name : ds.class_names) {
    require(!name.empty(), ErrorCode::ManifestInvalid, "empty class name");
    require(seen.insert(name).second, ErrorCode::ManifestInvalid, "duplicate class name '" + name + "'");
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    require(ds.labels[i] < k, ErrorCode::ManifestInvalid, "label out of range at item " + std::to_string(i));
    require(is_unit(ds.item(i)), ErrorCode::NormViolation, "item " + std::to_string(i) + " is not unit-norm");
  }
}

inline void validate(const ClassTextBank& bank) {
  require(bank.dim > 0, ErrorCode::ManifestInvalid, "text bank dim must be positive");
  for (std::size_t k = 0; k < bank.num_classes(); ++k) {
    const auto& group = bank.per_class[k];
    require(group.rows() >= 1, ErrorCode::ManifestInvalid, "class " + std::to_string(k) + " has no descriptions");
    require(group.cols() == bank.dim, ErrorCode::DimMismatch, "description width does not match dim");
    for (std::size_t i = 0; i < group.rows(); ++i)
      require(is_unit(group.row(i)), ErrorCode::NormViolation,
              "description " + std::to_string(i) + " of class " + std::to_string(k) + " is not unit-norm");
  }
}

inline void validate(const EmbeddingDataset& ds, const ClassTextBank& bank) {
  validate(ds);
  validate(bank);
  require(bank.dim == ds.dim, ErrorCode::DimMismatch, "text bank dim differs from dataset dim");
  require(bank.num_classes() == ds.num_classes(), ErrorCode::ManifestInvalid,
          "text bank class count differs from dataset");
}

// ---------------------------------------------------------------------------
// Little-endian blobs

namespace detail {

template <typename T>
T byteswap_value(T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = std::bit_cast<U>(value);
  U out = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out = (out << 8) | (bits & 0xffu);
    bits >>= 8;
  }
  return std::bit_cast<T>(out);
}

template <typename T>
void write_le(const std::filesystem::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      const T swapped = byteswap_value(v);
      out.write(reinterpret_cast<const char*>(&swapped), sizeof(T));
    }
  }
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

template <typename T>
std::vector<T> read_le(const std::filesystem::path& path, std::size_t expected_count) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  require(!ec, ErrorCode::IoFailure, "cannot stat " + path.string());
  require(size == expected_count * sizeof(T), ErrorCode::BlobSizeMismatch,
          path.filename().string() + " holds " + std::to_string(size) + " bytes, expected " +
              std::to_string(expected_count * sizeof(T)));
  std::vector<T> values(expected_count);
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
  require(static_cast<bool>(in), ErrorCode::IoFailure, "read failed for " + path.string());
  if constexpr (std::endian::native != std::endian::little)
    for (auto& v : values) v = byteswap_value(v);
  return values;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorCode::IoFailure,
          "cannot create directory " + dir.string());
}

inline void repair_or_check_rows(Matrix<float>& m, const LoadOptions& options, const std::string& what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    if (is_unit(std::span<const float>(row))) continue;
    require(options.renormalize, ErrorCode::NormViolation,
            what + " row " + std::to_string(r) + " is not unit-norm (norm " +
                std::to_string(l2_norm(std::span<const float>(row))) + ")");
    const auto fixed = l2_normalize(std::span<const float>(row));
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = static_cast<float>(fixed[c]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Manifest

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = m.format_tag;
  j["dim"] = m.dim;
  j["num_items"] = m.num_items;
  j["num_classes"] = m.num_classes;
  j["class_names"] = m.class_names;
  j["descriptions_per_class"] = m.descriptions_per_class;
  j["files"] = {{"images", m.files.images}, {"labels", m.files.labels}, {"text", m.files.text}};
  if (!m.description_texts.empty()) j["description_texts"] = m.description_texts;
  return j;
}

inline DatasetManifest parse_manifest(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestInvalid, std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.format_tag = j.at("format").get<std::string>();
    require(m.format_tag == kFormatTag, ErrorCode::ManifestInvalid,
            "unsupported format '" + m.format_tag + "', expected " + kFormatTag);
    m.dim = j.at("dim").get<std::size_t>();
    m.num_items = j.at("num_items").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.descriptions_per_class = j.at("descriptions_per_class").get<std::vector<std::size_t>>();
    const auto& files = j.at("files");
    m.files.images = files.at("images").get<std::string>();
    m.files.labels = files.at("labels").get<std::string>();
    m.files.text = files.at("text").get<std::string>();
    if (j.contains("description_texts"))
      m.description_texts = j.at("description_texts").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestInvalid, std::string("manifest field error: ") + e.what());
  }
  require(m.dim > 0, ErrorCode::ManifestInvalid, "manifest dim must be positive");
  require(m.num_items >= 1, ErrorCode::ManifestInvalid, "manifest num_items must be positive");
  require(m.num_classes >= 2, ErrorCode::ManifestInvalid, "manifest needs at least two classes");
  require(m.class_names.size() == m.num_classes, ErrorCode::ManifestInvalid,
          "class_names length differs from num_classes");
  require(m.descriptions_per_class.size() == m.num_classes, ErrorCode::ManifestInvalid,
          "descriptions_per_class length differs from num_classes");
  for (std::size_t d : m.descriptions_per_class)
    require(d >= 1, ErrorCode::ManifestInvalid, "every class needs at least one description");
  return m;
}

// ---------------------------------------------------------------------------
// Persistence

inline std::pair<EmbeddingDataset, ClassTextBank> load_dataset(const std::filesystem::path& dir,
                                                               const LoadOptions& options = {}) {
  const auto manifest_path = dir / "manifest.json";
  require(std::filesystem::is_regular_file(manifest_path), ErrorCode::ManifestInvalid,
          "missing " + manifest_path.string());
  const DatasetManifest m = parse_manifest(detail::read_text(manifest_path));

  EmbeddingDataset ds;
  ds.dim = m.dim;
  ds.class_names = m.class_names;
  ds.items = Matrix<float>(m.num_items, m.dim);
  ds.items.data() = detail::read_le<float>(dir / m.files.images, m.num_items * m.dim);
  ds.labels = detail::read_le<ClassId>(dir / m.files.labels, m.num_items);

  std::size_t total_text = 0;
  for (std::size_t d : m.descriptions_per_class) total_text += d;
  const auto text = detail::read_le<float>(dir / m.files.text, total_text * m.dim);

  ClassTextBank bank;
  bank.dim = m.dim;
  bank.description_texts = m.description_texts;
  std::size_t offset = 0;
  for (std::size_t d : m.descriptions_per_class) {
    Matrix<float> group(d, m.dim);
    std::copy_n(text.begin() + static_cast<std::ptrdiff_t>(offset), d * m.dim, group.data().begin());
    offset += d * m.dim;
    bank.per_class.push_back(std::move(group));
  }

  detail::repair_or_check_rows(ds.items, options, "image");
  for (std::size_t k = 0; k < bank.per_class.size(); ++k)
    detail::repair_or_check_rows(bank.per_class[k], options, "class " + std::to_string(k) + " description");
  validate(ds, bank);
  return {std::move(ds), std::move(bank)};
}

inline void save_dataset(const EmbeddingDataset& ds, const ClassTextBank& bank, const std::filesystem::path& dir) {
  validate(ds, bank);
  detail::ensure_directory(dir);

  DatasetManifest m;
  m.dim = ds.dim;
  m.num_items = ds.size();
  m.num_classes = ds.num_classes();
  m.class_names = ds.class_names;
  for (const auto& g : bank.per_class) m.descriptions_per_class.push_back(g.rows());
  m.description_texts = bank.description_texts;

  std::vector<float> text;
  text.reserve(bank.total_descriptions() * bank.dim);
  for (const auto& g : bank.per_class) text.insert(text.end(), g.data().begin(), g.data().end());

  detail::write_le<float>(dir / m.files.images, ds.items.data());
  detail::write_le<ClassId>(dir / m.files.labels, ds.labels);
  detail::write_le<float>(dir / m.files.text, text);
  detail::write_text(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<std::size_t> items_per_class;  // train counts, one per class
  std::size_t test_per_class = 50;
  double noise_sigma_image = 0.0;
  double noise_sigma_text = 0.0;
  std::size_t descriptions_per_class = 1;
  std::uint64_t seed = 0;
};

// ceil(base * k^-alpha) for k = 1..num_classes.
inline std::vector<std::size_t> power_law_counts(std::size_t num_classes, double base, double alpha) {
  require(base >= 1.0 && alpha >= 0.0, ErrorCode::ConfigInvalid, "power law needs base >= 1 and alpha >= 0");
  std::vector<std::size_t> counts(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double value = base * std::pow(static_cast<double>(k + 1), -alpha);
    // Absorb rounding noise so exact integers do not round up.
    counts[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(value - 1e-9)));
  }
  return counts;
}

inline void validate(const SynthSpec& spec) {
  require(spec.num_classes >= 2, ErrorCode::ConfigInvalid, "synthetic data needs at least two classes");
  require(spec.dim >= 1, ErrorCode::ConfigInvalid, "dim must be positive");
  require(spec.items_per_class.size() == spec.num_classes, ErrorCode::ConfigInvalid,
          "items_per_class must list one count per class");
  for (std::size_t c : spec.items_per_class) require(c >= 1, ErrorCode::ConfigInvalid, "class counts must be >= 1");
  require(spec.test_per_class >= 1, ErrorCode::ConfigInvalid, "test_per_class must be >= 1");
  require(spec.descriptions_per_class >= 1, ErrorCode::ConfigInvalid, "descriptions_per_class must be >= 1");
  require(spec.noise_sigma_image >= 0.0 && spec.noise_sigma_text >= 0.0, ErrorCode::ConfigInvalid,
          "noise sigmas must be nonnegative");
}

struct SyntheticData {
  EmbeddingDataset train;
  EmbeddingDataset test;
  ClassTextBank bank;
};

namespace detail {

inline std::vector<float> noisy_unit(std::span<const double> prototype, double sigma, Rng& rng) {
  std::vector<double> v(prototype.begin(), prototype.end());
  for (auto& x : v) x += sigma * rng.gaussian();
  const auto unit = l2_normalize(v);
  return {unit.begin(), unit.end()};
}

inline EmbeddingDataset draw_split(const Matrix<double>& prototypes, std::span<const std::size_t> counts,
                                   double sigma, std::vector<std::string> names, Rng& rng) {
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  EmbeddingDataset ds;
  ds.dim = prototypes.cols();
  ds.class_names = std::move(names);
  ds.items = Matrix<float>(total, ds.dim);
  ds.labels.reserve(total);
  std::size_t r = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (std::size_t i = 0; i < counts[k]; ++i, ++r) {
      const auto row = noisy_unit(prototypes.row(k), sigma, rng);
      std::copy(row.begin(), row.end(), ds.items.row(r).begin());
      ds.labels.push_back(static_cast<ClassId>(k));
    }
  }
  return ds;
}

}  // namespace detail

// Prototypes are normalized Gaussian draws; images and descriptions are
// noisy copies of their class prototype. Draw order is fixed: prototypes,
// descriptions, train items, test items, each class-major.
inline SyntheticData generate_synthetic(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const std::size_t k_count = spec.num_classes;
  const std::size_t dim = spec.dim;

  Matrix<double> prototypes(k_count, dim);
  for (std::size_t k = 0; k < k_count; ++k) {
    std::vector<double> g(dim);
    do {
      for (auto& x : g) x = rng.gaussian();
    } while (l2_norm(std::span<const double>(g)) < 1e-12);
    const auto unit = l2_normalize(g);
    std::copy(unit.begin(), unit.end(), prototypes.row(k).begin());
  }

  std::vector<std::string> names;
  for (std::size_t k = 0; k < k_count; ++k) names.push_back("class_" + std::to_string(k));

  SyntheticData out;
  out.bank.dim = dim;
  for (std::size_t k = 0; k < k_count; ++k) {
    Matrix<float> group(spec.descriptions_per_class, dim);
    for (std::size_t i = 0; i < spec.descriptions_per_class; ++i) {
      const auto row = detail::noisy_unit(prototypes.row(k), spec.noise_sigma_text, rng);
      std::copy(row.begin(), row.end(), group.row(i).begin());
    }
    out.bank.per_class.push_back(std::move(group));
  }

  out.train = detail::draw_split(prototypes, spec.items_per_class, spec.noise_sigma_image, names, rng);
  const std::vector<std::size_t> test_counts(k_count, spec.test_per_class);
  out.test = detail::draw_split(prototypes, test_counts, spec.noise_sigma_image, names, rng);
  return out;
}

}  // namespace pcbal
