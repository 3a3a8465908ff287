#pragma once

// Domain types shared by the analytics engine and the simulator.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/core.h>

#include "redlab/error.hpp"

namespace redlab {

inline constexpr int kMaxEncoders = 16;

// ---------------------------------------------------------------------------
// Categories

enum class Category { general, knowledge, ocr_chart, vision_centric };

inline constexpr std::array<Category, 4> kAllCategories = {
    Category::general, Category::knowledge, Category::ocr_chart, Category::vision_centric};

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::general: return "General";
    case Category::knowledge: return "Knowledge";
    case Category::ocr_chart: return "OCR & Chart";
    case Category::vision_centric: return "Vision-Centric";
  }
  return "?";
}

/// Accepts the canonical names plus loose spellings ("OCR&Chart", "vision centric",
/// "Chart & OCR"). Case and punctuation are ignored.
inline std::optional<Category> parse_category(std::string_view text) {
  std::string key;
  for (char ch : text)
    if (std::isalnum(static_cast<unsigned char>(ch)))
      key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (key == "general" || key == "generalvqa") return Category::general;
  if (key == "knowledge" || key == "knowledgevqa") return Category::knowledge;
  if (key == "ocrchart" || key == "chartocr") return Category::ocr_chart;
  if (key == "visioncentric") return Category::vision_centric;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Encoders and subsets

struct EncoderId {
  int index = 0;
  std::string name;

  friend bool operator==(const EncoderId&, const EncoderId&) = default;
};

/// Set of ACTIVE encoders out of `n`, stored as a bitmask (bit i set = encoder i active).
class EncoderSubset {
 public:
  constexpr EncoderSubset() = default;

  EncoderSubset(std::uint32_t bits, int n) : bits_(bits), n_(n) {
    if (n < 1 || n > kMaxEncoders)
      throw BoundsError(fmt::format("encoder count {} outside [1, {}]", n, kMaxEncoders));
    if (bits >= (std::uint32_t{1} << n))
      throw BoundsError(fmt::format("subset bits {} out of range for n={}", bits, n));
  }

  static EncoderSubset full(int n) { return {(std::uint32_t{1} << n) - 1, n}; }
  static EncoderSubset none(int n) { return {0, n}; }

  std::uint32_t bits() const noexcept { return bits_; }
  int encoder_count() const noexcept { return n_; }
  int size() const noexcept { return std::popcount(bits_); }
  bool empty() const noexcept { return bits_ == 0; }
  bool is_full() const noexcept { return bits_ == (std::uint32_t{1} << n_) - 1; }

  bool contains(int i) const {
    check_index(i);
    return (bits_ >> i) & 1u;
  }

  EncoderSubset with(int i) const {
    check_index(i);
    return {bits_ | (std::uint32_t{1} << i), n_};
  }

  /// Clears encoder `i`; it must currently be active.
  EncoderSubset without(int i) const {
    if (!contains(i))
      throw PreconditionError(
          fmt::format("encoder {} is not active in subset {}", i, to_string()));
    return {bits_ & ~(std::uint32_t{1} << i), n_};
  }

  EncoderSubset complement() const { return {~bits_ & ((std::uint32_t{1} << n_) - 1), n_}; }

  /// Most significant encoder first, e.g. "10111" for n=5 with encoder 3 cleared.
  std::string to_string() const {
    std::string s;
    for (int i = n_ - 1; i >= 0; --i) s.push_back(((bits_ >> i) & 1u) ? '1' : '0');
    return s;
  }

  friend auto operator<=>(const EncoderSubset&, const EncoderSubset&) = default;
  friend bool operator==(const EncoderSubset&, const EncoderSubset&) = default;

 private:
  void check_index(int i) const {
    if (i < 0 || i >= n_)
      throw BoundsError(fmt::format("encoder index {} outside [0, {})", i, n_));
  }

  std::uint32_t bits_ = 0;
  int n_ = 1;
};

/// All 2^n subsets in ascending bitmask order.
inline std::vector<EncoderSubset> subset_enumerate(int n) {
  if (n < 1 || n > kMaxEncoders)
    throw BoundsError(fmt::format("encoder count {} outside [1, {}]", n, kMaxEncoders));
  std::vector<EncoderSubset> out;
  out.reserve(std::size_t{1} << n);
  for (std::uint32_t bits = 0; bits < (std::uint32_t{1} << n); ++bits) out.emplace_back(bits, n);
  return out;
}

inline EncoderSubset subset_without(const EncoderSubset& s, const EncoderId& id) {
  return s.without(id.index);
}

/// Names of the encoders active in `s`, joined with `sep`, or `empty_label` for none.
inline std::string subset_label(const EncoderSubset& s, const std::vector<EncoderId>& encoders,
                                std::string_view sep = ";", std::string_view empty_label = "-") {
  std::string out;
  for (const auto& e : encoders) {
    if (!s.contains(e.index)) continue;
    if (!out.empty()) out += sep;
    out += e.name;
  }
  return out.empty() ? std::string(empty_label) : out;
}

inline std::vector<EncoderId> make_encoder_ids(const std::vector<std::string>& names) {
  if (names.empty() || static_cast<int>(names.size()) > kMaxEncoders)
    throw BoundsError(fmt::format("encoder count {} outside [1, {}]", names.size(), kMaxEncoders));
  std::vector<EncoderId> ids;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].empty()) throw PreconditionError("empty encoder name");
    for (std::size_t j = 0; j < i; ++j)
      if (names[j] == names[i])
        throw PreconditionError(fmt::format("duplicate encoder name '{}'", names[i]));
    ids.push_back({static_cast<int>(i), names[i]});
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Score tables

enum class Granularity { per_benchmark, per_category };

inline std::string_view to_string(Granularity g) {
  return g == Granularity::per_benchmark ? "per-benchmark" : "per-category";
}

inline std::optional<Granularity> parse_granularity(std::string_view s) {
  if (s == "per-benchmark" || s == "per_benchmark" || s == "benchmark") return Granularity::per_benchmark;
  if (s == "per-category" || s == "per_category" || s == "category") return Granularity::per_category;
  return std::nullopt;
}

/// Raw scores keyed by (active subset, benchmark or category name).
class ScoreTable {
 public:
  struct Key {
    EncoderSubset subset;
    std::string benchmark;
    friend auto operator<=>(const Key&, const Key&) = default;
    friend bool operator==(const Key&, const Key&) = default;
  };

  ScoreTable(std::string model_name, std::vector<EncoderId> encoders, Granularity granularity)
      : model_name_(std::move(model_name)), encoders_(std::move(encoders)), granularity_(granularity) {
    if (encoders_.empty() || static_cast<int>(encoders_.size()) > kMaxEncoders)
      throw BoundsError(fmt::format("encoder count {} outside [1, {}]", encoders_.size(), kMaxEncoders));
    for (std::size_t i = 0; i < encoders_.size(); ++i) {
      if (encoders_[i].index != static_cast<int>(i))
        throw PreconditionError("encoder indices must be 0..n-1 in order");
      for (std::size_t j = 0; j < i; ++j)
        if (encoders_[j].name == encoders_[i].name)
          throw PreconditionError(fmt::format("duplicate encoder name '{}'", encoders_[i].name));
    }
  }

  const std::string& model_name() const noexcept { return model_name_; }
  const std::vector<EncoderId>& encoders() const noexcept { return encoders_; }
  int encoder_count() const noexcept { return static_cast<int>(encoders_.size()); }
  Granularity granularity() const noexcept { return granularity_; }
  const std::map<Key, double>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::optional<int> encoder_index(std::string_view name) const {
    for (const auto& e : encoders_)
      if (e.name == name) return e.index;
    return std::nullopt;
  }

  void insert(EncoderSubset subset, std::string benchmark, double score) {
    if (subset.encoder_count() != encoder_count())
      throw PreconditionError(fmt::format("subset has n={} but table has n={}",
                                          subset.encoder_count(), encoder_count()));
    if (!std::isfinite(score))
      throw PreconditionError(fmt::format("non-finite score for '{}'", benchmark));
    if (benchmark.empty()) throw PreconditionError("empty benchmark name");
    Key key{subset, benchmark};
    if (entries_.contains(key))
      throw PreconditionError(fmt::format("duplicate entry for subset {} / '{}'",
                                          subset_label(subset, encoders_), benchmark));
    if (std::find(benchmarks_.begin(), benchmarks_.end(), benchmark) == benchmarks_.end())
      benchmarks_.push_back(benchmark);
    entries_.emplace(std::move(key), score);
  }

  std::optional<double> score(EncoderSubset subset, std::string_view benchmark) const {
    auto it = entries_.find(Key{subset, std::string(benchmark)});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  /// Benchmark (or category) names in first-inserted order.
  const std::vector<std::string>& benchmarks() const noexcept { return benchmarks_; }

  std::vector<EncoderSubset> subsets_present() const {
    std::vector<EncoderSubset> out;
    for (const auto& [key, _] : entries_)
      if (out.empty() || out.back() != key.subset) out.push_back(key.subset);
    return out;
  }

  std::vector<EncoderSubset> subsets_missing() const {
    auto present = subsets_present();
    std::vector<EncoderSubset> out;
    for (const auto& s : subset_enumerate(encoder_count()))
      if (!std::binary_search(present.begin(), present.end(), s)) out.push_back(s);
    return out;
  }

  bool is_complete() const { return subsets_missing().empty(); }

  friend bool operator==(const ScoreTable& a, const ScoreTable& b) {
    return a.model_name_ == b.model_name_ && a.encoders_ == b.encoders_ &&
           a.granularity_ == b.granularity_ && a.entries_ == b.entries_;
  }

 private:
  std::string model_name_;
  std::vector<EncoderId> encoders_;
  Granularity granularity_;
  std::map<Key, double> entries_;
  std::vector<std::string> benchmarks_;
};

// ---------------------------------------------------------------------------
// Category schemes

class CategoryScheme {
 public:
  struct Entry {
    Category category;
    double divisor = 1.0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void assign(const std::string& benchmark, Category category, double divisor = 1.0) {
    if (!(divisor > 0.0) || !std::isfinite(divisor))
      throw PreconditionError(fmt::format("divisor for '{}' must be positive, got {}", benchmark, divisor));
    auto it = mapping_.find(benchmark);
    if (it != mapping_.end() && it->second.category != category)
      throw PreconditionError(fmt::format("benchmark '{}' assigned to both {} and {}", benchmark,
                                          to_string(it->second.category), to_string(category)));
    mapping_[benchmark] = Entry{category, divisor};
  }

  std::optional<Entry> lookup(std::string_view benchmark) const {
    auto it = mapping_.find(std::string(benchmark));
    if (it == mapping_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, Entry>& mapping() const noexcept { return mapping_; }
  bool empty() const noexcept { return mapping_.empty(); }

  /// Fifteen benchmarks in four categories; MME scores divided by 20 and OCRBench by 10
  /// before averaging.
  static CategoryScheme standard() {
    CategoryScheme s;
    for (const char* b : {"GQA", "MMB", "SEED-I"}) s.assign(b, Category::general);
    s.assign("MME", Category::general, 20.0);
    for (const char* b : {"AI2D", "MathVista", "SQA-I", "MMMU"}) s.assign(b, Category::knowledge);
    for (const char* b : {"DocVQA", "ChartQA", "TextVQA"}) s.assign(b, Category::ocr_chart);
    s.assign("OCRBench", Category::ocr_chart, 10.0);
    for (const char* b : {"CV-Bench", "MMVP", "RealWorldQA"}) s.assign(b, Category::vision_centric);
    return s;
  }

  friend bool operator==(const CategoryScheme&, const CategoryScheme&) = default;

 private:
  std::map<std::string, Entry> mapping_;
};

// ---------------------------------------------------------------------------
// CUR report

/// How a CUR value at subset size n' < n is aggregated over the size-n' contexts.
enum class CurRule {
  per_subset_mean,  // mean over S of cur(acc(S), acc(S \ {i}))
  mean_of_scores,   // cur(mean acc(S), mean acc(S \ {i}))
};

inline std::string_view to_string(CurRule r) {
  return r == CurRule::per_subset_mean ? "per-subset-mean" : "mean-of-scores";
}

inline std::optional<CurRule> parse_cur_rule(std::string_view s) {
  if (s == "per-subset-mean") return CurRule::per_subset_mean;
  if (s == "mean-of-scores") return CurRule::mean_of_scores;
  return std::nullopt;
}

struct CurRow {
  Category category;
  int subset_size = 0;                      // n'
  std::vector<std::optional<double>> cur;   // one per encoder, fraction
  std::optional<double> ig;                 // max - min over cur, when all present
};

struct CurReport {
  std::vector<EncoderId> encoders;
  CurRule rule = CurRule::per_subset_mean;
  std::vector<CurRow> rows;
  std::vector<std::string> coverage_notes;
};

}  // namespace redlab
