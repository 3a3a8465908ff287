#pragma once

// Encoder-redundancy diagnostics over per-subset scores.
//
// Conditional utilization rate of encoder i given an active set S containing i:
//
//     cur = (acc(S) - acc(S \ {i})) / acc(S)
//
// With S the full set this is the encoder's marginal utility; the information gap of a
// row is max_i cur_i - min_i cur_i. Everything here is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "redlab/core.hpp"

namespace redlab::metrics {

/// Scores of one category (or the overall mean) keyed by active subset.
using SubsetSeries = std::map<EncoderSubset, double>;

/// Empty optional = the overall score (mean of the category scores).
using Scope = std::optional<Category>;

inline std::string scope_name(const Scope& s) {
  return s ? std::string(to_string(*s)) : std::string("Overall");
}

struct AggregatedScores {
  std::vector<EncoderId> encoders;
  std::map<Category, SubsetSeries> categories;  // only categories that occur in the table
  SubsetSeries overall;

  int encoder_count() const { return static_cast<int>(encoders.size()); }

  const SubsetSeries& series(const Scope& s) const {
    if (!s) return overall;
    auto it = categories.find(*s);
    if (it == categories.end())
      throw CoverageError(fmt::format("no scores for category {}", to_string(*s)));
    return it->second;
  }

  std::vector<Scope> scopes() const {
    std::vector<Scope> out;
    for (const auto& [cat, _] : categories) out.emplace_back(cat);
    out.emplace_back(std::nullopt);
    return out;
  }
};

inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t r = 1;
  for (int j = 1; j <= k; ++j) r = r * static_cast<std::uint64_t>(n - k + j) / static_cast<std::uint64_t>(j);
  return r;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Category score = mean of normalized benchmark scores (score / divisor); overall = mean
/// of the category scores. Per-category tables pass through unchanged.
inline AggregatedScores aggregate_scores(const ScoreTable& table, const CategoryScheme& scheme) {
  AggregatedScores out;
  out.encoders = table.encoders();

  struct Accum {
    double sum = 0.0;
    int count = 0;
  };
  std::map<EncoderSubset, std::map<Category, Accum>> acc;
  std::map<EncoderSubset, std::vector<std::string>> seen_benchmarks;

  for (const auto& [key, score] : table.entries()) {
    Category cat;
    double value = score;
    if (table.granularity() == Granularity::per_category) {
      auto c = parse_category(key.benchmark);
      if (!c) throw PreconditionError(fmt::format("'{}' is not a category", key.benchmark));
      cat = *c;
      if (acc[key.subset].contains(cat))
        throw PreconditionError(fmt::format("category {} given twice for subset {}", to_string(cat),
                                            subset_label(key.subset, table.encoders())));
    } else {
      auto entry = scheme.lookup(key.benchmark);
      if (!entry) throw PreconditionError(fmt::format("benchmark '{}' has no category", key.benchmark));
      cat = entry->category;
      value = score / entry->divisor;
      seen_benchmarks[key.subset].push_back(key.benchmark);
    }
    auto& a = acc[key.subset][cat];
    a.sum += value;
    a.count += 1;
  }

  std::vector<Category> present;
  for (const auto& [subset, cats] : acc)
    for (const auto& [cat, _] : cats)
      if (std::find(present.begin(), present.end(), cat) == present.end()) present.push_back(cat);
  std::sort(present.begin(), present.end());

  const std::vector<std::string>* reference = nullptr;
  for (const auto& [subset, cats] : acc) {
    for (auto cat : present)
      if (!cats.contains(cat))
        throw CoverageError(fmt::format("category {} has no benchmarks for subset {}", to_string(cat),
                                        subset_label(subset, table.encoders())));
    if (table.granularity() == Granularity::per_benchmark) {
      const auto& names = seen_benchmarks[subset];
      if (!reference) reference = &names;
      else if (names != *reference)
        throw CoverageError(fmt::format("subset {} has a different benchmark set",
                                        subset_label(subset, table.encoders())));
    }
    double overall = 0.0;
    for (auto cat : present) {
      const auto& a = cats.at(cat);
      double mean = a.sum / a.count;
      out.categories[cat][subset] = mean;
      overall += mean;
    }
    out.overall[subset] = overall / static_cast<double>(present.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CUR and IG

/// Relative drop from `full_score` to `ablated_score`. Undefined for full_score <= 0.
inline double cur(double full_score, double ablated_score) {
  if (!(full_score > 0.0) || !std::isfinite(full_score) || !std::isfinite(ablated_score))
    throw NumericalError(fmt::format("CUR undefined for full score {} / ablated score {}", full_score,
                                     ablated_score));
  return (full_score - ablated_score) / full_score;
}

struct CurEstimate {
  double value = 0.0;
  int contexts = 0;  // size-n' subsets S containing i with S and S \ {i} both present
  int expected = 0;  // C(n-1, n'-1)
};

/// CUR of encoder `i` aggregated over every size-`size` subset containing it.
/// At size == n this is exactly cur(acc(full), acc(full \ {i})).
inline CurEstimate cur_at_size_detail(const SubsetSeries& series, int n, int i, int size,
                                      CurRule rule = CurRule::per_subset_mean) {
  if (n < 1 || n > kMaxEncoders) throw BoundsError(fmt::format("encoder count {} out of range", n));
  if (i < 0 || i >= n) throw BoundsError(fmt::format("encoder index {} outside [0, {})", i, n));
  if (size < 1 || size > n) throw BoundsError(fmt::format("subset size {} outside [1, {}]", size, n));

  CurEstimate est;
  est.expected = static_cast<int>(binomial(n - 1, size - 1));
  double sum_cur = 0.0, sum_with = 0.0, sum_without = 0.0;
  for (const auto& s : subset_enumerate(n)) {
    if (s.size() != size || !s.contains(i)) continue;
    auto with = series.find(s);
    auto without = series.find(s.without(i));
    if (with == series.end() || without == series.end()) continue;
    ++est.contexts;
    if (rule == CurRule::per_subset_mean) sum_cur += cur(with->second, without->second);
    sum_with += with->second;
    sum_without += without->second;
  }
  if (est.contexts == 0)
    throw CoverageError(fmt::format("no size-{} subset pair available for encoder {}", size, i));
  est.value = rule == CurRule::per_subset_mean
                  ? sum_cur / est.contexts
                  : cur(sum_with / est.contexts, sum_without / est.contexts);
  return est;
}

inline double cur_at_size(const SubsetSeries& series, int n, int i, int size,
                          CurRule rule = CurRule::per_subset_mean) {
  return cur_at_size_detail(series, n, i, size, rule).value;
}

inline double information_gap(std::span<const double> curs) {
  if (curs.empty()) throw PreconditionError("information gap of an empty CUR list");
  auto [lo, hi] = std::minmax_element(curs.begin(), curs.end());
  return *hi - *lo;
}

/// Rows for every present category and every subset size n' from n down to 2.
inline CurReport cur_report(const AggregatedScores& agg, CurRule rule = CurRule::per_subset_mean) {
  CurReport report;
  report.encoders = agg.encoders;
  report.rule = rule;
  const int n = agg.encoder_count();
  if (n < 2) {
    report.coverage_notes.push_back("fewer than two encoders: no CUR/IG rows");
    return report;
  }
  for (const auto& [cat, series] : agg.categories) {
    for (int size = n; size >= 2; --size) {
      CurRow row{cat, size, {}, std::nullopt};
      std::vector<double> values;
      for (int i = 0; i < n; ++i) {
        try {
          auto est = cur_at_size_detail(series, n, i, size, rule);
          row.cur.emplace_back(est.value);
          values.push_back(est.value);
          if (est.contexts < est.expected)
            report.coverage_notes.push_back(fmt::format("{} n'={} {}: {} of {} contexts available",
                                                        to_string(cat), size, agg.encoders[i].name,
                                                        est.contexts, est.expected));
        } catch (const CoverageError&) {
          row.cur.emplace_back(std::nullopt);
          report.coverage_notes.push_back(fmt::format("{} n'={} {}: no subset pair available",
                                                      to_string(cat), size, agg.encoders[i].name));
        }
      }
      if (static_cast<int>(values.size()) == n) row.ig = information_gap(values);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Degradation with the number of masked encoders

struct DegradationCell {
  int masked = 0;
  int count = 0;
  int expected = 0;
  double max = 0.0;
  double min = 0.0;
  double mean = 0.0;
  EncoderSubset argmax;
  EncoderSubset argmin;
  std::optional<double> relative;  // (mean - baseline) / baseline
};

struct DegradationSeries {
  Scope scope;
  std::vector<DegradationCell> cells;  // ascending masked count; absent k omitted
  bool complete = true;
};

struct DegradationSummary {
  std::vector<DegradationSeries> series;

  const DegradationSeries& at(const Scope& s) const {
    for (const auto& d : series)
      if (d.scope == s) return d;
    throw CoverageError(fmt::format("no degradation series for {}", scope_name(s)));
  }
};

inline DegradationSeries degradation_series(const SubsetSeries& series, int n, Scope scope) {
  DegradationSeries out{scope, {}, true};
  std::optional<double> baseline;
  if (auto it = series.find(EncoderSubset::full(n)); it != series.end()) {
    if (!(it->second > 0.0))
      throw NumericalError(fmt::format("{}: non-positive baseline {}", scope_name(scope), it->second));
    baseline = it->second;
  } else {
    out.complete = false;
  }

  for (int k = 0; k <= n; ++k) {
    DegradationCell cell;
    cell.masked = k;
    cell.expected = static_cast<int>(binomial(n, k));
    double sum = 0.0;
    for (const auto& [subset, score] : series) {
      if (subset.size() != n - k) continue;
      if (cell.count == 0 || score > cell.max) { cell.max = score; cell.argmax = subset; }
      if (cell.count == 0 || score < cell.min) { cell.min = score; cell.argmin = subset; }
      sum += score;
      ++cell.count;
    }
    if (cell.count < cell.expected) out.complete = false;
    if (cell.count == 0) continue;
    cell.mean = sum / cell.count;
    if (baseline) cell.relative = (cell.mean - *baseline) / *baseline;
    out.cells.push_back(cell);
  }
  return out;
}

inline DegradationSummary degradation_summary(const AggregatedScores& agg) {
  DegradationSummary out;
  for (const auto& scope : agg.scopes())
    out.series.push_back(degradation_series(agg.series(scope), agg.encoder_count(), scope));
  return out;
}

// ---------------------------------------------------------------------------
// Best and worst scores with vs. without an encoder

struct ExtremesPool {
  int count = 0;
  double max = 0.0;
  double min = 0.0;
  EncoderSubset argmax;  // first subset in enumeration order attaining the max
  EncoderSubset argmin;
};

struct ConditionalExtremes {
  Scope scope;
  int encoder = 0;
  ExtremesPool with;
  ExtremesPool without;
};

/// Extremes over the nonempty subsets containing encoder `i` vs. those excluding it.
inline ConditionalExtremes conditional_extremes(const SubsetSeries& series, int n, int i, Scope scope = {}) {
  if (n < 2) throw PreconditionError("conditional extremes need at least two encoders");
  if (i < 0 || i >= n) throw BoundsError(fmt::format("encoder index {} outside [0, {})", i, n));
  ConditionalExtremes out{scope, i, {}, {}};
  for (const auto& [subset, score] : series) {
    if (subset.empty()) continue;
    auto& pool = subset.contains(i) ? out.with : out.without;
    if (pool.count == 0 || score > pool.max) { pool.max = score; pool.argmax = subset; }
    if (pool.count == 0 || score < pool.min) { pool.min = score; pool.argmin = subset; }
    ++pool.count;
  }
  if (out.with.count == 0 || out.without.count == 0)
    throw CoverageError(fmt::format("{}: empty with/without pool for encoder {}", scope_name(scope), i));
  return out;
}

// ---------------------------------------------------------------------------
// Redundancy predicate

struct SizeBest {
  int size = 0;
  EncoderSubset subset;
  double score = 0.0;
  double relative_drop = 0.0;  // cur(full, score)
};

struct RedundancyCheck {
  Scope scope;
  double full_score = 0.0;
  double epsilon = 0.0;
  bool flagged = false;
  std::optional<EncoderSubset> witness;  // best proper subset
  double witness_score = 0.0;
  std::vector<SizeBest> best_by_size;    // descending size, excluding the full set
};

/// Redundant when some proper subset scores at least full - epsilon.
inline RedundancyCheck redundancy_check(const SubsetSeries& series, int n, double epsilon = 0.0,
                                        Scope scope = {}) {
  auto full = series.find(EncoderSubset::full(n));
  if (full == series.end()) throw CoverageError("redundancy check needs the full-set score");
  RedundancyCheck out;
  out.scope = scope;
  out.full_score = full->second;
  out.epsilon = epsilon;
  std::map<int, SizeBest> by_size;
  for (const auto& [subset, score] : series) {
    if (subset.is_full()) continue;
    if (!out.witness || score > out.witness_score) {
      out.witness = subset;
      out.witness_score = score;
    }
    auto it = by_size.find(subset.size());
    if (it == by_size.end() || score > it->second.score)
      by_size[subset.size()] = SizeBest{subset.size(), subset, score, 0.0};
  }
  for (auto it = by_size.rbegin(); it != by_size.rend(); ++it) {
    it->second.relative_drop = cur(out.full_score, it->second.score);
    out.best_by_size.push_back(it->second);
  }
  out.flagged = out.witness && out.witness_score >= out.full_score - epsilon;
  return out;
}

}  // namespace redlab::metrics
