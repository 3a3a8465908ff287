#pragma once

// Brute-force reference for the report numbers, written against raw table entries and
// bit masks only. It shares no code with metrics; summation order matches the engine so
// results can be compared bit for bit.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "redlab/ablate.hpp"

namespace redlab::oracle {

struct Reference {
  int n = 0;
  std::vector<Category> categories;
  std::map<Category, std::map<std::uint32_t, double>> category_scores;
  std::map<std::uint32_t, double> overall;
  // [rule][category][size][encoder]
  std::map<int, std::map<Category, std::map<int, std::vector<std::optional<double>>>>> cur;
  std::map<int, std::map<Category, std::map<int, std::optional<double>>>> ig;
  struct Cell {
    int count = 0;
    double max = 0, min = 0, mean = 0;
    std::uint32_t argmax = 0, argmin = 0;
    std::optional<double> relative;
  };
  // scope key: category index, or -1 for overall
  std::map<int, std::map<int, Cell>> degradation;
  struct Pool {
    int count = 0;
    double max = 0, min = 0;
    std::uint32_t argmax = 0, argmin = 0;
  };
  std::map<int, std::map<int, std::pair<Pool, Pool>>> extremes;  // scope -> encoder -> (with, without)
  bool checked = false;
  std::optional<std::uint32_t> witness;
  double witness_score = 0;
  bool flagged = false;
};

inline int scope_key(const metrics::Scope& s) { return s ? static_cast<int>(*s) : -1; }

inline Reference compute(const ScoreTable& table, const CategoryScheme& scheme, double epsilon = 0.0) {
  Reference ref;
  const int n = static_cast<int>(table.encoders().size());
  ref.n = n;
  const std::uint32_t count = 1u << n;

  // Scores by subset -> category -> list of (benchmark, normalized score), benchmark-sorted.
  std::map<std::uint32_t, std::map<Category, std::vector<std::pair<std::string, double>>>> raw;
  for (const auto& [key, score] : table.entries()) {
    Category cat;
    double v = score;
    if (table.granularity() == Granularity::per_category) {
      cat = *parse_category(key.benchmark);
    } else {
      auto e = *scheme.lookup(key.benchmark);
      cat = e.category;
      v = score / e.divisor;
    }
    raw[key.subset.bits()][cat].emplace_back(key.benchmark, v);
  }
  for (const auto& [bits, cats] : raw)
    for (const auto& [cat, _] : cats)
      if (std::find(ref.categories.begin(), ref.categories.end(), cat) == ref.categories.end())
        ref.categories.push_back(cat);
  std::sort(ref.categories.begin(), ref.categories.end());

  for (auto& [bits, cats] : raw) {
    double total = 0.0;
    for (auto cat : ref.categories) {
      auto& list = cats[cat];
      std::sort(list.begin(), list.end());
      double sum = 0.0;
      for (const auto& [_, v] : list) sum += v;
      double mean = sum / static_cast<double>(list.size());
      ref.category_scores[cat][bits] = mean;
      total += mean;
    }
    ref.overall[bits] = total / static_cast<double>(ref.categories.size());
  }

  auto has = [](const std::map<std::uint32_t, double>& m, std::uint32_t b) { return m.count(b) > 0; };

  if (n >= 2) {
    for (int rule = 0; rule < 2; ++rule) {
      for (auto cat : ref.categories) {
        const auto& s = ref.category_scores[cat];
        for (int size = n; size >= 2; --size) {
          std::vector<std::optional<double>> row(n);
          std::vector<double> present;
          for (int i = 0; i < n; ++i) {
            double sum_ratio = 0, sum_a = 0, sum_b = 0;
            int k = 0;
            for (std::uint32_t b = 0; b < count; ++b) {
              if (std::popcount(b) != size || !(b >> i & 1u)) continue;
              std::uint32_t without = b & ~(1u << i);
              if (!has(s, b) || !has(s, without)) continue;
              double a = s.at(b), c = s.at(without);
              if (rule == 0) sum_ratio += (a - c) / a;
              sum_a += a;
              sum_b += c;
              ++k;
            }
            if (k == 0) continue;
            double ma = sum_a / k, mb = sum_b / k;
            row[i] = rule == 0 ? sum_ratio / k : (ma - mb) / ma;
            present.push_back(*row[i]);
          }
          ref.cur[rule][cat][size] = row;
          if (static_cast<int>(present.size()) == n) {
            double hi = present[0], lo = present[0];
            for (double v : present) {
              if (v > hi) hi = v;
              if (v < lo) lo = v;
            }
            ref.ig[rule][cat][size] = hi - lo;
          } else {
            ref.ig[rule][cat][size] = std::nullopt;
          }
        }
      }
    }
  }

  auto scope_scores = [&](int key) -> const std::map<std::uint32_t, double>& {
    return key < 0 ? ref.overall : ref.category_scores[static_cast<Category>(key)];
  };
  std::vector<int> keys;
  for (auto cat : ref.categories) keys.push_back(static_cast<int>(cat));
  keys.push_back(-1);

  for (int key : keys) {
    const auto& s = scope_scores(key);
    std::optional<double> base;
    if (has(s, count - 1)) base = s.at(count - 1);
    for (int masked = 0; masked <= n; ++masked) {
      Reference::Cell cell;
      double sum = 0;
      for (std::uint32_t b = 0; b < count; ++b) {
        if (std::popcount(b) != n - masked || !has(s, b)) continue;
        double v = s.at(b);
        if (cell.count == 0 || v > cell.max) cell.max = v, cell.argmax = b;
        if (cell.count == 0 || v < cell.min) cell.min = v, cell.argmin = b;
        sum += v;
        ++cell.count;
      }
      if (cell.count == 0) continue;
      cell.mean = sum / cell.count;
      if (base) cell.relative = (cell.mean - *base) / *base;
      ref.degradation[key][masked] = cell;
    }
    if (n >= 2) {
      for (int i = 0; i < n; ++i) {
        Reference::Pool with, without;
        for (std::uint32_t b = 1; b < count; ++b) {
          if (!has(s, b)) continue;
          double v = s.at(b);
          auto& p = (b >> i & 1u) ? with : without;
          if (p.count == 0 || v > p.max) p.max = v, p.argmax = b;
          if (p.count == 0 || v < p.min) p.min = v, p.argmin = b;
          ++p.count;
        }
        if (with.count > 0 && without.count > 0) ref.extremes[key][i] = {with, without};
      }
    }
  }

  if (has(ref.overall, count - 1)) {
    ref.checked = true;
    for (std::uint32_t b = 0; b + 1 < count; ++b) {
      if (!has(ref.overall, b)) continue;
      if (!ref.witness || ref.overall.at(b) > ref.witness_score) {
        ref.witness = b;
        ref.witness_score = ref.overall.at(b);
      }
    }
    ref.flagged = ref.witness && ref.witness_score >= ref.overall.at(count - 1) - epsilon;
  }
  return ref;
}

/// Every disagreement between the engine's report and the reference; empty when equal.
inline std::vector<std::string> compare(const ablate::FullReport& r, const Reference& ref) {
  std::vector<std::string> diffs;
  auto mismatch = [&](std::string what) { diffs.push_back(std::move(what)); };

  for (auto cat : ref.categories) {
    const auto& mine = r.scores.series(cat);
    const auto& theirs = ref.category_scores.at(cat);
    if (mine.size() != theirs.size()) mismatch(fmt::format("{}: subset count", to_string(cat)));
    for (const auto& [subset, v] : mine)
      if (!theirs.count(subset.bits()) || theirs.at(subset.bits()) != v)
        mismatch(fmt::format("{} score {}", to_string(cat), subset.to_string()));
  }
  for (const auto& [subset, v] : r.scores.overall)
    if (!ref.overall.count(subset.bits()) || ref.overall.at(subset.bits()) != v)
      mismatch(fmt::format("overall score {}", subset.to_string()));

  if (ref.n >= 2) {
    for (const auto& report : r.cur) {
      int rule = report.rule == CurRule::per_subset_mean ? 0 : 1;
      for (const auto& row : report.rows) {
        const auto& expect = ref.cur.at(rule).at(row.category).at(row.subset_size);
        for (int i = 0; i < ref.n; ++i)
          if (row.cur[i] != expect[i])
            mismatch(fmt::format("cur {} {} n'={} enc {}", to_string(report.rule), to_string(row.category),
                                 row.subset_size, i));
        if (row.ig != ref.ig.at(rule).at(row.category).at(row.subset_size))
          mismatch(fmt::format("ig {} {} n'={}", to_string(report.rule), to_string(row.category), row.subset_size));
      }
    }
  }

  for (const auto& series : r.degradation->series) {
    const auto& expect = ref.degradation.at(scope_key(series.scope));
    if (series.cells.size() != expect.size()) mismatch(fmt::format("{} degradation cells", metrics::scope_name(series.scope)));
    for (const auto& c : series.cells) {
      auto it = expect.find(c.masked);
      if (it == expect.end()) {
        mismatch(fmt::format("{} k={} missing", metrics::scope_name(series.scope), c.masked));
        continue;
      }
      const auto& e = it->second;
      if (c.count != e.count || c.max != e.max || c.min != e.min || c.mean != e.mean ||
          c.argmax.bits() != e.argmax || c.argmin.bits() != e.argmin || c.relative != e.relative)
        mismatch(fmt::format("{} degradation k={}", metrics::scope_name(series.scope), c.masked));
    }
  }

  std::size_t expected_extremes = 0;
  for (const auto& [_, m] : ref.extremes) expected_extremes += m.size();
  if (r.extremes.size() != expected_extremes) mismatch("extremes count");
  for (const auto& x : r.extremes) {
    auto scope = ref.extremes.find(scope_key(x.scope));
    if (scope == ref.extremes.end() || !scope->second.count(x.encoder)) {
      mismatch("extremes entry");
      continue;
    }
    const auto& [w, wo] = scope->second.at(x.encoder);
    auto same = [](const metrics::ExtremesPool& a, const Reference::Pool& b) {
      return a.count == b.count && a.max == b.max && a.min == b.min && a.argmax.bits() == b.argmax &&
             a.argmin.bits() == b.argmin;
    };
    if (!same(x.with, w) || !same(x.without, wo))
      mismatch(fmt::format("extremes {} enc {}", metrics::scope_name(x.scope), x.encoder));
  }

  if (r.redundancy.has_value() != ref.checked) {
    mismatch("redundancy availability");
  } else if (r.redundancy) {
    auto bits = r.redundancy->witness ? std::optional<std::uint32_t>(r.redundancy->witness->bits()) : std::nullopt;
    if (r.redundancy->flagged != ref.flagged || bits != ref.witness ||
        (ref.witness && r.redundancy->witness_score != ref.witness_score))
      mismatch("redundancy flag/witness");
  }
  return diffs;
}

/// Random per-benchmark table over the standard scheme (or per-category when asked).
/// Scores are positive; optionally drops subsets to exercise partial coverage.
template <class Rng>
ScoreTable random_table(Rng& rng, int n, Granularity granularity, double drop_probability = 0.0) {
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) names.push_back(fmt::format("enc{}", i));
  ScoreTable t(fmt::format("random-{}", n), make_encoder_ids(names), granularity);
  std::uniform_real_distribution<double> score(1.0, 100.0), unit(0.0, 1.0);
  auto scheme = CategoryScheme::standard();
  for (const auto& s : subset_enumerate(n)) {
    if (!s.is_full() && unit(rng) < drop_probability) continue;
    if (granularity == Granularity::per_category) {
      for (auto c : kAllCategories) t.insert(s, std::string(to_string(c)), score(rng));
    } else {
      for (const auto& [bench, entry] : scheme.mapping()) t.insert(s, bench, score(rng) * entry.divisor);
    }
  }
  return t;
}

}  // namespace redlab::oracle
