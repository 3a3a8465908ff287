#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "redlab/ingest.hpp"
#include "redlab/metrics.hpp"

using namespace redlab;
using namespace redlab::metrics;

namespace {

const std::string kData = REDLAB_DATA_DIR;

AggregatedScores eagle() {
  return aggregate_scores(ingest::load_score_table(kData + "/eagle_x5_7b.csv"), CategoryScheme::standard());
}
AggregatedScores cambrian() {
  return aggregate_scores(ingest::load_score_table(kData + "/cambrian1_8b.csv"), CategoryScheme::standard());
}

constexpr int kClip = 0, kConvNext = 1, kEva = 3;  // Eagle order
constexpr int kSiglip = 3;                          // Cambrian order: CLIP, ConvNext, DINO, SigLIP

ScoreTable random_table(std::mt19937_64& rng, int n, Granularity g) {
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) names.push_back("e" + std::to_string(i));
  ScoreTable t("rand", make_encoder_ids(names), g);
  std::uniform_real_distribution<double> score(5.0, 95.0);
  for (const auto& s : subset_enumerate(n)) {
    if (g == Granularity::per_category) {
      for (auto c : kAllCategories) t.insert(s, std::string(to_string(c)), score(rng));
    } else {
      for (const char* b : {"GQA", "MME", "AI2D", "ChartQA", "OCRBench", "MMVP"}) t.insert(s, b, score(rng));
    }
  }
  return t;
}

void expect_same(double a, double b, bool exact) {
  if (exact) {
    EXPECT_EQ(a, b);
  } else {
    EXPECT_NEAR(a, b, 1e-12);
  }
}

}  // namespace

TEST(Aggregate, EagleFullSetOverall) {
  auto agg = eagle();
  auto full = EncoderSubset::full(5);
  EXPECT_DOUBLE_EQ(agg.overall.at(full), (70.77 + 54.79 + 66.60 + 67.54) / 4.0);
  EXPECT_NEAR(agg.overall.at(full), 64.925, 1e-12);
}

TEST(Aggregate, NormalizesByDivisorBeforeAveraging) {
  ScoreTable t("m", make_encoder_ids({"A"}), Granularity::per_benchmark);
  t.insert(EncoderSubset(1, 1), "MME", 1600.0);
  t.insert(EncoderSubset(1, 1), "GQA", 60.0);
  auto agg = aggregate_scores(t, CategoryScheme::standard());
  EXPECT_DOUBLE_EQ(agg.categories.at(Category::general).at(EncoderSubset(1, 1)), (80.0 + 60.0) / 2.0);
}

TEST(Aggregate, SingleBenchmarkCategoryPassesThrough) {
  ScoreTable t("m", make_encoder_ids({"A"}), Granularity::per_benchmark);
  t.insert(EncoderSubset(1, 1), "AI2D", 71.25);
  auto agg = aggregate_scores(t, CategoryScheme::standard());
  EXPECT_EQ(agg.categories.at(Category::knowledge).at(EncoderSubset(1, 1)), 71.25);
  EXPECT_EQ(agg.overall.at(EncoderSubset(1, 1)), 71.25);
}

TEST(Aggregate, UnmappedBenchmarkFails) {
  ScoreTable t("m", make_encoder_ids({"A"}), Granularity::per_benchmark);
  t.insert(EncoderSubset(1, 1), "NotABenchmark", 1.0);
  EXPECT_THROW(aggregate_scores(t, CategoryScheme::standard()), PreconditionError);
}

TEST(Aggregate, CategoryMissingForSomeSubsetFails) {
  ScoreTable t("m", make_encoder_ids({"A"}), Granularity::per_benchmark);
  t.insert(EncoderSubset(1, 1), "AI2D", 1.0);
  t.insert(EncoderSubset(1, 1), "GQA", 1.0);
  t.insert(EncoderSubset(0, 1), "GQA", 1.0);
  EXPECT_THROW(aggregate_scores(t, CategoryScheme::standard()), CoverageError);
}

TEST(Aggregate, InputTableUntouched) {
  auto table = ingest::load_score_table(kData + "/cambrian1_8b.csv");
  auto copy = table;
  (void)aggregate_scores(table, CategoryScheme::standard());
  EXPECT_EQ(table, copy);
}

TEST(Cur, WorkedExamples) {
  EXPECT_NEAR(cur(70.77, 69.79), 0.0138476755687, 1e-12);
  EXPECT_NEAR(cur(56.65, 65.80), -0.1615180935569, 1e-12);
  for (double x : {0.5, 1.0, 63.02, 1e6}) EXPECT_EQ(cur(x, x), 0.0);
}

TEST(Cur, NonPositiveFullScoreIsError) {
  EXPECT_THROW(cur(0.0, 1.0), NumericalError);
  EXPECT_THROW(cur(-1.0, 1.0), NumericalError);
  EXPECT_THROW(cur(std::nan(""), 1.0), NumericalError);
}

TEST(CurAtSize, EagleEvaFullSize) {
  auto agg = eagle();
  EXPECT_NEAR(cur_at_size(agg.series(Category::general), 5, kEva, 5), 0.10089020771513345, 1e-12);
}

TEST(CurAtSize, CambrianConvNextFullSize) {
  auto agg = cambrian();
  EXPECT_NEAR(cur_at_size(agg.series(Category::ocr_chart), 4, kConvNext, 4), 0.749857305936073, 1e-12);
}

TEST(CurAtSize, EagleClipSize4BothRules) {
  // Hand-computed from the four size-4 contexts containing CLIP.
  auto agg = eagle();
  const auto& s = agg.series(Category::general);
  EXPECT_NEAR(cur_at_size(s, 5, kClip, 4, CurRule::per_subset_mean), 0.038312068082606156, 1e-12);
  EXPECT_NEAR(cur_at_size(s, 5, kClip, 4, CurRule::mean_of_scores), 0.0374776484326533, 1e-12);
}

TEST(CurAtSize, FullSizeEqualsDirectCur) {
  for (const auto& agg : {eagle(), cambrian()}) {
    int n = agg.encoder_count();
    for (const auto& [cat, series] : agg.categories)
      for (int i = 0; i < n; ++i) {
        auto full = EncoderSubset::full(n);
        EXPECT_EQ(cur_at_size(series, n, i, n), cur(series.at(full), series.at(full.without(i))));
        EXPECT_EQ(cur_at_size(series, n, i, n, CurRule::mean_of_scores),
                  cur(series.at(full), series.at(full.without(i))));
      }
  }
}

TEST(CurAtSize, InsufficientCoverage) {
  SubsetSeries s{{EncoderSubset(0b11, 2), 50.0}};
  EXPECT_THROW(cur_at_size(s, 2, 0, 2), CoverageError);
  EXPECT_THROW(cur_at_size(s, 2, 0, 0), BoundsError);
  EXPECT_THROW(cur_at_size(s, 2, 2, 1), BoundsError);
}

TEST(CurAtSize, PartialCoverageUsesAvailablePairs) {
  SubsetSeries s{{EncoderSubset(0b111, 3), 60.0}, {EncoderSubset(0b011, 3), 50.0},
                 {EncoderSubset(0b010, 3), 40.0}};
  auto est = cur_at_size_detail(s, 3, 0, 2);
  EXPECT_EQ(est.contexts, 1);
  EXPECT_EQ(est.expected, 2);
  EXPECT_DOUBLE_EQ(est.value, (50.0 - 40.0) / 50.0);
}

TEST(InformationGap, Examples) {
  std::vector<double> a{1.39, 1.94, 0.19, 10.08, 0.58};
  EXPECT_NEAR(information_gap(a), 9.89, 1e-12);
  std::vector<double> b{4.1, 6.5, 0.92, 13.53, 2.18};
  EXPECT_NEAR(information_gap(b), 12.61, 1e-12);
  std::vector<double> one{0.3};
  EXPECT_EQ(information_gap(one), 0.0);
  EXPECT_THROW(information_gap(std::span<const double>{}), PreconditionError);
}

TEST(InformationGap, NonNegativeAndZeroIffEqual) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng() % 8);
    for (auto& x : v) x = d(rng);
    EXPECT_GE(information_gap(v), 0.0);
    std::vector<double> same(v.size(), v[0]);
    EXPECT_EQ(information_gap(same), 0.0);
    if (v.size() > 1) {
      EXPECT_GT(information_gap(v), 0.0) << "distinct draws";
    }
  }
}

TEST(Degradation, EagleGeneralOneMasked) {
  auto summary = degradation_summary(eagle());
  const auto& cell = summary.at(Category::general).cells.at(1);
  EXPECT_EQ(cell.masked, 1);
  EXPECT_EQ(cell.count, 5);
  EXPECT_NEAR(cell.mean, 68.764, 1e-9);
  EXPECT_NEAR(*cell.relative, (68.764 - 70.77) / 70.77, 1e-12);
}

TEST(Degradation, CambrianOverallOneMasked) {
  auto summary = degradation_summary(cambrian());
  const auto& cell = summary.at(std::nullopt).cells.at(1);
  EXPECT_NEAR(cell.max, 65.275, 1e-9);
  EXPECT_NEAR(cell.min, 47.85, 1e-9);
  EXPECT_NEAR(cell.mean, 59.09625, 1e-9);
}

TEST(Degradation, BaselineCellIsFullScore) {
  auto agg = cambrian();
  auto summary = degradation_summary(agg);
  for (const auto& series : summary.series) {
    const auto& c0 = series.cells.at(0);
    double base = agg.series(series.scope).at(EncoderSubset::full(4));
    EXPECT_EQ(c0.max, base);
    EXPECT_EQ(c0.min, base);
    EXPECT_EQ(c0.mean, base);
    EXPECT_EQ(*c0.relative, 0.0);
    EXPECT_TRUE(series.complete);
    for (const auto& c : series.cells) {
      EXPECT_LE(c.min, c.mean);
      EXPECT_LE(c.mean, c.max);
    }
  }
}

TEST(Degradation, MeanMatchesDirectRecomputation) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 1 + static_cast<int>(rng() % 6);
    auto agg = aggregate_scores(random_table(rng, n, Granularity::per_category), CategoryScheme::standard());
    auto summary = degradation_summary(agg);
    for (const auto& series : summary.series) {
      const auto& src = agg.series(series.scope);
      for (const auto& cell : series.cells) {
        std::vector<double> v;
        for (const auto& [s, score] : src)
          if (s.size() == n - cell.masked) v.push_back(score);
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        EXPECT_NEAR(cell.mean, mean, 1e-12);
        EXPECT_EQ(cell.count, static_cast<int>(v.size()));
      }
    }
  }
}

TEST(Degradation, PartialTableFlagsIncomplete) {
  SubsetSeries s{{EncoderSubset(0b11, 2), 60.0}, {EncoderSubset(0b01, 2), 50.0}};
  auto d = degradation_series(s, 2, Category::general);
  EXPECT_FALSE(d.complete);
  ASSERT_EQ(d.cells.size(), 2u);
  EXPECT_EQ(d.cells[1].count, 1);
  EXPECT_EQ(d.cells[1].expected, 2);
}

TEST(ConditionalExtremes, EagleConvNextOcr) {
  auto agg = eagle();
  auto ex = conditional_extremes(agg.series(Category::ocr_chart), 5, kConvNext, Category::ocr_chart);
  EXPECT_DOUBLE_EQ(ex.with.max, 66.60);
  EXPECT_DOUBLE_EQ(ex.without.max, 46.44);
  EXPECT_TRUE(ex.with.argmax.is_full());
  EXPECT_EQ(ex.with.count, 16);
  EXPECT_EQ(ex.without.count, 15);  // empty set excluded
}

TEST(ConditionalExtremes, CambrianSiglipVisionCentricNegativePattern) {
  auto agg = cambrian();
  auto ex = conditional_extremes(agg.series(Category::vision_centric), 4, kSiglip);
  EXPECT_DOUBLE_EQ(ex.without.max, 65.80);
  EXPECT_DOUBLE_EQ(ex.with.max, 63.24);
  EXPECT_GT(ex.without.max, ex.with.max);
}

TEST(ConditionalExtremes, SingleEncoderIsError) {
  SubsetSeries s{{EncoderSubset(1, 1), 60.0}, {EncoderSubset(0, 1), 10.0}};
  EXPECT_THROW(conditional_extremes(s, 1, 0), PreconditionError);
}

TEST(ConditionalExtremes, TiesReportFirstSubset) {
  SubsetSeries s{{EncoderSubset(0b01, 2), 5.0}, {EncoderSubset(0b10, 2), 5.0}, {EncoderSubset(0b11, 2), 5.0}};
  auto ex = conditional_extremes(s, 2, 0);
  EXPECT_EQ(ex.with.argmax.bits(), 0b01u);
  EXPECT_EQ(ex.with.argmin.bits(), 0b01u);
}

TEST(Redundancy, CambrianFlagRaisedWithSize3Witness) {
  auto agg = cambrian();
  auto r = redundancy_check(agg.overall, 4);
  EXPECT_TRUE(r.flagged);
  ASSERT_TRUE(r.witness);
  EXPECT_EQ(r.witness->size(), 3);
  EXPECT_NEAR(r.witness_score, 65.275, 1e-9);
  EXPECT_NEAR(r.full_score, 63.0175, 1e-9);
}

TEST(Redundancy, EagleBestDropsBelowFourPercent) {
  auto agg = eagle();
  auto r = redundancy_check(agg.overall, 5);
  EXPECT_FALSE(r.flagged);  // strict epsilon = 0
  for (const auto& b : r.best_by_size) {
    if (b.size == 2) {
      EXPECT_LT(b.relative_drop, 0.04);
    }
  }
  EXPECT_TRUE(redundancy_check(agg.overall, 5, 0.25).flagged);
}

TEST(Properties, ScaleInvarianceBitExactForPowersOfTwo) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 2 + static_cast<int>(rng() % 4);
    auto table = random_table(rng, n, Granularity::per_category);
    for (double c : {0.25, 2.0, 1024.0, 0.37, 3.3}) {
      ScoreTable scaled(table.model_name(), table.encoders(), table.granularity());
      for (const auto& [k, v] : table.entries()) scaled.insert(k.subset, k.benchmark, v * c);
      auto a = cur_report(aggregate_scores(table, {}));
      auto b = cur_report(aggregate_scores(scaled, {}));
      bool exact = std::exp2(std::round(std::log2(c))) == c;
      ASSERT_EQ(a.rows.size(), b.rows.size());
      for (std::size_t r = 0; r < a.rows.size(); ++r) {
        for (int i = 0; i < n; ++i) {
          expect_same(*a.rows[r].cur[i], *b.rows[r].cur[i], exact);
        }
        expect_same(*a.rows[r].ig, *b.rows[r].ig, exact);
      }
      auto da = degradation_summary(aggregate_scores(table, {}));
      auto db = degradation_summary(aggregate_scores(scaled, {}));
      for (std::size_t s = 0; s < da.series.size(); ++s)
        for (std::size_t k = 0; k < da.series[s].cells.size(); ++k) {
          expect_same(*da.series[s].cells[k].relative, *db.series[s].cells[k].relative, exact);
        }
    }
  }
}

TEST(Properties, PermutationEquivariance) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 2 + static_cast<int>(rng() % 4);
    auto table = random_table(rng, n, Granularity::per_category);
    std::vector<int> perm(n);  // new index of old encoder i
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> names(n);
    for (int i = 0; i < n; ++i) names[perm[i]] = table.encoders()[i].name;
    ScoreTable permuted("rand", make_encoder_ids(names), Granularity::per_category);
    for (const auto& [k, v] : table.entries()) {
      std::uint32_t bits = 0;
      for (int i = 0; i < n; ++i)
        if (k.subset.contains(i)) bits |= 1u << perm[i];
      permuted.insert(EncoderSubset(bits, n), k.benchmark, v);
    }
    auto a = cur_report(aggregate_scores(table, {}));
    auto b = cur_report(aggregate_scores(permuted, {}));
    for (std::size_t r = 0; r < a.rows.size(); ++r) {
      for (int i = 0; i < n; ++i) EXPECT_NEAR(*a.rows[r].cur[i], *b.rows[r].cur[perm[i]], 1e-12);
      EXPECT_NEAR(*a.rows[r].ig, *b.rows[r].ig, 1e-12);
    }
  }
}

TEST(CurReport, SingleEncoderHasNoRows) {
  ScoreTable t("m", make_encoder_ids({"A"}), Granularity::per_category);
  t.insert(EncoderSubset(1, 1), "General", 60.0);
  t.insert(EncoderSubset(0, 1), "General", 20.0);
  auto r = cur_report(aggregate_scores(t, {}));
  EXPECT_TRUE(r.rows.empty());
}

TEST(CurReport, MissingContextLeavesGapAndNote) {
  ScoreTable t("m", make_encoder_ids({"A", "B"}), Granularity::per_category);
  t.insert(EncoderSubset(3, 2), "General", 60.0);
  t.insert(EncoderSubset(1, 2), "General", 50.0);
  auto r = cur_report(aggregate_scores(t, {}));
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_TRUE(r.rows[0].cur[1]);   // B: 11 vs 01 present
  EXPECT_FALSE(r.rows[0].cur[0]);  // A: 10 missing
  EXPECT_FALSE(r.rows[0].ig);
  EXPECT_FALSE(r.coverage_notes.empty());
}
