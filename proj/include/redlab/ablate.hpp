#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <fmt/core.h>

#include "redlab/core.hpp"
#include "redlab/metrics.hpp"
#include "redlab/train.hpp"

namespace redlab::ablate {

/// One benchmark per task, each in the task's category with divisor 1.
inline CategoryScheme world_scheme(const sim::SimWorld& world) {
  CategoryScheme scheme;
  for (const auto& t : world.tasks) scheme.assign(t.spec.name, t.spec.category);
  return scheme;
}

inline std::vector<std::string> encoder_names(const sim::Model& model) {
  std::vector<std::string> names;
  for (const auto& e : model.encoders) names.push_back(e.name);
  return names;
}

struct AblationOptions {
  int n_samples = 5000;
  std::uint64_t seed = 0;
  int threads = 1;  // 0 = hardware concurrency
  std::string model_name = "simulated";
};

/// Evaluates all 2^n subsets; scores are accuracy in percent. Every subset is scored on
/// the same sample stream, and results are identical for any thread count.
inline ScoreTable run_ablation(const sim::Model& model, const sim::SimWorld& world, const AblationOptions& opt) {
  const int n = model.encoder_count();
  if (n < 1 || n > kMaxEncoders) throw BoundsError(fmt::format("encoder count {} out of range", n));
  auto subsets = subset_enumerate(n);
  std::vector<std::vector<double>> acc(subsets.size());

  int threads = opt.threads > 0 ? opt.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min<int>(threads, static_cast<int>(subsets.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < subsets.size(); k = next++) {
      try {
        acc[k] = sim::evaluate(model, world, subsets[k], opt.n_samples, opt.seed);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  ScoreTable table(opt.model_name, make_encoder_ids(encoder_names(model)), Granularity::per_benchmark);
  for (std::size_t k = 0; k < subsets.size(); ++k)
    for (std::size_t t = 0; t < world.tasks.size(); ++t)
      table.insert(subsets[k], world.tasks[t].spec.name, acc[k][t] * 100.0);
  return table;
}

// ---------------------------------------------------------------------------

struct FullReport {
  std::string model_name;
  std::vector<EncoderId> encoders;
  metrics::AggregatedScores scores;
  std::vector<CurReport> cur;  // per-subset-mean first, then mean-of-scores
  std::optional<metrics::DegradationSummary> degradation;
  std::vector<metrics::ConditionalExtremes> extremes;
  std::optional<metrics::RedundancyCheck> redundancy;
  std::vector<std::string> gaps;

  bool complete() const { return gaps.empty(); }

  const CurReport& cur_for(CurRule rule) const {
    for (const auto& r : cur)
      if (r.rule == rule) return r;
    throw PreconditionError("no CUR report for the requested rule");
  }
};

/// All metrics for a table. Coverage gaps are recorded rather than thrown.
inline FullReport full_report(const ScoreTable& table, const CategoryScheme& scheme, double epsilon = 0.0) {
  FullReport r;
  r.model_name = table.model_name();
  r.encoders = table.encoders();
  r.scores = metrics::aggregate_scores(table, scheme);
  const int n = r.scores.encoder_count();

  auto missing = table.subsets_missing();
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += (list.empty() ? "" : ", ") + subset_label(s, r.encoders);
    r.gaps.push_back(fmt::format("{} of {} subsets missing: {}", missing.size(), std::size_t{1} << n, list));
  }

  for (auto rule : {CurRule::per_subset_mean, CurRule::mean_of_scores}) {
    r.cur.push_back(metrics::cur_report(r.scores, rule));
    if (rule == CurRule::per_subset_mean)
      for (const auto& note : r.cur.back().coverage_notes) r.gaps.push_back(note);
  }

  r.degradation = metrics::degradation_summary(r.scores);
  for (const auto& d : r.degradation->series)
    if (!d.complete) r.gaps.push_back(fmt::format("{}: degradation cells incomplete", metrics::scope_name(d.scope)));

  if (n >= 2) {
    for (const auto& scope : r.scores.scopes()) {
      for (int i = 0; i < n; ++i) {
        try {
          r.extremes.push_back(metrics::conditional_extremes(r.scores.series(scope), n, i, scope));
        } catch (const CoverageError& e) {
          r.gaps.push_back(e.what());
        }
      }
    }
  }

  try {
    r.redundancy = metrics::redundancy_check(r.scores.overall, n, epsilon);
  } catch (const CoverageError& e) {
    r.gaps.push_back(e.what());
  }
  return r;
}

}  // namespace redlab::ablate
