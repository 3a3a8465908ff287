// redlab: analyze score tables, run simulator experiments, self-test.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "redlab/config.hpp"
#include "redlab/ingest.hpp"
#include "redlab/oracle.hpp"
#include "redlab/report.hpp"

using namespace redlab;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numerical = 3 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return usage;
    case ErrorKind::data: return data;
    case ErrorKind::numerical: return numerical;
  }
  return data;
}

struct OutputFlags {
  std::string out;
  std::string format = "all";
  std::string cur_rule = "per-subset-mean";
};

void add_output_flags(CLI::App* cmd, OutputFlags& f) {
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--format", f.format, "Report formats")->check(CLI::IsMember({"md", "csv", "all"}));
  cmd->add_option("--cur-rule", f.cur_rule, "Rule for CUR below the full set")
      ->check(CLI::IsMember({"per-subset-mean", "mean-of-scores"}));
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',' || c == ';') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  return out;
}

void print_summary(const ablate::FullReport& r, const std::string& out) {
  fmt::print("{}: {} encoders, {} subsets scored\n", r.model_name, r.encoders.size(), r.scores.overall.size());
  if (r.redundancy) {
    const auto& red = *r.redundancy;
    fmt::print("redundancy flag: {} (full {}, best proper subset {})\n", red.flagged ? "RAISED" : "not raised",
               report::fixed(red.full_score, 2),
               red.witness ? report::fixed(red.witness_score, 2) : std::string("n/a"));
  }
  for (const auto& g : r.gaps) fmt::print("coverage: {}\n", g);
  fmt::print("reports written to {}\n", out);
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string scores;
  std::string categories;
  std::string encoders;
  std::string granularity;
  double epsilon = 0.0;
  OutputFlags output;
};

int cmd_analyze(const AnalyzeArgs& a) {
  std::optional<std::vector<std::string>> order;
  if (!a.encoders.empty()) order = split_names(a.encoders);
  std::optional<Granularity> granularity;
  if (!a.granularity.empty()) granularity = parse_granularity(a.granularity);
  auto table = ingest::parse_score_table(ingest::read_file(a.scores), order, granularity, a.scores);
  auto scheme = a.categories.empty() ? CategoryScheme::standard() : ingest::load_category_scheme(a.categories);
  auto r = ablate::full_report(table, scheme, a.epsilon);
  auto files = report::render(r, *report::parse_format(a.output.format), *parse_cur_rule(a.output.cur_rule));
  report::write_tree(a.output.out, files);
  print_summary(r, a.output.out);
  return ok;
}

struct SimulateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  OutputFlags output;
};

int cmd_simulate(const SimulateArgs& a) {
  auto cfg = config::load_sim_config(a.config);
  if (a.threads) cfg.evaluation.threads = *a.threads;
  auto x = config::instantiate(cfg, a.seed);
  fmt::print("training {} ({} steps, {} encoders, {})\n", cfg.model_name, x.train.steps, x.model.encoders.size(),
             sim::to_string(x.model.fusion.strategy));
  auto result = config::run_experiment(x);
  auto files = report::render(result.report, *report::parse_format(a.output.format),
                              *parse_cur_rule(a.output.cur_rule));
  files["scores.csv"] = ingest::write_score_table(result.table);
  files["categories.csv"] = ingest::write_category_scheme(result.scheme);
  files["loss_curve.csv"] = report::loss_curve_csv(result.trained.losses);
  report::write_tree(a.output.out, files);
  if (!result.trained.losses.empty())
    fmt::print("final training loss {}\n", report::fixed(result.trained.losses.back(), 4));
  print_summary(result.report, a.output.out);
  return ok;
}

// ---------------------------------------------------------------------------

struct SelftestArgs {
  double grad_tol = 1e-3;
  std::string data_dir = REDLAB_DATA_DIR;
  int oracle_trials = 200;
};

struct Checker {
  int failures = 0;
  void run(const std::string& name, const std::function<std::string()>& body) {
    std::string detail;
    bool pass = false;
    try {
      detail = body();
      pass = detail.rfind("FAIL", 0) != 0;
      if (!pass) detail = detail.substr(4);
    } catch (const std::exception& e) {
      detail = e.what();
    }
    if (!pass) ++failures;
    fmt::print("{} {}{}{}\n", pass ? "PASS" : "FAIL", name, detail.empty() ? "" : ": ", detail);
  }
};

std::vector<int> channel_range(int lo, int hi) {
  std::vector<int> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

std::string grad_check_fusion(sim::FusionStrategy strategy, double tol) {
  auto world = sim::SimWorld::create(16, 0.1,
                                     {{"a", Category::general, channel_range(0, 8), 4},
                                      {"b", Category::ocr_chart, channel_range(8, 12), 4}},
                                     7);
  sim::Rng rng(3);
  std::vector<sim::EncoderSpec> es{
      sim::EncoderSpec::random("e0", channel_range(0, 8), 4, 8, 16, rng, false),
      sim::EncoderSpec::random("e1", channel_range(4, 12), 4, 8, 16, rng, false),
      sim::EncoderSpec::random("e2", channel_range(12, 16), 4, 8, 16, rng, false)};
  sim::FusionSpec f;
  f.strategy = strategy;
  auto model = sim::make_model(world, es, f, sim::HeadSpec{}, 11);
  sim::Rng batch_rng(5);
  auto batch = sim::draw_batch(world, model, 16, 0.3, batch_rng);
  auto r = sim::grad_check(model, world, batch, tol);
  auto detail = fmt::format("max relative error {:.3g} over {} parameters (tolerance {:.3g}, worst {})",
                            r.max_relative_error, r.checked, tol, r.worst_parameter);
  return r.passed ? detail : "FAIL" + detail;
}

std::string fixture_round_trip(const fs::path& path) {
  auto text = ingest::read_file(path.string());
  auto doc = ingest::read_delimited(text, path.string());
  if (!doc.header.empty() && doc.header.front() == "benchmark") {
    auto scheme = ingest::parse_category_scheme(text, path.string());
    auto again = ingest::parse_category_scheme(ingest::write_category_scheme(scheme));
    if (!(again == scheme)) return "FAILcategory scheme changed on round trip";
    return fmt::format("{} benchmarks", scheme.mapping().size());
  }
  auto table = ingest::parse_score_table(text, std::nullopt, std::nullopt, path.string());
  auto again = ingest::parse_score_table(ingest::write_score_table(table));
  if (!(again == table)) return "FAILscore table changed on round trip";
  auto missing = table.subsets_missing();
  if (!missing.empty()) return fmt::format("FAIL{} subsets missing", missing.size());
  return fmt::format("{} entries, {} encoders", table.size(), table.encoders().size());
}

std::string oracle_check(int n, Granularity g, double drop, int trials) {
  std::mt19937_64 rng(1000 + n * 10 + (g == Granularity::per_category) + (drop > 0 ? 5 : 0));
  auto scheme = CategoryScheme::standard();
  for (int t = 0; t < trials; ++t) {
    auto table = oracle::random_table(rng, n, g, drop);
    auto diffs = oracle::compare(ablate::full_report(table, scheme), oracle::compute(table, scheme));
    if (!diffs.empty()) return fmt::format("FAILtrial {}: {} ({} mismatches)", t, diffs.front(), diffs.size());
  }
  return fmt::format("{} random tables identical", trials);
}

int cmd_selftest(const SelftestArgs& a) {
  Checker c;
  for (auto s : {sim::FusionStrategy::sequence_append, sim::FusionStrategy::channel_concat,
                 sim::FusionStrategy::shared_mlp, sim::FusionStrategy::cross_attention})
    c.run(fmt::format("grad-check {}", sim::to_string(s)), [&] { return grad_check_fusion(s, a.grad_tol); });
  const int gradient_failures = c.failures;

  std::vector<fs::path> fixtures;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(a.data_dir, ec))
    if (e.path().extension() == ".csv") fixtures.push_back(e.path());
  std::sort(fixtures.begin(), fixtures.end());
  if (fixtures.empty())
    c.run(fmt::format("fixtures in {}", a.data_dir), [] { return std::string("FAILno .csv fixtures found"); });
  for (const auto& p : fixtures)
    c.run(fmt::format("fixture {}", p.filename().string()), [&] { return fixture_round_trip(p); });

  for (int n = 1; n <= 4; ++n) {
    for (auto g : {Granularity::per_benchmark, Granularity::per_category})
      c.run(fmt::format("oracle n={} {}", n, to_string(g)), [&] { return oracle_check(n, g, 0.0, a.oracle_trials); });
    if (n >= 2)
      c.run(fmt::format("oracle n={} partial", n),
            [&] { return oracle_check(n, Granularity::per_category, 0.3, a.oracle_trials); });
  }
  fmt::print("{} check(s) failed\n", c.failures);
  if (gradient_failures > 0) return numerical;
  return c.failures == 0 ? ok : data;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoder redundancy analysis: CUR, information gap, degradation and simulation."};
  app.require_subcommand(1);

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Analyze a masking-study score table");
  an->add_option("--scores", analyze.scores, "Score table file")->required();
  an->add_option("--categories", analyze.categories, "Benchmark-to-category file (standard scheme if omitted)");
  an->add_option("--encoders", analyze.encoders, "Encoder order, comma separated (overrides the file)");
  an->add_option("--granularity", analyze.granularity, "per-benchmark or per-category (overrides the file)")
      ->check(CLI::IsMember({"per-benchmark", "per-category"}));
  an->add_option("--epsilon", analyze.epsilon, "Redundancy tolerance in score points")->check(CLI::NonNegativeNumber);
  add_output_flags(an, analyze.output);

  SimulateArgs simulate;
  auto* sm = app.add_subcommand("simulate", "Train a simulated model, ablate every subset and report");
  sm->add_option("--config", simulate.config, "Experiment YAML file")->required();
  sm->add_option("--seed", simulate.seed, "Override the config seed");
  sm->add_option("--threads", simulate.threads, "Evaluation threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  add_output_flags(sm, simulate.output);

  SelftestArgs selftest;
  auto* st = app.add_subcommand("selftest", "Gradient checks, fixture round trips and oracle equivalence");
  st->add_option("--grad-tol", selftest.grad_tol, "Gradient check tolerance")->check(CLI::PositiveNumber);
  st->add_option("--data", selftest.data_dir, "Fixture directory");
  st->add_option("--oracle-trials", selftest.oracle_trials, "Random tables per oracle check")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? ok : usage;
  }

  try {
    if (*an) return cmd_analyze(analyze);
    if (*sm) return cmd_simulate(simulate);
    return cmd_selftest(selftest);
  } catch (const Error& e) {
    std::fflush(stdout);
    fmt::print(stderr, "redlab: error: {}\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fflush(stdout);
    fmt::print(stderr, "redlab: error: {}\n", e.what());
    return data;
  }
}
