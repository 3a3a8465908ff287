#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "redlab/ingest.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = REDLAB_CLI;
const std::string kData = REDLAB_DATA_DIR;

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  std::string cmd = kCli + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("redlab_cli_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

const char* kTiny = R"(model_name: tiny
seed: 3
world:
  channels: 8
  noise: 0.05
  tasks:
    - {name: t0, category: General, channels: [0-3], classes: 2}
    - {name: t1, category: OCR & Chart, channels: [4-7]}
encoders:
  - {name: a, visible: [0-5], tokens: 2, dim: 4}
  - {name: b, visible: [2-7], tokens: 2, dim: 4}
head: {hidden: [8]}
train: {steps: 60, batch_size: 8}
evaluation: {samples: 200, threads: 2}
)";

}  // namespace

TEST(Analyze, EagleCurTable) {
  auto out = scratch("eagle");
  auto r = run("analyze --scores " + kData + "/eagle_x5_7b.csv --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  auto md = slurp(out / "cur_ig.md");
  EXPECT_NE(md.find("| General | 5 | 1.38 | 1.94 | 0.18 | 10.09 | 0.58 | 9.91 |"), std::string::npos) << md;
  EXPECT_EQ(tree(out).size(), 8u);
  fs::remove_all(out);
}

TEST(Analyze, CambrianDegradationWithExplicitCategories) {
  auto out = scratch("cambrian");
  auto r = run("analyze --scores " + kData + "/cambrian1_8b.csv --categories " + kData +
               "/categories_default.csv --format md --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("RAISED"), std::string::npos);
  auto md = slurp(out / "degradation.md");
  EXPECT_NE(md.find("59.10 (-6.2%) |\n"), std::string::npos) << md;
  EXPECT_EQ(tree(out).size(), 3u);
  EXPECT_FALSE(fs::exists(out / "cur_ig.csv"));
  fs::remove_all(out);
}

TEST(Analyze, CurRuleFlagSelectsPrimaryTable) {
  auto out = scratch("rule");
  auto r = run("analyze --scores " + kData + "/cambrian1_8b.csv --cur-rule mean-of-scores --format md --out " +
               out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(slurp(out / "cur_ig.md").find("Rule for n' below the full set: mean-of-scores"), std::string::npos);
  fs::remove_all(out);
}

TEST(Analyze, MissingCategoryFileLeavesNothing) {
  auto out = scratch("missing");
  auto r = run("analyze --scores " + kData + "/eagle_x5_7b.csv --categories /no/such/file.csv --out " +
               out.string());
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("/no/such/file.csv"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Analyze, MalformedScoresAreDataErrors) {
  auto dir = scratch("malformed");
  write(dir / "bad.csv", "# redundancy-lab v1\n# encoders: A;B\nmodel,masked_encoders,benchmark,score\nm,-,MME,x\n");
  auto r = run("analyze --scores " + (dir / "bad.csv").string() + " --out " + (dir / "out").string());
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("bad.csv:4"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "out"));
  fs::remove_all(dir);
}

TEST(Analyze, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("analyze --out /tmp/x").code, 1);
  EXPECT_EQ(run("analyze --scores a.csv --out /tmp/x --format html").code, 1);
  EXPECT_EQ(run("analyze --scores a.csv --out /tmp/x --cur-rule median").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Selftest, FreshCheckoutPasses) {
  auto r = run("selftest --data " + kData);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("PASS grad-check cross_attention"), std::string::npos);
  EXPECT_NE(r.output.find("PASS oracle n=4 per-benchmark"), std::string::npos);
  EXPECT_NE(r.output.find("PASS fixture eagle_x5_7b.csv"), std::string::npos);
}

TEST(Selftest, TightGradToleranceFails) {
  auto r = run("selftest --grad-tol 1e-12 --data " + kData);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("FAIL grad-check"), std::string::npos) << r.output;
}

TEST(Selftest, CorruptedFixtureIsNamed) {
  auto dir = scratch("corrupt");
  fs::create_directories(dir);
  for (const auto* f : {"eagle_x5_7b.csv", "cambrian1_8b.csv", "categories_default.csv"})
    fs::copy_file(kData + "/" + f, dir / f);
  auto text = slurp(dir / "cambrian1_8b.csv");
  auto pos = text.rfind(',');
  write(dir / "cambrian1_8b.csv", text.substr(0, pos + 1) + "oops\n");
  auto r = run("selftest --data " + dir.string());
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("FAIL fixture cambrian1_8b.csv"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("PASS fixture eagle_x5_7b.csv"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Simulate, DeterministicAndReingestable) {
  auto dir = scratch("sim");
  write(dir / "tiny.yaml", kTiny);
  auto a = run("simulate --config " + (dir / "tiny.yaml").string() + " --out " + (dir / "a").string());
  auto b = run("simulate --config " + (dir / "tiny.yaml").string() + " --threads 1 --out " + (dir / "b").string());
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(b.code, 0) << b.output;
  auto ta = tree(dir / "a");
  EXPECT_EQ(ta, tree(dir / "b"));
  EXPECT_EQ(ta.size(), 11u);
  for (const auto& [name, content] : ta) {
    if (name.ends_with(".csv")) {
      EXPECT_NO_THROW(redlab::ingest::read_delimited(content, name)) << name;
    }
  }

  // The emitted table and scheme reproduce the same reports through analyze.
  auto c = run("analyze --scores " + (dir / "a" / "scores.csv").string() + " --categories " +
               (dir / "a" / "categories.csv").string() + " --out " + (dir / "c").string());
  ASSERT_EQ(c.code, 0) << c.output;
  EXPECT_EQ(slurp(dir / "c" / "cur_ig.csv"), ta.at("cur_ig.csv"));
  EXPECT_EQ(slurp(dir / "c" / "degradation.md"), ta.at("degradation.md"));

  auto d = run("simulate --config " + (dir / "tiny.yaml").string() + " --seed 4 --out " + (dir / "d").string());
  ASSERT_EQ(d.code, 0) << d.output;
  EXPECT_NE(slurp(dir / "d" / "scores.csv"), ta.at("scores.csv"));
  fs::remove_all(dir);
}

TEST(Simulate, ConfigErrorsAreUsageErrors) {
  auto dir = scratch("badcfg");
  write(dir / "bad.yaml", std::string(kTiny) + "colour: red\n");
  auto r = run("simulate --config " + (dir / "bad.yaml").string() + " --out " + (dir / "out").string());
  EXPECT_EQ(r.code, 1) << r.output;
  EXPECT_NE(r.output.find("colour"), std::string::npos);
  EXPECT_EQ(run("simulate --config /no/such.yaml --out " + (dir / "out").string()).code, 1);
  fs::remove_all(dir);
}

TEST(Simulate, DivergenceIsNumericalError) {
  auto dir = scratch("diverge");
  std::string cfg = kTiny;
  cfg.replace(cfg.find("train: {"), 8, "train: {learning_rate: 1.0e+308, momentum: 0.99, ");
  write(dir / "boom.yaml", cfg);
  auto r = run("simulate --config " + (dir / "boom.yaml").string() + " --out " + (dir / "out").string());
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("diverged"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out"));
  fs::remove_all(dir);
}
