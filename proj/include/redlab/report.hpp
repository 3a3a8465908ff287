#pragma once

// Markdown, CSV and SVG renderings of a FullReport, and atomic emission of an output tree.
// Markdown shows percentages rounded half-up; CSV carries full precision.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "redlab/ablate.hpp"
#include "redlab/ingest.hpp"

namespace redlab::report {

enum class Format { md, csv, all };

inline std::optional<Format> parse_format(std::string_view s) {
  if (s == "md") return Format::md;
  if (s == "csv") return Format::csv;
  if (s == "all") return Format::all;
  return std::nullopt;
}

/// Half-up rounding to `decimals` places. A 1e-9 nudge on the scaled value lets decimal
/// ties that are not exactly representable (x.xx5) round up.
inline double round_half_up(double x, int decimals) {
  double scale = std::pow(10.0, decimals);
  double r = std::floor(x * scale + 0.5 + 1e-9) / scale;
  return r == 0.0 ? 0.0 : r;
}

inline std::string fixed(double x, int decimals) {
  return fmt::format("{:.{}f}", round_half_up(x, decimals), decimals);
}

/// Relative change as a signed percentage with one decimal, e.g. "+2.6%" or "-6.2%".
inline std::string signed_percent(double fraction) {
  double r = round_half_up(fraction * 100.0, 1);
  return fmt::format("{}{:.1f}%", r > 0.0 ? "+" : "", r);
}

using ingest::format_number;

namespace detail {

inline std::string csv_header(std::string_view columns) { return fmt::format("{}\n{}\n", ingest::kVersionLine, columns); }

}  // namespace detail

// ---------------------------------------------------------------------------
// CUR / IG

inline std::string cur_table_md(const CurReport& cur) {
  std::string out = "| Category | n' |";
  for (const auto& e : cur.encoders) out += fmt::format(" {} |", e.name);
  out += " IG |\n|---|---:|";
  for (std::size_t i = 0; i < cur.encoders.size(); ++i) out += "---:|";
  out += "---:|\n";
  for (const auto& row : cur.rows) {
    out += fmt::format("| {} | {} |", to_string(row.category), row.subset_size);
    for (const auto& v : row.cur) out += v ? fmt::format(" {} |", fixed(*v * 100.0, 2)) : std::string(" n/a |");
    out += row.ig ? fmt::format(" {} |\n", fixed(*row.ig * 100.0, 2)) : std::string(" n/a |\n");
  }
  return out;
}

inline std::string cur_ig_md(const ablate::FullReport& r, CurRule primary) {
  CurRule other = primary == CurRule::per_subset_mean ? CurRule::mean_of_scores : CurRule::per_subset_mean;
  std::string out = fmt::format("# CUR and IG: {}\n\n", r.model_name);
  out += fmt::format("Values in %. Rule for n' below the full set: {}.\n\n", to_string(primary));
  if (r.encoders.size() < 2) {
    out += "Fewer than two encoders: no CUR or IG rows.\n";
  } else {
    out += cur_table_md(r.cur_for(primary));
    out += fmt::format("\n## Rule {}\n\n", to_string(other));
    out += cur_table_md(r.cur_for(other));
  }
  out += "\n## Notes\n\n";
  out += "- Rows at the full set size are exact leave-one-out values and do not depend on the rule.\n";
  out += "- per-subset-mean averages cur(S, S minus i) over every size-n' subset S holding encoder i.\n";
  out += "- mean-of-scores applies cur to the mean score of those subsets and the mean score with i masked.\n";
  out += "- Below the full size the two rules can differ by several points; compare both before drawing "
         "conclusions.\n";
  for (const auto& note : r.cur_for(primary).coverage_notes) out += fmt::format("- Coverage: {}\n", note);
  return out;
}

inline std::string cur_ig_csv(const ablate::FullReport& r) {
  std::string cols = "rule,category,n";
  for (const auto& e : r.encoders) cols += "," + e.name;
  cols += ",ig";
  std::string out = detail::csv_header(cols);
  for (const auto& cur : r.cur) {
    for (const auto& row : cur.rows) {
      out += fmt::format("{},{},{}", to_string(cur.rule), to_string(row.category), row.subset_size);
      for (const auto& v : row.cur) out += "," + (v ? format_number(*v * 100.0) : std::string());
      out += "," + (row.ig ? format_number(*row.ig * 100.0) : std::string()) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Degradation

inline std::string degradation_md(const ablate::FullReport& r) {
  const auto& summary = *r.degradation;
  const int n = static_cast<int>(r.encoders.size());
  std::vector<metrics::Scope> scopes = r.scores.scopes();
  std::string out = fmt::format("# Score vs. number of masked encoders: {}\n\n", r.model_name);
  out += "Mean over all subsets with k encoders masked; relative change against the full set.\n\n";
  out += "| #Masked |";
  for (const auto& s : scopes) out += fmt::format(" {} |", metrics::scope_name(s));
  out += "\n|---|";
  for (std::size_t i = 0; i < scopes.size(); ++i) out += "---:|";
  out += "\n";
  auto cell_for = [&](const metrics::Scope& s, int k) -> const metrics::DegradationCell* {
    for (const auto& c : summary.at(s).cells)
      if (c.masked == k) return &c;
    return nullptr;
  };
  for (int k = 0; k <= n; ++k) {
    out += k == 0 ? std::string("| 0 (baseline) |") : fmt::format("| {} |", k);
    for (const auto& s : scopes) {
      const auto* c = cell_for(s, k);
      if (!c) {
        out += " n/a |";
      } else if (k == 0 || !c->relative) {
        out += fmt::format(" {} |", fixed(c->mean, 2));
      } else {
        out += fmt::format(" {} ({}) |", fixed(c->mean, 2), signed_percent(*c->relative));
      }
    }
    out += "\n";
  }
  out += "\n## Overall max / min / mean\n\n| | ";
  for (int k = 0; k <= n; ++k) out += fmt::format("{} | ", k);
  out += "\n|---|";
  for (int k = 0; k <= n; ++k) out += "---:|";
  out += "\n";
  for (const char* stat : {"max", "min", "mean"}) {
    out += fmt::format("| {} |", stat);
    for (int k = 0; k <= n; ++k) {
      const auto* c = cell_for(std::nullopt, k);
      if (!c) {
        out += " n/a |";
        continue;
      }
      double v = stat[1] == 'a' ? c->max : stat[1] == 'i' ? c->min : c->mean;
      out += fmt::format(" {} |", fixed(v, 2));
    }
    out += "\n";
  }
  return out;
}

inline std::string degradation_csv(const ablate::FullReport& r) {
  std::string out =
      detail::csv_header("scope,masked,count,expected,mean,max,min,relative_pct,argmax,argmin");
  for (const auto& series : r.degradation->series) {
    for (const auto& c : series.cells) {
      out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", metrics::scope_name(series.scope), c.masked, c.count,
                         c.expected, format_number(c.mean), format_number(c.max), format_number(c.min),
                         c.relative ? format_number(*c.relative * 100.0) : std::string(),
                         subset_label(c.argmax, r.encoders), subset_label(c.argmin, r.encoders));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extremes and distributions

inline std::string extremes_csv(const ablate::FullReport& r) {
  std::string out = detail::csv_header("scope,encoder,pool,count,max,argmax,min,argmin");
  for (const auto& x : r.extremes) {
    for (const auto& [label, pool] : {std::pair{"with", &x.with}, std::pair{"without", &x.without}}) {
      out += fmt::format("{},{},{},{},{},{},{},{}\n", metrics::scope_name(x.scope), r.encoders[x.encoder].name,
                         label, pool->count, format_number(pool->max), subset_label(pool->argmax, r.encoders),
                         format_number(pool->min), subset_label(pool->argmin, r.encoders));
    }
  }
  return out;
}

/// One row per (scope, subset): the score lists behind the box plots.
inline std::string distribution_csv(const ablate::FullReport& r) {
  std::string out = detail::csv_header("scope,masked,active_encoders,score");
  const int n = static_cast<int>(r.encoders.size());
  for (const auto& scope : r.scores.scopes()) {
    const auto& series = r.scores.series(scope);
    for (int k = 0; k <= n; ++k)
      for (const auto& [subset, score] : series)
        if (n - subset.size() == k)
          out += fmt::format("{},{},{},{}\n", metrics::scope_name(scope), k, subset_label(subset, r.encoders),
                             format_number(score));
  }
  return out;
}

/// Linear-interpolation quantile of sorted values.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw PreconditionError("quantile of an empty list");
  double pos = q * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Static box plot of overall score per number of masked encoders.
inline std::string distribution_svg(const ablate::FullReport& r) {
  const int n = static_cast<int>(r.encoders.size());
  std::vector<std::vector<double>> groups(n + 1);
  for (const auto& [subset, score] : r.scores.overall) groups[n - subset.size()].push_back(score);
  double lo = 0.0, hi = 1.0;
  bool first = true;
  for (auto& g : groups) {
    std::sort(g.begin(), g.end());
    if (g.empty()) continue;
    lo = first ? g.front() : std::min(lo, g.front());
    hi = first ? g.back() : std::max(hi, g.back());
    first = false;
  }
  double pad = std::max(1.0, (hi - lo) * 0.08);
  lo = std::floor((lo - pad) / 5.0) * 5.0;
  hi = std::ceil((hi + pad) / 5.0) * 5.0;

  const double width = 640, height = 400, left = 60, right = 20, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto ypos = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };
  const double slot = plot_w / (n + 1), box_w = std::min(40.0, slot * 0.5);
  auto num = [](double v) { return fmt::format("{:.2f}", v); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      width, height);
  s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", width, height);
  s += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}: overall score by "
                   "number of masked encoders</text>\n",
                   width / 2, r.model_name);
  double step = (hi - lo) / 5.0;
  for (int t = 0; t <= 5; ++t) {
    double v = lo + step * t;
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n", left, num(ypos(v)),
                     width - right, num(ypos(v)));
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", left - 6, num(ypos(v) + 4),
                     fixed(v, 1));
  }
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top,
                   height - bottom);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left,
                   height - bottom, width - right);
  for (int k = 0; k <= n; ++k) {
    double cx = left + slot * (k + 0.5);
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", num(cx), height - bottom + 18,
                     k);
    const auto& g = groups[k];
    if (g.empty()) continue;
    double q1 = quantile(g, 0.25), med = quantile(g, 0.5), q3 = quantile(g, 0.75);
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", num(cx),
                     num(ypos(g.back())), num(ypos(g.front())));
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9ecae1\" stroke=\"black\"/>\n",
                     num(cx - box_w / 2), num(ypos(q3)), num(box_w), num(std::max(ypos(q1) - ypos(q3), 0.5)));
    s += fmt::format("<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"black\" stroke-width=\"2\"/>\n",
                     num(cx - box_w / 2), num(cx + box_w / 2), num(ypos(med)));
    for (double v : g)
      s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"#08519c\"/>\n", num(cx), num(ypos(v)));
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">#masked encoders</text>\n", left + plot_w / 2,
                   height - 12);
  s += "</svg>\n";
  return s;
}

// ---------------------------------------------------------------------------
// Summary and simulator outputs

inline std::string summary_md(const ablate::FullReport& r) {
  std::string out = fmt::format("# Redundancy summary: {}\n\n", r.model_name);
  const int n = static_cast<int>(r.encoders.size());
  out += fmt::format("Encoders ({}): {}\n\n", n, subset_label(EncoderSubset::full(n), r.encoders, ", "));
  if (r.redundancy) {
    const auto& red = *r.redundancy;
    out += fmt::format("Redundancy flag: **{}** (epsilon {})\n\n", red.flagged ? "RAISED" : "not raised",
                       format_number(red.epsilon));
    out += fmt::format("- Full set overall score: {}\n", fixed(red.full_score, 2));
    if (red.witness)
      out += fmt::format("- Best proper subset: {} with {} active, overall {}\n",
                         subset_label(*red.witness, r.encoders), red.witness->size(), fixed(red.witness_score, 2));
    out += "\n| Active | Best subset | Overall | Drop vs. full |\n|---:|---|---:|---:|\n";
    for (const auto& b : red.best_by_size)
      out += fmt::format("| {} | {} | {} | {} |\n", b.size, subset_label(b.subset, r.encoders), fixed(b.score, 2),
                         signed_percent(-b.relative_drop));
  } else {
    out += "Redundancy flag: not evaluated (full-set score missing).\n";
  }
  out += "\n## Coverage\n\n";
  if (r.gaps.empty()) out += "Complete: every subset and category is present.\n";
  for (const auto& g : r.gaps) out += fmt::format("- {}\n", g);
  return out;
}

inline std::string loss_curve_csv(const std::vector<double>& losses) {
  std::string out = detail::csv_header("step,loss");
  for (std::size_t i = 0; i < losses.size(); ++i) out += fmt::format("{},{}\n", i, format_number(losses[i]));
  return out;
}

using FileSet = std::map<std::string, std::string>;

inline FileSet render(const ablate::FullReport& r, Format format, CurRule rule) {
  FileSet files;
  bool md = format != Format::csv, csv = format != Format::md;
  if (md) {
    files["cur_ig.md"] = cur_ig_md(r, rule);
    files["degradation.md"] = degradation_md(r);
    files["summary.md"] = summary_md(r);
  }
  if (csv) {
    files["cur_ig.csv"] = cur_ig_csv(r);
    files["degradation.csv"] = degradation_csv(r);
    files["extremes.csv"] = extremes_csv(r);
    files["distribution.csv"] = distribution_csv(r);
    files["distribution.svg"] = distribution_svg(r);
  }
  return files;
}

/// Writes every file to a temporary name first and renames only once all writes succeed.
inline void write_tree(const std::filesystem::path& dir, const FileSet& files) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw PreconditionError(fmt::format("cannot create output directory {}: {}", dir.string(), ec.message()));
  std::vector<std::pair<fs::path, fs::path>> staged;
  auto cleanup = [&] {
    for (const auto& [tmp, _] : staged) fs::remove(tmp, ec);
  };
  for (const auto& [name, content] : files) {
    fs::path final_path = dir / name;
    fs::path tmp = dir / ("." + name + ".tmp");
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    staged.emplace_back(tmp, final_path);
    out << content;
    out.close();
    if (!out) {
      cleanup();
      throw PreconditionError(fmt::format("cannot write {}", tmp.string()));
    }
  }
  for (std::size_t i = 0; i < staged.size(); ++i) {
    const auto& [tmp, final_path] = staged[i];
    fs::rename(tmp, final_path, ec);
    if (ec) {
      auto message = fmt::format("cannot rename {}: {}", tmp.string(), ec.message());
      for (std::size_t j = 0; j < i; ++j) fs::remove(staged[j].second, ec);
      cleanup();
      throw PreconditionError(message);
    }
  }
}

}  // namespace redlab::report
