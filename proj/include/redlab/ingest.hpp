#pragma once

// Delimited-text score tables and category schemes.
//
// Both formats are UTF-8, comma-separated, '.' decimal separator, and open with the
// version line "# redundancy-lab v1". Further "# key: value" comment lines carry
// optional metadata; other comment lines are ignored. A header row is required.
//
//   score table:      model,masked_encoders,benchmark,score
//   category scheme:  benchmark,category,divisor
//
// masked_encoders lists MASKED encoders joined by ';' ("-" for none). Tables are keyed
// internally by the complementary ACTIVE set.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <fmt/core.h>

#include "redlab/core.hpp"

namespace redlab::ingest {

inline constexpr std::string_view kVersionLine = "# redundancy-lab v1";

struct DelimitedRow {
  int line = 0;
  std::vector<std::string> fields;
};

struct DelimitedText {
  std::map<std::string, std::string> metadata;
  std::vector<std::string> header;
  std::vector<DelimitedRow> rows;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(delim, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Shortest decimal form that parses back to exactly `v`.
inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw NumericalError("number formatting failed");
  return std::string(buf, ptr);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Splits versioned delimited text into metadata, header and rows. Every data row must
/// have as many fields as the header.
inline DelimitedText read_delimited(std::string_view text, std::string_view source = "<input>") {
  DelimitedText out;
  bool seen_version = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    auto raw = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    auto line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (!seen_version) {
        if (line != kVersionLine)
          throw ParseError(fmt::format("{}:{}: expected '{}' as first line", source, line_no, kVersionLine));
        seen_version = true;
        continue;
      }
      auto body = detail::trim(std::string_view(line).substr(1));
      auto colon = body.find(':');
      if (colon != std::string::npos && out.header.empty())
        out.metadata[detail::trim(std::string_view(body).substr(0, colon))] =
            detail::trim(std::string_view(body).substr(colon + 1));
      continue;
    }
    if (!seen_version)
      throw ParseError(fmt::format("{}:{}: missing version line '{}'", source, line_no, kVersionLine));
    auto fields = detail::split(line, ',');
    if (out.header.empty()) {
      out.header = std::move(fields);
      continue;
    }
    if (fields.size() != out.header.size())
      throw ParseError(fmt::format("{}:{}: expected {} fields, got {}", source, line_no,
                                   out.header.size(), fields.size()));
    out.rows.push_back({line_no, std::move(fields)});
  }
  if (!seen_version) throw ParseError(fmt::format("{}: empty file", source));
  if (out.header.empty()) throw ParseError(fmt::format("{}: missing header row", source));
  return out;
}

// ---------------------------------------------------------------------------
// Score tables

/// One file row, before resolution against an encoder list.
struct RawScoreRecord {
  std::string model;
  std::vector<std::string> masked_encoders;
  std::string benchmark_or_category;
  double score = 0.0;
  int line = 0;
};

struct ScoreFile {
  std::map<std::string, std::string> metadata;
  std::vector<RawScoreRecord> records;
};

inline ScoreFile parse_score_records(std::string_view text, std::string_view source = "<input>") {
  auto doc = read_delimited(text, source);
  const std::vector<std::string> expected{"model", "masked_encoders", "benchmark", "score"};
  if (doc.header != expected)
    throw ParseError(fmt::format("{}: header must be 'model,masked_encoders,benchmark,score'", source));
  if (doc.rows.empty()) throw ParseError(fmt::format("{}: no data rows", source));

  ScoreFile out;
  out.metadata = std::move(doc.metadata);
  for (auto& row : doc.rows) {
    RawScoreRecord rec;
    rec.line = row.line;
    rec.model = row.fields[0];
    rec.benchmark_or_category = row.fields[2];
    if (rec.benchmark_or_category.empty())
      throw ParseError(fmt::format("{}:{}: empty benchmark", source, row.line));
    if (row.fields[1].empty())
      throw ParseError(fmt::format("{}:{}: empty masked_encoders field (use '-')", source, row.line));
    if (row.fields[1] != "-") {
      for (auto& name : detail::split(row.fields[1], ';')) {
        if (name.empty())
          throw ParseError(fmt::format("{}:{}: empty encoder name in masked list", source, row.line));
        if (std::find(rec.masked_encoders.begin(), rec.masked_encoders.end(), name) !=
            rec.masked_encoders.end())
          throw ParseError(fmt::format("{}:{}: encoder '{}' listed twice", source, row.line, name));
        rec.masked_encoders.push_back(std::move(name));
      }
    }
    auto score = parse_number(row.fields[3]);
    if (!score || !std::isfinite(*score))
      throw ParseError(fmt::format("{}:{}: bad score '{}'", source, row.line, row.fields[3]));
    rec.score = *score;
    out.records.push_back(std::move(rec));
  }
  return out;
}

/// Resolves raw records against `encoder_order`. Partial tables (missing subsets) are
/// accepted; ScoreTable::subsets_missing() reports the gaps.
inline ScoreTable build_score_table(const ScoreFile& file, const std::vector<std::string>& encoder_order,
                                    Granularity granularity, std::string_view source = "<input>") {
  auto ids = make_encoder_ids(encoder_order);
  const int n = static_cast<int>(ids.size());
  const auto& model = file.records.front().model;
  ScoreTable table(model, ids, granularity);
  for (const auto& rec : file.records) {
    if (rec.model != model)
      throw ParseError(fmt::format("{}:{}: model '{}' differs from '{}'", source, rec.line, rec.model, model));
    std::uint32_t masked = 0;
    for (const auto& name : rec.masked_encoders) {
      auto idx = table.encoder_index(name);
      if (!idx) throw ParseError(fmt::format("{}:{}: unknown encoder '{}'", source, rec.line, name));
      masked |= std::uint32_t{1} << *idx;
    }
    auto active = EncoderSubset(masked, n).complement();
    if (granularity == Granularity::per_category && !parse_category(rec.benchmark_or_category))
      throw ParseError(fmt::format("{}:{}: '{}' is not a category", source, rec.line, rec.benchmark_or_category));
    if (table.score(active, rec.benchmark_or_category))
      throw ParseError(fmt::format("{}:{}: duplicate entry for masked={} / '{}'", source, rec.line,
                                   subset_label(active.complement(), ids), rec.benchmark_or_category));
    table.insert(active, rec.benchmark_or_category, rec.score);
  }
  return table;
}

/// Parses a table whose encoder order and granularity come from the file's
/// "# encoders:" and "# granularity:" metadata unless given explicitly.
inline ScoreTable parse_score_table(std::string_view text,
                                    std::optional<std::vector<std::string>> encoder_order = std::nullopt,
                                    std::optional<Granularity> granularity = std::nullopt,
                                    std::string_view source = "<input>") {
  auto file = parse_score_records(text, source);
  if (!encoder_order) {
    auto it = file.metadata.find("encoders");
    if (it == file.metadata.end())
      throw ParseError(fmt::format("{}: no encoder order given and no '# encoders:' line", source));
    encoder_order = detail::split(it->second, ';');
  }
  if (!granularity) {
    auto it = file.metadata.find("granularity");
    granularity = Granularity::per_benchmark;
    if (it != file.metadata.end()) {
      granularity = parse_granularity(it->second);
      if (!granularity) throw ParseError(fmt::format("{}: bad granularity '{}'", source, it->second));
    }
  }
  return build_score_table(file, *encoder_order, *granularity, source);
}

inline ScoreTable load_score_table(const std::string& path, const std::vector<std::string>& encoder_order,
                                   Granularity granularity) {
  return parse_score_table(read_file(path), encoder_order, granularity, path);
}

inline ScoreTable load_score_table(const std::string& path) {
  return parse_score_table(read_file(path), std::nullopt, std::nullopt, path);
}

inline std::string write_score_table(const ScoreTable& table) {
  for (const auto& e : table.encoders())
    if (e.name.find_first_of(",;#") != std::string::npos || e.name == "-")
      throw PreconditionError(fmt::format("encoder name '{}' cannot be written", e.name));
  std::string out(kVersionLine);
  out += "\n# encoders: ";
  for (std::size_t i = 0; i < table.encoders().size(); ++i)
    out += (i ? ";" : "") + table.encoders()[i].name;
  out += fmt::format("\n# granularity: {}\nmodel,masked_encoders,benchmark,score\n", to_string(table.granularity()));
  for (const auto& [key, score] : table.entries()) {
    if (key.benchmark.find(',') != std::string::npos)
      throw PreconditionError(fmt::format("benchmark name '{}' contains a comma", key.benchmark));
    out += fmt::format("{},{},{},{}\n", table.model_name(),
                       subset_label(key.subset.complement(), table.encoders()), key.benchmark,
                       format_number(score));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Category schemes

/// The divisor column may be left empty (defaults to 1).
inline CategoryScheme parse_category_scheme(std::string_view text, std::string_view source = "<input>") {
  auto doc = read_delimited(text, source);
  if (doc.header.size() < 2 || doc.header[0] != "benchmark" || doc.header[1] != "category" ||
      (doc.header.size() == 3 && doc.header[2] != "divisor") || doc.header.size() > 3)
    throw ParseError(fmt::format("{}: header must be 'benchmark,category[,divisor]'", source));
  CategoryScheme scheme;
  for (const auto& row : doc.rows) {
    auto cat = parse_category(row.fields[1]);
    if (!cat) throw ParseError(fmt::format("{}:{}: unknown category '{}'", source, row.line, row.fields[1]));
    double divisor = 1.0;
    if (row.fields.size() == 3 && !row.fields[2].empty()) {
      auto d = parse_number(row.fields[2]);
      if (!d) throw ParseError(fmt::format("{}:{}: bad divisor '{}'", source, row.line, row.fields[2]));
      divisor = *d;
    }
    if (!(divisor > 0.0) || !std::isfinite(divisor))
      throw ParseError(fmt::format("{}:{}: divisor must be positive, got '{}'", source, row.line, row.fields[2]));
    if (auto prev = scheme.lookup(row.fields[0]); prev && prev->category != *cat)
      throw ParseError(fmt::format("{}:{}: benchmark '{}' assigned to two categories", source, row.line,
                                   row.fields[0]));
    scheme.assign(row.fields[0], *cat, divisor);
  }
  return scheme;
}

inline CategoryScheme load_category_scheme(const std::string& path) {
  return parse_category_scheme(read_file(path), path);
}

inline std::string write_category_scheme(const CategoryScheme& scheme) {
  std::string out(kVersionLine);
  out += "\nbenchmark,category,divisor\n";
  for (auto cat : kAllCategories)
    for (const auto& [name, entry] : scheme.mapping())
      if (entry.category == cat)
        out += fmt::format("{},{},{}\n", name, to_string(cat), format_number(entry.divisor));
  return out;
}

}  // namespace redlab::ingest
