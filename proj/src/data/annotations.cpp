#include <charconv>
#include <cstdint>
#include <optional>
#include <cmath>
#include <string>
#include <system_error>

#include "balign/datasets.hpp"
#include "balign/errors.hpp"

namespace balign {
namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> split_char(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = s.find(sep, start);
    if (end == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
}

std::optional<double> to_real(std::string_view tok) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  if (tok.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<long long> to_int(std::string_view tok) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  if (tok.empty()) return std::nullopt;
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

std::string quoted(std::string_view tok) {
  std::string s;
  for (char c : tok.substr(0, 32)) s += (c >= 0x20 && c < 0x7f) ? c : '?';
  return "'" + s + "'";
}

// "key: value" header line of a .pts file.
std::string_view header_value(std::string_view line, std::string_view key, int lineno) {
  line = trim(line);
  const std::size_t colon = line.find(':');
  if (colon == std::string_view::npos || trim(line.substr(0, colon)) != key)
    throw ParseError("expected '" + std::string(key) + ": ...' header", lineno);
  return trim(line.substr(colon + 1));
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<Point> parse_pts(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t i = 0;
  auto next_nonblank = [&]() -> int {
    while (i < lines.size() && trim(lines[i]).empty()) ++i;
    return i < lines.size() ? static_cast<int>(i) : -1;
  };

  int ln = next_nonblank();
  if (ln < 0) throw ParseError("empty .pts text", 0);
  const auto version = header_value(lines[ln], "version", ln + 1);
  if (version != "1" && version != "1.0") throw ParseError("unsupported version " + quoted(version), ln + 1);
  ++i;

  ln = next_nonblank();
  if (ln < 0) throw ParseError("missing n_points header", static_cast<int>(lines.size()));
  const auto count_tok = header_value(lines[ln], "n_points", ln + 1);
  const auto count = to_int(count_tok);
  if (!count || *count < 0 || *count > 1000000) throw ParseError("bad n_points value " + quoted(count_tok), ln + 1);
  ++i;

  ln = next_nonblank();
  if (ln < 0 || trim(lines[ln]) != "{") throw ParseError("expected '{'", ln < 0 ? static_cast<int>(lines.size()) : ln + 1);
  ++i;

  std::vector<Point> points;
  points.reserve(static_cast<std::size_t>(*count));
  bool closed = false;
  for (; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    const int lineno = static_cast<int>(i) + 1;
    if (line.empty()) continue;
    if (line == "}") {
      closed = true;
      ++i;
      break;
    }
    const auto toks = split_ws(line);
    if (toks.size() != 2) throw ParseError("expected two coordinates, found " + std::to_string(toks.size()) + " tokens", lineno);
    const auto x = to_real(toks[0]);
    if (!x) throw ParseError("non-numeric token " + quoted(toks[0]), lineno);
    const auto y = to_real(toks[1]);
    if (!y) throw ParseError("non-numeric token " + quoted(toks[1]), lineno);
    points.push_back({*x - 1.0, *y - 1.0});
  }
  if (!closed) throw ParseError("missing closing '}'", static_cast<int>(lines.size()));
  if (static_cast<long long>(points.size()) != *count)
    throw ParseError("expected " + std::to_string(*count) + " points, found " + std::to_string(points.size()),
                     static_cast<int>(i));
  for (; i < lines.size(); ++i)
    if (!trim(lines[i]).empty()) throw ParseError("unexpected content after '}'", static_cast<int>(i) + 1);
  return points;
}

std::string write_pts(const std::vector<Point>& points) {
  std::string out = "version: 1\nn_points: " + std::to_string(points.size()) + "\n{\n";
  for (const auto& p : points) out += format_real(p.x + 1.0) + " " + format_real(p.y + 1.0) + "\n";
  out += "}\n";
  return out;
}

WflwRecord parse_wflw_line(std::string_view line) {
  const auto toks = split_ws(trim(line));
  if (toks.size() != static_cast<std::size_t>(kWflwFields))
    throw ParseError("expected " + std::to_string(kWflwFields) + " fields, found " + std::to_string(toks.size()), 1);
  WflwRecord rec;
  rec.points.resize(kWflwLandmarks);
  std::size_t t = 0;
  for (int k = 0; k < kWflwLandmarks; ++k) {
    const auto x = to_real(toks[t]);
    if (!x) throw ParseError("field " + std::to_string(t + 1) + ": non-numeric token " + quoted(toks[t]), 1);
    const auto y = to_real(toks[t + 1]);
    if (!y) throw ParseError("field " + std::to_string(t + 2) + ": non-numeric token " + quoted(toks[t + 1]), 1);
    rec.points[k] = {*x, *y};
    t += 2;
  }
  for (int k = 0; k < 4; ++k, ++t) {
    const auto v = to_int(toks[t]);
    if (!v || *v < INT32_MIN || *v > INT32_MAX)
      throw ParseError("field " + std::to_string(t + 1) + ": expected integer, found " + quoted(toks[t]), 1);
    rec.rect[k] = static_cast<int>(*v);
  }
  for (int k = 0; k < 6; ++k, ++t) {
    if (toks[t] != "0" && toks[t] != "1")
      throw ParseError("field " + std::to_string(t + 1) + ": attribute flag must be 0 or 1, found " + quoted(toks[t]), 1);
    rec.attributes[k] = toks[t] == "1" ? 1 : 0;
  }
  rec.filename = std::string(toks[t]);
  return rec;
}

std::string write_wflw_line(const WflwRecord& record) {
  if (record.points.size() != static_cast<std::size_t>(kWflwLandmarks))
    throw DataError("WFLW record needs 98 points, has " + std::to_string(record.points.size()));
  std::string out;
  for (const auto& p : record.points) out += format_real(p.x) + " " + format_real(p.y) + " ";
  for (int v : record.rect) out += std::to_string(v) + " ";
  for (int v : record.attributes) out += std::to_string(v) + " ";
  out += record.filename;
  return out;
}

std::vector<AflwRecord> parse_aflw_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]).empty()) throw ParseError("missing CSV header", 1);
  const auto header = split_char(trim(lines[0]), ',');
  // path, 2L landmark columns, 4 bbox columns
  if (header.size() < 7 || (header.size() - 5) % 2 != 0 || trim(header[0]) != "path")
    throw ParseError("header must be path,l0x,l0y,...,bx,by,bw,bh", 1);
  const std::size_t n_landmarks = (header.size() - 5) / 2;
  for (std::size_t k = 0; k < n_landmarks; ++k) {
    const std::string ex = "l" + std::to_string(k) + "x", ey = "l" + std::to_string(k) + "y";
    if (trim(header[1 + 2 * k]) != ex || trim(header[2 + 2 * k]) != ey)
      throw ParseError("header column " + std::to_string(2 + 2 * k) + " should be " + ex, 1);
  }
  const char* bbox_names[4] = {"bx", "by", "bw", "bh"};
  for (int k = 0; k < 4; ++k)
    if (trim(header[1 + 2 * n_landmarks + k]) != bbox_names[k])
      throw ParseError(std::string("header column should be ") + bbox_names[k], 1);

  std::vector<AflwRecord> records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    const int lineno = static_cast<int>(i) + 1;
    if (line.empty()) continue;
    const auto cells = split_char(line, ',');
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()),
                       lineno);
    AflwRecord rec;
    rec.path = std::string(trim(cells[0]));
    if (rec.path.empty()) throw ParseError("empty path", lineno);
    std::vector<double> vals;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto v = to_real(trim(cells[c]));
      if (!v) throw ParseError("column " + std::to_string(c + 1) + ": non-numeric token " + quoted(trim(cells[c])), lineno);
      vals.push_back(*v);
    }
    for (std::size_t k = 0; k < n_landmarks; ++k) rec.points.push_back({vals[2 * k], vals[2 * k + 1]});
    const std::size_t b = 2 * n_landmarks;
    rec.bbox = {vals[b], vals[b + 1], vals[b + 2], vals[b + 3]};
    if (rec.bbox.w <= 0 || rec.bbox.h <= 0) throw ParseError("bbox width and height must be positive", lineno);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace balign
