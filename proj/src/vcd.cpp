#include "pefa/vcd.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <sstream>
#include <unordered_map>

#include "pefa/error.hpp"

namespace pefa::vcd {
namespace {

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : text_(text) {}

  std::optional<std::string_view> next() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ >= text_.size()) return std::nullopt;
    std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  // Collects tokens up to (not including) the next `$end`.
  std::optional<std::vector<std::string_view>> until_end() {
    std::vector<std::string_view> out;
    while (auto tok = next()) {
      if (*tok == "$end") return out;
      out.push_back(*tok);
    }
    return std::nullopt;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

std::optional<std::uint64_t> parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  if (s.empty()) return std::nullopt;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

Timescale parse_timescale(const std::vector<std::string_view>& toks) {
  std::string joined;
  for (auto t : toks) joined += t;
  std::size_t i = 0;
  while (i < joined.size() && std::isdigit(static_cast<unsigned char>(joined[i]))) ++i;
  auto mag = parse_uint(std::string_view(joined).substr(0, i));
  std::string unit = joined.substr(i);
  if (!mag || unit.empty()) throw Error(ErrorCode::MalformedHeader, "bad $timescale '" + joined + "'");
  return Timescale{static_cast<int>(*mag), unit};
}

std::string join_scope(const std::vector<std::string>& scopes, std::string_view leaf) {
  std::string out;
  for (const auto& s : scopes) {
    out += s;
    out += '.';
  }
  out += leaf;
  return out;
}

bool is_scalar_value_char(char c) {
  switch (c) {
    case '0': case '1': case 'x': case 'X': case 'z': case 'Z': return true;
    default: return false;
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool valid_bits(std::string_view v) {
  return !v.empty() && std::all_of(v.begin(), v.end(), [](char c) {
    return c == '0' || c == '1' || c == 'x' || c == 'z';
  });
}

}  // namespace

VcdDocument parse_vcd(std::string_view text) {
  VcdDocument doc;
  Tokenizer tz(text);
  std::vector<std::string> scopes;
  std::unordered_map<std::string, int> widths;  // id -> width of first declaration
  bool header_done = false;

  while (!header_done) {
    auto tok = tz.next();
    if (!tok) throw Error(ErrorCode::MalformedHeader, "missing $enddefinitions");
    if (tok->empty() || tok->front() != '$') {
      throw Error(ErrorCode::MalformedHeader, "unexpected token '" + std::string(*tok) + "' in header");
    }
    auto body = tz.until_end();
    if (!body) throw Error(ErrorCode::MalformedHeader, "unterminated " + std::string(*tok));
    if (*tok == "$enddefinitions") {
      header_done = true;
    } else if (*tok == "$timescale") {
      doc.timescale = parse_timescale(*body);
    } else if (*tok == "$scope") {
      if (body->empty()) throw Error(ErrorCode::MalformedHeader, "$scope without name");
      scopes.emplace_back(body->back());
    } else if (*tok == "$upscope") {
      if (scopes.empty()) throw Error(ErrorCode::MalformedHeader, "$upscope at top level");
      scopes.pop_back();
    } else if (*tok == "$var") {
      if (body->size() < 4) throw Error(ErrorCode::MalformedHeader, "short $var declaration");
      auto width = parse_uint((*body)[1]);
      if (!width || *width == 0) {
        throw Error(ErrorCode::MalformedHeader, "bad $var width '" + std::string((*body)[1]) + "'");
      }
      Signal sig;
      sig.var_type = std::string((*body)[0]);
      sig.width = static_cast<int>(*width);
      sig.id_code = std::string((*body)[2]);
      sig.name = join_scope(scopes, (*body)[3]);
      for (std::size_t i = 4; i < body->size(); ++i) {
        if (!sig.bit_range.empty()) sig.bit_range += ' ';
        sig.bit_range += (*body)[i];
      }
      widths.emplace(sig.id_code, sig.width);
      doc.signals.push_back(std::move(sig));
    }
    // $date, $version, $comment and unknown header sections carry no signal data.
  }

  Time now = 0;
  auto record = [&](std::string_view id, std::string value) {
    auto it = widths.find(std::string(id));
    if (it == widths.end()) throw Error(ErrorCode::UnknownIdCode, "'" + std::string(id) + "'");
    if (!valid_bits(value) || static_cast<int>(value.size()) > it->second) {
      throw Error(ErrorCode::MalformedRecord,
                  "value '" + value + "' invalid for " + std::to_string(it->second) + "-bit id '" + std::string(id) + "'");
    }
    doc.changes.push_back(ValueChange{now, std::string(id), std::move(value)});
  };

  while (auto tok = tz.next()) {
    const char c = tok->front();
    if (c == '#') {
      auto t = parse_uint(tok->substr(1));
      if (!t) throw Error(ErrorCode::MalformedRecord, "bad timestamp '" + std::string(*tok) + "'");
      if (*t < now) {
        throw Error(ErrorCode::NonMonotonicTime, std::to_string(*t) + " after " + std::to_string(now));
      }
      now = *t;
    } else if (c == '$') {
      if (*tok == "$comment") {
        if (!tz.until_end()) throw Error(ErrorCode::MalformedRecord, "unterminated $comment");
      }
      // $dumpvars / $dumpall / $dumpon / $dumpoff / $end only bracket ordinary changes.
    } else if (c == 'b' || c == 'B') {
      auto id = tz.next();
      if (!id) throw Error(ErrorCode::MalformedRecord, "vector change without id code");
      record(*id, lower(tok->substr(1)));
    } else if (c == 'r' || c == 'R') {
      // Real-valued changes are outside the supported 4-state subset.
      if (!tz.next()) throw Error(ErrorCode::MalformedRecord, "real change without id code");
    } else if (is_scalar_value_char(c)) {
      if (tok->size() < 2) throw Error(ErrorCode::MalformedRecord, "scalar change without id code");
      record(tok->substr(1), lower(tok->substr(0, 1)));
    } else {
      throw Error(ErrorCode::MalformedRecord, "unexpected token '" + std::string(*tok) + "'");
    }
  }
  return doc;
}

std::string serialize_vcd(const VcdDocument& doc) {
  std::ostringstream os;
  os << "$timescale " << doc.timescale.magnitude << doc.timescale.unit << " $end\n";
  std::vector<std::string> open;
  for (const auto& sig : doc.signals) {
    std::vector<std::string> path;
    std::string leaf;
    {
      std::string part;
      std::stringstream ss(sig.name);
      while (std::getline(ss, part, '.')) path.push_back(part);
      leaf = path.back();
      path.pop_back();
    }
    std::size_t common = 0;
    while (common < open.size() && common < path.size() && open[common] == path[common]) ++common;
    while (open.size() > common) {
      os << "$upscope $end\n";
      open.pop_back();
    }
    for (std::size_t i = common; i < path.size(); ++i) {
      os << "$scope module " << path[i] << " $end\n";
      open.push_back(path[i]);
    }
    os << "$var " << sig.var_type << ' ' << sig.width << ' ' << sig.id_code << ' ' << leaf;
    if (!sig.bit_range.empty()) os << ' ' << sig.bit_range;
    os << " $end\n";
  }
  while (!open.empty()) {
    os << "$upscope $end\n";
    open.pop_back();
  }
  os << "$enddefinitions $end\n";

  std::unordered_map<std::string, int> widths;
  for (const auto& s : doc.signals) widths.emplace(s.id_code, s.width);
  std::optional<Time> last;
  for (const auto& ch : doc.changes) {
    if (!last || *last != ch.time) {
      os << '#' << ch.time << '\n';
      last = ch.time;
    }
    auto it = widths.find(ch.id_code);
    const bool scalar = it != widths.end() && it->second == 1 && ch.value.size() == 1;
    if (scalar) {
      os << ch.value << ch.id_code << '\n';
    } else {
      os << 'b' << ch.value << ' ' << ch.id_code << '\n';
    }
  }
  return os.str();
}

std::optional<std::size_t> SignalTable::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  // Fall back to a unique hierarchical-suffix match ("out" finds "tb.out").
  std::optional<std::size_t> found;
  const std::string dotted = "." + std::string(name);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const auto& n = columns[i].name;
    if (n.size() > dotted.size() && n.compare(n.size() - dotted.size(), dotted.size(), dotted) == 0) {
      if (found) return std::nullopt;
      found = i;
    }
  }
  return found;
}

std::string extend_value(std::string_view value, int width) {
  if (static_cast<int>(value.size()) >= width) return std::string(value);
  char fill = '0';
  if (!value.empty() && (value.front() == 'x' || value.front() == 'z')) fill = value.front();
  if (value.empty()) fill = 'x';
  return std::string(static_cast<std::size_t>(width) - value.size(), fill) + std::string(value);
}

SignalTable to_signal_table(const VcdDocument& doc) {
  SignalTable table;
  std::unordered_map<std::string, std::vector<std::size_t>> by_id;
  std::vector<std::string> current;
  for (std::size_t i = 0; i < doc.signals.size(); ++i) {
    const auto& s = doc.signals[i];
    table.columns.push_back(Column{s.name, s.width});
    by_id[s.id_code].push_back(i);
    current.emplace_back(static_cast<std::size_t>(s.width), 'x');
  }
  std::size_t i = 0;
  while (i < doc.changes.size()) {
    const Time t = doc.changes[i].time;
    for (; i < doc.changes.size() && doc.changes[i].time == t; ++i) {
      const auto& ch = doc.changes[i];
      auto it = by_id.find(ch.id_code);
      if (it == by_id.end()) continue;
      for (auto col : it->second) current[col] = extend_value(ch.value, table.columns[col].width);
    }
    table.rows.push_back(Row{t, current});
  }
  return table;
}

PairingRule PairingRule::suffix(std::string ref_suffix, std::string dut_suffix) {
  PairingRule r;
  r.ref_suffix = std::move(ref_suffix);
  r.dut_suffix = std::move(dut_suffix);
  return r;
}

PairingRule PairingRule::pairs(std::vector<std::pair<std::string, std::string>> pairs) {
  PairingRule r;
  r.explicit_pairs = std::move(pairs);
  return r;
}

MismatchReport find_mismatches(const SignalTable& table, const PairingRule& pairing, std::size_t radius) {
  std::vector<std::pair<std::size_t, std::size_t>> resolved;
  auto lookup = [&](const std::string& name) {
    auto idx = table.column_index(name);
    if (!idx) throw Error(ErrorCode::UnknownColumn, "'" + name + "'");
    return *idx;
  };
  if (!pairing.explicit_pairs.empty()) {
    for (const auto& [ref, dut] : pairing.explicit_pairs) resolved.emplace_back(lookup(ref), lookup(dut));
  } else if (!pairing.ref_suffix.empty()) {
    const auto& suf = pairing.ref_suffix;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      const auto& n = table.columns[i].name;
      if (n.size() <= suf.size() || n.compare(n.size() - suf.size(), suf.size(), suf) != 0) continue;
      const std::string observed = n.substr(0, n.size() - suf.size()) + pairing.dut_suffix;
      auto j = std::find_if(table.columns.begin(), table.columns.end(),
                            [&](const Column& c) { return c.name == observed; });
      if (j == table.columns.end()) throw Error(ErrorCode::UnknownColumn, "'" + observed + "' (paired with '" + n + "')");
      resolved.emplace_back(i, static_cast<std::size_t>(j - table.columns.begin()));
    }
  }

  MismatchReport report;
  for (auto [r, d] : resolved) {
    if (table.columns[r].width != table.columns[d].width) {
      throw Error(ErrorCode::WidthMismatch, table.columns[r].name + " is " + std::to_string(table.columns[r].width) +
                                                " bits, " + table.columns[d].name + " is " +
                                                std::to_string(table.columns[d].width));
    }
    report.pairs.emplace_back(table.columns[r].name, table.columns[d].name);
  }

  for (const auto& row : table.rows) {
    const bool differs = std::any_of(resolved.begin(), resolved.end(),
                                     [&](auto p) { return row.values[p.first] != row.values[p.second]; });
    if (!differs) continue;
    if (!report.first_mismatch_time) report.first_mismatch_time = row.time;
    ++report.total_mismatches;
  }
  if (report.first_mismatch_time) report.window = extract_window(table, *report.first_mismatch_time, radius);
  return report;
}

std::vector<Row> extract_window(const SignalTable& table, Time center_time, std::size_t radius) {
  auto it = std::lower_bound(table.rows.begin(), table.rows.end(), center_time,
                             [](const Row& r, Time t) { return r.time < t; });
  if (it == table.rows.end() || it->time != center_time) {
    throw Error(ErrorCode::TimeNotFound, "no row at time " + std::to_string(center_time));
  }
  const auto center = static_cast<std::size_t>(it - table.rows.begin());
  const std::size_t lo = center >= radius ? center - radius : 0;
  const std::size_t hi = std::min(table.rows.size() - 1, center + radius);
  return {table.rows.begin() + static_cast<std::ptrdiff_t>(lo), table.rows.begin() + static_cast<std::ptrdiff_t>(hi) + 1};
}

std::string render_text(const std::vector<Column>& columns, const std::vector<Row>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.reserve(rows.size() + 1);
  std::vector<std::string> header{"time"};
  for (const auto& c : columns) header.push_back(c.name);
  cells.push_back(std::move(header));
  for (const auto& r : rows) {
    std::vector<std::string> line{std::to_string(r.time)};
    line.insert(line.end(), r.values.begin(), r.values.end());
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(columns.size() + 1, 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], line[i].size());
  }
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out.append(widths[i] - line[i].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

std::string render_csv(const std::vector<Column>& columns, const std::vector<Row>& rows) {
  std::string out = "time";
  for (const auto& c : columns) {
    out += ',';
    out += c.name;
  }
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.time);
    for (const auto& v : r.values) {
      out += ',';
      out += v;
    }
    out += '\n';
  }
  return out;
}

}  // namespace pefa::vcd
