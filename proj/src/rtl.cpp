#include "pefa/rtl.hpp"

#include <algorithm>
#include <cctype>
#include <optional>

#include "pefa/error.hpp"

namespace pefa {
namespace {

struct Token {
  bool ident = false;
  std::string_view text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$' || c == '`'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$'; }

// Verilog-ish token stream: identifiers (including $system and `directive
// names) and single punctuation characters. Comments and string literals are
// dropped; strings end at a newline so stray quotes in prose stay local.
std::vector<Token> lex(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '/' && i + 1 < n && s[i + 1] == '/') {
      while (i < n && s[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < n && s[i + 1] == '*') {
      auto close = s.find("*/", i + 2);
      i = close == std::string_view::npos ? n : close + 2;
    } else if (c == '"') {
      ++i;
      while (i < n && s[i] != '"' && s[i] != '\n') {
        if (s[i] == '\\') ++i;
        ++i;
      }
      if (i < n && s[i] == '"') ++i;
    } else if (ident_start(c)) {
      std::size_t b = i++;
      while (i < n && ident_char(s[i])) ++i;
      out.push_back(Token{true, s.substr(b, i - b), b, i});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t b = i++;
      while (i < n && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_' || s[i] == '\'')) ++i;
      out.push_back(Token{false, s.substr(b, i - b), b, i});
    } else {
      out.push_back(Token{false, s.substr(i, 1), i, i + 1});
      ++i;
    }
  }
  return out;
}

bool is(const Token& t, std::string_view word) { return t.text == word; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

struct Fenced {
  std::vector<std::string> blocks;
  bool any = false;
};

Fenced find_fenced_blocks(std::string_view text) {
  Fenced out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto bt = text.find("```", pos);
    auto sq = text.find("'''", pos);
    auto open = std::min(bt, sq);
    if (open == std::string_view::npos) break;
    const std::string_view fence = text.substr(open, 3);
    out.any = true;
    std::size_t content = open + 3;
    // Skip an optional language tag that fills the rest of the fence line.
    auto eol = text.find('\n', content);
    auto tag = text.substr(content, (eol == std::string_view::npos ? text.size() : eol) - content);
    if (std::all_of(tag.begin(), tag.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '+' || c == '-' ||
                 std::isspace(static_cast<unsigned char>(c));
        })) {
      content = eol == std::string_view::npos ? text.size() : eol + 1;
    }
    auto close = text.find(fence, content);
    auto stop = close == std::string_view::npos ? text.size() : close;
    out.blocks.emplace_back(text.substr(content, stop - content));
    pos = close == std::string_view::npos ? text.size() : close + 3;
  }
  return out;
}

// Keeps directive lines outside modules plus the module spans, in order.
RtlSource normalize(std::string_view source) {
  auto spans = scan_modules(source);
  RtlSource out;
  if (spans.empty()) return out;
  std::vector<std::string_view> pieces;
  std::size_t line_start = 0;
  std::size_t next_span = 0;
  while (line_start < source.size()) {
    if (next_span < spans.size() && line_start >= spans[next_span].begin) {
      pieces.push_back(source.substr(spans[next_span].begin, spans[next_span].end - spans[next_span].begin));
      out.module_names.push_back(spans[next_span].name);
      auto nl = source.find('\n', spans[next_span].end);
      line_start = nl == std::string_view::npos ? source.size() : nl + 1;
      ++next_span;
      continue;
    }
    auto nl = source.find('\n', line_start);
    auto line_end = nl == std::string_view::npos ? source.size() : nl;
    const bool overlaps = next_span < spans.size() && spans[next_span].begin < line_end;
    if (overlaps) {
      line_start = spans[next_span].begin;
      continue;
    }
    auto line = trim(source.substr(line_start, line_end - line_start));
    if (line.size() > 1 && line.front() == '`' && std::isalpha(static_cast<unsigned char>(line[1]))) {
      pieces.push_back(line);
    }
    line_start = nl == std::string_view::npos ? source.size() : nl + 1;
  }
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (i) out.text += '\n';
    out.text += pieces[i];
  }
  return out;
}

// Returns the offset just past the statement that starts at token index `i`.
std::optional<std::size_t> statement_end(const std::vector<Token>& toks, std::size_t i) {
  int depth = 0;
  for (; i < toks.size(); ++i) {
    const auto& t = toks[i];
    if (t.ident && (is(t, "begin") || is(t, "fork") || is(t, "case") || is(t, "casez") || is(t, "casex"))) {
      ++depth;
    } else if (t.ident && (is(t, "end") || is(t, "join") || is(t, "join_any") || is(t, "join_none") ||
                           is(t, "endcase"))) {
      if (--depth == 0) {
        // `end : label`
        if (i + 2 < toks.size() && is(toks[i + 1], ":") && toks[i + 2].ident) return toks[i + 2].end;
        // `if (...) begin ... end else ...` continues the statement.
        if (i + 1 < toks.size() && is(toks[i + 1], "else")) continue;
        return t.end;
      }
    } else if (!t.ident && is(t, ";") && depth == 0) {
      if (i + 1 < toks.size() && is(toks[i + 1], "else")) continue;
      return t.end;
    } else if (t.ident && is(t, "endmodule")) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

bool instantiates(std::string_view body, const std::string& name) {
  auto toks = lex(body);
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
    if (!toks[i].ident || toks[i].text != name) continue;
    const auto& next = toks[i + 1];
    if (is(next, "#")) return true;
    if (next.ident && i + 2 < toks.size()) {
      std::size_t j = i + 2;
      if (is(toks[j], "[")) {
        while (j < toks.size() && !is(toks[j], "]")) ++j;
        ++j;
      }
      if (j < toks.size() && is(toks[j], "(")) return true;
    }
  }
  return false;
}

}  // namespace

std::vector<ModuleSpan> scan_modules(std::string_view text) {
  std::vector<ModuleSpan> spans;
  auto toks = lex(text);
  std::optional<ModuleSpan> open;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const auto& t = toks[i];
    if (!t.ident) continue;
    if (!open && (is(t, "module") || is(t, "macromodule")) && i + 2 < toks.size() && toks[i + 1].ident &&
        (is(toks[i + 2], "(") || is(toks[i + 2], "#") || is(toks[i + 2], ";"))) {
      open = ModuleSpan{std::string(toks[i + 1].text), t.begin, 0};
      ++i;
    } else if (open && is(t, "endmodule")) {
      open->end = t.end;
      spans.push_back(*open);
      open.reset();
    }
  }
  return spans;
}

RtlSource extract_rtl(std::string_view llm_text) {
  auto fenced = find_fenced_blocks(llm_text);
  if (fenced.any) {
    std::string joined;
    for (const auto& b : fenced.blocks) {
      if (scan_modules(b).empty()) continue;
      if (!joined.empty()) joined += '\n';
      joined += b;
    }
    auto rtl = normalize(joined);
    if (!rtl.module_names.empty()) return rtl;
  }
  auto rtl = normalize(llm_text);
  if (rtl.module_names.empty()) throw Error(ErrorCode::NoRtlFound, "no module...endmodule span in completion");
  return rtl;
}

InstrumentedTestbench instrument_testbench(std::string_view tb, const std::vector<std::string>& dut_ports,
                                           std::string_view vcd_path) {
  if (dut_ports.empty()) throw Error(ErrorCode::DomainError, "no DUT ports to monitor");
  for (const auto& t : lex(tb)) {
    if (t.ident && (is(t, "$dumpfile") || is(t, "$dumpvars"))) {
      throw Error(ErrorCode::AlreadyInstrumented, "testbench already dumps a VCD");
    }
  }
  auto spans = scan_modules(tb);
  if (spans.empty()) throw Error(ErrorCode::NoModuleFound, "testbench declares no module");

  std::vector<const ModuleSpan*> tops;
  for (const auto& s : spans) {
    bool used = false;
    for (const auto& other : spans) {
      if (&other == &s) continue;
      if (instantiates(tb.substr(other.begin, other.end - other.begin), s.name)) used = true;
    }
    if (!used) tops.push_back(&s);
  }
  if (tops.size() != 1) {
    std::string names;
    for (auto* t : tops) names += (names.empty() ? "" : ", ") + t->name;
    throw Error(ErrorCode::MultipleTestbenchModules, "top-level modules: " + names);
  }
  const ModuleSpan& top = *tops.front();

  std::string block = "  initial begin\n";
  block += "    $dumpfile(\"" + std::string(vcd_path) + "\");\n";
  block += "    $dumpvars(0, " + top.name + ");\n";
  std::string fmt = "%0t";
  std::string args = "$time";
  for (const auto& p : dut_ports) {
    fmt += " " + p + "=%b";
    args += ", " + p;
  }
  block += "    $monitor(\"" + fmt + "\", " + args + ");\n";
  block += "  end\n";

  const auto body = tb.substr(top.begin, top.end - top.begin);
  auto toks = lex(body);
  std::optional<std::size_t> insert_at;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].ident && is(toks[i], "initial")) {
      if (auto e = statement_end(toks, i + 1)) insert_at = top.begin + *e;
      break;
    }
  }
  std::string out(tb);
  if (insert_at) {
    out.insert(*insert_at, "\n" + block);
  } else {
    // Before `endmodule`, on its own line.
    const std::size_t endmod = top.end - std::string_view("endmodule").size();
    if (endmod > 0 && out[endmod - 1] != '\n') block.insert(0, "\n");
    out.insert(endmod, block);
  }
  return InstrumentedTestbench{std::move(out), top.name, std::string(vcd_path), dut_ports};
}

}  // namespace pefa
