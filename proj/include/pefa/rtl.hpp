#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pefa {

/// Verilog source holding at least one complete module declaration.
struct RtlSource {
  std::string text;
  std::vector<std::string> module_names;
  bool operator==(const RtlSource&) const = default;
};

/// A span [begin, end) of `module ... endmodule` in some source text.
struct ModuleSpan {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Finds `module <ident> (`/`#`/`;` ... `endmodule` spans, skipping comments
/// and string literals. Prose such as "the module you asked for" does not match.
std::vector<ModuleSpan> scan_modules(std::string_view text);

/// Pulls Verilog out of an LLM completion. Fenced blocks (``` or ''', with an
/// optional language tag) are preferred; without usable fences the raw text is
/// scanned. The result keeps compiler-directive lines and module spans only,
/// so extract_rtl(extract_rtl(x).text) == extract_rtl(x).
/// Throws Error(NoRtlFound).
RtlSource extract_rtl(std::string_view llm_text);

struct InstrumentedTestbench {
  std::string text;
  std::string top_module;
  std::string vcd_path;
  std::vector<std::string> monitored_signals;
};

/// Adds a VCD dump and a $monitor over `dut_ports` to the testbench's single
/// top-level module. The instrumentation goes in a new `initial` block placed
/// right after the first existing `initial` statement (or before `endmodule`
/// when there is none); the rest of the source is untouched.
/// Throws NoModuleFound, MultipleTestbenchModules, AlreadyInstrumented.
InstrumentedTestbench instrument_testbench(std::string_view tb, const std::vector<std::string>& dut_ports,
                                           std::string_view vcd_path = "dump.vcd");

}  // namespace pefa
