#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pefa::vcd {

using Time = std::uint64_t;

struct Timescale {
  int magnitude = 1;
  std::string unit = "ns";
  bool operator==(const Timescale&) const = default;
};

struct Signal {
  std::string id_code;
  std::string name;  // hierarchical, scopes joined with '.'
  int width = 1;
  std::string var_type = "wire";
  std::string bit_range;  // e.g. "[3:0]"; kept verbatim for re-serialization
  bool operator==(const Signal&) const = default;
};

struct ValueChange {
  Time time = 0;
  std::string id_code;
  std::string value;  // bits over {0,1,x,z}, as written in the dump
  bool operator==(const ValueChange&) const = default;
};

/// A parsed value change dump. Invariants (enforced by parse_vcd): every
/// change references a declared id code, change times never decrease, and a
/// value never has more bits than its signal's width.
struct VcdDocument {
  Timescale timescale;
  std::vector<Signal> signals;
  std::vector<ValueChange> changes;
  bool operator==(const VcdDocument&) const = default;
};

VcdDocument parse_vcd(std::string_view text);

/// Canonical IEEE 1364 text for `doc`; parse_vcd(serialize_vcd(d)) == d.
std::string serialize_vcd(const VcdDocument& doc);

struct Column {
  std::string name;
  int width = 1;
  bool operator==(const Column&) const = default;
};

struct Row {
  Time time = 0;
  std::vector<std::string> values;  // one per column, always `width` characters
  bool operator==(const Row&) const = default;
};

/// Forward-filled waveform: one row per distinct change time, strictly
/// increasing. Cells before a signal's first change are all-`x`.
struct SignalTable {
  std::vector<Column> columns;
  std::vector<Row> rows;
  bool operator==(const SignalTable&) const = default;

  [[nodiscard]] std::optional<std::size_t> column_index(std::string_view name) const;
};

SignalTable to_signal_table(const VcdDocument& doc);

/// Widens a dumped value to `width` bits using the VCD left-extension rule
/// (x and z extend with themselves, 0 and 1 extend with 0).
std::string extend_value(std::string_view value, int width);

/// How reference and observed columns are matched. Either an explicit list
/// of (reference, observed) column names, or a suffix convention where a
/// column `<stem><ref_suffix>` pairs with `<stem><dut_suffix>`.
struct PairingRule {
  std::string ref_suffix = "_ref";
  std::string dut_suffix;
  std::vector<std::pair<std::string, std::string>> explicit_pairs;

  static PairingRule suffix(std::string ref_suffix, std::string dut_suffix = {});
  static PairingRule pairs(std::vector<std::pair<std::string, std::string>> pairs);
};

inline constexpr std::size_t kDefaultWindowRadius = 5;

struct MismatchReport {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::optional<Time> first_mismatch_time;
  std::size_t total_mismatches = 0;
  std::vector<Row> window;
};

/// Resolves the pairing against `table` (UnknownColumn / WidthMismatch) and
/// scans rows in time order. Values compare by exact character equality.
MismatchReport find_mismatches(const SignalTable& table, const PairingRule& pairing,
                               std::size_t radius = kDefaultWindowRadius);

/// Up to 2*radius+1 contiguous rows centred on the row at `center_time`,
/// truncated at the table ends. Throws TimeNotFound.
std::vector<Row> extract_window(const SignalTable& table, Time center_time, std::size_t radius);

/// Fixed-width text table: header row ("time" then column names), then one
/// line per row. This is the form embedded in feedback prompts.
std::string render_text(const std::vector<Column>& columns, const std::vector<Row>& rows);

/// Comma-separated export with a header row.
std::string render_csv(const std::vector<Column>& columns, const std::vector<Row>& rows);

}  // namespace pefa::vcd
