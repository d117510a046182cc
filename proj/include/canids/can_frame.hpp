#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "canids/error.hpp"

namespace canids {

/// Width of the binary ID encoding fed to the model.
inline constexpr std::size_t kIdBits = 12;
inline constexpr std::uint32_t kMaxCanId = (1u << kIdBits) - 1;  // 0xFFF
inline constexpr std::uint32_t kMaxBaseId = 0x7FF;
inline constexpr std::size_t kMaxDlc = 8;

enum class Label : std::uint8_t { Benign, Attack, Unlabeled };

inline const char* to_string(Label label) {
  switch (label) {
    case Label::Benign: return "benign";
    case Label::Attack: return "attack";
    case Label::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

/// One timestamped classical CAN message.
struct CanFrame {
  double timestamp = 0.0;
  std::uint32_t can_id = 0;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, kMaxDlc> data{};
  Label label = Label::Unlabeled;

  std::span<const std::uint8_t> payload() const { return {data.data(), dlc}; }

  friend bool operator==(const CanFrame& a, const CanFrame& b) {
    if (a.timestamp != b.timestamp || a.can_id != b.can_id || a.dlc != b.dlc || a.label != b.label) {
      return false;
    }
    for (std::size_t i = 0; i < a.dlc; ++i) {
      if (a.data[i] != b.data[i]) return false;
    }
    return true;
  }
};

/// 12-bit MSB-first expansion of a CAN ID; element 0 is bit 11.
using IdBitVector = std::array<std::uint8_t, kIdBits>;

inline IdBitVector binarize_id(std::uint32_t can_id) {
  if (can_id > kMaxCanId) {
    throw Error(ErrorCode::IdOutOfRange, "CAN ID " + std::to_string(can_id) + " does not fit in 12 bits");
  }
  IdBitVector bits{};
  for (std::size_t i = 0; i < kIdBits; ++i) {
    bits[i] = static_cast<std::uint8_t>((can_id >> (kIdBits - 1 - i)) & 1u);
  }
  return bits;
}

inline std::uint32_t debinarize_id(const IdBitVector& bits) {
  std::uint32_t id = 0;
  for (std::uint8_t b : bits) id = (id << 1) | (b & 1u);
  return id;
}

/// Column layout of a log file.
///
/// `Csv` is the attack-log layout of the public Car Hacking dataset:
/// `timestamp,hexid,dlc,b0,...,b{dlc-1}[,flag]` with flag `R` (benign) or `T`
/// (attack). `NormalText` is the attack-free capture layout:
/// `Timestamp: <t> ID: <hex> <rtr> DLC: <n> <b0> ... <b{n-1}>`.
struct LogSchema {
  enum class Layout { Csv, NormalText };
  enum class FlagColumn { Optional, Required, Absent };

  Layout layout = Layout::Csv;
  char delimiter = ',';
  FlagColumn flag = FlagColumn::Optional;
  /// Label assigned to records that carry no flag.
  Label default_label = Label::Unlabeled;

  static LogSchema csv() { return {}; }
  static LogSchema normal_text() {
    return {Layout::NormalText, ' ', FlagColumn::Absent, Label::Benign};
  }
  /// "csv", "csv-benign" (unflagged rows are benign) or "normal-text".
  static LogSchema from_name(std::string_view name) {
    if (name == "csv") return csv();
    if (name == "csv-benign") {
      LogSchema s;
      s.default_label = Label::Benign;
      return s;
    }
    if (name == "normal-text" || name == "text") return normal_text();
    throw Error(ErrorCode::InvalidArgument, "unknown log schema '" + std::string(name) + "'");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  if (delim == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == delim) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline double parse_timestamp(std::string_view s, std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(value)) {
    throw ParseError(ErrorCode::Parse, line, "timestamp", "not a number: '" + std::string(s) + "'");
  }
  return value;
}

inline std::uint32_t parse_hex(std::string_view s, std::size_t line, const char* field) {
  std::uint32_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, 16);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError(ErrorCode::MalformedHex, line, field, "bad hex '" + std::string(s) + "'");
  }
  return value;
}

inline std::uint8_t parse_dlc(std::string_view s, std::size_t line) {
  unsigned value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || value > kMaxDlc) {
    throw ParseError(ErrorCode::Parse, line, "dlc", "expected 0..8, got '" + std::string(s) + "'");
  }
  return static_cast<std::uint8_t>(value);
}

inline Label parse_flag(std::string_view s, std::size_t line) {
  if (s == "R" || s == "r") return Label::Benign;
  if (s == "T" || s == "t") return Label::Attack;
  throw ParseError(ErrorCode::Parse, line, "flag", "expected R or T, got '" + std::string(s) + "'");
}

inline CanFrame parse_csv(std::string_view line, const LogSchema& schema, std::size_t line_no) {
  const auto fields = split(trim(line), schema.delimiter);
  if (fields.size() < 3) {
    throw ParseError(ErrorCode::Parse, line_no, fields.empty() ? "timestamp" : "dlc", "too few fields");
  }
  CanFrame frame;
  frame.timestamp = parse_timestamp(fields[0], line_no);
  frame.can_id = parse_hex(fields[1], line_no, "can_id");
  frame.dlc = parse_dlc(fields[2], line_no);
  const std::size_t n_bytes = frame.dlc;
  const std::size_t base = 3 + n_bytes;
  bool has_flag = false;
  if (fields.size() == base + 1) {
    has_flag = true;
  } else if (fields.size() != base) {
    throw ParseError(ErrorCode::DlcMismatch, line_no, "data",
                     "DLC " + std::to_string(n_bytes) + " but " + std::to_string(fields.size() - 3) +
                         " trailing fields");
  }
  if (has_flag && schema.flag == LogSchema::FlagColumn::Absent) {
    throw ParseError(ErrorCode::DlcMismatch, line_no, "data", "unexpected trailing field");
  }
  if (!has_flag && schema.flag == LogSchema::FlagColumn::Required) {
    throw ParseError(ErrorCode::Parse, line_no, "flag", "missing flag column");
  }
  for (std::size_t i = 0; i < n_bytes; ++i) {
    const std::uint32_t byte = parse_hex(fields[3 + i], line_no, "data");
    if (byte > 0xFF) throw ParseError(ErrorCode::MalformedHex, line_no, "data", "byte out of range");
    frame.data[i] = static_cast<std::uint8_t>(byte);
  }
  frame.label = has_flag ? parse_flag(fields[base], line_no) : schema.default_label;
  return frame;
}

inline CanFrame parse_normal_text(std::string_view line, const LogSchema& schema, std::size_t line_no) {
  const auto tokens = split(trim(line), ' ');
  CanFrame frame;
  frame.label = schema.default_label;
  std::size_t i = 0;
  const auto expect = [&](std::string_view key, const char* field) {
    if (i >= tokens.size() || tokens[i] != key) {
      throw ParseError(ErrorCode::Parse, line_no, field, "expected '" + std::string(key) + "'");
    }
    ++i;
    if (i >= tokens.size()) throw ParseError(ErrorCode::Parse, line_no, field, "missing value");
  };
  expect("Timestamp:", "timestamp");
  frame.timestamp = parse_timestamp(tokens[i++], line_no);
  expect("ID:", "can_id");
  frame.can_id = parse_hex(tokens[i++], line_no, "can_id");
  // Remote-request field between ID and DLC.
  while (i < tokens.size() && tokens[i] != "DLC:") ++i;
  expect("DLC:", "dlc");
  frame.dlc = parse_dlc(tokens[i++], line_no);
  if (tokens.size() - i != frame.dlc) {
    throw ParseError(ErrorCode::DlcMismatch, line_no, "data",
                     "DLC " + std::to_string(frame.dlc) + " but " + std::to_string(tokens.size() - i) + " bytes");
  }
  for (std::size_t k = 0; k < frame.dlc; ++k) {
    const std::uint32_t byte = parse_hex(tokens[i + k], line_no, "data");
    if (byte > 0xFF) throw ParseError(ErrorCode::MalformedHex, line_no, "data", "byte out of range");
    frame.data[k] = static_cast<std::uint8_t>(byte);
  }
  return frame;
}

}  // namespace detail

/// Parses one log record. `line_no` only decorates error messages.
inline CanFrame parse_log_record(std::string_view line, const LogSchema& schema = {}, std::size_t line_no = 0) {
  return schema.layout == LogSchema::Layout::Csv ? detail::parse_csv(line, schema, line_no)
                                                 : detail::parse_normal_text(line, schema, line_no);
}

/// Serializes to the CSV layout. Unlabeled frames carry no flag column.
inline std::string format_log_record(const CanFrame& frame) {
  char buf[64];
  std::string out;
  std::snprintf(buf, sizeof buf, "%.6f,%04x,%u", frame.timestamp, static_cast<unsigned>(frame.can_id),
                static_cast<unsigned>(frame.dlc));
  out += buf;
  for (std::uint8_t byte : frame.payload()) {
    std::snprintf(buf, sizeof buf, ",%02x", static_cast<unsigned>(byte));
    out += buf;
  }
  if (frame.label == Label::Benign) out += ",R";
  if (frame.label == Label::Attack) out += ",T";
  return out;
}

}  // namespace canids
