#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "canids/can_frame.hpp"
#include "canids/error.hpp"
#include "canids/rng.hpp"

namespace canids {

enum class Source { BenignLog, DoSLog, FuzzyLog, GearSpoofLog, RpmSpoofLog, Synthetic, Unknown };

/// Guesses the source of a Car Hacking dataset file from its name.
inline Source source_from_path(std::string_view path) {
  std::string lower(path);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto has = [&](const char* s) { return lower.find(s) != std::string::npos; };
  if (has("dos")) return Source::DoSLog;
  if (has("fuzz")) return Source::FuzzyLog;
  if (has("gear")) return Source::GearSpoofLog;
  if (has("rpm")) return Source::RpmSpoofLog;
  if (has("normal") || has("benign")) return Source::BenignLog;
  if (has("synthetic")) return Source::Synthetic;
  return Source::Unknown;
}

struct Dataset {
  std::vector<CanFrame> frames;
  Source source = Source::Unknown;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }

  /// Frame counts indexed by Label.
  std::array<std::size_t, 3> label_counts() const {
    std::array<std::size_t, 3> counts{};
    for (const auto& f : frames) ++counts[static_cast<std::size_t>(f.label)];
    return counts;
  }
};

enum class ParsePolicy { FailFast, SkipAndCount };

struct LoadOptions {
  ParsePolicy policy = ParsePolicy::FailFast;
  /// Unknown means "guess from the file name".
  Source source = Source::Unknown;
};

struct LoadReport {
  std::size_t lines = 0;
  std::size_t skipped = 0;
  std::uint32_t max_id = 0;
  std::size_t ids_above_base_range = 0;  // frames with ID > 0x7FF
  std::size_t ids_above_encoding = 0;    // frames with ID > 0xFFF, rejected
  std::vector<std::string> warnings;
};

/// Loads a CAN log. IDs wider than 12 bits and decreasing timestamps are
/// treated as parse errors and obey the same fail-fast/skip policy.
inline Dataset load_dataset(const std::string& path, const LogSchema& schema, const LoadOptions& options = {},
                            LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  rep = LoadReport{};

  Dataset ds;
  ds.source = options.source == Source::Unknown ? source_from_path(path) : options.source;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++rep.lines;
    try {
      CanFrame frame = parse_log_record(line, schema, line_no);
      if (frame.can_id > kMaxCanId) {
        ++rep.ids_above_encoding;
        throw ParseError(ErrorCode::IdOutOfRange, line_no, "can_id", "ID exceeds 12 bits");
      }
      if (!ds.frames.empty() && frame.timestamp < ds.frames.back().timestamp) {
        throw ParseError(ErrorCode::Parse, line_no, "timestamp", "timestamp decreases");
      }
      if (frame.can_id > kMaxBaseId) ++rep.ids_above_base_range;
      rep.max_id = std::max(rep.max_id, frame.can_id);
      ds.frames.push_back(frame);
    } catch (const ParseError&) {
      if (options.policy == ParsePolicy::FailFast) throw;
      ++rep.skipped;
    }
  }
  if (in.bad()) throw Error(ErrorCode::Io, "read failure on '" + path + "'");
  if (ds.frames.empty()) rep.warnings.push_back("'" + path + "' contains no frames");
  if (rep.skipped > 0) rep.warnings.push_back(std::to_string(rep.skipped) + " malformed lines skipped");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  for (const auto& f : ds.frames) out << format_log_record(f) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failure on '" + path + "'");
}

struct SplitSpec {
  double train_frac = 0.75;
  double val_frac = 0.15;
  double test_frac = 0.10;
  std::uint64_t seed = 0;  // unused: splits are order based
};

/// Segment sizes for `n` items: floors of the exact shares, then the leftover
/// items go one each to the largest fractional parts (ties left to right).
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
  const std::array<double, 3> fracs{spec.train_frac, spec.val_frac, spec.test_frac};
  for (double f : fracs) {
    if (!(f >= 0.0) || f > 1.0) throw Error(ErrorCode::InvalidSpec, "split fractions must lie in [0, 1]");
  }
  if (std::abs(fracs[0] + fracs[1] + fracs[2] - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidSpec, "split fractions must sum to 1");
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fracs[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

/// Contiguous train/validation/test segments in temporal order.
inline std::tuple<Dataset, Dataset, Dataset> split_contiguous(const Dataset& ds, const SplitSpec& spec) {
  if (ds.source != Source::BenignLog && ds.source != Source::Synthetic && ds.source != Source::Unknown) {
    throw Error(ErrorCode::InvalidSpec, "only benign datasets are split for training");
  }
  const auto sizes = split_sizes(ds.size(), spec);
  const auto first = ds.frames.begin();
  const auto a = static_cast<std::ptrdiff_t>(sizes[0]);
  const auto b = static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]);
  return {Dataset{{first, first + a}, ds.source}, Dataset{{first + a, first + b}, ds.source},
          Dataset{{first + b, ds.frames.end()}, ds.source}};
}

inline Dataset take_test_prefix(const Dataset& ds, std::size_t n_messages) {
  if (n_messages > ds.size()) {
    throw Error(ErrorCode::InsufficientData, "requested " + std::to_string(n_messages) + " frames, dataset has " +
                                                 std::to_string(ds.size()));
  }
  return Dataset{{ds.frames.begin(), ds.frames.begin() + static_cast<std::ptrdiff_t>(n_messages)}, ds.source};
}

// ---------------------------------------------------------------------------
// Synthetic traffic

struct PeriodicId {
  std::uint32_t can_id = 0;
  double period = 0.0;  // seconds
  double jitter = 0.0;  // fraction of the period, uniform in [-j/2, +j/2]
  double phase = 0.0;   // seconds added to every nominal send time
};

struct TrafficProfile {
  std::vector<PeriodicId> id_pool;
  double duration = 0.0;
  std::uint64_t seed = 0;

  /// Frames a jitter-free run emits: sum over IDs of floor(duration / period).
  std::size_t nominal_frame_count() const {
    std::size_t n = 0;
    for (const auto& p : id_pool) n += static_cast<std::size_t>(std::floor(duration / p.period + 1e-9));
    return n;
  }

  /// 20 IDs at 10-100 ms periods, about 890 frames per second. IDs are taken
  /// from the broadcast set seen in passenger-car captures.
  static TrafficProfile standard(double duration, std::uint64_t seed) {
    static constexpr std::array<std::pair<std::uint32_t, double>, 20> kPool{{
        {0x316, 0.010}, {0x18f, 0.010}, {0x260, 0.010}, {0x2a0, 0.010}, {0x329, 0.010},
        {0x43f, 0.020}, {0x370, 0.020}, {0x440, 0.020}, {0x545, 0.020}, {0x153, 0.020},
        {0x164, 0.050}, {0x220, 0.050}, {0x2b0, 0.050}, {0x350, 0.050},
        {0x4b1, 0.100}, {0x4f0, 0.100}, {0x080, 0.100}, {0x081, 0.100}, {0x165, 0.100}, {0x5a0, 0.100},
    }};
    TrafficProfile p;
    p.duration = duration;
    p.seed = seed;
    // ECUs start at unrelated instants; spread the send phases over a period.
    for (std::size_t i = 0; i < kPool.size(); ++i) {
      const auto [id, period] = kPool[i];
      p.id_pool.push_back({id, period, 0.05, period * static_cast<double>((i * 7) % 10) / 10.0});
    }
    return p;
  }

  /// 5 IDs, used for quick smoke corpora.
  static TrafficProfile small(double duration, std::uint64_t seed) {
    TrafficProfile p;
    p.duration = duration;
    p.seed = seed;
    p.id_pool = {{0x316, 0.010, 0.1}, {0x43f, 0.010, 0.1}, {0x18f, 0.020, 0.1}, {0x260, 0.020, 0.1},
                 {0x2a0, 0.050, 0.1}};
    return p;
  }
};

/// Merges per-ID periodic schedules (k * period plus uniform jitter, k >= 1,
/// k * period <= duration) into one benign stream sorted by timestamp.
inline Dataset generate_benign(const TrafficProfile& profile) {
  if (profile.id_pool.empty()) throw Error(ErrorCode::InvalidProfile, "empty ID pool");
  if (!(profile.duration >= 0.0) || !std::isfinite(profile.duration)) {
    throw Error(ErrorCode::InvalidProfile, "duration must be finite and non-negative");
  }
  for (const auto& p : profile.id_pool) {
    if (!(p.period > 0.0)) throw Error(ErrorCode::InvalidProfile, "periods must be positive");
    if (!(p.jitter >= 0.0 && p.jitter < 1.0)) throw Error(ErrorCode::InvalidProfile, "jitter must be in [0, 1)");
    if (p.can_id > kMaxCanId) throw Error(ErrorCode::InvalidProfile, "ID exceeds 12 bits");
  }
  Rng rng(profile.seed);
  Dataset ds;
  ds.source = Source::Synthetic;
  ds.frames.reserve(profile.nominal_frame_count());
  for (const auto& p : profile.id_pool) {
    // Each ID carries a slowly changing payload so the corpus looks like a capture.
    std::array<std::uint8_t, kMaxDlc> payload{};
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng.below(256));
    const auto count = static_cast<std::size_t>(std::floor(profile.duration / p.period + 1e-9));
    for (std::size_t k = 1; k <= count; ++k) {
      CanFrame f;
      const double offset = p.jitter > 0.0 ? (rng.uniform() - 0.5) * p.jitter * p.period : 0.0;
      f.timestamp = static_cast<double>(k) * p.period + p.phase + offset;
      f.can_id = p.can_id;
      f.dlc = static_cast<std::uint8_t>(kMaxDlc);
      payload[rng.below(kMaxDlc)] = static_cast<std::uint8_t>(rng.below(256));
      f.data = payload;
      f.label = Label::Benign;
      ds.frames.push_back(f);
    }
  }
  std::stable_sort(ds.frames.begin(), ds.frames.end(),
                   [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
  return ds;
}

struct AttackSpec {
  enum class Kind { DoS, Fuzzy, Spoof };
  Kind kind = Kind::DoS;
  std::uint32_t spoof_id = 0;  // Spoof only
  double rate = 0.0;           // injections per second
  double t0 = 0.0;
  double t1 = 0.0;
  std::uint64_t seed = 0;
};

/// Injects attack frames at t0 + k / rate for k in [0, floor(rate * (t1 - t0))),
/// merged after any existing frame with an equal timestamp. Existing frames
/// keep their order and labels. A zero rate is the identity.
inline Dataset inject_attack(const Dataset& ds, const AttackSpec& spec) {
  if (spec.rate < 0.0 || !std::isfinite(spec.rate)) throw Error(ErrorCode::RateNonPositive, "rate must be positive");
  if (spec.rate == 0.0) return ds;
  if (ds.empty() || !(spec.t0 < spec.t1) || spec.t0 < ds.frames.front().timestamp ||
      spec.t1 > ds.frames.back().timestamp) {
    throw Error(ErrorCode::InvalidWindow, "attack window must satisfy first <= t0 < t1 <= last timestamp");
  }
  if (spec.kind == AttackSpec::Kind::Spoof && spec.spoof_id > kMaxCanId) {
    throw Error(ErrorCode::IdOutOfRange, "spoofed ID exceeds 12 bits");
  }
  Rng rng(spec.seed);
  std::array<std::uint8_t, kMaxDlc> spoof_payload{};
  for (auto& b : spoof_payload) b = static_cast<std::uint8_t>(rng.below(256));

  const auto n = static_cast<std::size_t>(std::floor(spec.rate * (spec.t1 - spec.t0) + 1e-9));
  std::vector<CanFrame> injected;
  injected.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    CanFrame f;
    f.timestamp = spec.t0 + static_cast<double>(k) / spec.rate;
    f.dlc = static_cast<std::uint8_t>(kMaxDlc);
    f.label = Label::Attack;
    switch (spec.kind) {
      case AttackSpec::Kind::DoS:
        f.can_id = 0x000;
        break;
      case AttackSpec::Kind::Fuzzy:
        f.can_id = static_cast<std::uint32_t>(rng.below(kMaxBaseId + 1));
        for (auto& b : f.data) b = static_cast<std::uint8_t>(rng.below(256));
        break;
      case AttackSpec::Kind::Spoof:
        f.can_id = spec.spoof_id;
        f.data = spoof_payload;
        break;
    }
    injected.push_back(f);
  }
  Dataset out;
  out.source = ds.source;
  out.frames.reserve(ds.size() + injected.size());
  std::merge(ds.frames.begin(), ds.frames.end(), injected.begin(), injected.end(), std::back_inserter(out.frames),
             [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
  return out;
}

/// Repeating attack bursts: `length` seconds every `every` seconds from `start`
/// until the stream ends. Burst k uses seed + k.
struct AttackSchedule {
  AttackSpec::Kind kind = AttackSpec::Kind::DoS;
  std::uint32_t spoof_id = 0x316;
  double rate = 2000.0;
  double start = 2.0;
  double every = 10.0;
  double length = 4.0;
  std::uint64_t seed = 0;
};

inline Dataset inject_attack_bursts(const Dataset& ds, const AttackSchedule& s) {
  if (!(s.length > 0.0) || !(s.every >= s.length)) throw Error(ErrorCode::InvalidWindow, "bursts need 0 < length <= every");
  if (ds.empty()) throw Error(ErrorCode::InvalidWindow, "cannot inject into an empty stream");
  Dataset out = ds;
  const double first = ds.frames.front().timestamp, last = ds.frames.back().timestamp;
  std::uint64_t k = 0;
  for (double t0 = std::max(s.start, first); t0 + s.length <= last; t0 += s.every, ++k) {
    AttackSpec spec;
    spec.kind = s.kind;
    spec.spoof_id = s.spoof_id;
    spec.rate = s.rate;
    spec.t0 = t0;
    spec.t1 = t0 + s.length;
    spec.seed = s.seed + k;
    out = inject_attack(out, spec);
  }
  return out;
}

}  // namespace canids
