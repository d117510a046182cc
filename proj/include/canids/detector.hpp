#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "canids/error.hpp"
#include "canids/tensor.hpp"
#include "canids/window.hpp"

namespace canids {

/// Anything that maps a (B, 100, 12, 1) block tensor to sigmoid outputs of
/// the same shape: the float model and the quantized model.
template <typename M>
concept Reconstructor = requires(const M& m, const nn::Tensor<float>& x) {
  { m.reconstruct(x) } -> std::same_as<nn::Tensor<float>>;
};

inline constexpr int kSweepMin = 0;
inline constexpr int kSweepMax = 20;
inline constexpr int kDefaultThreshold = 10;

enum class Decision : std::uint8_t { Benign, Attack };

inline const char* to_string(Decision d) { return d == Decision::Attack ? "attack" : "benign"; }

struct DetectionVerdict {
  std::size_t block_index = 0;
  double start_timestamp = 0.0;
  int hamming_distance = 0;
  Decision verdict = Decision::Benign;
  int threshold_used = kDefaultThreshold;
  Label label = Label::Unlabeled;  // ground truth when known

  friend bool operator==(const DetectionVerdict&, const DetectionVerdict&) = default;
};

inline int hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "hamming distance needs equal shapes");
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != 0) != (b[i] != 0);
  return d;
}

/// Reconstructs every block and thresholds the output at 0.5 (inclusive).
template <Reconstructor M>
std::vector<BitMatrix> reconstruct_and_binarize(const M& model, const nn::Tensor<float>& blocks) {
  const nn::Tensor<float> out = model.reconstruct(blocks);
  nn::require_same_shape(out.shape(), blocks.shape(), "reconstruction");
  std::vector<BitMatrix> bits;
  bits.reserve(out.dim(0));
  for (std::size_t b = 0; b < out.dim(0); ++b) bits.push_back(tensor_to_bits(out, b));
  return bits;
}

/// Hamming distance between each block and its binarized reconstruction.
template <Reconstructor M>
std::vector<int> reconstruction_distances(const M& model, std::span<const MessageBlock> blocks,
                                          std::size_t batch_size = 32) {
  std::vector<int> out;
  out.reserve(blocks.size());
  for (std::size_t start = 0; start < blocks.size(); start += batch_size) {
    const auto chunk = blocks.subspan(start, std::min(batch_size, blocks.size() - start));
    const auto bits = reconstruct_and_binarize(model, blocks_to_tensor<float>(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(hamming(chunk[i].matrix, bits[i]));
  }
  return out;
}

inline DetectionVerdict make_verdict(const MessageBlock& block, int distance, int threshold) {
  DetectionVerdict v;
  v.block_index = block.block_index;
  v.start_timestamp = block.start_timestamp;
  v.hamming_distance = distance;
  v.threshold_used = threshold;
  v.verdict = distance >= threshold ? Decision::Attack : Decision::Benign;
  v.label = block.label;
  return v;
}

template <Reconstructor M>
DetectionVerdict classify_block(const M& model, const MessageBlock& block, int threshold) {
  const auto d = reconstruction_distances(model, std::span<const MessageBlock>(&block, 1));
  return make_verdict(block, d.front(), threshold);
}

template <Reconstructor M>
std::vector<DetectionVerdict> classify_blocks(const M& model, std::span<const MessageBlock> blocks, int threshold) {
  const auto distances = reconstruction_distances(model, blocks);
  std::vector<DetectionVerdict> out;
  out.reserve(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) out.push_back(make_verdict(blocks[i], distances[i], threshold));
  return out;
}

struct ThresholdCalibration {
  /// fp_counts[t] = benign blocks with distance >= t, for t in [0, 20].
  std::array<std::size_t, kSweepMax - kSweepMin + 1> fp_counts{};
  int chosen = kDefaultThreshold;
  std::size_t blocks = 0;

  bool zero_fp_found() const { return fp_counts[static_cast<std::size_t>(chosen - kSweepMin)] == 0; }
};

/// Sweeps t over [0, 20] and picks the smallest t with no false positives;
/// failing that, the t with the fewest (the largest such t on ties).
inline ThresholdCalibration calibrate_threshold_from_distances(std::span<const int> benign_distances) {
  if (benign_distances.empty()) throw Error(ErrorCode::EmptyCalibrationSet, "no benign distances");
  ThresholdCalibration cal;
  cal.blocks = benign_distances.size();
  for (int t = kSweepMin; t <= kSweepMax; ++t) {
    cal.fp_counts[static_cast<std::size_t>(t - kSweepMin)] = static_cast<std::size_t>(
        std::count_if(benign_distances.begin(), benign_distances.end(), [t](int d) { return d >= t; }));
  }
  for (int t = kSweepMin; t <= kSweepMax; ++t) {
    if (cal.fp_counts[static_cast<std::size_t>(t - kSweepMin)] == 0) {
      cal.chosen = t;
      return cal;
    }
  }
  int best = kSweepMin;
  for (int t = kSweepMin; t <= kSweepMax; ++t) {
    if (cal.fp_counts[static_cast<std::size_t>(t - kSweepMin)] <= cal.fp_counts[static_cast<std::size_t>(best - kSweepMin)]) {
      best = t;
    }
  }
  cal.chosen = best;
  return cal;
}

inline constexpr std::size_t kMinCalibrationBlocks = 100;

template <Reconstructor M>
ThresholdCalibration calibrate_threshold(const M& model, std::span<const MessageBlock> benign_blocks) {
  if (benign_blocks.empty()) throw Error(ErrorCode::EmptyCalibrationSet, "no benign blocks");
  if (benign_blocks.size() < kMinCalibrationBlocks) {
    throw Error(ErrorCode::InsufficientData, "threshold calibration needs at least " +
                                                 std::to_string(kMinCalibrationBlocks) + " benign blocks, got " +
                                                 std::to_string(benign_blocks.size()));
  }
  const auto distances = reconstruction_distances(model, benign_blocks);
  return calibrate_threshold_from_distances(distances);
}

inline void write_calibration_csv(std::ostream& out, const ThresholdCalibration& cal) {
  out << "threshold,fp_count\n";
  for (int t = kSweepMin; t <= kSweepMax; ++t) out << t << ',' << cal.fp_counts[static_cast<std::size_t>(t - kSweepMin)] << '\n';
}

inline void write_verdict_csv_header(std::ostream& out) {
  out << "block_index,start_timestamp,distance,verdict,label\n";
}

inline void write_verdict_csv_row(std::ostream& out, const DetectionVerdict& v) {
  char ts[32];
  std::snprintf(ts, sizeof ts, "%.6f", v.start_timestamp);
  out << v.block_index << ',' << ts << ',' << v.hamming_distance << ',' << to_string(v.verdict) << ','
      << (v.label == Label::Unlabeled ? "" : to_string(v.label)) << '\n';
}

inline void write_verdict_csv(std::ostream& out, std::span<const DetectionVerdict> verdicts) {
  write_verdict_csv_header(out);
  for (const auto& v : verdicts) write_verdict_csv_row(out, v);
}

}  // namespace canids
