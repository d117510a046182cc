#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "canids/can_frame.hpp"
#include "canids/error.hpp"
#include "canids/tensor.hpp"

namespace canids {

inline constexpr std::size_t kBlockSize = 100;
inline constexpr std::size_t kBlockBits = kBlockSize * kIdBits;  // 1200

/// 100x12 row-major bit matrix; row i holds the binarized ID of frame i.
using BitMatrix = std::array<std::uint8_t, kBlockBits>;

struct MessageBlock {
  BitMatrix matrix{};
  Label label = Label::Unlabeled;
  double start_timestamp = 0.0;
  std::size_t block_index = 0;
};

/// Attack if any frame is an attack, Benign if every frame is benign,
/// Unlabeled otherwise.
inline Label block_label(std::span<const CanFrame> frames) {
  bool all_benign = true;
  for (const auto& f : frames) {
    if (f.label == Label::Attack) return Label::Attack;
    if (f.label != Label::Benign) all_benign = false;
  }
  return all_benign ? Label::Benign : Label::Unlabeled;
}

/// Builds one block from exactly kBlockSize frames. Only the low 12 bits of
/// each ID are encoded.
inline MessageBlock make_block(std::span<const CanFrame> frames, std::size_t index) {
  if (frames.size() != kBlockSize) {
    throw Error(ErrorCode::InvalidArgument, "a block needs exactly " + std::to_string(kBlockSize) + " frames");
  }
  MessageBlock block;
  block.block_index = index;
  block.start_timestamp = frames.front().timestamp;
  block.label = block_label(frames);
  for (std::size_t r = 0; r < kBlockSize; ++r) {
    const auto bits = binarize_id(frames[r].can_id & kMaxCanId);
    std::copy(bits.begin(), bits.end(), block.matrix.begin() + static_cast<std::ptrdiff_t>(r * kIdBits));
  }
  return block;
}

struct BlockSet {
  std::vector<MessageBlock> blocks;
  std::size_t dropped_frames = 0;  // trailing remainder, always < kBlockSize
};

/// Non-overlapping blocks of consecutive frames; a short tail is dropped.
inline BlockSet build_blocks(std::span<const CanFrame> frames) {
  BlockSet out;
  const std::size_t n = frames.size() / kBlockSize;
  out.blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.blocks.push_back(make_block(frames.subspan(i * kBlockSize, kBlockSize), i));
  out.dropped_frames = frames.size() - n * kBlockSize;
  return out;
}

/// Stacks blocks into a (B, 100, 12, 1) tensor of exact 0.0 / 1.0 values.
template <typename T = float>
nn::Tensor<T> blocks_to_tensor(std::span<const MessageBlock> blocks) {
  nn::Tensor<T> t({blocks.size(), kBlockSize, kIdBits, 1});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < kBlockBits; ++i) t[b * kBlockBits + i] = static_cast<T>(blocks[b].matrix[i]);
  }
  return t;
}

template <typename T = float>
nn::Tensor<T> block_to_tensor(const MessageBlock& block) {
  return blocks_to_tensor<T>(std::span<const MessageBlock>(&block, 1));
}

/// Thresholds sample `b` of a (B, 100, 12, 1) tensor: values >= 0.5 become 1.
template <typename T>
BitMatrix tensor_to_bits(const nn::Tensor<T>& t, std::size_t b = 0) {
  if (t.rank() != 4 || t.dim(1) != kBlockSize || t.dim(2) != kIdBits || t.dim(3) != 1 || b >= t.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "expected (B,100,12,1), got " + nn::shape_string(t.shape()));
  }
  BitMatrix bits{};
  for (std::size_t i = 0; i < kBlockBits; ++i) bits[i] = t[b * kBlockBits + i] >= T(0.5) ? 1 : 0;
  return bits;
}

// Block dump: one block per line, 1200 '0'/'1' characters, a comma, the label.

inline void write_block_dump(std::ostream& out, std::span<const MessageBlock> blocks) {
  std::string line(kBlockBits, '0');
  for (const auto& block : blocks) {
    for (std::size_t i = 0; i < kBlockBits; ++i) line[i] = block.matrix[i] ? '1' : '0';
    out << line << ',' << to_string(block.label) << '\n';
  }
}

inline std::vector<MessageBlock> read_block_dump(std::istream& in) {
  std::vector<MessageBlock> blocks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma != kBlockBits) throw ParseError(ErrorCode::Parse, line_no, "bits", "expected 1200 bits");
    MessageBlock block;
    block.block_index = blocks.size();
    for (std::size_t i = 0; i < kBlockBits; ++i) {
      if (line[i] != '0' && line[i] != '1') throw ParseError(ErrorCode::Parse, line_no, "bits", "non-binary digit");
      block.matrix[i] = line[i] == '1';
    }
    const auto label = detail::trim(std::string_view(line).substr(comma + 1));
    if (label == "benign") block.label = Label::Benign;
    else if (label == "attack") block.label = Label::Attack;
    else if (label == "unlabeled") block.label = Label::Unlabeled;
    else throw ParseError(ErrorCode::Parse, line_no, "label", "unknown label");
    blocks.push_back(block);
  }
  return blocks;
}

}  // namespace canids
