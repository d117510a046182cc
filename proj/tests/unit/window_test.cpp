#include <gtest/gtest.h>

#include <sstream>

#include "canids/dataset.hpp"
#include "canids/window.hpp"

using namespace canids;

namespace {

std::vector<CanFrame> frames_with_ids(std::size_t n, std::uint32_t first = 0) {
  std::vector<CanFrame> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].timestamp = 0.001 * static_cast<double>(i);
    out[i].can_id = static_cast<std::uint32_t>((first + i) % (kMaxCanId + 1));
    out[i].label = Label::Benign;
  }
  return out;
}

}  // namespace

TEST(Window, BlocksAreConsecutiveAndRemainderDropped) {
  const auto frames = frames_with_ids(1234);
  const BlockSet set = build_blocks(frames);
  ASSERT_EQ(set.blocks.size(), 12u);
  EXPECT_EQ(set.dropped_frames, 34u);
  for (std::size_t b = 0; b < set.blocks.size(); ++b) {
    EXPECT_EQ(set.blocks[b].block_index, b);
    EXPECT_DOUBLE_EQ(set.blocks[b].start_timestamp, frames[b * 100].timestamp);
    for (std::size_t r = 0; r < kBlockSize; ++r) {
      const IdBitVector bits = binarize_id(frames[b * 100 + r].can_id);
      for (std::size_t c = 0; c < kIdBits; ++c) ASSERT_EQ(set.blocks[b].matrix[r * kIdBits + c], bits[c]);
    }
  }
}

TEST(Window, FewerThanOneBlock) {
  const BlockSet set = build_blocks(frames_with_ids(99));
  EXPECT_TRUE(set.blocks.empty());
  EXPECT_EQ(set.dropped_frames, 99u);
}

TEST(Window, BlockLabelIsAttackIfAnyFrameIs) {
  auto frames = frames_with_ids(100);
  EXPECT_EQ(make_block(frames, 0).label, Label::Benign);
  frames[57].label = Label::Attack;
  EXPECT_EQ(make_block(frames, 0).label, Label::Attack);
  frames = frames_with_ids(100);
  frames[3].label = Label::Unlabeled;
  EXPECT_EQ(make_block(frames, 0).label, Label::Unlabeled);
}

TEST(Window, TensorRoundTrip) {
  const auto set = build_blocks(frames_with_ids(300, 0x100));
  const auto t = blocks_to_tensor<float>(set.blocks);
  EXPECT_EQ(t.shape(), (nn::Shape{3, 100, 12, 1}));
  for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(tensor_to_bits(t, b), set.blocks[b].matrix);
}

TEST(Window, BinarizationThresholdIsInclusive) {
  nn::Tensor<float> t({1, 100, 12, 1});
  t[0] = 0.5f;
  t[1] = 0.49999f;
  const auto bits = tensor_to_bits(t);
  EXPECT_EQ(bits[0], 1);
  EXPECT_EQ(bits[1], 0);
}

TEST(Window, DumpRoundTrip) {
  auto frames = frames_with_ids(200, 7);
  frames[150].label = Label::Attack;
  const auto set = build_blocks(frames);
  std::stringstream ss;
  write_block_dump(ss, set.blocks);
  const auto back = read_block_dump(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].matrix, set.blocks[0].matrix);
  EXPECT_EQ(back[1].label, Label::Attack);
}
