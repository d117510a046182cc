#include <gtest/gtest.h>

#include "canids/dataset.hpp"
#include "canids/quant.hpp"
#include "canids/window.hpp"
#include "support/oracles.hpp"

using namespace canids;
using namespace canids::quant;

namespace {

std::vector<MessageBlock> some_blocks(std::size_t n, std::uint64_t seed) {
  const Dataset ds = generate_benign(TrafficProfile::standard(0.12 * static_cast<double>(n) + 0.2, seed));
  auto blocks = build_blocks(ds.frames).blocks;
  blocks.resize(std::min(blocks.size(), n));
  return blocks;
}

nn::CaeModel<float> small_model(std::uint64_t seed) {
  auto m = nn::make_cae<float>(seed, 8, 4);
  Rng rng(seed);
  for (auto& layer : m.layers())
    for (auto& b : layer.bias.values()) b = static_cast<float>(rng.uniform(-0.1, 0.1));
  return m;
}

// Integer pipeline recomputed with the reference convolutions on integer
// valued doubles, which are exact at these magnitudes.
nn::Tensor<float> reference_quant_forward(const QuantModel& qm, const nn::Tensor<float>& x) {
  oracle::Image cur(static_cast<int>(x.dim(0)), static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)), 1);
  for (std::size_t i = 0; i < x.size(); ++i) cur.v[i] = x[i];
  for (std::size_t li = 0; li < qm.layers.size(); ++li) {
    const auto& l = qm.layers[li];
    const bool last = li + 1 == qm.layers.size();
    if (l.spec.kind == nn::LayerKind::MaxPool2D) {
      cur = oracle::max_pool(cur, 2);
      continue;
    }
    oracle::Kernel k{3, 3, cur.c, static_cast<int>(l.spec.filters), {}, {}};
    for (auto w : l.weights) k.w.push_back(w);
    for (auto b : l.bias) k.b.push_back(b);
    cur = l.spec.kind == nn::LayerKind::Conv2D ? oracle::conv_same(cur, k, 1) : oracle::conv_transpose_same(cur, k, 2);
    for (double& v : cur.v) {
      if (l.spec.activation == nn::Activation::Relu) v = std::max(v, 0.0);
      if (last) {
        v = std::ldexp(v, l.weight_exp + l.input_exp);
        if (l.spec.activation == nn::Activation::Sigmoid) v = 1.0 / (1.0 + std::exp(-v));
      } else {
        const int shift = l.output_exp - l.weight_exp - l.input_exp;
        // Round half away from zero, then saturate.
        const double scaled = std::ldexp(v, -shift);
        v = std::clamp(std::copysign(std::floor(std::abs(scaled) + 0.5), scaled), -128.0, 127.0);
      }
    }
  }
  nn::Tensor<float> out({static_cast<std::size_t>(cur.n), static_cast<std::size_t>(cur.h),
                         static_cast<std::size_t>(cur.w), static_cast<std::size_t>(cur.c)});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(cur.v[i]);
  return out;
}

}  // namespace

TEST(Quant, ScaleExponent) {
  EXPECT_EQ(scale_exponent(1.0), -7);
  EXPECT_EQ(scale_exponent(0.75), -7);
  EXPECT_EQ(scale_exponent(0.5), -8);
  EXPECT_EQ(scale_exponent(3.0), -5);
  EXPECT_EQ(scale_exponent(0.0), kDegenerateExponent);
  for (double m : {0.013, 0.3, 1.7, 6.2, 100.0}) {
    const double q = m / std::ldexp(1.0, scale_exponent(m));
    EXPECT_GT(q, 64.0);
    EXPECT_LE(q, 128.0);
  }
}

TEST(Quant, ValueRoundingAndSaturation) {
  EXPECT_EQ(quantize_value(1.0, -7), 127);
  EXPECT_EQ(quantize_value(-1.0, -7), -128);
  EXPECT_EQ(quantize_value(0.5 / 128, -7), 1);    // 0.5 rounds away from zero
  EXPECT_EQ(quantize_value(-0.5 / 128, -7), -1);
  EXPECT_EQ(quantize_value(0.49 / 128, -7), 0);
  EXPECT_EQ(requantize(6, 2), 2);  // 1.5 -> 2
  EXPECT_EQ(requantize(-6, 2), -2);
  EXPECT_EQ(requantize(5, 2), 1);
  EXPECT_EQ(requantize(100000, 3), 127);
  EXPECT_EQ(requantize(-100000, 3), -128);
  EXPECT_EQ(requantize(3, -2), 12);
}

TEST(Quant, EmptyCalibrationSet) {
  try {
    calibrate(small_model(1), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCalibrationSet);
  }
}

TEST(Quant, WeightsWithinHalfStep) {
  const auto m = small_model(2);
  const auto blocks = some_blocks(8, 1);
  const QuantModel qm = quantize(m, calibrate(m, blocks));
  for (std::size_t i = 0; i < qm.layers.size(); ++i) {
    if (!qm.layers[i].spec.has_params()) continue;
    const auto dq = dequantize_weights(qm.layers[i]);
    const double step = std::ldexp(1.0, qm.layers[i].weight_exp);
    for (std::size_t k = 0; k < dq.size(); ++k) ASSERT_LE(std::abs(dq[k] - m.layers()[i].weights[k]), 0.5 * step + 1e-9);
  }
}

TEST(Quant, IntegerPipelineMatchesReference) {
  const auto m = small_model(3);
  const auto blocks = some_blocks(6, 2);
  const QuantModel qm = quantize(m, calibrate(m, blocks));
  const auto x = blocks_to_tensor<float>(blocks);
  const auto got = qm.reconstruct(x);
  const auto want = reference_quant_forward(qm, x);
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-6) << i;
}

TEST(Quant, FullSizeIntegerPipelineMatchesReference) {
  // Full channel counts take the vectorized kernels where the CPU has them.
  auto m = nn::make_cae<float>(5);
  Rng rng(5);
  for (auto& layer : m.layers())
    for (auto& b : layer.bias.values()) b = static_cast<float>(rng.uniform(-0.05, 0.05));
  const auto blocks = some_blocks(3, 4);
  const QuantModel qm = quantize(m, calibrate(m, blocks));
  const auto x = blocks_to_tensor<float>(blocks);
  const auto got = qm.reconstruct(x);
  const auto want = reference_quant_forward(qm, x);
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-6) << i;
}

TEST(Quant, DispatchedKernelMatchesGeneric) {
  Rng rng(9);
  struct Case {
    nn::LayerKind kind;
    std::size_t h, w, cin, cout, stride;
  };
  const Case cases[] = {{nn::LayerKind::Conv2D, 10, 12, 1, 128, 1},
                        {nn::LayerKind::Conv2D, 5, 6, 128, 64, 1},
                        {nn::LayerKind::Conv2DTranspose, 5, 3, 64, 64, 2},
                        {nn::LayerKind::Conv2DTranspose, 5, 6, 64, 128, 2},
                        {nn::LayerKind::Conv2D, 10, 12, 128, 1, 1},
                        {nn::LayerKind::Conv2D, 4, 4, 3, 5, 1}};
  for (const Case& c : cases) {
    nn::LayerSpec spec;
    spec.kind = c.kind;
    spec.filters = c.cout;
    spec.kernel_h = spec.kernel_w = 3;
    spec.stride_h = spec.stride_w = c.stride;
    const nn::Geometry g = nn::make_geometry(spec, 2, c.h, c.w, c.cin);
    std::vector<std::int8_t> in(2 * c.h * c.w * c.cin), w(9 * c.cin * c.cout);
    for (auto& v : in) v = rng.uniform() < 0.4 ? 0 : static_cast<std::int8_t>(rng.uniform(0, 127));
    for (auto& v : w) v = static_cast<std::int8_t>(std::lround(rng.uniform(-128, 127)));
    const std::size_t n = 2 * g.out_h * g.out_w * c.cout;
    std::vector<std::int32_t> got(n, 7), want(n, 7);
    quant::detail::conv_accumulate(g, c.kind == nn::LayerKind::Conv2DTranspose, in.data(), w, got.data());
    const std::vector<std::int16_t> w16(w.begin(), w.end());
    quant::detail::accumulate<0>(g, c.kind == nn::LayerKind::Conv2DTranspose, in.data(), w16.data(), want.data());
    EXPECT_EQ(got, want) << c.cin << "x" << c.cout;
  }
}

TEST(Quant, TracksFloatModel) {
  const auto m = small_model(4);
  const auto blocks = some_blocks(8, 3);
  const QuantModel qm = quantize(m, calibrate(m, blocks));
  const auto x = blocks_to_tensor<float>(blocks);
  const auto yf = m.reconstruct(x);
  const auto yq = qm.reconstruct(x);
  double err = 0;
  for (std::size_t i = 0; i < yf.size(); ++i) err = std::max(err, static_cast<double>(std::abs(yf[i] - yq[i])));
  EXPECT_LT(err, 0.05);
}

TEST(Quant, DeterministicAndSerializable) {
  const auto m = small_model(5);
  const auto blocks = some_blocks(4, 4);
  const QuantModel qm = quantize(m, calibrate(m, blocks));
  const auto x = blocks_to_tensor<float>(blocks);
  EXPECT_EQ(qm.reconstruct(x), qm.reconstruct(x));
  const auto bytes = encode_quant_model(qm);
  EXPECT_EQ(decode_quant_model(bytes), qm);
  EXPECT_EQ(encode_quant_model(decode_quant_model(bytes)), bytes);
  auto bad = bytes;
  bad.back() ^= 0xff;
  try {
    decode_quant_model(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ChecksumMismatch);
  }
}

TEST(Quant, OversizedBiasOverflows) {
  auto m = small_model(6);
  m.layers()[0].bias[0] = 1e9f;
  const auto blocks = some_blocks(2, 5);
  try {
    quantize(m, calibrate(m, blocks));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AccumulatorOverflow);
  }
}
