#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#if defined(__AVX512VNNI__)
#include <immintrin.h>
#endif

#include "canids/error.hpp"
#include "canids/layers.hpp"
#include "canids/model.hpp"
#include "canids/serialize.hpp"
#include "canids/window.hpp"

namespace canids::quant {

using nn::Activation;
using nn::CaeModel;
using nn::LayerKind;
using nn::LayerSpec;
using nn::Tensor;

/// Scale exponent used for an all-zero tensor.
inline constexpr int kDegenerateExponent = -15;

/// Largest magnitude seen on the model input and on every layer output
/// (post-activation) over a calibration set.
struct CalibrationStats {
  double input_max_abs = 0.0;
  std::vector<double> layer_max_abs;
  std::size_t blocks = 0;
};

/// Folds `blocks` into existing statistics; maxima never decrease.
inline void accumulate_calibration(CalibrationStats& stats, const CaeModel<float>& model,
                                   std::span<const MessageBlock> blocks, std::size_t batch_size = 32) {
  stats.layer_max_abs.resize(model.layers().size(), 0.0);
  const auto max_abs = [](const Tensor<float>& t) {
    double m = 0.0;
    for (float v : t.values()) m = std::max(m, static_cast<double>(std::abs(v)));
    return m;
  };
  nn::Intermediates<float> record;
  for (std::size_t start = 0; start < blocks.size(); start += batch_size) {
    const auto chunk = blocks.subspan(start, std::min(batch_size, blocks.size() - start));
    nn::forward(model, blocks_to_tensor<float>(chunk), &record);
    stats.input_max_abs = std::max(stats.input_max_abs, max_abs(record.values[0]));
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
      stats.layer_max_abs[i] = std::max(stats.layer_max_abs[i], max_abs(record.values[i + 1]));
    }
  }
  stats.blocks += blocks.size();
}

inline CalibrationStats calibrate(const CaeModel<float>& model, std::span<const MessageBlock> blocks) {
  if (blocks.empty()) throw Error(ErrorCode::EmptyCalibrationSet, "calibration needs at least one block");
  CalibrationStats stats;
  accumulate_calibration(stats, model, blocks);
  return stats;
}

/// Power-of-two scale exponent e with max_abs / 2^e in (64, 128]: the
/// smallest step that still spans max_abs with 8 signed bits. Values that land
/// exactly on 128 saturate to 127.
inline int scale_exponent(double max_abs) {
  if (!(max_abs > 0.0) || !std::isfinite(max_abs)) return kDegenerateExponent;
  int e2 = 0;
  const double mantissa = std::frexp(max_abs, &e2);  // max_abs = mantissa * 2^e2, mantissa in [0.5, 1)
  const int ceil_log2 = mantissa == 0.5 ? e2 - 1 : e2;
  return ceil_log2 - 7;
}

/// Round half away from zero, then saturate to int8.
inline std::int8_t quantize_value(double v, int exponent) {
  const double q = std::round(std::ldexp(v, -exponent));
  return static_cast<std::int8_t>(std::clamp(q, -128.0, 127.0));
}

inline double dequantize_value(std::int32_t q, int exponent) { return std::ldexp(static_cast<double>(q), exponent); }

/// Rescales an accumulator by 2^-shift with round-half-away-from-zero and
/// saturates to int8.
inline std::int8_t requantize(std::int32_t acc, int shift) {
  std::int64_t v = acc;
  if (shift > 0) {
    const std::int64_t half = std::int64_t{1} << (shift - 1);
    const std::int64_t mag = v < 0 ? -v : v;
    const std::int64_t r = shift >= 63 ? 0 : (mag + half) >> shift;
    v = v < 0 ? -r : r;
  } else if (shift < 0) {
    v = -shift >= 32 ? (v > 0 ? 127 : (v < 0 ? -128 : 0)) : v * (std::int64_t{1} << -shift);
  }
  return static_cast<std::int8_t>(std::clamp<std::int64_t>(v, -128, 127));
}

/// One integer layer. Real values are int * 2^exponent.
struct QuantLayer {
  LayerSpec spec;
  std::size_t in_channels = 0;
  std::vector<std::int8_t> weights;  // [k_h][k_w][in_c][out_c]
  std::vector<std::int32_t> bias;    // at exponent weight_exp + input_exp
  int weight_exp = 0;
  int input_exp = 0;
  int output_exp = 0;  // unused by the final layer, which is dequantized

  friend bool operator==(const QuantLayer&, const QuantLayer&) = default;
};

class QuantModel {
 public:
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<QuantLayer> layers;

  Tensor<float> reconstruct(const Tensor<float>& input) const;

  friend bool operator==(const QuantModel&, const QuantModel&) = default;
};

inline std::vector<float> dequantize_weights(const QuantLayer& layer) {
  std::vector<float> out(layer.weights.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(dequantize_value(layer.weights[i], layer.weight_exp));
  }
  return out;
}

/// Post-training quantization with per-tensor power-of-two scales. Binary
/// model inputs are represented exactly as int8 {0, 1} (exponent 0).
inline QuantModel quantize(const CaeModel<float>& model, const CalibrationStats& stats) {
  if (stats.layer_max_abs.size() != model.layers().size()) {
    throw Error(ErrorCode::InvalidArgument, "calibration statistics do not cover every layer");
  }
  QuantModel qm;
  qm.height = model.height();
  qm.width = model.width();
  qm.channels = model.channels();
  int in_exp = 0;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& layer = model.layers()[i];
    QuantLayer q;
    q.spec = layer.spec;
    q.in_channels = layer.in_channels;
    q.input_exp = in_exp;
    const bool last = i + 1 == model.layers().size();
    if (layer.spec.has_params()) {
      double w_max = 0.0;
      for (float v : layer.weights.values()) w_max = std::max(w_max, static_cast<double>(std::abs(v)));
      q.weight_exp = scale_exponent(w_max);
      q.weights.resize(layer.weights.size());
      for (std::size_t k = 0; k < q.weights.size(); ++k) q.weights[k] = quantize_value(layer.weights[k], q.weight_exp);
      // Worst case |sum of products| for one output element.
      const double product_bound =
          static_cast<double>(layer.spec.kernel_h * layer.spec.kernel_w * layer.in_channels) * 128.0 * 128.0;
      const int bias_exp = q.weight_exp + q.input_exp;
      q.bias.resize(layer.bias.size());
      for (std::size_t k = 0; k < q.bias.size(); ++k) {
        const double b = std::round(std::ldexp(static_cast<double>(layer.bias[k]), -bias_exp));
        if (std::abs(b) + product_bound > static_cast<double>(std::numeric_limits<std::int32_t>::max())) {
          throw Error(ErrorCode::AccumulatorOverflow, "layer " + std::to_string(i) + " bias exceeds int32 range");
        }
        q.bias[k] = static_cast<std::int32_t>(b);
      }
      q.output_exp = last ? 0 : scale_exponent(stats.layer_max_abs[i]);
    } else {
      q.output_exp = in_exp;
    }
    in_exp = q.output_exp;
    qm.layers.push_back(std::move(q));
  }
  return qm;
}

namespace detail {

/// Calls fn(ky, kx, iy, ix) for every input pixel feeding output pixel
/// (oy, ox). For a transposed convolution this inverts o = i * s + k - pad.
template <typename Fn>
inline void for_each_input_tap(const nn::Geometry& g, bool transpose, std::size_t oy, std::size_t ox, Fn&& fn) {
  if (!transpose) {
    nn::kernels::for_each_conv_tap(g, oy, ox, fn);
    return;
  }
  for (std::size_t ky = 0; ky < g.k_h; ++ky) {
    const std::ptrdiff_t ty = static_cast<std::ptrdiff_t>(oy + g.pad_top) - static_cast<std::ptrdiff_t>(ky);
    if (ty < 0 || ty % static_cast<std::ptrdiff_t>(g.s_h) != 0) continue;
    const auto iy = static_cast<std::size_t>(ty) / g.s_h;
    if (iy >= g.in_h) continue;
    for (std::size_t kx = 0; kx < g.k_w; ++kx) {
      const std::ptrdiff_t tx = static_cast<std::ptrdiff_t>(ox + g.pad_left) - static_cast<std::ptrdiff_t>(kx);
      if (tx < 0 || tx % static_cast<std::ptrdiff_t>(g.s_w) != 0) continue;
      const auto ix = static_cast<std::size_t>(tx) / g.s_w;
      if (ix >= g.in_w) continue;
      fn(ky, kx, iy, ix);
    }
  }
}

/// Output-stationary integer convolution: each output pixel's int32
/// accumulators stay local while every (tap, input channel) is folded in.
/// N is the channel count when known at compile time, 0 otherwise.
template <std::size_t N>
void accumulate(const nn::Geometry& g, bool transpose, const std::int8_t* in, const std::int16_t* w,
                std::int32_t* acc) {
  const std::size_t cin = g.in_c, cout = N ? N : g.out_c;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        std::int32_t* o = acc + g.out_pixel(b, oy, ox) * cout;
        alignas(64) std::int32_t local[N ? N : 1];
        std::int32_t* a = N ? local : o;
        if constexpr (N != 0) std::copy(o, o + N, local);
        for_each_input_tap(g, transpose, oy, ox, [&](std::size_t ky, std::size_t kx, std::size_t iy, std::size_t ix) {
          const std::int8_t* x = in + g.in_pixel(b, iy, ix) * cin;
          const std::int16_t* wk = w + (ky * g.k_w + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const std::int32_t xv = x[ci];
            if (xv == 0) continue;
            const std::int16_t* wr = wk + ci * cout;
#pragma omp simd
            for (std::size_t co = 0; co < cout; ++co) a[co] += xv * wr[co];
          }
        });
        if constexpr (N != 0) std::copy(local, local + N, o);
      }
    }
  }
}

#if defined(__AVX512VNNI__) && defined(__AVX512BW__)
// vpdpbusd multiplies unsigned bytes by signed bytes, four per int32 lane,
// without saturation. Every hidden activation is post-ReLU and the input is
// binary, so the unsigned operand is always the layer input.

/// Wide outputs: broadcast four input channels, multiply against 16 output
/// channels at a time. Weights repacked to [tap][cin/4][cout][4].
template <std::size_t COUT>
void accumulate_vnni_wide(const nn::Geometry& g, bool transpose, const std::int8_t* in,
                          const std::vector<std::int8_t>& weights, std::int32_t* acc) {
  constexpr std::size_t R = COUT / 16;
  const std::size_t cin = g.in_c, groups = (cin + 3) / 4, cin4 = groups * 4, taps = g.k_h * g.k_w;
  std::vector<std::int8_t> packed(taps * groups * COUT * 4, 0);
  for (std::size_t t = 0; t < taps; ++t)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < COUT; ++co)
        packed[((t * groups + ci / 4) * COUT + co) * 4 + ci % 4] = weights[(t * cin + ci) * COUT + co];
  std::vector<std::int8_t> padded;
  if (cin4 != cin) {
    const std::size_t pixels = g.batch * g.in_h * g.in_w;
    padded.assign(pixels * cin4, 0);
    for (std::size_t p = 0; p < pixels; ++p) std::copy(in + p * cin, in + (p + 1) * cin, padded.data() + p * cin4);
    in = padded.data();
  }
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        std::int32_t* o = acc + g.out_pixel(b, oy, ox) * COUT;
        __m512i a[R];
        for (std::size_t r = 0; r < R; ++r) a[r] = _mm512_loadu_si512(o + r * 16);
        for_each_input_tap(g, transpose, oy, ox, [&](std::size_t ky, std::size_t kx, std::size_t iy, std::size_t ix) {
          const std::int8_t* x = in + g.in_pixel(b, iy, ix) * cin4;
          const std::int8_t* wt = packed.data() + (ky * g.k_w + kx) * groups * COUT * 4;
          for (std::size_t q = 0; q < groups; ++q) {
            std::int32_t quad;
            std::memcpy(&quad, x + q * 4, 4);
            if (quad == 0) continue;
            const __m512i xb = _mm512_set1_epi32(quad);
            const std::int8_t* wq = wt + q * COUT * 4;
            for (std::size_t r = 0; r < R; ++r) a[r] = _mm512_dpbusd_epi32(a[r], xb, _mm512_loadu_si512(wq + r * 64));
          }
        });
        for (std::size_t r = 0; r < R; ++r) _mm512_storeu_si512(o + r * 16, a[r]);
      }
    }
  }
}

/// Narrow outputs: dot products along the input channels, 64 at a time.
/// Weights repacked to [tap][cout][cin].
inline void accumulate_vnni_narrow(const nn::Geometry& g, bool transpose, const std::int8_t* in,
                                   const std::vector<std::int8_t>& weights, std::int32_t* acc) {
  const std::size_t cin = g.in_c, cout = g.out_c, taps = g.k_h * g.k_w;
  std::vector<std::int8_t> packed(taps * cout * cin);
  for (std::size_t t = 0; t < taps; ++t)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co) packed[(t * cout + co) * cin + ci] = weights[(t * cin + ci) * cout + co];
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        std::int32_t* o = acc + g.out_pixel(b, oy, ox) * cout;
        for (std::size_t co = 0; co < cout; ++co) {
          __m512i a = _mm512_setzero_si512();
          for_each_input_tap(g, transpose, oy, ox, [&](std::size_t ky, std::size_t kx, std::size_t iy, std::size_t ix) {
            const std::int8_t* x = in + g.in_pixel(b, iy, ix) * cin;
            const std::int8_t* wr = packed.data() + ((ky * g.k_w + kx) * cout + co) * cin;
            for (std::size_t c = 0; c < cin; c += 64) {
              a = _mm512_dpbusd_epi32(a, _mm512_loadu_si512(x + c), _mm512_loadu_si512(wr + c));
            }
          });
          o[co] += _mm512_reduce_add_epi32(a);
        }
      }
    }
  }
}

inline bool any_negative(const std::int8_t* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < 0) return true;
  }
  return false;
}
#endif

inline void conv_accumulate(const nn::Geometry& g, bool transpose, const std::int8_t* in,
                            const std::vector<std::int8_t>& weights, std::int32_t* acc) {
#if defined(__AVX512VNNI__) && defined(__AVX512BW__)
  if (!any_negative(in, g.batch * g.in_h * g.in_w * g.in_c)) {
    switch (g.out_c) {
      case 64: return accumulate_vnni_wide<64>(g, transpose, in, weights, acc);
      case 128: return accumulate_vnni_wide<128>(g, transpose, in, weights, acc);
      default:
        if (g.out_c < 16 && g.in_c % 64 == 0) return accumulate_vnni_narrow(g, transpose, in, weights, acc);
    }
  }
#endif
  const std::vector<std::int16_t> w(weights.begin(), weights.end());
  switch (g.out_c) {
    case 1: accumulate<1>(g, transpose, in, w.data(), acc); break;
    case 64: accumulate<64>(g, transpose, in, w.data(), acc); break;
    case 128: accumulate<128>(g, transpose, in, w.data(), acc); break;
    default: accumulate<0>(g, transpose, in, w.data(), acc); break;
  }
}

}  // namespace detail

/// Integer inference. Convolutions accumulate in int32 from the int32 bias;
/// intermediate layers requantize to int8 by power-of-two shifts; the final
/// layer is dequantized and its activation applied in floating point.
inline Tensor<float> forward_quant(const QuantModel& qm, const Tensor<float>& input) {
  const nn::Shape& s = input.shape();
  if (s.size() != 4 || s[1] != qm.height || s[2] != qm.width || s[3] != qm.channels) {
    throw Error(ErrorCode::ShapeMismatch, "quantized model got input " + nn::shape_string(s));
  }
  const std::size_t batch = s[0];
  const int in_exp0 = qm.layers.empty() ? 0 : qm.layers.front().input_exp;
  std::vector<std::int8_t> current(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) current[i] = quantize_value(input[i], in_exp0);

  std::size_t h = qm.height, w = qm.width, c = qm.channels;
  Tensor<float> output;
  for (std::size_t li = 0; li < qm.layers.size(); ++li) {
    const QuantLayer& layer = qm.layers[li];
    const nn::Geometry g = nn::make_geometry(layer.spec, batch, h, w, c);
    const std::size_t out_size = batch * g.out_h * g.out_w * g.out_c;
    const bool last = li + 1 == qm.layers.size();
    if (layer.spec.kind == LayerKind::MaxPool2D) {
      std::vector<std::int8_t> out(out_size);
      nn::kernels::max_pool_forward<std::int8_t>(g, current.data(), out.data(), nullptr);
      current = std::move(out);
      if (last) {
        output = Tensor<float>({batch, g.out_h, g.out_w, g.out_c});
        for (std::size_t i = 0; i < out_size; ++i) output[i] = static_cast<float>(dequantize_value(current[i], layer.output_exp));
      }
    } else {
      std::vector<std::int32_t> acc(out_size);
      for (std::size_t p = 0; p < out_size; p += g.out_c) std::copy(layer.bias.begin(), layer.bias.end(), acc.begin() + static_cast<std::ptrdiff_t>(p));
      detail::conv_accumulate(g, layer.spec.kind == LayerKind::Conv2DTranspose, current.data(), layer.weights, acc.data());
      if (last) {
        output = Tensor<float>({batch, g.out_h, g.out_w, g.out_c});
        const int e = layer.weight_exp + layer.input_exp;
        for (std::size_t i = 0; i < out_size; ++i) {
          double v = dequantize_value(acc[i], e);
          if (layer.spec.activation == Activation::Relu) v = std::max(v, 0.0);
          if (layer.spec.activation == Activation::Sigmoid) v = 1.0 / (1.0 + std::exp(-v));
          output[i] = static_cast<float>(v);
        }
      } else {
        const int shift = layer.output_exp - (layer.weight_exp + layer.input_exp);
        std::vector<std::int8_t> out(out_size);
        const bool relu = layer.spec.activation == Activation::Relu;
        for (std::size_t i = 0; i < out_size; ++i) out[i] = requantize(relu ? std::max(acc[i], 0) : acc[i], shift);
        current = std::move(out);
      }
    }
    h = g.out_h;
    w = g.out_w;
    c = g.out_c;
  }
  return output;
}

inline Tensor<float> QuantModel::reconstruct(const Tensor<float>& input) const { return forward_quant(*this, input); }

// Layout (little-endian):
//   "CANIDSQ1" u32 version, u32 height, u32 width, u32 channels, u32 layers
//   per layer: u8 kind, u8 activation, u8 padding, u8 0, u32 filters,
//              u32 kernel_h, u32 kernel_w, u32 stride_h, u32 stride_w,
//              u32 in_channels, i32 weight_exp, i32 input_exp, i32 output_exp,
//              u64 n, i8 weights[n], u64 m, i32 bias[m]
//   u32 CRC-32 of all preceding bytes
inline constexpr std::string_view kQuantMagic = "CANIDSQ1";
inline constexpr std::uint32_t kQuantVersion = 1;

inline std::vector<std::uint8_t> encode_quant_model(const QuantModel& qm) {
  io::ByteWriter w;
  w.raw(kQuantMagic);
  w.u32(kQuantVersion);
  w.u32(static_cast<std::uint32_t>(qm.height));
  w.u32(static_cast<std::uint32_t>(qm.width));
  w.u32(static_cast<std::uint32_t>(qm.channels));
  w.u32(static_cast<std::uint32_t>(qm.layers.size()));
  for (const auto& layer : qm.layers) {
    const LayerSpec& s = layer.spec;
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u8(static_cast<std::uint8_t>(s.activation));
    w.u8(static_cast<std::uint8_t>(s.padding));
    w.u8(0);
    for (std::size_t v : {s.filters, s.kernel_h, s.kernel_w, s.stride_h, s.stride_w, layer.in_channels}) {
      w.u32(static_cast<std::uint32_t>(v));
    }
    w.i32(layer.weight_exp);
    w.i32(layer.input_exp);
    w.i32(layer.output_exp);
    w.u64(layer.weights.size());
    for (std::int8_t v : layer.weights) w.u8(static_cast<std::uint8_t>(v));
    w.u64(layer.bias.size());
    for (std::int32_t v : layer.bias) w.i32(v);
  }
  w.seal();
  return w.bytes();
}

inline QuantModel decode_quant_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader r = io::open_container(bytes, kQuantMagic, kQuantVersion);
  QuantModel qm;
  qm.height = r.u32();
  qm.width = r.u32();
  qm.channels = r.u32();
  const std::size_t n_layers = r.u32();
  std::size_t h = qm.height, w = qm.width, c = qm.channels;
  for (std::size_t i = 0; i < n_layers; ++i) {
    QuantLayer q;
    const auto kind = r.u8();
    const auto act = r.u8();
    const auto pad = r.u8();
    r.u8();
    if (kind > 2 || act > 2 || pad != 0) throw Error(ErrorCode::VersionMismatch, "unknown layer encoding");
    q.spec.kind = static_cast<LayerKind>(kind);
    q.spec.activation = static_cast<Activation>(act);
    q.spec.filters = r.u32();
    q.spec.kernel_h = r.u32();
    q.spec.kernel_w = r.u32();
    q.spec.stride_h = r.u32();
    q.spec.stride_w = r.u32();
    q.in_channels = r.u32();
    q.weight_exp = r.i32();
    q.input_exp = r.i32();
    q.output_exp = r.i32();
    q.weights.resize(r.u64());
    for (auto& v : q.weights) v = static_cast<std::int8_t>(r.u8());
    q.bias.resize(r.u64());
    for (auto& v : q.bias) v = r.i32();
    if (q.spec.kernel_h == 0 || q.spec.kernel_w == 0 || q.spec.stride_h == 0 || q.spec.stride_w == 0 ||
        q.in_channels != c) {
      throw Error(ErrorCode::ShapeMismatch, "inconsistent layer geometry");
    }
    const nn::Geometry g = nn::make_geometry(q.spec, 1, h, w, c);
    if (q.spec.has_params() && (q.weights.size() != g.k_h * g.k_w * g.in_c * g.out_c || q.bias.size() != g.out_c)) {
      throw Error(ErrorCode::ShapeMismatch, "stored parameter count disagrees with topology");
    }
    h = g.out_h;
    w = g.out_w;
    c = g.out_c;
    qm.layers.push_back(std::move(q));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes after last layer");
  return qm;
}

inline void save_quant_model(const QuantModel& qm, const std::string& path) {
  io::write_file(path, encode_quant_model(qm));
}

inline QuantModel load_quant_model(const std::string& path) { return decode_quant_model(io::read_file(path)); }

}  // namespace canids::quant
