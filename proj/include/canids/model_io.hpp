#pragma once

#include <string>
#include <vector>

#include "canids/model.hpp"
#include "canids/serialize.hpp"

namespace canids::nn {

inline constexpr std::string_view kModelMagic = "CANIDSM1";
inline constexpr std::uint32_t kModelVersion = 1;

// Layout (little-endian):
//   "CANIDSM1" u32 version, u32 height, u32 width, u32 channels, u32 layers
//   per layer: u8 kind, u8 activation, u8 padding, u8 0, u32 filters,
//              u32 kernel_h, u32 kernel_w, u32 stride_h, u32 stride_w,
//              u32 in_channels, u64 n, f32 weights[n], u64 m, f32 bias[m]
//   u32 CRC-32 of all preceding bytes

inline std::vector<std::uint8_t> encode_model(const CaeModel<float>& model) {
  io::ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.height()));
  w.u32(static_cast<std::uint32_t>(model.width()));
  w.u32(static_cast<std::uint32_t>(model.channels()));
  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& layer : model.layers()) {
    const LayerSpec& s = layer.spec;
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u8(static_cast<std::uint8_t>(s.activation));
    w.u8(static_cast<std::uint8_t>(s.padding));
    w.u8(0);
    for (std::size_t v : {s.filters, s.kernel_h, s.kernel_w, s.stride_h, s.stride_w, layer.in_channels}) {
      w.u32(static_cast<std::uint32_t>(v));
    }
    w.u64(layer.weights.size());
    for (float v : layer.weights.values()) w.f32(v);
    w.u64(layer.bias.size());
    for (float v : layer.bias.values()) w.f32(v);
  }
  w.seal();
  return w.bytes();
}

inline CaeModel<float> decode_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader r = io::open_container(bytes, kModelMagic, kModelVersion);
  const std::size_t height = r.u32(), width = r.u32(), channels = r.u32();
  const std::size_t n_layers = r.u32();
  std::vector<LayerSpec> specs;
  std::vector<std::vector<float>> weights, biases;
  for (std::size_t i = 0; i < n_layers; ++i) {
    LayerSpec s;
    const auto kind = r.u8();
    const auto act = r.u8();
    const auto pad = r.u8();
    r.u8();
    if (kind > 2 || act > 2 || pad != 0) throw Error(ErrorCode::VersionMismatch, "unknown layer encoding");
    s.kind = static_cast<LayerKind>(kind);
    s.activation = static_cast<Activation>(act);
    s.padding = Padding::Same;
    s.filters = r.u32();
    s.kernel_h = r.u32();
    s.kernel_w = r.u32();
    s.stride_h = r.u32();
    s.stride_w = r.u32();
    r.u32();  // in_channels, re-derived by the constructor
    std::vector<float> w(r.u64());
    for (auto& v : w) v = r.f32();
    std::vector<float> b(r.u64());
    for (auto& v : b) v = r.f32();
    specs.push_back(s);
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes after last layer");
  CaeModel<float> model(height, width, channels, specs);
  for (std::size_t i = 0; i < n_layers; ++i) {
    auto& layer = model.layers()[i];
    if (weights[i].size() != layer.weights.size() || biases[i].size() != layer.bias.size()) {
      throw Error(ErrorCode::ShapeMismatch, "stored parameter count disagrees with topology");
    }
    if (layer.spec.has_params()) {
      layer.weights = Tensor<float>(layer.weights.shape(), std::move(weights[i]));
      layer.bias = Tensor<float>(layer.bias.shape(), std::move(biases[i]));
    }
  }
  return model;
}

inline void save_model(const CaeModel<float>& model, const std::string& path) {
  io::write_file(path, encode_model(model));
}

inline CaeModel<float> load_model(const std::string& path) { return decode_model(io::read_file(path)); }

}  // namespace canids::nn
