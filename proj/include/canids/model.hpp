#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "canids/error.hpp"
#include "canids/layers.hpp"
#include "canids/rng.hpp"
#include "canids/tensor.hpp"

namespace canids::nn {

template <typename T>
struct Layer {
  LayerSpec spec;
  std::size_t in_channels = 0;
  Tensor<T> weights;  // [k_h, k_w, in_c, out_c]; empty for pooling
  Tensor<T> bias;     // [out_c]

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Activations recorded by a forward pass: `values[0]` is the input and
/// `values[i + 1]` the (post-activation) output of layer i.
template <typename T>
struct Intermediates {
  std::vector<Tensor<T>> values;
  std::vector<std::vector<std::uint32_t>> argmax;  // per layer, pooling only
};

/// Sequential convolutional autoencoder over (B, H, W, C) images.
template <typename T>
class CaeModel {
 public:
  CaeModel() = default;

  /// Builds the layer stack with zero parameters.
  CaeModel(std::size_t height, std::size_t width, std::size_t channels, std::vector<LayerSpec> specs)
      : height_(height), width_(width), channels_(channels) {
    std::size_t h = height, w = width, c = channels;
    for (const auto& spec : specs) {
      if (spec.kernel_h == 0 || spec.kernel_w == 0 || spec.stride_h == 0 || spec.stride_w == 0) {
        throw Error(ErrorCode::InvalidArgument, "kernel and stride must be positive");
      }
      Layer<T> layer;
      layer.spec = spec;
      layer.in_channels = c;
      if (spec.has_params()) {
        if (spec.filters == 0) throw Error(ErrorCode::InvalidArgument, "filters must be positive");
        layer.weights = Tensor<T>({spec.kernel_h, spec.kernel_w, c, spec.filters});
        layer.bias = Tensor<T>({spec.filters});
      } else if (h % spec.stride_h != 0 || w % spec.stride_w != 0 || spec.kernel_h != spec.stride_h ||
                 spec.kernel_w != spec.stride_w) {
        throw Error(ErrorCode::InvalidArgument, "pooling must tile the feature map exactly");
      }
      const Geometry g = make_geometry(spec, 1, h, w, c);
      h = g.out_h;
      w = g.out_w;
      c = g.out_c;
      layers_.push_back(std::move(layer));
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& layers() { return layers_; }

  /// Output shape of every layer for a batch of `batch` samples.
  std::vector<Shape> layer_shapes(std::size_t batch) const {
    std::vector<Shape> shapes;
    std::size_t h = height_, w = width_, c = channels_;
    for (const auto& layer : layers_) {
      const Geometry g = make_geometry(layer.spec, batch, h, w, c);
      h = g.out_h;
      w = g.out_w;
      c = g.out_c;
      shapes.push_back({batch, h, w, c});
    }
    return shapes;
  }

  /// Parameter tensors in a fixed order: w0, b0, w1, b1, ... (pooling skipped).
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& layer : layers_) {
      if (!layer.spec.has_params()) continue;
      out.push_back(&layer.weights);
      out.push_back(&layer.bias);
    }
    return out;
  }
  std::vector<const Tensor<T>*> parameters() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& layer : layers_) {
      if (!layer.spec.has_params()) continue;
      out.push_back(&layer.weights);
      out.push_back(&layer.bias);
    }
    return out;
  }

  /// Inference without recording; satisfies the detector's Reconstructor concept.
  Tensor<T> reconstruct(const Tensor<T>& input) const;

  friend bool operator==(const CaeModel&, const CaeModel&) = default;

 private:
  std::size_t height_ = 0, width_ = 0, channels_ = 0;
  std::vector<Layer<T>> layers_;
};

/// The detector topology: Conv(f0) > Pool > Conv(f1) > Pool > ConvT(f1) >
/// ConvT(f0) > Conv(1, sigmoid), 3x3 kernels throughout.
inline std::vector<LayerSpec> cae_topology(std::size_t f0 = 128, std::size_t f1 = 64) {
  return {
      LayerSpec::conv(f0, Activation::Relu),
      LayerSpec::max_pool(2),
      LayerSpec::conv(f1, Activation::Relu),
      LayerSpec::max_pool(2),
      LayerSpec::conv_transpose(f1, Activation::Relu, 2),
      LayerSpec::conv_transpose(f0, Activation::Relu, 2),
      LayerSpec::conv(1, Activation::Sigmoid),
  };
}

/// Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out)) with receptive
/// field folded into both fans) and zero biases.
template <typename T>
void glorot_init(CaeModel<T>& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : model.layers()) {
    if (!layer.spec.has_params()) continue;
    const double receptive = static_cast<double>(layer.spec.kernel_h * layer.spec.kernel_w);
    const double fan_in = receptive * static_cast<double>(layer.in_channels);
    const double fan_out = receptive * static_cast<double>(layer.spec.filters);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : layer.weights.values()) v = static_cast<T>(rng.uniform(-limit, limit));
    layer.bias.fill(T(0));
  }
}

template <typename T>
CaeModel<T> make_cae(std::uint64_t seed, std::size_t f0 = 128, std::size_t f1 = 64, std::size_t height = 100,
                     std::size_t width = 12) {
  CaeModel<T> model(height, width, 1, cae_topology(f0, f1));
  glorot_init(model, seed);
  return model;
}

template <typename T>
std::size_t count_params(const CaeModel<T>& model) {
  std::size_t n = 0;
  for (const auto* p : model.parameters()) n += p->size();
  return n;
}

namespace detail {
template <typename T>
void check_input(const CaeModel<T>& model, const Tensor<T>& input) {
  const Shape& s = input.shape();
  if (s.size() != 4 || s[1] != model.height() || s[2] != model.width() || s[3] != model.channels()) {
    throw Error(ErrorCode::ShapeMismatch, "model expects (B," + std::to_string(model.height()) + "," +
                                              std::to_string(model.width()) + "," +
                                              std::to_string(model.channels()) + "), got " + shape_string(s));
  }
}
}  // namespace detail

/// Runs the model. When `record` is non-null every layer output and pooling
/// argmax is kept there for backward().
template <typename T>
Tensor<T> forward(const CaeModel<T>& model, const Tensor<T>& input, Intermediates<T>* record = nullptr) {
  detail::check_input(model, input);
  const std::size_t batch = input.dim(0);
  if (record) {
    record->values.clear();
    record->argmax.assign(model.layers().size(), {});
    record->values.push_back(input);
  }
  Tensor<T> current = input;
  std::size_t h = model.height(), w = model.width(), c = model.channels();
  for (std::size_t li = 0; li < model.layers().size(); ++li) {
    const Layer<T>& layer = model.layers()[li];
    const Geometry g = make_geometry(layer.spec, batch, h, w, c);
    Tensor<T> out({batch, g.out_h, g.out_w, g.out_c});
    switch (layer.spec.kind) {
      case LayerKind::Conv2D:
        kernels::conv2d_forward(g, current.data(), layer.weights.data(), layer.bias.data(), out.data());
        break;
      case LayerKind::Conv2DTranspose:
        kernels::conv2d_transpose_forward(g, current.data(), layer.weights.data(), layer.bias.data(), out.data());
        break;
      case LayerKind::MaxPool2D: {
        std::vector<std::uint32_t> argmax(record ? out.size() : 0);
        kernels::max_pool_forward(g, current.data(), out.data(), record ? argmax.data() : nullptr);
        if (record) record->argmax[li] = std::move(argmax);
        break;
      }
    }
    if (layer.spec.has_params()) kernels::activate(layer.spec.activation, out.data(), out.size());
    if (record) record->values.push_back(out);
    current = std::move(out);
    h = g.out_h;
    w = g.out_w;
    c = g.out_c;
  }
  return current;
}

template <typename T>
Tensor<T> CaeModel<T>::reconstruct(const Tensor<T>& input) const {
  return forward(*this, input);
}

/// Parameter gradients in CaeModel::parameters() order.
template <typename T>
struct Gradients {
  std::vector<Tensor<T>> tensors;
};

/// Backpropagates d(loss)/d(output) through the recorded forward pass.
template <typename T>
Gradients<T> backward(const CaeModel<T>& model, const Intermediates<T>& record, const Tensor<T>& output_grad) {
  const auto& layers = model.layers();
  if (record.values.size() != layers.size() + 1) {
    throw Error(ErrorCode::MissingIntermediates, "forward() was not run with recording");
  }
  require_same_shape(record.values.back().shape(), output_grad.shape(), "output gradient");
  const std::size_t batch = output_grad.dim(0);

  std::vector<Tensor<T>> grads;
  for (const auto& layer : layers) {
    if (!layer.spec.has_params()) continue;
    grads.emplace_back(layer.weights.shape());
    grads.emplace_back(layer.bias.shape());
  }
  std::size_t slot = grads.size();

  Tensor<T> grad = output_grad;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Layer<T>& layer = layers[li];
    const Tensor<T>& in = record.values[li];
    const Tensor<T>& out = record.values[li + 1];
    const Geometry g = make_geometry(layer.spec, batch, in.dim(1), in.dim(2), in.dim(3));
    const bool need_input_grad = li > 0;
    Tensor<T> din(need_input_grad ? in.shape() : Shape{0});
    T* din_ptr = need_input_grad ? din.data() : nullptr;
    switch (layer.spec.kind) {
      case LayerKind::MaxPool2D:
        if (record.argmax[li].size() != out.size()) {
          throw Error(ErrorCode::MissingIntermediates, "pooling argmax missing");
        }
        if (din_ptr) kernels::max_pool_backward(out.size(), grad.data(), record.argmax[li].data(), din_ptr);
        break;
      case LayerKind::Conv2D:
      case LayerKind::Conv2DTranspose: {
        kernels::activation_backward(layer.spec.activation, out.data(), grad.data(), grad.size());
        slot -= 2;
        T* dw = grads[slot].data();
        T* db = grads[slot + 1].data();
        if (layer.spec.kind == LayerKind::Conv2D) {
          kernels::conv2d_backward(g, in.data(), layer.weights.data(), grad.data(), dw, db, din_ptr);
        } else {
          kernels::conv2d_transpose_backward(g, in.data(), layer.weights.data(), grad.data(), dw, db, din_ptr);
        }
        break;
      }
    }
    grad = std::move(din);
  }
  return Gradients<T>{std::move(grads)};
}

}  // namespace canids::nn
