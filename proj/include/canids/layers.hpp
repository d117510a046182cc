#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace canids::nn {

enum class LayerKind : std::uint8_t { Conv2D, MaxPool2D, Conv2DTranspose };
enum class Activation : std::uint8_t { None, Relu, Sigmoid };
enum class Padding : std::uint8_t { Same };

/// One layer of the sequential model. Pooling layers ignore `filters` and
/// `activation`.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv2D;
  std::size_t filters = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::Same;
  Activation activation = Activation::None;

  static LayerSpec conv(std::size_t filters, Activation act, std::size_t kernel = 3) {
    return {LayerKind::Conv2D, filters, kernel, kernel, 1, 1, Padding::Same, act};
  }
  static LayerSpec max_pool(std::size_t size = 2) {
    return {LayerKind::MaxPool2D, 0, size, size, size, size, Padding::Same, Activation::None};
  }
  static LayerSpec conv_transpose(std::size_t filters, Activation act, std::size_t stride = 2, std::size_t kernel = 3) {
    return {LayerKind::Conv2DTranspose, filters, kernel, kernel, stride, stride, Padding::Same, act};
  }

  bool has_params() const { return kind != LayerKind::MaxPool2D; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Spatial bookkeeping shared by the float and integer kernels.
///
/// Convolutions follow the "same" convention: output = ceil(input / stride),
/// total padding max((out - 1) * stride + k - in, 0) with the smaller half on
/// top/left. A transposed convolution is the exact adjoint of that
/// convolution taken from the (input * stride) sized image, so its output
/// is input * stride and input pixel i scatters to i * stride + k - pad.
struct Geometry {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_h = 0, out_w = 0, out_c = 0;
  std::size_t k_h = 0, k_w = 0;
  std::size_t s_h = 1, s_w = 1;
  std::size_t pad_top = 0, pad_left = 0;

  std::size_t in_pixel(std::size_t b, std::size_t y, std::size_t x) const { return (b * in_h + y) * in_w + x; }
  std::size_t out_pixel(std::size_t b, std::size_t y, std::size_t x) const { return (b * out_h + y) * out_w + x; }
};

inline Geometry make_geometry(const LayerSpec& spec, std::size_t batch, std::size_t h, std::size_t w, std::size_t c) {
  Geometry g;
  g.batch = batch;
  g.in_h = h;
  g.in_w = w;
  g.in_c = c;
  g.k_h = spec.kernel_h;
  g.k_w = spec.kernel_w;
  g.s_h = spec.stride_h;
  g.s_w = spec.stride_w;
  const auto same_pad = [](std::size_t out, std::size_t s, std::size_t k, std::size_t in) {
    const std::size_t need = (out - 1) * s + k;
    return need > in ? need - in : 0;
  };
  switch (spec.kind) {
    case LayerKind::Conv2D:
      g.out_h = (h + g.s_h - 1) / g.s_h;
      g.out_w = (w + g.s_w - 1) / g.s_w;
      g.out_c = spec.filters;
      g.pad_top = same_pad(g.out_h, g.s_h, g.k_h, h) / 2;
      g.pad_left = same_pad(g.out_w, g.s_w, g.k_w, w) / 2;
      break;
    case LayerKind::Conv2DTranspose:
      g.out_h = h * g.s_h;
      g.out_w = w * g.s_w;
      g.out_c = spec.filters;
      g.pad_top = same_pad(h, g.s_h, g.k_h, g.out_h) / 2;
      g.pad_left = same_pad(w, g.s_w, g.k_w, g.out_w) / 2;
      break;
    case LayerKind::MaxPool2D:
      g.out_h = h / g.s_h;
      g.out_w = w / g.s_w;
      g.out_c = c;
      break;
  }
  return g;
}

namespace kernels {

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
inline bool all_zero(const T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] != T(0)) return false;
  }
  return true;
}

// Weights are laid out [k_h][k_w][in_c][out_c] for both convolution kinds.

/// Calls fn(oy, ox, ky, kx, iy, ix) for every valid tap of the convolution
/// producing output pixel (oy, ox).
template <typename Fn>
inline void for_each_conv_tap(const Geometry& g, std::size_t oy, std::size_t ox, Fn&& fn) {
  for (std::size_t ky = 0; ky < g.k_h; ++ky) {
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.s_h + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
    for (std::size_t kx = 0; kx < g.k_w; ++kx) {
      const std::ptrdiff_t ix =
          static_cast<std::ptrdiff_t>(ox * g.s_w + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
      fn(ky, kx, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
    }
  }
}

/// Calls fn(ky, kx, oy, ox) for every output pixel input pixel (iy, ix) of a
/// transposed convolution scatters into.
template <typename Fn>
inline void for_each_transpose_tap(const Geometry& g, std::size_t iy, std::size_t ix, Fn&& fn) {
  for (std::size_t ky = 0; ky < g.k_h; ++ky) {
    const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * g.s_h + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
    if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(g.out_h)) continue;
    for (std::size_t kx = 0; kx < g.k_w; ++kx) {
      const std::ptrdiff_t ox =
          static_cast<std::ptrdiff_t>(ix * g.s_w + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
      if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(g.out_w)) continue;
      fn(ky, kx, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox));
    }
  }
}

template <typename T>
void conv2d_forward(const Geometry& g, const T* in, const T* w, const T* bias, T* out) {
  const std::size_t cin = g.in_c, cout = g.out_c;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        T* o = out + g.out_pixel(b, oy, ox) * cout;
        std::copy(bias, bias + cout, o);
        for_each_conv_tap(g, oy, ox, [&](std::size_t ky, std::size_t kx, std::size_t iy, std::size_t ix) {
          const T* x = in + g.in_pixel(b, iy, ix) * cin;
          const T* wk = w + (ky * g.k_w + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            if (x[ci] != T(0)) axpy(x[ci], wk + ci * cout, o, cout);
          }
        });
      }
    }
  }
}

/// [k_h][k_w][in_c][out_c] -> [k_h][k_w][out_c][in_c], so input gradients
/// can be accumulated with contiguous axpy over input channels.
template <typename T>
std::vector<T> transpose_taps(const T* w, std::size_t taps, std::size_t cin, std::size_t cout) {
  std::vector<T> wt(taps * cin * cout);
  for (std::size_t t = 0; t < taps; ++t) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t co = 0; co < cout; ++co) wt[(t * cout + co) * cin + ci] = w[(t * cin + ci) * cout + co];
    }
  }
  return wt;
}

/// Accumulates weight/bias gradients; writes the input gradient when
/// `din` is non-null (it must be zeroed by the caller).
template <typename T>
void conv2d_backward(const Geometry& g, const T* in, const T* w, const T* dout, T* dw, T* dbias, T* din) {
  const std::size_t cin = g.in_c, cout = g.out_c;
  const std::vector<T> wt = din ? transpose_taps(w, g.k_h * g.k_w, cin, cout) : std::vector<T>{};
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const T* go = dout + g.out_pixel(b, oy, ox) * cout;
        if (all_zero(go, cout)) continue;
        for (std::size_t co = 0; co < cout; ++co) dbias[co] += go[co];
        for_each_conv_tap(g, oy, ox, [&](std::size_t ky, std::size_t kx, std::size_t iy, std::size_t ix) {
          const T* x = in + g.in_pixel(b, iy, ix) * cin;
          const std::size_t tap = (ky * g.k_w + kx) * cin * cout;
          if (din) {
            T* dx = din + g.in_pixel(b, iy, ix) * cin;
            for (std::size_t co = 0; co < cout; ++co) {
              if (go[co] != T(0)) axpy(go[co], wt.data() + tap + co * cin, dx, cin);
            }
          }
          for (std::size_t ci = 0; ci < cin; ++ci) {
            if (x[ci] != T(0)) axpy(x[ci], go, dw + tap + ci * cout, cout);
          }
        });
      }
    }
  }
}

template <typename T>
void conv2d_transpose_forward(const Geometry& g, const T* in, const T* w, const T* bias, T* out) {
  const std::size_t cin = g.in_c, cout = g.out_c;
  std::fill(out, out + g.batch * g.out_h * g.out_w * cout, T(0));
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t iy = 0; iy < g.in_h; ++iy) {
      for (std::size_t ix = 0; ix < g.in_w; ++ix) {
        const T* x = in + g.in_pixel(b, iy, ix) * cin;
        for_each_transpose_tap(g, iy, ix, [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t ox) {
          T* o = out + g.out_pixel(b, oy, ox) * cout;
          const T* wk = w + (ky * g.k_w + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            if (x[ci] != T(0)) axpy(x[ci], wk + ci * cout, o, cout);
          }
        });
      }
    }
    for (std::size_t p = 0; p < g.out_h * g.out_w; ++p) {
      T* o = out + (b * g.out_h * g.out_w + p) * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] += bias[co];
    }
  }
}

template <typename T>
void conv2d_transpose_backward(const Geometry& g, const T* in, const T* w, const T* dout, T* dw, T* dbias, T* din) {
  const std::size_t cin = g.in_c, cout = g.out_c;
  const std::vector<T> wt = din ? transpose_taps(w, g.k_h * g.k_w, cin, cout) : std::vector<T>{};
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t p = 0; p < g.out_h * g.out_w; ++p) {
      const T* go = dout + (b * g.out_h * g.out_w + p) * cout;
      for (std::size_t co = 0; co < cout; ++co) dbias[co] += go[co];
    }
    for (std::size_t iy = 0; iy < g.in_h; ++iy) {
      for (std::size_t ix = 0; ix < g.in_w; ++ix) {
        const T* x = in + g.in_pixel(b, iy, ix) * cin;
        T* dx = din ? din + g.in_pixel(b, iy, ix) * cin : nullptr;
        for_each_transpose_tap(g, iy, ix, [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t ox) {
          const T* go = dout + g.out_pixel(b, oy, ox) * cout;
          if (all_zero(go, cout)) return;
          const std::size_t tap = (ky * g.k_w + kx) * cin * cout;
          if (dx) {
            for (std::size_t co = 0; co < cout; ++co) {
              if (go[co] != T(0)) axpy(go[co], wt.data() + tap + co * cin, dx, cin);
            }
          }
          for (std::size_t ci = 0; ci < cin; ++ci) {
            if (x[ci] != T(0)) axpy(x[ci], go, dw + tap + ci * cout, cout);
          }
        });
      }
    }
  }
}

/// Non-overlapping max pooling. `argmax` receives the flat input index of
/// each output element; ties go to the first element in row-major order.
template <typename T>
void max_pool_forward(const Geometry& g, const T* in, T* out, std::uint32_t* argmax) {
  const std::size_t c = g.in_c;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const std::size_t o = g.out_pixel(b, oy, ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = g.in_pixel(b, oy * g.s_h, ox * g.s_w) * c + ch;
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const std::size_t idx = g.in_pixel(b, oy * g.s_h + ky, ox * g.s_w + kx) * c + ch;
              if (in[idx] > in[best]) best = idx;
            }
          }
          out[o + ch] = in[best];
          if (argmax) argmax[o + ch] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
}

template <typename T>
void max_pool_backward(std::size_t out_size, const T* dout, const std::uint32_t* argmax, T* din) {
  for (std::size_t i = 0; i < out_size; ++i) din[argmax[i]] += dout[i];
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void activate(Activation act, T* x, std::size_t n) {
  switch (act) {
    case Activation::None: break;
    case Activation::Relu:
      for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) x[i] = sigmoid(x[i]);
      break;
  }
}

/// Converts d(loss)/d(output) into d(loss)/d(pre-activation) in place, using
/// the recorded post-activation values.
template <typename T>
void activation_backward(Activation act, const T* out, T* grad, std::size_t n) {
  switch (act) {
    case Activation::None: break;
    case Activation::Relu:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(out[i] > T(0))) grad[i] = T(0);
      }
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) grad[i] *= out[i] * (T(1) - out[i]);
      break;
  }
}

}  // namespace kernels
}  // namespace canids::nn
