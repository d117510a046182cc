#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "canids/error.hpp"
#include "canids/tensor.hpp"

namespace canids::nn {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Mean squared error over every element and its gradient 2 (p - t) / N.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  require_same_shape(prediction.shape(), target.shape(), "mse_loss");
  LossResult<T> r;
  r.grad = Tensor<T>(prediction.shape());
  const std::size_t n = prediction.size();
  if (n == 0) return r;
  const T scale = T(2) / static_cast<T>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = prediction[i] - target[i];
    sum += static_cast<double>(d) * static_cast<double>(d);
    r.grad[i] = scale * d;
  }
  r.loss = sum / static_cast<double>(n);
  return r;
}

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

/// One Adam update with bias correction:
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2,
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps).
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "parameter/gradient count differs");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta2, t)));
  const T lr = static_cast<T>(config.learning_rate);
  const T eps = static_cast<T>(config.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = grads[k];
    require_same_shape(p.shape(), g.shape(), "adam_step");
    require_same_shape(p.shape(), state.m[k].shape(), "adam_step state");
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
  }
}

}  // namespace canids::nn
