#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "canids/error.hpp"
#include "canids/model.hpp"
#include "canids/optim.hpp"
#include "canids/rng.hpp"
#include "canids/window.hpp"

namespace canids::nn {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  std::uint64_t seed = 0;

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }
};

struct EpochLoss {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when there is no validation set
};

template <typename T>
struct TrainResult {
  CaeModel<T> model;  // checkpoint with the lowest validation loss
  std::vector<EpochLoss> history;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
};

/// Mean reconstruction MSE of `model` over `blocks`.
template <typename T>
double evaluate_loss(const CaeModel<T>& model, std::span<const MessageBlock> blocks, std::size_t batch_size = 64) {
  if (blocks.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t start = 0; start < blocks.size(); start += batch_size) {
    const auto chunk = blocks.subspan(start, std::min(batch_size, blocks.size() - start));
    const Tensor<T> x = blocks_to_tensor<T>(chunk);
    total += mse_loss(forward(model, x), x).loss * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(blocks.size());
}

/// Trains the autoencoder to reproduce its input. Blocks are reshuffled every
/// epoch with the seeded generator; the last partial batch is kept. The
/// returned model is the epoch with the lowest validation loss (the earliest
/// on ties), or the lowest training loss when no validation set is given.
template <typename T>
TrainResult<T> train(CaeModel<T> model, std::span<const MessageBlock> train_blocks,
                     std::span<const MessageBlock> val_blocks, const TrainConfig& config,
                     const std::function<void(const EpochLoss&)>& on_epoch = {}) {
  if (train_blocks.empty()) throw Error(ErrorCode::EmptyDataset, "no training blocks");
  if (!(config.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (config.epochs < 1 || config.batch_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "epochs and batch size must be at least 1");
  }
  Rng rng(config.seed);
  AdamState<T> adam;
  const AdamConfig adam_config = config.adam();
  std::vector<std::size_t> order(train_blocks.size());
  std::vector<MessageBlock> batch;

  TrainResult<T> result;
  result.best_loss = std::numeric_limits<double>::infinity();
  Intermediates<T> record;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch.clear();
      for (std::size_t i = 0; i < n; ++i) batch.push_back(train_blocks[order[start + i]]);
      const Tensor<T> x = blocks_to_tensor<T>(batch);
      const Tensor<T> y = forward(model, x, &record);
      const LossResult<T> loss = mse_loss(y, x);
      if (!std::isfinite(loss.loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch starting at " +
                                                  std::to_string(start) + ": loss " + std::to_string(loss.loss));
      }
      epoch_sum += loss.loss * static_cast<double>(n);
      Gradients<T> grads = backward(model, record, loss.grad);
      adam_step(model.parameters(), grads.tensors, adam, adam_config);
    }
    EpochLoss entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_sum / static_cast<double>(order.size());
    entry.val_loss = evaluate_loss(model, val_blocks);
    if (!std::isfinite(entry.train_loss) || (!val_blocks.empty() && !std::isfinite(entry.val_loss))) {
      throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " produced a non-finite loss");
    }
    const double monitored = val_blocks.empty() ? entry.train_loss : entry.val_loss;
    if (monitored < result.best_loss) {
      result.best_loss = monitored;
      result.best_epoch = epoch;
      result.model = model;
    }
    result.history.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace canids::nn
