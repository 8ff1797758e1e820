#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "advedge/dataset.hpp"
#include "advedge/model.hpp"
#include "advedge/rng.hpp"

namespace advedge {

struct TrainConfig {
  int epochs = 12;
  float lr = 0.25f;
  float momentum = 0.9f;
  int batch = 32;
  std::uint32_t seed = 1;
  float val_fraction = 0.1f;
};

template <typename T>
float evaluate_accuracy(const Model<T>& model, const std::vector<Tensor<T>>& images, const std::vector<int>& labels,
                        const std::vector<std::size_t>* subset = nullptr) {
  const std::size_t n = subset ? subset->size() : images.size();
  if (n == 0) return 0.0f;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = subset ? (*subset)[i] : i;
    if (argmax(forward(model, images[idx]).probs) == labels[idx]) ++hits;
  }
  return static_cast<float>(hits) / static_cast<float>(n);
}

/// Minibatch SGD on cross-entropy. Fully deterministic for a given seed:
/// the train/validation split, the per-epoch shuffles and the accumulation
/// order are all fixed. Records the final validation accuracy in the model.
inline TrainedModel train(TrainedModel model, const LabeledDataset& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw DatasetError("train: empty dataset");
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.labels[i] < 0 || data.labels[i] >= model.spec.class_count)
      throw DatasetError("train: label " + std::to_string(data.labels[i]) + " of sample '" + data.ids[i] +
                         "' outside [0," + std::to_string(model.spec.class_count) + ")");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0x747261696eULL));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(static_cast<std::uint32_t>(i))]);

  std::size_t n_val = static_cast<std::size_t>(static_cast<double>(data.size()) * cfg.val_fraction);
  n_val = std::min(n_val, data.size() - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (val_idx.empty()) val_idx = train_idx;  // tiny datasets validate on themselves

  const std::size_t n_params = model.conv_kernels.size() + 2;
  std::vector<std::vector<double>> grad_acc(n_params);
  std::vector<std::vector<float>> velocity(n_params);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[rng.below(static_cast<std::uint32_t>(i))]);

    for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch));
      for (auto& g : grad_acc) g.clear();

      for (std::size_t bi = start; bi < stop; ++bi) {
        const std::size_t idx = train_idx[bi];
        Tape<float> tape;
        Var image = tape.constant(data.images[idx]);
        TapeNet<float> net = tape_forward(tape, model, image, /*params_as_leaves=*/true);
        Var lsm = tape.log_softmax(net.logits);
        Var loss = tape.scale(tape.pick(lsm, data.labels[idx]), -1.0f);
        tape.backward(loss);

        std::size_t p = 0;
        auto accumulate = [&](const Tensor<float>& g) {
          auto& acc = grad_acc[p];
          if (acc.empty()) acc.assign(static_cast<std::size_t>(g.size()), 0.0);
          for (std::int64_t i2 = 0; i2 < g.size(); ++i2) acc[static_cast<std::size_t>(i2)] += static_cast<double>(g[i2]);
          ++p;
        };
        for (Var kv : net.conv_kernels) accumulate(tape.grad(kv));
        accumulate(tape.grad(net.head_weights));
        accumulate(tape.grad(net.head_bias));
      }

      const double inv = 1.0 / static_cast<double>(stop - start);
      std::size_t p = 0;
      auto apply = [&](Tensor<float>& param) {
        const auto& acc = grad_acc[p];
        auto& vel = velocity[p];
        if (vel.empty()) vel.assign(static_cast<std::size_t>(param.size()), 0.0f);
        for (std::int64_t i2 = 0; i2 < param.size(); ++i2) {
          const float g = static_cast<float>(acc[static_cast<std::size_t>(i2)] * inv);
          float& v = vel[static_cast<std::size_t>(i2)];
          v = cfg.momentum * v - cfg.lr * g;
          param[i2] += v;
        }
        ++p;
      };
      for (auto& k : model.conv_kernels) apply(k);
      apply(model.head_weights);
      apply(model.head_bias);
    }
  }

  model.meta.epochs = static_cast<std::uint32_t>(cfg.epochs);
  model.meta.seed = cfg.seed;
  model.meta.val_accuracy = evaluate_accuracy(model, data.images, data.labels, &val_idx);
  return model;
}

}  // namespace advedge
