#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "advedge/autodiff.hpp"
#include "advedge/nn.hpp"
#include "advedge/rng.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

struct CamCompatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LayerKind { Conv, Relu, GlobalAvgPool, Dense };

struct LayerDesc {
  LayerKind kind;
  int out_channels = 0;  // Conv only
  int kernel = 0;        // Conv only
  int stride = 1;        // Conv only
  int padding = 0;       // Conv only
};

inline LayerDesc conv_layer(int out_channels, int kernel, int stride, int padding) {
  return LayerDesc{LayerKind::Conv, out_channels, kernel, stride, padding};
}
inline LayerDesc relu_layer() { return LayerDesc{LayerKind::Relu}; }
inline LayerDesc gap_layer() { return LayerDesc{LayerKind::GlobalAvgPool}; }
inline LayerDesc dense_layer() { return LayerDesc{LayerKind::Dense}; }

/// Architecture description. The last two stages must be exactly
/// global-average-pool followed by a dense head; that is what makes the
/// final dense weights usable as CAM class weights. Pixels are shifted and
/// scaled by fixed constants before the first conv so the bias-free stack
/// sees zero-centered, unit-scale values.
struct ModelSpec {
  std::string name;
  Shape input_shape;  // [C,H,W]
  int class_count = 0;
  float input_shift = 0.5f;
  float input_scale = 4.0f;  // applied as (pixel - shift) * scale
  std::vector<LayerDesc> layers;

  void validate() const {
    if (input_shape.size() != 3) throw CamCompatError("model spec '" + name + "': input shape must be [C,H,W]");
    if (class_count < 2) throw CamCompatError("model spec '" + name + "': needs at least two classes");
    if (layers.size() < 2 || layers[layers.size() - 2].kind != LayerKind::GlobalAvgPool ||
        layers.back().kind != LayerKind::Dense)
      throw CamCompatError("model spec '" + name +
                           "': CAM compatibility requires the stack to end with global_avg_pool then dense");
    int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    for (std::size_t i = 0; i + 2 < layers.size(); ++i) {
      const LayerDesc& l = layers[i];
      if (l.kind == LayerKind::GlobalAvgPool || l.kind == LayerKind::Dense)
        throw CamCompatError("model spec '" + name + "': pooling/dense stages only allowed as the final head");
      if (l.kind == LayerKind::Conv) {
        if (l.kernel < 1 || l.stride < 1 || l.padding < 0 || l.out_channels < 1)
          throw CamCompatError("model spec '" + name + "': malformed conv layer");
        h = nn::conv_out_extent(h, l.padding, l.kernel, l.stride);
        w = nn::conv_out_extent(w, l.padding, l.kernel, l.stride);
        c = l.out_channels;
        if (h < 1 || w < 1) throw CamCompatError("model spec '" + name + "': conv stack collapses spatial extent");
      }
    }
    if (c < 1) throw CamCompatError("model spec '" + name + "': empty feature stack");
  }

  /// Shape [C,h,w] of the last conv-stack activation (the CAM feature plane).
  Shape feature_shape() const {
    int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    for (std::size_t i = 0; i + 2 < layers.size(); ++i) {
      const LayerDesc& l = layers[i];
      if (l.kind == LayerKind::Conv) {
        h = nn::conv_out_extent(h, l.padding, l.kernel, l.stride);
        w = nn::conv_out_extent(w, l.padding, l.kernel, l.stride);
        c = l.out_channels;
      }
    }
    return {c, h, w};
  }
};

struct TrainMeta {
  std::uint32_t epochs = 0;
  std::uint32_t seed = 0;
  float val_accuracy = 0.0f;
};

/// A spec plus its parameter tensors. Immutable once trained; prediction is a
/// pure function of (parameters, input) and safe to share across threads.
template <typename T = float>
struct Model {
  ModelSpec spec;
  std::vector<Tensor<T>> conv_kernels;  // one entry per Conv layer, in stack order
  Tensor<T> head_weights;               // [K, C]
  Tensor<T> head_bias;                  // [K]
  TrainMeta meta;

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.spec = spec;
    m.meta = meta;
    for (const auto& k : conv_kernels) m.conv_kernels.push_back(k.template cast<U>());
    m.head_weights = head_weights.template cast<U>();
    m.head_bias = head_bias.template cast<U>();
    return m;
  }
};

using TrainedModel = Model<float>;

/// He-scaled random initialization, deterministic for a given (spec, seed).
template <typename T = float>
Model<T> build_model(const ModelSpec& spec, std::uint32_t seed) {
  spec.validate();
  Model<T> m;
  m.spec = spec;
  m.meta.seed = seed;
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  int channels = spec.input_shape[0];
  for (const LayerDesc& l : spec.layers) {
    if (l.kind != LayerKind::Conv) continue;
    Tensor<T> k({l.out_channels, channels, l.kernel, l.kernel});
    const float sd = std::sqrt(2.0f / (static_cast<float>(channels) * l.kernel * l.kernel));
    for (std::int64_t i = 0; i < k.size(); ++i) k[i] = static_cast<T>(rng.normal() * sd);
    m.conv_kernels.push_back(std::move(k));
    channels = l.out_channels;
  }
  const Shape feat = spec.feature_shape();
  m.head_weights = Tensor<T>({spec.class_count, feat[0]});
  const float sd = std::sqrt(2.0f / static_cast<float>(feat[0]));
  for (std::int64_t i = 0; i < m.head_weights.size(); ++i) m.head_weights[i] = static_cast<T>(rng.normal() * sd);
  m.head_bias = Tensor<T>({spec.class_count});
  return m;
}

template <typename T>
struct ForwardTrace {
  Tensor<T> features;  // last conv-stack activation [C,h,w]
  Tensor<T> logits;    // [K]
  Tensor<T> probs;     // [K]
};

template <typename T>
Tensor<T> normalize_input(const ModelSpec& spec, const Tensor<T>& image) {
  Tensor<T> out(image.shape());
  const T shift = static_cast<T>(spec.input_shift);
  const T scale = static_cast<T>(spec.input_scale);
  for (std::int64_t i = 0; i < image.size(); ++i) out[i] = (image[i] - shift) * scale;
  return out;
}

/// Inference forward pass (no tape). Exposes the feature plane for CAM.
template <typename T>
ForwardTrace<T> forward(const Model<T>& model, const Tensor<T>& image) {
  if (image.shape() != model.spec.input_shape)
    throw ShapeError("forward: image shape " + shape_str(image.shape()) + " does not match model input " +
                     shape_str(model.spec.input_shape));
  ForwardTrace<T> tr;
  Tensor<T> cur = normalize_input(model.spec, image);
  std::size_t conv_idx = 0;
  for (std::size_t i = 0; i + 2 < model.spec.layers.size(); ++i) {
    const LayerDesc& l = model.spec.layers[i];
    if (l.kind == LayerKind::Conv)
      cur = nn::conv2d(cur, model.conv_kernels[conv_idx++], l.stride, l.padding);
    else if (l.kind == LayerKind::Relu)
      cur = nn::relu(cur);
  }
  tr.features = std::move(cur);
  Tensor<T> pooled = nn::global_avg_pool(tr.features);
  tr.logits = nn::dense(pooled, model.head_weights, model.head_bias);
  tr.probs = nn::softmax(tr.logits);
  return tr;
}

/// Probability vector for an image in [0,1]. Deterministic.
template <typename T>
Tensor<T> predict(const Model<T>& model, const Tensor<T>& image) {
  for (std::int64_t i = 0; i < image.size(); ++i)
    if (image[i] < T(0) || image[i] > T(1)) throw std::invalid_argument("predict: pixel values must lie in [0,1]");
  return forward(model, image).probs;
}

template <typename T>
int argmax(const Tensor<T>& v) {
  int best = 0;
  for (std::int64_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

template <typename T>
struct TapeNet {
  Var image;
  Var features;
  Var logits;
  std::vector<Var> conv_kernels;
  Var head_weights;
  Var head_bias;
};

/// Records the model forward pass on a tape. `params_as_leaves` controls
/// whether parameter gradients are tracked (training) or treated as
/// constants (input-gradient attacks).
template <typename T>
TapeNet<T> tape_forward(Tape<T>& tape, const Model<T>& model, Var image, bool params_as_leaves) {
  TapeNet<T> net;
  net.image = image;
  Var cur = tape.affine(image, static_cast<T>(model.spec.input_scale), static_cast<T>(model.spec.input_shift));
  std::size_t conv_idx = 0;
  for (std::size_t i = 0; i + 2 < model.spec.layers.size(); ++i) {
    const LayerDesc& l = model.spec.layers[i];
    if (l.kind == LayerKind::Conv) {
      Var k = params_as_leaves ? tape.leaf(model.conv_kernels[conv_idx]) : tape.constant(model.conv_kernels[conv_idx]);
      net.conv_kernels.push_back(k);
      cur = tape.conv2d(cur, k, l.stride, l.padding);
      ++conv_idx;
    } else if (l.kind == LayerKind::Relu) {
      cur = tape.relu(cur);
    }
  }
  net.features = cur;
  Var pooled = tape.global_avg_pool(cur);
  net.head_weights = params_as_leaves ? tape.leaf(model.head_weights) : tape.constant(model.head_weights);
  net.head_bias = params_as_leaves ? tape.leaf(model.head_bias) : tape.constant(model.head_bias);
  net.logits = tape.dense(pooled, net.head_weights, net.head_bias);
  return net;
}

/// The two stock desk-scale architectures. Input is 1x28x28 grayscale,
/// 10 classes; downsampling comes from stride-2 convs.
inline ModelSpec spec_conv3() {
  ModelSpec s;
  s.name = "conv3";
  s.input_shape = {1, 28, 28};
  s.class_count = 10;
  s.layers = {conv_layer(16, 3, 1, 1), relu_layer(), conv_layer(32, 3, 2, 1), relu_layer(),
              conv_layer(48, 3, 2, 1), relu_layer(), gap_layer(),             dense_layer()};
  return s;
}

inline ModelSpec spec_conv4() {
  ModelSpec s;
  s.name = "conv4";
  s.input_shape = {1, 28, 28};
  s.class_count = 10;
  s.layers = {conv_layer(12, 3, 1, 1), relu_layer(), conv_layer(24, 3, 2, 1), relu_layer(),
              conv_layer(24, 3, 1, 1), relu_layer(), conv_layer(40, 3, 2, 1), relu_layer(),
              gap_layer(),             dense_layer()};
  return s;
}

inline ModelSpec spec_by_name(const std::string& name) {
  if (name == "conv3") return spec_conv3();
  if (name == "conv4") return spec_conv4();
  throw std::invalid_argument("unknown model spec '" + name + "' (available: conv3, conv4)");
}

}  // namespace advedge
