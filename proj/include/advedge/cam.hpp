#pragma once

#include <string>

#include "advedge/autodiff.hpp"
#include "advedge/model.hpp"
#include "advedge/nn.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

/// Per-pixel relevance map in [0,1] at input resolution. The maximum is
/// exactly 1 unless the raw class-activation response was identically
/// non-positive (then the map is all zeros).
template <typename T>
struct AttributionMapT {
  Tensor<T> values;  // [H,W]
  int class_index = -1;
  std::string model_id;
  std::string image_id;
};

using AttributionMap = AttributionMapT<float>;

template <typename T>
Tensor<T> class_weight_row(const Model<T>& model, int class_index) {
  if (class_index < 0 || class_index >= model.spec.class_count)
    throw std::invalid_argument("class index " + std::to_string(class_index) + " outside [0," +
                                std::to_string(model.spec.class_count) + ")");
  const int c = model.head_weights.dim(1);
  Tensor<T> row({c});
  for (int i = 0; i < c; ++i) row[i] = model.head_weights.at2(class_index, i);
  return row;
}

/// Class activation map: weight the final conv activations by the class row
/// of the dense head, clamp negatives, upsample bilinearly to the input
/// resolution, then divide by the maximum.
template <typename T>
AttributionMapT<T> compute_cam(const Model<T>& model, const Tensor<T>& image, int class_index) {
  model.spec.validate();  // CAM compatibility
  const ForwardTrace<T> tr = forward(model, image);
  const Tensor<T> raw = nn::channel_weighted_sum(tr.features, class_weight_row(model, class_index));
  const Tensor<T> clamped = nn::relu(raw);
  const Tensor<T> up = nn::upsample_bilinear(clamped, image.dim(1), image.dim(2));
  AttributionMapT<T> map;
  map.values = nn::max_normalize(up);
  map.class_index = class_index;
  map.model_id = model.spec.name;
  return map;
}

/// Tape variant of compute_cam for gradients through the interpretation
/// loss; operates on an already-recorded forward pass.
template <typename T>
Var cam_on_tape(Tape<T>& tape, const TapeNet<T>& net, const Model<T>& model, int class_index, int out_h, int out_w) {
  Var row = tape.constant(class_weight_row(model, class_index));
  Var raw = tape.channel_weighted_sum(net.features, row);
  Var clamped = tape.relu(raw);
  Var up = tape.upsample_bilinear(clamped, out_h, out_w);
  return tape.max_normalize(up);
}

/// 1 where the map value is at least `threshold`, else 0.
template <typename T>
Tensor<T> binarize(const AttributionMapT<T>& map, T threshold) {
  if (threshold < T(0) || threshold > T(1)) throw std::invalid_argument("binarize: threshold must lie in [0,1]");
  Tensor<T> out(map.values.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = map.values[i] >= threshold ? T(1) : T(0);
  return out;
}

}  // namespace advedge
