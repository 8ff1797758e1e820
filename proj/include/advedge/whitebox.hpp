#pragma once

#include <cstdint>
#include <utility>

#include "advedge/autodiff.hpp"
#include "advedge/cam.hpp"
#include "advedge/checkpoint.hpp"
#include "advedge/edges.hpp"
#include "advedge/model.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

/// PGD-with-interpretation-loss attack settings. Pixel scale is [0,1], so
/// the stock epsilon/alpha correspond to 8 and 1 on the 8-bit grid.
struct AttackConfig {
  float epsilon = 8.0f / 255.0f;
  float alpha = 1.0f / 255.0f;
  int iterations = 300;
  float lambda = 0.204f;
  float mask_threshold = 0.3f;
  bool masked = true;       // false: N_w is replaced by an all-ones mask
  int targeted_class = -1;  // >= 0 switches the prediction loss to a targeted objective

  void validate() const {
    if (!(epsilon > 0.0f)) throw std::invalid_argument("attack config: epsilon must be positive");
    if (!(alpha > 0.0f)) throw std::invalid_argument("attack config: alpha must be positive");
    if (iterations < 1) throw std::invalid_argument("attack config: iterations must be >= 1");
    if (lambda < 0.0f) throw std::invalid_argument("attack config: lambda must be non-negative");
    if (mask_threshold < 0.0f || mask_threshold > 1.0f)
      throw std::invalid_argument("attack config: mask threshold must lie in [0,1]");
  }
};

// Allowance for f32 rounding when a perturbed image is re-expressed as
// x + delta; matches the documented ball-confinement tolerance.
constexpr float kBallSlack = 1e-7f;

/// Counts violations of the perturbation contract: L-inf ball (with rounding
/// slack), zero outside the mask support, and composed pixels inside [0,1].
/// Exhaustive, not sampled.
inline std::uint64_t count_confinement_violations(const Tensor<float>& delta, const Tensor<float>& mask,
                                                  const Tensor<float>& x, float epsilon) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::uint64_t bad = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const float d = delta.at3(ch, y, xx);
        if (std::abs(d) > epsilon + kBallSlack) ++bad;
        if (mask.at2(y, xx) == 0.0f && d != 0.0f) ++bad;
        const float composed = std::min(1.0f, std::max(0.0f, x.at3(ch, y, xx) + d));
        if (composed < 0.0f || composed > 1.0f) ++bad;
      }
    }
  }
  return bad;
}

template <typename T>
struct AdvSeedT {
  Tensor<T> delta;  // same shape as the image; zero outside supp(n_w)
  bool source_success = false;
  T final_loss = T(0);
  AttributionMapT<T> benign_map;  // source-model map for the benign class
  Tensor<T> mask;                 // n_w, [H,W]
  std::uint64_t invariant_violations = 0;
};

using AdversarialSeed = AdvSeedT<float>;

/// Combined loss log p_y + lambda * MSE(cam(x_hat), benign map) and its
/// gradient w.r.t. x_hat. Minimizing the first term drives the true-class
/// probability down; the second term pins the interpretation map.
/// With targeted_class >= 0 the first term becomes -log p_t.
template <typename T>
std::pair<T, Tensor<T>> adv_loss(const Model<T>& model, const Tensor<T>& x_hat, int y,
                                 const AttributionMapT<T>& benign_map, T lambda, int targeted_class = -1) {
  Tape<T> tape;
  Var image = tape.leaf(x_hat);
  TapeNet<T> net = tape_forward(tape, model, image, /*params_as_leaves=*/false);
  Var lsm = tape.log_softmax(net.logits);
  Var prd = targeted_class >= 0 ? tape.scale(tape.pick(lsm, targeted_class), T(-1)) : tape.pick(lsm, y);
  Var total = prd;
  if (lambda != T(0)) {
    Var map = cam_on_tape(tape, net, model, y, x_hat.dim(1), x_hat.dim(2));
    Var li = tape.mse_vs(map, benign_map.values);
    total = tape.add(prd, tape.scale(li, lambda));
  }
  tape.backward(total);
  return {tape.value(total)[0], tape.grad(image)};
}

/// One masked, projected signed-gradient step:
///   clip_[0,1]( clip_ball( x_hat - n_w * alpha * sign(grad) ) ).
/// Pixels with n_w = 0 are carried through bit-identically.
template <typename T>
Tensor<T> advedge_step(const Tensor<T>& x_hat, const Tensor<T>& grad, T alpha, const Tensor<T>& n_w,
                       const Tensor<T>& x, T epsilon) {
  check_same_shape(x_hat, grad, "advedge_step");
  check_same_shape(x_hat, x, "advedge_step");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (n_w.rank() != 2 || n_w.dim(0) != h || n_w.dim(1) != w)
    throw ShapeError("advedge_step: mask shape " + shape_str(n_w.shape()) + " does not match image");
  Tensor<T> out(x.shape());
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const T g = grad.at3(ch, y, xx);
        const T sign = g > T(0) ? T(1) : (g < T(0) ? T(-1) : T(0));
        const T v = x_hat.at3(ch, y, xx) - n_w.at2(y, xx) * alpha * sign;
        const T xp = x.at3(ch, y, xx);
        const T d = std::min(epsilon, std::max(-epsilon, v - xp));
        out.at3(ch, y, xx) = std::min(T(1), std::max(T(0), xp + d));
      }
    }
  }
  return out;
}

/// Full white-box stage: benign CAM map, Sobel edge mask, then `iterations`
/// masked PGD steps on the combined loss from x_hat = x. Failure is reported
/// in the flag, never thrown.
inline AdversarialSeed run_advedge(const TrainedModel& source, const Tensor<float>& x, int y,
                                   const AttackConfig& cfg) {
  if (cfg.iterations < 0) throw std::invalid_argument("run_advedge: iterations must be >= 0");
  AdversarialSeed seed;
  seed.benign_map = compute_cam(source, x, y);
  if (cfg.masked) {
    seed.mask = edge_mask(sobel_edges(x), seed.benign_map, cfg.mask_threshold).n_w;
  } else {
    seed.mask = Tensor<float>::full({x.dim(1), x.dim(2)}, 1.0f);
  }

  Tensor<float> x_hat = x;
  float loss = 0.0f;
  for (int it = 0; it < cfg.iterations; ++it) {
    auto [l, grad] = adv_loss(source, x_hat, y, seed.benign_map, cfg.lambda, cfg.targeted_class);
    loss = l;
    x_hat = advedge_step(x_hat, grad, cfg.alpha, seed.mask, x, cfg.epsilon);
  }
  seed.final_loss = loss;
  seed.delta = sub(x_hat, x);
  const int cls = argmax(forward(source, compose_clipped(x, seed.delta)).probs);
  seed.source_success = cfg.targeted_class >= 0 ? cls == cfg.targeted_class : cls != y;
  seed.invariant_violations = count_confinement_violations(seed.delta, seed.mask, x, cfg.epsilon);
  return seed;
}

/// Seed round trip through the shared tensor container.
inline void save_seed(const AdversarialSeed& seed, const std::string& path) {
  TensorRecords records;
  records.emplace_back("seed/delta", seed.delta);
  records.emplace_back("seed/mask", seed.mask);
  records.emplace_back("seed/map", seed.benign_map.values);
  records.emplace_back("seed/meta",
                       Tensor<float>({3}, {seed.source_success ? 1.0f : 0.0f, seed.final_loss,
                                           static_cast<float>(seed.benign_map.class_index)}));
  write_records(path, records);
}

inline AdversarialSeed load_seed(const std::string& path) {
  const TensorRecords records = read_records(path);
  AdversarialSeed seed;
  seed.delta = detail::find_record(records, "seed/delta", path);
  seed.mask = detail::find_record(records, "seed/mask", path);
  seed.benign_map.values = detail::find_record(records, "seed/map", path);
  const Tensor<float>& meta = detail::find_record(records, "seed/meta", path);
  seed.source_success = meta[0] != 0.0f;
  seed.final_loss = meta[1];
  seed.benign_map.class_index = static_cast<int>(meta[2]);
  return seed;
}

}  // namespace advedge
