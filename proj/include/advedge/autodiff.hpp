#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "advedge/nn.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

/// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Wengert-list tape. Records primitive ops in execution order and replays
/// their adjoints in exact reverse order. Rebuilt per forward pass.
template <typename T = float>
class Tape {
 public:
  /// Differentiable leaf (input or parameter).
  Var leaf(Tensor<T> value) { return push(std::move(value), {}, nullptr, true); }

  /// Non-differentiable leaf; adjoint accumulation skips it.
  Var constant(Tensor<T> value) { return push(std::move(value), {}, nullptr, false); }

  const Tensor<T>& value(Var v) const { return nodes_[check(v)].value; }

  Var conv2d(Var input, Var kernels, int stride, int padding) {
    Tensor<T> out = nn::conv2d(value(input), value(kernels), stride, padding);
    const Shape in_shape = value(input).shape();
    const Shape k_shape = value(kernels).shape();
    return push(std::move(out), {input, kernels},
                [input, kernels, stride, padding, in_shape, k_shape](Tape& t, const Tensor<T>& g) {
                  if (t.wants_grad(input))
                    t.accumulate(input, nn::conv2d_grad_input(g, t.value(kernels), in_shape, stride, padding));
                  if (t.wants_grad(kernels))
                    t.accumulate(kernels, nn::conv2d_grad_kernels(g, t.value(input), k_shape, stride, padding));
                });
  }

  Var relu(Var input) {
    return push(nn::relu(value(input)), {input}, [input](Tape& t, const Tensor<T>& g) {
      if (t.wants_grad(input)) t.accumulate(input, nn::relu_grad(g, t.value(input)));
    });
  }

  Var global_avg_pool(Var input) {
    const Shape in_shape = value(input).shape();
    return push(nn::global_avg_pool(value(input)), {input}, [input, in_shape](Tape& t, const Tensor<T>& g) {
      if (t.wants_grad(input)) t.accumulate(input, nn::global_avg_pool_grad(g, in_shape));
    });
  }

  Var dense(Var input, Var weights, Var bias) {
    return push(nn::dense(value(input), value(weights), value(bias)), {input, weights, bias},
                [input, weights, bias](Tape& t, const Tensor<T>& g) {
                  if (t.wants_grad(input)) t.accumulate(input, nn::dense_grad_input(g, t.value(weights)));
                  if (t.wants_grad(weights)) t.accumulate(weights, nn::dense_grad_weights(g, t.value(input)));
                  if (t.wants_grad(bias)) t.accumulate(bias, g);
                });
  }

  Var log_softmax(Var input) {
    const Var self{static_cast<int>(nodes_.size())};
    return push(nn::log_softmax(value(input)), {input}, [input, self](Tape& t, const Tensor<T>& g) {
      if (t.wants_grad(input)) t.accumulate(input, nn::log_softmax_grad(g, t.value(self)));
    });
  }

  /// Scalar component of a vector.
  Var pick(Var input, int index) {
    const Tensor<T>& v = value(input);
    if (index < 0 || index >= v.size()) throw ShapeError("pick: index out of range");
    Tensor<T> out({1});
    out[0] = v[index];
    const Shape in_shape = v.shape();
    return push(std::move(out), {input}, [input, index, in_shape](Tape& t, const Tensor<T>& g) {
      if (!t.wants_grad(input)) return;
      Tensor<T> gi(in_shape);
      gi[index] = g[0];
      t.accumulate(input, std::move(gi));
    });
  }

  Var sum(Var input) {
    const Tensor<T>& v = value(input);
    double acc = 0.0;
    for (std::int64_t i = 0; i < v.size(); ++i) acc += static_cast<double>(v[i]);
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc);
    const Shape in_shape = v.shape();
    return push(std::move(out), {input}, [input, in_shape](Tape& t, const Tensor<T>& g) {
      if (t.wants_grad(input)) t.accumulate(input, Tensor<T>::full(in_shape, g[0]));
    });
  }

  Var scale(Var input, T c) {
    return push(advedge::scale(value(input), c), {input}, [input, c](Tape& t, const Tensor<T>& g) {
      if (t.wants_grad(input)) t.accumulate(input, advedge::scale(g, c));
    });
  }

  /// (x - sub) * mul, elementwise with scalar constants.
  Var affine(Var input, T mul, T sub) {
    const Tensor<T>& v = value(input);
    Tensor<T> out(v.shape());
    for (std::int64_t i = 0; i < v.size(); ++i) out[i] = (v[i] - sub) * mul;
    return push(std::move(out), {input}, [input, mul](Tape& t, const Tensor<T>& g) {
      if (t.wants_grad(input)) t.accumulate(input, advedge::scale(g, mul));
    });
  }

  Var add(Var a, Var b) {
    return push(advedge::add(value(a), value(b)), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
      if (t.wants_grad(a)) t.accumulate(a, g);
      if (t.wants_grad(b)) t.accumulate(b, g);
    });
  }

  Var channel_weighted_sum(Var acts, Var weights) {
    return push(nn::channel_weighted_sum(value(acts), value(weights)), {acts, weights},
                [acts, weights](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& a = t.value(acts);
                  const Tensor<T>& wv = t.value(weights);
                  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
                  if (t.wants_grad(acts)) {
                    Tensor<T> ga(a.shape());
                    for (int ch = 0; ch < c; ++ch)
                      for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) ga.at3(ch, y, x) = wv[ch] * g.at2(y, x);
                    t.accumulate(acts, std::move(ga));
                  }
                  if (t.wants_grad(weights)) {
                    Tensor<T> gw(wv.shape());
                    for (int ch = 0; ch < c; ++ch) {
                      double acc = 0.0;
                      for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                          acc += static_cast<double>(g.at2(y, x)) * static_cast<double>(a.at3(ch, y, x));
                      gw[ch] = static_cast<T>(acc);
                    }
                    t.accumulate(weights, std::move(gw));
                  }
                });
  }

  Var upsample_bilinear(Var input, int out_h, int out_w) {
    const Shape in_shape = value(input).shape();
    return push(nn::upsample_bilinear(value(input), out_h, out_w), {input},
                [input, in_shape](Tape& t, const Tensor<T>& g) {
                  if (t.wants_grad(input)) t.accumulate(input, nn::upsample_bilinear_grad(g, in_shape[0], in_shape[1]));
                });
  }

  Var max_normalize(Var input) {
    T m = T(0);
    Tensor<T> out = nn::max_normalize(value(input), &m);
    return push(std::move(out), {input}, [input, m](Tape& t, const Tensor<T>& g) {
      if (!t.wants_grad(input) || m <= T(0)) return;
      const Tensor<T>& x = t.value(input);
      std::int64_t arg = 0;
      for (std::int64_t i = 0; i < x.size(); ++i)
        if (x[i] > x[arg]) arg = i;
      double dot = 0.0;
      for (std::int64_t i = 0; i < x.size(); ++i) dot += static_cast<double>(g[i]) * static_cast<double>(x[i]);
      Tensor<T> gi(x.shape());
      const double md = static_cast<double>(m);
      for (std::int64_t i = 0; i < x.size(); ++i) gi[i] = static_cast<T>(static_cast<double>(g[i]) / md);
      gi[arg] = static_cast<T>(static_cast<double>(gi[arg]) - dot / (md * md));
      t.accumulate(input, std::move(gi));
    });
  }

  /// Mean squared error against a fixed target.
  Var mse_vs(Var input, Tensor<T> target) {
    const Tensor<T>& v = value(input);
    check_same_shape(v, target, "mse_vs");
    double acc = 0.0;
    for (std::int64_t i = 0; i < v.size(); ++i) {
      const double d = static_cast<double>(v[i]) - static_cast<double>(target[i]);
      acc += d * d;
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc / static_cast<double>(v.size()));
    return push(std::move(out), {input}, [input, target = std::move(target)](Tape& t, const Tensor<T>& g) {
      if (!t.wants_grad(input)) return;
      const Tensor<T>& x = t.value(input);
      const T c = static_cast<T>(2.0 / static_cast<double>(x.size())) * g[0];
      Tensor<T> gi(x.shape());
      for (std::int64_t i = 0; i < x.size(); ++i) gi[i] = c * (x[i] - target[i]);
      t.accumulate(input, std::move(gi));
    });
  }

  /// Replays adjoints from a scalar output back to every leaf.
  void backward(Var output) {
    const int out = check(output);
    if (nodes_[out].value.size() != 1) throw std::invalid_argument("backprop requires a scalar output");
    grads_.assign(nodes_.size(), Tensor<T>());
    grads_[out] = Tensor<T>::full({1}, T(1));
    for (int id = out; id >= 0; --id) {
      if (grads_[id].empty() || !nodes_[id].backward) continue;
      nodes_[id].backward(*this, grads_[id]);
    }
  }

  /// Gradient of the last backward() output w.r.t. v; zeros if v is off-path.
  Tensor<T> grad(Var v) const {
    const int id = check(v);
    if (id < static_cast<int>(grads_.size()) && !grads_[id].empty()) return grads_[id];
    return Tensor<T>(nodes_[id].value.shape());
  }

  bool wants_grad(Var v) const { return nodes_[check(v)].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::function<void(Tape&, const Tensor<T>&)> backward;
    bool requires_grad = false;
  };

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw std::invalid_argument("invalid tape handle");
    return v.id;
  }

  Var push(Tensor<T> value, std::initializer_list<Var> parents,
           std::function<void(Tape&, const Tensor<T>&)> backward, bool force_grad = false) {
    bool req = force_grad;
    for (Var p : parents) req = req || nodes_[check(p)].requires_grad;
    nodes_.push_back(Node{std::move(value), std::move(backward), req});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accumulate(Var v, Tensor<T> g) {
    const int id = check(v);
    if (grads_[id].empty())
      grads_[id] = std::move(g);
    else
      for (std::int64_t i = 0; i < g.size(); ++i) grads_[id][i] += g[i];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

/// Central-difference gradient oracle: (fn(x+h e_i) - fn(x-h e_i)) / 2h.
template <typename T, typename F>
Tensor<T> finite_difference_gradient(F&& fn, const Tensor<T>& at, T h) {
  if (!(h > T(0))) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  Tensor<T> g(at.shape());
  Tensor<T> probe = at;
  for (std::int64_t i = 0; i < at.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + h;
    const T up = fn(static_cast<const Tensor<T>&>(probe));
    probe[i] = orig - h;
    const T down = fn(static_cast<const Tensor<T>&>(probe));
    probe[i] = orig;
    g[i] = (up - down) / (T(2) * h);
  }
  return g;
}

}  // namespace advedge
