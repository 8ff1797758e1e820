#pragma once

#include <cmath>
#include <stdexcept>

#include "advedge/tensor.hpp"

// Forward and adjoint kernels for the handful of ops the models need:
// cross-correlation conv, relu, global average pooling, a dense head,
// (log-)softmax, bilinear upsampling and the map ops used by CAM.
// Accumulations run in double regardless of the element type.

namespace advedge::nn {

inline int conv_out_extent(int in, int pad, int k, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, int stride, int padding) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be [Cout,Cin,kH,kW], got " + shape_str(kernels.shape()));
  if (kernels.dim(1) != input.dim(0))
    throw ShapeError("conv2d: input channels " + std::to_string(input.dim(0)) + " vs kernel channels " +
                     std::to_string(kernels.dim(1)));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kh > h + 2 * padding || kw > w + 2 * padding) throw ShapeError("conv2d: kernel larger than padded input");
  const int oh = conv_out_extent(h, padding, kh, stride);
  const int ow = conv_out_extent(w, padding, kw, stride);

  Tensor<T> out({cout, oh, ow});
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      T* out_row = out.data() + (static_cast<std::size_t>(co) * oh + oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = ox * stride - padding;
        const int kx_lo = std::max(0, -x0);
        const int kx_hi = std::min(kw, w - x0);
        double acc = 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            const T* in_row = input.data() + (static_cast<std::size_t>(ci) * h + iy) * w + x0;
            const T* k_row = kernels.data() + ((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw;
            for (int kx = kx_lo; kx < kx_hi; ++kx) acc += static_cast<double>(in_row[kx]) * static_cast<double>(k_row[kx]);
          }
        }
        out_row[ox] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& gout, const Tensor<T>& kernels, const Shape& in_shape, int stride,
                            int padding) {
  const int cin = in_shape[0], h = in_shape[1], w = in_shape[2];
  const int cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  const int oh = gout.dim(1), ow = gout.dim(2);
  Tensor<double> acc(in_shape);
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      const T* g_row = gout.data() + (static_cast<std::size_t>(co) * oh + oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const double g = static_cast<double>(g_row[ox]);
        if (g == 0.0) continue;
        const int x0 = ox * stride - padding;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            double* a_row = acc.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
            const T* k_row = kernels.data() + ((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw;
            const int kx_lo = std::max(0, -x0);
            const int kx_hi = std::min(kw, w - x0);
            for (int kx = kx_lo; kx < kx_hi; ++kx) a_row[x0 + kx] += g * static_cast<double>(k_row[kx]);
          }
        }
      }
    }
  }
  return acc.template cast<T>();
}

template <typename T>
Tensor<T> conv2d_grad_kernels(const Tensor<T>& gout, const Tensor<T>& input, const Shape& k_shape, int stride,
                              int padding) {
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = k_shape[0], kh = k_shape[2], kw = k_shape[3];
  const int oh = gout.dim(1), ow = gout.dim(2);
  Tensor<double> acc(k_shape);
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      const T* g_row = gout.data() + (static_cast<std::size_t>(co) * oh + oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const double g = static_cast<double>(g_row[ox]);
        if (g == 0.0) continue;
        const int x0 = ox * stride - padding;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            const T* in_row = input.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
            double* a_row = acc.data() + ((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw;
            const int kx_lo = std::max(0, -x0);
            const int kx_hi = std::min(kw, w - x0);
            for (int kx = kx_lo; kx < kx_hi; ++kx) a_row[kx] += g * static_cast<double>(in_row[x0 + kx]);
          }
        }
      }
    }
  }
  return acc.template cast<T>();
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::int64_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& gout, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::int64_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? gout[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 3) throw ShapeError("global_avg_pool: input must be [C,H,W]");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor<T> out({c});
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    const T* p = input.data() + static_cast<std::size_t>(ch) * plane;
    for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
    out[ch] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_grad(const Tensor<T>& gout, const Shape& in_shape) {
  const int c = in_shape[0], h = in_shape[1], w = in_shape[2];
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor<T> out(in_shape);
  for (int ch = 0; ch < c; ++ch) {
    const T g = static_cast<T>(static_cast<double>(gout[ch]) / static_cast<double>(plane));
    T* p = out.data() + static_cast<std::size_t>(ch) * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] = g;
  }
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (weights.rank() != 2 || input.rank() != 1 || bias.rank() != 1)
    throw ShapeError("dense: expected input [C], weights [K,C], bias [K]");
  if (weights.dim(1) != input.dim(0) || weights.dim(0) != bias.dim(0))
    throw ShapeError("dense: shape mismatch input " + shape_str(input.shape()) + " weights " +
                     shape_str(weights.shape()) + " bias " + shape_str(bias.shape()));
  const int k = weights.dim(0), c = weights.dim(1);
  Tensor<T> out({k});
  for (int i = 0; i < k; ++i) {
    double acc = static_cast<double>(bias[i]);
    const T* row = weights.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) acc += static_cast<double>(row[j]) * static_cast<double>(input[j]);
    out[i] = static_cast<T>(acc);
  }
  return out;
}

template <typename T>
Tensor<T> dense_grad_input(const Tensor<T>& gout, const Tensor<T>& weights) {
  const int k = weights.dim(0), c = weights.dim(1);
  Tensor<T> out({c});
  for (int j = 0; j < c; ++j) {
    double acc = 0.0;
    for (int i = 0; i < k; ++i) acc += static_cast<double>(gout[i]) * static_cast<double>(weights.at2(i, j));
    out[j] = static_cast<T>(acc);
  }
  return out;
}

template <typename T>
Tensor<T> dense_grad_weights(const Tensor<T>& gout, const Tensor<T>& input) {
  const int k = gout.dim(0), c = input.dim(0);
  Tensor<T> out({k, c});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < c; ++j) out.at2(i, j) = gout[i] * input[j];
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 || logits.size() < 1) throw ShapeError("softmax: expected non-empty vector");
  T m = logits[0];
  for (std::int64_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  Tensor<T> out(logits.shape());
  double sum = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    const double e = std::exp(static_cast<double>(logits[i] - m));
    out[i] = static_cast<T>(e);
    sum += e;
  }
  for (std::int64_t i = 0; i < logits.size(); ++i) out[i] = static_cast<T>(static_cast<double>(out[i]) / sum);
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 || logits.size() < 1) throw ShapeError("log_softmax: expected non-empty vector");
  T m = logits[0];
  for (std::int64_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i] - m));
  const double lse = std::log(sum);
  Tensor<T> out(logits.shape());
  for (std::int64_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(logits[i] - m) - lse);
  return out;
}

// adjoint of log_softmax: gin = gout - softmax * sum(gout)
template <typename T>
Tensor<T> log_softmax_grad(const Tensor<T>& gout, const Tensor<T>& log_probs) {
  double gsum = 0.0;
  for (std::int64_t i = 0; i < gout.size(); ++i) gsum += static_cast<double>(gout[i]);
  Tensor<T> out(gout.shape());
  for (std::int64_t i = 0; i < gout.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(gout[i]) - std::exp(static_cast<double>(log_probs[i])) * gsum);
  return out;
}

/// Corner-aligned bilinear interpolation to (H, W).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& map, int out_h, int out_w) {
  if (map.rank() != 2) throw ShapeError("upsample_bilinear: expected [h,w] map");
  const int h = map.dim(0), w = map.dim(1);
  Tensor<T> out({out_h, out_w});
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = oy * sy;
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = ox * sx;
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double v = (1.0 - wy) * ((1.0 - wx) * map.at2(y0, x0) + wx * map.at2(y0, x1)) +
                       wy * ((1.0 - wx) * map.at2(y1, x0) + wx * map.at2(y1, x1));
      out.at2(oy, ox) = static_cast<T>(v);
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_grad(const Tensor<T>& gout, int in_h, int in_w) {
  const int out_h = gout.dim(0), out_w = gout.dim(1);
  Tensor<double> acc({in_h, in_w});
  const double sy = out_h > 1 ? static_cast<double>(in_h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(in_w - 1) / (out_w - 1) : 0.0;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = oy * sy;
    const int y0 = std::min(static_cast<int>(fy), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = ox * sx;
      const int x0 = std::min(static_cast<int>(fx), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      const double g = static_cast<double>(gout.at2(oy, ox));
      acc.at2(y0, x0) += (1.0 - wy) * (1.0 - wx) * g;
      acc.at2(y0, x1) += (1.0 - wy) * wx * g;
      acc.at2(y1, x0) += wy * (1.0 - wx) * g;
      acc.at2(y1, x1) += wy * wx * g;
    }
  }
  return acc.template cast<T>();
}

/// CAM raw map: sum over channels of class weight times activation plane.
template <typename T>
Tensor<T> channel_weighted_sum(const Tensor<T>& acts, const Tensor<T>& weights) {
  if (acts.rank() != 3 || weights.rank() != 1) throw ShapeError("channel_weighted_sum: expected [C,h,w] and [C]");
  if (acts.dim(0) != weights.dim(0)) throw ShapeError("channel_weighted_sum: channel count mismatch");
  const int c = acts.dim(0), h = acts.dim(1), w = acts.dim(2);
  Tensor<T> out({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) acc += static_cast<double>(weights[ch]) * static_cast<double>(acts.at3(ch, y, x));
      out.at2(y, x) = static_cast<T>(acc);
    }
  }
  return out;
}

/// Divide by the map maximum; an identically non-positive map stays all-zero.
/// Returns the maximum through `max_out` for the adjoint.
template <typename T>
Tensor<T> max_normalize(const Tensor<T>& map, T* max_out = nullptr) {
  T m = T(0);
  for (std::int64_t i = 0; i < map.size(); ++i) m = std::max(m, map[i]);
  if (max_out) *max_out = m;
  if (m <= T(0)) return Tensor<T>(map.shape());
  Tensor<T> out(map.shape());
  for (std::int64_t i = 0; i < map.size(); ++i) out[i] = map[i] / m;
  return out;
}

}  // namespace advedge::nn
