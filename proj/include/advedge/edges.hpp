#pragma once

#include <cmath>

#include "advedge/cam.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

/// Sobel responses and the perturbation mask derived from them.
/// d_h responds to intensity change along x (vertical boundaries), d_v along
/// y. All three response planes share one normalization factor, so
/// d = sqrt(d_h^2 + d_v^2) holds after scaling; `peak` restores raw units.
struct EdgeMask {
  Tensor<float> d_h;  // [H,W]
  Tensor<float> d_v;  // [H,W]
  Tensor<float> d;    // [H,W], magnitude, max-normalized to [0,1]
  float peak = 0.0f;  // max raw magnitude (the normalization factor)
  Tensor<float> n_w;  // [H,W], filled by edge_mask()
};

/// Single luminance plane from a [C,H,W] image.
inline Tensor<float> luminance(const Tensor<float>& image) {
  if (image.rank() == 2) return image;
  if (image.rank() != 3) throw ShapeError("luminance: expected [C,H,W] image");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out({h, w});
  if (c == 1) {
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = image[i];
  } else if (c == 3) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at2(y, x) = 0.299f * image.at3(0, y, x) + 0.587f * image.at3(1, y, x) + 0.114f * image.at3(2, y, x);
  } else {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int ch = 0; ch < c; ++ch) acc += image.at3(ch, y, x);
        out.at2(y, x) = acc / static_cast<float>(c);
      }
    }
  }
  return out;
}

/// 3x3 Sobel with replicate padding on the luminance plane.
inline EdgeMask sobel_edges(const Tensor<float>& image) {
  const Tensor<float> lum = luminance(image);
  const int h = lum.dim(0), w = lum.dim(1);
  EdgeMask em;
  em.d_h = Tensor<float>({h, w});
  em.d_v = Tensor<float>({h, w});
  em.d = Tensor<float>({h, w});
  auto px = [&](int y, int x) {
    y = std::min(h - 1, std::max(0, y));
    x = std::min(w - 1, std::max(0, x));
    return static_cast<double>(lum.at2(y, x));
  };
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
      const double mag = std::sqrt(gx * gx + gy * gy);
      em.d_h.at2(y, x) = static_cast<float>(gx);
      em.d_v.at2(y, x) = static_cast<float>(gy);
      em.d.at2(y, x) = static_cast<float>(mag);
      peak = std::max(peak, mag);
    }
  }
  em.peak = static_cast<float>(peak);
  if (peak > 0.0) {
    const float inv = static_cast<float>(1.0 / peak);
    for (std::int64_t i = 0; i < em.d.size(); ++i) {
      em.d_h[i] *= inv;
      em.d_v[i] *= inv;
      em.d[i] *= inv;
    }
  }
  return em;
}

/// N_w: normalized edge magnitude gated by the attribution map at `tau`.
/// Keeps the continuous edge weighting where the map is salient, zero
/// elsewhere.
inline EdgeMask edge_mask(EdgeMask edges, const AttributionMap& map, float tau) {
  if (tau < 0.0f || tau > 1.0f) throw std::invalid_argument("edge_mask: tau must lie in [0,1]");
  check_same_shape(edges.d, map.values, "edge_mask");
  edges.n_w = Tensor<float>(edges.d.shape());
  for (std::int64_t i = 0; i < edges.d.size(); ++i) edges.n_w[i] = map.values[i] >= tau ? edges.d[i] : 0.0f;
  return edges;
}

}  // namespace advedge
