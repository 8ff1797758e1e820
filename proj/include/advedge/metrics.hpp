#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advedge/cam.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

constexpr std::array<float, 5> kIouThresholds{0.1f, 0.3f, 0.5f, 0.7f, 0.9f};

/// One attacked image: everything the report needs, one CSV row.
struct EvaluationRecord {
  std::string image_id;
  int y = -1;
  bool success = false;
  std::uint64_t queries_used = 0;
  float noise_rate = 0.0f;
  std::array<float, kIouThresholds.size()> iou{};
  int adversarial_class = -1;
};

inline double success_rate(const std::vector<EvaluationRecord>& records) {
  if (records.empty()) throw std::invalid_argument("success_rate: empty record set");
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.success ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

/// Mean queries over successful attacks only; nullopt when nothing
/// succeeded.
inline std::optional<double> average_queries(const std::vector<EvaluationRecord>& records) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.success) {
      sum += static_cast<double>(r.queries_used);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Mean |x_hat - x| / epsilon over all pixels: 0 when untouched, 1 when every
/// pixel sits on the ball boundary. Per-pixel ratios are capped at 1 to absorb
/// f32 re-expression rounding.
inline float noise_rate(const Tensor<float>& x, const Tensor<float>& x_hat, float epsilon) {
  check_same_shape(x, x_hat, "noise_rate");
  if (!(epsilon > 0.0f)) throw std::invalid_argument("noise_rate: epsilon must be positive");
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const float d = std::abs(x_hat[i] - x[i]);
    if (d > epsilon * (1.0f + 1e-5f))
      throw std::invalid_argument("noise_rate: perturbation exceeds the stated epsilon ball");
    acc += std::min(1.0, static_cast<double>(d) / static_cast<double>(epsilon));
  }
  return static_cast<float>(acc / static_cast<double>(x.size()));
}

/// Overlap of the two maps binarized at `threshold`; two empty masks count
/// as identical (IoU 1).
inline float iou(const AttributionMap& a, const AttributionMap& b, float threshold) {
  check_same_shape(a.values, b.values, "iou");
  const Tensor<float> ma = binarize(a, threshold);
  const Tensor<float> mb = binarize(b, threshold);
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t i = 0; i < ma.size(); ++i) {
    const bool pa = ma[i] != 0.0f, pb = mb[i] != 0.0f;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  if (uni == 0) return 1.0f;
  return static_cast<float>(static_cast<double>(inter) / static_cast<double>(uni));
}

inline std::vector<std::pair<float, float>> iou_sweep(const AttributionMap& a, const AttributionMap& b,
                                                      const std::vector<float>& thresholds) {
  std::vector<std::pair<float, float>> out;
  out.reserve(thresholds.size());
  for (float t : thresholds) out.emplace_back(t, iou(a, b, t));
  return out;
}

inline std::vector<std::pair<float, float>> iou_sweep(const AttributionMap& a, const AttributionMap& b) {
  return iou_sweep(a, b, std::vector<float>(kIouThresholds.begin(), kIouThresholds.end()));
}

}  // namespace advedge
