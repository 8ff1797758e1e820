#pragma once

// Convex toy fitness with a known optimum, used to sanity-check the MGA
// optimizer: the "true class" probability is a quadratic bowl in the
// perturbation, minimized at a known delta inside the masked ball. The
// margin never goes negative, so runs exercise the full budget.

#include <cmath>
#include <memory>

#include "advedge/mga.hpp"
#include "advedge/oracle.hpp"
#include "advedge/tensor.hpp"

namespace toy {

struct ConvexToy {
  advedge::Tensor<float> x;        // base image
  advedge::Tensor<float> mask;     // all-ones
  advedge::Tensor<float> optimum;  // delta*
  float epsilon = 0.5f;
  float q0 = 0.6f;                 // p_y at the optimum
  float curvature = 0.0128f;

  static ConvexToy make() {
    ConvexToy t;
    t.x = advedge::Tensor<float>::full({1, 8, 8}, 0.5f);
    t.mask = advedge::Tensor<float>::full({8, 8}, 1.0f);
    t.optimum = advedge::Tensor<float>({1, 8, 8});
    for (std::int64_t i = 0; i < t.optimum.size(); ++i)
      t.optimum[i] = 0.2f * static_cast<float>(static_cast<int>(i % 3) - 1);
    return t;
  }

  float p_true(const advedge::Tensor<float>& image) const {
    double dist2 = 0.0;
    for (std::int64_t i = 0; i < image.size(); ++i) {
      const double d = static_cast<double>(image[i]) - static_cast<double>(t_at(i));
      dist2 += d * d;
    }
    return std::min(1.0f, q0 + curvature * static_cast<float>(dist2));
  }

  advedge::QueryOracle::Scorer scorer() const {
    return [self = *this](const advedge::Tensor<float>& image) {
      const float p = self.p_true(image);
      return advedge::Tensor<float>({2}, {p, 1.0f - p});
    };
  }

  // best achievable margin (at delta = optimum)
  float optimal_fitness() const { return 2.0f * q0 - 1.0f; }

  advedge::MgaConfig config(std::uint32_t seed) const {
    advedge::MgaConfig cfg;
    cfg.population_size = 8;
    cfg.crossover_rate = 0.5f;
    cfg.mutation_rate = 0.06f;
    cfg.mutation_scale = 0.25f;
    cfg.epsilon = epsilon;
    cfg.query_cap = 5000;
    cfg.rng_seed = seed;
    return cfg;
  }

  advedge::AdversarialSeed zero_seed() const {
    advedge::AdversarialSeed s;
    s.delta = advedge::Tensor<float>(x.shape());
    s.mask = mask;
    return s;
  }

 private:
  float t_at(std::int64_t i) const { return std::min(1.0f, std::max(0.0f, x[i] + optimum[i])); }
};

}  // namespace toy
