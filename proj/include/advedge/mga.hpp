#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "advedge/oracle.hpp"
#include "advedge/rng.hpp"
#include "advedge/tensor.hpp"
#include "advedge/whitebox.hpp"

namespace advedge {

struct MgaConfig {
  int population_size = 8;
  float crossover_rate = 0.5f;
  float mutation_rate = 0.005f;
  float mutation_scale = 1.0f;  // mutation noise half-range as a fraction of epsilon
  float epsilon = 8.0f / 255.0f;
  std::uint64_t query_cap = 50000;
  std::uint32_t rng_seed = 0;

  void validate() const {
    if (population_size < 2) throw std::invalid_argument("mga config: population size must be >= 2");
    if (crossover_rate < 0.0f || crossover_rate > 1.0f)
      throw std::invalid_argument("mga config: crossover rate must lie in [0,1]");
    if (mutation_rate < 0.0f || mutation_rate > 1.0f)
      throw std::invalid_argument("mga config: mutation rate must lie in [0,1]");
    if (mutation_scale < 0.0f) throw std::invalid_argument("mga config: mutation scale must be non-negative");
    if (!(epsilon > 0.0f)) throw std::invalid_argument("mga config: epsilon must be positive");
    if (query_cap < static_cast<std::uint64_t>(population_size))
      throw std::invalid_argument("mga config: query cap must cover the initial population");
  }
};

/// One MGA individual: a masked, ball-confined perturbation plus its cached
/// oracle evaluation.
struct PerturbationGenome {
  Tensor<float> delta;
  float fitness = std::numeric_limits<float>::quiet_NaN();
  int pred_class = -1;
  bool evaluated = false;
};

struct AttackResult {
  bool success = false;
  std::optional<Tensor<float>> adversarial;  // composed image, present on success
  Tensor<float> delta;                       // successful perturbation, or best candidate on failure
  std::uint64_t queries_used = 0;
  int adversarial_class = -1;  // argmax on x+delta at the final evaluation
  std::uint64_t generations = 0;
  std::vector<float> best_fitness_trace;  // population best after init and each generation
  float best_fitness = std::numeric_limits<float>::infinity();
  std::uint64_t invariant_violations = 0;
};

/// Projects a perturbation onto the genome contract: zero outside the mask
/// support and, per pixel, inside both the epsilon ball and the range that
/// keeps x + delta in [0,1]. The per-pixel bounds make the result exact in
/// f32, no tolerance required.
inline void project_genome(Tensor<float>& delta, const Tensor<float>& mask, const Tensor<float>& x, float epsilon) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        float& d = delta.at3(ch, y, xx);
        if (mask.at2(y, xx) == 0.0f) {
          d = 0.0f;
          continue;
        }
        const float xp = x.at3(ch, y, xx);
        const float lo = std::max(-epsilon, -xp);
        const float hi = std::min(epsilon, 1.0f - xp);
        d = std::min(hi, std::max(lo, d));
      }
    }
  }
}

/// Margin fitness: p_y minus the best other-class probability. Negative
/// exactly when the target misclassifies, so it doubles as the stop test.
inline float margin_fitness(const Tensor<float>& probs, int y) {
  float other = -std::numeric_limits<float>::infinity();
  for (std::int64_t i = 0; i < probs.size(); ++i)
    if (static_cast<int>(i) != y) other = std::max(other, probs[i]);
  return probs[y] - other;
}

/// Evaluates a genome against the oracle, caching the result; a cached
/// genome costs no query. nullopt signals budget exhaustion.
inline std::optional<float> fitness(QueryOracle& oracle, const Tensor<float>& x, PerturbationGenome& genome, int y) {
  if (genome.evaluated) return genome.fitness;
  const std::optional<Tensor<float>> probs = oracle.query(compose_clipped(x, genome.delta));
  if (!probs) return std::nullopt;
  genome.fitness = margin_fitness(*probs, y);
  genome.pred_class = argmax(*probs);
  genome.evaluated = true;
  return genome.fitness;
}

/// Uniformly draws two distinct individuals; the lower-fitness one wins
/// (minimization), ties break toward the lower index.
inline std::pair<int, int> tournament_select(const std::vector<PerturbationGenome>& population, Rng& rng) {
  const int n = static_cast<int>(population.size());
  if (n < 2) throw std::invalid_argument("tournament_select: population must hold at least two genomes");
  const int i = static_cast<int>(rng.below(static_cast<std::uint32_t>(n)));
  int j = static_cast<int>(rng.below(static_cast<std::uint32_t>(n - 1)));
  if (j >= i) ++j;
  for (int k : {i, j})
    if (!population[static_cast<std::size_t>(k)].evaluated)
      throw std::invalid_argument("tournament_select: population must be fully evaluated");
  const float fi = population[static_cast<std::size_t>(i)].fitness;
  const float fj = population[static_cast<std::size_t>(j)].fitness;
  const bool i_wins = fi < fj || (fi == fj && i < j);
  return i_wins ? std::make_pair(i, j) : std::make_pair(j, i);
}

/// Microbial infection: the offspring starts as the loser and receives each
/// pixel of the winner independently with probability `rate`.
inline PerturbationGenome crossover_infect(const PerturbationGenome& winner, const PerturbationGenome& loser,
                                           float rate, Rng& rng) {
  check_same_shape(winner.delta, loser.delta, "crossover_infect");
  PerturbationGenome child;
  child.delta = loser.delta;
  for (std::int64_t i = 0; i < child.delta.size(); ++i)
    if (rng.bernoulli(rate)) child.delta[i] = winner.delta[i];
  return child;
}

/// Additive uniform noise on masked pixels, each hit with probability
/// mutation_rate, then re-projection onto the genome contract.
inline void mutate(PerturbationGenome& genome, const MgaConfig& cfg, const Tensor<float>& mask,
                   const Tensor<float>& x, float epsilon, Rng& rng) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const float span = cfg.mutation_scale * epsilon;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        if (mask.at2(y, xx) == 0.0f) continue;
        if (!rng.bernoulli(cfg.mutation_rate)) continue;
        genome.delta.at3(ch, y, xx) += rng.uniform(-span, span);
      }
  project_genome(genome.delta, mask, x, epsilon);
  genome.evaluated = false;
  genome.fitness = std::numeric_limits<float>::quiet_NaN();
  genome.pred_class = -1;
}

/// Initial population: the white-box perturbation verbatim, plus mutated
/// copies of it.
inline std::vector<PerturbationGenome> init_population(const AdversarialSeed& seed, const MgaConfig& cfg,
                                                       const Tensor<float>& mask, const Tensor<float>& x,
                                                       float epsilon, Rng& rng) {
  cfg.validate();
  if (count_confinement_violations(seed.delta, mask, x, epsilon) != 0)
    throw std::invalid_argument("init_population: seed violates the perturbation contract");
  std::vector<PerturbationGenome> population(static_cast<std::size_t>(cfg.population_size));
  population[0].delta = seed.delta;
  project_genome(population[0].delta, mask, x, epsilon);  // absorbs f32 re-expression slack
  for (std::size_t i = 1; i < population.size(); ++i) {
    population[i].delta = population[0].delta;
    mutate(population[i], cfg, mask, x, epsilon, rng);
  }
  return population;
}

/// Random initial population for the no-seeding baseline: uniform noise on
/// the mask support.
inline std::vector<PerturbationGenome> init_population_random(const MgaConfig& cfg, const Tensor<float>& mask,
                                                              const Tensor<float>& x, float epsilon, Rng& rng) {
  cfg.validate();
  std::vector<PerturbationGenome> population(static_cast<std::size_t>(cfg.population_size));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (auto& genome : population) {
    genome.delta = Tensor<float>(x.shape());
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          if (mask.at2(y, xx) != 0.0f) genome.delta.at3(ch, y, xx) = rng.uniform(-epsilon, epsilon);
    project_genome(genome.delta, mask, x, epsilon);
  }
  return population;
}

namespace detail {

inline AttackResult run_mga_engine(const Tensor<float>& x, int y, std::vector<PerturbationGenome> population,
                                   const Tensor<float>& mask, QueryOracle& oracle, const MgaConfig& cfg, Rng& rng) {
  AttackResult result;
  bool mask_empty = true;
  for (std::int64_t i = 0; i < mask.size() && mask_empty; ++i) mask_empty = mask[i] == 0.0f;
  std::uint64_t evals = 0;

  auto note_best = [&](const PerturbationGenome& g) {
    if (g.fitness < result.best_fitness) {
      result.best_fitness = g.fitness;
      result.delta = g.delta;
      result.adversarial_class = g.pred_class;
    }
  };
  auto evaluate = [&](PerturbationGenome& g) -> int {  // 1 success, 0 go on, -1 budget out
    result.invariant_violations += count_confinement_violations(g.delta, mask, x, cfg.epsilon);
    const std::optional<float> f = fitness(oracle, x, g, y);
    if (!f) return -1;
    ++evals;
    note_best(g);
    return g.pred_class != y ? 1 : 0;
  };

  auto finish = [&](bool success, const PerturbationGenome* g) {
    result.success = success;
    result.queries_used = evals;
    if (success) {
      result.delta = g->delta;
      result.adversarial_class = g->pred_class;
      result.best_fitness = g->fitness;
      result.adversarial = compose_clipped(x, g->delta);
    }
    return result;
  };

  for (auto& genome : population) {
    const int r = evaluate(genome);
    if (r == 1) return finish(true, &genome);
    if (r == -1) return finish(false, nullptr);
    // A support-free mask leaves nothing to search; every individual equals
    // the seed, so one evaluation settles the run.
    if (mask_empty) return finish(false, nullptr);
  }
  result.best_fitness_trace.push_back(result.best_fitness);

  while (true) {
    const auto [w, l] = tournament_select(population, rng);
    PerturbationGenome child = crossover_infect(population[static_cast<std::size_t>(w)],
                                                population[static_cast<std::size_t>(l)], cfg.crossover_rate, rng);
    mutate(child, cfg, mask, x, cfg.epsilon, rng);
    const int r = evaluate(child);
    if (r == 1) return finish(true, &child);
    if (r == -1) return finish(false, nullptr);
    population[static_cast<std::size_t>(l)] = std::move(child);
    ++result.generations;
    result.best_fitness_trace.push_back(result.best_fitness);
  }
}

}  // namespace detail

/// Black-box stage seeded by the white-box perturbation. Evaluates the seed
/// first, then runs steady-state select/infect/mutate rounds until the
/// target misclassifies or the budget runs out. Deterministic given
/// cfg.rng_seed.
inline AttackResult run_mga(const Tensor<float>& x, int y, const AdversarialSeed& seed, QueryOracle& oracle,
                            const MgaConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.rng_seed, 0x6d6761ULL));
  std::vector<PerturbationGenome> population = init_population(seed, cfg, seed.mask, x, cfg.epsilon, rng);
  return detail::run_mga_engine(x, y, std::move(population), seed.mask, oracle, cfg, rng);
}

/// Baseline arm: same engine, same mask, random initial population.
inline AttackResult run_mga_random_init(const Tensor<float>& x, int y, const Tensor<float>& mask,
                                        QueryOracle& oracle, const MgaConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.rng_seed, 0x6d6761ULL));
  std::vector<PerturbationGenome> population = init_population_random(cfg, mask, x, cfg.epsilon, rng);
  return detail::run_mga_engine(x, y, std::move(population), mask, oracle, cfg, rng);
}

}  // namespace advedge
