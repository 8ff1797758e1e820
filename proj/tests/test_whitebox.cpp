#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "advedge/dataset.hpp"
#include "advedge/train.hpp"
#include "advedge/whitebox.hpp"

using namespace advedge;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.name = "tiny";
  s.input_shape = {1, 28, 28};
  s.class_count = 10;
  s.layers = {conv_layer(8, 3, 1, 1), relu_layer(), conv_layer(12, 3, 2, 1), relu_layer(), gap_layer(), dense_layer()};
  return s;
}

// a lightly trained model plus an image it classifies correctly
struct Fixture {
  TrainedModel model;
  Tensor<float> x;
  int y = -1;
};

Fixture make_fixture() {
  Fixture f;
  const LabeledDataset data = make_synthetic_dataset(400, 777);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr = 0.1f;
  cfg.seed = 31;
  f.model = train(build_model(tiny_spec(), 8), data, cfg);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (argmax(predict(f.model, data.images[i])) == data.labels[i]) {
      f.x = data.images[i];
      f.y = data.labels[i];
      return f;
    }
  }
  throw std::runtime_error("fixture: no correctly classified image found");
}

const Fixture& fixture() {
  static const Fixture f = make_fixture();
  return f;
}

double rel_error(const Tensor<double>& got, const Tensor<double>& want) {
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < got.size(); ++i) {
    const double d = got[i] - want[i];
    num += d * d;
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// independently coded plain PGD, the degeneration reference
Tensor<float> plain_pgd_reference(const TrainedModel& m, const Tensor<float>& x, int y, float eps, float alpha,
                                  int iters) {
  Tensor<float> x_hat = x;
  for (int it = 0; it < iters; ++it) {
    Tape<float> tape;
    Var xv = tape.leaf(x_hat);
    TapeNet<float> net = tape_forward(tape, m, xv, false);
    Var loss = tape.pick(tape.log_softmax(net.logits), y);
    tape.backward(loss);
    const Tensor<float> g = tape.grad(xv);
    for (std::int64_t i = 0; i < x_hat.size(); ++i) {
      const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      const float v = x_hat[i] - alpha * s;
      const float d = std::min(eps, std::max(-eps, v - x[i]));
      x_hat[i] = std::min(1.0f, std::max(0.0f, x[i] + d));
    }
  }
  return x_hat;
}

}  // namespace

TEST_CASE("adv_loss with lambda zero reduces to the classification term") {
  const Fixture& f = fixture();
  const AttributionMapT<float> m = compute_cam(f.model, f.x, f.y);
  auto [l0, g0] = adv_loss(f.model, f.x, f.y, m, 0.0f);

  Tape<float> tape;
  Var xv = tape.leaf(f.x);
  TapeNet<float> net = tape_forward(tape, f.model, xv, false);
  Var loss = tape.pick(tape.log_softmax(net.logits), f.y);
  tape.backward(loss);
  CHECK(l0 == tape.value(loss)[0]);
  CHECK(g0 == tape.grad(xv));
}

TEST_CASE("interpretation loss vanishes exactly at the benign input") {
  const Fixture& f = fixture();
  const AttributionMapT<float> m = compute_cam(f.model, f.x, f.y);
  auto [with_int, g1] = adv_loss(f.model, f.x, f.y, m, 0.204f);
  auto [without, g0] = adv_loss(f.model, f.x, f.y, m, 0.0f);
  CHECK(with_int == without);  // lambda * 0 contributes nothing
  (void)g0;
  (void)g1;
}

TEST_CASE("adv_loss gradient matches finite differences on a tiny model") {
  Rng rng(606);
  ModelSpec s;
  s.name = "grad";
  s.input_shape = {1, 6, 6};
  s.class_count = 3;
  s.layers = {conv_layer(4, 3, 1, 1), relu_layer(), conv_layer(4, 3, 2, 1), relu_layer(), gap_layer(), dense_layer()};
  Model<double> m = build_model<double>(s, 99).cast<double>();

  AttributionMapT<double> benign;
  benign.class_index = 1;
  benign.values = Tensor<double>({6, 6});
  for (std::int64_t i = 0; i < benign.values.size(); ++i) benign.values[i] = rng.uniform();

  Tensor<double> img({1, 6, 6});
  bool clean = false;
  for (int attempt = 0; attempt < 300 && !clean; ++attempt) {
    for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(0.05f, 0.95f);
    const ForwardTrace<double> tr = forward(m, img);
    const Tensor<double> raw = nn::channel_weighted_sum(tr.features, class_weight_row(m, 1));
    clean = true;
    for (std::int64_t i = 0; i < raw.size() && clean; ++i) clean = std::abs(raw[i]) > 2e-2;
    if (!clean) continue;
    const Tensor<double> up = nn::upsample_bilinear(nn::relu(raw), 6, 6);
    double best = 0.0, second = 0.0;
    for (std::int64_t i = 0; i < up.size(); ++i) {
      if (up[i] > best) {
        second = best;
        best = up[i];
      } else if (up[i] > second) {
        second = up[i];
      }
    }
    clean = best - second > 2e-2;
  }
  REQUIRE(clean);

  auto [loss, bp] = adv_loss(m, img, 1, benign, 0.204);
  (void)loss;
  auto fn = [&](const Tensor<double>& p) { return adv_loss(m, p, 1, benign, 0.204).first; };
  Tensor<double> fd = finite_difference_gradient(fn, img, 1e-5);
  CHECK(rel_error(bp, fd) < 1e-3);
}

TEST_CASE("advedge_step edge cases") {
  const Fixture& f = fixture();
  Rng rng(55);
  Tensor<float> grad(f.x.shape());
  for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] = rng.uniform(-1.0f, 1.0f);
  const float eps = 8.0f / 255.0f;

  SECTION("all-zero mask freezes the iterate") {
    Tensor<float> mask({28, 28});
    Tensor<float> out = advedge_step(f.x, grad, 1.0f / 255.0f, mask, f.x, eps);
    CHECK(out == f.x);
  }

  SECTION("alpha zero is a null step") {
    Tensor<float> mask = Tensor<float>::full({28, 28}, 1.0f);
    Tensor<float> out = advedge_step(f.x, grad, 0.0f, mask, f.x, eps);
    CHECK(out == f.x);
  }

  SECTION("far-out iterate projects back to the ball boundary") {
    Tensor<float> mask = Tensor<float>::full({28, 28}, 1.0f);
    Tensor<float> x = Tensor<float>::full({1, 28, 28}, 0.5f);
    Tensor<float> x_hat = Tensor<float>::full({1, 28, 28}, 0.5f + 10.0f * eps);
    Tensor<float> zero_grad(x.shape());
    Tensor<float> out = advedge_step(x_hat, zero_grad, 1.0f / 255.0f, mask, x, eps);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.5f + eps);
  }
}

TEST_CASE("run_advedge contract") {
  const Fixture& f = fixture();
  AttackConfig cfg;
  cfg.iterations = 40;  // enough to stress the projections without full cost

  SECTION("zero iterations returns a null perturbation") {
    AttackConfig zero = cfg;
    zero.iterations = 0;
    AdversarialSeed seed = run_advedge(f.model, f.x, f.y, zero);
    CHECK(max_abs(seed.delta) == 0.0f);
    CHECK_FALSE(seed.source_success);
    CHECK(seed.invariant_violations == 0);
  }

  SECTION("confinement invariants hold exhaustively") {
    AdversarialSeed seed = run_advedge(f.model, f.x, f.y, cfg);
    CHECK(seed.invariant_violations == 0);
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        const float d = seed.delta.at3(0, y, x);
        CHECK(std::abs(d) <= cfg.epsilon + 1e-7f);
        if (seed.mask.at2(y, x) == 0.0f) CHECK(d == 0.0f);
        const float composed = f.x.at3(0, y, x) + d;
        CHECK(composed >= 0.0f);
        CHECK(composed <= 1.0f);
      }
  }

  SECTION("config validation") {
    AttackConfig bad = cfg;
    bad.epsilon = 0.0f;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.mask_threshold = 1.2f;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("unmasked lambda-zero attack degenerates to plain PGD bit-for-bit") {
  const Fixture& f = fixture();
  AttackConfig cfg;
  cfg.lambda = 0.0f;
  cfg.masked = false;
  cfg.iterations = 25;
  AdversarialSeed seed = run_advedge(f.model, f.x, f.y, cfg);
  const Tensor<float> ours = compose_clipped(f.x, seed.delta);
  const Tensor<float> ref_iterate = plain_pgd_reference(f.model, f.x, f.y, cfg.epsilon, cfg.alpha, cfg.iterations);
  // both sides expressed in the canonical x + delta form
  const Tensor<float> reference = compose_clipped(f.x, sub(ref_iterate, f.x));
  CHECK(ours == reference);
}

TEST_CASE("seed serialization round trip") {
  const Fixture& f = fixture();
  AttackConfig cfg;
  cfg.iterations = 10;
  AdversarialSeed seed = run_advedge(f.model, f.x, f.y, cfg);
  const std::string path = (std::filesystem::temp_directory_path() / "advedge_seed.bin").string();
  save_seed(seed, path);
  AdversarialSeed loaded = load_seed(path);
  CHECK(loaded.delta == seed.delta);
  CHECK(loaded.mask == seed.mask);
  CHECK(loaded.benign_map.values == seed.benign_map.values);
  CHECK(loaded.benign_map.class_index == seed.benign_map.class_index);
  CHECK(loaded.source_success == seed.source_success);
  CHECK(loaded.final_loss == seed.final_loss);
  std::filesystem::remove(path);
}
