#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "advedge/cam.hpp"
#include "advedge/edges.hpp"
#include "advedge/model.hpp"
#include "advedge/rng.hpp"

using namespace advedge;

namespace {

// 2x2 two-channel input whose conv activations are the input channels
// themselves: a hand-checkable CAM setting.
template <typename T>
Model<T> selector_model() {
  ModelSpec s;
  s.name = "selector";
  s.input_shape = {2, 2, 2};
  s.class_count = 2;
  s.layers = {conv_layer(2, 1, 1, 0), relu_layer(), gap_layer(), dense_layer()};
  Model<T> m;
  m.spec = s;
  m.conv_kernels.push_back(Tensor<T>({2, 2, 1, 1}, {T(1), T(0), T(0), T(1)}));
  m.head_weights = Tensor<T>({2, 2}, {T(1), T(2), T(0), T(0)});
  m.head_bias = Tensor<T>({2});
  return m;
}

template <typename T>
Tensor<T> selector_image() {
  // channel 0 = [[1,0],[0,0]], channel 1 = [[0,0],[0,1]]
  return Tensor<T>({2, 2, 2}, {T(1), T(0), T(0), T(0), T(0), T(0), T(0), T(1)});
}

template <typename T>
double rel_error(const Tensor<T>& got, const Tensor<T>& want) {
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < got.size(); ++i) {
    const double d = static_cast<double>(got[i]) - static_cast<double>(want[i]);
    num += d * d;
    den += static_cast<double>(want[i]) * static_cast<double>(want[i]);
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace

TEST_CASE("CAM on the hand-built two-channel example") {
  Model<float> m = selector_model<float>();
  const Tensor<float> img = selector_image<float>();
  AttributionMap map = compute_cam(m, img, 0);
  CHECK(map.values.shape() == Shape{2, 2});
  CHECK(map.values.at2(0, 0) == Catch::Approx(0.5f));
  CHECK(map.values.at2(0, 1) == 0.0f);
  CHECK(map.values.at2(1, 0) == 0.0f);
  CHECK(map.values.at2(1, 1) == 1.0f);

  // class 1 has all-zero head weights: identically zero map
  AttributionMap zero_map = compute_cam(m, img, 1);
  CHECK(max_abs(zero_map.values) == 0.0f);

  // determinism
  CHECK(compute_cam(m, img, 0).values == map.values);

  CHECK_THROWS_AS(compute_cam(m, img, 5), std::invalid_argument);
}

TEST_CASE("CAM is covariant under class-weight scaling") {
  Model<float> m = selector_model<float>();
  const Tensor<float> img = selector_image<float>();
  const AttributionMap base = compute_cam(m, img, 0);
  Model<float> scaled = m;
  for (std::int64_t i = 0; i < scaled.head_weights.size(); ++i) scaled.head_weights[i] *= 3.7f;
  const AttributionMap after = compute_cam(scaled, img, 0);
  CHECK(linf_diff(base.values, after.values) < 1e-6f);
}

TEST_CASE("binarize thresholds") {
  Model<float> m = selector_model<float>();
  AttributionMap map = compute_cam(m, selector_image<float>(), 0);

  Tensor<float> all = binarize(map, 0.0f);
  for (std::int64_t i = 0; i < all.size(); ++i) CHECK(all[i] == 1.0f);

  Tensor<float> maximal = binarize(map, 1.0f);
  CHECK(maximal.at2(1, 1) == 1.0f);
  CHECK(maximal.at2(0, 0) == 0.0f);

  Tensor<float> mid = binarize(map, 0.6f);
  CHECK(mid.at2(0, 0) == 0.0f);
  CHECK(mid.at2(0, 1) == 0.0f);
  CHECK(mid.at2(1, 0) == 0.0f);
  CHECK(mid.at2(1, 1) == 1.0f);

  CHECK_THROWS_AS(binarize(map, 1.0001f), std::invalid_argument);

  // monotone: raising the threshold never adds pixels
  Rng rng(17);
  AttributionMapT<float> rnd;
  rnd.values = Tensor<float>({6, 6});
  for (std::int64_t i = 0; i < rnd.values.size(); ++i) rnd.values[i] = rng.uniform();
  Tensor<float> prev = binarize(rnd, 0.0f);
  for (float t : {0.2f, 0.4f, 0.6f, 0.8f, 1.0f}) {
    Tensor<float> cur = binarize(rnd, t);
    for (std::int64_t i = 0; i < cur.size(); ++i) CHECK(cur[i] <= prev[i]);
    prev = cur;
  }
}

TEST_CASE("bilinear upsample closed forms") {
  Tensor<float> constant = Tensor<float>::full({3, 3}, 0.4f);
  Tensor<float> up = nn::upsample_bilinear(constant, 7, 9);
  for (std::int64_t i = 0; i < up.size(); ++i) CHECK(up[i] == Catch::Approx(0.4f));

  Tensor<float> same = nn::upsample_bilinear(constant, 3, 3);
  CHECK(linf_diff(same, constant) < 1e-7f);

  Tensor<float> line({1, 2}, {0.0f, 1.0f});
  Tensor<float> four = nn::upsample_bilinear(line, 1, 4);
  CHECK(four.at2(0, 0) == Catch::Approx(0.0f));
  CHECK(four.at2(0, 1) == Catch::Approx(1.0f / 3.0f));
  CHECK(four.at2(0, 2) == Catch::Approx(2.0f / 3.0f));
  CHECK(four.at2(0, 3) == Catch::Approx(1.0f));
}

TEST_CASE("CAM is differentiable end to end") {
  // tiny random model in double; inputs resampled away from relu kinks and
  // normalization ties so central differences are clean
  Rng rng(2023);
  ModelSpec s;
  s.name = "grad";
  s.input_shape = {1, 6, 6};
  s.class_count = 3;
  s.layers = {conv_layer(4, 3, 1, 1), relu_layer(), conv_layer(4, 3, 2, 1), relu_layer(), gap_layer(), dense_layer()};
  Model<double> m = build_model<double>(s, 40).cast<double>();

  Tensor<double> target({6, 6});
  for (std::int64_t i = 0; i < target.size(); ++i) target[i] = rng.uniform();

  int cam_class = 0;
  auto loss_of = [&](const Tensor<double>& img, Tensor<double>* grad) {
    Tape<double> tape;
    Var x = tape.leaf(img);
    TapeNet<double> net = tape_forward(tape, m, x, false);
    Var map = cam_on_tape(tape, net, m, cam_class, 6, 6);
    Var loss = tape.mse_vs(map, target);
    tape.backward(loss);
    if (grad) *grad = tape.grad(x);
    return tape.value(loss)[0];
  };

  // find a (class, input) pair away from relu kinks and normalization ties;
  // finite differences are meaningless across either
  Tensor<double> img({1, 6, 6});
  bool clean = false;
  for (int attempt = 0; attempt < 300 && !clean; ++attempt) {
    for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    const ForwardTrace<double> tr = forward(m, img);
    for (int cls = 0; cls < 3 && !clean; ++cls) {
      const Tensor<double> raw = nn::channel_weighted_sum(tr.features, class_weight_row(m, cls));
      clean = true;
      for (std::int64_t i = 0; i < raw.size() && clean; ++i) clean = std::abs(raw[i]) > 1e-3;
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
      clean = best - second > 1.5e-3;  // argmax must not flip across the 1e-5 probes
      if (clean) cam_class = cls;
    }
  }
  REQUIRE(clean);

  Tensor<double> bp;
  loss_of(img, &bp);
  Tensor<double> fd =
      finite_difference_gradient([&](const Tensor<double>& p) { return loss_of(p, nullptr); }, img, 1e-5);
  CHECK(rel_error(bp, fd) < 1e-3);
}

TEST_CASE("sobel responses") {
  SECTION("constant image has no edges") {
    EdgeMask em = sobel_edges(Tensor<float>::full({1, 8, 8}, 0.33f));
    CHECK(max_abs(em.d) == 0.0f);
    CHECK(em.peak == 0.0f);
  }

  SECTION("vertical step responds with 4x the step on boundary columns") {
    const float step = 0.5f;
    Tensor<float> img({1, 8, 8});
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) img.at3(0, y, x) = x < 4 ? 0.2f : 0.2f + step;
    EdgeMask em = sobel_edges(img);
    REQUIRE(em.peak > 0.0f);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const float raw_h = em.d_h.at2(y, x) * em.peak;
        const float raw_v = em.d_v.at2(y, x) * em.peak;
        if (x == 3 || x == 4) {
          CHECK(std::abs(raw_h) == Catch::Approx(4.0f * step));
          CHECK(raw_v == Catch::Approx(0.0f).margin(1e-6));
        } else {
          CHECK(raw_h == Catch::Approx(0.0f).margin(1e-6));
        }
      }
    }
  }

  SECTION("mirroring the image mirrors the magnitude") {
    Rng rng(5);
    Tensor<float> img({1, 9, 7});
    for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    Tensor<float> mirrored({1, 9, 7});
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 7; ++x) mirrored.at3(0, y, x) = img.at3(0, y, 6 - x);
    EdgeMask a = sobel_edges(img);
    EdgeMask b = sobel_edges(mirrored);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 7; ++x) CHECK(b.d.at2(y, x) == Catch::Approx(a.d.at2(y, 6 - x)).margin(1e-6));
  }

  SECTION("magnitude identity d = sqrt(dh^2 + dv^2)") {
    Rng rng(6);
    Tensor<float> img({1, 10, 10});
    for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    EdgeMask em = sobel_edges(img);
    for (std::int64_t i = 0; i < em.d.size(); ++i) {
      const float want = std::sqrt(em.d_h[i] * em.d_h[i] + em.d_v[i] * em.d_v[i]);
      CHECK(em.d[i] == Catch::Approx(want).margin(1e-6));
    }
    CHECK(max_abs(em.d) == Catch::Approx(1.0f));
  }
}

TEST_CASE("edge mask gating") {
  EdgeMask em;
  em.d_h = Tensor<float>({2, 2});
  em.d_v = Tensor<float>({2, 2});
  em.d = Tensor<float>({2, 2}, {0, 1, 1, 0});
  AttributionMap map;
  map.values = Tensor<float>({2, 2}, {1, 0, 1, 1});

  EdgeMask full = edge_mask(em, map, 0.0f);
  CHECK(full.n_w == em.d);

  AttributionMap low;
  low.values = Tensor<float>({2, 2}, {0.1f, 0.2f, 0.1f, 0.0f});
  EdgeMask none = edge_mask(em, low, 0.5f);
  CHECK(max_abs(none.n_w) == 0.0f);

  EdgeMask gated = edge_mask(em, map, 0.5f);
  CHECK(gated.n_w.at2(0, 0) == 0.0f);
  CHECK(gated.n_w.at2(0, 1) == 0.0f);
  CHECK(gated.n_w.at2(1, 0) == 1.0f);
  CHECK(gated.n_w.at2(1, 1) == 0.0f);

  AttributionMap wrong;
  wrong.values = Tensor<float>({3, 3});
  CHECK_THROWS_AS(edge_mask(em, wrong, 0.5f), ShapeError);
  CHECK_THROWS_AS(edge_mask(em, map, 1.5f), std::invalid_argument);
}
