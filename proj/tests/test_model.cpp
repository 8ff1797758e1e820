#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "advedge/checkpoint.hpp"
#include "advedge/dataset.hpp"
#include "advedge/model.hpp"
#include "advedge/oracle.hpp"
#include "advedge/train.hpp"

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

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("build_model determinism and spec validation") {
  const ModelSpec spec = tiny_spec();
  TrainedModel a = build_model(spec, 42);
  TrainedModel b = build_model(spec, 42);
  CHECK(a.head_weights == b.head_weights);
  CHECK(a.conv_kernels[0] == b.conv_kernels[0]);

  TrainedModel c = build_model(spec, 43);
  CHECK_FALSE(a.conv_kernels[0] == c.conv_kernels[0]);

  ModelSpec bad = spec;
  bad.layers = {conv_layer(8, 3, 1, 1), dense_layer(), gap_layer(), dense_layer()};
  CHECK_THROWS_AS(build_model(bad, 1), CamCompatError);

  ModelSpec no_tail = spec;
  no_tail.layers = {conv_layer(8, 3, 1, 1), relu_layer()};
  CHECK_THROWS_AS(no_tail.validate(), CamCompatError);
}

TEST_CASE("predict is a probability vector and deterministic") {
  TrainedModel m = build_model(tiny_spec(), 7);
  Rng rng(9);
  Tensor<float> img({1, 28, 28});
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();

  Tensor<float> p1 = predict(m, img);
  Tensor<float> p2 = predict(m, img);
  CHECK(p1 == p2);
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) sum += p1[i];
  CHECK(std::abs(sum - 1.0) < 1e-6);

  Tensor<float> out_of_range = img;
  out_of_range[0] = 1.5f;
  CHECK_THROWS_AS(predict(m, out_of_range), std::invalid_argument);
  CHECK_THROWS_AS(predict(m, Tensor<float>({1, 14, 14})), ShapeError);
}

TEST_CASE("untrained model sits at chance level against random labels") {
  TrainedModel m = build_model(tiny_spec(), 11);
  Rng rng(123);
  int hits = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    Tensor<float> img({1, 28, 28});
    for (std::int64_t p = 0; p < img.size(); ++p) img[p] = rng.uniform();
    const int label = static_cast<int>(rng.below(10));
    if (argmax(predict(m, img)) == label) ++hits;
  }
  const double rate = static_cast<double>(hits) / n;
  CHECK(rate > 0.07);
  CHECK(rate < 0.13);
}

TEST_CASE("train contract") {
  const LabeledDataset data = make_synthetic_dataset(100, 555);
  TrainedModel init = build_model(tiny_spec(), 3);

  SECTION("zero epochs leaves parameters untouched") {
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 9;
    TrainedModel out = train(init, data, cfg);
    CHECK(out.head_weights == init.head_weights);
    for (std::size_t i = 0; i < init.conv_kernels.size(); ++i) CHECK(out.conv_kernels[i] == init.conv_kernels[i]);
    CHECK(out.meta.val_accuracy >= 0.0f);
  }

  SECTION("same seed and data give identical parameters") {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 77;
    TrainedModel a = train(init, data, cfg);
    TrainedModel b = train(init, data, cfg);
    CHECK(a.head_weights == b.head_weights);
    CHECK(a.head_bias == b.head_bias);
    for (std::size_t i = 0; i < a.conv_kernels.size(); ++i) CHECK(a.conv_kernels[i] == b.conv_kernels[i]);
    CHECK(a.meta.val_accuracy == b.meta.val_accuracy);
  }

  SECTION("label and emptiness validation") {
    TrainConfig cfg;
    LabeledDataset empty;
    CHECK_THROWS_AS(train(init, empty, cfg), DatasetError);
    LabeledDataset bad = data;
    bad.labels[0] = 10;
    CHECK_THROWS_AS(train(init, bad, cfg), DatasetError);
  }
}

TEST_CASE("memorizing a 50-sample subset reaches full training accuracy") {
  LabeledDataset data = make_synthetic_dataset(50, 4242);
  TrainConfig cfg;
  cfg.epochs = 120;
  cfg.lr = 0.15f;
  cfg.batch = 10;
  cfg.seed = 5;
  cfg.val_fraction = 0.0f;  // validate on the training set itself
  TrainedModel m = train(build_model(tiny_spec(), 21), data, cfg);
  const float train_acc = evaluate_accuracy(m, data.images, data.labels);
  CHECK(train_acc == 1.0f);
}

TEST_CASE("query oracle counts every request and enforces the cap") {
  TrainedModel m = build_model(tiny_spec(), 31);
  Tensor<float> img({1, 28, 28});

  QueryOracle oracle(m, 5);
  for (int i = 0; i < 3; ++i) CHECK(oracle.query(img).has_value());
  CHECK(oracle.used() == 3);
  CHECK(oracle.query(img).has_value());
  CHECK(oracle.query(img).has_value());
  CHECK_FALSE(oracle.query(img).has_value());  // 6th query on a cap of 5
  CHECK(oracle.used() == 5);
}

TEST_CASE("ledger stays exact under concurrent queries") {
  auto scorer = [](const Tensor<float>&) { return Tensor<float>({2}, {0.5f, 0.5f}); };
  auto ledger = std::make_shared<QueryLedger>(2500);
  std::atomic<std::uint64_t> granted{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      QueryOracle oracle(scorer, ledger);
      Tensor<float> img({1});
      for (int i = 0; i < 1000; ++i)
        if (oracle.query(img)) granted.fetch_add(1);
    });
  }
  for (auto& t : threads) t.join();
  CHECK(granted.load() == 2500);
  CHECK(ledger->count() == 2500);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const LabeledDataset data = make_synthetic_dataset(60, 99);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 13;
  TrainedModel m = train(build_model(tiny_spec(), 2), data, cfg);
  const std::string path = temp_path("advedge_ckpt_roundtrip.bin");
  save_checkpoint(m, path);
  TrainedModel loaded = load_checkpoint(path);

  CHECK(loaded.spec.name == m.spec.name);
  CHECK(loaded.meta.epochs == m.meta.epochs);
  CHECK(loaded.meta.seed == m.meta.seed);
  CHECK(loaded.meta.val_accuracy == m.meta.val_accuracy);
  CHECK(loaded.head_weights == m.head_weights);
  CHECK(loaded.head_bias == m.head_bias);
  for (std::size_t i = 0; i < m.conv_kernels.size(); ++i) CHECK(loaded.conv_kernels[i] == m.conv_kernels[i]);

  Rng rng(1);
  Tensor<float> img({1, 28, 28});
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  CHECK(predict(loaded, img) == predict(m, img));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint load failures name the problem") {
  TrainedModel m = build_model(tiny_spec(), 6);
  const std::string path = temp_path("advedge_ckpt_full.bin");
  save_checkpoint(m, path);

  SECTION("truncated file reports the offset, no partial model") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string trunc_path = temp_path("advedge_ckpt_trunc.bin");
    std::ofstream out(trunc_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    try {
      load_checkpoint(trunc_path);
      FAIL("expected a CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    std::filesystem::remove(trunc_path);
  }

  SECTION("bad magic is rejected") {
    const std::string bad_path = temp_path("advedge_ckpt_magic.bin");
    std::ofstream out(bad_path, std::ios::binary | std::ios::trunc);
    out << "NOPEnothing";
    out.close();
    CHECK_THROWS_WITH(load_checkpoint(bad_path), Catch::Matchers::ContainsSubstring("magic"));
    std::filesystem::remove(bad_path);
  }

  SECTION("spec mismatch is rejected") {
    CHECK_THROWS_AS(load_checkpoint_as(path, spec_conv4()), CheckpointError);
    CHECK_NOTHROW(load_checkpoint_as(path, tiny_spec()));
  }
  std::filesystem::remove(path);
}
