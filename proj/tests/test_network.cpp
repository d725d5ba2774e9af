#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "tabor/network.hpp"
#include "tabor/rng.hpp"
#include "support.hpp"

using tabor::Architecture;
using tabor::LabeledDataset;
using tabor::Network;
using tabor::Rng;
using tabor::SampleRole;
using tabor::TrainConfig;

namespace {

// Two trivially separable brightness classes on 8x8 single-channel images.
LabeledDataset make_blobs(int train_per_class, int test_per_class, uint64_t seed) {
  LabeledDataset data;
  data.height = 8;
  data.width = 8;
  data.channels = 1;
  data.num_classes = 2;
  Rng rng(seed);
  auto emit = [&](int label, int count, SampleRole role) {
    for (int i = 0; i < count; ++i) {
      std::vector<float> img(64);
      float base = label == 0 ? 0.15f : 0.85f;
      for (float& p : img) p = base + static_cast<float>(rng.uniform(-0.1, 0.1));
      data.push(std::move(img), label, role);
    }
  };
  for (int label = 0; label < 2; ++label) emit(label, train_per_class, SampleRole::TrainClean);
  for (int label = 0; label < 2; ++label) emit(label, test_per_class, SampleRole::Test);
  return data;
}

bool same_weights(const Network& a, const Network& b) {
  if (a.weights.size() != b.weights.size()) return false;
  for (size_t i = 0; i < a.weights.size(); ++i) {
    const auto& va = a.weights[i].values();
    const auto& vb = b.weights[i].values();
    if (va.size() != vb.size()) return false;
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("desk parameter count matches the closed form") {
    CHECK(Architecture::desk(5).param_count() == 2253);
    for (int classes : {2, 3, 4, 7, 10}) {
      // conv 3->8 (216+8), conv 8->8 (576+8), dense 288->C (288C + C).
      CHECK(Architecture::desk(classes).param_count() == 808 + 289 * classes);
    }
  }

  TEST_CASE("describe and parse round-trip") {
    Architecture desk = Architecture::desk(5);
    const std::string desc = "conv8,relu,conv8,relu,maxpool,flatten,dense5,softmax";
    CHECK(desk.describe() == desc);
    Architecture back = Architecture::parse(desc, 16, 16, 3, 5);
    CHECK(back.describe() == desc);
    REQUIRE(back.layers.size() == desk.layers.size());
    for (size_t i = 0; i < desk.layers.size(); ++i) {
      CHECK(back.layers[i].kind == desk.layers[i].kind);
      CHECK(back.layers[i].units == desk.layers[i].units);
    }
    CHECK_THROWS_WITH_AS(Architecture::parse("conv8,gelu,flatten,dense5,softmax", 16, 16, 3, 5),
                         doctest::Contains("unknown layer token"), tabor::Error);
    CHECK_THROWS_WITH_AS(Architecture::parse("convx,flatten,dense5,softmax", 16, 16, 3, 5),
                         doctest::Contains("bad layer token"), tabor::Error);
  }

  TEST_CASE("validation names the offending layer") {
    CHECK_THROWS_WITH_AS(Architecture::parse("dense5,softmax", 16, 16, 3, 5),
                         doctest::Contains("layer 0 (dense5): dense layer before flatten"),
                         tabor::Error);
    CHECK_THROWS_WITH_AS(Architecture::parse("flatten,conv8,dense5,softmax", 16, 16, 3, 5),
                         doctest::Contains("layer 1 (conv8): convolution after flatten"),
                         tabor::Error);
    CHECK_THROWS_WITH_AS(Architecture::parse("flatten,softmax,dense5,softmax", 16, 16, 3, 5),
                         doctest::Contains("softmax must be the final layer"), tabor::Error);
    CHECK_THROWS_WITH_AS(Architecture::parse("flatten,dense5", 16, 16, 3, 5),
                         doctest::Contains("must end in softmax"), tabor::Error);
    CHECK_THROWS_WITH_AS(Architecture::parse("flatten,dense4,softmax", 16, 16, 3, 5),
                         doctest::Contains("final width 4 does not match 5 classes"), tabor::Error);
    CHECK_THROWS_WITH_AS(Architecture::parse("conv8,flatten,dense5,softmax", 2, 2, 3, 5),
                         doctest::Contains("smaller than the 3x3 kernel"), tabor::Error);
  }

  TEST_CASE("preset architectures respect their geometry limits") {
    CHECK_NOTHROW(Architecture::conv6(5));
    CHECK_NOTHROW(Architecture::conv10(5, 156));
    CHECK_THROWS_AS(Architecture::conv10(5, 48), tabor::Error);
  }

  TEST_CASE("parameter names carry the layer index") {
    auto shapes = Architecture::desk(5).param_shapes();
    REQUIRE(shapes.size() == 6);
    CHECK(shapes[0].name == "layer/0/conv8/w");
    CHECK(shapes[0].shape == std::vector<int>{3, 3, 3, 8});
    CHECK(shapes[1].name == "layer/0/conv8/b");
    CHECK(shapes[1].shape == std::vector<int>{8});
    CHECK(shapes[2].name == "layer/2/conv8/w");
    CHECK(shapes[2].shape == std::vector<int>{3, 3, 8, 8});
    CHECK(shapes[4].name == "layer/6/dense5/w");
    CHECK(shapes[4].shape == std::vector<int>{288, 5});
    CHECK(shapes[5].name == "layer/6/dense5/b");
  }

  TEST_CASE("build is deterministic in the seed and zeroes the biases") {
    Architecture arch = Architecture::desk(4);
    Network a = Network::build(arch, 7);
    Network b = Network::build(arch, 7);
    Network c = Network::build(arch, 8);
    CHECK(same_weights(a, b));
    CHECK_FALSE(same_weights(a, c));
    for (const auto& w : a.weights) {
      if (w.rank() != 1) continue;
      for (float v : w.values()) CHECK(v == 0.0f);
    }
    CHECK(a.meta.seed == 7);
  }

  TEST_CASE("zeroed weights predict the uniform distribution") {
    Architecture arch = Architecture::desk(5, 8, 1);
    Network net = Network::build(arch, 3);
    for (auto& w : net.weights)
      std::fill(w.values().begin(), w.values().end(), 0.0f);
    tabor::Tensor batch = tabor::Tensor::full({2, 8, 8, 1}, 0.4f);
    tabor::Tensor probs = net.predict(batch);
    REQUIRE(probs.shape() == std::vector<int>{2, 5});
    for (float p : probs.values()) CHECK(p == doctest::Approx(0.2).epsilon(1e-6));
  }

  TEST_CASE("forward pass validates the batch geometry") {
    Network net = Network::build(Architecture::desk(3), 1);
    CHECK_THROWS_WITH_AS(net.forward_logits(tabor::Tensor({2, 8, 8, 3})),
                         doctest::Contains("does not match input geometry"), tabor::Error);
    CHECK_THROWS_WITH_AS(net.forward_logits(tabor::Tensor({16, 16, 3})),
                         doctest::Contains("[N,H,W,C]"), tabor::Error);
  }

  TEST_CASE("accuracy counts argmax hits") {
    // Bias-only classifier that always answers class 1.
    Architecture arch = Architecture::parse("flatten,dense3,softmax", 2, 2, 1, 3);
    Network net = Network::build(arch, 0);
    std::fill(net.weights[0].values().begin(), net.weights[0].values().end(), 0.0f);
    net.weights[1].values() = {0.0f, 5.0f, 0.0f};

    LabeledDataset data;
    data.height = 2;
    data.width = 2;
    data.channels = 1;
    data.num_classes = 3;
    for (int label : {1, 1, 1, 0})
      data.push(std::vector<float>(4, 0.5f), label, SampleRole::TrainClean);

    CHECK(tabor::accuracy(net, data, {0, 1, 2, 3}) == doctest::Approx(0.75));
    CHECK(tabor::accuracy(net, data, {0, 1, 2}) == doctest::Approx(1.0));
    CHECK(tabor::accuracy(net, data, {3}) == doctest::Approx(0.0));
    CHECK_THROWS_WITH_AS(tabor::accuracy(net, data, {}), doctest::Contains("no samples"),
                         tabor::Error);
  }

  TEST_CASE("training separates two brightness blobs") {
    LabeledDataset data = make_blobs(32, 8, 11);
    Network net = Network::build(Architecture::desk(2, 8, 1), 5);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 16;
    cfg.seed = 21;
    int calls = 0;
    Network fit = tabor::train(net, data, cfg, [&](int, double loss) {
      ++calls;
      CHECK(std::isfinite(loss));
    });
    CHECK(calls == 30);
    double test_acc = tabor::accuracy(fit, data, data.test_indices());
    CHECK(test_acc >= 0.95);
    CHECK(fit.meta.final_accuracy == doctest::Approx(test_acc));
    CHECK(fit.meta.epochs_trained == 30);
    CHECK(fit.meta.seed == 21);
    // The input network is untouched.
    CHECK(same_weights(net, Network::build(Architecture::desk(2, 8, 1), 5)));
  }

  TEST_CASE("training is deterministic and accumulates epoch counts") {
    LabeledDataset data = make_blobs(16, 4, 3);
    Network net = Network::build(Architecture::desk(2, 8, 1), 9);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.learning_rate = 5e-3;
    cfg.batch_size = 8;
    cfg.seed = 4;
    Network a = tabor::train(net, data, cfg);
    Network b = tabor::train(net, data, cfg);
    CHECK(same_weights(a, b));
    cfg.epochs = 2;
    Network c = tabor::train(a, data, cfg);
    CHECK(c.meta.epochs_trained == 8);
    CHECK_FALSE(same_weights(a, c));
  }

  TEST_CASE("zero epochs hands back an exact copy") {
    LabeledDataset data = make_blobs(8, 2, 3);
    Network net = Network::build(Architecture::desk(2, 8, 1), 9);
    TrainConfig cfg;
    cfg.epochs = 0;
    Network out = tabor::train(net, data, cfg);
    CHECK(same_weights(net, out));
    CHECK(out.meta.epochs_trained == 0);
  }

  TEST_CASE("training rejects a class-count mismatch") {
    LabeledDataset data = make_blobs(8, 2, 3);
    Network net = Network::build(Architecture::desk(3, 8, 1), 9);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_WITH_AS(tabor::train(net, data, cfg),
                         doctest::Contains("dataset has 2 classes, network expects 3"),
                         tabor::Error);
  }
}
