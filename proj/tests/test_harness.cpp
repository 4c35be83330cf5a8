#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "mixformer/gradcheck.hpp"
#include "mixformer/ops.hpp"
#include "mixformer/serialize.hpp"
#include "mixformer/train.hpp"
#include "test_util.hpp"

using namespace mixformer;

namespace {
std::string temp_path(const char* name) {
  return std::string("mixformer_test_") + name + ".bin";
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::vector<char>((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
}
}  // namespace

TEST_CASE("adamw single updates") {
  SUBCASE("zero gradient and zero decay is a fixed point") {
    Tensor p({3}, {1.0, -2.0, 0.5});
    Tensor g = Tensor::zeros({3});
    Tensor m = Tensor::zeros({3}), v = Tensor::zeros({3});
    Tensor before = p.clone();
    adamw_update(p, g, m, v, 1, 0.1, 0.0, 0.9, 0.999, 1e-8);
    CHECK(p.same_values(before));
  }
  SUBCASE("hand-stepped scalar") {
    Tensor p({1}, {1.0});
    Tensor g({1}, {1.0});
    Tensor m = Tensor::zeros({1}), v = Tensor::zeros({1});
    adamw_update(p, g, m, v, 1, 0.1, 0.0, 0.9, 0.999, 1e-8);
    // mhat = vhat = 1 after bias correction: p <- 1 - 0.1 * 1/(1+eps)
    CHECK(p.at({0}) == doctest::Approx(0.9).epsilon(1e-7));
  }
  SUBCASE("decay alone multiplies by (1 - lr*wd)") {
    Tensor p({1}, {2.0});
    Tensor g = Tensor::zeros({1});
    Tensor m = Tensor::zeros({1}), v = Tensor::zeros({1});
    adamw_update(p, g, m, v, 1, 0.1, 0.04, 0.9, 0.999, 1e-8);
    CHECK(p.at({0}) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.04)).epsilon(1e-12));
  }
  SUBCASE("state shape mismatch errors") {
    Tensor p({2}), g({2}), m({3}), v({2});
    CHECK_THROWS_AS(adamw_update(p, g, m, v, 1, 0.1, 0.0, 0.9, 0.999, 1e-8),
                    std::invalid_argument);
  }
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.warmup_steps = 10;
  cfg.steps = 110;
  cfg.cosine_decay = true;
  cfg.min_learning_rate = 0.0;
  AdamW opt({}, cfg);
  CHECK(opt.lr_at(0) == doctest::Approx(0.1));
  CHECK(opt.lr_at(9) == doctest::Approx(1.0));
  CHECK(opt.lr_at(10) == doctest::Approx(1.0));
  CHECK(opt.lr_at(60) == doctest::Approx(0.5));
  CHECK(opt.lr_at(110) == doctest::Approx(0.0));
  cfg.cosine_decay = false;
  AdamW flat({}, cfg);
  CHECK(flat.lr_at(50) == doctest::Approx(1.0));
}

TEST_CASE("cross entropy examples and oracle") {
  SUBCASE("uniform logits give ln K") {
    Var logits(Tensor::zeros({3, 4}));
    std::vector<int64_t> labels = {0, 2, 3};
    Var loss = cross_entropy(logits, labels);
    CHECK(loss.value().data()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("dominant logit saturates to zero loss") {
    Tensor t = Tensor::zeros({2, 3});
    t.mutable_data()[1] = 30.0;
    t.mutable_data()[3 + 2] = 30.0;
    std::vector<int64_t> labels = {1, 2};
    Var loss = cross_entropy(Var(t), labels);
    CHECK(loss.value().data()[0] < 1e-12);
  }
  SUBCASE("matches a long-double loop computation") {
    Rng rng(1);
    Tensor logits = rng.normal_tensor({5, 7}, 0.0, 3.0);
    std::vector<int64_t> labels;
    for (int i = 0; i < 5; ++i) labels.push_back(rng.below(7));
    long double total = 0.0L;
    for (int64_t i = 0; i < 5; ++i) {
      long double denom = 0.0L;
      for (int64_t j = 0; j < 7; ++j) denom += expl((long double)logits.at({i, j}));
      total += -logl(expl((long double)logits.at({i, labels[(size_t)i]})) / denom);
    }
    double expect = static_cast<double>(total / 5.0L);
    Var loss = cross_entropy(Var(logits), labels);
    CHECK(std::abs(loss.value().data()[0] - expect) < 1e-12);
  }
  SUBCASE("label range is validated") {
    std::vector<int64_t> bad = {4};
    CHECK_THROWS_AS(cross_entropy(Var(Tensor::zeros({1, 4})), bad), std::invalid_argument);
  }
  SUBCASE("gradcheck") {
    Rng rng(2);
    Parameter logits("logits", rng.normal_tensor({4, 5}, 0.0, 1.0));
    std::vector<int64_t> labels = {1, 0, 4, 2};
    auto f = [&] { return cross_entropy(logits.var, labels); };
    Parameter* ps[] = {&logits};
    CHECK(finite_difference_check(f, ps, GradCheckOptions{1e-5, 1e-6}).pass);
  }
}

TEST_CASE("weight files round-trip byte for byte") {
  Model model = build_model("micro", 21);
  std::string p1 = temp_path("w1"), p2 = temp_path("w2");
  save_model_weights(model, p1);
  Model loaded = build_model("micro", 22);  // different init, same tree
  load_model_weights(loaded, p1);
  save_model_weights(loaded, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));

  // loaded values match to 32-bit precision
  ParamRefs ra = model.param_refs(), rb = loaded.param_refs();
  for (size_t i = 0; i < ra.params.size(); ++i) {
    auto pa = ra.params[i]->value().data();
    auto pb = rb.params[i]->value().data();
    for (size_t j = 0; j < pa.size(); ++j) {
      CHECK(static_cast<float>(pa[j]) == static_cast<float>(pb[j]));
    }
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("weight loading is strict about names and shapes") {
  Model model = build_model("micro", 23);
  std::string p = temp_path("w3");
  save_tensors(p, {{"bogus", Tensor::zeros({3})}});
  CHECK_THROWS_AS(load_model_weights(model, p), std::runtime_error);
  CHECK_THROWS_AS(load_tensors("does_not_exist.bin"), std::runtime_error);
  std::remove(p.c_str());

  std::string single = temp_path("w4");
  save_tensor(single, "logits", Tensor({2, 2}, {1, 2, 3, 4}));
  std::string name;
  Tensor back = load_single_tensor(single, &name);
  CHECK(name == "logits");
  CHECK(back.shape() == Shape{2, 2});
  CHECK(back.at({1, 0}) == 3.0);
  std::remove(single.c_str());
}

TEST_CASE("synthetic dataset is deterministic and balanced") {
  SyntheticDatasetConfig cfg;
  cfg.seed = 5;
  SyntheticDataset a = SyntheticDataset::generate(cfg);
  SyntheticDataset b = SyntheticDataset::generate(cfg);
  REQUIRE(a.size() == 64);
  std::array<int, 4> counts{};
  for (int64_t i = 0; i < a.size(); ++i) {
    CHECK(a.images[(size_t)i].same_values(b.images[(size_t)i]));
    counts[(size_t)a.labels[(size_t)i]]++;
  }
  for (int c : counts) CHECK(c == 16);

  cfg.seed = 6;
  SyntheticDataset c = SyntheticDataset::generate(cfg);
  CHECK(!a.images[0].same_values(c.images[0]));

  Tensor batch = a.batch_images(std::vector<int64_t>{0, 63});
  CHECK(batch.shape() == Shape{2, 3, 56, 56});
}

TEST_CASE("toy training is reproducible and starts at ln K") {
  ModelConfig mc = ModelConfig::variant("micro");
  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 8;
  tc.warmup_steps = 2;
  tc.seed = 9;
  SyntheticDatasetConfig dc;
  dc.seed = 9;
  SyntheticDataset data = SyntheticDataset::generate(dc);

  TrainResult r1 = train_toy(mc, tc, data);
  CHECK(r1.metrics.loss_curve.size() == 6);
  // zero-initialised head: the first loss is exactly ln(num_classes)
  CHECK(r1.metrics.initial_loss ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  TrainResult r2 = train_toy(mc, tc, data);
  for (size_t i = 0; i < r1.metrics.loss_curve.size(); ++i) {
    CHECK(r1.metrics.loss_curve[i] == r2.metrics.loss_curve[i]);  // bit-for-bit
  }
  CHECK(r1.metrics.loss_curve.back() < r1.metrics.loss_curve.front());
}
