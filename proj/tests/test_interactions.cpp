#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mixformer/gradcheck.hpp"
#include "mixformer/interactions.hpp"
#include "test_util.hpp"

using namespace mixformer;

TEST_CASE("zero-initialised gates emit 0.5 everywhere") {
  Rng rng(1);
  ForwardCtx ctx = ForwardCtx::eval();
  ChannelInteraction cg("cg", 8, 6, ChannelInteraction::default_hidden(8, 4), rng, 0.0);
  Var g = cg.forward(Var(rng.normal_tensor({2, 8, 5, 5}, 0.0, 2.0)), ctx);
  CHECK(g.shape() == Shape{2, 6});
  for (double v : g.value().data()) CHECK(v == 0.5);

  SpatialInteraction sg("sg", 8, 2, rng, 0.0);
  Var m = sg.forward(Var(rng.normal_tensor({2, 8, 4, 6}, 0.0, 2.0)), ctx);
  CHECK(m.shape() == Shape{2, 1, 4, 6});
  for (double v : m.value().data()) CHECK(v == 0.5);
}

TEST_CASE("gates are bounded in (0,1) and only attenuate") {
  Rng rng(2);
  ForwardCtx ctx = ForwardCtx::train();
  ChannelInteraction cg("cg", 6, 4, 2, rng, 0.5);
  SpatialInteraction sg("sg", 6, 2, rng, 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor feat = rng.normal_tensor({3, 6, 4, 4}, 0.0, 5.0);
    Var g = cg.forward(Var(feat), ctx);
    for (double v : g.value().data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    Var m = sg.forward(Var(feat), ctx);
    for (double v : m.value().data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    Var gated = mul(Var(feat), m);
    auto pf = feat.data();
    auto pg = gated.value().data();
    for (size_t i = 0; i < pf.size(); ++i) CHECK(std::abs(pg[i]) <= std::abs(pf[i]));
  }
}

TEST_CASE("channel gate ignores spatial order") {
  Rng rng(3);
  ForwardCtx ctx = ForwardCtx::eval();
  ChannelInteraction cg("cg", 5, 3, 2, rng, 0.4);
  Tensor feat = rng.normal_tensor({2, 5, 4, 4}, 0.0, 1.0);
  Tensor shuffled = feat.clone();
  // random spatial permutation applied identically per (n, c) plane
  std::vector<int64_t> perm(16);
  for (int64_t i = 0; i < 16; ++i) perm[static_cast<size_t>(i)] = i;
  for (int64_t i = 15; i > 0; --i) {
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.below(i + 1))]);
  }
  double* ps = shuffled.mutable_data();
  for (int64_t nc = 0; nc < 10; ++nc) {
    for (int64_t i = 0; i < 16; ++i) {
      ps[nc * 16 + i] = feat.data()[nc * 16 + perm[static_cast<size_t>(i)]];
    }
  }
  Var a = cg.forward(Var(feat), ctx);
  Var b = cg.forward(Var(shuffled), ctx);
  CHECK(oracle::max_abs_diff(a.value(), b.value()) < 1e-12);
}

TEST_CASE("squeeze stage equals the loop-mean oracle") {
  Rng rng(4);
  Tensor feat = rng.normal_tensor({2, 7, 3, 5}, 0.0, 1.0);
  CHECK(oracle::max_abs_diff(global_avg_pool(Var(feat)).value(), oracle::loop_mean_hw(feat)) <
        1e-12);

  // spatially constant planes pool to the constant exactly
  Tensor constant({1, 2, 3, 3});
  for (int64_t c = 0; c < 2; ++c) {
    for (int64_t i = 0; i < 9; ++i) {
      constant.mutable_data()[c * 9 + i] = 1.5 * static_cast<double>(c + 1);
    }
  }
  Var pooled = global_avg_pool(Var(constant));
  CHECK(pooled.value().at({0, 0}) == 1.5);
  CHECK(pooled.value().at({0, 1}) == 3.0);
}

TEST_CASE("spatial gate keeps input resolution") {
  Rng rng(5);
  ForwardCtx ctx = ForwardCtx::eval();
  SpatialInteraction sg("sg", 4, 1, rng, 0.3);
  for (int64_t h : {1, 3, 7}) {
    for (int64_t w : {2, 5}) {
      Var m = sg.forward(Var(rng.normal_tensor({1, 4, h, w}, 0.0, 1.0)), ctx);
      CHECK(m.shape() == Shape{1, 1, h, w});
    }
  }
}

TEST_CASE("gradcheck through gate-times-feature at 1e-4") {
  Rng rng(6);
  ChannelInteraction cg("cg", 4, 3, 2, rng, 0.4);
  SpatialInteraction sg("sg", 3, 2, rng, 0.4);
  Parameter conv_feat("conv_feat", rng.normal_tensor({2, 4, 3, 3}, 0.0, 1.0));
  Parameter attn_feat("attn_feat", rng.normal_tensor({2, 3, 3, 3}, 0.0, 1.0));
  auto f = [&] {
    ForwardCtx ctx = ForwardCtx::train_frozen_stats();
    Var g = cg.forward(conv_feat.var, ctx);                       // (2,3)
    Var m = sg.forward(attn_feat.var, ctx);                       // (2,1,3,3)
    Var gated = mul(mul(attn_feat.var, m), reshape(g, {2, 3, 1, 1}));
    return sum_all(mul(gated, gated));
  };
  ParamRefs refs;
  cg.collect(refs);
  sg.collect(refs);
  Parameter* ins[] = {&conv_feat, &attn_feat};
  GradCheckReport rep = finite_difference_check(f, refs.params, ins, GradCheckOptions{1e-5, 1e-4});
  CHECK(rep.pass);
}

TEST_CASE("shape validation") {
  Rng rng(7);
  ForwardCtx ctx = ForwardCtx::eval();
  ChannelInteraction cg("cg", 4, 3, 1, rng, 0.3);
  CHECK_THROWS_AS(cg.forward(Var(Tensor::zeros({1, 5, 2, 2})), ctx), std::invalid_argument);
  SpatialInteraction sg("sg", 4, 1, rng, 0.3);
  CHECK_THROWS_AS(sg.forward(Var(Tensor::zeros({1, 3, 2, 2})), ctx), std::invalid_argument);
}
