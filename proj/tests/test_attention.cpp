#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mixformer/attention.hpp"
#include "mixformer/gradcheck.hpp"
#include "test_util.hpp"

using namespace mixformer;

namespace {

WindowAttention random_attention(WmsaConfig cfg, uint64_t seed, bool random_bias_table = true) {
  Rng rng(seed);
  WindowAttention attn("attn", cfg, rng, 0.3);
  if (cfg.relative_position_bias && random_bias_table) {
    Tensor t = rng.normal_tensor(attn.bias_table.value().shape(), 0.0, 0.5);
    std::copy_n(t.data().data(), t.numel(), attn.bias_table.value_mut().mutable_data());
  }
  return attn;
}

Tensor oracle_for(const WindowAttention& attn, const Tensor& windows, const Tensor& mask,
                  const Tensor& gate) {
  return oracle::dense_attention(
      windows, attn.cfg, attn.qkv.weight.value(),
      attn.cfg.qkv_bias ? attn.qkv.bias.value() : Tensor(), attn.proj.weight.value(),
      attn.proj.bias.value(),
      attn.cfg.relative_position_bias ? attn.bias_table.value() : Tensor(), mask, gate);
}

}  // namespace

TEST_CASE("relative position bias lookup") {
  SUBCASE("K=1 is one value per head") {
    Var table(Tensor({1, 3}, {0.5, -1.0, 2.0}), true);
    Var bias = relative_position_bias(table, 1);
    CHECK(bias.shape() == Shape{3, 1, 1});
    CHECK(bias.value().at({1, 0, 0}) == -1.0);
  }
  SUBCASE("K=2 reproduces the hand-enumerated offset grid") {
    // rows indexed by (dy+1)*3 + (dx+1); fill row r with value r
    Tensor t({9, 1});
    for (int64_t r = 0; r < 9; ++r) t.mutable_data()[r] = static_cast<double>(r);
    Var bias = relative_position_bias(Var(t), 2);
    // positions in a 2x2 window: 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1)
    auto expect = [](int64_t yi, int64_t xi, int64_t yj, int64_t xj) {
      return static_cast<double>((yi - yj + 1) * 3 + (xi - xj + 1));
    };
    CHECK(bias.value().at({0, 0, 0}) == expect(0, 0, 0, 0));  // centre offset
    CHECK(bias.value().at({0, 0, 1}) == expect(0, 0, 0, 1));
    CHECK(bias.value().at({0, 1, 0}) == expect(0, 1, 0, 0));
    CHECK(bias.value().at({0, 0, 3}) == expect(0, 0, 1, 1));
    CHECK(bias.value().at({0, 3, 0}) == expect(1, 1, 0, 0));
    CHECK(bias.value().at({0, 2, 1}) == expect(1, 0, 0, 1));
  }
  SUBCASE("pair swap symmetry iff table symmetric under offset negation") {
    Tensor sym({9, 1});
    for (int64_t dy = -1; dy <= 1; ++dy) {
      for (int64_t dx = -1; dx <= 1; ++dx) {
        sym.mutable_data()[(dy + 1) * 3 + dx + 1] = static_cast<double>(dy * dy + dx * dx);
      }
    }
    Var bias = relative_position_bias(Var(sym), 2);
    for (int64_t i = 0; i < 4; ++i) {
      for (int64_t j = 0; j < 4; ++j) {
        CHECK(bias.value().at({0, i, j}) == bias.value().at({0, j, i}));
      }
    }
  }
  SUBCASE("wrong table shape errors") {
    CHECK_THROWS_AS(relative_position_bias(Var(Tensor({8, 2})), 2), std::invalid_argument);
  }
}

TEST_CASE("single token window reduces to a projection") {
  WmsaConfig cfg;
  cfg.dim = 4;
  cfg.num_heads = 1;
  cfg.window = 1;
  cfg.relative_position_bias = false;
  WindowAttention attn = random_attention(cfg, 11);
  Rng rng(12);
  Tensor win = rng.normal_tensor({3, 1, 4}, 0.0, 1.0);
  Tensor gate = rng.uniform_tensor({3, 4}, 0.1, 0.9);
  Var out = attn.forward(Var(win), Tensor(), Var(gate));
  // attention over one token is [[1]]: out = proj(v * gate)
  for (int64_t b = 0; b < 3; ++b) {
    for (int64_t j = 0; j < 4; ++j) {
      double v = attn.proj.bias.value().at({j});
      for (int64_t e = 0; e < 4; ++e) {
        double vproj = attn.qkv.bias.value().at({2 * 4 + e});
        for (int64_t i = 0; i < 4; ++i) {
          vproj += win.at({b, 0, i}) * attn.qkv.weight.value().at({i, 2 * 4 + e});
        }
        v += vproj * gate.at({b, e}) * attn.proj.weight.value().at({e, j});
      }
      CHECK(out.value().at({b, 0, j}) == doctest::Approx(v).epsilon(1e-12));
    }
  }
}

TEST_CASE("matches dense loop oracle over random trials") {
  Rng meta(13);
  int trials = 0;
  for (int k : {1, 2, 7}) {
    for (int heads : {1, 2, 4}) {
      for (int rep = 0; rep < 3; ++rep) {
        WmsaConfig cfg;
        cfg.dim = heads * (2 << meta.below(2));  // head_dim 2 or 4
        cfg.num_heads = heads;
        cfg.window = k;
        cfg.relative_position_bias = meta.below(2) == 0;
        cfg.qkv_bias = meta.below(2) == 0;
        WindowAttention attn = random_attention(cfg, 100 + static_cast<uint64_t>(trials));
        Rng rng(200 + static_cast<uint64_t>(trials));
        int64_t t = static_cast<int64_t>(k) * k;
        int64_t nwin = 1 + meta.below(2);
        Tensor win = rng.normal_tensor({nwin, t, cfg.dim}, 0.0, 1.0);
        Tensor mask;
        if (meta.below(2) == 0) {
          mask = Tensor::zeros({nwin, t, t});
          for (int64_t w = 0; w < nwin; ++w) {
            for (int64_t i = 0; i < t; ++i) {
              if (rng.below(4) == 0) {
                for (int64_t j = 0; j < t; ++j) {
                  mask.mutable_data()[(w * t + i) * t + j] = kWindowMaskBlocked;
                  mask.mutable_data()[(w * t + j) * t + i] = kWindowMaskBlocked;
                }
              }
            }
          }
        }
        Tensor gate = meta.below(2) == 0 ? rng.uniform_tensor({1, cfg.dim}, 0.05, 0.95) : Tensor();
        Var out = attn.forward(Var(win), mask, gate.defined() ? Var(gate) : Var());
        Tensor expect = oracle_for(attn, win, mask, gate);
        CAPTURE(k);
        CAPTURE(heads);
        CHECK(oracle::max_abs_diff(out.value(), expect) < 1e-10);
        ++trials;
      }
    }
  }
  CHECK(trials == 27);
}

TEST_CASE("attention is linear in the value gate") {
  WmsaConfig cfg;
  cfg.dim = 8;
  cfg.num_heads = 2;
  cfg.window = 3;
  cfg.relative_position_bias = true;  // zero-init table is a no-op
  Rng rng(21);
  WindowAttention attn("attn", cfg, rng, 0.3);
  Tensor win = rng.normal_tensor({2, 9, 8}, 0.0, 1.0);
  // remove the output-proj bias so the comparison is exactly linear
  std::fill_n(attn.proj.bias.value_mut().mutable_data(), 8, 0.0);
  Var full = attn.forward(Var(win), Tensor(), Var());
  Var halved = attn.forward(Var(win), Tensor(), Var(Tensor::full({1, 8}, 0.5)));
  CHECK(oracle::max_abs_diff(halved.value(), scale(full, 0.5).value()) < 1e-12);
}

TEST_CASE("masked positions cannot influence valid outputs") {
  WmsaConfig cfg;
  cfg.dim = 6;
  cfg.num_heads = 2;
  cfg.window = 3;
  WindowAttention attn = random_attention(cfg, 31);
  Rng rng(32);
  Tensor win = rng.normal_tensor({1, 9, 6}, 0.0, 1.0);
  Tensor mask = Tensor::zeros({1, 9, 9});
  // mark tokens 7 and 8 as padding
  for (int64_t p : {7, 8}) {
    for (int64_t j = 0; j < 9; ++j) {
      mask.mutable_data()[p * 9 + j] = kWindowMaskBlocked;
      mask.mutable_data()[j * 9 + p] = kWindowMaskBlocked;
    }
  }
  Tensor base = attn.forward(Var(win), mask, Var()).value();
  Tensor poked = win.clone();
  for (int64_t p : {7, 8}) {
    for (int64_t e = 0; e < 6; ++e) poked.mutable_data()[p * 6 + e] += rng.normal(0.0, 3.0);
  }
  Tensor after = attn.forward(Var(poked), mask, Var()).value();
  for (int64_t i = 0; i < 7; ++i) {
    for (int64_t e = 0; e < 6; ++e) {
      CHECK(std::abs(after.at({0, i, e}) - base.at({0, i, e})) < 1e-12);
    }
  }
}

TEST_CASE("no gradient leaks across windows") {
  WmsaConfig cfg;
  cfg.dim = 4;
  cfg.num_heads = 2;
  cfg.window = 2;
  WindowAttention attn = random_attention(cfg, 41);
  Rng rng(42);
  Parameter win("windows", rng.normal_tensor({3, 4, 4}, 0.0, 1.0));
  // only window 1 contributes to the loss
  Var out = attn.forward(win.var, Tensor(), Var());
  backward(sum_all(mul(narrow(out, 0, 1, 1), narrow(out, 0, 1, 1))));
  const Tensor& g = win.grad();
  for (int64_t b : {0, 2}) {
    for (int64_t i = 0; i < 4; ++i) {
      for (int64_t e = 0; e < 4; ++e) {
        CHECK(g.at({b, i, e}) == 0.0);
      }
    }
  }

  // permuting window order permutes outputs identically
  Tensor swapped({3, 4, 4});
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t e = 0; e < 4; ++e) {
      swapped.mutable_data()[(0 * 4 + i) * 4 + e] = win.value().at({1, i, e});
      swapped.mutable_data()[(1 * 4 + i) * 4 + e] = win.value().at({0, i, e});
      swapped.mutable_data()[(2 * 4 + i) * 4 + e] = win.value().at({2, i, e});
    }
  }
  Tensor base = attn.forward(win.var, Tensor(), Var()).value();
  Tensor perm = attn.forward(Var(swapped), Tensor(), Var()).value();
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t e = 0; e < 4; ++e) {
      CHECK(perm.at({0, i, e}) == base.at({1, i, e}));
      CHECK(perm.at({1, i, e}) == base.at({0, i, e}));
      CHECK(perm.at({2, i, e}) == base.at({2, i, e}));
    }
  }
}

TEST_CASE("projections and bias table pass gradcheck at 1e-4") {
  WmsaConfig cfg;
  cfg.dim = 6;
  cfg.num_heads = 3;
  cfg.window = 2;
  WindowAttention attn = random_attention(cfg, 51);
  Rng rng(52);
  Parameter win("windows", rng.normal_tensor({2, 4, 6}, 0.0, 1.0));
  Parameter gate("gate", rng.uniform_tensor({1, 6}, 0.2, 0.8));
  Tensor mask = Tensor::zeros({2, 4, 4});
  for (int64_t j = 0; j < 4; ++j) {
    mask.mutable_data()[(1 * 4 + 3) * 4 + j] = kWindowMaskBlocked;
    mask.mutable_data()[(1 * 4 + j) * 4 + 3] = kWindowMaskBlocked;
  }
  // The probe ignores the fully-masked query (window 1, token 3): its output
  // is softmax over logits that all carry the -1e9 offset, whose limited
  // precision makes finite differences meaningless there. Real callers crop
  // those positions in window_reverse.
  Tensor probe = rng.normal_tensor({2, 4, 6}, 0.0, 1.0);
  for (int64_t e = 0; e < 6; ++e) probe.mutable_data()[(1 * 4 + 3) * 6 + e] = 0.0;
  auto f = [&] {
    Var out = attn.forward(win.var, mask, gate.var);
    return scale(mean_all(mul(out, Var(probe))), 0.01);
  };
  ParamRefs refs;
  attn.collect(refs);
  std::vector<Parameter*> params = refs.params;
  Parameter* ins[] = {&win, &gate};
  GradCheckReport rep = finite_difference_check(f, params, ins, GradCheckOptions{1e-5, 1e-4});
  CHECK(rep.pass);
}

TEST_CASE("config and input validation") {
  WmsaConfig bad;
  bad.dim = 6;
  bad.num_heads = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  WmsaConfig cfg;
  cfg.dim = 4;
  cfg.num_heads = 1;
  cfg.window = 2;
  WindowAttention attn = random_attention(cfg, 61);
  Rng rng(62);
  Tensor win = rng.normal_tensor({2, 4, 4}, 0.0, 1.0);
  // 2 windows but a 3-window mask
  CHECK_THROWS_AS(attn.forward(Var(win), Tensor::zeros({3, 4, 4}), Var()),
                  std::invalid_argument);
  CHECK_THROWS_AS(attn.forward(Var(rng.normal_tensor({2, 9, 4}, 0.0, 1.0)), Tensor(), Var()),
                  std::invalid_argument);
}
