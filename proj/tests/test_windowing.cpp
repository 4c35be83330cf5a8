#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>

#include "doctest.h"
#include "mixformer/gradcheck.hpp"
#include "mixformer/windowing.hpp"
#include "test_util.hpp"

using namespace mixformer;

TEST_CASE("exact tiling: 14x14 with K=7") {
  Rng rng(1);
  Tensor x = rng.normal_tensor({1, 3, 14, 14}, 0.0, 1.0);
  WindowPartition wp = window_partition(Var(x), 7, 0);
  CHECK(wp.layout.num_windows() == 4);
  CHECK(wp.layout.pad_bottom == 0);
  CHECK(wp.layout.pad_right == 0);
  CHECK(wp.windows.shape() == Shape{4, 49, 3});
  CHECK(wp.mask.same_values(Tensor::zeros({4, 49, 49})));
}

TEST_CASE("single window: 7x7 with K=7 round trips") {
  Rng rng(2);
  Tensor x = rng.normal_tensor({2, 4, 7, 7}, 0.0, 1.0);
  WindowPartition wp = window_partition(Var(x), 7, 0);
  CHECK(wp.layout.num_windows() == 1);
  Var back = window_reverse(wp.windows, wp.layout);
  CHECK(back.value().same_values(x));
}

TEST_CASE("padding path: 10x10 with K=7") {
  Rng rng(3);
  Tensor x = rng.normal_tensor({1, 2, 10, 10}, 0.0, 1.0);
  WindowPartition wp = window_partition(Var(x), 7, 0);
  CHECK(wp.layout.padded_h == 14);
  CHECK(wp.layout.padded_w == 14);
  CHECK(wp.layout.num_windows() == 4);

  // 14*14 - 10*10 = 96 padded cells across the canvas
  int64_t padded_positions = 0;
  for (int64_t w = 0; w < 4; ++w) {
    for (int64_t i = 0; i < 49; ++i) {
      // a position is padding iff it blocks attention to itself
      if (wp.mask.at({w, i, i}) == kWindowMaskBlocked) ++padded_positions;
    }
  }
  CHECK(padded_positions == 96);

  // pairs involving a padded endpoint are blocked, valid pairs open
  for (int64_t w = 0; w < 4; ++w) {
    for (int64_t i = 0; i < 49; ++i) {
      bool pad_i = wp.mask.at({w, i, i}) == kWindowMaskBlocked;
      for (int64_t j = 0; j < 49; ++j) {
        bool pad_j = wp.mask.at({w, j, j}) == kWindowMaskBlocked;
        double m = wp.mask.at({w, i, j});
        CHECK(m == ((pad_i || pad_j) ? kWindowMaskBlocked : 0.0));
      }
    }
  }
  CHECK(window_reverse(wp.windows, wp.layout).value().same_values(x));
}

TEST_CASE("round trip identity over all sizes and shifts") {
  Rng rng(4);
  const int k = 7;
  for (int h = 1; h <= 3 * k; h += 3) {
    for (int w = 1; w <= 3 * k; w += 4) {
      for (int shift : {0, 3}) {
        Tensor x = rng.normal_tensor({1, 2, h, w}, 0.0, 1.0);
        WindowPartition wp = window_partition(Var(x), k, shift);
        Var back = window_reverse(wp.windows, wp.layout);
        CAPTURE(h);
        CAPTURE(w);
        CAPTURE(shift);
        CHECK(back.value().same_values(x));
      }
    }
  }
}

TEST_CASE("every input element appears exactly once across windows") {
  for (int shift : {0, 3}) {
    Tensor ramp = Tensor::ramp({1, 2, 10, 13}, 1.0);
    WindowPartition wp = window_partition(Var(ramp), 7, shift);
    std::map<double, int> counts;
    for (double v : wp.windows.value().data()) ++counts[v];
    int64_t numel = ramp.numel();
    for (double v = 1.0; v <= static_cast<double>(numel); ++v) {
      REQUIRE(counts.count(v) == 1);
      CHECK(counts[v] == 1);
    }
    // remaining slots are padding zeros
    int64_t pad_cells = wp.windows.value().numel() - numel;
    CHECK(counts[0.0] == pad_cells);
  }
}

TEST_CASE("masks are symmetric and shifted masks block wrapped pairs") {
  Tensor x = Tensor::zeros({1, 1, 12, 9});
  WindowPartition wp = window_partition(Var(x), 7, 3);
  const Tensor& m = wp.mask;
  int64_t blocked = 0;
  for (int64_t w = 0; w < wp.layout.num_windows(); ++w) {
    for (int64_t i = 0; i < 49; ++i) {
      for (int64_t j = 0; j < 49; ++j) {
        CHECK(m.at({w, i, j}) == m.at({w, j, i}));
        if (m.at({w, i, j}) == kWindowMaskBlocked) ++blocked;
      }
    }
  }
  CHECK(blocked > 0);

  // divisible size + shift: only wrap-around pairs are blocked, and the
  // window away from the wrap boundary is fully open
  Tensor y = Tensor::zeros({1, 1, 14, 14});
  WindowPartition wps = window_partition(Var(y), 7, 3);
  bool found_open_window = false;
  for (int64_t w = 0; w < 4; ++w) {
    bool all_open = true;
    for (int64_t i = 0; i < 49 && all_open; ++i) {
      for (int64_t j = 0; j < 49; ++j) {
        if (wps.mask.at({w, i, j}) != 0.0) {
          all_open = false;
          break;
        }
      }
    }
    if (all_open) found_open_window = true;
  }
  CHECK(found_open_window);
}

TEST_CASE("partition and reverse are differentiable") {
  Rng rng(5);
  Parameter x("x", rng.normal_tensor({2, 3, 9, 8}, 0.0, 1.0));
  Parameter* ins[] = {&x};
  for (int shift : {0, 2}) {
    x.zero_grad();
    auto f = [&] {
      WindowPartition wp = window_partition(x.var, 5, shift);
      Var back = window_reverse(wp.windows, wp.layout);
      return sum_all(mul(back, back));
    };
    CHECK(finite_difference_check(f, {}, ins, GradCheckOptions{1e-5, 1e-6}).pass);
  }
}

TEST_CASE("layout mismatches are rejected") {
  Tensor x = Tensor::zeros({1, 2, 10, 10});
  WindowPartition wp = window_partition(Var(x), 7, 0);
  WindowLayout wrong = wp.layout;
  wrong.channels = 3;
  CHECK_THROWS_AS(window_reverse(wp.windows, wrong), std::invalid_argument);
  CHECK_THROWS_AS(window_partition(Var(x), 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(window_partition(Var(x), 7, 7), std::invalid_argument);
}
