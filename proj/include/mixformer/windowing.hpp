#pragma once

#include "mixformer/autodiff.hpp"

namespace mixformer {

// Geometry of one partition, sufficient to invert it exactly.
struct WindowLayout {
  int window = 0;  // K
  int shift = 0;   // cyclic displacement applied before tiling, 0 <= shift < K
  int64_t batch = 0;
  int64_t channels = 0;
  int64_t orig_h = 0, orig_w = 0;
  int64_t padded_h = 0, padded_w = 0;
  int64_t win_rows = 0, win_cols = 0;
  int64_t pad_bottom = 0, pad_right = 0;

  int64_t num_windows() const { return win_rows * win_cols; }
  int64_t tokens_per_window() const { return static_cast<int64_t>(window) * window; }
};

struct WindowPartition {
  Var windows;   // (N * nWin, K*K, C)
  WindowLayout layout;
  Tensor mask;   // (nWin, K*K, K*K) additive; 0 = attend, -1e9 = blocked
};

inline constexpr double kWindowMaskBlocked = -1e9;

// Tiles an NCHW map into non-overlapping KxK windows. The map is zero-padded
// on the right/bottom to multiples of K and cyclically shifted by
// (-shift, -shift) first; the mask blocks padded positions and, for shifted
// layouts, pairs whose window content wrapped around the border.
WindowPartition window_partition(const Var& x, int window, int shift);

// Exact inverse of window_partition: un-shifts and crops the padding.
Var window_reverse(const Var& windows, const WindowLayout& layout);

Tensor window_attention_mask(const WindowLayout& layout);

}  // namespace mixformer
