#include "mixformer/windowing.hpp"

#include <stdexcept>

namespace mixformer {

namespace {

Var make_op(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->inputs = std::move(inputs);
  for (const NodePtr& in : node->inputs) {
    if (in && in->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) node->backward = std::move(backward_fn);
  return Var::from_node(std::move(node));
}

}  // namespace

WindowPartition window_partition(const Var& x, int window, int shift) {
  if (!x.defined() || x.value().rank() != 4) {
    throw std::invalid_argument("window_partition expects an NCHW tensor");
  }
  if (window < 1) throw std::invalid_argument("window size must be >= 1");
  if (shift < 0 || shift >= window) {
    throw std::invalid_argument("shift must lie in [0, window)");
  }
  WindowLayout lo;
  lo.window = window;
  lo.shift = shift;
  lo.batch = x.value().dim(0);
  lo.channels = x.value().dim(1);
  lo.orig_h = x.value().dim(2);
  lo.orig_w = x.value().dim(3);
  lo.win_rows = (lo.orig_h + window - 1) / window;
  lo.win_cols = (lo.orig_w + window - 1) / window;
  lo.padded_h = lo.win_rows * window;
  lo.padded_w = lo.win_cols * window;
  lo.pad_bottom = lo.padded_h - lo.orig_h;
  lo.pad_right = lo.padded_w - lo.orig_w;

  int64_t k = window, t = lo.tokens_per_window();
  Tensor out({lo.batch * lo.num_windows(), t, lo.channels});
  const double* px = x.value().data().data();
  double* po = out.mutable_data();
  for (int64_t n = 0; n < lo.batch; ++n) {
    for (int64_t wy = 0; wy < lo.win_rows; ++wy) {
      for (int64_t wx = 0; wx < lo.win_cols; ++wx) {
        int64_t win = (n * lo.win_rows + wy) * lo.win_cols + wx;
        for (int64_t ky = 0; ky < k; ++ky) {
          int64_t y0 = (wy * k + ky + shift) % lo.padded_h;
          for (int64_t kx = 0; kx < k; ++kx) {
            int64_t x0 = (wx * k + kx + shift) % lo.padded_w;
            double* dst = po + (win * t + ky * k + kx) * lo.channels;
            if (y0 < lo.orig_h && x0 < lo.orig_w) {
              const double* src = px + ((n * lo.channels) * lo.orig_h + y0) * lo.orig_w + x0;
              for (int64_t c = 0; c < lo.channels; ++c) {
                dst[c] = src[c * lo.orig_h * lo.orig_w];
              }
            } else {
              for (int64_t c = 0; c < lo.channels; ++c) dst[c] = 0.0;
            }
          }
        }
      }
    }
  }
  WindowPartition result;
  result.layout = lo;
  result.mask = window_attention_mask(lo);
  result.windows = make_op(std::move(out), {x.node_ptr()}, [lo](Node& node) {
    int64_t k = lo.window, t = lo.tokens_per_window();
    Tensor gx = Tensor::zeros(node.inputs[0]->value.shape());
    double* pgx = gx.mutable_data();
    const double* pg = node.grad.data().data();
    for (int64_t n = 0; n < lo.batch; ++n) {
      for (int64_t wy = 0; wy < lo.win_rows; ++wy) {
        for (int64_t wx = 0; wx < lo.win_cols; ++wx) {
          int64_t win = (n * lo.win_rows + wy) * lo.win_cols + wx;
          for (int64_t ky = 0; ky < k; ++ky) {
            int64_t y0 = (wy * k + ky + lo.shift) % lo.padded_h;
            if (y0 >= lo.orig_h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              int64_t x0 = (wx * k + kx + lo.shift) % lo.padded_w;
              if (x0 >= lo.orig_w) continue;
              const double* src = pg + (win * t + ky * k + kx) * lo.channels;
              double* dst = pgx + ((n * lo.channels) * lo.orig_h + y0) * lo.orig_w + x0;
              for (int64_t c = 0; c < lo.channels; ++c) {
                dst[c * lo.orig_h * lo.orig_w] += src[c];
              }
            }
          }
        }
      }
    }
    node.inputs[0]->accumulate(std::move(gx));
  });
  return result;
}

Var window_reverse(const Var& windows, const WindowLayout& lo) {
  if (!windows.defined() || windows.value().rank() != 3) {
    throw std::invalid_argument("window_reverse expects (windows, tokens, channels)");
  }
  Shape expect = {lo.batch * lo.num_windows(), lo.tokens_per_window(), lo.channels};
  if (windows.shape() != expect) {
    throw std::invalid_argument("window_reverse: windows shape " + shape_str(windows.shape()) +
                                " inconsistent with layout (expected " + shape_str(expect) + ")");
  }
  int64_t k = lo.window, t = lo.tokens_per_window();
  Tensor out({lo.batch, lo.channels, lo.orig_h, lo.orig_w}, Layout::NCHW);
  const double* pw = windows.value().data().data();
  double* po = out.mutable_data();
  for (int64_t n = 0; n < lo.batch; ++n) {
    for (int64_t y = 0; y < lo.orig_h; ++y) {
      int64_t yq = (y - lo.shift + lo.padded_h) % lo.padded_h;
      int64_t wy = yq / k, ky = yq % k;
      for (int64_t x = 0; x < lo.orig_w; ++x) {
        int64_t xq = (x - lo.shift + lo.padded_w) % lo.padded_w;
        int64_t wx = xq / k, kx = xq % k;
        int64_t win = (n * lo.win_rows + wy) * lo.win_cols + wx;
        const double* src = pw + (win * t + ky * k + kx) * lo.channels;
        double* dst = po + ((n * lo.channels) * lo.orig_h + y) * lo.orig_w + x;
        for (int64_t c = 0; c < lo.channels; ++c) {
          dst[c * lo.orig_h * lo.orig_w] = src[c];
        }
      }
    }
  }
  return make_op(std::move(out), {windows.node_ptr()}, [lo](Node& node) {
    int64_t k = lo.window, t = lo.tokens_per_window();
    Tensor gw = Tensor::zeros(node.inputs[0]->value.shape());
    double* pgw = gw.mutable_data();
    const double* pg = node.grad.data().data();
    for (int64_t n = 0; n < lo.batch; ++n) {
      for (int64_t y = 0; y < lo.orig_h; ++y) {
        int64_t yq = (y - lo.shift + lo.padded_h) % lo.padded_h;
        int64_t wy = yq / k, ky = yq % k;
        for (int64_t x = 0; x < lo.orig_w; ++x) {
          int64_t xq = (x - lo.shift + lo.padded_w) % lo.padded_w;
          int64_t wx = xq / k, kx = xq % k;
          int64_t win = (n * lo.win_rows + wy) * lo.win_cols + wx;
          double* dst = pgw + (win * t + ky * k + kx) * lo.channels;
          const double* src = pg + ((n * lo.channels) * lo.orig_h + y) * lo.orig_w + x;
          for (int64_t c = 0; c < lo.channels; ++c) {
            dst[c] += src[c * lo.orig_h * lo.orig_w];
          }
        }
      }
    }
    node.inputs[0]->accumulate(std::move(gw));
  });
}

Tensor window_attention_mask(const WindowLayout& lo) {
  int64_t k = lo.window, t = lo.tokens_per_window();
  int64_t hp = lo.padded_h, wp = lo.padded_w;
  // Padding flags live in source coordinates and are shifted exactly like
  // the data; region ids are defined directly in the shifted frame.
  std::vector<char> pad(static_cast<size_t>(hp * wp), 0);
  std::vector<int> region(static_cast<size_t>(hp * wp), 0);
  for (int64_t y = 0; y < hp; ++y) {
    for (int64_t x = 0; x < wp; ++x) {
      int64_t sy = (y + lo.shift) % hp;
      int64_t sx = (x + lo.shift) % wp;
      pad[static_cast<size_t>(y * wp + x)] = (sy >= lo.orig_h || sx >= lo.orig_w) ? 1 : 0;
      if (lo.shift > 0) {
        auto band = [&](int64_t v, int64_t extent) {
          if (v < extent - k) return 0;
          if (v < extent - lo.shift) return 1;
          return 2;
        };
        region[static_cast<size_t>(y * wp + x)] = 3 * band(y, hp) + band(x, wp);
      }
    }
  }
  Tensor mask({lo.num_windows(), t, t});
  double* pm = mask.mutable_data();
  for (int64_t wy = 0; wy < lo.win_rows; ++wy) {
    for (int64_t wx = 0; wx < lo.win_cols; ++wx) {
      int64_t win = wy * lo.win_cols + wx;
      for (int64_t i = 0; i < t; ++i) {
        int64_t yi = wy * k + i / k, xi = wx * k + i % k;
        size_t pi = static_cast<size_t>(yi * wp + xi);
        for (int64_t j = 0; j < t; ++j) {
          int64_t yj = wy * k + j / k, xj = wx * k + j % k;
          size_t pj = static_cast<size_t>(yj * wp + xj);
          bool blocked = pad[pi] || pad[pj] || region[pi] != region[pj];
          pm[(win * t + i) * t + j] = blocked ? kWindowMaskBlocked : 0.0;
        }
      }
    }
  }
  return mask;
}

}  // namespace mixformer
