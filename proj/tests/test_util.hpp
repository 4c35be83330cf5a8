#pragma once

#include <cmath>
#include <vector>

#include "mixformer/attention.hpp"
#include "mixformer/ops.hpp"
#include "mixformer/tensor.hpp"

// Independent reference implementations. Everything here is deliberately
// written as plain loops with no shared code paths into the library.
namespace oracle {

using mixformer::Tensor;

// (M,K) x (K,P), triple loop
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  int64_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor out({m, p});
  double* po = out.mutable_data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (int64_t kk = 0; kk < k; ++kk) s += pa[i * k + kk] * pb[kk * p + j];
      po[i * p + j] = s;
    }
  }
  return out;
}

// direct 6-loop cross-correlation
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  int64_t cout = w.dim(0), k = w.dim(2);
  int64_t ho = (h + 2 * pad - k) / stride + 1;
  int64_t wo = (wid + 2 * pad - k) / stride + 1;
  Tensor out({n, cout, ho, wo});
  double* po = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t co = 0; co < cout; ++co) {
      for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
          double s = b.defined() ? b.data()[co] : 0.0;
          for (int64_t ci = 0; ci < cin; ++ci) {
            for (int64_t ky = 0; ky < k; ++ky) {
              for (int64_t kx = 0; kx < k; ++kx) {
                int64_t iy = oy * stride + ky - pad;
                int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                s += w.at({co, ci, ky, kx}) * x.at({i, ci, iy, ix});
              }
            }
          }
          po[((i * cout + co) * ho + oy) * wo + ox] = s;
        }
      }
    }
  }
  return out;
}

// per-channel mean by explicit loops -> (N, C)
inline Tensor loop_mean_hw(const Tensor& x) {
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c});
  double* po = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t cc = 0; cc < c; ++cc) {
      double s = 0.0;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x0 = 0; x0 < w; ++x0) s += x.at({i, cc, y, x0});
      }
      po[i * c + cc] = s / static_cast<double>(h * w);
    }
  }
  return out;
}

// Dense window attention by explicit loops over queries, keys and heads,
// mirroring the WindowAttention parameterisation. windows: (B', T, D).
// mask: (nWin, T, T) or undefined; table: ((2K-1)^2, h) or undefined;
// gate: (N, D) or undefined. Returns (B', T, D).
inline Tensor dense_attention(const Tensor& windows, const mixformer::WmsaConfig& cfg,
                              const Tensor& qkv_w, const Tensor& qkv_b, const Tensor& proj_w,
                              const Tensor& proj_b, const Tensor& table, const Tensor& mask,
                              const Tensor& gate) {
  int64_t bw = windows.dim(0), t = windows.dim(1), d = windows.dim(2);
  int64_t heads = cfg.num_heads, hd = d / heads;
  int64_t k = cfg.window;
  double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out({bw, t, d});
  double* po = out.mutable_data();
  int64_t nwin = mask.defined() ? mask.dim(0) : 1;
  int64_t gate_n = gate.defined() ? gate.dim(0) : 1;
  for (int64_t b = 0; b < bw; ++b) {
    // projections for this window
    std::vector<double> q(static_cast<size_t>(t * d)), kk(q.size()), v(q.size());
    for (int64_t i = 0; i < t; ++i) {
      for (int64_t j = 0; j < 3 * d; ++j) {
        double s = qkv_b.defined() ? qkv_b.data()[j] : 0.0;
        for (int64_t e = 0; e < d; ++e) s += windows.at({b, i, e}) * qkv_w.at({e, j});
        if (j < d) {
          q[static_cast<size_t>(i * d + j)] = s;
        } else if (j < 2 * d) {
          kk[static_cast<size_t>(i * d + j - d)] = s;
        } else {
          v[static_cast<size_t>(i * d + j - 2 * d)] = s;
        }
      }
    }
    if (gate.defined()) {
      int64_t img = b / (bw / gate_n);
      for (int64_t i = 0; i < t; ++i) {
        for (int64_t e = 0; e < d; ++e) {
          v[static_cast<size_t>(i * d + e)] *= gate.at({img, e});
        }
      }
    }
    std::vector<double> ctx(static_cast<size_t>(t * d), 0.0);
    for (int64_t h = 0; h < heads; ++h) {
      for (int64_t i = 0; i < t; ++i) {
        std::vector<double> logits(static_cast<size_t>(t));
        for (int64_t j = 0; j < t; ++j) {
          double s = 0.0;
          for (int64_t e = 0; e < hd; ++e) {
            s += q[static_cast<size_t>(i * d + h * hd + e)] *
                 kk[static_cast<size_t>(j * d + h * hd + e)];
          }
          s *= scl;
          if (table.defined()) {
            int64_t dy = i / k - j / k + (k - 1);
            int64_t dx = i % k - j % k + (k - 1);
            s += table.at({dy * (2 * k - 1) + dx, h});
          }
          if (mask.defined()) s += mask.at({b % nwin, i, j});
          logits[static_cast<size_t>(j)] = s;
        }
        double mx = logits[0];
        for (double lv : logits) mx = std::max(mx, lv);
        double denom = 0.0;
        for (double& lv : logits) {
          lv = std::exp(lv - mx);
          denom += lv;
        }
        for (int64_t j = 0; j < t; ++j) {
          double wgt = logits[static_cast<size_t>(j)] / denom;
          for (int64_t e = 0; e < hd; ++e) {
            ctx[static_cast<size_t>(i * d + h * hd + e)] +=
                wgt * v[static_cast<size_t>(j * d + h * hd + e)];
          }
        }
      }
    }
    for (int64_t i = 0; i < t; ++i) {
      for (int64_t j = 0; j < d; ++j) {
        double s = proj_b.defined() ? proj_b.data()[j] : 0.0;
        for (int64_t e = 0; e < d; ++e) s += ctx[static_cast<size_t>(i * d + e)] * proj_w.at({e, j});
        po[(b * t + i) * d + j] = s;
      }
    }
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  auto pa = a.data();
  auto pb = b.data();
  for (size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(pa[i] - pb[i]));
  return worst;
}

}  // namespace oracle
