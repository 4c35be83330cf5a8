#include "mixformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mixformer {

void Conv2dSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) {
    throw std::invalid_argument("conv spec requires positive channel counts");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("conv kernel must be odd and >= 1, got " +
                                std::to_string(kernel));
  }
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv stride/padding out of range");
  }
  if (depthwise && in_channels != out_channels) {
    throw std::invalid_argument("depthwise conv requires in_channels == out_channels");
  }
}

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

void check_rank(const Var& v, int rank, const char* what) {
  if (v.value().rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(v.shape()));
  }
}

void im2col(const double* x, int64_t c_in, int64_t h, int64_t w, int64_t k, int64_t stride,
            int64_t pad, int64_t ho, int64_t wo, double* cols) {
  for (int64_t c = 0; c < c_in; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        double* row = cols + (((c * k) + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride + ky - pad;
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride + kx - pad;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(c * h + iy) * w + ix]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int64_t c_in, int64_t h, int64_t w, int64_t k, int64_t stride,
                int64_t pad, int64_t ho, int64_t wo, double* dx) {
  for (int64_t c = 0; c < c_in; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        const double* row = cols + (((c * k) + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            dx[(c * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var linear(const Var& x, const Var& weight, const Var& bias) {
  check_rank(weight, 2, "linear weight");
  const Shape& xs = x.shape();
  if (xs.empty() || xs.back() != weight.value().dim(0)) {
    throw std::invalid_argument("linear: input " + shape_str(xs) + " incompatible with weight " +
                                shape_str(weight.shape()));
  }
  bool vector_input = xs.size() == 1;
  Var x2 = vector_input ? reshape(x, {1, xs[0]}) : x;
  Var out = matmul(x2, weight);
  if (bias.defined()) {
    if (bias.value().rank() != 1 || bias.value().dim(0) != weight.value().dim(1)) {
      throw std::invalid_argument("linear: bias " + shape_str(bias.shape()) +
                                  " incompatible with weight " + shape_str(weight.shape()));
    }
    out = add(out, bias);
  }
  if (vector_input) out = reshape(out, {weight.value().dim(1)});
  return out;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  check_rank(x, 4, "conv2d input");
  check_rank(weight, 4, "conv2d weight");
  int64_t n = x.value().dim(0), c_in = x.value().dim(1), h = x.value().dim(2),
          w = x.value().dim(3);
  int64_t c_out = weight.value().dim(0), k = weight.value().dim(2);
  if (weight.value().dim(1) != c_in || weight.value().dim(3) != k) {
    throw std::invalid_argument("conv2d: weight " + shape_str(weight.shape()) +
                                " incompatible with input " + shape_str(x.shape()));
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + std::to_string(k) +
                                " larger than padded input " + shape_str(x.shape()));
  }
  int64_t ho = (h + 2 * padding - k) / stride + 1;
  int64_t wo = (w + 2 * padding - k) / stride + 1;
  Tensor out({n, c_out, ho, wo}, Layout::NCHW);
  std::vector<double> cols(static_cast<size_t>(c_in * k * k * ho * wo));
  const double* px = x.value().data().data();
  const double* pw = weight.value().data().data();
  double* po = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    im2col(px + i * c_in * h * w, c_in, h, w, k, stride, padding, ho, wo, cols.data());
    detail::gemm(pw, cols.data(), po + i * c_out * ho * wo, c_out, c_in * k * k, ho * wo, false,
                 false, false);
  }
  if (bias.defined()) {
    if (bias.value().rank() != 1 || bias.value().dim(0) != c_out) {
      throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                  " must be (" + std::to_string(c_out) + ")");
    }
    const double* pb = bias.value().data().data();
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t c = 0; c < c_out; ++c) {
        double* plane = po + (i * c_out + c) * ho * wo;
        for (int64_t s = 0; s < ho * wo; ++s) plane[s] += pb[c];
      }
    }
  }
  std::vector<NodePtr> inputs = {x.node_ptr(), weight.node_ptr()};
  if (bias.defined()) inputs.push_back(bias.node_ptr());
  auto geom = std::make_tuple(n, c_in, h, w, c_out, k, static_cast<int64_t>(stride),
                              static_cast<int64_t>(padding), ho, wo);
  return make_op(std::move(out), std::move(inputs), [geom](Node& node) {
    auto [n, c_in, h, w, c_out, k, stride, padding, ho, wo] = geom;
    const Tensor& xv = node.inputs[0]->value;
    const Tensor& wv = node.inputs[1]->value;
    Tensor gx = Tensor::zeros(xv.shape());
    Tensor gw = Tensor::zeros(wv.shape());
    const double* pg = node.grad.data().data();
    const double* px = xv.data().data();
    const double* pw = wv.data().data();
    double* pgx = gx.mutable_data();
    double* pgw = gw.mutable_data();
    std::vector<double> cols(static_cast<size_t>(c_in * k * k * ho * wo));
    std::vector<double> dcols(cols.size());
    for (int64_t i = 0; i < n; ++i) {
      const double* gi = pg + i * c_out * ho * wo;
      im2col(px + i * c_in * h * w, c_in, h, w, k, stride, padding, ho, wo, cols.data());
      // dW += G . cols^T ; dcols = W^T . G
      detail::gemm(gi, cols.data(), pgw, c_out, ho * wo, c_in * k * k, false, true, true);
      detail::gemm(pw, gi, dcols.data(), c_in * k * k, c_out, ho * wo, true, false, false);
      col2im_add(dcols.data(), c_in, h, w, k, stride, padding, ho, wo, pgx + i * c_in * h * w);
    }
    node.inputs[0]->accumulate(std::move(gx));
    node.inputs[1]->accumulate(std::move(gw));
    if (node.inputs.size() > 2) {
      Tensor gb = Tensor::zeros({c_out});
      double* pgb = gb.mutable_data();
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < c_out; ++c) {
          const double* plane = pg + (i * c_out + c) * ho * wo;
          double s = 0.0;
          for (int64_t sidx = 0; sidx < ho * wo; ++sidx) s += plane[sidx];
          pgb[c] += s;
        }
      }
      node.inputs[2]->accumulate(std::move(gb));
    }
  });
}

Var dwconv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  check_rank(x, 4, "dwconv2d input");
  check_rank(weight, 4, "dwconv2d weight");
  int64_t n = x.value().dim(0), c = x.value().dim(1), h = x.value().dim(2), w = x.value().dim(3);
  int64_t k = weight.value().dim(2);
  if (weight.value().dim(0) != c || weight.value().dim(1) != 1 || weight.value().dim(3) != k) {
    throw std::invalid_argument("dwconv2d: weight " + shape_str(weight.shape()) +
                                " must be (" + std::to_string(c) + ",1,K,K)");
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("dwconv2d: bad stride/padding");
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw std::invalid_argument("dwconv2d: kernel " + std::to_string(k) +
                                " larger than padded input " + shape_str(x.shape()));
  }
  int64_t ho = (h + 2 * padding - k) / stride + 1;
  int64_t wo = (w + 2 * padding - k) / stride + 1;
  if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != c)) {
    throw std::invalid_argument("dwconv2d: bias shape " + shape_str(bias.shape()) + " must be (" +
                                std::to_string(c) + ")");
  }
  Tensor out({n, c, ho, wo}, Layout::NCHW);
  const double* px = x.value().data().data();
  const double* pw = weight.value().data().data();
  const double* pb = bias.defined() ? bias.value().data().data() : nullptr;
  double* po = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t cc = 0; cc < c; ++cc) {
      const double* xp = px + (i * c + cc) * h * w;
      const double* wp = pw + cc * k * k;
      double* op = po + (i * c + cc) * ho * wo;
      double b0 = pb ? pb[cc] : 0.0;
      for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
          double s = b0;
          for (int64_t ky = 0; ky < k; ++ky) {
            int64_t iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              int64_t ix = ox * stride + kx - padding;
              if (ix < 0 || ix >= w) continue;
              s += wp[ky * k + kx] * xp[iy * w + ix];
            }
          }
          op[oy * wo + ox] = s;
        }
      }
    }
  }
  std::vector<NodePtr> inputs = {x.node_ptr(), weight.node_ptr()};
  if (bias.defined()) inputs.push_back(bias.node_ptr());
  auto geom = std::make_tuple(n, c, h, w, k, static_cast<int64_t>(stride),
                              static_cast<int64_t>(padding), ho, wo);
  return make_op(std::move(out), std::move(inputs), [geom](Node& node) {
    auto [n, c, h, w, k, stride, padding, ho, wo] = geom;
    const Tensor& xv = node.inputs[0]->value;
    const Tensor& wv = node.inputs[1]->value;
    Tensor gx = Tensor::zeros(xv.shape());
    Tensor gw = Tensor::zeros(wv.shape());
    Tensor gb = node.inputs.size() > 2 ? Tensor::zeros({c}) : Tensor();
    const double* pg = node.grad.data().data();
    const double* px = xv.data().data();
    const double* pw = wv.data().data();
    double* pgx = gx.mutable_data();
    double* pgw = gw.mutable_data();
    double* pgb = gb.defined() ? gb.mutable_data() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t cc = 0; cc < c; ++cc) {
        const double* xp = px + (i * c + cc) * h * w;
        const double* wp = pw + cc * k * k;
        const double* gp = pg + (i * c + cc) * ho * wo;
        double* gxp = pgx + (i * c + cc) * h * w;
        double* gwp = pgw + cc * k * k;
        for (int64_t oy = 0; oy < ho; ++oy) {
          for (int64_t ox = 0; ox < wo; ++ox) {
            double g = gp[oy * wo + ox];
            if (pgb) pgb[cc] += g;
            for (int64_t ky = 0; ky < k; ++ky) {
              int64_t iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < k; ++kx) {
                int64_t ix = ox * stride + kx - padding;
                if (ix < 0 || ix >= w) continue;
                gwp[ky * k + kx] += g * xp[iy * w + ix];
                gxp[iy * w + ix] += g * wp[ky * k + kx];
              }
            }
          }
        }
      }
    }
    node.inputs[0]->accumulate(std::move(gx));
    node.inputs[1]->accumulate(std::move(gw));
    if (pgb) node.inputs[2]->accumulate(std::move(gb));
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, bool update_stats, double momentum,
               double eps) {
  check_rank(x, 4, "batch_norm input");
  int64_t n = x.value().dim(0), c = x.value().dim(1), h = x.value().dim(2), w = x.value().dim(3);
  if (gamma.value().numel() != c || beta.value().numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw std::invalid_argument("batch_norm: affine/stat shapes must be (" + std::to_string(c) +
                                ")");
  }
  int64_t count = n * h * w;
  Tensor mean({c}), invstd({c});
  double* pm = mean.mutable_data();
  double* pi = invstd.mutable_data();
  const double* px = x.value().data().data();
  if (training) {
    for (int64_t cc = 0; cc < c; ++cc) {
      double s = 0.0, s2 = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double* plane = px + (i * c + cc) * h * w;
        for (int64_t sidx = 0; sidx < h * w; ++sidx) {
          s += plane[sidx];
          s2 += plane[sidx] * plane[sidx];
        }
      }
      double mu = s / static_cast<double>(count);
      double var = s2 / static_cast<double>(count) - mu * mu;
      if (var < 0.0) var = 0.0;  // numerical floor
      pm[cc] = mu;
      pi[cc] = 1.0 / std::sqrt(var + eps);
      if (update_stats) {
        running_mean.mutable_data()[cc] = (1.0 - momentum) * running_mean.data()[cc] + momentum * mu;
        running_var.mutable_data()[cc] = (1.0 - momentum) * running_var.data()[cc] + momentum * var;
      }
    }
  } else {
    for (int64_t cc = 0; cc < c; ++cc) {
      pm[cc] = running_mean.data()[cc];
      pi[cc] = 1.0 / std::sqrt(running_var.data()[cc] + eps);
    }
  }
  Tensor out(x.shape(), Layout::NCHW);
  double* po = out.mutable_data();
  const double* pgm = gamma.value().data().data();
  const double* pbt = beta.value().data().data();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t cc = 0; cc < c; ++cc) {
      const double* plane = px + (i * c + cc) * h * w;
      double* oplane = po + (i * c + cc) * h * w;
      double mu = pm[cc], is = pi[cc], gm = pgm[cc], bt = pbt[cc];
      for (int64_t sidx = 0; sidx < h * w; ++sidx) {
        oplane[sidx] = gm * (plane[sidx] - mu) * is + bt;
      }
    }
  }
  auto geom = std::make_tuple(n, c, h, w, training);
  return make_op(std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
                 [geom, mean, invstd](Node& node) {
                   auto [n, c, h, w, training] = geom;
                   int64_t count = n * h * w;
                   const Tensor& xv = node.inputs[0]->value;
                   const double* px = xv.data().data();
                   const double* pg = node.grad.data().data();
                   const double* pm = mean.data().data();
                   const double* pi = invstd.data().data();
                   const double* pgm = node.inputs[1]->value.data().data();
                   Tensor gx = Tensor::zeros(xv.shape());
                   Tensor ggamma = Tensor::zeros({c});
                   Tensor gbeta = Tensor::zeros({c});
                   double* pgx = gx.mutable_data();
                   double* pgg = ggamma.mutable_data();
                   double* pgb = gbeta.mutable_data();
                   for (int64_t cc = 0; cc < c; ++cc) {
                     double sum_g = 0.0, sum_gx = 0.0;
                     for (int64_t i = 0; i < n; ++i) {
                       const double* plane = px + (i * c + cc) * h * w;
                       const double* gplane = pg + (i * c + cc) * h * w;
                       for (int64_t sidx = 0; sidx < h * w; ++sidx) {
                         double xhat = (plane[sidx] - pm[cc]) * pi[cc];
                         sum_g += gplane[sidx];
                         sum_gx += gplane[sidx] * xhat;
                       }
                     }
                     pgg[cc] = sum_gx;
                     pgb[cc] = sum_g;
                     double gm_is = pgm[cc] * pi[cc];
                     double mg = sum_g / static_cast<double>(count);
                     double mgx = sum_gx / static_cast<double>(count);
                     for (int64_t i = 0; i < n; ++i) {
                       const double* plane = px + (i * c + cc) * h * w;
                       const double* gplane = pg + (i * c + cc) * h * w;
                       double* gxplane = pgx + (i * c + cc) * h * w;
                       for (int64_t sidx = 0; sidx < h * w; ++sidx) {
                         if (training) {
                           double xhat = (plane[sidx] - pm[cc]) * pi[cc];
                           gxplane[sidx] = gm_is * (gplane[sidx] - mg - xhat * mgx);
                         } else {
                           gxplane[sidx] = gm_is * gplane[sidx];
                         }
                       }
                     }
                   }
                   node.inputs[0]->accumulate(std::move(gx));
                   node.inputs[1]->accumulate(std::move(ggamma));
                   node.inputs[2]->accumulate(std::move(gbeta));
                 });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw std::invalid_argument("layer_norm: scalar input");
  int64_t d = xs.back();
  if (d < 1) throw std::invalid_argument("layer_norm: empty normalized dimension");
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw std::invalid_argument("layer_norm: affine shapes must be (" + std::to_string(d) + ")");
  }
  int64_t rows = x.value().numel() / d;
  Tensor mean({rows}), invstd({rows});
  double* pm = mean.mutable_data();
  double* pi = invstd.mutable_data();
  const double* px = x.value().data().data();
  const double* pgm = gamma.value().data().data();
  const double* pbt = beta.value().data().data();
  Tensor out(xs, x.value().layout());
  double* po = out.mutable_data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double s = 0.0, s2 = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      s += row[j];
      s2 += row[j] * row[j];
    }
    double mu = s / static_cast<double>(d);
    double var = s2 / static_cast<double>(d) - mu * mu;
    if (var < 0.0) var = 0.0;
    pm[r] = mu;
    pi[r] = 1.0 / std::sqrt(var + eps);
    double* orow = po + r * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = pgm[j] * (row[j] - mu) * pi[r] + pbt[j];
  }
  return make_op(std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
                 [rows, d, mean, invstd](Node& node) {
                   const Tensor& xv = node.inputs[0]->value;
                   const double* px = xv.data().data();
                   const double* pg = node.grad.data().data();
                   const double* pm = mean.data().data();
                   const double* pi = invstd.data().data();
                   const double* pgm = node.inputs[1]->value.data().data();
                   Tensor gx = Tensor::zeros(xv.shape());
                   Tensor ggamma = Tensor::zeros({d});
                   Tensor gbeta = Tensor::zeros({d});
                   double* pgx = gx.mutable_data();
                   double* pgg = ggamma.mutable_data();
                   double* pgb = gbeta.mutable_data();
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* row = px + r * d;
                     const double* grow = pg + r * d;
                     double* gxrow = pgx + r * d;
                     double s1 = 0.0, s2 = 0.0;
                     for (int64_t j = 0; j < d; ++j) {
                       double xhat = (row[j] - pm[r]) * pi[r];
                       double hj = grow[j] * pgm[j];
                       s1 += hj;
                       s2 += hj * xhat;
                       pgg[j] += grow[j] * xhat;
                       pgb[j] += grow[j];
                     }
                     double n_inv = 1.0 / static_cast<double>(d);
                     for (int64_t j = 0; j < d; ++j) {
                       double xhat = (row[j] - pm[r]) * pi[r];
                       double hj = grow[j] * pgm[j];
                       gxrow[j] = pi[r] * (hj - s1 * n_inv - xhat * s2 * n_inv);
                     }
                   }
                   node.inputs[0]->accumulate(std::move(gx));
                   node.inputs[1]->accumulate(std::move(ggamma));
                   node.inputs[2]->accumulate(std::move(gbeta));
                 });
}

Var global_avg_pool(const Var& x) {
  check_rank(x, 4, "global_avg_pool input");
  int64_t n = x.value().dim(0), c = x.value().dim(1);
  int64_t hw = x.value().dim(2) * x.value().dim(3);
  return mean_axis(reshape(x, {n, c, hw}), 2);
}

Var cross_entropy(const Var& logits, std::span<const int64_t> labels) {
  check_rank(logits, 2, "cross_entropy logits");
  int64_t n = logits.value().dim(0), k = logits.value().dim(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw std::invalid_argument("cross_entropy: expected " + std::to_string(n) + " labels, got " +
                                std::to_string(labels.size()));
  }
  for (int64_t label : labels) {
    if (label < 0 || label >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " out of range [0," + std::to_string(k) + ")");
    }
  }
  Tensor probs({n, k});
  const double* pl = logits.value().data().data();
  double* pp = probs.mutable_data();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = pl + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      double e = std::exp(row[j] - mx);
      pp[i * k + j] = e;
      sum += e;
    }
    for (int64_t j = 0; j < k; ++j) pp[i * k + j] /= sum;
    loss += std::log(sum) + mx - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<int64_t> lab(labels.begin(), labels.end());
  return make_op(Tensor::scalar(loss), {logits.node_ptr()}, [probs, lab, n, k](Node& node) {
    double g = node.grad.data()[0] / static_cast<double>(n);
    Tensor gx({n, k});
    const double* pp = probs.data().data();
    double* pgx = gx.mutable_data();
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < k; ++j) {
        pgx[i * k + j] = g * (pp[i * k + j] - (lab[i] == j ? 1.0 : 0.0));
      }
    }
    node.inputs[0]->accumulate(std::move(gx));
  });
}

Var tokens_to_nchw(const Var& x, int64_t h, int64_t w) {
  check_rank(x, 3, "tokens_to_nchw input");
  int64_t n = x.value().dim(0), l = x.value().dim(1), c = x.value().dim(2);
  if (l != h * w) {
    throw std::invalid_argument("token count " + std::to_string(l) + " does not match spatial " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  Var grid = reshape(x, {n, h, w, c});
  Var out = permute(grid, {0, 3, 1, 2});
  out.node()->value.set_layout(Layout::NCHW);
  return out;
}

Var nchw_to_tokens(const Var& x) {
  check_rank(x, 4, "nchw_to_tokens input");
  int64_t n = x.value().dim(0), c = x.value().dim(1), h = x.value().dim(2), w = x.value().dim(3);
  Var out = reshape(permute(x, {0, 2, 3, 1}), {n, h * w, c}, Layout::NLC);
  return out;
}

// ---- layer structs ----------------------------------------------------------

namespace {
Tensor init_weight(Shape shape, Rng& rng, double init_std) {
  if (init_std <= 0.0) return Tensor::zeros(std::move(shape));
  return rng.trunc_normal_tensor(std::move(shape), init_std);
}
}  // namespace

Linear::Linear(const std::string& path, int in_features, int out_features, bool bias, Rng& rng,
               double init_std)
    : has_bias(bias), in_features(in_features), out_features(out_features) {
  weight = Parameter(path + ".weight", init_weight({in_features, out_features}, rng, init_std));
  if (bias) this->bias = Parameter(path + ".bias", Tensor::zeros({out_features}));
}

Var Linear::forward(const Var& x) const {
  return linear(x, weight.var, has_bias ? bias.var : Var());
}

void Linear::collect(ParamRefs& refs) {
  refs.params.push_back(&weight);
  if (has_bias) refs.params.push_back(&bias);
}

int64_t Linear::param_count() const {
  return weight.numel() + (has_bias ? bias.numel() : 0);
}

Conv2d::Conv2d(const std::string& path, Conv2dSpec spec_in, Rng& rng, double init_std)
    : spec(spec_in) {
  spec.validate();
  weight = Parameter(path + ".weight",
                     init_weight({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                                 rng, init_std));
  bias = Parameter(path + ".bias", Tensor::zeros({spec.out_channels}));
}

Var Conv2d::forward(const Var& x) const {
  return conv2d(x, weight.var, bias.var, spec.stride, spec.padding);
}

void Conv2d::collect(ParamRefs& refs) {
  refs.params.push_back(&weight);
  refs.params.push_back(&bias);
}

int64_t Conv2d::param_count() const { return weight.numel() + bias.numel(); }

DepthwiseConv2d::DepthwiseConv2d(const std::string& path, int channels, int kernel, int stride,
                                 int padding, Rng& rng, double init_std)
    : channels(channels), kernel(kernel), stride(stride), padding(padding) {
  if (kernel % 2 == 0) throw std::invalid_argument("depthwise kernel must be odd");
  weight = Parameter(path + ".weight", init_weight({channels, 1, kernel, kernel}, rng, init_std));
  bias = Parameter(path + ".bias", Tensor::zeros({channels}));
}

Var DepthwiseConv2d::forward(const Var& x) const {
  return dwconv2d(x, weight.var, bias.var, stride, padding);
}

void DepthwiseConv2d::collect(ParamRefs& refs) {
  refs.params.push_back(&weight);
  refs.params.push_back(&bias);
}

int64_t DepthwiseConv2d::param_count() const { return weight.numel() + bias.numel(); }

BatchNorm2d::BatchNorm2d(const std::string& path_in, int channels, double momentum, double eps)
    : path(path_in), channels(channels), momentum(momentum), eps(eps) {
  gamma = Parameter(path + ".gamma", Tensor::ones({channels}));
  beta = Parameter(path + ".beta", Tensor::zeros({channels}));
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::ones({channels});
}

Var BatchNorm2d::forward(const Var& x, const ForwardCtx& ctx) {
  return batch_norm(x, gamma.var, beta.var, running_mean, running_var, ctx.training,
                    ctx.training && ctx.update_running_stats, momentum, eps);
}

void BatchNorm2d::collect(ParamRefs& refs) {
  refs.params.push_back(&gamma);
  refs.params.push_back(&beta);
  refs.buffers.emplace_back(path + ".running_mean", &running_mean);
  refs.buffers.emplace_back(path + ".running_var", &running_var);
}

LayerNorm::LayerNorm(const std::string& path, int dim, double eps) : dim(dim), eps(eps) {
  gamma = Parameter(path + ".gamma", Tensor::ones({dim}));
  beta = Parameter(path + ".beta", Tensor::zeros({dim}));
}

Var LayerNorm::forward(const Var& x) const { return layer_norm(x, gamma.var, beta.var, eps); }

void LayerNorm::collect(ParamRefs& refs) {
  refs.params.push_back(&gamma);
  refs.params.push_back(&beta);
}

}  // namespace mixformer
