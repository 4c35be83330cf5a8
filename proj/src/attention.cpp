#include "mixformer/attention.hpp"

#include <stdexcept>

namespace mixformer {

void WmsaConfig::validate() const {
  if (dim < 1 || num_heads < 1 || window < 1) {
    throw std::invalid_argument("attention config requires positive dim/heads/window");
  }
  if (dim % num_heads != 0) {
    throw std::invalid_argument("attention dim " + std::to_string(dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
  }
}

Var relative_position_bias(const Var& table, int window) {
  int64_t k = window;
  int64_t span = 2 * k - 1;
  if (!table.defined() || table.value().rank() != 2 || table.value().dim(0) != span * span) {
    throw std::invalid_argument(
        "relative position bias table must have (2K-1)^2 rows, got shape " +
        (table.defined() ? shape_str(table.shape()) : std::string("undefined")));
  }
  int64_t heads = table.value().dim(1);
  int64_t t = k * k;
  std::vector<int64_t> index(static_cast<size_t>(t * t));
  for (int64_t i = 0; i < t; ++i) {
    int64_t yi = i / k, xi = i % k;
    for (int64_t j = 0; j < t; ++j) {
      int64_t dy = yi - j / k + (k - 1);
      int64_t dx = xi - j % k + (k - 1);
      index[static_cast<size_t>(i * t + j)] = dy * span + dx;
    }
  }
  Tensor out({heads, t, t});
  const double* pt = table.value().data().data();
  double* po = out.mutable_data();
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t ij = 0; ij < t * t; ++ij) {
      po[h * t * t + ij] = pt[index[static_cast<size_t>(ij)] * heads + h];
    }
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  node->inputs = {table.node_ptr()};
  node->requires_grad = table.requires_grad();
  if (node->requires_grad) {
    node->backward = [index, heads, t](Node& n) {
      Tensor gt = Tensor::zeros(n.inputs[0]->value.shape());
      double* pgt = gt.mutable_data();
      const double* pg = n.grad.data().data();
      for (int64_t h = 0; h < heads; ++h) {
        for (int64_t ij = 0; ij < t * t; ++ij) {
          pgt[index[static_cast<size_t>(ij)] * heads + h] += pg[h * t * t + ij];
        }
      }
      n.inputs[0]->accumulate(std::move(gt));
    };
  }
  return Var::from_node(std::move(node));
}

WindowAttention::WindowAttention(const std::string& path, WmsaConfig cfg_in, Rng& rng,
                                 double init_std)
    : cfg(cfg_in) {
  cfg.validate();
  qkv = Linear(path + ".qkv", cfg.dim, 3 * cfg.dim, cfg.qkv_bias, rng, init_std);
  proj = Linear(path + ".proj", cfg.dim, cfg.dim, true, rng, init_std);
  if (cfg.relative_position_bias) {
    int64_t span = 2 * cfg.window - 1;
    bias_table = Parameter(path + ".rel_bias_table", Tensor::zeros({span * span, cfg.num_heads}));
  }
}

Var WindowAttention::forward(const Var& windows, const Tensor& mask, const Var& v_gate) const {
  if (!windows.defined() || windows.value().rank() != 3) {
    throw std::invalid_argument("wmsa expects (windows, tokens, channels) input");
  }
  int64_t bw = windows.value().dim(0);
  int64_t t = windows.value().dim(1);
  int64_t d = windows.value().dim(2);
  if (d != cfg.dim) {
    throw std::invalid_argument("wmsa channel mismatch: got " + std::to_string(d) + ", expected " +
                                std::to_string(cfg.dim));
  }
  if (t != static_cast<int64_t>(cfg.window) * cfg.window) {
    throw std::invalid_argument("wmsa token count " + std::to_string(t) +
                                " does not match window size " + std::to_string(cfg.window));
  }
  int64_t h = cfg.num_heads, hd = cfg.head_dim();

  Var qkv_out = qkv.forward(windows);  // (B', T, 3D)
  Var q = narrow(qkv_out, 2, 0, d);
  Var k = narrow(qkv_out, 2, d, d);
  Var v = narrow(qkv_out, 2, 2 * d, d);

  if (v_gate.defined()) {
    if (v_gate.value().rank() != 2 || v_gate.value().dim(1) != d) {
      throw std::invalid_argument("v_gate must be (batch, " + std::to_string(d) + "), got " +
                                  shape_str(v_gate.shape()));
    }
    int64_t n = v_gate.value().dim(0);
    if (bw % n != 0) {
      throw std::invalid_argument("windows (" + std::to_string(bw) +
                                  ") not divisible by gate batch (" + std::to_string(n) + ")");
    }
    Var gate4 = reshape(v_gate, {n, 1, 1, d});
    v = reshape(mul(reshape(v, {n, bw / n, t, d}), gate4), {bw, t, d});
  }

  auto to_heads = [&](const Var& in) {
    return permute(reshape(in, {bw, t, h, hd}), {0, 2, 1, 3});  // (B', h, T, hd)
  };
  Var qh = scale(to_heads(q), cfg.attn_scale());
  Var kh = to_heads(k);
  Var vh = to_heads(v);

  Var attn = matmul(qh, permute(kh, {0, 1, 3, 2}));  // (B', h, T, T)
  if (cfg.relative_position_bias) {
    Var bias = relative_position_bias(bias_table.var, cfg.window);
    attn = add(attn, reshape(bias, {1, h, t, t}));
  }
  if (mask.defined()) {
    int64_t nwin = mask.dim(0);
    if (mask.rank() != 3 || mask.dim(1) != t || mask.dim(2) != t || bw % nwin != 0) {
      throw std::invalid_argument("attention mask shape " + shape_str(mask.shape()) +
                                  " inconsistent with " + std::to_string(bw) + " windows of " +
                                  std::to_string(t) + " tokens");
    }
    int64_t n = bw / nwin;
    Var mask_var = Var(mask.reshaped({1, nwin, 1, t, t}));
    attn = reshape(add(reshape(attn, {n, nwin, h, t, t}), mask_var), {bw, h, t, t});
  }
  attn = softmax(attn, -1);

  Var out = matmul(attn, vh);                            // (B', h, T, hd)
  out = reshape(permute(out, {0, 2, 1, 3}), {bw, t, d});  // concat heads
  return proj.forward(out);
}

void WindowAttention::collect(ParamRefs& refs) {
  qkv.collect(refs);
  proj.collect(refs);
  if (cfg.relative_position_bias) refs.params.push_back(&bias_table);
}

int64_t WindowAttention::param_count() const {
  int64_t n = qkv.param_count() + proj.param_count();
  if (cfg.relative_position_bias) n += bias_table.numel();
  return n;
}

Var wmsa_forward(const WindowAttention& attn, const Var& windows, const Tensor& mask,
                 const Var& v_gate) {
  return attn.forward(windows, mask, v_gate);
}

}  // namespace mixformer
