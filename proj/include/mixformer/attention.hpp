#pragma once

#include "mixformer/ops.hpp"
#include "mixformer/windowing.hpp"

namespace mixformer {

struct WmsaConfig {
  int dim = 0;        // channels entering attention (D_a)
  int num_heads = 1;
  int window = 7;
  bool qkv_bias = true;
  bool relative_position_bias = true;

  int head_dim() const { return dim / num_heads; }
  double attn_scale() const { return 1.0 / std::sqrt(static_cast<double>(head_dim())); }
  void validate() const;
};

// Expands a ((2K-1)^2, h) learned table into per-pair biases (h, K^2, K^2);
// row selection follows the (dy+K-1, dx+K-1) offset convention.
Var relative_position_bias(const Var& table, int window);

// Multi-head self-attention over partitioned windows. The value tensor can
// be modulated per image and channel by v_gate before attention (identity
// when v_gate is undefined).
struct WindowAttention {
  WmsaConfig cfg;
  Linear qkv;   // dim -> 3*dim, fused
  Linear proj;  // dim -> dim
  Parameter bias_table;  // ((2K-1)^2, h), zero init; defined iff enabled

  WindowAttention() = default;
  WindowAttention(const std::string& path, WmsaConfig cfg, Rng& rng, double init_std = 0.02);

  // windows: (N*nWin, K*K, dim); mask: (nWin, K*K, K*K) or undefined;
  // v_gate: (N, dim) or undefined.
  Var forward(const Var& windows, const Tensor& mask, const Var& v_gate) const;
  void collect(ParamRefs& refs);
  int64_t param_count() const;
};

// Free-function form of the forward contract.
Var wmsa_forward(const WindowAttention& attn, const Var& windows, const Tensor& mask,
                 const Var& v_gate);

}  // namespace mixformer
