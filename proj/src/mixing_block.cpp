#include "mixformer/mixing_block.hpp"

#include <stdexcept>

namespace mixformer {

MixingBlockConfig MixingBlockConfig::resolved() const {
  MixingBlockConfig c = *this;
  if (c.attn_dim == 0) {
    c.attn_dim = static_cast<int>(c.dim * c.split_ratio);
  }
  if (c.conv_dim == 0) c.conv_dim = c.dim - c.attn_dim;
  c.validate();
  return c;
}

void MixingBlockConfig::validate() const {
  if (dim < 2) throw std::invalid_argument("block dim must be >= 2");
  if (attn_dim < 1 || conv_dim < 1) {
    throw std::invalid_argument("branch dims must be positive, got attn_dim=" +
                                std::to_string(attn_dim) + " conv_dim=" + std::to_string(conv_dim));
  }
  if (attn_dim + conv_dim != dim) {
    throw std::invalid_argument("attn_dim + conv_dim = " + std::to_string(attn_dim + conv_dim) +
                                " does not equal dim = " + std::to_string(dim));
  }
  if (num_heads < 1 || attn_dim % num_heads != 0) {
    throw std::invalid_argument("attn_dim " + std::to_string(attn_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (window < 1) throw std::invalid_argument("attention window must be >= 1");
  if (dwconv_kernel < 1 || dwconv_kernel % 2 == 0) {
    throw std::invalid_argument("dwconv kernel must be odd, got " +
                                std::to_string(dwconv_kernel));
  }
  if (ffn_expansion < 1) throw std::invalid_argument("ffn expansion must be >= 1");
  if (gate_reduction < 1) throw std::invalid_argument("gate reduction must be >= 1");
  if (split_ratio <= 0.0 || split_ratio >= 1.0) {
    throw std::invalid_argument("split ratio must lie in (0,1)");
  }
}

MixingBlockConfig MixingBlockConfig::make(int dim, int num_heads) {
  MixingBlockConfig c;
  c.dim = dim;
  c.num_heads = num_heads;
  return c.resolved();
}

FeedForward::FeedForward(const std::string& path, int dim, int expansion, bool dwconv_in_ffn,
                         Rng& rng, double init_std)
    : dim(dim), hidden(dim * expansion), use_dwconv(dwconv_in_ffn) {
  fc1 = Linear(path + ".fc1", dim, hidden, true, rng, init_std);
  if (use_dwconv) {
    dwconv.emplace(path + ".dwconv", hidden, 3, 1, 1, rng, init_std);
  }
  fc2 = Linear(path + ".fc2", hidden, dim, true, rng, init_std);
}

Var FeedForward::forward(const Var& x, int64_t h, int64_t w, const ForwardCtx& ctx) {
  if (x.value().rank() != 3) {
    throw std::invalid_argument("ffn expects (N, L, D) input, got " + shape_str(x.shape()));
  }
  Var y = gelu(fc1.forward(x));
  if (use_dwconv) {
    if (x.value().dim(1) != h * w) {
      throw std::invalid_argument("ffn dwconv requires L == H*W, got L=" +
                                  std::to_string(x.value().dim(1)));
    }
    y = nchw_to_tokens(dwconv->forward(tokens_to_nchw(y, h, w)));
  }
  return fc2.forward(y);
}

void FeedForward::collect(ParamRefs& refs) {
  fc1.collect(refs);
  if (dwconv) dwconv->collect(refs);
  fc2.collect(refs);
}

MixingBlock::MixingBlock(const std::string& path, const MixingBlockConfig& cfg_in, Rng& rng,
                         double init_std)
    : cfg(cfg_in.resolved()) {
  norm1 = LayerNorm(path + ".norm1", cfg.dim, cfg.ln_eps);
  attn_proj = Linear(path + ".attn_proj", cfg.dim, cfg.attn_dim, true, rng, init_std);

  WmsaConfig wc;
  wc.dim = cfg.attn_dim;
  wc.num_heads = cfg.num_heads;
  wc.window = cfg.window;
  wc.qkv_bias = cfg.qkv_bias;
  wc.relative_position_bias = cfg.relative_position_bias;
  attn = WindowAttention(path + ".attn", wc, rng, init_std);
  attn_norm = LayerNorm(path + ".attn_norm", cfg.attn_dim, cfg.ln_eps);

  int pad = Conv2dSpec::same_padding(cfg.dwconv_kernel);
  if (cfg.mode == BlockMode::Parallel) {
    Conv2dSpec ps;
    ps.in_channels = cfg.dim;
    ps.out_channels = cfg.conv_dim;
    ps.kernel = 1;
    conv_proj.emplace(path + ".conv_proj", ps, rng, init_std);
    dwconv = DepthwiseConv2d(path + ".dwconv", cfg.conv_dim, cfg.dwconv_kernel, 1, pad, rng,
                             init_std);
    conv_bn = BatchNorm2d(path + ".conv_bn", cfg.conv_dim, cfg.bn_momentum, cfg.bn_eps);
    if (cfg.channel_interaction) {
      channel_gate.emplace(path + ".channel_gate", cfg.conv_dim, cfg.attn_dim,
                           ChannelInteraction::default_hidden(cfg.conv_dim, cfg.gate_reduction),
                           rng, init_std);
    }
    if (cfg.spatial_interaction) {
      spatial_gate.emplace(path + ".spatial_gate", cfg.attn_dim,
                           ChannelInteraction::default_hidden(cfg.attn_dim, cfg.gate_reduction),
                           rng, init_std);
    }
  } else {
    // Successive stacking: attention at the split width, projected back to
    // the block width, then a full-width depth-wise conv. Widths chosen so
    // parameter and FLOP totals track the parallel layout.
    succ_out.emplace(path + ".succ_out", cfg.attn_dim, cfg.dim, true, rng, init_std);
    dwconv = DepthwiseConv2d(path + ".dwconv", cfg.dim, cfg.dwconv_kernel, 1, pad, rng, init_std);
    conv_bn = BatchNorm2d(path + ".conv_bn", cfg.dim, cfg.bn_momentum, cfg.bn_eps);
    if (cfg.channel_interaction) {
      channel_gate.emplace(path + ".channel_gate", cfg.dim, cfg.dim,
                           ChannelInteraction::default_hidden(cfg.dim, 4 * cfg.gate_reduction),
                           rng, init_std);
    }
    if (cfg.spatial_interaction) {
      spatial_gate.emplace(path + ".spatial_gate", cfg.attn_dim,
                           ChannelInteraction::default_hidden(cfg.attn_dim, cfg.gate_reduction),
                           rng, init_std);
    }
  }

  norm2 = LayerNorm(path + ".norm2", cfg.dim, cfg.ln_eps);
  ffn = FeedForward(path + ".ffn", cfg.dim, cfg.ffn_expansion, cfg.dwconv_in_ffn, rng, init_std);
}

Var MixingBlock::forward(const Var& x, int64_t h, int64_t w, const ForwardCtx& ctx) {
  if (x.value().rank() != 3 || x.value().dim(2) != cfg.dim) {
    throw std::invalid_argument("mixing block expects (N, L, " + std::to_string(cfg.dim) +
                                ") input, got " + shape_str(x.shape()));
  }
  if (x.value().dim(1) != h * w) {
    throw std::invalid_argument("token count " + std::to_string(x.value().dim(1)) +
                                " does not match spatial dims " + std::to_string(h) + "x" +
                                std::to_string(w));
  }
  Var y = norm1.forward(x);
  Var merged = cfg.mode == BlockMode::Parallel ? forward_parallel(y, h, w, ctx)
                                               : forward_successive(y, h, w, ctx);
  Var xhat = add(x, merged);
  return add(xhat, ffn.forward(norm2.forward(xhat), h, w, ctx));
}

Var MixingBlock::forward_parallel(const Var& y, int64_t h, int64_t w, const ForwardCtx& ctx) {
  // conv branch up to the point the channel gate taps
  Var c = conv_bn.forward(dwconv.forward(conv_proj->forward(tokens_to_nchw(y, h, w))), ctx);
  Var gate_ch;
  if (channel_gate) gate_ch = channel_gate->forward(c, ctx);

  // attention branch
  Var a_img = tokens_to_nchw(attn_proj.forward(y), h, w);
  WindowPartition wp = window_partition(a_img, cfg.window, cfg.shift_amount());
  Var a_win = attn.forward(wp.windows, wp.mask, gate_ch);
  Var a_rev = window_reverse(a_win, wp.layout);

  if (spatial_gate) {
    c = mul(c, spatial_gate->forward(a_rev, ctx));
  }
  Var a_out = attn_norm.forward(nchw_to_tokens(a_rev));
  Var parts[2] = {a_out, nchw_to_tokens(c)};
  return concat(parts, 2);
}

Var MixingBlock::forward_successive(const Var& y, int64_t h, int64_t w, const ForwardCtx& ctx) {
  Var a_img = tokens_to_nchw(attn_proj.forward(y), h, w);
  WindowPartition wp = window_partition(a_img, cfg.window, cfg.shift_amount());
  Var a_win = attn.forward(wp.windows, wp.mask, Var());
  Var a_rev = window_reverse(a_win, wp.layout);

  Var gate_sp;
  if (spatial_gate) gate_sp = spatial_gate->forward(a_rev, ctx);

  Var s = succ_out->forward(attn_norm.forward(nchw_to_tokens(a_rev)));
  Var c = conv_bn.forward(dwconv.forward(tokens_to_nchw(s, h, w)), ctx);
  Var gate_ch;
  if (channel_gate) gate_ch = channel_gate->forward(c, ctx);
  if (gate_sp.defined()) c = mul(c, gate_sp);
  if (gate_ch.defined()) {
    int64_t n = c.value().dim(0);
    c = mul(c, reshape(gate_ch, {n, cfg.dim, 1, 1}));
  }
  return nchw_to_tokens(c);
}

void MixingBlock::collect(ParamRefs& refs) {
  norm1.collect(refs);
  attn_proj.collect(refs);
  attn.collect(refs);
  attn_norm.collect(refs);
  if (conv_proj) conv_proj->collect(refs);
  if (succ_out) succ_out->collect(refs);
  dwconv.collect(refs);
  conv_bn.collect(refs);
  if (channel_gate) channel_gate->collect(refs);
  if (spatial_gate) spatial_gate->collect(refs);
  norm2.collect(refs);
  ffn.collect(refs);
}

Var mixing_block_forward(MixingBlock& block, const Var& x, int64_t h, int64_t w,
                         const ForwardCtx& ctx) {
  return block.forward(x, h, w, ctx);
}

}  // namespace mixformer
