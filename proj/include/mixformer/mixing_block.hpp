#pragma once

#include <optional>

#include "mixformer/attention.hpp"
#include "mixformer/interactions.hpp"

namespace mixformer {

enum class BlockMode { Parallel, Successive };

struct MixingBlockConfig {
  int dim = 0;
  int attn_dim = 0;  // D_a; 0 = use split_ratio
  int conv_dim = 0;  // D_c; 0 = dim - attn_dim
  int num_heads = 1;
  int window = 7;          // attention window K_a
  int dwconv_kernel = 3;   // K_c, odd
  int ffn_expansion = 4;
  BlockMode mode = BlockMode::Parallel;
  bool channel_interaction = true;
  bool spatial_interaction = true;
  bool shifted_window = false;  // cyclic shift of floor(window/2) in this block
  bool dwconv_in_ffn = false;
  bool relative_position_bias = true;
  bool qkv_bias = true;
  double split_ratio = 0.5;  // attention share of dim when attn_dim == 0
  int gate_reduction = 4;
  double ln_eps = 1e-5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  int shift_amount() const { return shifted_window ? window / 2 : 0; }
  MixingBlockConfig resolved() const;  // fills attn_dim/conv_dim, validates
  void validate() const;

  static MixingBlockConfig make(int dim, int num_heads);
};

// Token FFN: linear -> GELU -> (optional 3x3 depthwise conv) -> linear.
struct FeedForward {
  int dim = 0, hidden = 0;
  bool use_dwconv = false;
  Linear fc1, fc2;
  std::optional<DepthwiseConv2d> dwconv;

  FeedForward() = default;
  FeedForward(const std::string& path, int dim, int expansion, bool dwconv_in_ffn, Rng& rng,
              double init_std = 0.02);
  Var forward(const Var& x, int64_t h, int64_t w, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);
};

// One block of the backbone: window attention and depth-wise convolution in
// parallel with bi-directional gates (or stacked successively), merged and
// fed through a residual FFN. Input/output are tokens (N, H*W, dim).
struct MixingBlock {
  MixingBlockConfig cfg;
  LayerNorm norm1;
  Linear attn_proj;                 // dim -> attn_dim
  WindowAttention attn;
  LayerNorm attn_norm;              // branch norm on attention output
  std::optional<Conv2d> conv_proj;  // parallel: 1x1 dim -> conv_dim
  std::optional<Linear> succ_out;   // successive: attn_dim -> dim
  DepthwiseConv2d dwconv;           // parallel: conv_dim; successive: dim
  BatchNorm2d conv_bn;
  std::optional<ChannelInteraction> channel_gate;
  std::optional<SpatialInteraction> spatial_gate;
  LayerNorm norm2;
  FeedForward ffn;

  MixingBlock() = default;
  MixingBlock(const std::string& path, const MixingBlockConfig& cfg, Rng& rng,
              double init_std = 0.02);

  Var forward(const Var& x, int64_t h, int64_t w, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);

 private:
  Var forward_parallel(const Var& y, int64_t h, int64_t w, const ForwardCtx& ctx);
  Var forward_successive(const Var& y, int64_t h, int64_t w, const ForwardCtx& ctx);
};

Var mixing_block_forward(MixingBlock& block, const Var& x, int64_t h, int64_t w,
                         const ForwardCtx& ctx);

}  // namespace mixformer
