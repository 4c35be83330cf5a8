#pragma once

#include "mixformer/ops.hpp"

namespace mixformer {

// Channel gate fed by the convolution branch: squeeze (global average pool)
// then a bottleneck MLP realised as 1x1 convs, ending in a sigmoid. Output
// modulates the attention branch's values per image and channel.
struct ChannelInteraction {
  int in_channels = 0, hidden = 0, out_channels = 0;
  Conv2d conv1;
  BatchNorm2d bn;
  Conv2d conv2;

  ChannelInteraction() = default;
  ChannelInteraction(const std::string& path, int in_channels, int out_channels, int hidden,
                     Rng& rng, double init_std = 0.02);
  static int default_hidden(int in_channels, int reduction) {
    return std::max(1, in_channels / reduction);
  }

  // conv_feat: NCHW with C == in_channels; returns a gate (N, out_channels)
  // with values in (0,1).
  Var forward(const Var& conv_feat, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);
  int64_t param_count() const;
};

// Spatial gate fed by the attention branch: per-position bottleneck down to
// a single channel, sigmoid output (N,1,H,W) modulating the conv branch.
struct SpatialInteraction {
  int in_channels = 0, hidden = 0;
  Conv2d conv1;
  BatchNorm2d bn;
  Conv2d conv2;

  SpatialInteraction() = default;
  SpatialInteraction(const std::string& path, int in_channels, int hidden, Rng& rng,
                     double init_std = 0.02);

  Var forward(const Var& attn_feat, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);
  int64_t param_count() const;
};

Var channel_interaction(ChannelInteraction& gate, const Var& conv_feat, const ForwardCtx& ctx);
Var spatial_interaction(SpatialInteraction& gate, const Var& attn_feat, const ForwardCtx& ctx);

}  // namespace mixformer
