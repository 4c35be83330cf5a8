#include "mixformer/interactions.hpp"

#include <stdexcept>

namespace mixformer {

namespace {
Conv2dSpec conv1x1(int in, int out) {
  Conv2dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = 1;
  return s;
}
}  // namespace

ChannelInteraction::ChannelInteraction(const std::string& path, int in_channels, int out_channels,
                                       int hidden, Rng& rng, double init_std)
    : in_channels(in_channels), hidden(hidden), out_channels(out_channels) {
  if (in_channels < 1 || out_channels < 1 || hidden < 1) {
    throw std::invalid_argument("channel interaction requires positive channel counts");
  }
  conv1 = Conv2d(path + ".conv1", conv1x1(in_channels, hidden), rng, init_std);
  bn = BatchNorm2d(path + ".bn", hidden);
  conv2 = Conv2d(path + ".conv2", conv1x1(hidden, out_channels), rng, init_std);
}

Var ChannelInteraction::forward(const Var& conv_feat, const ForwardCtx& ctx) {
  if (conv_feat.value().rank() != 4 || conv_feat.value().dim(1) != in_channels) {
    throw std::invalid_argument("channel interaction expects NCHW input with C=" +
                                std::to_string(in_channels) + ", got " +
                                shape_str(conv_feat.shape()));
  }
  int64_t n = conv_feat.value().dim(0);
  Var squeezed = reshape(global_avg_pool(conv_feat), {n, in_channels, 1, 1});
  // batch stats over a single spatial sample degenerate to variance 0 at
  // batch size 1; eps keeps the normalisation finite.
  Var g = conv2.forward(gelu(bn.forward(conv1.forward(squeezed), ctx)));
  return reshape(sigmoid(g), {n, out_channels});
}

void ChannelInteraction::collect(ParamRefs& refs) {
  conv1.collect(refs);
  bn.collect(refs);
  conv2.collect(refs);
}

int64_t ChannelInteraction::param_count() const {
  return conv1.param_count() + bn.param_count() + conv2.param_count();
}

SpatialInteraction::SpatialInteraction(const std::string& path, int in_channels, int hidden,
                                       Rng& rng, double init_std)
    : in_channels(in_channels), hidden(hidden) {
  if (in_channels < 1 || hidden < 1) {
    throw std::invalid_argument("spatial interaction requires positive channel counts");
  }
  conv1 = Conv2d(path + ".conv1", conv1x1(in_channels, hidden), rng, init_std);
  bn = BatchNorm2d(path + ".bn", hidden);
  conv2 = Conv2d(path + ".conv2", conv1x1(hidden, 1), rng, init_std);
}

Var SpatialInteraction::forward(const Var& attn_feat, const ForwardCtx& ctx) {
  if (attn_feat.value().rank() != 4 || attn_feat.value().dim(1) != in_channels) {
    throw std::invalid_argument("spatial interaction expects NCHW input with C=" +
                                std::to_string(in_channels) + ", got " +
                                shape_str(attn_feat.shape()));
  }
  return sigmoid(conv2.forward(gelu(bn.forward(conv1.forward(attn_feat), ctx))));
}

void SpatialInteraction::collect(ParamRefs& refs) {
  conv1.collect(refs);
  bn.collect(refs);
  conv2.collect(refs);
}

int64_t SpatialInteraction::param_count() const {
  return conv1.param_count() + bn.param_count() + conv2.param_count();
}

Var channel_interaction(ChannelInteraction& gate, const Var& conv_feat, const ForwardCtx& ctx) {
  return gate.forward(conv_feat, ctx);
}

Var spatial_interaction(SpatialInteraction& gate, const Var& attn_feat, const ForwardCtx& ctx) {
  return gate.forward(attn_feat, ctx);
}

}  // namespace mixformer
