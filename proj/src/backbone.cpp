#include "mixformer/backbone.hpp"

#include <algorithm>
#include <stdexcept>

namespace mixformer {

std::array<int, 4> ModelConfig::stage_dims() const {
  return {base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels};
}

void ModelConfig::validate() const {
  if (base_channels < 2 || base_channels % 2 != 0) {
    throw std::invalid_argument("base channels must be even and >= 2, got " +
                                std::to_string(base_channels));
  }
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (projection_channels < 1) throw std::invalid_argument("projection width must be >= 1");
  for (int i = 0; i < 4; ++i) {
    if (blocks[static_cast<size_t>(i)] < 1) {
      throw std::invalid_argument("every stage needs at least one block");
    }
    block_config(i, 0);  // validates dims/heads/kernels per stage
  }
}

MixingBlockConfig ModelConfig::block_config(int stage, int block_index) const {
  MixingBlockConfig bc;
  bc.dim = stage_dims()[static_cast<size_t>(stage)];
  bc.num_heads = heads[static_cast<size_t>(stage)];
  bc.window = window;
  bc.dwconv_kernel = dwconv_kernel;
  bc.ffn_expansion = ffn_expansion;
  bc.mode = mode;
  bc.channel_interaction = channel_interaction;
  bc.spatial_interaction = spatial_interaction;
  bc.shifted_window = shifted_windows && (block_index % 2 == 1);
  bc.dwconv_in_ffn = dwconv_in_ffn;
  bc.relative_position_bias = relative_position_bias;
  return bc.resolved();
}

ModelConfig ModelConfig::variant(const std::string& name) {
  ModelConfig cfg;
  cfg.name = name;
  if (name == "b0") {
    cfg.base_channels = 24;
    cfg.blocks = {1, 2, 6, 6};
    cfg.heads = {3, 6, 12, 24};
  } else if (name == "b1") {
    cfg.base_channels = 32;
    cfg.blocks = {1, 2, 6, 6};
    cfg.heads = {2, 4, 8, 16};
  } else if (name == "b2") {
    cfg.base_channels = 32;
    cfg.blocks = {2, 2, 8, 8};
    cfg.heads = {2, 4, 8, 16};
  } else if (name == "b3") {
    cfg.base_channels = 48;
    cfg.blocks = {2, 2, 8, 6};
    cfg.heads = {3, 6, 12, 24};
  } else if (name == "b4") {
    cfg.base_channels = 64;
    cfg.blocks = {2, 2, 8, 8};
    cfg.heads = {4, 8, 16, 32};
  } else if (name == "b5") {
    cfg.base_channels = 96;
    cfg.blocks = {1, 2, 8, 6};
    cfg.heads = {6, 12, 24, 48};
  } else if (name == "b6") {
    cfg.base_channels = 96;
    cfg.blocks = {2, 4, 16, 12};
    cfg.heads = {6, 12, 24, 48};
  } else if (name == "micro") {
    cfg.base_channels = 16;
    cfg.blocks = {1, 1, 2, 1};
    cfg.heads = {1, 2, 4, 8};
    cfg.num_classes = 4;
  } else {
    std::string known;
    for (const std::string& v : variant_names()) {
      if (!known.empty()) known += ", ";
      known += v;
    }
    throw std::invalid_argument("unknown variant '" + name + "' (known: " + known + ")");
  }
  return cfg;
}

std::vector<std::string> ModelConfig::variant_names() {
  return {"b0", "b1", "b2", "b3", "b4", "b5", "b6", "micro"};
}

ConvBnAct::ConvBnAct(const std::string& path, Conv2dSpec spec, bool act, Rng& rng,
                     double init_std)
    : act(act) {
  conv = Conv2d(path + ".conv", spec, rng, init_std);
  bn = BatchNorm2d(path + ".bn", spec.out_channels);
}

Var ConvBnAct::forward(const Var& x, const ForwardCtx& ctx) {
  Var y = bn.forward(conv.forward(x), ctx);
  return act ? gelu(y) : y;
}

void ConvBnAct::collect(ParamRefs& refs) {
  conv.collect(refs);
  bn.collect(refs);
}

namespace {
Conv2dSpec conv3x3(int in, int out, int stride) {
  Conv2dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = 3;
  s.stride = stride;
  s.padding = 1;
  return s;
}
}  // namespace

Stem::Stem(const std::string& path, int out_channels_in, Rng& rng, double init_std)
    : out_channels(out_channels_in) {
  int mid = std::max(1, out_channels / 2);
  c1 = ConvBnAct(path + ".c1", conv3x3(3, mid, 2), true, rng, init_std);
  c2 = ConvBnAct(path + ".c2", conv3x3(mid, mid, 1), true, rng, init_std);
  c3 = ConvBnAct(path + ".c3", conv3x3(mid, out_channels, 2), false, rng, init_std);
}

Var Stem::forward(const Var& x, const ForwardCtx& ctx) {
  if (x.value().rank() != 4 || x.value().dim(1) != 3) {
    throw std::invalid_argument("stem expects (N,3,H,W), got " + shape_str(x.shape()));
  }
  if (x.value().dim(2) < 4 || x.value().dim(3) < 4) {
    throw std::invalid_argument("stem input smaller than 4x4: " + shape_str(x.shape()));
  }
  return c3.forward(c2.forward(c1.forward(x, ctx), ctx), ctx);
}

void Stem::collect(ParamRefs& refs) {
  c1.collect(refs);
  c2.collect(refs);
  c3.collect(refs);
}

Downsample::Downsample(const std::string& path, int in_channels, Rng& rng, double init_std) {
  op = ConvBnAct(path, conv3x3(in_channels, 2 * in_channels, 2), false, rng, init_std);
}

Var Downsample::forward(const Var& x, const ForwardCtx& ctx) {
  if (x.value().dim(2) < 2 || x.value().dim(3) < 2) {
    throw std::invalid_argument("downsample input smaller than 2x2: " + shape_str(x.shape()));
  }
  return op.forward(x, ctx);
}

void Downsample::collect(ParamRefs& refs) { op.collect(refs); }

Model::Model(const ModelConfig& cfg_in, uint64_t seed_in) : cfg(cfg_in), seed(seed_in) {
  cfg.validate();
  Rng rng(seed ^ 0x4d495846ULL);  // decorrelate from other seed users
  const double init_std = 0.02;
  stem = Stem("stem", cfg.base_channels, rng, init_std);
  auto dims = cfg.stage_dims();
  stages.resize(4);
  for (int s = 0; s < 4; ++s) {
    std::string prefix = "stages." + std::to_string(s);
    if (s > 0) {
      stages[static_cast<size_t>(s)].downsample.emplace(
          prefix + ".downsample", dims[static_cast<size_t>(s - 1)], rng, init_std);
    }
    for (int b = 0; b < cfg.blocks[static_cast<size_t>(s)]; ++b) {
      stages[static_cast<size_t>(s)].blocks.emplace_back(
          prefix + ".blocks." + std::to_string(b), cfg.block_config(s, b), rng, init_std);
    }
  }
  projection = Linear("projection", dims[3], cfg.projection_channels, true, rng, init_std);
  // zero logits at initialisation: the first loss is exactly ln(num_classes)
  head = Linear("head", cfg.projection_channels, cfg.num_classes, true, rng, 0.0);
}

Var Model::forward_features(const Var& x, const ForwardCtx& ctx,
                            std::vector<Var>* stage_features) {
  if (x.value().rank() != 4 || x.value().dim(1) != 3) {
    throw std::invalid_argument("model expects (N,3,H,W) input, got " + shape_str(x.shape()));
  }
  if (x.value().dim(2) < 32 || x.value().dim(3) < 32) {
    throw std::invalid_argument("input resolution " + shape_str(x.shape()) +
                                " too small for four downsampling steps (needs >= 32)");
  }
  Var y = stem.forward(x, ctx);
  for (Stage& stage : stages) {
    if (stage.downsample) y = stage.downsample->forward(y, ctx);
    int64_t h = y.value().dim(2), w = y.value().dim(3);
    Var tokens = nchw_to_tokens(y);
    for (MixingBlock& block : stage.blocks) {
      tokens = block.forward(tokens, h, w, ctx);
    }
    y = tokens_to_nchw(tokens, h, w);
    if (stage_features) stage_features->push_back(y);
  }
  return y;
}

Var Model::classify(const Var& x, const ForwardCtx& ctx) {
  Var feat = forward_features(x, ctx);
  Var tokens = nchw_to_tokens(feat);            // (N, L, 8C)
  Var expanded = gelu(projection.forward(tokens));
  Var pooled = mean_axis(expanded, 1);          // (N, projection_channels)
  return head.forward(pooled);
}

ParamRefs Model::param_refs() {
  ParamRefs refs;
  stem.collect(refs);
  for (Stage& stage : stages) {
    if (stage.downsample) stage.downsample->collect(refs);
    for (MixingBlock& block : stage.blocks) block.collect(refs);
  }
  projection.collect(refs);
  head.collect(refs);
  return refs;
}

int64_t Model::param_count() {
  int64_t n = 0;
  for (const Parameter* p : param_refs().params) n += p->numel();
  return n;
}

Model build_model(const ModelConfig& cfg, uint64_t seed) { return Model(cfg, seed); }

Model build_model(const std::string& variant, uint64_t seed) {
  return Model(ModelConfig::variant(variant), seed);
}

}  // namespace mixformer
