#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mixformer/mixing_block.hpp"

namespace mixformer {

struct ModelConfig {
  std::string name = "custom";
  int base_channels = 32;
  std::array<int, 4> blocks = {1, 2, 6, 6};
  std::array<int, 4> heads = {2, 4, 8, 16};
  int num_classes = 1000;
  int window = 7;
  int dwconv_kernel = 3;
  int ffn_expansion = 4;
  BlockMode mode = BlockMode::Parallel;
  bool channel_interaction = true;
  bool spatial_interaction = true;
  bool shifted_windows = false;  // odd-indexed blocks in each stage shift
  bool dwconv_in_ffn = false;
  bool relative_position_bias = true;
  int projection_channels = 1280;

  std::array<int, 4> stage_dims() const;
  void validate() const;
  MixingBlockConfig block_config(int stage, int block_index) const;

  // b0..b6 plus the desk-scale "micro" model.
  static ModelConfig variant(const std::string& name);
  static std::vector<std::string> variant_names();
};

struct ConvBnAct {
  Conv2d conv;
  BatchNorm2d bn;
  bool act = true;

  ConvBnAct() = default;
  ConvBnAct(const std::string& path, Conv2dSpec spec, bool act, Rng& rng, double init_std);
  Var forward(const Var& x, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);
};

// Three stride-managed convolutions taking 3 channels to C at 1/4 resolution.
struct Stem {
  int out_channels = 0;
  ConvBnAct c1, c2, c3;

  Stem() = default;
  Stem(const std::string& path, int out_channels, Rng& rng, double init_std);
  Var forward(const Var& x, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);
};

// 3x3 stride-2 conv doubling the channels, plus batch norm.
struct Downsample {
  ConvBnAct op;

  Downsample() = default;
  Downsample(const std::string& path, int in_channels, Rng& rng, double init_std);
  Var forward(const Var& x, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);
};

struct Stage {
  std::optional<Downsample> downsample;  // absent on stage 0
  std::vector<MixingBlock> blocks;
};

// Full backbone: stem, four stages at strides {4,8,16,32}, a per-position
// expansion to projection_channels, global pooling, linear classifier.
struct Model {
  ModelConfig cfg;
  uint64_t seed = 0;
  Stem stem;
  std::vector<Stage> stages;
  Linear projection;
  Linear head;  // zero-initialised

  Model(const ModelConfig& cfg, uint64_t seed);

  // x: (N, 3, H, W). stage_features, when given, receives the NCHW output
  // of every stage (the multi-scale hook).
  Var forward_features(const Var& x, const ForwardCtx& ctx,
                       std::vector<Var>* stage_features = nullptr);
  Var classify(const Var& x, const ForwardCtx& ctx);

  ParamRefs param_refs();
  int64_t param_count();
};

Model build_model(const ModelConfig& cfg, uint64_t seed = 0);
Model build_model(const std::string& variant, uint64_t seed = 0);

}  // namespace mixformer
