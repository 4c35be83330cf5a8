#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixformer/autodiff.hpp"

namespace mixformer {

// Shared forward-pass switches. update_running_stats only matters in
// training mode (batch norm); gradcheck turns it off so repeated
// evaluations stay side-effect free.
struct ForwardCtx {
  bool training = false;
  bool update_running_stats = true;

  static ForwardCtx eval() { return {false, false}; }
  static ForwardCtx train() { return {true, true}; }
  static ForwardCtx train_frozen_stats() { return {true, false}; }
};

// Named handles into a model's state, in stable construction order.
struct ParamRefs {
  std::vector<Parameter*> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;  // e.g. running stats
};

struct Conv2dSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  bool depthwise = false;

  static int same_padding(int kernel) { return (kernel - 1) / 2; }
  void validate() const;
};

// ---- functional primitives -------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias);  // bias may be undefined
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
Var dwconv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, bool update_stats, double momentum,
               double eps);
Var global_avg_pool(const Var& x);  // NCHW -> (N, C)
Var cross_entropy(const Var& logits, std::span<const int64_t> labels);

// (N, L, C) <-> (N, C, H, W) with L == H*W.
Var tokens_to_nchw(const Var& x, int64_t h, int64_t w);
Var nchw_to_tokens(const Var& x);

// ---- parameterised layers --------------------------------------------------

struct Linear {
  Parameter weight;  // (in, out)
  Parameter bias;    // (out), optional
  bool has_bias = true;
  int in_features = 0, out_features = 0;

  Linear() = default;
  Linear(const std::string& path, int in_features, int out_features, bool bias, Rng& rng,
         double init_std = 0.02);
  Var forward(const Var& x) const;
  void collect(ParamRefs& refs);
  int64_t param_count() const;
};

struct Conv2d {
  Conv2dSpec spec;
  Parameter weight;  // (out, in, K, K)
  Parameter bias;    // (out)

  Conv2d() = default;
  Conv2d(const std::string& path, Conv2dSpec spec, Rng& rng, double init_std = 0.02);
  Var forward(const Var& x) const;
  void collect(ParamRefs& refs);
  int64_t param_count() const;
};

struct DepthwiseConv2d {
  int channels = 0, kernel = 1, stride = 1, padding = 0;
  Parameter weight;  // (C, 1, K, K)
  Parameter bias;    // (C)

  DepthwiseConv2d() = default;
  DepthwiseConv2d(const std::string& path, int channels, int kernel, int stride, int padding,
                  Rng& rng, double init_std = 0.02);
  Var forward(const Var& x) const;
  void collect(ParamRefs& refs);
  int64_t param_count() const;
};

struct BatchNorm2d {
  Parameter gamma, beta;
  Tensor running_mean, running_var;  // initialised to (0, 1)
  std::string path;
  int channels = 0;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& path, int channels, double momentum = 0.1, double eps = 1e-5);
  Var forward(const Var& x, const ForwardCtx& ctx);
  void collect(ParamRefs& refs);
  int64_t param_count() const { return 2 * channels; }
};

struct LayerNorm {
  Parameter gamma, beta;
  int dim = 0;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& path, int dim, double eps = 1e-5);
  Var forward(const Var& x) const;
  void collect(ParamRefs& refs);
  int64_t param_count() const { return 2 * dim; }
};

}  // namespace mixformer
