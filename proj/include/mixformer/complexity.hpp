#pragma once

#include <string>
#include <vector>

#include "mixformer/backbone.hpp"

namespace mixformer {

enum class OpKind { Attention, WAttention, Conv, DwConv, Linear, Norm, Interaction, Ffn };

OpKind op_kind_from_string(const std::string& name);
std::string op_kind_name(OpKind kind);

struct ComplexityQuery {
  int64_t n = 1, c = 1, h = 1, w = 1, k = 1;
  OpKind kind = OpKind::Conv;
  void validate() const;
};

// FLOP accounting conventions, kept uniform across the analyzer:
//  - attention-style terms count both matrix products (hence the factor 2);
//  - dense layers (conv / dwconv / linear) count one multiply-accumulate per
//    weight use;
//  - pointwise helpers use fixed per-element costs below.
inline constexpr int64_t kNormFlopsPerElement = 4;
inline constexpr int64_t kSoftmaxFlopsPerElement = 5;
inline constexpr int64_t kGeluFlopsPerElement = 8;
inline constexpr int64_t kSigmoidFlopsPerElement = 4;

int64_t op_flops(const ComplexityQuery& q);

// generalized per-layer helpers used by the model walk
int64_t conv_layer_flops(int64_t n, int64_t c_in, int64_t c_out, int64_t h_out, int64_t w_out,
                         int64_t k);
int64_t dwconv_layer_flops(int64_t n, int64_t c, int64_t h_out, int64_t w_out, int64_t k);
int64_t linear_layer_flops(int64_t rows, int64_t d_in, int64_t d_out);
int64_t wmsa_layer_flops(int64_t n, int64_t c, int64_t h, int64_t w, int64_t k);

struct ComplexityEntry {
  std::string name;
  int64_t params = 0;  // own (leaf) parameters
  int64_t flops = 0;   // own (leaf) flops
  std::vector<ComplexityEntry> children;

  int64_t total_params() const;
  int64_t total_flops() const;
};

struct ComplexityReport {
  ComplexityEntry root;
  int64_t input_h = 0, input_w = 0, batch = 1;

  int64_t total_params() const { return root.total_params(); }
  int64_t total_flops() const { return root.total_flops(); }
  std::string to_text() const;
  std::string to_json() const;
};

ComplexityReport model_report(Model& model, int64_t h, int64_t w, int64_t batch = 1);

}  // namespace mixformer
