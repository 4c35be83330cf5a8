#include "mixformer/complexity.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mixformer {

OpKind op_kind_from_string(const std::string& name) {
  if (name == "attention") return OpKind::Attention;
  if (name == "w_attention") return OpKind::WAttention;
  if (name == "conv") return OpKind::Conv;
  if (name == "dwconv") return OpKind::DwConv;
  if (name == "linear") return OpKind::Linear;
  if (name == "norm") return OpKind::Norm;
  if (name == "interaction") return OpKind::Interaction;
  if (name == "ffn") return OpKind::Ffn;
  throw std::invalid_argument("unknown op kind '" + name +
                              "' (expected attention|w_attention|conv|dwconv|linear|norm|"
                              "interaction|ffn)");
}

std::string op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Attention: return "attention";
    case OpKind::WAttention: return "w_attention";
    case OpKind::Conv: return "conv";
    case OpKind::DwConv: return "dwconv";
    case OpKind::Linear: return "linear";
    case OpKind::Norm: return "norm";
    case OpKind::Interaction: return "interaction";
    case OpKind::Ffn: return "ffn";
  }
  throw std::invalid_argument("unknown op kind");
}

void ComplexityQuery::validate() const {
  if (n < 1 || c < 1 || h < 1 || w < 1 || k < 1) {
    throw std::invalid_argument("complexity query dimensions must all be positive");
  }
}

int64_t op_flops(const ComplexityQuery& q) {
  q.validate();
  int64_t hw = q.h * q.w;
  switch (q.kind) {
    case OpKind::Attention:
      return 2 * q.n * q.c * hw * hw;          // 2NC(HW)^2
    case OpKind::WAttention:
      return 2 * q.n * q.c * hw * q.k * q.k;   // 2NCHWK^2
    case OpKind::Conv:
      return q.n * q.c * q.c * hw * q.k * q.k; // NC^2HWK^2
    case OpKind::DwConv:
      return q.n * q.c * hw * q.k * q.k;       // NCHWK^2
    case OpKind::Linear:
      // square D_in = D_out = C map over H*W positions
      return q.n * hw * q.c * q.c;
    case OpKind::Norm:
      return kNormFlopsPerElement * q.n * q.c * hw;
    case OpKind::Interaction: {
      // channel + spatial gate pair at C channels, reduction 4
      int64_t hidden = std::max<int64_t>(1, q.c / 4);
      int64_t channel = q.n * (q.c * hw                          // pool
                               + q.c * hidden + hidden * q.c     // 1x1 convs
                               + (kNormFlopsPerElement + kGeluFlopsPerElement) * hidden
                               + kSigmoidFlopsPerElement * q.c);
      int64_t spatial = q.n * hw *
                        (q.c * hidden + hidden                   // 1x1 convs
                         + (kNormFlopsPerElement + kGeluFlopsPerElement) * hidden
                         + kSigmoidFlopsPerElement + q.c);       // sigmoid + gate product
      return channel + spatial;
    }
    case OpKind::Ffn: {
      int64_t hidden = 4 * q.c;
      return q.n * hw * (2 * q.c * hidden) + kGeluFlopsPerElement * q.n * hw * hidden;
    }
  }
  throw std::invalid_argument("unknown op kind");
}

int64_t conv_layer_flops(int64_t n, int64_t c_in, int64_t c_out, int64_t h_out, int64_t w_out,
                         int64_t k) {
  return n * c_in * c_out * h_out * w_out * k * k;
}

int64_t dwconv_layer_flops(int64_t n, int64_t c, int64_t h_out, int64_t w_out, int64_t k) {
  return n * c * h_out * w_out * k * k;
}

int64_t linear_layer_flops(int64_t rows, int64_t d_in, int64_t d_out) {
  return rows * d_in * d_out;
}

int64_t wmsa_layer_flops(int64_t n, int64_t c, int64_t h, int64_t w, int64_t k) {
  return 2 * n * c * h * w * k * k;
}

int64_t ComplexityEntry::total_params() const {
  int64_t t = params;
  for (const auto& child : children) t += child.total_params();
  return t;
}

int64_t ComplexityEntry::total_flops() const {
  int64_t t = flops;
  for (const auto& child : children) t += child.total_flops();
  return t;
}

namespace {

struct Dims {
  int64_t n, h, w;
};

int64_t conv_out(int64_t x, int64_t k, int64_t stride, int64_t pad) {
  return (x + 2 * pad - k) / stride + 1;
}

ComplexityEntry leaf(std::string name, int64_t params, int64_t flops) {
  ComplexityEntry e;
  e.name = std::move(name);
  e.params = params;
  e.flops = flops;
  return e;
}

ComplexityEntry conv_bn_act_entry(const std::string& name, const ConvBnAct& m, const Dims& d,
                                  int64_t h_out, int64_t w_out) {
  ComplexityEntry e;
  e.name = name;
  const Conv2dSpec& s = m.conv.spec;
  e.children.push_back(leaf("conv", m.conv.param_count(),
                            conv_layer_flops(d.n, s.in_channels, s.out_channels, h_out, w_out,
                                             s.kernel)));
  int64_t elems = d.n * s.out_channels * h_out * w_out;
  e.children.push_back(leaf("bn", m.bn.param_count(), kNormFlopsPerElement * elems));
  if (m.act) e.children.push_back(leaf("gelu", 0, kGeluFlopsPerElement * elems));
  return e;
}

ComplexityEntry channel_gate_entry(const ChannelInteraction& g, const Dims& d) {
  ComplexityEntry e;
  e.name = "channel_gate";
  e.children.push_back(leaf("pool", 0, d.n * g.in_channels * d.h * d.w));
  e.children.push_back(
      leaf("conv1", g.conv1.param_count(), conv_layer_flops(d.n, g.in_channels, g.hidden, 1, 1, 1)));
  e.children.push_back(leaf("bn", g.bn.param_count(), kNormFlopsPerElement * d.n * g.hidden));
  e.children.push_back(leaf("gelu", 0, kGeluFlopsPerElement * d.n * g.hidden));
  e.children.push_back(
      leaf("conv2", g.conv2.param_count(), conv_layer_flops(d.n, g.hidden, g.out_channels, 1, 1, 1)));
  e.children.push_back(leaf("sigmoid", 0, kSigmoidFlopsPerElement * d.n * g.out_channels));
  return e;
}

ComplexityEntry spatial_gate_entry(const SpatialInteraction& g, const Dims& d) {
  ComplexityEntry e;
  e.name = "spatial_gate";
  int64_t hw = d.h * d.w;
  e.children.push_back(
      leaf("conv1", g.conv1.param_count(), conv_layer_flops(d.n, g.in_channels, g.hidden, d.h, d.w, 1)));
  e.children.push_back(leaf("bn", g.bn.param_count(), kNormFlopsPerElement * d.n * g.hidden * hw));
  e.children.push_back(leaf("gelu", 0, kGeluFlopsPerElement * d.n * g.hidden * hw));
  e.children.push_back(
      leaf("conv2", g.conv2.param_count(), conv_layer_flops(d.n, g.hidden, 1, d.h, d.w, 1)));
  e.children.push_back(leaf("sigmoid", 0, kSigmoidFlopsPerElement * d.n * hw));
  return e;
}

ComplexityEntry block_entry(const std::string& name, const MixingBlock& blk, const Dims& d) {
  const MixingBlockConfig& c = blk.cfg;
  int64_t l = d.h * d.w;
  int64_t rows = d.n * l;
  // attention runs on the zero-padded grid
  int64_t hp = (d.h + c.window - 1) / c.window * c.window;
  int64_t wp = (d.w + c.window - 1) / c.window * c.window;
  ComplexityEntry e;
  e.name = name;
  e.children.push_back(leaf("norm1", blk.norm1.param_count(),
                            kNormFlopsPerElement * rows * c.dim));
  e.children.push_back(leaf("attn_proj", blk.attn_proj.param_count(),
                            linear_layer_flops(rows, c.dim, c.attn_dim)));

  ComplexityEntry a;
  a.name = "attn";
  int64_t attn_rows = d.n * hp * wp;
  a.children.push_back(leaf("qkv", blk.attn.qkv.param_count(),
                            linear_layer_flops(attn_rows, c.attn_dim, 3 * c.attn_dim)));
  a.children.push_back(leaf("w_attention", c.relative_position_bias ? blk.attn.bias_table.numel() : 0,
                            wmsa_layer_flops(d.n, c.attn_dim, hp, wp, c.window)));
  a.children.push_back(leaf("softmax", 0,
                            kSoftmaxFlopsPerElement * d.n * c.num_heads * hp * wp * c.window *
                                c.window));
  a.children.push_back(leaf("proj", blk.attn.proj.param_count(),
                            linear_layer_flops(attn_rows, c.attn_dim, c.attn_dim)));
  e.children.push_back(std::move(a));
  e.children.push_back(leaf("attn_norm", blk.attn_norm.param_count(),
                            kNormFlopsPerElement * rows * c.attn_dim));

  if (c.mode == BlockMode::Parallel) {
    e.children.push_back(leaf("conv_proj", blk.conv_proj->param_count(),
                              conv_layer_flops(d.n, c.dim, c.conv_dim, d.h, d.w, 1)));
    e.children.push_back(leaf("dwconv", blk.dwconv.param_count(),
                              dwconv_layer_flops(d.n, c.conv_dim, d.h, d.w, c.dwconv_kernel)));
    e.children.push_back(leaf("conv_bn", blk.conv_bn.param_count(),
                              kNormFlopsPerElement * d.n * c.conv_dim * l));
    if (blk.channel_gate) {
      e.children.push_back(channel_gate_entry(*blk.channel_gate, d));
      e.children.push_back(leaf("value_gate_mul", 0, d.n * hp * wp * c.attn_dim));
    }
    if (blk.spatial_gate) {
      e.children.push_back(spatial_gate_entry(*blk.spatial_gate, d));
      e.children.push_back(leaf("spatial_gate_mul", 0, rows * c.conv_dim));
    }
  } else {
    e.children.push_back(leaf("succ_out", blk.succ_out->param_count(),
                              linear_layer_flops(rows, c.attn_dim, c.dim)));
    e.children.push_back(leaf("dwconv", blk.dwconv.param_count(),
                              dwconv_layer_flops(d.n, c.dim, d.h, d.w, c.dwconv_kernel)));
    e.children.push_back(leaf("conv_bn", blk.conv_bn.param_count(),
                              kNormFlopsPerElement * rows * c.dim));
    if (blk.channel_gate) {
      e.children.push_back(channel_gate_entry(*blk.channel_gate, d));
      e.children.push_back(leaf("channel_gate_mul", 0, rows * c.dim));
    }
    if (blk.spatial_gate) {
      e.children.push_back(spatial_gate_entry(*blk.spatial_gate, d));
      e.children.push_back(leaf("spatial_gate_mul", 0, rows * c.dim));
    }
  }
  e.children.push_back(leaf("residual1", 0, rows * c.dim));
  e.children.push_back(leaf("norm2", blk.norm2.param_count(),
                            kNormFlopsPerElement * rows * c.dim));

  ComplexityEntry f;
  f.name = "ffn";
  int64_t hidden = blk.ffn.hidden;
  f.children.push_back(
      leaf("fc1", blk.ffn.fc1.param_count(), linear_layer_flops(rows, c.dim, hidden)));
  f.children.push_back(leaf("gelu", 0, kGeluFlopsPerElement * rows * hidden));
  if (blk.ffn.dwconv) {
    f.children.push_back(leaf("dwconv", blk.ffn.dwconv->param_count(),
                              dwconv_layer_flops(d.n, hidden, d.h, d.w, 3)));
  }
  f.children.push_back(
      leaf("fc2", blk.ffn.fc2.param_count(), linear_layer_flops(rows, hidden, c.dim)));
  e.children.push_back(std::move(f));
  e.children.push_back(leaf("residual2", 0, rows * c.dim));
  return e;
}

void render_text(const ComplexityEntry& e, int depth, std::ostringstream& os) {
  os << std::left << std::setw(46) << (std::string(static_cast<size_t>(2 * depth), ' ') + e.name)
     << std::right << std::setw(14) << e.total_params() << std::setw(18) << e.total_flops()
     << "\n";
  for (const auto& child : e.children) render_text(child, depth + 1, os);
}

nlohmann::json to_json_entry(const ComplexityEntry& e) {
  nlohmann::json j;
  j["name"] = e.name;
  j["params"] = e.total_params();
  j["flops"] = e.total_flops();
  if (!e.children.empty()) {
    j["children"] = nlohmann::json::array();
    for (const auto& child : e.children) j["children"].push_back(to_json_entry(child));
  }
  return j;
}

}  // namespace

std::string ComplexityReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(46) << "layer" << std::right << std::setw(14) << "params"
     << std::setw(18) << "flops" << "\n";
  render_text(root, 0, os);
  os << "input " << input_h << "x" << input_w << " batch " << batch << ": "
     << total_params() << " params, " << total_flops() << " flops ("
     << std::fixed << std::setprecision(2) << static_cast<double>(total_params()) / 1e6 << "M / "
     << static_cast<double>(total_flops()) / 1e9 << "G)\n";
  return os.str();
}

std::string ComplexityReport::to_json() const {
  nlohmann::json j;
  j["input"] = {{"h", input_h}, {"w", input_w}, {"batch", batch}};
  j["total_params"] = total_params();
  j["total_flops"] = total_flops();
  j["layers"] = to_json_entry(root);
  return j.dump(2);
}

ComplexityReport model_report(Model& model, int64_t h, int64_t w, int64_t batch) {
  if (h < 32 || w < 32 || batch < 1) {
    throw std::invalid_argument("model_report needs batch >= 1 and resolution >= 32");
  }
  ComplexityReport report;
  report.input_h = h;
  report.input_w = w;
  report.batch = batch;
  report.root.name = model.cfg.name;

  Dims d{batch, h, w};
  ComplexityEntry stem;
  stem.name = "stem";
  int64_t h1 = conv_out(h, 3, 2, 1), w1 = conv_out(w, 3, 2, 1);
  stem.children.push_back(conv_bn_act_entry("c1", model.stem.c1, d, h1, w1));
  Dims d1{batch, h1, w1};
  stem.children.push_back(conv_bn_act_entry("c2", model.stem.c2, d1, h1, w1));
  int64_t h2 = conv_out(h1, 3, 2, 1), w2 = conv_out(w1, 3, 2, 1);
  stem.children.push_back(conv_bn_act_entry("c3", model.stem.c3, d1, h2, w2));
  report.root.children.push_back(std::move(stem));

  Dims cur{batch, h2, w2};
  for (size_t s = 0; s < model.stages.size(); ++s) {
    ComplexityEntry stage;
    stage.name = "stage" + std::to_string(s);
    if (model.stages[s].downsample) {
      int64_t hd = conv_out(cur.h, 3, 2, 1), wd = conv_out(cur.w, 3, 2, 1);
      stage.children.push_back(
          conv_bn_act_entry("downsample", model.stages[s].downsample->op, cur, hd, wd));
      cur.h = hd;
      cur.w = wd;
    }
    for (size_t b = 0; b < model.stages[s].blocks.size(); ++b) {
      stage.children.push_back(
          block_entry("block" + std::to_string(b), model.stages[s].blocks[b], cur));
    }
    report.root.children.push_back(std::move(stage));
  }

  int64_t l = cur.h * cur.w;
  ComplexityEntry headpart;
  headpart.name = "classifier";
  headpart.children.push_back(
      leaf("projection", model.projection.param_count(),
           linear_layer_flops(batch * l, model.projection.in_features,
                              model.projection.out_features)));
  headpart.children.push_back(
      leaf("gelu", 0, kGeluFlopsPerElement * batch * l * model.projection.out_features));
  headpart.children.push_back(leaf("pool", 0, batch * l * model.projection.out_features));
  headpart.children.push_back(leaf("head", model.head.param_count(),
                                   linear_layer_flops(batch, model.head.in_features,
                                                      model.head.out_features)));
  report.root.children.push_back(std::move(headpart));
  return report;
}

}  // namespace mixformer
