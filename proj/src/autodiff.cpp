#include "mixformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace mixformer {

void Node::accumulate(Tensor g) {
  if (!requires_grad) return;
  if (g.shape() != value.shape()) {
    throw std::logic_error("gradient shape " + shape_str(g.shape()) +
                           " does not match value shape " + shape_str(value.shape()));
  }
  if (!grad.defined()) {
    grad = g.unique_storage() ? std::move(g) : g.clone();
    return;
  }
  double* dst = grad.mutable_data();
  std::span<const double> src = g.data();
  for (int64_t i = 0; i < grad.numel(); ++i) dst[i] += src[i];
}

Var::Var(Tensor value, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->leaf = true;
}

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("value() on undefined Var");
  return node_->value;
}

const Tensor& Var::grad() const {
  if (!node_) throw std::logic_error("grad() on undefined Var");
  if (!node_->grad.defined()) node_->grad = Tensor::zeros(node_->value.shape());
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var Var::from_node(NodePtr node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

Parameter::Parameter(std::string name, Tensor value)
    : name(std::move(name)), var(std::move(value), /*requires_grad=*/true) {}

Tensor& Parameter::value_mut() { return var.node()->value; }

namespace detail {

Shape broadcast_check(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) {
    throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                " are not broadcast-compatible (second operand has higher rank)");
  }
  size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[i] != a[off + i] && b[i] != 1) {
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible");
    }
  }
  return a;
}

namespace {
std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}
}  // namespace

Tensor broadcast_to(const Tensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  broadcast_check(shape, t.shape());
  Tensor out(shape);
  const Shape& ts = t.shape();
  size_t off = shape.size() - ts.size();
  std::vector<int64_t> tstride = row_major_strides(ts);
  // zero the stride of broadcast dims, align right
  std::vector<int64_t> stride(shape.size(), 0);
  for (size_t i = 0; i < ts.size(); ++i) {
    stride[off + i] = (ts[i] == 1) ? 0 : tstride[i];
  }
  std::vector<int64_t> idx(shape.size(), 0);
  const double* src = t.data().data();
  double* dst = out.mutable_data();
  int64_t src_off = 0;
  for (int64_t flat = 0;; ++flat) {
    dst[flat] = src[src_off];
    int d = static_cast<int>(shape.size()) - 1;
    for (; d >= 0; --d) {
      ++idx[d];
      src_off += stride[d];
      if (idx[d] < shape[d]) break;
      src_off -= stride[d] * shape[d];
      idx[d] = 0;
    }
    if (d < 0) break;
  }
  return out;
}

Tensor reduce_to_shape(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Tensor out = Tensor::zeros(shape);
  const Shape& gs = g.shape();
  size_t off = gs.size() - shape.size();
  std::vector<int64_t> ostride_full = row_major_strides(shape);
  std::vector<int64_t> stride(gs.size(), 0);
  for (size_t i = 0; i < shape.size(); ++i) {
    stride[off + i] = (shape[i] == 1) ? 0 : ostride_full[i];
  }
  std::vector<int64_t> idx(gs.size(), 0);
  const double* src = g.data().data();
  double* dst = out.mutable_data();
  int64_t dst_off = 0;
  for (int64_t flat = 0;; ++flat) {
    dst[dst_off] += src[flat];
    int d = static_cast<int>(gs.size()) - 1;
    for (; d >= 0; --d) {
      ++idx[d];
      dst_off += stride[d];
      if (idx[d] < gs[d]) break;
      dst_off -= stride[d] * gs[d];
      idx[d] = 0;
    }
    if (d < 0) break;
  }
  return out;
}

Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm) {
  int r = t.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw std::invalid_argument("permutation rank mismatch for shape " + shape_str(t.shape()));
  }
  std::vector<bool> seen(perm.size(), false);
  Shape out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] < 0 || perm[i] >= r || seen[perm[i]]) {
      throw std::invalid_argument("invalid permutation for shape " + shape_str(t.shape()));
    }
    seen[perm[i]] = true;
    out_shape[i] = t.shape()[perm[i]];
  }
  std::vector<int64_t> in_strides = row_major_strides(t.shape());
  std::vector<int64_t> step(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) step[i] = in_strides[perm[i]];
  Tensor out(out_shape);
  const double* src = t.data().data();
  double* dst = out.mutable_data();
  std::vector<int64_t> idx(out_shape.size(), 0);
  int64_t src_off = 0;
  for (int64_t flat = 0;; ++flat) {
    dst[flat] = src[src_off];
    int d = static_cast<int>(out_shape.size()) - 1;
    for (; d >= 0; --d) {
      ++idx[d];
      src_off += step[d];
      if (idx[d] < out_shape[d]) break;
      src_off -= step[d] * out_shape[d];
      idx[d] = 0;
    }
    if (d < 0) break;
  }
  return out;
}

void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t p,
          bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * p, 0.0);
  if (!trans_a && !trans_b) {
    for (int64_t i = 0; i < m; ++i) {
      double* crow = c + i * p;
      for (int64_t kk = 0; kk < k; ++kk) {
        double av = a[i * k + kk];
        const double* brow = b + kk * p;
        for (int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // b stored (p x k)
    for (int64_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      for (int64_t j = 0; j < p; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        c[i * p + j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    // a stored (k x m)
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * p;
      for (int64_t i = 0; i < m; ++i) {
        double av = a[kk * m + i];
        double* crow = c + i * p;
        for (int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    throw std::logic_error("gemm: double transpose not supported");
  }
}

}  // namespace detail

namespace {

Var make_op(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->inputs = std::move(inputs);
  for (const NodePtr& in : node->inputs) {
    if (in && in->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) node->backward = std::move(backward_fn);
  return Var::from_node(std::move(node));
}

void require_defined(const Var& v, const char* what) {
  if (!v.defined()) throw std::invalid_argument(std::string(what) + ": undefined operand");
}

}  // namespace

Var tensor_elementwise(EwOp op, const Var& a, const Var& b) {
  switch (op) {
    case EwOp::Add: return add(a, b);
    case EwOp::Sub: return sub(a, b);
    case EwOp::Mul: return mul(a, b);
  }
  throw std::invalid_argument("unknown elementwise op");
}

Var add(const Var& a, const Var& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  detail::broadcast_check(a.shape(), b.shape());
  Tensor bb = detail::broadcast_to(b.value(), a.shape());
  Tensor out(a.shape(), a.value().layout());
  const double* pa = a.value().data().data();
  const double* pb = bb.data().data();
  double* po = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  Shape b_shape = b.shape();
  return make_op(std::move(out), {a.node_ptr(), b.node_ptr()}, [b_shape](Node& n) {
    n.inputs[0]->accumulate(n.grad);
    n.inputs[1]->accumulate(detail::reduce_to_shape(n.grad, b_shape));
  });
}

Var sub(const Var& a, const Var& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  detail::broadcast_check(a.shape(), b.shape());
  Tensor bb = detail::broadcast_to(b.value(), a.shape());
  Tensor out(a.shape(), a.value().layout());
  const double* pa = a.value().data().data();
  const double* pb = bb.data().data();
  double* po = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
  Shape b_shape = b.shape();
  return make_op(std::move(out), {a.node_ptr(), b.node_ptr()}, [b_shape](Node& n) {
    n.inputs[0]->accumulate(n.grad);
    Tensor gneg(n.grad.shape());
    const double* pg = n.grad.data().data();
    double* pn = gneg.mutable_data();
    for (int64_t i = 0; i < gneg.numel(); ++i) pn[i] = -pg[i];
    n.inputs[1]->accumulate(detail::reduce_to_shape(gneg, b_shape));
  });
}

Var mul(const Var& a, const Var& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  detail::broadcast_check(a.shape(), b.shape());
  Tensor bb = detail::broadcast_to(b.value(), a.shape());
  Tensor out(a.shape(), a.value().layout());
  const double* pa = a.value().data().data();
  const double* pb = bb.data().data();
  double* po = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  Shape b_shape = b.shape();
  return make_op(std::move(out), {a.node_ptr(), b.node_ptr()}, [b_shape, bb](Node& n) {
    const double* pg = n.grad.data().data();
    const Tensor& av = n.inputs[0]->value;
    Tensor ga(av.shape());
    const double* pbb = bb.data().data();
    double* pga = ga.mutable_data();
    for (int64_t i = 0; i < ga.numel(); ++i) pga[i] = pg[i] * pbb[i];
    n.inputs[0]->accumulate(std::move(ga));
    Tensor gb_full(av.shape());
    const double* pav = av.data().data();
    double* pgb = gb_full.mutable_data();
    for (int64_t i = 0; i < gb_full.numel(); ++i) pgb[i] = pg[i] * pav[i];
    n.inputs[1]->accumulate(detail::reduce_to_shape(gb_full, b_shape));
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  require_defined(a, "scale");
  Tensor out(a.shape(), a.value().layout());
  const double* pa = a.value().data().data();
  double* po = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * s;
  return make_op(std::move(out), {a.node_ptr()}, [s](Node& n) {
    Tensor g(n.grad.shape());
    const double* pg = n.grad.data().data();
    double* po = g.mutable_data();
    for (int64_t i = 0; i < g.numel(); ++i) po[i] = pg[i] * s;
    n.inputs[0]->accumulate(std::move(g));
  });
}

namespace {

struct BatchPlan {
  Shape out_batch;
  std::vector<int64_t> a_stride;  // in matrix units, per out-batch dim
  std::vector<int64_t> b_stride;
  int64_t count = 1;

  int64_t offset(int64_t flat, const std::vector<int64_t>& stride) const {
    int64_t off = 0;
    for (int d = static_cast<int>(out_batch.size()) - 1; d >= 0; --d) {
      int64_t id = flat % out_batch[d];
      flat /= out_batch[d];
      off += id * stride[d];
    }
    return off;
  }
};

BatchPlan batch_plan(const Shape& a, const Shape& b) {
  Shape ba(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
  size_t nd = std::max(ba.size(), bb.size());
  BatchPlan plan;
  plan.out_batch.resize(nd, 1);
  for (size_t i = 0; i < nd; ++i) {
    int64_t da = i < nd - ba.size() ? 1 : ba[i - (nd - ba.size())];
    int64_t db = i < nd - bb.size() ? 1 : bb[i - (nd - bb.size())];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("matmul batch dims of " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible");
    }
    plan.out_batch[i] = std::max(da, db);
    plan.count *= plan.out_batch[i];
  }
  auto strides_for = [&](const Shape& s) {
    std::vector<int64_t> st(nd, 0);
    int64_t run = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
      size_t d = nd - s.size() + static_cast<size_t>(i);
      st[d] = (s[static_cast<size_t>(i)] == 1) ? 0 : run;
      run *= s[static_cast<size_t>(i)];
    }
    return st;
  };
  plan.a_stride = strides_for(ba);
  plan.b_stride = strides_for(bb);
  return plan;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw std::invalid_argument("matmul requires rank >= 2 operands, got " + shape_str(as) +
                                " and " + shape_str(bs));
  }
  int64_t m = as[as.size() - 2], k = as[as.size() - 1];
  int64_t kb = bs[bs.size() - 2], p = bs[bs.size() - 1];
  if (k != kb) {
    throw std::invalid_argument("matmul inner dimensions disagree: " + shape_str(as) + " vs " +
                                shape_str(bs));
  }
  BatchPlan plan = batch_plan(as, bs);
  Shape out_shape = plan.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(p);
  Tensor out(out_shape);
  const double* pa = a.value().data().data();
  const double* pb = b.value().data().data();
  double* po = out.mutable_data();
  for (int64_t i = 0; i < plan.count; ++i) {
    detail::gemm(pa + plan.offset(i, plan.a_stride) * m * k,
                 pb + plan.offset(i, plan.b_stride) * k * p, po + i * m * p, m, k, p, false, false,
                 true);
  }
  return make_op(std::move(out), {a.node_ptr(), b.node_ptr()}, [plan, m, k, p](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    Tensor ga = Tensor::zeros(av.shape());
    Tensor gb = Tensor::zeros(bv.shape());
    const double* pg = n.grad.data().data();
    const double* pa = av.data().data();
    const double* pb = bv.data().data();
    double* pga = ga.mutable_data();
    double* pgb = gb.mutable_data();
    for (int64_t i = 0; i < plan.count; ++i) {
      const double* gi = pg + i * m * p;
      int64_t ao = plan.offset(i, plan.a_stride) * m * k;
      int64_t bo = plan.offset(i, plan.b_stride) * k * p;
      detail::gemm(gi, pb + bo, pga + ao, m, p, k, false, true, true);  // dA = G . B^T
      detail::gemm(pa + ao, gi, pgb + bo, k, m, p, true, false, true);  // dB = A^T . G
    }
    n.inputs[0]->accumulate(std::move(ga));
    n.inputs[1]->accumulate(std::move(gb));
  });
}

Var reshape(const Var& a, Shape shape, Layout layout) {
  require_defined(a, "reshape");
  Tensor out = a.value().reshaped(std::move(shape), layout);
  Shape in_shape = a.shape();
  return make_op(std::move(out), {a.node_ptr()}, [in_shape](Node& n) {
    n.inputs[0]->accumulate(n.grad.reshaped(in_shape));
  });
}

Var permute(const Var& a, std::vector<int> perm) {
  require_defined(a, "permute");
  Tensor out = detail::permute_tensor(a.value(), perm);
  std::vector<int> inverse(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = static_cast<int>(i);
  return make_op(std::move(out), {a.node_ptr()}, [inverse](Node& n) {
    n.inputs[0]->accumulate(detail::permute_tensor(n.grad, inverse));
  });
}

namespace {
// outer/inner split around an axis for lane-wise loops
struct AxisSplit {
  int64_t outer = 1, n = 1, inner = 1;
};
AxisSplit axis_split(const Shape& s, int axis) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw std::invalid_argument("axis out of range for shape " + shape_str(s));
  }
  AxisSplit sp;
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
  sp.n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}
}  // namespace

Var narrow(const Var& a, int axis, int64_t start, int64_t length) {
  require_defined(a, "narrow");
  Shape s = a.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  AxisSplit sp = axis_split(s, axis);
  if (start < 0 || length < 1 || start + length > sp.n) {
    throw std::invalid_argument("narrow range [" + std::to_string(start) + "," +
                                std::to_string(start + length) + ") invalid for shape " +
                                shape_str(s));
  }
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = length;
  Tensor out(out_shape);
  const double* src = a.value().data().data();
  double* dst = out.mutable_data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src + (o * sp.n + start) * sp.inner, length * sp.inner,
                dst + o * length * sp.inner);
  }
  return make_op(std::move(out), {a.node_ptr()}, [sp, start, length, s](Node& n) {
    Tensor ga = Tensor::zeros(s);
    double* dst = ga.mutable_data();
    const double* src = n.grad.data().data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src + o * length * sp.inner, length * sp.inner,
                  dst + (o * sp.n + start) * sp.inner);
    }
    n.inputs[0]->accumulate(std::move(ga));
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Shape s0 = parts[0].shape();
  if (axis < 0) axis += static_cast<int>(s0.size());
  int64_t total = 0;
  for (const Var& v : parts) {
    require_defined(v, "concat");
    Shape s = v.shape();
    if (s.size() != s0.size()) {
      throw std::invalid_argument("concat rank mismatch: " + shape_str(s0) + " vs " +
                                  shape_str(s));
    }
    for (size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != s0[i]) {
        throw std::invalid_argument("concat shape mismatch: " + shape_str(s0) + " vs " +
                                    shape_str(s));
      }
    }
    total += s[static_cast<size_t>(axis)];
  }
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(axis)] = total;
  AxisSplit sp = axis_split(out_shape, axis);
  Tensor out(out_shape);
  double* dst = out.mutable_data();
  std::vector<NodePtr> inputs;
  std::vector<int64_t> sizes;
  int64_t at = 0;
  for (const Var& v : parts) {
    int64_t len = v.shape()[static_cast<size_t>(axis)];
    const double* src = v.value().data().data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src + o * len * sp.inner, len * sp.inner, dst + (o * sp.n + at) * sp.inner);
    }
    at += len;
    inputs.push_back(v.node_ptr());
    sizes.push_back(len);
  }
  return make_op(std::move(out), std::move(inputs), [sp, sizes](Node& n) {
    const double* src = n.grad.data().data();
    int64_t at = 0;
    for (size_t i = 0; i < sizes.size(); ++i) {
      int64_t len = sizes[i];
      Shape part_shape = n.inputs[i]->value.shape();
      Tensor g(part_shape);
      double* dst = g.mutable_data();
      for (int64_t o = 0; o < sp.outer; ++o) {
        std::copy_n(src + (o * sp.n + at) * sp.inner, len * sp.inner, dst + o * len * sp.inner);
      }
      n.inputs[i]->accumulate(std::move(g));
      at += len;
    }
  });
}

Var softmax(const Var& a, int axis) {
  require_defined(a, "softmax");
  AxisSplit sp = axis_split(a.shape(), axis);
  Tensor out(a.shape(), a.value().layout());
  const double* src = a.value().data().data();
  double* dst = out.mutable_data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const double* lane = src + o * sp.n * sp.inner + in;
      double* olane = dst + o * sp.n * sp.inner + in;
      double mx = lane[0];
      for (int64_t i = 1; i < sp.n; ++i) mx = std::max(mx, lane[i * sp.inner]);
      double sum = 0.0;
      for (int64_t i = 0; i < sp.n; ++i) {
        double e = std::exp(lane[i * sp.inner] - mx);
        olane[i * sp.inner] = e;
        sum += e;
      }
      for (int64_t i = 0; i < sp.n; ++i) olane[i * sp.inner] /= sum;
    }
  }
  Tensor saved = out;  // shares storage with the node value
  return make_op(std::move(out), {a.node_ptr()}, [sp, saved](Node& n) {
    Tensor ga(saved.shape());
    const double* y = saved.data().data();
    const double* g = n.grad.data().data();
    double* dx = ga.mutable_data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        int64_t base = o * sp.n * sp.inner + in;
        double dot = 0.0;
        for (int64_t i = 0; i < sp.n; ++i) dot += g[base + i * sp.inner] * y[base + i * sp.inner];
        for (int64_t i = 0; i < sp.n; ++i) {
          int64_t at = base + i * sp.inner;
          dx[at] = y[at] * (g[at] - dot);
        }
      }
    }
    n.inputs[0]->accumulate(std::move(ga));
  });
}

Var gelu(const Var& a) {
  require_defined(a, "gelu");
  Tensor out(a.shape(), a.value().layout());
  const double* x = a.value().data().data();
  double* y = out.mutable_data();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (int64_t i = 0; i < out.numel(); ++i) {
    y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
  }
  return make_op(std::move(out), {a.node_ptr()}, [inv_sqrt2](Node& n) {
    const double* x = n.inputs[0]->value.data().data();
    const double* g = n.grad.data().data();
    Tensor ga(n.inputs[0]->value.shape());
    double* dx = ga.mutable_data();
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (int64_t i = 0; i < ga.numel(); ++i) {
      double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
      dx[i] = g[i] * (cdf + x[i] * pdf);
    }
    n.inputs[0]->accumulate(std::move(ga));
  });
}

Var sigmoid(const Var& a) {
  require_defined(a, "sigmoid");
  Tensor out(a.shape(), a.value().layout());
  const double* x = a.value().data().data();
  double* y = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) {
    y[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                       : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  Tensor saved = out;
  return make_op(std::move(out), {a.node_ptr()}, [saved](Node& n) {
    const double* y = saved.data().data();
    const double* g = n.grad.data().data();
    Tensor ga(saved.shape());
    double* dx = ga.mutable_data();
    for (int64_t i = 0; i < ga.numel(); ++i) dx[i] = g[i] * y[i] * (1.0 - y[i]);
    n.inputs[0]->accumulate(std::move(ga));
  });
}

Var sum_all(const Var& a) {
  require_defined(a, "sum_all");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Shape in_shape = a.shape();
  return make_op(Tensor::scalar(s), {a.node_ptr()}, [in_shape](Node& n) {
    double g = n.grad.data()[0];
    n.inputs[0]->accumulate(Tensor::full(in_shape, g));
  });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().numel())); }

Var mean_axis(const Var& a, int axis) {
  require_defined(a, "mean_axis");
  Shape s = a.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  AxisSplit sp = axis_split(s, axis);
  Shape out_shape;
  for (size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape = {1};
  Tensor out = Tensor::zeros(out_shape);
  const double* src = a.value().data().data();
  double* dst = out.mutable_data();
  double inv = 1.0 / static_cast<double>(sp.n);
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t i = 0; i < sp.n; ++i) {
      const double* lane = src + (o * sp.n + i) * sp.inner;
      double* olane = dst + o * sp.inner;
      for (int64_t in = 0; in < sp.inner; ++in) olane[in] += lane[in] * inv;
    }
  }
  return make_op(std::move(out), {a.node_ptr()}, [sp, s, inv](Node& n) {
    Tensor ga(s);
    const double* g = n.grad.data().data();
    double* dst = ga.mutable_data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t i = 0; i < sp.n; ++i) {
        double* lane = dst + (o * sp.n + i) * sp.inner;
        const double* glane = g + o * sp.inner;
        for (int64_t in = 0; in < sp.inner; ++in) lane[in] = glane[in] * inv;
      }
    }
    n.inputs[0]->accumulate(std::move(ga));
  });
}

void backward(const Var& root) {
  if (!root.defined()) throw std::invalid_argument("backward on undefined Var");
  if (root.value().numel() != 1) {
    throw std::invalid_argument("backward requires a scalar root, got shape " +
                                shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->inputs.size()) {
      Node* child = n->inputs[i++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  // Intermediate grads from a previous backward over a shared subgraph must
  // not leak into this pass; leaves keep accumulating by contract.
  for (Node* n : topo) {
    if (!n->leaf) n->grad = Tensor();
  }
  root.node()->accumulate(Tensor::ones(root.value().shape()));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.defined()) n->backward(*n);
  }
}

}  // namespace mixformer
