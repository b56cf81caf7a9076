#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "roadvol/errors.hpp"
#include "roadvol/rng.hpp"

namespace roadvol::diff {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void require_shape(bool ok, const Shape& a, const Shape& b, const char* op) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename S>
class TapeT;

// Lightweight handle into a tape. Valid until the owning tape is reset.
template <typename S>
class TensorT {
 public:
  TensorT() = default;
  TensorT(TapeT<S>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  TapeT<S>* tape() const { return tape_; }

  const Shape& shape() const { return tape_->shape(id_); }
  std::int64_t size() const { return numel(shape()); }
  std::span<const S> value() const { return tape_->val(id_); }
  std::span<const S> grad() const { return tape_->grad(id_); }

  // Convenience for scalar results.
  S item() const {
    auto v = value();
    if (v.size() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return v[0];
  }

 private:
  TapeT<S>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense row-major arrays. Node order is a topological
// order by construction, so the backward sweep is a single reverse pass.
// Values live in one pooled buffer that is reused across reset() calls;
// gradients are allocated lazily when backward() runs, so evaluation-only
// forwards never pay for them.
template <typename S>
class TapeT {
 public:
  using Tensor = TensorT<S>;
  using BackwardFn = std::function<void(TapeT&)>;

  Tensor alloc(Shape shape) {
    std::int64_t n = numel(shape);
    Node node;
    node.shape = std::move(shape);
    node.off = static_cast<std::int64_t>(used_);
    node.n = n;
    used_ += static_cast<size_t>(n);
    if (vals_.size() < used_) vals_.resize(used_);
    nodes_.push_back(std::move(node));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  Tensor constant(Shape shape, std::span<const S> v) {
    Tensor t = alloc(std::move(shape));
    auto dst = val_mut(t.id());
    if (static_cast<std::int64_t>(v.size()) != static_cast<std::int64_t>(dst.size()))
      throw ShapeError("constant: value count " + std::to_string(v.size()) + " does not fill shape " +
                       shape_str(t.shape()));
    std::copy(v.begin(), v.end(), dst.begin());
    return t;
  }

  Tensor full(Shape shape, S x) {
    Tensor t = alloc(std::move(shape));
    auto dst = val_mut(t.id());
    std::fill(dst.begin(), dst.end(), x);
    return t;
  }

  Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

  // Leaf tagged with an external parameter slot (see ParamStore).
  Tensor tagged_leaf(Shape shape, std::span<const S> v, int tag) {
    Tensor t = constant(std::move(shape), v);
    nodes_[t.id()].param_tag = tag;
    return t;
  }

  // View node sharing the parent's value and gradient storage. Gradients
  // accumulate straight through, so no backward hop is needed.
  Tensor alias(Tensor parent, Shape shape) {
    if (numel(shape) != parent.size())
      throw ShapeError("alias: size mismatch " + shape_str(parent.shape()) + " vs " + shape_str(shape));
    Node node;
    node.shape = std::move(shape);
    node.off = nodes_[parent.id()].off;
    node.n = nodes_[parent.id()].n;
    nodes_.push_back(std::move(node));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Shape& shape(int id) const { return nodes_[id].shape; }
  int param_tag(int id) const { return nodes_[id].param_tag; }
  size_t node_count() const { return nodes_.size(); }

  std::span<const S> val(int id) const {
    const Node& n = nodes_[id];
    return {vals_.data() + n.off, static_cast<size_t>(n.n)};
  }
  std::span<S> val_mut(int id) {
    const Node& n = nodes_[id];
    return {vals_.data() + n.off, static_cast<size_t>(n.n)};
  }
  std::span<const S> grad(int id) const {
    if (!backward_done_) throw StateError("grad(): backward() has not run on this tape");
    const Node& n = nodes_[id];
    return {grads_.data() + n.off, static_cast<size_t>(n.n)};
  }
  std::span<S> grad_mut(int id) {
    const Node& n = nodes_[id];
    return {grads_.data() + n.off, static_cast<size_t>(n.n)};
  }

  void set_backward(Tensor t, BackwardFn fn) { nodes_[t.id()].backward = std::move(fn); }

  // Accumulates d(loss)/d(node) for every node. Callable once per tape.
  void backward(Tensor loss) {
    if (loss.tape() != this) throw StateError("backward(): loss lives on another tape");
    if (numel(loss.shape()) != 1) throw StateError("backward(): loss must be scalar, got " + shape_str(loss.shape()));
    if (backward_done_) throw StateError("backward(): already ran on this tape; reset() first");
    grads_.assign(used_, S(0));
    backward_done_ = true;
    grad_mut(loss.id())[0] = S(1);
    for (int i = loss.id(); i >= 0; --i) {
      if (nodes_[i].backward) nodes_[i].backward(*this);
    }
  }

  bool backward_done() const { return backward_done_; }

  // Drops all nodes but keeps pool capacity for the next sample.
  void reset() {
    nodes_.clear();
    used_ = 0;
    grads_.clear();
    backward_done_ = false;
  }

  void check_finite(Tensor t, const char* context) const {
    for (S x : val(t.id()))
      if (!std::isfinite(static_cast<double>(x)))
        throw NumericError(std::string(context) + ": non-finite value encountered");
  }

 private:
  struct Node {
    Shape shape;
    std::int64_t off = 0;
    std::int64_t n = 0;
    BackwardFn backward;  // empty for leaves
    int param_tag = -1;
  };

  std::vector<Node> nodes_;
  std::vector<S> vals_;
  std::vector<S> grads_;
  size_t used_ = 0;
  bool backward_done_ = false;
};

using Tape = TapeT<double>;
using Tensor = TensorT<double>;

namespace detail {

template <typename S>
void same_tape(TensorT<S> a, TensorT<S> b, const char* op) {
  if (a.tape() != b.tape()) throw StateError(std::string(op) + ": operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(TensorT<S> a, TensorT<S> b) {
  detail::same_tape(a, b, "add");
  require_shape(a.shape() == b.shape(), a.shape(), b.shape(), "add");
  auto& t = *a.tape();
  auto out = t.alloc(a.shape());
  auto av = t.val(a.id()), bv = t.val(b.id());
  auto ov = t.val_mut(out.id());
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  t.set_backward(out, [oid = out.id(), aid = a.id(), bid = b.id()](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto ga = tp.grad_mut(aid), gb = tp.grad_mut(bid);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
  return out;
}

template <typename S>
TensorT<S> sub(TensorT<S> a, TensorT<S> b) {
  detail::same_tape(a, b, "sub");
  require_shape(a.shape() == b.shape(), a.shape(), b.shape(), "sub");
  auto& t = *a.tape();
  auto out = t.alloc(a.shape());
  auto av = t.val(a.id()), bv = t.val(b.id());
  auto ov = t.val_mut(out.id());
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  t.set_backward(out, [oid = out.id(), aid = a.id(), bid = b.id()](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto ga = tp.grad_mut(aid), gb = tp.grad_mut(bid);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
  return out;
}

template <typename S>
TensorT<S> mul(TensorT<S> a, TensorT<S> b) {
  detail::same_tape(a, b, "mul");
  require_shape(a.shape() == b.shape(), a.shape(), b.shape(), "mul");
  auto& t = *a.tape();
  auto out = t.alloc(a.shape());
  auto av = t.val(a.id()), bv = t.val(b.id());
  auto ov = t.val_mut(out.id());
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  t.set_backward(out, [oid = out.id(), aid = a.id(), bid = b.id()](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto av2 = tp.val(aid), bv2 = tp.val(bid);
    auto ga = tp.grad_mut(aid), gb = tp.grad_mut(bid);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv2[i];
      gb[i] += g[i] * av2[i];
    }
  });
  return out;
}

template <typename S>
TensorT<S> scale(TensorT<S> a, S c) {
  auto& t = *a.tape();
  auto out = t.alloc(a.shape());
  auto av = t.val(a.id());
  auto ov = t.val_mut(out.id());
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  t.set_backward(out, [oid = out.id(), aid = a.id(), c](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto ga = tp.grad_mut(aid);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

// b broadcast over the leading dimensions of x (b.size() must divide x.size()).
template <typename S>
TensorT<S> add_bias(TensorT<S> x, TensorT<S> b) {
  detail::same_tape(x, b, "add_bias");
  std::int64_t xn = x.size(), bn = b.size();
  require_shape(bn > 0 && xn % bn == 0, x.shape(), b.shape(), "add_bias");
  auto& t = *x.tape();
  auto out = t.alloc(x.shape());
  const S* xv = t.val(x.id()).data();
  const S* bv = t.val(b.id()).data();
  S* ov = t.val_mut(out.id()).data();
  for (std::int64_t r = 0; r < xn / bn; ++r) {
    const S* xr = xv + r * bn;
    S* orow = ov + r * bn;
    for (std::int64_t j = 0; j < bn; ++j) orow[j] = xr[j] + bv[j];
  }
  t.set_backward(out, [oid = out.id(), xid = x.id(), bid = b.id(), bn](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    S* gx = tp.grad_mut(xid).data();
    S* gb = tp.grad_mut(bid).data();
    const S* gp = g.data();
    const std::int64_t rows = static_cast<std::int64_t>(g.size()) / bn;
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* grow = gp + r * bn;
      S* gxr = gx + r * bn;
      for (std::int64_t j = 0; j < bn; ++j) {
        gxr[j] += grow[j];
        gb[j] += grow[j];
      }
    }
  });
  return out;
}

template <typename S>
TensorT<S> relu(TensorT<S> x) {
  auto& t = *x.tape();
  auto out = t.alloc(x.shape());
  auto xv = t.val(x.id());
  auto ov = t.val_mut(out.id());
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
  t.set_backward(out, [oid = out.id(), xid = x.id()](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto xv2 = tp.val(xid);
    auto gx = tp.grad_mut(xid);
    for (size_t i = 0; i < g.size(); ++i)
      if (xv2[i] > S(0)) gx[i] += g[i];
  });
  return out;
}

template <typename S>
TensorT<S> leaky_relu(TensorT<S> x, S slope) {
  auto& t = *x.tape();
  auto out = t.alloc(x.shape());
  auto xv = t.val(x.id());
  auto ov = t.val_mut(out.id());
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > S(0) ? xv[i] : slope * xv[i];
  t.set_backward(out, [oid = out.id(), xid = x.id(), slope](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto xv2 = tp.val(xid);
    auto gx = tp.grad_mut(xid);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (xv2[i] > S(0) ? S(1) : slope);
  });
  return out;
}

// Inverted-scaling dropout: training scales kept units by 1/(1-rate) so
// inference is the identity.
template <typename S>
TensorT<S> dropout(TensorT<S> x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  auto& t = *x.tape();
  auto out = t.alloc(x.shape());
  auto xv = t.val(x.id());
  auto ov = t.val_mut(out.id());
  std::vector<S> mask(xv.size());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(rate) ? S(0) : keep_scale;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];
  t.set_backward(out, [oid = out.id(), xid = x.id(), m = std::move(mask)](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto gx = tp.grad_mut(xid);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * m[i];
  });
  return out;
}

// Elementwise Huber of the residual (target - pred).
template <typename S>
TensorT<S> huber(TensorT<S> pred, TensorT<S> target, S delta) {
  detail::same_tape(pred, target, "huber");
  require_shape(pred.shape() == target.shape(), pred.shape(), target.shape(), "huber");
  if (!(delta > S(0))) throw ConfigError("huber: delta must be positive");
  auto& t = *pred.tape();
  auto out = t.alloc(pred.shape());
  auto pv = t.val(pred.id()), qv = t.val(target.id());
  auto ov = t.val_mut(out.id());
  for (size_t i = 0; i < ov.size(); ++i) {
    S a = qv[i] - pv[i];
    S aa = std::abs(a);
    ov[i] = aa <= delta ? S(0.5) * a * a : delta * (aa - S(0.5) * delta);
  }
  t.set_backward(out, [oid = out.id(), pid = pred.id(), qid = target.id(), delta](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto pv2 = tp.val(pid), qv2 = tp.val(qid);
    auto gp = tp.grad_mut(pid), gq = tp.grad_mut(qid);
    for (size_t i = 0; i < g.size(); ++i) {
      S a = qv2[i] - pv2[i];
      S psi = std::clamp(a, -delta, delta);
      gp[i] -= g[i] * psi;
      gq[i] += g[i] * psi;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

// Contiguous row-major reinterpretation; a view, no copy.
template <typename S>
TensorT<S> reshape(TensorT<S> x, Shape shape) {
  require_shape(numel(shape) == x.size(), x.shape(), shape, "reshape");
  return x.tape()->alias(x, std::move(shape));
}

template <typename S>
TensorT<S> transpose(TensorT<S> x) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw ShapeError("transpose: expected rank-2 tensor, got " + shape_str(s));
  int m = s[0], n = s[1];
  auto& t = *x.tape();
  auto out = t.alloc({n, m});
  auto xv = t.val(x.id());
  auto ov = t.val_mut(out.id());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ov[static_cast<size_t>(j) * m + i] = xv[static_cast<size_t>(i) * n + j];
  t.set_backward(out, [oid = out.id(), xid = x.id(), m, n](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto gx = tp.grad_mut(xid);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) gx[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
  });
  return out;
}

template <typename S>
TensorT<S> concat(std::span<const TensorT<S>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& t = *parts[0].tape();
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  Shape out_shape = s0;
  int axis_total = 0;
  for (auto p : parts) {
    detail::same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (size_t d = 0; ok && d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != s0[d]) ok = false;
    require_shape(ok, s0, s, "concat");
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  std::int64_t inner = 1;
  for (size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  std::int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];

  auto out = t.alloc(out_shape);
  auto ov = t.val_mut(out.id());
  std::vector<int> ids;
  std::vector<std::int64_t> blocks;  // per-part axis_dim * inner
  ids.reserve(parts.size());
  for (auto p : parts) {
    ids.push_back(p.id());
    blocks.push_back(static_cast<std::int64_t>(p.shape()[axis]) * inner);
  }
  std::int64_t out_block = static_cast<std::int64_t>(axis_total) * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t dst = o * out_block;
    for (size_t k = 0; k < ids.size(); ++k) {
      auto pv = t.val(ids[k]);
      std::copy(pv.begin() + o * blocks[k], pv.begin() + (o + 1) * blocks[k], ov.begin() + dst);
      dst += blocks[k];
    }
  }
  t.set_backward(out, [oid = out.id(), ids, blocks, outer, out_block](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    for (std::int64_t o = 0; o < outer; ++o) {
      std::int64_t src = o * out_block;
      for (size_t k = 0; k < ids.size(); ++k) {
        auto gp = tp.grad_mut(ids[k]);
        for (std::int64_t i = 0; i < blocks[k]; ++i) gp[o * blocks[k] + i] += g[src + i];
        src += blocks[k];
      }
    }
  });
  return out;
}

template <typename S>
TensorT<S> concat(std::initializer_list<TensorT<S>> parts, int axis) {
  std::vector<TensorT<S>> v(parts);
  return concat(std::span<const TensorT<S>>(v), axis);
}

template <typename S>
TensorT<S> slice(TensorT<S> x, int axis, int start, int len) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 || start + len > s[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") invalid on axis " + std::to_string(axis) + " of " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = len;
  std::int64_t inner = 1;
  for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  std::int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  std::int64_t in_block = static_cast<std::int64_t>(s[axis]) * inner;
  std::int64_t out_block = static_cast<std::int64_t>(len) * inner;

  auto& t = *x.tape();
  auto out = t.alloc(out_shape);
  auto xv = t.val(x.id());
  auto ov = t.val_mut(out.id());
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(xv.begin() + o * in_block + start * inner, xv.begin() + o * in_block + (start + len) * inner,
              ov.begin() + o * out_block);
  t.set_backward(out, [oid = out.id(), xid = x.id(), outer, in_block, out_block, start, inner](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto gx = tp.grad_mut(xid);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < out_block; ++i) gx[o * in_block + start * inner + i] += g[o * out_block + i];
  });
  return out;
}

// Row r of a rank>=1 tensor, with axis 0 dropped.
template <typename S>
TensorT<S> select_row(TensorT<S> x, int row) {
  const Shape& s = x.shape();
  if (s.empty() || row < 0 || row >= s[0])
    throw ShapeError("select_row: row " + std::to_string(row) + " out of range for " + shape_str(s));
  Shape out_shape(s.begin() + 1, s.end());
  if (out_shape.empty()) out_shape = {1};
  std::int64_t inner = numel(out_shape);
  auto& t = *x.tape();
  auto out = t.alloc(out_shape);
  auto xv = t.val(x.id());
  auto ov = t.val_mut(out.id());
  std::copy(xv.begin() + row * inner, xv.begin() + (row + 1) * inner, ov.begin());
  t.set_backward(out, [oid = out.id(), xid = x.id(), row, inner](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto gx = tp.grad_mut(xid);
    for (std::int64_t i = 0; i < inner; ++i) gx[row * inner + i] += g[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum_all(TensorT<S> x) {
  auto& t = *x.tape();
  auto out = t.alloc({1});
  auto xv = t.val(x.id());
  S acc = 0;
  for (S v : xv) acc += v;
  t.val_mut(out.id())[0] = acc;
  t.set_backward(out, [oid = out.id(), xid = x.id()](TapeT<S>& tp) {
    S g = tp.grad(oid)[0];
    auto gx = tp.grad_mut(xid);
    for (auto& v : gx) v += g;
  });
  return out;
}

template <typename S>
TensorT<S> mean_all(TensorT<S> x) {
  auto s = sum_all(x);
  return scale(s, S(1) / static_cast<S>(x.size()));
}

template <typename S>
TensorT<S> mean_axis(TensorT<S> x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  Shape out_shape;
  for (int d = 0; d < static_cast<int>(s.size()); ++d)
    if (d != axis) out_shape.push_back(s[d]);
  if (out_shape.empty()) out_shape = {1};
  std::int64_t inner = 1;
  for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  std::int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  int ax = s[axis];

  auto& t = *x.tape();
  auto out = t.zeros(out_shape);
  auto xv = t.val(x.id());
  auto ov = t.val_mut(out.id());
  const S inv = S(1) / static_cast<S>(ax);
  for (std::int64_t o = 0; o < outer; ++o)
    for (int a = 0; a < ax; ++a)
      for (std::int64_t i = 0; i < inner; ++i) ov[o * inner + i] += xv[(o * ax + a) * inner + i] * inv;
  t.set_backward(out, [oid = out.id(), xid = x.id(), outer, inner, ax, inv](TapeT<S>& tp) {
    auto g = tp.grad(oid);
    auto gx = tp.grad_mut(xid);
    for (std::int64_t o = 0; o < outer; ++o)
      for (int a = 0; a < ax; ++a)
        for (std::int64_t i = 0; i < inner; ++i) gx[(o * ax + a) * inner + i] += g[o * inner + i] * inv;
  });
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n], row-major, ikj order: the inner j loop has
// independent lanes and vectorizes without reassociation.
template <typename S>
void gemm_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::int64_t>(i) * k;
    S* crow = c + static_cast<std::int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S aik = arow[p];
      const S* brow = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B^T where B is [k,n]: C[i,p] += sum_j G[i,j] B[p,j].
// Four-way split accumulators keep the dot product vectorizable under
// strict FP semantics.
template <typename S>
void gemm_nt_acc(const S* g, const S* b, S* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const S* grow = g + static_cast<std::int64_t>(i) * n;
    S* crow = c + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const S* brow = b + static_cast<std::int64_t>(p) * n;
      S a0 = 0, a1 = 0, a2 = 0, a3 = 0;
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        a0 += grow[j] * brow[j];
        a1 += grow[j + 1] * brow[j + 1];
        a2 += grow[j + 2] * brow[j + 2];
        a3 += grow[j + 3] * brow[j + 3];
      }
      for (; j < n; ++j) a0 += grow[j] * brow[j];
      crow[p] += (a0 + a1) + (a2 + a3);
    }
  }
}

// C[k,n] += A^T * G where A is [m,k], G is [m,n]: C[p,j] += sum_i A[i,p] G[i,j]
template <typename S>
void gemm_tn_acc(const S* a, const S* g, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::int64_t>(i) * k;
    const S* grow = g + static_cast<std::int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S aip = arow[p];
      S* crow = c + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * grow[j];
    }
  }
}

}  // namespace detail

template <typename S>
TensorT<S> matmul(TensorT<S> a, TensorT<S> b) {
  detail::same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require_shape(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], sa, sb, "matmul");
  int m = sa[0], k = sa[1], n = sb[1];
  auto& t = *a.tape();
  auto out = t.zeros({m, n});
  detail::gemm_acc(t.val(a.id()).data(), t.val(b.id()).data(), t.val_mut(out.id()).data(), m, k, n);
  t.set_backward(out, [oid = out.id(), aid = a.id(), bid = b.id(), m, k, n](TapeT<S>& tp) {
    const S* g = tp.grad(oid).data();
    detail::gemm_nt_acc(g, tp.val(bid).data(), tp.grad_mut(aid).data(), m, n, k);
    detail::gemm_tn_acc(tp.val(aid).data(), g, tp.grad_mut(bid).data(), m, k, n);
  });
  return out;
}

// ---------------------------------------------------------------------------
// 1D temporal convolution, zero padding, stride 1, output length == input length
// ---------------------------------------------------------------------------

// x: [N, T, Cin], w: [p, Cout, Cin], bias: [Cout]. Requires odd p.
template <typename S>
TensorT<S> conv1d_same(TensorT<S> x, TensorT<S> w, TensorT<S> bias) {
  detail::same_tape(x, w, "conv1d_same");
  detail::same_tape(x, bias, "conv1d_same");
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  require_shape(sx.size() == 3 && sw.size() == 3 && sw[2] == sx[2], sx, sw, "conv1d_same");
  int N = sx[0], T = sx[1], cin = sx[2];
  int p = sw[0], cout = sw[1];
  if (p % 2 == 0) throw ConfigError("conv1d_same: kernel size must be odd, got " + std::to_string(p));
  require_shape(bias.shape() == Shape{cout}, bias.shape(), Shape{cout}, "conv1d_same bias");
  const int half = p / 2;

  auto& t = *x.tape();
  auto out = t.alloc({N, T, cout});
  {
    const S* xv = t.val(x.id()).data();
    const S* wv = t.val(w.id()).data();
    const S* bv = t.val(bias.id()).data();
    S* ov = t.val_mut(out.id()).data();
    for (int nn = 0; nn < N; ++nn) {
      const S* xn = xv + static_cast<std::int64_t>(nn) * T * cin;
      S* on = ov + static_cast<std::int64_t>(nn) * T * cout;
      for (int tt = 0; tt < T; ++tt) {
        S* orow = on + static_cast<std::int64_t>(tt) * cout;
        for (int o = 0; o < cout; ++o) orow[o] = bv[o];
        for (int i = 0; i < p; ++i) {
          int ti = tt + i - half;
          if (ti < 0 || ti >= T) continue;
          const S* xrow = xn + static_cast<std::int64_t>(ti) * cin;
          const S* wi = wv + static_cast<std::int64_t>(i) * cout * cin;
          for (int o = 0; o < cout; ++o) {
            const S* wrow = wi + static_cast<std::int64_t>(o) * cin;
            S a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            int c = 0;
            for (; c + 4 <= cin; c += 4) {
              a0 += wrow[c] * xrow[c];
              a1 += wrow[c + 1] * xrow[c + 1];
              a2 += wrow[c + 2] * xrow[c + 2];
              a3 += wrow[c + 3] * xrow[c + 3];
            }
            for (; c < cin; ++c) a0 += wrow[c] * xrow[c];
            orow[o] += (a0 + a1) + (a2 + a3);
          }
        }
      }
    }
  }
  t.set_backward(out, [oid = out.id(), xid = x.id(), wid = w.id(), bid = bias.id(), N, T, cin, cout, p,
                       half](TapeT<S>& tp) {
    const S* g = tp.grad(oid).data();
    const S* xv = tp.val(xid).data();
    const S* wv = tp.val(wid).data();
    S* gx = tp.grad_mut(xid).data();
    S* gw = tp.grad_mut(wid).data();
    S* gb = tp.grad_mut(bid).data();
    for (int nn = 0; nn < N; ++nn) {
      const S* xn = xv + static_cast<std::int64_t>(nn) * T * cin;
      S* gxn = gx + static_cast<std::int64_t>(nn) * T * cin;
      const S* gn = g + static_cast<std::int64_t>(nn) * T * cout;
      for (int tt = 0; tt < T; ++tt) {
        const S* grow = gn + static_cast<std::int64_t>(tt) * cout;
        for (int o = 0; o < cout; ++o) gb[o] += grow[o];
        for (int i = 0; i < p; ++i) {
          int ti = tt + i - half;
          if (ti < 0 || ti >= T) continue;
          const S* xrow = xn + static_cast<std::int64_t>(ti) * cin;
          S* gxrow = gxn + static_cast<std::int64_t>(ti) * cin;
          const S* wi = wv + static_cast<std::int64_t>(i) * cout * cin;
          S* gwi = gw + static_cast<std::int64_t>(i) * cout * cin;
          for (int o = 0; o < cout; ++o) {
            S go = grow[o];
            if (go == S(0)) continue;
            const S* wrow = wi + static_cast<std::int64_t>(o) * cin;
            S* gwrow = gwi + static_cast<std::int64_t>(o) * cin;
            for (int c = 0; c < cin; ++c) {
              gxrow[c] += go * wrow[c];
              gwrow[c] += go * xrow[c];
            }
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// grouped softmax and graph gather/scatter
// ---------------------------------------------------------------------------

// Softmax along axis 0 within groups: entries m with equal groups[m] are
// normalized together, independently for every trailing index. Used for
// attention coefficients where the group is the updated node.
template <typename S>
TensorT<S> softmax_over_groups(TensorT<S> scores, std::vector<int> groups, int n_groups) {
  const Shape& s = scores.shape();
  if (s.empty() || static_cast<int>(groups.size()) != s[0])
    throw ShapeError("softmax_over_groups: got " + std::to_string(groups.size()) + " group ids for shape " +
                     shape_str(s));
  int M = s[0];
  std::int64_t R = scores.size() / std::max(1, M);
  auto& t = *scores.tape();
  auto out = t.alloc(s);
  {
    const S* sv = t.val(scores.id()).data();
    S* ov = t.val_mut(out.id()).data();
    std::vector<S> mx(static_cast<size_t>(n_groups) * R, std::numeric_limits<S>::lowest());
    std::vector<S> sum(static_cast<size_t>(n_groups) * R, S(0));
    for (int m = 0; m < M; ++m) {
      S* mrow = mx.data() + static_cast<std::int64_t>(groups[m]) * R;
      const S* srow = sv + static_cast<std::int64_t>(m) * R;
      for (std::int64_t r = 0; r < R; ++r) mrow[r] = std::max(mrow[r], srow[r]);
    }
    for (int m = 0; m < M; ++m) {
      const S* mrow = mx.data() + static_cast<std::int64_t>(groups[m]) * R;
      S* sumrow = sum.data() + static_cast<std::int64_t>(groups[m]) * R;
      const S* srow = sv + static_cast<std::int64_t>(m) * R;
      S* orow = ov + static_cast<std::int64_t>(m) * R;
      for (std::int64_t r = 0; r < R; ++r) {
        if (!std::isfinite(static_cast<double>(srow[r])))
          throw NumericError("softmax_over_groups: non-finite score");
        S e = std::exp(srow[r] - mrow[r]);
        orow[r] = e;
        sumrow[r] += e;
      }
    }
    for (int m = 0; m < M; ++m) {
      const S* sumrow = sum.data() + static_cast<std::int64_t>(groups[m]) * R;
      S* orow = ov + static_cast<std::int64_t>(m) * R;
      for (std::int64_t r = 0; r < R; ++r) orow[r] /= sumrow[r];
    }
  }
  t.set_backward(out, [oid = out.id(), sid = scores.id(), grp = std::move(groups), n_groups, M, R](TapeT<S>& tp) {
    const S* g = tp.grad(oid).data();
    const S* a = tp.val(oid).data();
    S* gs = tp.grad_mut(sid).data();
    std::vector<S> dot(static_cast<size_t>(n_groups) * R, S(0));
    for (int m = 0; m < M; ++m) {
      S* drow = dot.data() + static_cast<std::int64_t>(grp[m]) * R;
      const S* arow = a + static_cast<std::int64_t>(m) * R;
      const S* grow = g + static_cast<std::int64_t>(m) * R;
      for (std::int64_t r = 0; r < R; ++r) drow[r] += arow[r] * grow[r];
    }
    for (int m = 0; m < M; ++m) {
      const S* drow = dot.data() + static_cast<std::int64_t>(grp[m]) * R;
      const S* arow = a + static_cast<std::int64_t>(m) * R;
      const S* grow = g + static_cast<std::int64_t>(m) * R;
      S* gsrow = gs + static_cast<std::int64_t>(m) * R;
      for (std::int64_t r = 0; r < R; ++r) gsrow[r] += arow[r] * (grow[r] - drow[r]);
    }
  });
  return out;
}

// out[m, ...] = x[rows[m], ...]
template <typename S>
TensorT<S> gather_rows(TensorT<S> x, std::vector<int> rows) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("gather_rows: scalar input " + shape_str(s));
  Shape out_shape = s;
  out_shape[0] = static_cast<int>(rows.size());
  std::int64_t inner = x.size() / std::max(1, s[0]);
  for (int r : rows)
    if (r < 0 || r >= s[0]) throw ShapeError("gather_rows: row index out of range for " + shape_str(s));
  auto& t = *x.tape();
  auto out = t.alloc(out_shape);
  {
    const S* xv = t.val(x.id()).data();
    S* ov = t.val_mut(out.id()).data();
    for (size_t m = 0; m < rows.size(); ++m)
      std::copy(xv + rows[m] * inner, xv + (rows[m] + 1) * inner, ov + m * inner);
  }
  t.set_backward(out, [oid = out.id(), xid = x.id(), rs = std::move(rows), inner](TapeT<S>& tp) {
    const S* g = tp.grad(oid).data();
    S* gx = tp.grad_mut(xid).data();
    for (size_t m = 0; m < rs.size(); ++m) {
      const S* grow = g + m * inner;
      S* gxrow = gx + rs[m] * inner;
      for (std::int64_t i = 0; i < inner; ++i) gxrow[i] += grow[i];
    }
  });
  return out;
}

// Per-head inner product along the channel axis: x [M, ..., C] with C split
// into `heads` equal blocks, a [C] -> out [M, ..., heads].
template <typename S>
TensorT<S> head_dot(TensorT<S> x, TensorT<S> a, int heads) {
  detail::same_tape(x, a, "head_dot");
  const Shape& s = x.shape();
  int C = s.back();
  require_shape(a.shape() == Shape{C}, x.shape(), a.shape(), "head_dot");
  if (heads <= 0 || C % heads != 0)
    throw ConfigError("head_dot: channel dim " + std::to_string(C) + " not divisible by heads " +
                      std::to_string(heads));
  int ch = C / heads;
  Shape out_shape = s;
  out_shape.back() = heads;
  std::int64_t rows = x.size() / C;
  auto& t = *x.tape();
  auto out = t.alloc(out_shape);
  {
    const S* xv = t.val(x.id()).data();
    const S* av = t.val(a.id()).data();
    S* ov = t.val_mut(out.id()).data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* xrow = xv + r * C;
      S* orow = ov + r * heads;
      for (int h = 0; h < heads; ++h) {
        S acc = 0;
        const S* xh = xrow + h * ch;
        const S* ah = av + h * ch;
        for (int c = 0; c < ch; ++c) acc += xh[c] * ah[c];
        orow[h] = acc;
      }
    }
  }
  t.set_backward(out, [oid = out.id(), xid = x.id(), aid = a.id(), rows, heads, ch, C](TapeT<S>& tp) {
    const S* g = tp.grad(oid).data();
    const S* xv = tp.val(xid).data();
    const S* av = tp.val(aid).data();
    S* gx = tp.grad_mut(xid).data();
    S* ga = tp.grad_mut(aid).data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* xrow = xv + r * C;
      S* gxrow = gx + r * C;
      const S* grow = g + r * heads;
      for (int h = 0; h < heads; ++h) {
        S gh = grow[h];
        if (gh == S(0)) continue;
        const S* ah = av + h * ch;
        S* gah = ga + h * ch;
        S* gxh = gxrow + h * ch;
        const S* xh = xrow + h * ch;
        for (int c = 0; c < ch; ++c) {
          gxh[c] += gh * ah[c];
          gah[c] += gh * xh[c];
        }
      }
    }
  });
  return out;
}

// out[tgt[m], ..., c] += alpha[m, ..., head(c)] * msg[m, ..., c]
// alpha: [M, ..., H], msg: [M, ..., C] with C = H * ch, out: [n_out, ..., C].
template <typename S>
TensorT<S> segment_weighted_sum(TensorT<S> alpha, TensorT<S> msg, std::vector<int> tgt, int n_out) {
  detail::same_tape(alpha, msg, "segment_weighted_sum");
  const Shape& sa = alpha.shape();
  const Shape& sm = msg.shape();
  require_shape(sa.size() == sm.size() && sa[0] == sm[0] && static_cast<int>(tgt.size()) == sm[0], sa, sm,
                "segment_weighted_sum");
  for (size_t d = 1; d + 1 < sa.size(); ++d) require_shape(sa[d] == sm[d], sa, sm, "segment_weighted_sum");
  int M = sm[0];
  int H = sa.back();
  int C = sm.back();
  if (H <= 0 || C % H != 0) throw ConfigError("segment_weighted_sum: channel dim not divisible by heads");
  int ch = C / H;
  std::int64_t rows = msg.size() / std::max(1, M * C);  // product of middle dims
  Shape out_shape = sm;
  out_shape[0] = n_out;
  for (int v : tgt)
    if (v < 0 || v >= n_out) throw ShapeError("segment_weighted_sum: target index out of range");

  auto& t = *alpha.tape();
  auto out = t.zeros(out_shape);
  {
    const S* av = t.val(alpha.id()).data();
    const S* mv = t.val(msg.id()).data();
    S* ov = t.val_mut(out.id()).data();
    for (int m = 0; m < M; ++m) {
      const S* am = av + static_cast<std::int64_t>(m) * rows * H;
      const S* mm = mv + static_cast<std::int64_t>(m) * rows * C;
      S* om = ov + static_cast<std::int64_t>(tgt[m]) * rows * C;
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* ar = am + r * H;
        const S* mr = mm + r * C;
        S* orow = om + r * C;
        for (int h = 0; h < H; ++h) {
          S w = ar[h];
          const S* mh = mr + h * ch;
          S* oh = orow + h * ch;
          for (int c = 0; c < ch; ++c) oh[c] += w * mh[c];
        }
      }
    }
  }
  t.set_backward(out, [oid = out.id(), aid = alpha.id(), mid = msg.id(), ts = std::move(tgt), M, H, C, ch,
                       rows](TapeT<S>& tp) {
    const S* g = tp.grad(oid).data();
    const S* av = tp.val(aid).data();
    const S* mv = tp.val(mid).data();
    S* ga = tp.grad_mut(aid).data();
    S* gm = tp.grad_mut(mid).data();
    for (int m = 0; m < M; ++m) {
      const S* gm_out = g + static_cast<std::int64_t>(ts[m]) * rows * C;
      const S* am = av + static_cast<std::int64_t>(m) * rows * H;
      const S* mm = mv + static_cast<std::int64_t>(m) * rows * C;
      S* gam = ga + static_cast<std::int64_t>(m) * rows * H;
      S* gmm = gm + static_cast<std::int64_t>(m) * rows * C;
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* grow = gm_out + r * C;
        const S* ar = am + r * H;
        const S* mr = mm + r * C;
        S* gar = gam + r * H;
        S* gmr = gmm + r * C;
        for (int h = 0; h < H; ++h) {
          S w = ar[h];
          const S* gh = grow + h * ch;
          const S* mh = mr + h * ch;
          S* gmh = gmr + h * ch;
          S acc = 0;
          for (int c = 0; c < ch; ++c) {
            acc += gh[c] * mh[c];
            gmh[c] += w * gh[c];
          }
          gar[h] += acc;
        }
      }
    }
  });
  return out;
}

}  // namespace roadvol::diff
