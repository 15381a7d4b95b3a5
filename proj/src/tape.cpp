#include "jescore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>

#include "jescore/kernels.hpp"

namespace jescore::ad {

namespace {

template <class T>
constexpr T inv_sqrt2pi_v = T(0.39894228040143267794);
template <class T>
constexpr T inv_sqrt2_v = T(0.70710678118654752440);

template <class T>
T gelu_value(T x) {
  return x * T(0.5) * std::erfc(-x * inv_sqrt2_v<T>);
}
template <class T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) * inv_sqrt2pi_v<T>;
}
template <class T>
T gelu_deriv1(T x) {
  return T(0.5) * std::erfc(-x * inv_sqrt2_v<T>) + x * normal_pdf(x);
}
template <class T>
T gelu_deriv2(T x) {
  return (T(2) - x * x) * normal_pdf(x);
}
template <class T>
T gelu_deriv3(T x) {
  return (x * x * x - T(4) * x) * normal_pdf(x);
}

enum class UKind { Exp, Log, Gelu, GeluD1, GeluD2, GeluD3, Relu, ReluStep };

const char* ukind_name(UKind k) {
  switch (k) {
    case UKind::Exp: return "exp";
    case UKind::Log: return "log";
    case UKind::Gelu: return "gelu";
    case UKind::GeluD1: return "gelu_d1";
    case UKind::GeluD2: return "gelu_d2";
    case UKind::GeluD3: return "gelu_d3";
    case UKind::Relu: return "relu";
    case UKind::ReluStep: return "relu_step";
  }
  return "?";
}

template <class T>
void ueval_span(UKind k, std::span<const T> in, std::span<T> out) {
  const size_t n = in.size();
  switch (k) {
    case UKind::Exp:
      for (size_t i = 0; i < n; ++i) out[i] = std::exp(in[i]);
      break;
    case UKind::Log:
      for (size_t i = 0; i < n; ++i) out[i] = std::log(in[i]);
      break;
    case UKind::Gelu:
      for (size_t i = 0; i < n; ++i) out[i] = gelu_value(in[i]);
      break;
    case UKind::GeluD1:
      for (size_t i = 0; i < n; ++i) out[i] = gelu_deriv1(in[i]);
      break;
    case UKind::GeluD2:
      for (size_t i = 0; i < n; ++i) out[i] = gelu_deriv2(in[i]);
      break;
    case UKind::GeluD3:
      for (size_t i = 0; i < n; ++i) out[i] = gelu_deriv3(in[i]);
      break;
    case UKind::Relu:
      for (size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case UKind::ReluStep:
      for (size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? T(1) : T(0);
      break;
  }
}

Tensor ueval(UKind k, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  if (a.dtype() == DType::f32)
    ueval_span<float>(k, a.data<float>(), out.data<float>());
  else
    ueval_span<double>(k, a.data<double>(), out.data<double>());
  return out;
}

Var unary(Tape& t, Var a, UKind k);

Tape::Vjp unary_vjp(Var a, UKind k) {
  return [a, k](Tape& t, Var self, Var g) -> std::vector<Var> {
    switch (k) {
      case UKind::Exp: return {mul(t, g, self)};
      case UKind::Log: return {mul(t, g, powc(t, a, -1.0))};
      case UKind::Gelu: return {mul(t, g, unary(t, a, UKind::GeluD1))};
      case UKind::GeluD1: return {mul(t, g, unary(t, a, UKind::GeluD2))};
      case UKind::GeluD2: return {mul(t, g, unary(t, a, UKind::GeluD3))};
      case UKind::GeluD3: throw UsageError("gelu: derivative depth exceeded");
      case UKind::Relu: return {mul(t, g, unary(t, a, UKind::ReluStep))};
      case UKind::ReluStep: return {Var{}};
    }
    return {Var{}};
  };
}

Var unary(Tape& t, Var a, UKind k) {
  return t.emplace(ueval(k, t.value(a)), {a}, unary_vjp(a, k), ukind_name(k));
}

void check_same_dtype(const Tape& t, Var a, Var b, const char* op) {
  if (t.dtype(a) != t.dtype(b)) throw UsageError(std::string(op) + ": dtype mismatch");
}

void check_same_shape(const Tape& t, Var a, Var b, const char* op) {
  check_same_dtype(t, a, b, op);
  if (t.shape(a) != t.shape(b))
    throw UsageError(std::string(op) + ": shape mismatch " + shape_str(t.shape(a)) + " vs " +
                     shape_str(t.shape(b)));
}

template <class T>
void binary_kernel(const char op, std::span<const T> a, std::span<const T> b, std::span<T> o) {
  switch (op) {
    case '+': kernels::vadd<T>(a.data(), b.data(), o.data(), o.size()); break;
    case '-': kernels::vsub<T>(a.data(), b.data(), o.data(), o.size()); break;
    case '*': kernels::vmul<T>(a.data(), b.data(), o.data(), o.size()); break;
  }
}

Tensor binary_eval(const char op, const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  if (a.dtype() == DType::f32)
    binary_kernel<float>(op, a.data<float>(), b.data<float>(), out.data<float>());
  else
    binary_kernel<double>(op, a.data<double>(), b.data<double>(), out.data<double>());
  return out;
}

/// Broadcast a scalar node to an arbitrary shape; adjoint of sum_all.
Var scalar_broadcast(Tape& t, Var a, Shape shape) {
  if (t.value(a).numel() != 1) throw UsageError("scalar_broadcast: input must be scalar");
  Tensor out = Tensor::full(shape, t.value(a).item(), t.dtype(a));
  return t.emplace(
      std::move(out), {a},
      [](Tape& tt, Var, Var g) -> std::vector<Var> { return {sum_all(tt, g)}; },
      "scalar_broadcast");
}

struct PoolGeom {
  int64_t n, c, h, w, ho, wo;
};

PoolGeom pool2_geom(const Shape& s) {
  if (s.size() != 4) throw UsageError("avg_pool2: input must be NCHW");
  return {s[0], s[1], s[2], s[3], (s[2] + 1) / 2, (s[3] + 1) / 2};
}

template <class T>
void avg_pool2_eval(const PoolGeom& g, std::span<const T> x, std::span<T> y) {
  for (int64_t nc = 0; nc < g.n * g.c; ++nc) {
    const T* xp = x.data() + nc * g.h * g.w;
    T* yp = y.data() + nc * g.ho * g.wo;
    for (int64_t oh = 0; oh < g.ho; ++oh) {
      for (int64_t ow = 0; ow < g.wo; ++ow) {
        T acc{};
        int cnt = 0;
        for (int64_t dh = 0; dh < 2; ++dh) {
          for (int64_t dw = 0; dw < 2; ++dw) {
            int64_t ih = 2 * oh + dh, iw = 2 * ow + dw;
            if (ih < g.h && iw < g.w) {
              acc += xp[ih * g.w + iw];
              ++cnt;
            }
          }
        }
        yp[oh * g.wo + ow] = acc / T(cnt);
      }
    }
  }
}

template <class T>
void avg_unpool2_eval(const PoolGeom& g, std::span<const T> gy, std::span<T> gx) {
  for (int64_t nc = 0; nc < g.n * g.c; ++nc) {
    const T* gyp = gy.data() + nc * g.ho * g.wo;
    T* gxp = gx.data() + nc * g.h * g.w;
    for (int64_t oh = 0; oh < g.ho; ++oh) {
      for (int64_t ow = 0; ow < g.wo; ++ow) {
        int cnt = 0;
        for (int64_t dh = 0; dh < 2; ++dh)
          for (int64_t dw = 0; dw < 2; ++dw)
            if (2 * oh + dh < g.h && 2 * ow + dw < g.w) ++cnt;
        const T v = gyp[oh * g.wo + ow] / T(cnt);
        for (int64_t dh = 0; dh < 2; ++dh) {
          for (int64_t dw = 0; dw < 2; ++dw) {
            int64_t ih = 2 * oh + dh, iw = 2 * ow + dw;
            if (ih < g.h && iw < g.w) gxp[ih * g.w + iw] += v;
          }
        }
      }
    }
  }
}

Var avg_unpool2(Tape& t, Var gv, Shape in_shape) {
  PoolGeom g = pool2_geom(in_shape);
  Tensor out = Tensor::zeros(in_shape, t.dtype(gv));
  Tensor gyv = t.value(gv);
  if (gyv.dtype() == DType::f32)
    avg_unpool2_eval<float>(g, gyv.data<float>(), out.data<float>());
  else
    avg_unpool2_eval<double>(g, gyv.data<double>(), out.data<double>());
  return t.emplace(
      std::move(out), {gv},
      [](Tape& tt, Var, Var u) -> std::vector<Var> { return {avg_pool2(tt, u)}; },
      "avg_unpool2");
}

// Internal conv family members; cross-referenced vjps keep the family closed
// under repeated differentiation.
Var conv_dx_op(Tape& t, Var gy, Var k, kernels::Conv2dShape cs);
Var conv_dk_op(Tape& t, Var x, Var gy, kernels::Conv2dShape cs);

Var conv_fwd_op(Tape& t, Var x, Var k, kernels::Conv2dShape cs) {
  Tensor out = Tensor::zeros({cs.n, cs.cout, cs.hout, cs.wout}, t.dtype(x));
  Tensor xv = t.value(x), kv = t.value(k);
  if (out.dtype() == DType::f32)
    kernels::conv2d_fwd<float>(cs, xv.data<float>().data(), kv.data<float>().data(),
                               out.data<float>().data());
  else
    kernels::conv2d_fwd<double>(cs, xv.data<double>().data(), kv.data<double>().data(),
                                out.data<double>().data());
  return t.emplace(
      std::move(out), {x, k},
      [x, k, cs](Tape& tt, Var, Var g) -> std::vector<Var> {
        Var dx{}, dk{};
        if (tt.requires_grad(x)) dx = conv_dx_op(tt, g, k, cs);
        if (tt.requires_grad(k)) dk = conv_dk_op(tt, x, g, cs);
        return {dx, dk};
      },
      "conv2d");
}

Var conv_dx_op(Tape& t, Var gy, Var k, kernels::Conv2dShape cs) {
  Tensor out = Tensor::zeros({cs.n, cs.cin, cs.h, cs.w}, t.dtype(gy));
  Tensor gv = t.value(gy), kv = t.value(k);
  if (out.dtype() == DType::f32)
    kernels::conv2d_dx<float>(cs, gv.data<float>().data(), kv.data<float>().data(),
                              out.data<float>().data());
  else
    kernels::conv2d_dx<double>(cs, gv.data<double>().data(), kv.data<double>().data(),
                               out.data<double>().data());
  return t.emplace(
      std::move(out), {gy, k},
      [gy, k, cs](Tape& tt, Var, Var u) -> std::vector<Var> {
        Var dg{}, dk{};
        if (tt.requires_grad(gy)) dg = conv_fwd_op(tt, u, k, cs);
        if (tt.requires_grad(k)) dk = conv_dk_op(tt, u, gy, cs);
        return {dg, dk};
      },
      "conv2d_dx");
}

Var conv_dk_op(Tape& t, Var x, Var gy, kernels::Conv2dShape cs) {
  Tensor out = Tensor::zeros({cs.cout, cs.cin, cs.kh, cs.kw}, t.dtype(x));
  Tensor xv = t.value(x), gv = t.value(gy);
  if (out.dtype() == DType::f32)
    kernels::conv2d_dk<float>(cs, xv.data<float>().data(), gv.data<float>().data(),
                              out.data<float>().data());
  else
    kernels::conv2d_dk<double>(cs, xv.data<double>().data(), gv.data<double>().data(),
                               out.data<double>().data());
  return t.emplace(
      std::move(out), {x, gy},
      [x, gy, cs](Tape& tt, Var, Var u) -> std::vector<Var> {
        Var dx{}, dg{};
        if (tt.requires_grad(x)) dx = conv_dx_op(tt, gy, u, cs);
        if (tt.requires_grad(gy)) dg = conv_fwd_op(tt, x, u, cs);
        return {dx, dg};
      },
      "conv2d_dk");
}

enum class MatKind { NN, NT, TN };

Var matmul_op(Tape& t, Var a, Var b, MatKind kind) {
  check_same_dtype(t, a, b, "matmul");
  const Shape& sa = t.shape(a);
  const Shape& sb = t.shape(b);
  if (sa.size() != 2 || sb.size() != 2) throw UsageError("matmul: rank-2 tensors required");
  size_t m, k, n;
  const char* name;
  switch (kind) {
    case MatKind::NN:
      m = sa[0]; k = sa[1]; n = sb[1]; name = "matmul_nn";
      if (sb[0] != static_cast<int64_t>(k)) throw UsageError("matmul_nn: inner dim mismatch");
      break;
    case MatKind::NT:
      m = sa[0]; k = sa[1]; n = sb[0]; name = "matmul_nt";
      if (sb[1] != static_cast<int64_t>(k)) throw UsageError("matmul_nt: inner dim mismatch");
      break;
    case MatKind::TN:
      m = sa[1]; k = sa[0]; n = sb[1]; name = "matmul_tn";
      if (sb[0] != static_cast<int64_t>(k)) throw UsageError("matmul_tn: inner dim mismatch");
      break;
  }
  Tensor out = Tensor::zeros({static_cast<int64_t>(m), static_cast<int64_t>(n)}, t.dtype(a));
  Tensor av = t.value(a), bv = t.value(b);
  auto run = [&](auto tag) {
    using T = decltype(tag);
    const T* ap = av.data<T>().data();
    const T* bp = bv.data<T>().data();
    T* cp = out.data<T>().data();
    switch (kind) {
      case MatKind::NN: kernels::matmul_nn<T>(ap, bp, cp, m, k, n); break;
      case MatKind::NT: kernels::matmul_nt<T>(ap, bp, cp, m, k, n); break;
      case MatKind::TN: kernels::matmul_tn<T>(ap, bp, cp, m, k, n); break;
    }
  };
  if (out.dtype() == DType::f32) run(float{}); else run(double{});
  return t.emplace(
      std::move(out), {a, b},
      [a, b, kind](Tape& tt, Var, Var g) -> std::vector<Var> {
        Var da{}, db{};
        switch (kind) {
          case MatKind::NN:
            if (tt.requires_grad(a)) da = matmul_nt(tt, g, b);
            if (tt.requires_grad(b)) db = matmul_tn(tt, a, g);
            break;
          case MatKind::NT:
            if (tt.requires_grad(a)) da = matmul_nn(tt, g, b);
            if (tt.requires_grad(b)) db = matmul_tn(tt, g, a);
            break;
          case MatKind::TN:
            if (tt.requires_grad(a)) da = matmul_nt(tt, b, g);
            if (tt.requires_grad(b)) db = matmul_nn(tt, a, g);
            break;
        }
        return {da, db};
      },
      name);
}

struct ChanGeom {
  int64_t n, c, hw;
};

ChanGeom chan_geom(const Shape& s, const char* op) {
  if (s.size() != 4) throw UsageError(std::string(op) + ": input must be NCHW");
  return {s[0], s[1], s[2] * s[3]};
}

template <class T>
void channel_scale_eval(const ChanGeom& g, std::span<const T> x, std::span<const T> gain,
                        std::span<T> y) {
  for (int64_t in = 0; in < g.n; ++in)
    for (int64_t c = 0; c < g.c; ++c)
      kernels::vscale<T>(x.data() + (in * g.c + c) * g.hw, gain[c],
                         y.data() + (in * g.c + c) * g.hw, g.hw);
}

template <class T>
void channel_dot_eval(const ChanGeom& g, std::span<const T> a, std::span<const T> b,
                      std::span<T> out) {
  for (int64_t c = 0; c < g.c; ++c) out[c] = T{};
  for (int64_t in = 0; in < g.n; ++in)
    for (int64_t c = 0; c < g.c; ++c)
      out[c] += kernels::vdot<T>(a.data() + (in * g.c + c) * g.hw,
                                 b.data() + (in * g.c + c) * g.hw, g.hw);
}

struct GroupGeom {
  int64_t n, groups, span;  // span = channels-per-group * H * W
};

GroupGeom group_geom(const Shape& s, int64_t groups, const char* op) {
  ChanGeom cg = chan_geom(s, op);
  if (groups < 1 || cg.c % groups != 0)
    throw ConfigError(std::string(op) + ": groups must divide channel count");
  return {cg.n, groups, (cg.c / groups) * cg.hw};
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.defined()) throw UsageError("leaf: undefined tensor");
  nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad,
                        requires_grad ? "leaf" : "const"});
  return Var{static_cast<int32_t>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw UsageError("invalid tape var");
  return nodes_[static_cast<size_t>(v.id)];
}

Tensor Tape::value(Var v) const { return node(v).value; }
const Shape& Tape::shape(Var v) const { return node(v).value.shape(); }
DType Tape::dtype(Var v) const { return node(v).value.dtype(); }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
const char* Tape::op_name(Var v) const { return node(v).op; }

Var Tape::emplace(Tensor value, std::vector<Var> parents, Vjp vjp, const char* op) {
  bool rg = false;
  for (Var p : parents) {
    const Node& pn = node(p);
    rg = rg || pn.requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(vjp), rg, op});
  return Var{static_cast<int32_t>(nodes_.size()) - 1};
}

std::vector<Var> Tape::grad(Var scalar, std::span<const Var> wrt) {
  const Node& sn = node(scalar);
  if (sn.value.numel() != 1) throw UsageError("grad: output must be a scalar");
  const size_t frontier = nodes_.size();
  std::vector<Var> adjoint(frontier);
  if (sn.requires_grad) {
    adjoint[static_cast<size_t>(scalar.id)] =
        constant(Tensor::full(sn.value.shape(), 1.0, sn.value.dtype()));
    for (int32_t id = scalar.id; id >= 0; --id) {
      Var av = adjoint[static_cast<size_t>(id)];
      if (!av.valid()) continue;
      const Node& nd = nodes_[static_cast<size_t>(id)];
      if (!nd.vjp || !nd.requires_grad) continue;
      std::vector<Var> contribs = nd.vjp(*this, Var{id}, av);
      if (contribs.size() != nd.parents.size())
        throw UsageError(std::string("vjp arity mismatch in op ") + nd.op);
      for (size_t i = 0; i < contribs.size(); ++i) {
        Var p = nd.parents[i];
        if (!p.valid() || !contribs[i].valid()) continue;
        if (!nodes_[static_cast<size_t>(p.id)].requires_grad) continue;
        Var& slot = adjoint[static_cast<size_t>(p.id)];
        slot = slot.valid() ? add(*this, slot, contribs[i]) : contribs[i];
      }
    }
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    node(w);
    if (static_cast<size_t>(w.id) < frontier && adjoint[static_cast<size_t>(w.id)].valid())
      out.push_back(adjoint[static_cast<size_t>(w.id)]);
    else
      out.push_back(constant(Tensor::zeros(shape(w), dtype(w))));
  }
  return out;
}

Var Tape::grad1(Var scalar, Var wrt) {
  Var arr[1] = {wrt};
  return grad(scalar, arr)[0];
}

std::vector<std::pair<std::string, int>> Tape::op_histogram() const {
  std::map<std::string, int> m;
  for (const Node& n : nodes_) m[n.op] += 1;
  return {m.begin(), m.end()};
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Var channel_untile(Tape& t, Var x, int64_t repeat);
Var gap_broadcast(Tape& t, Var v, Shape nchw);

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t, a, b, "add");
  return t.emplace(binary_eval('+', t.value(a), t.value(b)), {a, b},
                   [](Tape&, Var, Var g) -> std::vector<Var> { return {g, g}; }, "add");
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t, a, b, "sub");
  return t.emplace(binary_eval('-', t.value(a), t.value(b)), {a, b},
                   [](Tape& tt, Var, Var g) -> std::vector<Var> { return {g, neg(tt, g)}; },
                   "sub");
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t, a, b, "mul");
  return t.emplace(binary_eval('*', t.value(a), t.value(b)), {a, b},
                   [a, b](Tape& tt, Var, Var g) -> std::vector<Var> {
                     Var da{}, db{};
                     if (tt.requires_grad(a)) da = mul(tt, g, b);
                     if (tt.requires_grad(b)) db = mul(tt, g, a);
                     return {da, db};
                   },
                   "mul");
}

Var scale(Tape& t, Var a, double s) {
  Tensor v = t.value(a);
  Tensor out = Tensor::zeros(v.shape(), v.dtype());
  if (v.dtype() == DType::f32)
    kernels::vscale<float>(v.data<float>().data(), static_cast<float>(s),
                           out.data<float>().data(), static_cast<size_t>(v.numel()));
  else
    kernels::vscale<double>(v.data<double>().data(), s, out.data<double>().data(),
                            static_cast<size_t>(v.numel()));
  return t.emplace(std::move(out), {a},
                   [s](Tape& tt, Var, Var g) -> std::vector<Var> { return {scale(tt, g, s)}; },
                   "scale");
}

Var add_const(Tape& t, Var a, double c) {
  Tensor v = t.value(a);
  Tensor out = Tensor::zeros(v.shape(), v.dtype());
  if (v.dtype() == DType::f32) {
    auto s = v.data<float>();
    auto d = out.data<float>();
    for (size_t i = 0; i < s.size(); ++i) d[i] = s[i] + static_cast<float>(c);
  } else {
    auto s = v.data<double>();
    auto d = out.data<double>();
    for (size_t i = 0; i < s.size(); ++i) d[i] = s[i] + c;
  }
  return t.emplace(std::move(out), {a},
                   [](Tape&, Var, Var g) -> std::vector<Var> { return {g}; }, "add_const");
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var powc(Tape& t, Var a, double p) {
  Tensor v = t.value(a);
  Tensor out = Tensor::zeros(v.shape(), v.dtype());
  if (v.dtype() == DType::f32) {
    auto s = v.data<float>();
    auto d = out.data<float>();
    for (size_t i = 0; i < s.size(); ++i) d[i] = std::pow(s[i], static_cast<float>(p));
  } else {
    auto s = v.data<double>();
    auto d = out.data<double>();
    for (size_t i = 0; i < s.size(); ++i) d[i] = std::pow(s[i], p);
  }
  return t.emplace(std::move(out), {a},
                   [a, p](Tape& tt, Var, Var g) -> std::vector<Var> {
                     return {mul(tt, g, scale(tt, powc(tt, a, p - 1.0), p))};
                   },
                   "powc");
}

Var exp_op(Tape& t, Var a) { return unary(t, a, UKind::Exp); }
Var log_op(Tape& t, Var a) { return unary(t, a, UKind::Log); }
Var gelu(Tape& t, Var a) { return unary(t, a, UKind::Gelu); }
Var relu(Tape& t, Var a) { return unary(t, a, UKind::Relu); }

Var reshape(Tape& t, Var a, Shape shape) {
  Shape old = t.shape(a);
  return t.emplace(t.value(a).reshaped(std::move(shape)), {a},
                   [old](Tape& tt, Var, Var g) -> std::vector<Var> {
                     return {reshape(tt, g, old)};
                   },
                   "reshape");
}

Var detach(Tape& t, Var a) { return t.constant(t.value(a)); }

Var sum_all(Tape& t, Var a) {
  Tensor v = t.value(a);
  double s = v.dtype() == DType::f32
                 ? static_cast<double>(kernels::vsum<float>(v.data<float>().data(),
                                                            static_cast<size_t>(v.numel())))
                 : kernels::vsum<double>(v.data<double>().data(), static_cast<size_t>(v.numel()));
  Shape sh = t.shape(a);
  return t.emplace(Tensor::scalar(s, v.dtype()), {a},
                   [sh](Tape& tt, Var, Var g) -> std::vector<Var> {
                     return {scalar_broadcast(tt, g, sh)};
                   },
                   "sum_all");
}

Var mean_all(Tape& t, Var a) {
  return scale(t, sum_all(t, a), 1.0 / static_cast<double>(t.value(a).numel()));
}

Var sumsq(Tape& t, Var a) { return sum_all(t, mul(t, a, a)); }

Var row_sum(Tape& t, Var a) {
  const Shape& s = t.shape(a);
  if (s.size() != 2) throw UsageError("row_sum: rank-2 tensor required");
  Tensor v = t.value(a);
  Tensor out = Tensor::zeros({s[0]}, v.dtype());
  for (int64_t i = 0; i < s[0]; ++i) {
    if (v.dtype() == DType::f32)
      out.data<float>()[static_cast<size_t>(i)] = kernels::vsum<float>(
          v.data<float>().data() + i * s[1], static_cast<size_t>(s[1]));
    else
      out.data<double>()[static_cast<size_t>(i)] = kernels::vsum<double>(
          v.data<double>().data() + i * s[1], static_cast<size_t>(s[1]));
  }
  int64_t cols = s[1];
  return t.emplace(std::move(out), {a},
                   [cols](Tape& tt, Var, Var g) -> std::vector<Var> {
                     return {row_broadcast(tt, g, cols)};
                   },
                   "row_sum");
}

Var row_broadcast(Tape& t, Var a, int64_t cols) {
  const Shape& s = t.shape(a);
  if (s.size() != 1) throw UsageError("row_broadcast: rank-1 tensor required");
  Tensor v = t.value(a);
  Tensor out = Tensor::zeros({s[0], cols}, v.dtype());
  for (int64_t i = 0; i < s[0]; ++i)
    for (int64_t j = 0; j < cols; ++j) out.set(i * cols + j, v.at(i));
  return t.emplace(std::move(out), {a},
                   [](Tape& tt, Var, Var g) -> std::vector<Var> { return {row_sum(tt, g)}; },
                   "row_broadcast");
}

Var row_max_detached(Tape& t, Var a) {
  const Shape& s = t.shape(a);
  if (s.size() != 2) throw UsageError("row_max: rank-2 tensor required");
  Tensor v = t.value(a);
  Tensor out = Tensor::zeros({s[0]}, v.dtype());
  for (int64_t i = 0; i < s[0]; ++i) {
    double m = v.at(i * s[1]);
    for (int64_t j = 1; j < s[1]; ++j) m = std::max(m, v.at(i * s[1] + j));
    out.set(i, m);
  }
  return t.constant(std::move(out));
}

Var logsumexp_rows(Tape& t, Var a) {
  const Shape& s = t.shape(a);
  if (s.size() != 2 || s[1] < 1) throw UsageError("logsumexp: nonempty rank-2 tensor required");
  // Shifting by a detached row max leaves the exact value and derivative
  // unchanged while preventing overflow.
  Var m = row_max_detached(t, a);
  Var shifted = sub(t, a, row_broadcast(t, m, s[1]));
  return add(t, log_op(t, row_sum(t, exp_op(t, shifted))), m);
}

Var row_scale(Tape& t, Var x, Var s) {
  check_same_dtype(t, x, s, "row_scale");
  const Shape& xs = t.shape(x);
  const Shape& ss = t.shape(s);
  if (xs.empty() || ss.size() != 1 || ss[0] != xs[0])
    throw UsageError("row_scale: scale must be rank-1 matching first dim");
  Tensor xv = t.value(x), sv = t.value(s);
  Tensor out = Tensor::zeros(xs, xv.dtype());
  const int64_t rows = xs[0];
  const int64_t rlen = xv.numel() / rows;
  for (int64_t i = 0; i < rows; ++i) {
    if (xv.dtype() == DType::f32)
      kernels::vscale<float>(xv.data<float>().data() + i * rlen,
                             static_cast<float>(sv.at(i)),
                             out.data<float>().data() + i * rlen, static_cast<size_t>(rlen));
    else
      kernels::vscale<double>(xv.data<double>().data() + i * rlen, sv.at(i),
                              out.data<double>().data() + i * rlen, static_cast<size_t>(rlen));
  }
  return t.emplace(std::move(out), {x, s},
                   [x, s](Tape& tt, Var, Var g) -> std::vector<Var> {
                     Var dx{}, ds{};
                     if (tt.requires_grad(x)) dx = row_scale(tt, g, s);
                     if (tt.requires_grad(s)) ds = row_dot(tt, g, x);
                     return {dx, ds};
                   },
                   "row_scale");
}

Var row_dot(Tape& t, Var a, Var b) {
  check_same_shape(t, a, b, "row_dot");
  const Shape& s = t.shape(a);
  if (s.empty()) throw UsageError("row_dot: rank >= 1 required");
  Tensor av = t.value(a), bv = t.value(b);
  const int64_t rows = s[0];
  const int64_t rlen = av.numel() / rows;
  Tensor out = Tensor::zeros({rows}, av.dtype());
  for (int64_t i = 0; i < rows; ++i) {
    if (av.dtype() == DType::f32)
      out.data<float>()[static_cast<size_t>(i)] =
          kernels::vdot<float>(av.data<float>().data() + i * rlen,
                               bv.data<float>().data() + i * rlen, static_cast<size_t>(rlen));
    else
      out.data<double>()[static_cast<size_t>(i)] =
          kernels::vdot<double>(av.data<double>().data() + i * rlen,
                                bv.data<double>().data() + i * rlen, static_cast<size_t>(rlen));
  }
  return t.emplace(std::move(out), {a, b},
                   [a, b](Tape& tt, Var, Var g) -> std::vector<Var> {
                     Var da{}, db{};
                     if (tt.requires_grad(a)) da = row_scale(tt, b, g);
                     if (tt.requires_grad(b)) db = row_scale(tt, a, g);
                     return {da, db};
                   },
                   "row_dot");
}

namespace {
Var scatter_class(Tape& t, Var g, std::shared_ptr<const std::vector<int>> idx, int64_t classes);

Var take_class_impl(Tape& t, Var logits, std::shared_ptr<const std::vector<int>> idx) {
  const Shape& s = t.shape(logits);
  if (s.size() != 2) throw UsageError("take_class: rank-2 logits required");
  if (static_cast<int64_t>(idx->size()) != s[0])
    throw UsageError("take_class: index count must match rows");
  Tensor v = t.value(logits);
  Tensor out = Tensor::zeros({s[0]}, v.dtype());
  for (int64_t i = 0; i < s[0]; ++i) {
    int c = (*idx)[static_cast<size_t>(i)];
    if (c < 0 || c >= s[1]) throw UsageError("take_class: class index out of range");
    out.set(i, v.at(i * s[1] + c));
  }
  int64_t classes = s[1];
  return t.emplace(std::move(out), {logits},
                   [idx, classes](Tape& tt, Var, Var g) -> std::vector<Var> {
                     return {scatter_class(tt, g, idx, classes)};
                   },
                   "take_class");
}

Var scatter_class(Tape& t, Var g, std::shared_ptr<const std::vector<int>> idx, int64_t classes) {
  const Shape& s = t.shape(g);
  if (s.size() != 1) throw UsageError("scatter_class: rank-1 input required");
  Tensor v = t.value(g);
  Tensor out = Tensor::zeros({s[0], classes}, v.dtype());
  for (int64_t i = 0; i < s[0]; ++i)
    out.set(i * classes + (*idx)[static_cast<size_t>(i)], v.at(i));
  return t.emplace(std::move(out), {g},
                   [idx](Tape& tt, Var, Var u) -> std::vector<Var> {
                     return {take_class_impl(tt, u, idx)};
                   },
                   "scatter_class");
}
}  // namespace

Var take_class(Tape& t, Var logits, std::vector<int> idx) {
  return take_class_impl(t, logits, std::make_shared<const std::vector<int>>(std::move(idx)));
}

Var matmul_nn(Tape& t, Var a, Var b) { return matmul_op(t, a, b, MatKind::NN); }
Var matmul_nt(Tape& t, Var a, Var b) { return matmul_op(t, a, b, MatKind::NT); }
Var matmul_tn(Tape& t, Var a, Var b) { return matmul_op(t, a, b, MatKind::TN); }

Var conv2d(Tape& t, Var x, Var k, int64_t stride, int64_t pad) {
  check_same_dtype(t, x, k, "conv2d");
  const Shape& xs = t.shape(x);
  const Shape& ks = t.shape(k);
  if (xs.size() != 4 || ks.size() != 4)
    throw UsageError("conv2d: input must be NCHW and kernel OIHW");
  if (xs[1] != ks[1]) throw UsageError("conv2d: channel mismatch");
  auto cs = kernels::Conv2dShape::make(xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride,
                                       pad);
  return conv_fwd_op(t, x, k, cs);
}

Var channel_scale(Tape& t, Var x, Var gain) {
  check_same_dtype(t, x, gain, "channel_scale");
  ChanGeom g = chan_geom(t.shape(x), "channel_scale");
  const Shape& gs = t.shape(gain);
  if (gs.size() != 1 || gs[0] != g.c) throw UsageError("channel_scale: gain must be rank-1 [C]");
  Tensor xv = t.value(x), gv = t.value(gain);
  Tensor out = Tensor::zeros(t.shape(x), xv.dtype());
  if (xv.dtype() == DType::f32)
    channel_scale_eval<float>(g, xv.data<float>(), gv.data<float>(), out.data<float>());
  else
    channel_scale_eval<double>(g, xv.data<double>(), gv.data<double>(), out.data<double>());
  return t.emplace(std::move(out), {x, gain},
                   [x, gain](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     Var dx{}, dg{};
                     if (tt.requires_grad(x)) dx = channel_scale(tt, g2, gain);
                     if (tt.requires_grad(gain)) dg = channel_dot(tt, g2, x);
                     return {dx, dg};
                   },
                   "channel_scale");
}

Var channel_dot(Tape& t, Var a, Var b) {
  check_same_shape(t, a, b, "channel_dot");
  ChanGeom g = chan_geom(t.shape(a), "channel_dot");
  Tensor av = t.value(a), bv = t.value(b);
  Tensor out = Tensor::zeros({g.c}, av.dtype());
  if (av.dtype() == DType::f32)
    channel_dot_eval<float>(g, av.data<float>(), bv.data<float>(), out.data<float>());
  else
    channel_dot_eval<double>(g, av.data<double>(), bv.data<double>(), out.data<double>());
  return t.emplace(std::move(out), {a, b},
                   [a, b](Tape& tt, Var, Var u) -> std::vector<Var> {
                     Var da{}, db{};
                     if (tt.requires_grad(a)) da = channel_scale(tt, b, u);
                     if (tt.requires_grad(b)) db = channel_scale(tt, a, u);
                     return {da, db};
                   },
                   "channel_dot");
}

Var channel_sum(Tape& t, Var x) {
  ChanGeom g = chan_geom(t.shape(x), "channel_sum");
  Tensor xv = t.value(x);
  Tensor out = Tensor::zeros({g.c}, xv.dtype());
  for (int64_t in = 0; in < g.n; ++in) {
    for (int64_t c = 0; c < g.c; ++c) {
      if (xv.dtype() == DType::f32)
        out.data<float>()[static_cast<size_t>(c)] += kernels::vsum<float>(
            xv.data<float>().data() + (in * g.c + c) * g.hw, static_cast<size_t>(g.hw));
      else
        out.data<double>()[static_cast<size_t>(c)] += kernels::vsum<double>(
            xv.data<double>().data() + (in * g.c + c) * g.hw, static_cast<size_t>(g.hw));
    }
  }
  Shape sh = t.shape(x);
  return t.emplace(std::move(out), {x},
                   [sh](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {channel_broadcast(tt, g2, sh)};
                   },
                   "channel_sum");
}

Var channel_broadcast(Tape& t, Var v, Shape nchw) {
  ChanGeom g = chan_geom(nchw, "channel_broadcast");
  const Shape& vs = t.shape(v);
  if (vs.size() != 1 || vs[0] != g.c) throw UsageError("channel_broadcast: rank-1 [C] required");
  Tensor vv = t.value(v);
  Tensor out = Tensor::zeros(nchw, vv.dtype());
  auto fill = [&](auto tag) {
    using T = decltype(tag);
    auto src = vv.data<T>();
    auto dst = out.data<T>();
    for (int64_t in = 0; in < g.n; ++in)
      for (int64_t c = 0; c < g.c; ++c)
        std::fill_n(dst.data() + (in * g.c + c) * g.hw, g.hw, src[static_cast<size_t>(c)]);
  };
  if (vv.dtype() == DType::f32) fill(float{}); else fill(double{});
  return t.emplace(std::move(out), {v},
                   [](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {channel_sum(tt, g2)};
                   },
                   "channel_broadcast");
}

Var channel_tile(Tape& t, Var x, int64_t repeat) {
  if (repeat < 1) throw UsageError("channel_tile: repeat must be >= 1");
  ChanGeom g = chan_geom(t.shape(x), "channel_tile");
  const Shape& s = t.shape(x);
  Tensor xv = t.value(x);
  Tensor out = Tensor::zeros({s[0], s[1] * repeat, s[2], s[3]}, xv.dtype());
  const size_t plane_bytes = static_cast<size_t>(g.hw) * dtype_size(xv.dtype());
  for (int64_t in = 0; in < g.n; ++in)
    for (int64_t r = 0; r < repeat; ++r)
      for (int64_t c = 0; c < g.c; ++c)
        std::memcpy(static_cast<std::byte*>(out.raw()) +
                        static_cast<size_t>(((in * repeat + r) * g.c + c) * g.hw) *
                            dtype_size(xv.dtype()),
                    static_cast<const std::byte*>(xv.raw()) +
                        static_cast<size_t>((in * g.c + c) * g.hw) * dtype_size(xv.dtype()),
                    plane_bytes);
  return t.emplace(std::move(out), {x},
                   [repeat](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {channel_untile(tt, g2, repeat)};
                   },
                   "channel_tile");
}

Var channel_untile(Tape& t, Var x, int64_t repeat) {
  ChanGeom g = chan_geom(t.shape(x), "channel_untile");
  const Shape& s = t.shape(x);
  if (s[1] % repeat != 0) throw UsageError("channel_untile: channels not divisible by repeat");
  const int64_t cin = s[1] / repeat;
  Tensor xv = t.value(x);
  Tensor out = Tensor::zeros({s[0], cin, s[2], s[3]}, xv.dtype());
  const int64_t hw = s[2] * s[3];
  auto accum = [&](auto tag) {
    using T = decltype(tag);
    auto src = xv.data<T>();
    auto dst = out.data<T>();
    for (int64_t in = 0; in < s[0]; ++in)
      for (int64_t r = 0; r < repeat; ++r)
        for (int64_t c = 0; c < cin; ++c)
          kernels::vaxpy<T>(T(1), src.data() + ((in * repeat + r) * cin + c) * hw,
                            dst.data() + (in * cin + c) * hw, static_cast<size_t>(hw));
  };
  if (xv.dtype() == DType::f32) accum(float{}); else accum(double{});
  return t.emplace(std::move(out), {x},
                   [repeat](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {channel_tile(tt, g2, repeat)};
                   },
                   "channel_untile");
}

Var group_mean(Tape& t, Var x, int64_t groups) {
  GroupGeom g = group_geom(t.shape(x), groups, "group_mean");
  Tensor xv = t.value(x);
  Tensor out = Tensor::zeros({g.n, g.groups}, xv.dtype());
  for (int64_t in = 0; in < g.n; ++in)
    for (int64_t gi = 0; gi < g.groups; ++gi) {
      int64_t off = (in * g.groups + gi) * g.span;
      double s = xv.dtype() == DType::f32
                     ? static_cast<double>(kernels::vsum<float>(
                           xv.data<float>().data() + off, static_cast<size_t>(g.span)))
                     : kernels::vsum<double>(xv.data<double>().data() + off,
                                             static_cast<size_t>(g.span));
      out.set(in * g.groups + gi, s / static_cast<double>(g.span));
    }
  Shape sh = t.shape(x);
  double inv_span = 1.0 / static_cast<double>(g.span);
  return t.emplace(std::move(out), {x},
                   [sh, groups, inv_span](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {group_broadcast(tt, scale(tt, g2, inv_span), sh, groups)};
                   },
                   "group_mean");
}

Var group_broadcast(Tape& t, Var v, Shape nchw, int64_t groups) {
  GroupGeom g = group_geom(nchw, groups, "group_broadcast");
  const Shape& vs = t.shape(v);
  if (vs.size() != 2 || vs[0] != g.n || vs[1] != g.groups)
    throw UsageError("group_broadcast: [N,G] input required");
  Tensor vv = t.value(v);
  Tensor out = Tensor::zeros(nchw, vv.dtype());
  auto fill = [&](auto tag) {
    using T = decltype(tag);
    auto src = vv.data<T>();
    auto dst = out.data<T>();
    for (int64_t in = 0; in < g.n; ++in)
      for (int64_t gi = 0; gi < g.groups; ++gi)
        std::fill_n(dst.data() + (in * g.groups + gi) * g.span, g.span,
                    src[static_cast<size_t>(in * g.groups + gi)]);
  };
  if (vv.dtype() == DType::f32) fill(float{}); else fill(double{});
  double span = static_cast<double>(g.span);
  return t.emplace(std::move(out), {v},
                   [groups, span](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {scale(tt, group_mean(tt, g2, groups), span)};
                   },
                   "group_broadcast");
}

Var groupnorm_biasfree(Tape& t, Var x, Var gain, int64_t groups, double eps) {
  const Shape sh = t.shape(x);
  GroupGeom gg = group_geom(sh, groups, "groupnorm");
  (void)gg;
  Var mu = group_mean(t, x, groups);
  Var centered = sub(t, x, group_broadcast(t, mu, sh, groups));
  Var variance = group_mean(t, mul(t, centered, centered), groups);
  Var inv_std = powc(t, add_const(t, variance, eps), -0.5);
  Var normalized = mul(t, centered, group_broadcast(t, inv_std, sh, groups));
  return channel_scale(t, normalized, gain);
}

Var global_avg_pool(Tape& t, Var x) {
  ChanGeom g = chan_geom(t.shape(x), "global_avg_pool");
  Tensor xv = t.value(x);
  Tensor out = Tensor::zeros({g.n, g.c}, xv.dtype());
  for (int64_t in = 0; in < g.n; ++in)
    for (int64_t c = 0; c < g.c; ++c) {
      int64_t off = (in * g.c + c) * g.hw;
      double s = xv.dtype() == DType::f32
                     ? static_cast<double>(kernels::vsum<float>(
                           xv.data<float>().data() + off, static_cast<size_t>(g.hw)))
                     : kernels::vsum<double>(xv.data<double>().data() + off,
                                             static_cast<size_t>(g.hw));
      out.set(in * g.c + c, s / static_cast<double>(g.hw));
    }
  Shape sh = t.shape(x);
  return t.emplace(std::move(out), {x},
                   [sh](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {gap_broadcast(tt, g2, sh)};
                   },
                   "global_avg_pool");
}

Var gap_broadcast(Tape& t, Var v, Shape nchw) {
  ChanGeom g = chan_geom(nchw, "gap_broadcast");
  const Shape& vs = t.shape(v);
  if (vs.size() != 2 || vs[0] != g.n || vs[1] != g.c)
    throw UsageError("gap_broadcast: [N,C] input required");
  Tensor vv = t.value(v);
  Tensor out = Tensor::zeros(nchw, vv.dtype());
  const double inv_hw = 1.0 / static_cast<double>(g.hw);
  auto fill = [&](auto tag) {
    using T = decltype(tag);
    auto src = vv.data<T>();
    auto dst = out.data<T>();
    for (int64_t in = 0; in < g.n; ++in)
      for (int64_t c = 0; c < g.c; ++c)
        std::fill_n(dst.data() + (in * g.c + c) * g.hw, g.hw,
                    static_cast<T>(src[static_cast<size_t>(in * g.c + c)] * inv_hw));
  };
  if (vv.dtype() == DType::f32) fill(float{}); else fill(double{});
  double hw = static_cast<double>(g.hw);
  return t.emplace(std::move(out), {v},
                   [hw](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {scale(tt, global_avg_pool(tt, g2), hw)};
                   },
                   "gap_broadcast");
}

Var avg_pool2(Tape& t, Var x) {
  PoolGeom g = pool2_geom(t.shape(x));
  Tensor xv = t.value(x);
  Tensor out = Tensor::zeros({g.n, g.c, g.ho, g.wo}, xv.dtype());
  if (xv.dtype() == DType::f32)
    avg_pool2_eval<float>(g, xv.data<float>(), out.data<float>());
  else
    avg_pool2_eval<double>(g, xv.data<double>(), out.data<double>());
  Shape sh = t.shape(x);
  return t.emplace(std::move(out), {x},
                   [sh](Tape& tt, Var, Var g2) -> std::vector<Var> {
                     return {avg_unpool2(tt, g2, sh)};
                   },
                   "avg_pool2");
}

namespace {
Var max_gather(Tape& t, Var u, std::shared_ptr<const std::vector<int64_t>> idx, Shape out_shape);

Var max_scatter(Tape& t, Var g, std::shared_ptr<const std::vector<int64_t>> idx,
                Shape in_shape) {
  Tensor gv = t.value(g);
  Tensor out = Tensor::zeros(in_shape, gv.dtype());
  for (int64_t i = 0; i < gv.numel(); ++i) {
    int64_t j = (*idx)[static_cast<size_t>(i)];
    out.set(j, out.at(j) + gv.at(i));
  }
  Shape gs = t.shape(g);
  return t.emplace(std::move(out), {g},
                   [idx, gs](Tape& tt, Var, Var u) -> std::vector<Var> {
                     return {max_gather(tt, u, idx, gs)};
                   },
                   "max_scatter");
}

Var max_gather(Tape& t, Var u, std::shared_ptr<const std::vector<int64_t>> idx, Shape out_shape) {
  Tensor uv = t.value(u);
  Tensor out = Tensor::zeros(out_shape, uv.dtype());
  for (int64_t i = 0; i < out.numel(); ++i) out.set(i, uv.at((*idx)[static_cast<size_t>(i)]));
  Shape us = t.shape(u);
  return t.emplace(std::move(out), {u},
                   [idx, us](Tape& tt, Var, Var g) -> std::vector<Var> {
                     return {max_scatter(tt, g, idx, us)};
                   },
                   "max_gather");
}
}  // namespace

Var max_pool(Tape& t, Var x, int64_t k, int64_t stride, int64_t pad) {
  const Shape& s = t.shape(x);
  if (s.size() != 4) throw UsageError("max_pool: NCHW input required");
  const int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  const int64_t ho = (h + 2 * pad - k) / stride + 1;
  const int64_t wo = (w + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw UsageError("max_pool: window larger than padded input");
  Tensor xv = t.value(x);
  Tensor out = Tensor::zeros({n, c, ho, wo}, xv.dtype());
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c * ho * wo));
  for (int64_t nc = 0; nc < n * c; ++nc) {
    for (int64_t oh = 0; oh < ho; ++oh) {
      for (int64_t ow = 0; ow < wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        int64_t best_i = -1;
        for (int64_t dh = 0; dh < k; ++dh) {
          for (int64_t dw = 0; dw < k; ++dw) {
            int64_t ih = oh * stride + dh - pad, iw = ow * stride + dw - pad;
            if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
            double v = xv.at(nc * h * w + ih * w + iw);
            if (v > best) {
              best = v;
              best_i = nc * h * w + ih * w + iw;
            }
          }
        }
        if (best_i < 0) throw UsageError("max_pool: empty window");
        int64_t o = nc * ho * wo + oh * wo + ow;
        out.set(o, best);
        (*idx)[static_cast<size_t>(o)] = best_i;
      }
    }
  }
  Shape in_shape = s;
  std::shared_ptr<const std::vector<int64_t>> cidx = idx;
  return t.emplace(std::move(out), {x},
                   [cidx, in_shape](Tape& tt, Var, Var g) -> std::vector<Var> {
                     return {max_scatter(tt, g, cidx, in_shape)};
                   },
                   "max_pool");
}

}  // namespace jescore::ad
