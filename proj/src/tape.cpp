#include "supnerf/tape.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace supnerf {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_tripwire{false};
#else
std::atomic<bool> g_tripwire{true};
#endif

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using CArrMap = Eigen::Map<const Eigen::ArrayXd>;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     Tensor::shape_str(a.shape()) + " vs " +
                     Tensor::shape_str(b.shape()));
}

struct AxisSplit {
  std::int64_t outer = 1, mid = 1, inner = 1;
};

AxisSplit split_axis(const std::vector<std::int64_t>& shape, std::int64_t axis) {
  AxisSplit s;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(shape.size()); ++i) {
    if (i < axis)
      s.outer *= shape[i];
    else if (i == axis)
      s.mid = shape[i];
    else
      s.inner *= shape[i];
  }
  return s;
}

}  // namespace

void set_nan_tripwire(bool enabled) { g_tripwire.store(enabled); }
bool nan_tripwire_enabled() { return g_tripwire.load(); }

Var Tape::emplace(Tensor value, bool needs_grad, BackFn fn, const char* op) {
  if (g_tripwire.load() && !value.all_finite())
    throw NonFiniteError(std::string("non-finite value produced by op '") + op +
                         "'");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(fn);
  n.op = op;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buf(std::int32_t id) {
  Node& n = nodes_[id];
  if (n.grad.numel() == 0 && n.value.numel() > 0)
    n.grad = Tensor::zeros(n.value.shape());
  else if (n.grad.numel() == 0)
    n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(std::int32_t id, const double* g, std::int64_t n) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return;
  Tensor& buf = grad_buf(id);
  ArrMap(buf.data(), n) += CArrMap(g, n);
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.numel() == 0) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return emplace(std::move(value), requires_grad, nullptr, "leaf");
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  check_same_shape("add", va, vb);
  Tensor out(va.shape());
  ArrMap(out.data(), out.numel()) =
      CArrMap(va.data(), va.numel()) + CArrMap(vb.data(), vb.numel());
  bool ng = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return emplace(std::move(out), ng,
                 [ai, bi](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   t.accumulate(ai, g.data(), g.numel());
                   t.accumulate(bi, g.data(), g.numel());
                 },
                 "add");
}

Var Tape::sub(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  check_same_shape("sub", va, vb);
  Tensor out(va.shape());
  ArrMap(out.data(), out.numel()) =
      CArrMap(va.data(), va.numel()) - CArrMap(vb.data(), vb.numel());
  bool ng = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return emplace(std::move(out), ng,
                 [ai, bi](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   t.accumulate(ai, g.data(), g.numel());
                   if (!t.nodes_[bi].needs_grad) return;
                   Tensor neg(g.shape());
                   ArrMap(neg.data(), neg.numel()) =
                       -CArrMap(g.data(), g.numel());
                   t.accumulate(bi, neg.data(), neg.numel());
                 },
                 "sub");
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  check_same_shape("mul", va, vb);
  Tensor out(va.shape());
  ArrMap(out.data(), out.numel()) =
      CArrMap(va.data(), va.numel()) * CArrMap(vb.data(), vb.numel());
  bool ng = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return emplace(std::move(out), ng,
                 [ai, bi](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   std::int64_t n = g.numel();
                   if (t.nodes_[ai].needs_grad) {
                     Tensor ga(g.shape());
                     ArrMap(ga.data(), n) =
                         CArrMap(g.data(), n) *
                         CArrMap(t.value(Var{bi}).data(), n);
                     t.accumulate(ai, ga.data(), n);
                   }
                   if (t.nodes_[bi].needs_grad) {
                     Tensor gb(g.shape());
                     ArrMap(gb.data(), n) =
                         CArrMap(g.data(), n) *
                         CArrMap(t.value(Var{ai}).data(), n);
                     t.accumulate(bi, gb.data(), n);
                   }
                 },
                 "mul");
}

Var Tape::div(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  check_same_shape("div", va, vb);
  Tensor out(va.shape());
  ArrMap(out.data(), out.numel()) =
      CArrMap(va.data(), va.numel()) / CArrMap(vb.data(), vb.numel());
  bool ng = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return emplace(std::move(out), ng,
                 [ai, bi](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   const Tensor& vo = t.nodes_[self].value;
                   std::int64_t n = g.numel();
                   CArrMap bm(t.value(Var{bi}).data(), n);
                   if (t.nodes_[ai].needs_grad) {
                     Tensor ga(g.shape());
                     ArrMap(ga.data(), n) = CArrMap(g.data(), n) / bm;
                     t.accumulate(ai, ga.data(), n);
                   }
                   if (t.nodes_[bi].needs_grad) {
                     Tensor gb(g.shape());
                     ArrMap(gb.data(), n) = -CArrMap(g.data(), n) *
                                            CArrMap(vo.data(), n) / bm;
                     t.accumulate(bi, gb.data(), n);
                   }
                 },
                 "div");
}

Var Tape::square_diff(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  check_same_shape("square_diff", va, vb);
  Tensor out(va.shape());
  std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    double d = va[i] - vb[i];
    out[i] = d * d;
  }
  bool ng = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return emplace(std::move(out), ng,
                 [ai, bi](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   std::int64_t n = g.numel();
                   Tensor d(g.shape());
                   ArrMap(d.data(), n) =
                       2.0 * CArrMap(g.data(), n) *
                       (CArrMap(t.value(Var{ai}).data(), n) -
                        CArrMap(t.value(Var{bi}).data(), n));
                   t.accumulate(ai, d.data(), n);
                   if (t.nodes_[bi].needs_grad) {
                     ArrMap(d.data(), n) = -CArrMap(d.data(), n);
                     t.accumulate(bi, d.data(), n);
                   }
                 },
                 "square_diff");
}

Var Tape::add_const(Var a, double c) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  ArrMap(out.data(), out.numel()) = CArrMap(va.data(), va.numel()) + c;
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   t.accumulate(ai, g.data(), g.numel());
                 },
                 "add_const");
}

Var Tape::mul_const(Var a, double c) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  ArrMap(out.data(), out.numel()) = CArrMap(va.data(), va.numel()) * c;
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, c](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor ga(g.shape());
                   ArrMap(ga.data(), ga.numel()) =
                       CArrMap(g.data(), g.numel()) * c;
                   t.accumulate(ai, ga.data(), ga.numel());
                 },
                 "mul_const");
}

// ------------------------------------------------------------------- unary

#define SUPN_UNARY(NAME, OPNAME, FWD_EXPR, BWD_EXPR)                         \
  Var Tape::NAME(Var a) {                                                    \
    const Tensor& va = value(a);                                             \
    Tensor out(va.shape());                                                  \
    std::int64_t n = out.numel();                                            \
    for (std::int64_t i = 0; i < n; ++i) {                                   \
      double x = va[i];                                                      \
      (void)x;                                                               \
      out[i] = (FWD_EXPR);                                                   \
    }                                                                        \
    auto ai = a.id;                                                          \
    return emplace(std::move(out), requires_grad(a),                         \
                   [ai](Tape& t, std::int32_t self) {                        \
                     const Tensor& g = t.nodes_[self].grad;                  \
                     const Tensor& vx = t.value(Var{ai});                    \
                     const Tensor& vy = t.nodes_[self].value;                \
                     (void)vy;                                               \
                     std::int64_t n = g.numel();                             \
                     Tensor ga(g.shape());                                   \
                     for (std::int64_t i = 0; i < n; ++i) {                  \
                       double x = vx[i];                                     \
                       double y = vy[i];                                     \
                       (void)x;                                              \
                       (void)y;                                              \
                       ga[i] = g[i] * (BWD_EXPR);                            \
                     }                                                       \
                     t.accumulate(ai, ga.data(), n);                         \
                   },                                                        \
                   OPNAME);                                                  \
  }

SUPN_UNARY(relu, "relu", x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0)
SUPN_UNARY(sigmoid, "sigmoid", 1.0 / (1.0 + std::exp(-x)), y * (1.0 - y))
SUPN_UNARY(tanh_op, "tanh", std::tanh(x), 1.0 - y * y)
SUPN_UNARY(softplus, "softplus",
           x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x))),
           1.0 / (1.0 + std::exp(-x)))
SUPN_UNARY(exp_op, "exp", std::exp(x), y)
SUPN_UNARY(log_op, "log", std::log(x), 1.0 / x)
SUPN_UNARY(sin_op, "sin", std::sin(x), std::cos(x))
SUPN_UNARY(cos_op, "cos", std::cos(x), -std::sin(x))
SUPN_UNARY(sqrt_op, "sqrt", std::sqrt(x),
           0.5 / (y > 1e-12 ? y : 1e-12))

#undef SUPN_UNARY

Var Tape::clamp_min(Var a, double lo) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = va[i] > lo ? va[i] : lo;
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, lo](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   const Tensor& vx = t.value(Var{ai});
                   std::int64_t n = g.numel();
                   Tensor ga(g.shape());
                   for (std::int64_t i = 0; i < n; ++i)
                     ga[i] = vx[i] > lo ? g[i] : 0.0;
                   t.accumulate(ai, ga.data(), n);
                 },
                 "clamp_min");
}

Var Tape::clamp_max(Var a, double hi) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = va[i] < hi ? va[i] : hi;
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, hi](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   const Tensor& vx = t.value(Var{ai});
                   std::int64_t n = g.numel();
                   Tensor ga(g.shape());
                   for (std::int64_t i = 0; i < n; ++i)
                     ga[i] = vx[i] < hi ? g[i] : 0.0;
                   t.accumulate(ai, ga.data(), n);
                 },
                 "clamp_max");
}

// ------------------------------------------------------------ linear algebra

Var Tape::matmul(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.extent(1) != vb.extent(0))
    throw ShapeError("matmul: incompatible shapes " +
                     Tensor::shape_str(va.shape()) + " x " +
                     Tensor::shape_str(vb.shape()));
  std::int64_t m = va.extent(0), k = va.extent(1), n = vb.extent(1);
  Tensor out({m, n});
  MatMap(out.data(), m, n).noalias() =
      CMatMap(va.data(), m, k) * CMatMap(vb.data(), k, n);
  bool ng = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return emplace(std::move(out), ng,
                 [ai, bi, m, k, n](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   CMatMap gm(g.data(), m, n);
                   if (t.nodes_[ai].needs_grad) {
                     Tensor ga({m, k});
                     MatMap(ga.data(), m, k).noalias() =
                         gm * CMatMap(t.value(Var{bi}).data(), k, n).transpose();
                     t.accumulate(ai, ga.data(), ga.numel());
                   }
                   if (t.nodes_[bi].needs_grad) {
                     Tensor gb({k, n});
                     MatMap(gb.data(), k, n).noalias() =
                         CMatMap(t.value(Var{ai}).data(), m, k).transpose() * gm;
                     t.accumulate(bi, gb.data(), gb.numel());
                   }
                 },
                 "matmul");
}

Var Tape::transpose(Var a) {
  const Tensor& va = value(a);
  if (va.rank() != 2)
    throw ShapeError("transpose: rank-2 required, got " +
                     Tensor::shape_str(va.shape()));
  std::int64_t m = va.extent(0), n = va.extent(1);
  Tensor out({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = va.at(i, j);
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, m, n](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor ga({m, n});
                   for (std::int64_t i = 0; i < n; ++i)
                     for (std::int64_t j = 0; j < m; ++j)
                       ga.at(j, i) = g.at(i, j);
                   t.accumulate(ai, ga.data(), ga.numel());
                 },
                 "transpose");
}

// ----------------------------------------------------------------- reductions

Var Tape::sum(Var a) {
  const Tensor& va = value(a);
  double s = 0.0;
  for (std::int64_t i = 0; i < va.numel(); ++i) s += va[i];
  auto ai = a.id;
  std::int64_t n = va.numel();
  return emplace(Tensor::scalar(s), requires_grad(a),
                 [ai, n](Tape& t, std::int32_t self) {
                   double g = t.nodes_[self].grad[0];
                   Tensor ga(t.value(Var{ai}).shape());
                   for (std::int64_t i = 0; i < n; ++i) ga[i] = g;
                   t.accumulate(ai, ga.data(), n);
                 },
                 "sum");
}

Var Tape::mean(Var a) {
  const Tensor& va = value(a);
  if (va.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (std::int64_t i = 0; i < va.numel(); ++i) s += va[i];
  std::int64_t n = va.numel();
  auto ai = a.id;
  return emplace(Tensor::scalar(s / static_cast<double>(n)), requires_grad(a),
                 [ai, n](Tape& t, std::int32_t self) {
                   double g = t.nodes_[self].grad[0] / static_cast<double>(n);
                   Tensor ga(t.value(Var{ai}).shape());
                   for (std::int64_t i = 0; i < n; ++i) ga[i] = g;
                   t.accumulate(ai, ga.data(), n);
                 },
                 "mean");
}

Var Tape::sum_axis(Var a, std::int64_t axis) {
  const Tensor& va = value(a);
  if (axis < 0 || axis >= va.rank())
    throw ShapeError("sum_axis: axis out of range");
  AxisSplit s = split_axis(va.shape(), axis);
  std::vector<std::int64_t> oshape;
  for (std::int64_t i = 0; i < va.rank(); ++i)
    if (i != axis) oshape.push_back(va.extent(i));
  Tensor out(oshape);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t m = 0; m < s.mid; ++m) {
      const double* src = va.data() + (o * s.mid + m) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, s](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor ga(t.value(Var{ai}).shape());
                   for (std::int64_t o = 0; o < s.outer; ++o)
                     for (std::int64_t m = 0; m < s.mid; ++m) {
                       double* dst = ga.data() + (o * s.mid + m) * s.inner;
                       const double* src = g.data() + o * s.inner;
                       for (std::int64_t i = 0; i < s.inner; ++i)
                         dst[i] = src[i];
                     }
                   t.accumulate(ai, ga.data(), ga.numel());
                 },
                 "sum_axis");
}

Var Tape::cumsum_exclusive(Var a, std::int64_t axis) {
  const Tensor& va = value(a);
  if (axis < 0 || axis >= va.rank())
    throw ShapeError("cumsum_exclusive: axis out of range");
  AxisSplit s = split_axis(va.shape(), axis);
  Tensor out(va.shape());
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::int64_t m = 0; m < s.mid; ++m) {
        std::int64_t idx = (o * s.mid + m) * s.inner + i;
        out[idx] = acc;
        acc += va[idx];
      }
    }
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, s](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor ga(t.value(Var{ai}).shape());
                   for (std::int64_t o = 0; o < s.outer; ++o)
                     for (std::int64_t i = 0; i < s.inner; ++i) {
                       double acc = 0.0;
                       for (std::int64_t m = s.mid - 1; m >= 0; --m) {
                         std::int64_t idx = (o * s.mid + m) * s.inner + i;
                         ga[idx] = acc;
                         acc += g[idx];
                       }
                     }
                   t.accumulate(ai, ga.data(), ga.numel());
                 },
                 "cumsum_exclusive");
}

// ------------------------------------------------------------------ structure

Var Tape::broadcast(Var a, std::vector<std::int64_t> shape) {
  const Tensor& va = value(a);
  std::int64_t ra = va.rank();
  std::int64_t rt = static_cast<std::int64_t>(shape.size());
  if (ra > rt)
    throw ShapeError("broadcast: source rank exceeds target " +
                     Tensor::shape_str(va.shape()) + " -> " +
                     Tensor::shape_str(shape));
  // Align source to trailing axes; each must match or be 1.
  std::vector<std::int64_t> sstride(rt, 0);
  std::int64_t stride = 1;
  for (std::int64_t i = ra - 1; i >= 0; --i) {
    std::int64_t tgt = shape[rt - ra + i];
    if (va.extent(i) != tgt && va.extent(i) != 1)
      throw ShapeError("broadcast: extent mismatch " +
                       Tensor::shape_str(va.shape()) + " -> " +
                       Tensor::shape_str(shape));
    sstride[rt - ra + i] = (va.extent(i) == 1 && tgt != 1) ? 0 : stride;
    stride *= va.extent(i);
  }
  Tensor out(shape);
  std::int64_t n = out.numel();
  std::vector<std::int64_t> tstride(rt, 1);
  for (std::int64_t i = rt - 2; i >= 0; --i)
    tstride[i] = tstride[i + 1] * shape[i + 1];
  for (std::int64_t idx = 0; idx < n; ++idx) {
    std::int64_t rem = idx, src = 0;
    for (std::int64_t d = 0; d < rt; ++d) {
      std::int64_t c = rem / tstride[d];
      rem -= c * tstride[d];
      src += c * sstride[d];
    }
    out[idx] = va[src];
  }
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, sstride, tstride, rt](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor ga(t.value(Var{ai}).shape());
                   std::int64_t n = g.numel();
                   for (std::int64_t idx = 0; idx < n; ++idx) {
                     std::int64_t rem = idx, src = 0;
                     for (std::int64_t d = 0; d < rt; ++d) {
                       std::int64_t c = rem / tstride[d];
                       rem -= c * tstride[d];
                       src += c * sstride[d];
                     }
                     ga[src] += g[idx];
                   }
                   t.accumulate(ai, ga.data(), ga.numel());
                 },
                 "broadcast");
}

Var Tape::reshape(Var a, std::vector<std::int64_t> shape) {
  const Tensor& va = value(a);
  if (Tensor::checked_numel(shape) != va.numel())
    throw ShapeError("reshape: numel mismatch " +
                     Tensor::shape_str(va.shape()) + " -> " +
                     Tensor::shape_str(shape));
  Tensor out(shape, va.vec());
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   t.accumulate(ai, g.data(), g.numel());
                 },
                 "reshape");
}

Var Tape::slice(Var a, std::int64_t axis, std::int64_t start,
                std::int64_t len) {
  const Tensor& va = value(a);
  if (axis < 0 || axis >= va.rank() || start < 0 ||
      start + len > va.extent(axis))
    throw ShapeError("slice: out of range on shape " +
                     Tensor::shape_str(va.shape()));
  AxisSplit s = split_axis(va.shape(), axis);
  std::vector<std::int64_t> oshape = va.shape();
  oshape[axis] = len;
  Tensor out(oshape);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t m = 0; m < len; ++m)
      std::memcpy(out.data() + (o * len + m) * s.inner,
                  va.data() + (o * s.mid + start + m) * s.inner,
                  sizeof(double) * s.inner);
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, s, start, len](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor ga(t.value(Var{ai}).shape());
                   for (std::int64_t o = 0; o < s.outer; ++o)
                     for (std::int64_t m = 0; m < len; ++m) {
                       double* dst =
                           ga.data() + (o * s.mid + start + m) * s.inner;
                       const double* src = g.data() + (o * len + m) * s.inner;
                       for (std::int64_t i = 0; i < s.inner; ++i)
                         dst[i] += src[i];
                     }
                   t.accumulate(ai, ga.data(), ga.numel());
                 },
                 "slice");
}

Var Tape::gather_rows(Var a, std::vector<std::int64_t> rows) {
  const Tensor& va = value(a);
  if (va.rank() != 2)
    throw ShapeError("gather_rows: rank-2 required, got " +
                     Tensor::shape_str(va.shape()));
  std::int64_t cols = va.extent(1);
  for (std::int64_t r : rows)
    if (r < 0 || r >= va.extent(0))
      throw ShapeError("gather_rows: row index out of range");
  Tensor out({static_cast<std::int64_t>(rows.size()), cols});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.data() + i * cols, va.data() + rows[i] * cols,
                sizeof(double) * cols);
  auto ai = a.id;
  return emplace(std::move(out), requires_grad(a),
                 [ai, rows, cols](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor ga(t.value(Var{ai}).shape());
                   for (std::size_t i = 0; i < rows.size(); ++i) {
                     double* dst = ga.data() + rows[i] * cols;
                     const double* src = g.data() + i * cols;
                     for (std::int64_t c = 0; c < cols; ++c) dst[c] += src[c];
                   }
                   t.accumulate(ai, ga.data(), ga.numel());
                 },
                 "gather_rows");
}

Var Tape::concat(const std::vector<Var>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& v0 = value(parts[0]);
  if (axis < 0 || axis >= v0.rank())
    throw ShapeError("concat: axis out of range");
  std::int64_t total = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor& vp = value(p);
    if (vp.rank() != v0.rank())
      throw ShapeError("concat: rank mismatch");
    for (std::int64_t d = 0; d < v0.rank(); ++d)
      if (d != axis && vp.extent(d) != v0.extent(d))
        throw ShapeError("concat: extent mismatch at axis " +
                         std::to_string(d));
    total += vp.extent(axis);
    ng = ng || requires_grad(p);
  }
  std::vector<std::int64_t> oshape = v0.shape();
  oshape[axis] = total;
  AxisSplit so = split_axis(oshape, axis);
  Tensor out(oshape);
  std::vector<std::int32_t> ids;
  std::vector<std::int64_t> mids;
  std::int64_t off = 0;
  for (Var p : parts) {
    const Tensor& vp = value(p);
    std::int64_t m = vp.extent(axis);
    for (std::int64_t o = 0; o < so.outer; ++o)
      std::memcpy(out.data() + (o * total + off) * so.inner,
                  vp.data() + o * m * so.inner, sizeof(double) * m * so.inner);
    ids.push_back(p.id);
    mids.push_back(m);
    off += m;
  }
  return emplace(std::move(out), ng,
                 [ids, mids, so, total](Tape& t, std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   std::int64_t off = 0;
                   for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                     std::int64_t m = mids[pi];
                     if (t.nodes_[ids[pi]].needs_grad) {
                       Tensor gp(t.value(Var{ids[pi]}).shape());
                       for (std::int64_t o = 0; o < so.outer; ++o)
                         std::memcpy(gp.data() + o * m * so.inner,
                                     g.data() + (o * total + off) * so.inner,
                                     sizeof(double) * m * so.inner);
                       t.accumulate(ids[pi], gp.data(), gp.numel());
                     }
                     off += m;
                   }
                 },
                 "concat");
}

Var Tape::im2col(Var x, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  const Tensor& vx = value(x);
  if (vx.rank() != 3)
    throw ShapeError("im2col: expected (C,H,W), got " +
                     Tensor::shape_str(vx.shape()));
  std::int64_t C = vx.extent(0), H = vx.extent(1), W = vx.extent(2);
  std::int64_t Ho = (H + 2 * pad - k) / stride + 1;
  std::int64_t Wo = (W + 2 * pad - k) / stride + 1;
  Tensor out({C * k * k, Ho * Wo});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t ki = 0; ki < k; ++ki)
      for (std::int64_t kj = 0; kj < k; ++kj) {
        std::int64_t row = (c * k + ki) * k + kj;
        double* dst = out.data() + row * Ho * Wo;
        for (std::int64_t oi = 0; oi < Ho; ++oi) {
          std::int64_t si = oi * stride + ki - pad;
          for (std::int64_t oj = 0; oj < Wo; ++oj) {
            std::int64_t sj = oj * stride + kj - pad;
            dst[oi * Wo + oj] =
                (si >= 0 && si < H && sj >= 0 && sj < W)
                    ? vx[(c * H + si) * W + sj]
                    : 0.0;
          }
        }
      }
  auto xi = x.id;
  return emplace(std::move(out), requires_grad(x),
                 [xi, C, H, W, Ho, Wo, k, stride, pad](Tape& t,
                                                       std::int32_t self) {
                   const Tensor& g = t.nodes_[self].grad;
                   Tensor gx({C, H, W});
                   for (std::int64_t c = 0; c < C; ++c)
                     for (std::int64_t ki = 0; ki < k; ++ki)
                       for (std::int64_t kj = 0; kj < k; ++kj) {
                         std::int64_t row = (c * k + ki) * k + kj;
                         const double* src = g.data() + row * Ho * Wo;
                         for (std::int64_t oi = 0; oi < Ho; ++oi) {
                           std::int64_t si = oi * stride + ki - pad;
                           if (si < 0 || si >= H) continue;
                           for (std::int64_t oj = 0; oj < Wo; ++oj) {
                             std::int64_t sj = oj * stride + kj - pad;
                             if (sj < 0 || sj >= W) continue;
                             gx[(c * H + si) * W + sj] += src[oi * Wo + oj];
                           }
                         }
                       }
                   t.accumulate(xi, gx.data(), gx.numel());
                 },
                 "im2col");
}

// ------------------------------------------------------------------ backward

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.id >= static_cast<std::int32_t>(nodes_.size()))
    throw std::invalid_argument("backward: invalid loss var");
  if (nodes_[loss.id].value.numel() != 1)
    throw std::invalid_argument(
        "backward: loss must be a scalar, got shape " +
        Tensor::shape_str(nodes_[loss.id].value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buf(loss.id)[0] = 1.0;
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.needs_grad && n.backward && n.grad.numel() > 0) n.backward(*this, id);
  }
}

}  // namespace supnerf
