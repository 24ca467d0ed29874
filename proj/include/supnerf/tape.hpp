#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "supnerf/tensor.hpp"

namespace supnerf {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Controls the after-every-op finiteness check. Defaults to on in debug
// builds, off in release; tests flip it explicitly.
void set_nan_tripwire(bool enabled);
bool nan_tripwire_enabled();

// Reverse-mode tape over dense tensors. Define-by-run: one tape per forward
// pass, rebuilt every iteration. Tapes are not thread-safe; use one per job.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---------------------------------------------------------
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  // --- elementwise, same shape ---------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var square_diff(Var a, Var b);  // (a - b)^2

  // --- scalar-constant forms ------------------------------------------
  Var add_const(Var a, double c);
  Var mul_const(Var a, double c);
  Var neg(Var a) { return mul_const(a, -1.0); }

  // --- unary -----------------------------------------------------------
  Var relu(Var a);
  Var sigmoid(Var a);
  Var tanh_op(Var a);
  Var softplus(Var a);
  Var exp_op(Var a);
  Var log_op(Var a);
  Var sin_op(Var a);
  Var cos_op(Var a);
  Var sqrt_op(Var a);
  Var clamp_min(Var a, double lo);  // zero gradient below lo
  Var clamp_max(Var a, double hi);  // zero gradient above hi

  // --- linear algebra ---------------------------------------------------
  Var matmul(Var a, Var b);  // (m,k)·(k,n)
  Var transpose(Var a);      // 2D

  // --- reductions --------------------------------------------------------
  Var sum(Var a);   // full reduction to scalar
  Var mean(Var a);  // full reduction to scalar
  Var sum_axis(Var a, std::int64_t axis);
  Var cumsum_exclusive(Var a, std::int64_t axis);

  // --- structure ----------------------------------------------------------
  Var broadcast(Var a, std::vector<std::int64_t> shape);
  Var reshape(Var a, std::vector<std::int64_t> shape);
  Var slice(Var a, std::int64_t axis, std::int64_t start, std::int64_t len);
  // Select rows of a 2D tensor (duplicates allowed); backward scatter-adds.
  Var gather_rows(Var a, std::vector<std::int64_t> rows);
  Var concat(const std::vector<Var>& parts, std::int64_t axis);
  // (C,H,W) -> (C*k*k, Ho*Wo) patch matrix for convolution-as-GEMM.
  Var im2col(Var x, std::int64_t k, std::int64_t stride, std::int64_t pad);

  // --- execution -----------------------------------------------------------
  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse append order.
  // Re-running is allowed and reproduces identical grads (grads are reset).
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() w.r.t. v; zeros if v was unreachable.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }

 private:
  using BackFn = std::function<void(Tape&, std::int32_t)>;

  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by backward
    bool needs_grad = false;
    BackFn backward;
    const char* op = "";
  };

  Var emplace(Tensor value, bool needs_grad, BackFn fn, const char* op);
  Tensor& grad_buf(std::int32_t id);
  void accumulate(std::int32_t id, const double* g, std::int64_t n);

  std::vector<Node> nodes_;

  friend struct TapeOps;
};

}  // namespace supnerf
