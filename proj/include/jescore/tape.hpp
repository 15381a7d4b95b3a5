#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "jescore/tensor.hpp"

namespace jescore::ad {

/// Handle to a node on a Tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Append-only record of primitive applications. Node order is topological by
/// construction, so one descending sweep implements reverse mode. Backward
/// functions emit new tape nodes, which makes every gradient itself
/// differentiable (needed when a gradient appears inside a training loss).
class Tape {
 public:
  using Vjp = std::function<std::vector<Var>(Tape&, Var self, Var upstream)>;

  struct Node {
    Tensor value;
    std::vector<Var> parents;
    Vjp vjp;
    bool requires_grad = false;
    const char* op = "";
  };

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Tensor value(Var v) const;
  const Shape& shape(Var v) const;
  DType dtype(Var v) const;
  bool requires_grad(Var v) const;
  const char* op_name(Var v) const;
  size_t size() const { return nodes_.size(); }

  /// Gradients of a scalar node with respect to `wrt`, returned as new
  /// differentiable vars. Unreached targets get zeros.
  std::vector<Var> grad(Var scalar, std::span<const Var> wrt);
  Var grad1(Var scalar, Var wrt);

  /// Counts nodes per op kind; used by structural tests.
  std::vector<std::pair<std::string, int>> op_histogram() const;

  Var emplace(Tensor value, std::vector<Var> parents, Vjp vjp, const char* op);

 private:
  const Node& node(Var v) const;
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All shape/dtype mismatches throw UsageError.
// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_const(Tape& t, Var a, double c);
Var neg(Tape& t, Var a);
/// Elementwise x^p (x must stay positive when p is not a nonnegative integer).
Var powc(Tape& t, Var a, double p);
Var exp_op(Tape& t, Var a);
Var log_op(Tape& t, Var a);
/// Exact erf-based GELU: x * Phi(x).
Var gelu(Tape& t, Var a);
Var relu(Tape& t, Var a);

Var reshape(Tape& t, Var a, Shape shape);
Var detach(Tape& t, Var a);

Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
Var sumsq(Tape& t, Var a);

// Rank-2 row ops (first dim indexes samples).
Var row_sum(Tape& t, Var a);
Var row_broadcast(Tape& t, Var a, int64_t cols);
Var row_max_detached(Tape& t, Var a);
/// Numerically stable log-sum-exp over the second axis of an N x C tensor.
Var logsumexp_rows(Tape& t, Var a);

// Per-sample ops on tensors whose first dim is N.
Var row_scale(Tape& t, Var x, Var s);
Var row_dot(Tape& t, Var a, Var b);

/// logits[n, idx[n]] for 0-based class indices.
Var take_class(Tape& t, Var logits, std::vector<int> idx);

Var matmul_nn(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);
Var matmul_tn(Tape& t, Var a, Var b);

Var conv2d(Tape& t, Var x, Var k, int64_t stride, int64_t pad);

// Channel ops on NCHW tensors.
Var channel_scale(Tape& t, Var x, Var gain);
Var channel_dot(Tape& t, Var a, Var b);
Var channel_sum(Tape& t, Var x);
Var channel_broadcast(Tape& t, Var v, Shape nchw);
Var channel_tile(Tape& t, Var x, int64_t repeat);

Var group_mean(Tape& t, Var x, int64_t groups);
Var group_broadcast(Tape& t, Var v, Shape nchw, int64_t groups);
/// Bias-free group normalization: standardize per (sample, group), then apply
/// a per-channel gain. Composed from differentiable primitives.
Var groupnorm_biasfree(Tape& t, Var x, Var gain, int64_t groups, double eps);

Var global_avg_pool(Tape& t, Var x);
/// 2x2 stride-2 average pooling; border windows are clipped and averaged over
/// the cells actually covered, so odd sizes round up.
Var avg_pool2(Tape& t, Var x);
Var max_pool(Tape& t, Var x, int64_t k, int64_t stride, int64_t pad);

}  // namespace jescore::ad
