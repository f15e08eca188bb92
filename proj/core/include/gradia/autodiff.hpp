#pragma once

// Tape-free reverse-mode automatic differentiation over Tensors.
//
// Every operation records a node holding its value, its inputs and a
// backward rule. Backward rules are themselves written with the recorded
// operations below, so running `grad(..., create_graph = true)` yields
// gradients that can be differentiated again. The attention loss relies on
// this: Grad-CAM weights are gradients of a class logit, and the loss is
// back-propagated through them.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gradia/tensor.hpp"

namespace gradia::ad {

class Var;

// Backward rule: given the gradient flowing into an op's output (and the
// output itself), return one gradient per input. `needed[i]` is false for
// inputs whose gradient is not requested; such entries may be left empty.
using BackwardFn = std::function<std::vector<Var>(
    const Var& grad_output, const Var& output, const std::vector<bool>& needed)>;

struct Node {
  Tensor value;
  std::vector<Var> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  const char* op = "leaf";
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// A value that never receives gradients.
Var constant(Tensor value);
// A leaf that gradients are accumulated for (parameters).
Var variable(Tensor value);

bool grad_enabled();

// Disables recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Re-enables recording for the current thread while alive.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

// Gradients of `output` with respect to each of `inputs`. `output` must be a
// scalar unless `seed` (same shape as output) is given. Inputs the output
// does not depend on receive zero tensors. With `create_graph` the returned
// gradients are recorded and can be differentiated again.
std::vector<Var> grad(const Var& output, std::span<const Var> inputs,
                      bool create_graph = false, const Var* seed = nullptr);

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var neg(const Var& a);
// Multiplies by a constant tensor of the same shape (masks, signs).
Var mul_const(const Var& a, const Tensor& c);
Var relu(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var exp(const Var& a);
// 1/x where x != 0, and 0 where x == 0.
Var reciprocal_or_zero(const Var& a);

// ---- reductions and broadcasts --------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var expand_scalar(const Var& s, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
// (m) -> (m, n), repeating each entry along a row.
Var broadcast_cols(const Var& v, std::size_t n);
// (m, n) -> (m), summing each row.
Var sum_cols(const Var& x);
// (n) -> (m, n), repeating the vector as every row.
Var broadcast_rows(const Var& v, std::size_t m);
// (m, n) -> (n), summing each column.
Var sum_rows(const Var& x);
// (N, K, H, W) -> (N, 1, H, W).
Var sum_channels(const Var& x);
// (N, 1, H, W) -> (N, K, H, W).
Var broadcast_channels(const Var& x, std::size_t k);
// out[i] = x.flat[indices[i]], reshaped to `shape`.
Var gather(const Var& x, std::vector<std::size_t> indices, const Shape& shape);
// out.flat[indices[i]] += g[i]; out has `shape`. Adjoint of gather.
Var scatter_add(const Var& g, std::vector<std::size_t> indices,
                const Shape& shape);

// ---- linear algebra --------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// Row-wise log(sum(exp(x))) for (m, n) -> (m).
Var logsumexp_rows(const Var& x);
// out[i] = x[i, columns[i]] for (m, n) -> (m).
Var pick(const Var& x, const std::vector<std::size_t>& columns);
// Row-wise max / min of (m, n) -> (m); ties resolve to the lowest column.
Var max_rows(const Var& x);
Var min_rows(const Var& x);

// ---- convolution -----------------------------------------------------------
struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_output_size(std::size_t input, std::size_t kernel,
                             const ConvGeometry& geometry);

// x (N, Cin, H, W), w (Cout, Cin, kh, kw) -> (N, Cout, Ho, Wo). No bias.
Var conv2d(const Var& x, const Var& w, const ConvGeometry& geometry);
// Gradient of conv2d with respect to its input, given the output gradient.
Var conv2d_input_grad(const Var& grad_out, const Var& w,
                      const ConvGeometry& geometry, const Shape& input_shape);
// Gradient of conv2d with respect to its weight, given the output gradient.
Var conv2d_weight_grad(const Var& x, const Var& grad_out,
                       const ConvGeometry& geometry, const Shape& weight_shape);
// Adds a per-channel bias (C) to (N, C, H, W).
Var add_channel_bias(const Var& x, const Var& bias);
// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
Var max_pool2(const Var& x);

}  // namespace gradia::ad
