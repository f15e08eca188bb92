#include "gradia/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "gradia/error.hpp"

namespace gradia::ad {
namespace {

thread_local bool g_grad_enabled = true;

class GradModeScope {
 public:
  explicit GradModeScope(bool enabled) : previous_(g_grad_enabled) {
    g_grad_enabled = enabled;
  }
  ~GradModeScope() { g_grad_enabled = previous_; }

 private:
  bool previous_;
};

Var make(Tensor value, std::vector<Var> inputs, BackwardFn backward,
         const char* op) {
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (track) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->requires_grad = true;
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw InputError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + to_string(a.shape()));
  }
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  const double* src = a.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor zip_values(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  const double* x = a.data();
  const double* y = b.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

// ---- convolution kernels ---------------------------------------------------

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvDims {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo, stride, pad;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
  std::size_t in_image() const { return cin * h * w; }
  std::size_t out_image() const { return cout * ho * wo; }
};

ConvDims conv_dims(const Shape& x, const Shape& w, const ConvGeometry& g) {
  if (x.size() != 4 || w.size() != 4) {
    throw InputError("conv2d: expected 4-d input and weight, got " +
                     to_string(x) + " and " + to_string(w));
  }
  if (x[1] != w[1]) {
    throw InputError("conv2d: input has " + std::to_string(x[1]) +
                     " channels, weight expects " + std::to_string(w[1]));
  }
  ConvDims d{};
  d.n = x[0];
  d.cin = x[1];
  d.h = x[2];
  d.w = x[3];
  d.cout = w[0];
  d.kh = w[2];
  d.kw = w[3];
  d.stride = g.stride;
  d.pad = g.padding;
  d.ho = conv_output_size(d.h, d.kh, g);
  d.wo = conv_output_size(d.w, d.kw, g);
  if (d.ho == 0 || d.wo == 0) {
    throw InputError("conv2d: empty output for input " + to_string(x));
  }
  return d;
}

// cols: (cin*kh*kw, ho*wo) patches of one image.
void im2col(const double* image, const ConvDims& d, double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(d.pad);
  const auto height = static_cast<std::ptrdiff_t>(d.h);
  const auto width = static_cast<std::ptrdiff_t>(d.w);
  const auto stride = static_cast<std::ptrdiff_t>(d.stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.cin; ++c) {
    const double* plane = image + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        double* dst = cols + row * d.out_plane();
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy) * stride +
              static_cast<std::ptrdiff_t>(ky) - pad;
          double* out = dst + oy * d.wo;
          if (iy < 0 || iy >= height) {
            std::fill(out, out + d.wo, 0.0);
            continue;
          }
          const double* src = plane + iy * width;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox) * stride +
                static_cast<std::ptrdiff_t>(kx) - pad;
            out[ox] = (ix < 0 || ix >= width) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvDims& d, double* image) {
  const auto pad = static_cast<std::ptrdiff_t>(d.pad);
  const auto height = static_cast<std::ptrdiff_t>(d.h);
  const auto width = static_cast<std::ptrdiff_t>(d.w);
  const auto stride = static_cast<std::ptrdiff_t>(d.stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.cin; ++c) {
    double* plane = image + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        const double* src = cols + row * d.out_plane();
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy) * stride +
              static_cast<std::ptrdiff_t>(ky) - pad;
          if (iy < 0 || iy >= height) continue;
          double* dst = plane + iy * width;
          const double* in = src + oy * d.wo;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox) * stride +
                static_cast<std::ptrdiff_t>(kx) - pad;
            if (ix >= 0 && ix < width) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

Tensor conv_forward_kernel(const Tensor& x, const Tensor& w,
                           const ConvGeometry& g) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), g);
  Tensor out({d.n, d.cout, d.ho, d.wo});
  std::vector<double> cols(d.patch() * d.out_plane());
  ConstMatrixMap weight(w.data(), d.cout, d.patch());
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.data() + n * d.in_image(), d, cols.data());
    ConstMatrixMap patches(cols.data(), d.patch(), d.out_plane());
    MatrixMap result(out.data() + n * d.out_image(), d.cout, d.out_plane());
    result.noalias() = weight * patches;
  }
  return out;
}

Tensor conv_input_grad_kernel(const Tensor& gy, const Tensor& w,
                              const ConvGeometry& g, const Shape& input_shape) {
  const ConvDims d = conv_dims(input_shape, w.shape(), g);
  if (gy.shape() != Shape{d.n, d.cout, d.ho, d.wo}) {
    throw InputError("conv2d_input_grad: gradient shape " +
                     to_string(gy.shape()) + " does not match output");
  }
  Tensor dx(input_shape);
  RowMatrix cols(d.patch(), d.out_plane());
  ConstMatrixMap weight(w.data(), d.cout, d.patch());
  for (std::size_t n = 0; n < d.n; ++n) {
    ConstMatrixMap grad(gy.data() + n * d.out_image(), d.cout, d.out_plane());
    cols.noalias() = weight.transpose() * grad;
    col2im_add(cols.data(), d, dx.data() + n * d.in_image());
  }
  return dx;
}

Tensor conv_weight_grad_kernel(const Tensor& x, const Tensor& gy,
                               const ConvGeometry& g,
                               const Shape& weight_shape) {
  const ConvDims d = conv_dims(x.shape(), weight_shape, g);
  if (gy.shape() != Shape{d.n, d.cout, d.ho, d.wo}) {
    throw InputError("conv2d_weight_grad: gradient shape " +
                     to_string(gy.shape()) + " does not match output");
  }
  Tensor dw(weight_shape);
  MatrixMap result(dw.data(), d.cout, d.patch());
  std::vector<double> cols(d.patch() * d.out_plane());
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.data() + n * d.in_image(), d, cols.data());
    ConstMatrixMap patches(cols.data(), d.patch(), d.out_plane());
    ConstMatrixMap grad(gy.data() + n * d.out_image(), d.cout, d.out_plane());
    result.noalias() += grad * patches.transpose();
  }
  return dw;
}

std::vector<std::size_t> row_extreme_indices(const Tensor& x, bool want_max) {
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  if (n == 0) throw InputError("row reduction over empty rows");
  std::vector<std::size_t> indices(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (want_max ? row[j] > row[best] : row[j] < row[best]) best = j;
    }
    indices[i] = i * n + best;
  }
  return indices;
}

}  // namespace

double Var::item() const {
  if (node_->value.size() != 1) {
    throw InputError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->value[0];
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var variable(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "variable";
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = true;
}

EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

std::vector<Var> grad(const Var& output, std::span<const Var> inputs,
                      bool create_graph, const Var* seed) {
  if (!output.defined()) throw InputError("grad: undefined output");
  if (seed == nullptr && output.value().size() != 1) {
    throw InputError("grad: non-scalar output " + to_string(output.shape()) +
                     " requires a seed");
  }
  if (seed != nullptr && seed->shape() != output.shape()) {
    throw InputError("grad: seed shape does not match output");
  }

  std::unordered_set<const Node*> targets;
  for (const auto& in : inputs) {
    if (in.requires_grad()) targets.insert(in.node());
  }

  // Post-order DFS over the recorded graph: inputs precede their consumers.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_map<const Node*, bool> leads_to_target;
  if (output.requires_grad() && !targets.empty()) {
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    std::unordered_set<const Node*> visited;
    stack.emplace_back(output.shared(), 0);
    visited.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const Var& child = node->inputs[next++];
        if (child.requires_grad() && visited.insert(child.node()).second) {
          stack.emplace_back(child.shared(), 0);
        }
        continue;
      }
      bool reaches = targets.count(node.get()) > 0;
      for (const auto& child : node->inputs) {
        if (!child.requires_grad()) continue;
        auto it = leads_to_target.find(child.node());
        reaches = reaches || (it != leads_to_target.end() && it->second);
      }
      leads_to_target[node.get()] = reaches;
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, Var> grads;
  {
    GradModeScope mode(create_graph);
    if (!order.empty()) {
      grads[output.node()] =
          seed ? *seed : constant(Tensor(output.shape(), 1.0));
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const std::shared_ptr<Node>& node = *it;
      if (!leads_to_target[node.get()] || !node->backward) continue;
      auto found = grads.find(node.get());
      if (found == grads.end()) continue;

      std::vector<bool> needed(node->inputs.size(), false);
      bool any = false;
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        const Var& in = node->inputs[i];
        needed[i] = in.requires_grad() && leads_to_target[in.node()];
        any = any || needed[i];
      }
      if (!any) continue;

      const Var grad_out = found->second;
      std::vector<Var> in_grads = node->backward(grad_out, Var(node), needed);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        if (!needed[i] || !in_grads[i].defined()) continue;
        const Node* key = node->inputs[i].node();
        auto existing = grads.find(key);
        if (existing == grads.end()) {
          grads.emplace(key, in_grads[i]);
        } else {
          existing->second = add(existing->second, in_grads[i]);
        }
      }
      // Intermediate gradients are no longer needed once propagated.
      if (!targets.count(node.get())) grads.erase(node.get());
    }
  }

  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto found = grads.find(in.node());
    if (found != grads.end() && in.requires_grad()) {
      result.push_back(found->second);
    } else {
      result.push_back(constant(Tensor(in.shape(), 0.0)));
    }
  }
  return result;
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make(zip_values(a.value(), b.value(),
                         [](double x, double y) { return x + y; }),
              {a, b},
              [](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{g, g};
              },
              "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make(zip_values(a.value(), b.value(),
                         [](double x, double y) { return x - y; }),
              {a, b},
              [](const Var& g, const Var&, const std::vector<bool>& needed) {
                return std::vector<Var>{g, needed[1] ? neg(g) : Var()};
              },
              "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make(zip_values(a.value(), b.value(),
                         [](double x, double y) { return x * y; }),
              {a, b},
              [a, b](const Var& g, const Var&, const std::vector<bool>& needed) {
                return std::vector<Var>{needed[0] ? mul(g, b) : Var(),
                                        needed[1] ? mul(g, a) : Var()};
              },
              "mul");
}

Var scale(const Var& a, double factor) {
  return make(map_values(a.value(), [factor](double x) { return x * factor; }),
              {a},
              [factor](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{scale(g, factor)};
              },
              "scale");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var mul_const(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) {
    throw InputError("mul_const: shape mismatch " + to_string(a.shape()) +
                     " vs " + to_string(c.shape()));
  }
  return make(zip_values(a.value(), c,
                         [](double x, double y) { return x * y; }),
              {a},
              [c](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{mul_const(g, c)};
              },
              "mul_const");
}

Var relu(const Var& a) {
  Tensor mask = map_values(a.value(), [](double x) { return x > 0 ? 1.0 : 0.0; });
  Tensor out = map_values(a.value(), [](double x) { return x > 0 ? x : 0.0; });
  return make(std::move(out), {a},
              [mask = std::move(mask)](const Var& g, const Var&,
                                       const std::vector<bool>&) {
                return std::vector<Var>{mul_const(g, mask)};
              },
              "relu");
}

Var abs(const Var& a) {
  Tensor sign = map_values(a.value(), [](double x) {
    return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
  });
  return make(map_values(a.value(), [](double x) { return std::abs(x); }),
              {a},
              [sign = std::move(sign)](const Var& g, const Var&,
                                       const std::vector<bool>&) {
                return std::vector<Var>{mul_const(g, sign)};
              },
              "abs");
}

Var square(const Var& a) {
  return make(map_values(a.value(), [](double x) { return x * x; }), {a},
              [a](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{mul(g, scale(a, 2.0))};
              },
              "square");
}

Var exp(const Var& a) {
  return make(map_values(a.value(), [](double x) { return std::exp(x); }), {a},
              [](const Var& g, const Var& out, const std::vector<bool>&) {
                return std::vector<Var>{mul(g, out)};
              },
              "exp");
}

Var reciprocal_or_zero(const Var& a) {
  return make(map_values(a.value(),
                         [](double x) { return x != 0.0 ? 1.0 / x : 0.0; }),
              {a},
              [](const Var& g, const Var& out, const std::vector<bool>&) {
                return std::vector<Var>{mul(g, neg(mul(out, out)))};
              },
              "reciprocal_or_zero");
}

// ---- reductions and broadcasts --------------------------------------------

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  Shape shape = a.shape();
  return make(Tensor::scalar(total), {a},
              [shape](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{expand_scalar(g, shape)};
              },
              "sum");
}

Var mean(const Var& a) {
  if (a.value().empty()) throw InputError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var expand_scalar(const Var& s, const Shape& shape) {
  if (s.value().size() != 1) {
    throw InputError("expand_scalar: expected a scalar, got " +
                     to_string(s.shape()));
  }
  return make(Tensor(shape, s.value()[0]), {s},
              [](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{sum(g)};
              },
              "expand_scalar");
}

Var reshape(const Var& a, const Shape& shape) {
  Shape original = a.shape();
  return make(a.value().reshaped(shape), {a},
              [original](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{reshape(g, original)};
              },
              "reshape");
}

Var broadcast_cols(const Var& v, std::size_t n) {
  require_rank(v, 1, "broadcast_cols");
  const std::size_t m = v.shape()[0];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(out.data() + i * n, out.data() + (i + 1) * n, v.value()[i]);
  }
  return make(std::move(out), {v},
              [](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{sum_cols(g)};
              },
              "broadcast_cols");
}

Var sum_cols(const Var& x) {
  require_rank(x, 2, "sum_cols");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double total = 0.0;
    const double* row = x.value().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) total += row[j];
    out[i] = total;
  }
  return make(std::move(out), {x},
              [n](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{broadcast_cols(g, n)};
              },
              "sum_cols");
}

Var broadcast_rows(const Var& v, std::size_t m) {
  require_rank(v, 1, "broadcast_rows");
  const std::size_t n = v.shape()[0];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(v.value().data(), v.value().data() + n, out.data() + i * n);
  }
  return make(std::move(out), {v},
              [](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{sum_rows(g)};
              },
              "broadcast_rows");
}

Var sum_rows(const Var& x) {
  require_rank(x, 2, "sum_rows");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.value().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
  }
  return make(std::move(out), {x},
              [m](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{broadcast_rows(g, m)};
              },
              "sum_rows");
}

Var sum_channels(const Var& x) {
  require_rank(x, 4, "sum_channels");
  const Shape& s = x.shape();
  const std::size_t plane = s[2] * s[3];
  Tensor out({s[0], 1, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n) {
    double* dst = out.data() + n * plane;
    for (std::size_t k = 0; k < s[1]; ++k) {
      const double* src = x.value().data() + (n * s[1] + k) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
    }
  }
  const std::size_t channels = s[1];
  return make(std::move(out), {x},
              [channels](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{broadcast_channels(g, channels)};
              },
              "sum_channels");
}

Var broadcast_channels(const Var& x, std::size_t k) {
  require_rank(x, 4, "broadcast_channels");
  const Shape& s = x.shape();
  if (s[1] != 1) throw InputError("broadcast_channels: expected one channel");
  const std::size_t plane = s[2] * s[3];
  Tensor out({s[0], k, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n) {
    const double* src = x.value().data() + n * plane;
    for (std::size_t c = 0; c < k; ++c) {
      std::copy(src, src + plane, out.data() + (n * k + c) * plane);
    }
  }
  return make(std::move(out), {x},
              [](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{sum_channels(g)};
              },
              "broadcast_channels");
}

Var gather(const Var& x, std::vector<std::size_t> indices, const Shape& shape) {
  if (numel(shape) != indices.size()) {
    throw InputError("gather: index count does not match output shape");
  }
  Tensor out(shape);
  const std::size_t limit = x.value().size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= limit) throw InputError("gather: index out of range");
    out[i] = x.value()[indices[i]];
  }
  Shape source = x.shape();
  return make(std::move(out), {x},
              [indices = std::move(indices), source](
                  const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{scatter_add(g, indices, source)};
              },
              "gather");
}

Var scatter_add(const Var& g, std::vector<std::size_t> indices,
                const Shape& shape) {
  if (g.value().size() != indices.size()) {
    throw InputError("scatter_add: index count does not match input");
  }
  Tensor out(shape);
  const std::size_t limit = out.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= limit) throw InputError("scatter_add: index out of range");
    out[indices[i]] += g.value()[i];
  }
  Shape source = g.shape();
  return make(std::move(out), {g},
              [indices = std::move(indices), source](
                  const Var& gg, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{gather(gg, indices, source)};
              },
              "scatter_add");
}

// ---- linear algebra --------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw InputError("matmul: inner dimensions differ " + to_string(a.shape()) +
                     " x " + to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  Tensor out({m, n});
  MatrixMap(out.data(), m, n).noalias() =
      ConstMatrixMap(a.value().data(), m, k) *
      ConstMatrixMap(b.value().data(), k, n);
  return make(std::move(out), {a, b},
              [a, b](const Var& g, const Var&, const std::vector<bool>& needed) {
                return std::vector<Var>{
                    needed[0] ? matmul(g, transpose(b)) : Var(),
                    needed[1] ? matmul(transpose(a), g) : Var()};
              },
              "matmul");
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  }
  return make(std::move(out), {a},
              [](const Var& g, const Var&, const std::vector<bool>&) {
                return std::vector<Var>{transpose(g)};
              },
              "transpose");
}

Var logsumexp_rows(const Var& x) {
  require_rank(x, 2, "logsumexp_rows");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.value().data() + i * n;
    const double top = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - top);
    out[i] = top + std::log(total);
  }
  return make(std::move(out), {x},
              [x, n](const Var& g, const Var& out, const std::vector<bool>&) {
                Var softmax = exp(sub(x, broadcast_cols(out, n)));
                return std::vector<Var>{mul(broadcast_cols(g, n), softmax)};
              },
              "logsumexp_rows");
}

Var pick(const Var& x, const std::vector<std::size_t>& columns) {
  require_rank(x, 2, "pick");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  if (columns.size() != m) throw InputError("pick: one column per row required");
  std::vector<std::size_t> indices(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (columns[i] >= n) throw InputError("pick: column out of range");
    indices[i] = i * n + columns[i];
  }
  return gather(x, std::move(indices), {m});
}

Var max_rows(const Var& x) {
  require_rank(x, 2, "max_rows");
  return gather(x, row_extreme_indices(x.value(), true), {x.shape()[0]});
}

Var min_rows(const Var& x) {
  require_rank(x, 2, "min_rows");
  return gather(x, row_extreme_indices(x.value(), false), {x.shape()[0]});
}

// ---- convolution -----------------------------------------------------------

std::size_t conv_output_size(std::size_t input, std::size_t kernel,
                             const ConvGeometry& geometry) {
  if (geometry.stride == 0) return 0;
  const std::size_t padded = input + 2 * geometry.padding;
  if (kernel == 0 || padded < kernel) return 0;
  return (padded - kernel) / geometry.stride + 1;
}

Var conv2d(const Var& x, const Var& w, const ConvGeometry& geometry) {
  return make(conv_forward_kernel(x.value(), w.value(), geometry), {x, w},
              [x, w, geometry](const Var& g, const Var&,
                               const std::vector<bool>& needed) {
                return std::vector<Var>{
                    needed[0] ? conv2d_input_grad(g, w, geometry, x.shape())
                              : Var(),
                    needed[1] ? conv2d_weight_grad(x, g, geometry, w.shape())
                              : Var()};
              },
              "conv2d");
}

// conv2d, its input gradient and its weight gradient are the three partial
// derivatives of one trilinear form T(x, w, gy), so each one's backward rule
// is expressed with the other two.
Var conv2d_input_grad(const Var& grad_out, const Var& w,
                      const ConvGeometry& geometry, const Shape& input_shape) {
  return make(
      conv_input_grad_kernel(grad_out.value(), w.value(), geometry, input_shape),
      {grad_out, w},
      [grad_out, w, geometry](const Var& g, const Var&,
                              const std::vector<bool>& needed) {
        return std::vector<Var>{
            needed[0] ? conv2d(g, w, geometry) : Var(),
            needed[1] ? conv2d_weight_grad(g, grad_out, geometry, w.shape())
                      : Var()};
      },
      "conv2d_input_grad");
}

Var conv2d_weight_grad(const Var& x, const Var& grad_out,
                       const ConvGeometry& geometry, const Shape& weight_shape) {
  return make(conv_weight_grad_kernel(x.value(), grad_out.value(), geometry,
                                      weight_shape),
              {x, grad_out},
              [x, grad_out, geometry](const Var& g, const Var&,
                                      const std::vector<bool>& needed) {
                return std::vector<Var>{
                    needed[0]
                        ? conv2d_input_grad(grad_out, g, geometry, x.shape())
                        : Var(),
                    needed[1] ? conv2d(x, g, geometry) : Var()};
              },
              "conv2d_weight_grad");
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 4, "add_channel_bias");
  require_rank(bias, 1, "add_channel_bias");
  const Shape& s = x.shape();
  if (bias.shape()[0] != s[1]) {
    throw InputError("add_channel_bias: bias length does not match channels");
  }
  Var per_image = reshape(broadcast_rows(bias, s[0]), {s[0] * s[1]});
  Var planes = broadcast_cols(per_image, s[2] * s[3]);
  return add(x, reshape(planes, s));
}

Var max_pool2(const Var& x) {
  require_rank(x, 4, "max_pool2");
  const Shape& s = x.shape();
  const std::size_t ho = s[2] / 2;
  const std::size_t wo = s[3] / 2;
  if (ho == 0 || wo == 0) {
    throw InputError("max_pool2: input " + to_string(s) + " is below 2x2");
  }
  std::vector<std::size_t> indices;
  indices.reserve(s[0] * s[1] * ho * wo);
  const double* v = x.value().data();
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc) {
    const std::size_t base = nc * s[2] * s[3];
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = base + (2 * oy) * s[3] + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t at = base + (2 * oy + dy) * s[3] + 2 * ox + dx;
            if (v[at] > v[best]) best = at;
          }
        }
        indices.push_back(best);
      }
    }
  }
  return gather(x, std::move(indices), {s[0], s[1], ho, wo});
}

}  // namespace gradia::ad
