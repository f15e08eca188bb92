#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "gradia/autodiff.hpp"
#include "gradia/error.hpp"
#include "test_support.hpp"

namespace gradia {
namespace {

using testing::random_tensor;
using testing::relative_error;
using Fn = std::function<ad::Var(const std::vector<ad::Var>&)>;

std::vector<double> analytic(const Fn& f, const std::vector<Tensor>& inputs) {
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(ad::variable(t));
  ad::Var out = f(vars);
  std::vector<double> flat;
  for (const auto& g : ad::grad(out, vars)) {
    flat.insert(flat.end(), g.value().values().begin(), g.value().values().end());
  }
  return flat;
}

std::vector<double> numeric(const Fn& f, std::vector<Tensor> inputs, double h = 1e-6) {
  auto eval = [&] {
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(ad::constant(t));
    return f(vars).item();
  };
  std::vector<double> flat;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = eval();
      t[i] = saved - h;
      const double down = eval();
      t[i] = saved;
      flat.push_back((up - down) / (2 * h));
    }
  }
  return flat;
}

void expect_gradients_match(const Fn& f, const std::vector<Tensor>& inputs,
                            double tol = 1e-6) {
  EXPECT_LT(relative_error(analytic(f, inputs), numeric(f, inputs)), tol);
}

// A fixed random projection turns any tensor into a scalar.
ad::Var project(const ad::Var& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul_const(x, random_tensor(x.shape(), rng)));
}

class AutodiffTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{7};
};

TEST_F(AutodiffTest, ElementwiseOps) {
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3, 4}, rng);
  expect_gradients_match([](auto& v) { return project(ad::add(v[0], v[1])); }, {a, b});
  expect_gradients_match([](auto& v) { return project(ad::sub(v[0], v[1])); }, {a, b});
  expect_gradients_match([](auto& v) { return project(ad::mul(v[0], v[1])); }, {a, b});
  expect_gradients_match([](auto& v) { return project(ad::scale(v[0], -2.5)); }, {a});
  expect_gradients_match([](auto& v) { return project(ad::relu(v[0])); }, {a});
  expect_gradients_match([](auto& v) { return project(ad::abs(v[0])); }, {a});
  expect_gradients_match([](auto& v) { return project(ad::square(v[0])); }, {a});
  expect_gradients_match([](auto& v) { return project(ad::exp(v[0])); }, {a});
  expect_gradients_match([](auto& v) { return project(ad::reciprocal_or_zero(v[0])); }, {a});
}

TEST_F(AutodiffTest, ReductionsAndBroadcasts) {
  const Tensor m = random_tensor({3, 5}, rng);
  const Tensor row = random_tensor({5}, rng);
  const Tensor col = random_tensor({3}, rng);
  expect_gradients_match([](auto& v) { return ad::mean(ad::square(v[0])); }, {m});
  expect_gradients_match([](auto& v) { return project(ad::sum_cols(v[0])); }, {m});
  expect_gradients_match([](auto& v) { return project(ad::sum_rows(v[0])); }, {m});
  expect_gradients_match([](auto& v) { return project(ad::broadcast_rows(v[0], 3)); }, {row});
  expect_gradients_match([](auto& v) { return project(ad::broadcast_cols(v[0], 4)); }, {col});
  expect_gradients_match([](auto& v) { return project(ad::logsumexp_rows(v[0])); }, {m});
  expect_gradients_match([](auto& v) { return project(ad::max_rows(v[0])); }, {m});
  expect_gradients_match([](auto& v) { return project(ad::min_rows(v[0])); }, {m});
  expect_gradients_match([](auto& v) { return project(ad::pick(v[0], {4, 0, 2})); }, {m});
  expect_gradients_match(
      [](auto& v) { return project(ad::expand_scalar(ad::sum(v[0]), {2, 2})); }, {m});
  expect_gradients_match(
      [](auto& v) { return project(ad::gather(v[0], {1, 1, 7, 14}, {2, 2})); }, {m});
  expect_gradients_match(
      [](auto& v) { return project(ad::scatter_add(v[0], {0, 3, 3, 5}, {2, 3})); },
      {random_tensor({4}, rng)});
}

TEST_F(AutodiffTest, ChannelOps) {
  const Tensor x = random_tensor({2, 3, 2, 3}, rng);
  const Tensor one = random_tensor({2, 1, 2, 3}, rng);
  const Tensor bias = random_tensor({3}, rng);
  expect_gradients_match([](auto& v) { return project(ad::sum_channels(v[0])); }, {x});
  expect_gradients_match([](auto& v) { return project(ad::broadcast_channels(v[0], 3)); },
                         {one});
  expect_gradients_match([](auto& v) { return project(ad::add_channel_bias(v[0], v[1])); },
                         {x, bias});
  expect_gradients_match([](auto& v) { return project(ad::max_pool2(v[0])); },
                         {random_tensor({1, 2, 5, 4}, rng)});
}

TEST_F(AutodiffTest, MatmulAndTranspose) {
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  expect_gradients_match([](auto& v) { return project(ad::matmul(v[0], v[1])); }, {a, b});
  expect_gradients_match([](auto& v) { return project(ad::transpose(v[0])); }, {a});
}

TEST_F(AutodiffTest, Conv2dFirstOrder) {
  for (std::size_t stride : {1, 2}) {
    for (std::size_t pad : {0, 1}) {
      const ad::ConvGeometry g{stride, pad};
      const Tensor x = random_tensor({2, 2, 5, 5}, rng);
      const Tensor w = random_tensor({3, 2, 3, 3}, rng);
      expect_gradients_match([g](auto& v) { return project(ad::conv2d(v[0], v[1], g)); },
                             {x, w});
    }
  }
}

TEST_F(AutodiffTest, Conv2dMatchesDirectSum) {
  const Tensor x = random_tensor({1, 2, 4, 5}, rng);
  const Tensor w = random_tensor({2, 2, 3, 3}, rng);
  const ad::ConvGeometry g{1, 1};
  const Tensor y = ad::conv2d(ad::constant(x), ad::constant(w), g).value();
  ASSERT_EQ(y.shape(), (Shape{1, 2, 4, 5}));
  for (std::size_t co = 0; co < 2; ++co) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t ci = 0; ci < 2; ++ci) {
          for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = 0; b < 3; ++b) {
              const long r = static_cast<long>(i + a) - 1;
              const long c = static_cast<long>(j + b) - 1;
              if (r < 0 || c < 0 || r >= 4 || c >= 5) continue;
              s += x.at(0, ci, r, c) * w.at(co, ci, a, b);
            }
          }
        }
        EXPECT_NEAR(y.at(0, co, i, j), s, 1e-12);
      }
    }
  }
}

// Differentiating a gradient: d/dx of <v, dL/dx> checked against finite
// differences of the first-order gradient itself.
TEST_F(AutodiffTest, SecondOrderThroughConvAndPooling) {
  const ad::ConvGeometry g{1, 1};
  const Tensor w = random_tensor({2, 1, 3, 3}, rng);
  const Tensor x0 = random_tensor({1, 1, 4, 4}, rng);
  auto inner = [&](const ad::Var& w_var, const ad::Var& x, bool create) {
    ad::Var y = ad::max_pool2(ad::relu(ad::conv2d(x, w_var, g)));
    ad::Var loss = ad::sum(ad::square(y));
    return ad::grad(loss, std::span<const ad::Var>(&x, 1), create)[0];
  };
  Fn f = [&](const std::vector<ad::Var>& v) {
    const bool create = v[0].requires_grad();
    return project(inner(v[0], ad::variable(x0), create), 5);
  };
  expect_gradients_match(f, {w}, 1e-5);
}

TEST_F(AutodiffTest, SecondOrderThroughLogSumExp) {
  const Tensor m = random_tensor({2, 3}, rng);
  Fn f = [](const std::vector<ad::Var>& v) {
    const bool create = v[0].requires_grad();
    const ad::Var x = create ? v[0] : ad::variable(v[0].value());
    ad::Var s = ad::sum(ad::logsumexp_rows(ad::mul(x, x)));
    return project(ad::grad(s, std::span<const ad::Var>(&x, 1), create)[0], 3);
  };
  expect_gradients_match(f, {m}, 1e-6);
}

TEST_F(AutodiffTest, UnusedInputGetsZeros) {
  ad::Var a = ad::variable(random_tensor({2}, rng));
  ad::Var b = ad::variable(random_tensor({3}, rng));
  std::vector<ad::Var> inputs{a, b};
  auto g = ad::grad(ad::sum(a), inputs);
  ASSERT_EQ(g[1].shape(), (Shape{3}));
  for (double v : g[1].value().values()) EXPECT_EQ(v, 0.0);
}

TEST_F(AutodiffTest, NoGradGuardStopsRecording) {
  ad::Var a = ad::variable(random_tensor({2}, rng));
  {
    ad::NoGradGuard guard;
    EXPECT_FALSE(ad::grad_enabled());
    EXPECT_FALSE(ad::sum(a).requires_grad());
    {
      ad::EnableGradGuard enable;
      EXPECT_TRUE(ad::sum(a).requires_grad());
    }
    EXPECT_FALSE(ad::grad_enabled());
  }
  EXPECT_TRUE(ad::grad_enabled());
}

TEST_F(AutodiffTest, ShapeMismatchThrows) {
  ad::Var a = ad::constant(Tensor({2, 3}));
  ad::Var b = ad::constant(Tensor({3, 2}));
  EXPECT_THROW(ad::add(a, b), InputError);
  EXPECT_THROW(ad::matmul(a, a), InputError);
}

}  // namespace
}  // namespace gradia
