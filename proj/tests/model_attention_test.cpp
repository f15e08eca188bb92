#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradia/attention.hpp"
#include "gradia/error.hpp"
#include "gradia/model.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace gradia {
namespace {

using testing::NaiveForward;
using testing::naive_forward;
using testing::naive_grad_cam;
using testing::random_image;
using testing::random_params;
using testing::small_config;
using testing::tiny_config;

TEST(Model, FeatureGeometry) {
  const FeatureGeometry g = feature_geometry(ModelConfig{});
  EXPECT_EQ(g.maps, 32u);
  EXPECT_EQ(g.height, 16u);
  EXPECT_EQ(g.width, 16u);
  const FeatureGeometry t = feature_geometry(tiny_config());
  EXPECT_EQ(t.maps, 2u);
  EXPECT_EQ(t.height, 2u);
  EXPECT_EQ(t.width, 2u);
}

TEST(Model, DegenerateConfigsRejected) {
  ModelConfig c = tiny_config();
  c.num_classes = 1;
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny_config();
  c.conv_stack.clear();
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny_config();
  c.conv_stack[0].kernel = 9;
  c.conv_stack[0].padding = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Model, InitIsDeterministic) {
  EXPECT_EQ(init_model(small_config(), 3), init_model(small_config(), 3));
  EXPECT_NE(init_model(small_config(), 3), init_model(small_config(), 4));
}

TEST(Model, ForwardMatchesNaiveLoops) {
  std::mt19937_64 rng(11);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Parameters p = random_params(small_config(), seed);
    const Tensor image = random_image(16, 16, rng);
    const ForwardTrace trace = forward(p, image);
    const NaiveForward ref = naive_forward(p, image);
    ASSERT_EQ(trace.feature_maps.shape(), ref.features.shape());
    for (std::size_t i = 0; i < ref.features.size(); ++i) {
      EXPECT_NEAR(trace.feature_maps[i], ref.features[i], 1e-12);
    }
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(trace.logits[c], ref.logits[c], 1e-12);
  }
}

TEST(Model, BatchedForwardMatchesSingle) {
  std::mt19937_64 rng(12);
  const Parameters p = random_params(small_config(), 1);
  const Tensor a = random_image(16, 16, rng);
  const Tensor b = random_image(16, 16, rng);
  const TapedForward tape = forward_batch(p, stack_images({&a, &b}, p.config));
  const ForwardTrace tb = forward(p, b);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(tape.logits.value()[3 + c], tb.logits[c], 1e-12);
  }
}

TEST(Model, SoftmaxPrediction) {
  const std::vector<double> logits{1000.0, 1001.0};
  const Prediction p = softmax_prediction(logits);
  EXPECT_EQ(p.class_index, 1u);
  EXPECT_NEAR(p.probabilities[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(p.probabilities[0] + p.probabilities[1], 1.0, 1e-15);
}

// For GAP followed by an affine head, dY^c/dA^k_ij = W[c,k] / (u v).
TEST(Attention, FeatureGradientIsHeadWeightOverArea) {
  std::mt19937_64 rng(13);
  const Parameters p = random_params(small_config(), 2);
  const FeatureGeometry g = feature_geometry(p.config);
  const ForwardTrace trace = forward(p, random_image(16, 16, rng));
  for (std::size_t c = 0; c < 3; ++c) {
    const Tensor grads = grad_wrt_features(trace, c);
    for (std::size_t k = 0; k < g.maps; ++k) {
      const double expected =
          p.head_weight()[c * g.maps + k] / static_cast<double>(g.height * g.width);
      for (std::size_t i = 0; i < g.height * g.width; ++i) {
        EXPECT_NEAR(grads[k * g.height * g.width + i], expected, 1e-12);
      }
    }
  }
}

TEST(Attention, GradCamMatchesNaiveLoops) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 20; ++t) {
    const Parameters p = random_params(small_config(), 100 + t);
    const ForwardTrace trace = forward(p, random_image(16, 16, rng));
    const FeatureGeometry g = feature_geometry(p.config);
    for (std::size_t c = 0; c < 3; ++c) {
      Tensor grads({g.maps, g.height, g.width});
      for (std::size_t k = 0; k < g.maps; ++k) {
        for (std::size_t i = 0; i < g.height * g.width; ++i) {
          grads[k * g.height * g.width + i] =
              p.head_weight()[c * g.maps + k] / static_cast<double>(g.height * g.width);
        }
      }
      const Tensor ref = naive_grad_cam(trace.feature_maps, grads);
      const Tensor cam = grad_cam(trace, c);
      ASSERT_EQ(cam.shape(), (Shape{g.height, g.width}));
      for (std::size_t i = 0; i < cam.size(); ++i) EXPECT_NEAR(cam[i], ref[i], 1e-10);
    }
  }
}

TEST(Attention, BatchGradCamMatchesSingle) {
  std::mt19937_64 rng(15);
  const Parameters p = random_params(small_config(), 5);
  const Tensor a = random_image(16, 16, rng);
  const Tensor b = random_image(16, 16, rng);
  const TapedForward tape = forward_batch(p, stack_images({&a, &b}, p.config));
  const ad::Var cams = grad_cam_batch(tape, {2, 0}, true);
  const Tensor ca = grad_cam(forward(p, a), 2);
  const Tensor cb = grad_cam(forward(p, b), 0);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(cams.value()[i], ca[i], 1e-12);
    EXPECT_NEAR(cams.value()[16 + i], cb[i], 1e-12);
  }
}

TEST(Attention, NormalizeMinMax) {
  const AttentionMap m = normalize(Tensor({2, 2}, {1.0, 3.0, 2.0, 5.0}), 1, "x");
  EXPECT_TRUE(m.normalized);
  EXPECT_EQ(m.class_index, 1u);
  EXPECT_EQ(m.instance_id, "x");
  const std::vector<double> expected{0.0, 0.5, 0.25, 1.0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(m.grid[i], expected[i]);
  const AttentionMap flat = normalize(Tensor({2, 2}, 0.7));
  for (double v : flat.grid.values()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, NormalizeRowsMatchesNormalize) {
  std::mt19937_64 rng(16);
  const Tensor raw = testing::random_tensor({3, 6}, rng);
  const Tensor rows = normalize_rows(ad::constant(raw)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    Tensor one({2, 3});
    for (std::size_t i = 0; i < 6; ++i) one[i] = raw[r * 6 + i];
    const AttentionMap m = normalize(one);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(rows[r * 6 + i], m.grid[i], 1e-15);
  }
}

TEST(Attention, UpsampleHalfPixelBilinear) {
  AttentionMap m;
  m.grid = Tensor({2, 2}, {0.0, 1.0, 2.0, 3.0});
  const Tensor up = upsample(m, 4, 4);
  // Output pixel y samples source (y + 0.5) / 2 - 0.5, clamped to [0, 1].
  auto src = [](double y) { return std::clamp((y + 0.5) / 2.0 - 0.5, 0.0, 1.0); };
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      const double r = src(y), c = src(x);
      EXPECT_NEAR(up[y * 4 + x], 2.0 * r + c, 1e-15);
    }
  }
  EXPECT_THROW(upsample(m, 0, 4), InputError);
}

TEST(Attention, UpsampleIdentityAtSameSize) {
  std::mt19937_64 rng(17);
  AttentionMap m;
  m.grid = testing::random_tensor({3, 5}, rng);
  const Tensor up = upsample(m, 3, 5);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_DOUBLE_EQ(up[i], m.grid[i]);
}

TEST(Attention, Binarize) {
  const BinaryMask b = binarize(Tensor({1, 4}, {0.1, 0.5, 0.49, 1.0}), 0.5);
  EXPECT_EQ(b.bits(), (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_EQ(b.provenance(), MaskProvenance::kBinarizedAttention);
  EXPECT_THROW(binarize(Tensor({1, 1}), 1.5), InputError);
}

BinaryMask random_mask(std::size_t h, std::size_t w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(p);
  BinaryMask m(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) m.set(r, c, bit(rng));
  }
  return m;
}

TEST(Rle, KnownEncodings) {
  BinaryMask full(3, 2);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) full.set(r, c, true);
  }
  EXPECT_EQ(encode_rle(full), "2 3 0 6");
  EXPECT_EQ(encode_rle(BinaryMask(3, 2)), "2 3 6");
  BinaryMask one(2, 2);
  one.set(1, 0, true);
  EXPECT_EQ(encode_rle(one), "2 2 2 1 1");
}

TEST(Rle, RoundTripsRandomMasks) {
  std::mt19937_64 rng(18);
  for (int t = 0; t < 200; ++t) {
    const std::size_t h = 1 + rng() % 20, w = 1 + rng() % 20;
    const BinaryMask m = random_mask(h, w, (t % 5) / 4.0, rng);
    EXPECT_EQ(decode_rle(encode_rle(m)), m);
  }
}

TEST(Rle, MalformedRejected) {
  EXPECT_THROW(decode_rle("2 2 3"), InputError);
  EXPECT_THROW(decode_rle("2 2 1 0 3"), InputError);
  EXPECT_THROW(decode_rle("2 x 4"), InputError);
  EXPECT_THROW(decode_rle(""), InputError);
}

// Split every pixel into u x v sub-samples; each sub-sample falls in exactly
// one grid cell, so counting them gives the exact covered area.
Tensor supersampled_target(const BinaryMask& m, std::size_t u, std::size_t v) {
  const std::size_t h = m.height(), w = m.width();
  Tensor out({u, v});
  for (std::size_t a = 0; a < h * u; ++a) {
    for (std::size_t b = 0; b < w * v; ++b) {
      if (m.at(a / u, b / v)) out[(a / h) * v + b / w] += 1.0;
    }
  }
  for (double& x : out.values()) x /= static_cast<double>(h * w);
  return out;
}

TEST(Attention, MaskToTargetGridExactArea) {
  std::mt19937_64 rng(19);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 1 + rng() % 24, w = 1 + rng() % 24;
    const std::size_t u = 1 + rng() % 7, v = 1 + rng() % 7;
    const BinaryMask m = random_mask(h, w, 0.4, rng);
    const TargetAttentionGrid g = mask_to_target_grid(m, u, v);
    const Tensor ref = supersampled_target(m, u, v);
    for (std::size_t i = 0; i < u * v; ++i) EXPECT_NEAR(g.grid[i], ref[i], 1e-12);
  }
}

TEST(Attention, FullMaskGivesOnes) {
  BinaryMask m(64, 64);
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 64; ++c) m.set(r, c, true);
  }
  const TargetAttentionGrid g = mask_to_target_grid(m, 16, 16);
  for (double x : g.grid.values()) EXPECT_DOUBLE_EQ(x, 1.0);
}

}  // namespace
}  // namespace gradia
