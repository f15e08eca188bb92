#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gradia/autodiff.hpp"
#include "gradia/tensor.hpp"

namespace gradia {

enum class Pooling { kNone, kMax2 };

struct ConvLayerConfig {
  std::size_t out_maps = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  Pooling pool = Pooling::kNone;

  bool operator==(const ConvLayerConfig&) const = default;
};

// Conv stack (each conv followed by ReLU and optional 2x2 max pooling),
// then global average pooling and an affine head. The output of the last
// conv block is the penultimate layer whose K maps feed Grad-CAM.
struct ModelConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t input_channels = 1;
  std::vector<ConvLayerConfig> conv_stack = {
      {8, 3, 1, 1, Pooling::kMax2},
      {16, 3, 1, 1, Pooling::kMax2},
      {32, 3, 1, 1, Pooling::kNone},
  };
  std::size_t num_classes = 2;

  bool operator==(const ModelConfig&) const = default;
};

struct FeatureGeometry {
  std::size_t maps = 0;    // K
  std::size_t height = 0;  // u
  std::size_t width = 0;   // v
};

// Throws ConfigError when any layer is degenerate or the grid collapses.
FeatureGeometry feature_geometry(const ModelConfig& config);
void validate(const ModelConfig& config);

// Tensors are ordered conv0.weight, conv0.bias, conv1.weight, ...,
// head.weight (classes, K), head.bias (classes).
struct Parameters {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<Tensor> tensors;

  const Tensor& conv_weight(std::size_t layer) const { return tensors[2 * layer]; }
  const Tensor& conv_bias(std::size_t layer) const { return tensors[2 * layer + 1]; }
  const Tensor& head_weight() const { return tensors[tensors.size() - 2]; }
  const Tensor& head_bias() const { return tensors[tensors.size() - 1]; }
  Tensor& head_weight() { return tensors[tensors.size() - 2]; }
  Tensor& head_bias() { return tensors[tensors.size() - 1]; }

  std::size_t count() const;
  bool operator==(const Parameters&) const = default;
};

Parameters init_model(const ModelConfig& config, std::uint64_t seed);

// Parameters lifted into the autodiff graph as leaves.
struct ParamVars {
  std::vector<ad::Var> tensors;
  static ParamVars track(const Parameters& params);
};

// One recorded forward pass over a batch (N, C, H, W).
struct TapedForward {
  ParamVars params;
  ad::Var input;
  ad::Var features;  // (N, K, u, v)
  ad::Var logits;    // (N, classes)
};

TapedForward forward_batch(const Parameters& params, const Tensor& images);
// Forward pass against already-tracked parameter leaves, so several batches
// can contribute to one loss over a single set of parameters.
TapedForward forward_batch(const ParamVars& params, const ModelConfig& config,
                           const Tensor& images);
// Stacks (C, H, W) or (H, W) images into one (N, C, H, W) batch.
Tensor stack_images(const std::vector<const Tensor*>& images,
                    const ModelConfig& config);

struct ForwardTrace {
  std::string input_ref;
  Tensor logits;        // (classes)
  Tensor feature_maps;  // (K, u, v)
  std::shared_ptr<const TapedForward> tape;
};

// `image` is (H, W) for single-channel configs or (C, H, W).
ForwardTrace forward(const Parameters& params, const Tensor& image,
                     std::string input_ref = {});

struct Prediction {
  std::size_t class_index = 0;
  std::vector<double> probabilities;
};

Prediction softmax_prediction(std::span<const double> logits);
Prediction predict(const Parameters& params, const Tensor& image);

// dY^c / dA^k_ij for every k, i, j as a (K, u, v) tensor.
Tensor grad_wrt_features(const ForwardTrace& trace, std::size_t class_index);
// Batched form over a tape; with `create_graph` the result stays
// differentiable with respect to the parameters.
ad::Var grad_wrt_features(const TapedForward& tape,
                          const std::vector<std::size_t>& class_indices,
                          bool create_graph);

// Gradients of a scalar loss for every parameter tensor; tensors the loss
// does not depend on get zeros.
std::vector<Tensor> grad_wrt_params(const ad::Var& loss, const ParamVars& params);

}  // namespace gradia
