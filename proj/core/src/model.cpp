#include "gradia/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gradia/error.hpp"

namespace gradia {

FeatureGeometry feature_geometry(const ModelConfig& config) {
  if (config.input_height == 0 || config.input_width == 0 ||
      config.input_channels == 0) {
    throw ConfigError("model input dimensions must be positive");
  }
  if (config.num_classes < 2) {
    throw ConfigError("model needs at least two classes");
  }
  if (config.conv_stack.empty()) {
    throw ConfigError("model needs at least one conv layer");
  }
  std::size_t h = config.input_height;
  std::size_t w = config.input_width;
  for (std::size_t i = 0; i < config.conv_stack.size(); ++i) {
    const auto& layer = config.conv_stack[i];
    const std::string where = "conv layer " + std::to_string(i);
    if (layer.out_maps == 0 || layer.kernel == 0 || layer.stride == 0) {
      throw ConfigError(where + " has a zero-sized dimension");
    }
    const ad::ConvGeometry g{layer.stride, layer.padding};
    h = ad::conv_output_size(h, layer.kernel, g);
    w = ad::conv_output_size(w, layer.kernel, g);
    if (h == 0 || w == 0) {
      throw ConfigError(where + " produces an empty feature grid");
    }
    if (layer.pool == Pooling::kMax2) {
      h /= 2;
      w /= 2;
      if (h == 0 || w == 0) {
        throw ConfigError(where + " pools below 1x1");
      }
    }
  }
  return {config.conv_stack.back().out_maps, h, w};
}

void validate(const ModelConfig& config) { (void)feature_geometry(config); }

std::size_t Parameters::count() const {
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.size();
  return total;
}

Parameters init_model(const ModelConfig& config, std::uint64_t seed) {
  const FeatureGeometry geometry = feature_geometry(config);
  Parameters params;
  params.config = config;
  params.seed = seed;
  std::mt19937_64 rng(seed);

  // He-normal for the ReLU conv stack; the head uses the same fan-in rule.
  auto he_normal = [&rng](Shape shape, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = dist(rng);
    return t;
  };

  std::size_t in_maps = config.input_channels;
  for (const auto& layer : config.conv_stack) {
    params.tensors.push_back(
        he_normal({layer.out_maps, in_maps, layer.kernel, layer.kernel},
                in_maps * layer.kernel * layer.kernel));
    params.tensors.emplace_back(Shape{layer.out_maps}, 0.0);
    in_maps = layer.out_maps;
  }
  params.tensors.push_back(
      he_normal({config.num_classes, geometry.maps}, geometry.maps));
  params.tensors.emplace_back(Shape{config.num_classes}, 0.0);
  return params;
}

ParamVars ParamVars::track(const Parameters& params) {
  ParamVars vars;
  vars.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.tensors.push_back(ad::variable(t));
  return vars;
}

Tensor stack_images(const std::vector<const Tensor*>& images,
                    const ModelConfig& config) {
  const std::size_t c = config.input_channels;
  const std::size_t h = config.input_height;
  const std::size_t w = config.input_width;
  Tensor batch({images.size(), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Tensor& image = *images[n];
    const bool matches =
        (image.rank() == 2 && c == 1 && image.dim(0) == h && image.dim(1) == w) ||
        (image.rank() == 3 && image.dim(0) == c && image.dim(1) == h &&
         image.dim(2) == w);
    if (!matches) {
      throw InputError("image of shape " + to_string(image.shape()) +
                       " does not match model input (" + std::to_string(c) +
                       ", " + std::to_string(h) + ", " + std::to_string(w) +
                       ")");
    }
    std::copy(image.data(), image.data() + image.size(),
              batch.data() + n * c * h * w);
  }
  return batch;
}

TapedForward forward_batch(const Parameters& params, const Tensor& images) {
  return forward_batch(ParamVars::track(params), params.config, images);
}

TapedForward forward_batch(const ParamVars& params, const ModelConfig& config,
                           const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != config.input_channels ||
      images.dim(2) != config.input_height ||
      images.dim(3) != config.input_width) {
    throw InputError("batch of shape " + to_string(images.shape()) +
                     " does not match model input");
  }
  TapedForward tape;
  tape.params = params;
  tape.input = ad::constant(images);

  ad::Var h = tape.input;
  for (std::size_t i = 0; i < config.conv_stack.size(); ++i) {
    const auto& layer = config.conv_stack[i];
    h = ad::conv2d(h, tape.params.tensors[2 * i],
                   {layer.stride, layer.padding});
    h = ad::add_channel_bias(h, tape.params.tensors[2 * i + 1]);
    h = ad::relu(h);
    if (layer.pool == Pooling::kMax2) h = ad::max_pool2(h);
  }
  tape.features = h;

  const Shape& s = h.shape();
  const std::size_t n = s[0];
  const std::size_t k = s[1];
  const double cells = static_cast<double>(s[2] * s[3]);
  ad::Var pooled = ad::reshape(
      ad::scale(ad::sum_cols(ad::reshape(h, {n * k, s[2] * s[3]})), 1.0 / cells),
      {n, k});
  const auto& head_w = tape.params.tensors[tape.params.tensors.size() - 2];
  const auto& head_b = tape.params.tensors.back();
  tape.logits = ad::add(ad::matmul(pooled, ad::transpose(head_w)),
                        ad::broadcast_rows(head_b, n));
  return tape;
}

ForwardTrace forward(const Parameters& params, const Tensor& image,
                     std::string input_ref) {
  auto tape = std::make_shared<TapedForward>(
      forward_batch(params, stack_images({&image}, params.config)));
  ForwardTrace trace;
  trace.input_ref = std::move(input_ref);
  const Shape& fs = tape->features.shape();
  trace.feature_maps = tape->features.value().reshaped({fs[1], fs[2], fs[3]});
  trace.logits = tape->logits.value().reshaped({params.config.num_classes});
  trace.tape = std::move(tape);
  return trace;
}

Prediction softmax_prediction(std::span<const double> logits) {
  if (logits.empty()) throw InputError("empty logit vector");
  Prediction out;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  out.probabilities.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probabilities[i] = std::exp(logits[i] - top);
    total += out.probabilities[i];
  }
  for (double& p : out.probabilities) p /= total;
  out.class_index = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[out.class_index]) out.class_index = i;
  }
  return out;
}

Prediction predict(const Parameters& params, const Tensor& image) {
  ad::NoGradGuard no_grad;
  const ForwardTrace trace = forward(params, image);
  return softmax_prediction(trace.logits.values());
}

ad::Var grad_wrt_features(const TapedForward& tape,
                          const std::vector<std::size_t>& class_indices,
                          bool create_graph) {
  const std::size_t classes = tape.logits.shape()[1];
  for (std::size_t c : class_indices) {
    if (c >= classes) {
      throw InputError("class index " + std::to_string(c) +
                       " out of range for " + std::to_string(classes) +
                       " classes");
    }
  }
  if (!tape.features.requires_grad()) {
    throw InputError("forward pass was not recorded; gradients unavailable");
  }
  // Samples are independent, so the gradient of the summed selected logits
  // gives every sample's own dY^c/dA.
  ad::Var selected;
  {
    ad::EnableGradGuard enable;
    selected = ad::sum(ad::pick(tape.logits, class_indices));
  }
  const ad::Var inputs[] = {tape.features};
  return ad::grad(selected, inputs, create_graph).front();
}

Tensor grad_wrt_features(const ForwardTrace& trace, std::size_t class_index) {
  if (!trace.tape) throw InputError("trace has no retained forward state");
  ad::Var g = grad_wrt_features(*trace.tape, {class_index}, false);
  const Shape& s = g.shape();
  return g.value().reshaped({s[1], s[2], s[3]});
}

std::vector<Tensor> grad_wrt_params(const ad::Var& loss,
                                    const ParamVars& params) {
  std::vector<ad::Var> grads = ad::grad(loss, params.tensors, false);
  std::vector<Tensor> out;
  out.reserve(grads.size());
  for (auto& g : grads) out.push_back(g.value());
  return out;
}

}  // namespace gradia
