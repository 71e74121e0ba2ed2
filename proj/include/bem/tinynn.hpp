#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bem/image.hpp"
#include "bem/rng.hpp"

// Minimal differentiable compute: a three-block convolutional backbone with
// hand-written reverse-mode gradients, SGD with momentum, the cosine learning
// rate schedule and class activation maps.
namespace bem::nn {

struct BackboneConfig {
  int in_channels = 3;
  int image_size = 32;
  std::array<int, 3> channels{8, 16, 32};
  int num_classes = 10;

  bool operator==(const BackboneConfig&) const = default;
};

// 3x3 convolution, padding 1, followed by ReLU. Kernels are [out][in][3][3].
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<float> kernels;
  std::vector<float> bias;

  bool operator==(const ConvLayer&) const = default;
};

// Linear head on globally average-pooled features. Weights are [classes][features].
struct Classifier {
  int in_features = 0;
  int num_classes = 0;
  std::vector<float> weights;
  std::vector<float> bias;

  bool operator==(const Classifier&) const = default;
};

struct BackboneParams {
  BackboneConfig config;
  std::vector<ConvLayer> conv_layers;
  Classifier classifier;

  std::size_t parameter_count() const;
  // Spatial size of the final feature maps and the integer stride back to input pixels.
  int feature_size() const;
  int feature_stride() const;

  bool operator==(const BackboneParams&) const = default;
};

// Visits every parameter tensor with a stable name such as "conv1.kernels" or "fc.bias".
void for_each_tensor(BackboneParams& params, const std::function<void(const std::string&, std::span<float>)>& fn);
void for_each_tensor(const BackboneParams& params,
                     const std::function<void(const std::string&, std::span<const float>)>& fn);

BackboneParams make_backbone(const BackboneConfig& config);  // all-zero parameters
BackboneParams init_backbone(const BackboneConfig& config, Rng& rng);  // He-normal kernels, zero biases
BackboneParams zeros_like(const BackboneParams& params);

struct ForwardCache;

struct BackboneOutput {
  int batch = 0;
  int num_classes = 0;
  std::vector<float> logits;  // [batch][classes]
  std::vector<float> probs;   // row-wise softmax of logits
  Tensor4 feature_maps;       // post-ReLU output of the final conv block
  std::shared_ptr<const ForwardCache> cache;

  std::span<const float> logits_row(int n) const {
    return {logits.data() + static_cast<std::size_t>(n) * num_classes, static_cast<std::size_t>(num_classes)};
  }
  std::span<const float> probs_row(int n) const {
    return {probs.data() + static_cast<std::size_t>(n) * num_classes, static_cast<std::size_t>(num_classes)};
  }
};

enum class Retain { kNone, kActivations };

BackboneOutput forward(const BackboneParams& params, const Tensor4& images, Retain retain = Retain::kActivations);

// Gradients of sum_{n,c} logit_grads[n][c] * logits[n][c] with respect to every parameter.
BackboneParams backward(const BackboneParams& params, const BackboneOutput& output, std::span<const float> logit_grads);

void softmax_rows(std::span<const float> logits, int num_classes, std::span<float> probs);

struct WeightedCe {
  float loss = 0.0f;
  std::vector<float> logit_grads;  // weights[m] * (probs[m] - onehot(targets[m]))
};

// Sum over rows of weights[m] * -log softmax(logits[m])[targets[m]].
WeightedCe weighted_softmax_ce(std::span<const float> logits, int num_classes, std::span<const int> targets,
                               std::span<const float> weights);

// Per-row cross entropy -log softmax(logits[m])[targets[m]].
std::vector<float> softmax_ce_rows(std::span<const float> logits, int num_classes, std::span<const int> targets);

double cosine_lr(long t, long total, double base_lr);

struct OptimizerState {
  BackboneParams velocity;
  double base_lr = 0.03;
  double momentum = 0.9;
  long iteration = 0;
  long total_iterations = 1;

  double current_lr() const;
};

OptimizerState make_optimizer(const BackboneParams& params, double base_lr, double momentum, long total_iterations);

// v <- mu v + g; p <- p - lr v with lr = cosine_lr(iteration, total, base_lr); iteration += 1.
void sgd_step(BackboneParams& params, const BackboneParams& grads, OptimizerState& opt);

// CAM[y][x] = sum_k W[class][k] * feature_maps[sample][k][y][x], unnormalized.
std::vector<float> cam(const BackboneOutput& output, const BackboneParams& params, int sample, int class_idx);

}  // namespace bem::nn
