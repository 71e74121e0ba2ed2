#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bem/cammix.hpp"
#include "bem/image.hpp"
#include "bem/tinynn.hpp"

// Straightforward reference computations used to check the optimized code paths.
// Nothing here calls into the implementations it checks.
namespace bem::oracles {

// sum_{k=0}^{n-1} beta^k, accumulated in long double.
long double effective_number_series(long n, long double beta);

struct OracleComponent {
  long area = 0;
  int first = -1;  // smallest row-major index
  cammix::BBox bounds;
  std::vector<int> pixels;  // sorted
};

// Two-pass union-find labeling with 8-connectivity.
std::vector<OracleComponent> label_components(const cammix::BinaryMap& map);
// Largest area; ties go to the component whose first pixel comes first in row-major order.
OracleComponent largest_component(const cammix::BinaryMap& map);

struct DoubleParams {
  nn::BackboneConfig config;
  std::vector<std::vector<double>> kernels;  // per conv layer [out][in][3][3]
  std::vector<std::vector<double>> biases;
  std::vector<int> strides;
  std::vector<double> fc_weights;  // [classes][features]
  std::vector<double> fc_bias;
};

DoubleParams to_double(const nn::BackboneParams& params);

struct DoubleForward {
  std::vector<double> logits;        // [batch][classes]
  std::vector<double> feature_maps;  // [batch][channels][h][w]
  int feature_channels = 0;
  int feature_size = 0;
};

// Direct (loop) convolution, ReLU, global average pooling and the linear head.
// relu_pattern, when given, receives one byte per ReLU unit: 1 where the input was positive.
DoubleForward reference_forward(const DoubleParams& params, std::span<const Image> images,
                                std::vector<std::uint8_t>* relu_pattern = nullptr);

// sum_m weights[m] * -log softmax(logits[m])[targets[m]] in double.
double reference_weighted_ce(std::span<const double> logits, int num_classes, std::span<const int> targets,
                             std::span<const double> weights);

// CAM for one sample and class from the reference feature maps.
std::vector<double> reference_cam(const DoubleForward& fwd, const DoubleParams& params, int sample, int class_idx);

}  // namespace bem::oracles
