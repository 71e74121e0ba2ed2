#include "bem/tinynn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "bem/errors.hpp"

namespace bem::nn {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using CVec = Eigen::Map<const Eigen::VectorXf>;

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;

int conv_out_size(int in, int stride) { return (in + 2 - kKernel) / stride + 1; }

// Output columns ox in [lo, hi) read input column ox * stride + kx - 1 inside [0, w).
struct ColRange {
  int lo, hi;
};

ColRange valid_cols(int kx, int stride, int w, int wo) {
  const int lo = kx == 0 ? 1 : 0;
  const int hi = std::min(wo, (w - kx) / stride + 1);
  return {std::min(lo, hi), hi};
}

// Input rows are channels, columns are (batch, y, x) in row-major order.
void im2col(const MatR& in, int batch, int h, int w, int stride, int ho, int wo, MatR& col) {
  const int cin = static_cast<int>(in.rows());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  col.resize(static_cast<Eigen::Index>(cin) * kTaps, static_cast<Eigen::Index>(batch) * ho * wo);
  for (int ci = 0; ci < cin; ++ci) {
    const float* src = in.data() + static_cast<std::size_t>(ci) * batch * plane;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        float* dst = col.data() + static_cast<std::size_t>((ci * kKernel + ky) * kKernel + kx) * col.cols();
        const ColRange r = valid_cols(kx, stride, w, wo);
        for (int b = 0; b < batch; ++b) {
          const float* img = src + b * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - 1;
            float* row = dst + (static_cast<std::size_t>(b) * ho + oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill(row, row + wo, 0.0f);
              continue;
            }
            const float* line = img + static_cast<std::size_t>(iy) * w + kx - 1;
            std::fill(row, row + r.lo, 0.0f);
            if (stride == 1) {
              std::copy(line + r.lo, line + r.hi, row + r.lo);
            } else {
              for (int ox = r.lo; ox < r.hi; ++ox) row[ox] = line[ox * stride];
            }
            std::fill(row + r.hi, row + wo, 0.0f);
          }
        }
      }
    }
  }
}

void col2im(const MatR& col, int batch, int h, int w, int stride, int ho, int wo, MatR& out) {
  const int cin = static_cast<int>(col.rows()) / kTaps;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  out.setZero(cin, static_cast<Eigen::Index>(batch) * plane);
  for (int ci = 0; ci < cin; ++ci) {
    float* dst = out.data() + static_cast<std::size_t>(ci) * batch * plane;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const float* src = col.data() + static_cast<std::size_t>((ci * kKernel + ky) * kKernel + kx) * col.cols();
        const ColRange r = valid_cols(kx, stride, w, wo);
        for (int b = 0; b < batch; ++b) {
          float* img = dst + b * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            const float* row = src + (static_cast<std::size_t>(b) * ho + oy) * wo;
            float* line = img + static_cast<std::size_t>(iy) * w + kx - 1;
            for (int ox = r.lo; ox < r.hi; ++ox) line[ox * stride] += row[ox];
          }
        }
      }
    }
  }
}

// Scratch matrices reused across calls to avoid re-faulting large buffers.
MatR& workspace(int slot) {
  thread_local MatR buffers[3];
  return buffers[slot];
}

std::string layer_name(std::size_t i) { return "conv" + std::to_string(i + 1); }

}  // namespace

struct ForwardCache {
  struct Layer {
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    MatR activation;  // post-ReLU output, channels x (batch, y, x)
  };
  MatR input;  // network input, channels x (batch, y, x)
  std::vector<Layer> layers;
  MatR pooled;  // batch x features
};

std::size_t BackboneParams::parameter_count() const {
  std::size_t n = classifier.weights.size() + classifier.bias.size();
  for (const auto& layer : conv_layers) n += layer.kernels.size() + layer.bias.size();
  return n;
}

int BackboneParams::feature_size() const {
  int size = config.image_size;
  for (const auto& layer : conv_layers) size = conv_out_size(size, layer.stride);
  return size;
}

int BackboneParams::feature_stride() const {
  int stride = 1;
  for (const auto& layer : conv_layers) stride *= layer.stride;
  return stride;
}

void for_each_tensor(BackboneParams& params, const std::function<void(const std::string&, std::span<float>)>& fn) {
  for (std::size_t i = 0; i < params.conv_layers.size(); ++i) {
    fn(layer_name(i) + ".kernels", params.conv_layers[i].kernels);
    fn(layer_name(i) + ".bias", params.conv_layers[i].bias);
  }
  fn("fc.weights", params.classifier.weights);
  fn("fc.bias", params.classifier.bias);
}

void for_each_tensor(const BackboneParams& params,
                     const std::function<void(const std::string&, std::span<const float>)>& fn) {
  for (std::size_t i = 0; i < params.conv_layers.size(); ++i) {
    fn(layer_name(i) + ".kernels", params.conv_layers[i].kernels);
    fn(layer_name(i) + ".bias", params.conv_layers[i].bias);
  }
  fn("fc.weights", params.classifier.weights);
  fn("fc.bias", params.classifier.bias);
}

BackboneParams make_backbone(const BackboneConfig& config) {
  if (config.in_channels < 1) throw ConfigError("backbone: in_channels must be >= 1", "in_channels");
  if (config.num_classes < 2) throw ConfigError("backbone: num_classes must be >= 2", "num_classes");
  if (config.image_size < 8 || config.image_size % 4 != 0)
    throw ConfigError("backbone: image_size must be a multiple of 4 and >= 8", "image_size");
  BackboneParams p;
  p.config = config;
  int in = config.in_channels;
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    ConvLayer layer;
    layer.in_channels = in;
    layer.out_channels = config.channels[i];
    layer.stride = i == 0 ? 1 : 2;
    layer.kernels.assign(static_cast<std::size_t>(layer.out_channels) * in * kTaps, 0.0f);
    layer.bias.assign(layer.out_channels, 0.0f);
    in = layer.out_channels;
    p.conv_layers.push_back(std::move(layer));
  }
  p.classifier.in_features = in;
  p.classifier.num_classes = config.num_classes;
  p.classifier.weights.assign(static_cast<std::size_t>(config.num_classes) * in, 0.0f);
  p.classifier.bias.assign(config.num_classes, 0.0f);
  return p;
}

BackboneParams init_backbone(const BackboneConfig& config, Rng& rng) {
  BackboneParams p = make_backbone(config);
  for (auto& layer : p.conv_layers) {
    const double scale = std::sqrt(2.0 / (layer.in_channels * kTaps));
    for (float& k : layer.kernels) k = static_cast<float>(normal(rng, 0.0, scale));
  }
  const double scale = std::sqrt(1.0 / p.classifier.in_features);
  for (float& w : p.classifier.weights) w = static_cast<float>(normal(rng, 0.0, scale));
  return p;
}

BackboneParams zeros_like(const BackboneParams& params) {
  BackboneParams z = params;
  for_each_tensor(z, [](const std::string&, std::span<float> t) { std::fill(t.begin(), t.end(), 0.0f); });
  return z;
}

void softmax_rows(std::span<const float> logits, int num_classes, std::span<float> probs) {
  const std::size_t rows = logits.size() / num_classes;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* z = logits.data() + r * num_classes;
    float* p = probs.data() + r * num_classes;
    const float m = *std::max_element(z, z + num_classes);
    float sum = 0.0f;
    for (int c = 0; c < num_classes; ++c) {
      p[c] = std::exp(z[c] - m);
      sum += p[c];
    }
    for (int c = 0; c < num_classes; ++c) p[c] /= sum;
  }
}

BackboneOutput forward(const BackboneParams& params, const Tensor4& images, Retain retain) {
  const BackboneConfig& cfg = params.config;
  if (images.batch() < 1) throw ConfigError("forward: batch dimension must be >= 1", "batch");
  if (images.channels() != cfg.in_channels)
    throw ConfigError("forward: channel dimension is " + std::to_string(images.channels()) + ", expected " +
                          std::to_string(cfg.in_channels),
                      "channels");
  if (images.height() != cfg.image_size)
    throw ConfigError("forward: height dimension is " + std::to_string(images.height()) + ", expected " +
                          std::to_string(cfg.image_size),
                      "height");
  if (images.width() != cfg.image_size)
    throw ConfigError("forward: width dimension is " + std::to_string(images.width()) + ", expected " +
                          std::to_string(cfg.image_size),
                      "width");

  const int batch = images.batch();
  int h = images.height();
  int w = images.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  auto cache = std::make_shared<ForwardCache>();
  MatR& input = cache->input;
  input.resize(cfg.in_channels, static_cast<Eigen::Index>(batch) * plane);
  for (int c = 0; c < cfg.in_channels; ++c)
    for (int b = 0; b < batch; ++b)
      std::copy_n(images.data.data() + images.index(b, c, 0, 0), plane,
                  input.data() + (static_cast<std::size_t>(c) * batch + b) * plane);

  cache->layers.resize(params.conv_layers.size());
  MatR& col = workspace(0);
  const MatR* current = &input;
  for (std::size_t l = 0; l < params.conv_layers.size(); ++l) {
    const ConvLayer& layer = params.conv_layers[l];
    auto& lc = cache->layers[l];
    lc.in_h = h;
    lc.in_w = w;
    lc.out_h = conv_out_size(h, layer.stride);
    lc.out_w = conv_out_size(w, layer.stride);
    im2col(*current, batch, h, w, layer.stride, lc.out_h, lc.out_w, col);
    CMapR kernels(layer.kernels.data(), layer.out_channels, static_cast<Eigen::Index>(layer.in_channels) * kTaps);
    lc.activation.noalias() = kernels * col;
    lc.activation.colwise() += CVec(layer.bias.data(), layer.out_channels);
    lc.activation.array() = lc.activation.array().max(0.0f);
    if (retain == Retain::kNone) {
      if (l == 0) input.resize(0, 0);
      else cache->layers[l - 1].activation.resize(0, 0);
    }
    current = &lc.activation;
    h = lc.out_h;
    w = lc.out_w;
  }

  const int features = params.classifier.in_features;
  const std::size_t fplane = static_cast<std::size_t>(h) * w;
  const MatR& last = *current;
  cache->pooled.resize(batch, features);
  for (int c = 0; c < features; ++c)
    for (int b = 0; b < batch; ++b) {
      const float* src = last.data() + (static_cast<std::size_t>(c) * batch + b) * fplane;
      float sum = 0.0f;
      for (std::size_t i = 0; i < fplane; ++i) sum += src[i];
      cache->pooled(b, c) = sum / static_cast<float>(fplane);
    }

  BackboneOutput out;
  out.batch = batch;
  out.num_classes = params.classifier.num_classes;
  out.logits.resize(static_cast<std::size_t>(batch) * out.num_classes);
  MapR logits(out.logits.data(), batch, out.num_classes);
  CMapR fc(params.classifier.weights.data(), out.num_classes, features);
  logits.noalias() = cache->pooled * fc.transpose();
  logits.rowwise() += CVec(params.classifier.bias.data(), out.num_classes).transpose();
  out.probs.resize(out.logits.size());
  softmax_rows(out.logits, out.num_classes, out.probs);

  out.feature_maps = Tensor4(batch, features, h, w);
  for (int c = 0; c < features; ++c)
    for (int b = 0; b < batch; ++b)
      std::copy_n(last.data() + (static_cast<std::size_t>(c) * batch + b) * fplane, fplane,
                  out.feature_maps.data.data() + out.feature_maps.index(b, c, 0, 0));

  if (retain == Retain::kActivations) out.cache = std::move(cache);
  return out;
}

BackboneParams backward(const BackboneParams& params, const BackboneOutput& output, std::span<const float> logit_grads) {
  if (!output.cache) throw ContractViolation("backward: output has no cached activations (forward with Retain::kNone)");
  const ForwardCache& cache = *output.cache;
  if (cache.layers.size() != params.conv_layers.size() || cache.layers.back().activation.size() == 0 ||
      cache.input.size() == 0)
    throw ContractViolation("backward: cached activations do not match the parameters");
  const int batch = output.batch;
  const int classes = output.num_classes;
  require(logit_grads.size() == static_cast<std::size_t>(batch) * classes, "backward: logit_grads has wrong size");

  BackboneParams grads = zeros_like(params);
  const int features = params.classifier.in_features;
  CMapR g(logit_grads.data(), batch, classes);
  MapR dfc(grads.classifier.weights.data(), classes, features);
  dfc.noalias() = g.transpose() * cache.pooled;
  Eigen::Map<Eigen::VectorXf>(grads.classifier.bias.data(), classes) = g.colwise().sum().transpose();
  CMapR fc(params.classifier.weights.data(), classes, features);
  const MatR dpooled = g * fc;

  const auto& top = cache.layers.back();
  const std::size_t fplane = static_cast<std::size_t>(top.out_h) * top.out_w;
  MatR dact(features, static_cast<Eigen::Index>(batch) * fplane);
  for (int c = 0; c < features; ++c)
    for (int b = 0; b < batch; ++b) {
      const float v = dpooled(b, c) / static_cast<float>(fplane);
      std::fill_n(dact.data() + (static_cast<std::size_t>(c) * batch + b) * fplane, fplane, v);
    }

  MatR& col = workspace(0);
  MatR& dcol = workspace(1);
  MatR& dprev = workspace(2);
  for (std::size_t li = params.conv_layers.size(); li-- > 0;) {
    const ConvLayer& layer = params.conv_layers[li];
    const auto& lc = cache.layers[li];
    dact = (lc.activation.array() > 0.0f).select(dact, 0.0f);
    const MatR& layer_input = li == 0 ? cache.input : cache.layers[li - 1].activation;
    im2col(layer_input, batch, lc.in_h, lc.in_w, layer.stride, lc.out_h, lc.out_w, col);
    const Eigen::Index kcols = static_cast<Eigen::Index>(layer.in_channels) * kTaps;
    MapR dk(grads.conv_layers[li].kernels.data(), layer.out_channels, kcols);
    dk.noalias() = dact * col.transpose();
    Eigen::Map<Eigen::VectorXf>(grads.conv_layers[li].bias.data(), layer.out_channels) = dact.rowwise().sum();
    if (li == 0) break;
    CMapR kernels(layer.kernels.data(), layer.out_channels, kcols);
    dcol.noalias() = kernels.transpose() * dact;
    col2im(dcol, batch, lc.in_h, lc.in_w, layer.stride, lc.out_h, lc.out_w, dprev);
    dact.swap(dprev);
  }
  return grads;
}

std::vector<float> softmax_ce_rows(std::span<const float> logits, int num_classes, std::span<const int> targets) {
  const std::size_t rows = targets.size();
  require(logits.size() == rows * num_classes, "softmax_ce_rows: logits/targets size mismatch");
  std::vector<float> ce(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    require(targets[r] >= 0 && targets[r] < num_classes, "softmax_ce_rows: target out of range");
    const float* z = logits.data() + r * num_classes;
    const float m = *std::max_element(z, z + num_classes);
    float sum = 0.0f;
    for (int c = 0; c < num_classes; ++c) sum += std::exp(z[c] - m);
    ce[r] = std::log(sum) + m - z[targets[r]];
  }
  return ce;
}

WeightedCe weighted_softmax_ce(std::span<const float> logits, int num_classes, std::span<const int> targets,
                               std::span<const float> weights) {
  require(weights.size() == targets.size(), "weighted_softmax_ce: weights/targets size mismatch");
  for (float wgt : weights) require(wgt >= 0.0f, "weighted_softmax_ce: negative sample weight");
  const std::vector<float> ce = softmax_ce_rows(logits, num_classes, targets);
  WeightedCe out;
  out.logit_grads.resize(logits.size());
  softmax_rows(logits, num_classes, out.logit_grads);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    float* g = out.logit_grads.data() + r * num_classes;
    if (weights[r] == 0.0f) {
      std::fill_n(g, num_classes, 0.0f);
      continue;
    }
    g[targets[r]] -= 1.0f;
    for (int c = 0; c < num_classes; ++c) g[c] *= weights[r];
    out.loss += weights[r] * ce[r];
  }
  return out;
}

double cosine_lr(long t, long total, double base_lr) {
  require(total > 0, "cosine_lr: total iterations must be positive");
  require(t >= 0 && t <= total, "cosine_lr: iteration outside [0, T]");
  require(base_lr > 0.0, "cosine_lr: base learning rate must be positive");
  return base_lr * std::cos(7.0 * std::numbers::pi * static_cast<double>(t) / (16.0 * static_cast<double>(total)));
}

double OptimizerState::current_lr() const { return cosine_lr(iteration, total_iterations, base_lr); }

OptimizerState make_optimizer(const BackboneParams& params, double base_lr, double momentum, long total_iterations) {
  require(base_lr > 0.0, "optimizer: learning rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "optimizer: momentum must be in [0, 1)");
  require(total_iterations > 0, "optimizer: total iterations must be positive");
  OptimizerState opt;
  opt.velocity = zeros_like(params);
  opt.base_lr = base_lr;
  opt.momentum = momentum;
  opt.total_iterations = total_iterations;
  return opt;
}

void sgd_step(BackboneParams& params, const BackboneParams& grads, OptimizerState& opt) {
  for_each_tensor(grads, [](const std::string& name, std::span<const float> g) {
    for (float v : g)
      if (!std::isfinite(v)) throw NumericError("sgd_step: non-finite gradient in " + name);
  });
  const float lr = static_cast<float>(opt.current_lr());
  const float mu = static_cast<float>(opt.momentum);

  std::vector<std::span<float>> p_tensors, v_tensors;
  std::vector<std::span<const float>> g_tensors;
  for_each_tensor(params, [&](const std::string&, std::span<float> t) { p_tensors.push_back(t); });
  for_each_tensor(opt.velocity, [&](const std::string&, std::span<float> t) { v_tensors.push_back(t); });
  for_each_tensor(grads, [&](const std::string&, std::span<const float> t) { g_tensors.push_back(t); });
  require(p_tensors.size() == g_tensors.size() && p_tensors.size() == v_tensors.size(),
          "sgd_step: parameter structure mismatch");
  for (std::size_t i = 0; i < p_tensors.size(); ++i) {
    require(p_tensors[i].size() == g_tensors[i].size() && p_tensors[i].size() == v_tensors[i].size(),
            "sgd_step: tensor shape mismatch");
    for (std::size_t j = 0; j < p_tensors[i].size(); ++j) {
      v_tensors[i][j] = mu * v_tensors[i][j] + g_tensors[i][j];
      p_tensors[i][j] -= lr * v_tensors[i][j];
    }
  }
  ++opt.iteration;
}

std::vector<float> cam(const BackboneOutput& output, const BackboneParams& params, int sample, int class_idx) {
  require(class_idx >= 0 && class_idx < params.classifier.num_classes, "cam: class index out of range");
  require(sample >= 0 && sample < output.batch, "cam: sample index out of range");
  const Tensor4& fm = output.feature_maps;
  const int features = fm.channels();
  const std::size_t plane = static_cast<std::size_t>(fm.height()) * fm.width();
  std::vector<float> map(plane, 0.0f);
  const float* w = params.classifier.weights.data() + static_cast<std::size_t>(class_idx) * features;
  for (int k = 0; k < features; ++k) {
    const float* f = fm.data.data() + fm.index(sample, k, 0, 0);
    for (std::size_t i = 0; i < plane; ++i) map[i] += w[k] * f[i];
  }
  return map;
}

}  // namespace bem::nn
