#include "bem/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace bem::oracles {

long double effective_number_series(long n, long double beta) {
  long double sum = 0.0L, term = 1.0L;
  for (long k = 0; k < n; ++k) {
    sum += term;
    term *= beta;
  }
  return sum;
}

namespace {

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a != b) parent[std::max(a, b)] = std::min(a, b);
}

}  // namespace

std::vector<OracleComponent> label_components(const cammix::BinaryMap& map) {
  const int h = map.height, w = map.width;
  std::vector<int> parent(static_cast<std::size_t>(h) * w);
  std::iota(parent.begin(), parent.end(), 0);
  // First pass: link each foreground cell to its already-visited neighbours.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!map.at(y, x)) continue;
      const int i = y * w + x;
      const int prev[4][2] = {{y, x - 1}, {y - 1, x - 1}, {y - 1, x}, {y - 1, x + 1}};
      for (const auto& p : prev) {
        if (p[0] < 0 || p[1] < 0 || p[1] >= w) continue;
        if (map.at(p[0], p[1])) unite(parent, i, p[0] * w + p[1]);
      }
    }
  // Second pass: gather cells by root.
  std::map<int, OracleComponent> by_root;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!map.at(y, x)) continue;
      const int i = y * w + x;
      auto [it, fresh] = by_root.try_emplace(find_root(parent, i));
      OracleComponent& c = it->second;
      if (fresh) {
        c.first = i;
        c.bounds = {x, y, x + 1, y + 1};
      }
      c.pixels.push_back(i);
      ++c.area;
      c.bounds.x0 = std::min(c.bounds.x0, x);
      c.bounds.y0 = std::min(c.bounds.y0, y);
      c.bounds.x1 = std::max(c.bounds.x1, x + 1);
      c.bounds.y1 = std::max(c.bounds.y1, y + 1);
    }
  std::vector<OracleComponent> out;
  for (auto& [root, c] : by_root) out.push_back(std::move(c));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

OracleComponent largest_component(const cammix::BinaryMap& map) {
  OracleComponent best;
  for (auto& c : label_components(map))
    if (c.area > best.area) best = std::move(c);
  return best;
}

DoubleParams to_double(const nn::BackboneParams& params) {
  DoubleParams d;
  d.config = params.config;
  for (const auto& layer : params.conv_layers) {
    d.kernels.emplace_back(layer.kernels.begin(), layer.kernels.end());
    d.biases.emplace_back(layer.bias.begin(), layer.bias.end());
    d.strides.push_back(layer.stride);
  }
  d.fc_weights.assign(params.classifier.weights.begin(), params.classifier.weights.end());
  d.fc_bias.assign(params.classifier.bias.begin(), params.classifier.bias.end());
  return d;
}

DoubleForward reference_forward(const DoubleParams& p, std::span<const Image> images,
                                std::vector<std::uint8_t>* relu_pattern) {
  DoubleForward out;
  if (relu_pattern) relu_pattern->clear();
  const int classes = static_cast<int>(p.fc_bias.size());
  for (const Image& img : images) {
    // [channel][y][x]
    int ch = img.channels, size = img.height;
    std::vector<double> act(static_cast<std::size_t>(ch) * size * size);
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) act[(c * size + y) * size + x] = img.at(y, x, c);

    for (std::size_t l = 0; l < p.kernels.size(); ++l) {
      const int out_ch = static_cast<int>(p.biases[l].size());
      const int stride = p.strides[l];
      const int out_size = (size - 1) / stride + 1;
      std::vector<double> next(static_cast<std::size_t>(out_ch) * out_size * out_size);
      for (int o = 0; o < out_ch; ++o)
        for (int oy = 0; oy < out_size; ++oy)
          for (int ox = 0; ox < out_size; ++ox) {
            double s = p.biases[l][o];
            for (int i = 0; i < ch; ++i)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                  if (iy < 0 || iy >= size || ix < 0 || ix >= size) continue;
                  s += p.kernels[l][((o * ch + i) * 3 + ky) * 3 + kx] * act[(i * size + iy) * size + ix];
                }
            next[(o * out_size + oy) * out_size + ox] = s > 0.0 ? s : 0.0;
            if (relu_pattern) relu_pattern->push_back(s > 0.0);
          }
      act = std::move(next);
      ch = out_ch;
      size = out_size;
    }

    out.feature_channels = ch;
    out.feature_size = size;
    out.feature_maps.insert(out.feature_maps.end(), act.begin(), act.end());
    std::vector<double> pooled(ch, 0.0);
    for (int c = 0; c < ch; ++c) {
      for (int i = 0; i < size * size; ++i) pooled[c] += act[c * size * size + i];
      pooled[c] /= size * size;
    }
    for (int k = 0; k < classes; ++k) {
      double z = p.fc_bias[k];
      for (int c = 0; c < ch; ++c) z += p.fc_weights[k * ch + c] * pooled[c];
      out.logits.push_back(z);
    }
  }
  return out;
}

double reference_weighted_ce(std::span<const double> logits, int num_classes, std::span<const int> targets,
                             std::span<const double> weights) {
  double total = 0.0;
  for (std::size_t m = 0; m < targets.size(); ++m) {
    const double* z = logits.data() + m * num_classes;
    const double mx = *std::max_element(z, z + num_classes);
    double se = 0.0;
    for (int c = 0; c < num_classes; ++c) se += std::exp(z[c] - mx);
    total += weights[m] * (std::log(se) + mx - z[targets[m]]);
  }
  return total;
}

std::vector<double> reference_cam(const DoubleForward& fwd, const DoubleParams& params, int sample, int class_idx) {
  const int ch = fwd.feature_channels, plane = fwd.feature_size * fwd.feature_size;
  std::vector<double> map(plane, 0.0);
  const double* f = fwd.feature_maps.data() + static_cast<std::size_t>(sample) * ch * plane;
  for (int i = 0; i < plane; ++i)
    for (int k = 0; k < ch; ++k) map[i] += params.fc_weights[class_idx * ch + k] * f[k * plane + i];
  return map;
}

}  // namespace bem::oracles
