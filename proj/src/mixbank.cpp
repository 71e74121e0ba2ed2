#include "bem/mixbank.hpp"

#include "bem/errors.hpp"

namespace bem::mixbank {

MixBank::MixBank(int num_classes, int capacity)
    : capacity_(capacity),
      labeled_(num_classes),
      unlabeled_(num_classes),
      labeled_pushes_(num_classes, 0),
      unlabeled_pushes_(num_classes, 0) {
  require(num_classes >= 1, "MixBank: need at least one class");
  require(capacity >= 1, "MixBank: capacity must be >= 1");
}

void MixBank::push(int class_idx, Image image, Origin origin, float confidence) {
  require(class_idx >= 0 && class_idx < num_classes(), "MixBank::push: class out of range");
  auto& bucket = buckets(origin)[class_idx];
  if (static_cast<int>(bucket.size()) == capacity_) bucket.pop_front();
  bucket.push_back(Entry{std::move(image), class_idx, confidence});
  ++push_counts(origin)[class_idx];
}

const std::deque<Entry>& MixBank::bucket(Origin origin, int class_idx) const {
  require(class_idx >= 0 && class_idx < num_classes(), "MixBank::bucket: class out of range");
  return origin == Origin::kLabeled ? labeled_[class_idx] : unlabeled_[class_idx];
}

std::size_t MixBank::size(Origin origin) const {
  std::size_t n = 0;
  for (const auto& b : origin == Origin::kLabeled ? labeled_ : unlabeled_) n += b.size();
  return n;
}

long MixBank::pushes(Origin origin, int class_idx) const {
  return origin == Origin::kLabeled ? labeled_pushes_[class_idx] : unlabeled_pushes_[class_idx];
}

int categorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return -1;
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

std::optional<Draw> MixBank::draw(std::span<const double> probs, Origin origin, Rng& rng, DrawMode mode) const {
  require(static_cast<int>(probs.size()) == num_classes(), "MixBank::draw: probability vector has wrong length");
  const auto& all = origin == Origin::kLabeled ? labeled_ : unlabeled_;
  std::vector<double> weights(num_classes(), 0.0);
  for (int c = 0; c < num_classes(); ++c) {
    if (all[c].empty()) continue;
    weights[c] = mode == DrawMode::kBalanced ? probs[c] : static_cast<double>(pushes(origin, c));
  }
  const int c = categorical(weights, rng);
  if (c < 0) return std::nullopt;
  const int k = uniform_int(rng, 0, static_cast<int>(all[c].size()) - 1);
  return Draw{all[c][k], c};
}

}  // namespace bem::mixbank
