#pragma once

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "bem/balance.hpp"
#include "bem/image.hpp"
#include "bem/rng.hpp"

// Class balanced mix bank: bounded per-class FIFO storage of recent labeled
// and confidently pseudo-labeled samples, drawn from class-balanced.
namespace bem::mixbank {

using balance::Origin;

struct Entry {
  Image image;  // weak-augmented view
  int class_idx = 0;
  float confidence = 1.0f;  // max softmax probability at push time; 1 for labeled entries

  bool operator==(const Entry&) const = default;
};

struct Draw {
  Entry entry;
  int class_idx = 0;
};

enum class DrawMode {
  kBalanced,  // class drawn from the supplied probabilities
  kRandom,    // class drawn in proportion to how many samples of it were pushed (data frequency)
};

class MixBank {
public:
  MixBank(int num_classes, int capacity);

  void push(int class_idx, Image image, Origin origin, float confidence = 1.0f);

  // Class drawn from probs restricted to non-empty buckets, then a uniform element.
  // Returns nullopt when every bucket of the origin is empty.
  std::optional<Draw> draw(std::span<const double> probs, Origin origin, Rng& rng,
                           DrawMode mode = DrawMode::kBalanced) const;

  int num_classes() const { return static_cast<int>(labeled_.size()); }
  int capacity() const { return capacity_; }
  const std::deque<Entry>& bucket(Origin origin, int class_idx) const;
  std::size_t size(Origin origin) const;
  long pushes(Origin origin, int class_idx) const;

  bool operator==(const MixBank&) const = default;

  // Raw state access for checkpointing.
  std::vector<std::deque<Entry>>& buckets(Origin origin) { return origin == Origin::kLabeled ? labeled_ : unlabeled_; }
  std::vector<long>& push_counts(Origin origin) {
    return origin == Origin::kLabeled ? labeled_pushes_ : unlabeled_pushes_;
  }

private:
  int capacity_;
  std::vector<std::deque<Entry>> labeled_;
  std::vector<std::deque<Entry>> unlabeled_;
  std::vector<long> labeled_pushes_;
  std::vector<long> unlabeled_pushes_;
};

// Index drawn from unnormalized non-negative weights by inverse CDF; -1 if all weights are zero.
int categorical(std::span<const double> weights, Rng& rng);

}  // namespace bem::mixbank
