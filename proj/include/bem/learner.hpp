#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bem/balance.hpp"
#include "bem/cammix.hpp"
#include "bem/mixbank.hpp"
#include "bem/rng.hpp"
#include "bem/synthdata.hpp"
#include "bem/tinynn.hpp"

// FixMatch training loop with the balanced entropy-based mixing stack, plus the
// plain FixMatch baseline, in-batch MixUp/CutMix and logit adjustment.
namespace bem::learner {

enum class Mixer { kNone, kMixUp, kCutMix, kCamMix };

const char* to_string(Mixer mixer);
std::optional<Mixer> parse_mixer(std::string_view text);

struct TrainConfig {
  int batch_size = 64;
  double tau = 0.95;
  long total_iterations = 5000;
  double lr = 0.03;
  double momentum = 0.9;
  int eval_every = 250;
  Mixer mixer = Mixer::kCamMix;
  bool bem_enabled = true;
  bool la_enabled = false;
  double la_tau = 1.0;
  balance::BalanceConfig balance;
  int bank_capacity = 128;
  bool bank_requires_confidence = true;
  mixbank::DrawMode bank_sampling = mixbank::DrawMode::kBalanced;
  bool esm_enabled = true;  // off: every sample mixes with an unlabeled source
  bool ecb_enabled = true;  // off: unit class weights on the unsupervised terms
  double tau_c = 0.8;
  double tau_a = 0.1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Unnormalized sums of the five loss terms, the area weight and the normalized total.
struct LossBreakdown {
  float l_s = 0.0f;
  float l_u_h = 0.0f;
  float l_u_l = 0.0f;
  float l_us_h = 0.0f;
  float l_us_l = 0.0f;
  float lambda = 1.0f;
  float divisor = 1.0f;  // batch size
  float total = 0.0f;

  // (l_s + lambda (l_u_h + l_u_l) + (1 - lambda)(l_us_h + l_us_l)) / divisor
  static float compose(float l_s, float l_u_h, float l_u_l, float l_us_h, float l_us_l, float lambda, float divisor);
  float recomposed() const { return compose(l_s, l_u_h, l_u_l, l_us_h, l_us_l, lambda, divisor); }
};

struct PseudoLabels {
  std::vector<int> classes;        // argmax, lowest index on ties
  std::vector<float> confidence;   // max probability
  std::vector<std::uint8_t> mask;  // confidence > tau
};

PseudoLabels pseudo_label(std::span<const float> probs, int num_classes, double tau);

// logits[m][c] + tau_la * ln(prior[c]).
std::vector<float> logit_adjust(std::span<const float> logits, std::span<const double> prior, double tau_la);

// Target pasted into a mixed sample.
struct SourceTarget {
  bool present = false;
  int class_idx = 0;
  balance::Origin origin = balance::Origin::kLabeled;
  bool confident = false;  // M_u of the source, for unlabeled sources
};

struct LossInputs {
  int num_classes = 0;
  std::span<const float> labeled_logits;
  std::span<const int> labels;
  std::span<const float> mixed_logits;
  std::span<const int> pseudo;
  std::span<const std::uint8_t> confident;
  std::span<const balance::EntropyMask> masks;
  std::span<const SourceTarget> sources;
  std::span<const double> class_weights;  // per-class ECB weight
  double lambda = 1.0;
  float divisor = 1.0f;
};

struct LossResult {
  LossBreakdown breakdown;
  std::vector<float> labeled_grads;  // d total / d labeled logits
  std::vector<float> mixed_grads;    // d total / d mixed logits
};

LossResult bem_losses(const LossInputs& in);

// FixMatch objective (sum_n H(x_n, y_n) + sum_m M_u H(A_s(u_m), q_m)) / B, computed directly.
struct FixMatchLoss {
  float total = 0.0f;
  std::vector<float> labeled_grads;
  std::vector<float> strong_grads;
};
FixMatchLoss fixmatch_loss(int num_classes, std::span<const float> labeled_logits, std::span<const int> labels,
                           std::span<const float> strong_logits, std::span<const int> pseudo,
                           std::span<const std::uint8_t> confident, float divisor);

struct InBatchMix {
  std::vector<Image> mixed;
  std::vector<int> partner;  // permutation used for pairing
  double lambda = 1.0;
  std::optional<cammix::BBox> box;  // CutMix only
};

InBatchMix mixup_batch(std::span<const Image> batch, Rng& rng, std::optional<double> forced_lambda = std::nullopt);
InBatchMix cutmix_batch(std::span<const Image> batch, Rng& rng);

// Epoch-wise shuffled index stream.
class BatchSampler {
public:
  BatchSampler(int pool_size, std::uint64_t seed);
  std::vector<int> next(int batch_size);
  Rng& rng() { return rng_; }
  std::vector<int>& order() { return order_; }
  std::size_t& cursor() { return cursor_; }

private:
  void reshuffle();
  Rng rng_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

enum class View : std::uint64_t { kLabeledWeak = 0, kUnlabeledWeak = 1, kUnlabeledStrong = 2 };

// Per-sample augmentation stream: derive_seed(augment_seed, {iteration, slot, view}).
Rng augment_rng(std::uint64_t augment_seed, long iteration, int slot, View view);

struct StepReport {
  long iteration = 0;
  bool warmed_up = false;
  LossBreakdown loss;
  int confident = 0;
  int high_entropy = 0;
  int low_entropy = 0;
  int mixed = 0;
  int fallback_boxes = 0;
  double mean_entropy = 0.0;
  double tau_e = 0.0;
  std::vector<int> pseudo_counts;
};

struct Seeds {
  std::uint64_t init, sampler_labeled, sampler_unlabeled, augment, bank, mixer;
  static Seeds from_master(std::uint64_t master);
};

struct MixDumpSink {
  virtual ~MixDumpSink() = default;
  virtual void on_mix(long iteration, int sample, const Image& destination, const Image& source, const Image& mixed,
                      const cammix::MixOutcome& outcome) = 0;
};

class Trainer {
public:
  Trainer(TrainConfig cfg, const data::Dataset& dataset, std::uint64_t master_seed);

  // Samples the next batches and runs one iteration.
  StepReport step();
  StepReport train_step(std::span<const int> labeled_idx, std::span<const int> unlabeled_idx);

  const TrainConfig& config() const { return cfg_; }
  const nn::BackboneParams& params() const { return params_; }
  nn::BackboneParams& mutable_params() { return params_; }
  const nn::OptimizerState& optimizer() const { return opt_; }
  const balance::ClassBalanceState& balance_state() const { return balance_; }
  const mixbank::MixBank& bank() const { return bank_; }
  long iteration() const { return iteration_; }
  long warmup_iterations() const { return warmup_iterations_; }
  const Seeds& seeds() const { return seeds_; }
  void set_mix_dump(MixDumpSink* sink) { dump_ = sink; }

  // Checkpoint hooks: everything that evolves during training.
  struct MutableState {
    nn::BackboneParams* params;
    nn::OptimizerState* optimizer;
    balance::ClassBalanceState* balance;
    mixbank::MixBank* bank;
    BatchSampler* labeled_sampler;
    BatchSampler* unlabeled_sampler;
    Rng* bank_rng;
    Rng* mixer_rng;
    long* iteration;
  };
  MutableState mutable_state();

private:
  TrainConfig cfg_;
  const data::Dataset& data_;
  Seeds seeds_;
  nn::BackboneParams params_;
  nn::OptimizerState opt_;
  balance::ClassBalanceState balance_;
  mixbank::MixBank bank_;
  BatchSampler labeled_sampler_;
  BatchSampler unlabeled_sampler_;
  Rng bank_rng_;
  Rng mixer_rng_;
  long iteration_ = 0;
  long warmup_iterations_ = 0;
  std::vector<double> labeled_prior_;
  MixDumpSink* dump_ = nullptr;
};

}  // namespace bem::learner
