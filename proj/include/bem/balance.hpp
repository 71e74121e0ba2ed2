#pragma once

#include <optional>
#include <span>
#include <vector>

// Distribution and uncertainty estimation for class re-balancing: effective
// numbers, the EMA class distribution of unlabeled data, class-wise and
// sample-wise entropy, the fused sampling probability, entropy masks and the
// EMA entropy threshold.
namespace bem::balance {

enum class EcbScale { kRaw, kTimesC };

struct BalanceConfig {
  double beta = 0.999;
  double lambda_d = 0.999;
  double lambda_e = 0.999;
  double lambda_tau = 0.999;
  double alpha = 0.5;
  int warmup_epochs = 5;
  EcbScale ecb_scale = EcbScale::kTimesC;
  int num_classes = 10;

  void validate() const;
  bool operator==(const BalanceConfig&) const = default;
};

enum class Origin { kLabeled, kUnlabeled };

struct ClassBalanceState {
  std::vector<int> labeled_counts;  // N_c, fixed by the dataset
  long unlabeled_total = 0;         // M
  std::vector<double> d_u;          // EMA class distribution of unlabeled pseudo labels
  bool d_initialized = false;
  std::vector<double> e_x;  // EMA class-wise entropy, labeled
  std::vector<double> e_u;  // EMA class-wise entropy, unlabeled
  std::vector<bool> e_x_initialized;
  std::vector<bool> e_u_initialized;
  double tau_e = 0.0;
  bool tau_e_initialized = false;

  int num_classes() const { return static_cast<int>(labeled_counts.size()); }
  bool entropy_initialized() const;
  bool operator==(const ClassBalanceState&) const = default;
};

ClassBalanceState make_state(std::vector<int> labeled_counts, long unlabeled_total);

// (1 - beta^n) / (1 - beta); 0 at n = 0.
double effective_number(double n, double beta);

// EMA of the per-class pseudo-label frequency; the first call initializes directly.
void update_unlabeled_dist(ClassBalanceState& state, std::span<const int> pseudo_classes, double lambda_d);

// Pseudo-label frequency over the batch.
std::vector<double> batch_class_frequency(std::span<const int> classes, int num_classes);

// s_c proportional to 1 / E_c with E_c = E_c^x + E_c^u, where E_c^u uses N_c^u = M d_u[c].
// Before d_u is initialized, E_c = E_c^x.
std::vector<double> quantity_sampling(const ClassBalanceState& state, const BalanceConfig& cfg);

// Normalizes 1/E to a distribution.
std::vector<double> inverse_effective_probs(std::span<const double> effective);

struct ClassEntropy {
  std::vector<double> mean;  // valid where count > 0
  std::vector<int> count;
  bool present(int c) const { return count[c] > 0; }
};

ClassEntropy batch_class_entropy(std::span<const float> probs, int num_classes, std::span<const int> assignments);

void update_entropy_ema(ClassBalanceState& state, const ClassEntropy& batch, Origin origin, double lambda_e);

// Which class-wise entropy feeds the fused probability: e_x + e_u, or e_u alone.
enum class Scope { kAll, kUnlabeledOnly };

struct SamplingProbs {
  std::vector<double> s;        // quantity-based
  std::vector<double> s_prime;  // normalized entropy
  std::vector<double> s_hat;    // fused, scope all
  std::vector<double> s_hat_u;  // fused, unlabeled only
};

std::vector<double> softmax(std::span<const double> v);

// softmax(alpha * s + (1 - alpha) * s'), the fused probability for given quantity and entropy vectors.
// A zero entropy total makes s' uniform.
std::vector<double> fuse(std::span<const double> s, std::span<const double> entropy, double alpha,
                         std::vector<double>* s_prime = nullptr);

// Fused probability for one scope; falls back to the quantity vector s until entropy EMAs exist.
std::vector<double> fused_sampling(const ClassBalanceState& state, const BalanceConfig& cfg, Scope scope,
                                   std::vector<double>* s_out = nullptr, std::vector<double>* s_prime_out = nullptr);

SamplingProbs sampling_probs(const ClassBalanceState& state, const BalanceConfig& cfg);

// Shannon entropy with 0 ln 0 = 0.
double sample_entropy(std::span<const float> probs_row);

struct EntropyMask {
  bool high = false;
  bool low = false;
};

// high = e > tau, low = e < tau; the tie e == tau is assigned to low.
EntropyMask entropy_masks(double entropy, double tau_e);

void update_tau_e(ClassBalanceState& state, std::span<const double> batch_entropies, double lambda_tau);

// Per-sample weight for the class-balanced loss from s_hat_u: raw, or multiplied by C.
std::vector<double> ecb_weights(std::span<const double> s_hat_u, EcbScale scale);

}  // namespace bem::balance
