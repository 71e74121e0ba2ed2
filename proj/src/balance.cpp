#include "bem/balance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bem/errors.hpp"

namespace bem::balance {

void BalanceConfig::validate() const {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must be in [0, 1)", "beta");
  if (!(lambda_d > 0.0 && lambda_d < 1.0)) throw ConfigError("lambda_d must be in (0, 1)", "lambda_d");
  if (!(lambda_e > 0.0 && lambda_e < 1.0)) throw ConfigError("lambda_e must be in (0, 1)", "lambda_e");
  if (!(lambda_tau > 0.0 && lambda_tau < 1.0)) throw ConfigError("lambda_tau must be in (0, 1)", "lambda_tau");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]", "alpha");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0", "warmup_epochs");
  if (num_classes < 2) throw ConfigError("classes must be >= 2", "classes");
}

bool ClassBalanceState::entropy_initialized() const {
  return std::any_of(e_x_initialized.begin(), e_x_initialized.end(), [](bool b) { return b; }) ||
         std::any_of(e_u_initialized.begin(), e_u_initialized.end(), [](bool b) { return b; });
}

ClassBalanceState make_state(std::vector<int> labeled_counts, long unlabeled_total) {
  require(labeled_counts.size() >= 2, "make_state: need at least two classes");
  ClassBalanceState st;
  const std::size_t C = labeled_counts.size();
  st.labeled_counts = std::move(labeled_counts);
  st.unlabeled_total = unlabeled_total;
  st.d_u.assign(C, 1.0 / static_cast<double>(C));
  st.e_x.assign(C, 0.0);
  st.e_u.assign(C, 0.0);
  st.e_x_initialized.assign(C, false);
  st.e_u_initialized.assign(C, false);
  return st;
}

double effective_number(double n, double beta) {
  require(beta >= 0.0 && beta < 1.0, "effective_number: beta must be in [0, 1)");
  require(n >= 0.0, "effective_number: n must be non-negative");
  if (n == 0.0) return 0.0;
  return (1.0 - std::pow(beta, n)) / (1.0 - beta);
}

std::vector<double> batch_class_frequency(std::span<const int> classes, int num_classes) {
  std::vector<double> freq(num_classes, 0.0);
  for (int c : classes) {
    require(c >= 0 && c < num_classes, "batch_class_frequency: class out of range");
    freq[c] += 1.0;
  }
  if (!classes.empty())
    for (double& f : freq) f /= static_cast<double>(classes.size());
  return freq;
}

void update_unlabeled_dist(ClassBalanceState& state, std::span<const int> pseudo_classes, double lambda_d) {
  if (pseudo_classes.empty()) return;
  const std::vector<double> batch = batch_class_frequency(pseudo_classes, state.num_classes());
  if (!state.d_initialized) {
    state.d_u = batch;
    state.d_initialized = true;
    return;
  }
  for (int c = 0; c < state.num_classes(); ++c) state.d_u[c] = lambda_d * state.d_u[c] + (1.0 - lambda_d) * batch[c];
}

std::vector<double> inverse_effective_probs(std::span<const double> effective) {
  std::vector<double> s(effective.size());
  double total = 0.0;
  for (std::size_t c = 0; c < effective.size(); ++c) {
    require(effective[c] > 0.0, "inverse_effective_probs: effective number must be positive");
    s[c] = 1.0 / effective[c];
    total += s[c];
  }
  for (double& v : s) v /= total;
  return s;
}

std::vector<double> quantity_sampling(const ClassBalanceState& state, const BalanceConfig& cfg) {
  std::vector<double> effective(state.num_classes());
  for (int c = 0; c < state.num_classes(); ++c) {
    effective[c] = effective_number(state.labeled_counts[c], cfg.beta);
    if (state.d_initialized)
      effective[c] += effective_number(static_cast<double>(state.unlabeled_total) * state.d_u[c], cfg.beta);
  }
  return inverse_effective_probs(effective);
}

double sample_entropy(std::span<const float> probs_row) {
  double h = 0.0;
  for (float p : probs_row)
    if (p > 0.0f) h -= static_cast<double>(p) * std::log(static_cast<double>(p));
  return h;
}

ClassEntropy batch_class_entropy(std::span<const float> probs, int num_classes, std::span<const int> assignments) {
  require(probs.size() == assignments.size() * num_classes, "batch_class_entropy: probs/assignments size mismatch");
  ClassEntropy out{std::vector<double>(num_classes, 0.0), std::vector<int>(num_classes, 0)};
  for (std::size_t m = 0; m < assignments.size(); ++m) {
    const int c = assignments[m];
    require(c >= 0 && c < num_classes, "batch_class_entropy: class out of range");
    out.mean[c] += sample_entropy(probs.subspan(m * num_classes, num_classes));
    ++out.count[c];
  }
  for (int c = 0; c < num_classes; ++c)
    if (out.count[c] > 0) out.mean[c] /= out.count[c];
  return out;
}

void update_entropy_ema(ClassBalanceState& state, const ClassEntropy& batch, Origin origin, double lambda_e) {
  auto& ema = origin == Origin::kLabeled ? state.e_x : state.e_u;
  auto& flags = origin == Origin::kLabeled ? state.e_x_initialized : state.e_u_initialized;
  for (int c = 0; c < state.num_classes(); ++c) {
    if (!batch.present(c)) continue;
    if (!flags[c]) {
      ema[c] = batch.mean[c];
      flags[c] = true;
    } else {
      ema[c] = lambda_e * ema[c] + (1.0 - lambda_e) * batch.mean[c];
    }
  }
}

std::vector<double> softmax(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) total += out[i] = std::exp(v[i] - m);
  for (double& x : out) x /= total;
  return out;
}

std::vector<double> fuse(std::span<const double> s, std::span<const double> entropy, double alpha,
                         std::vector<double>* s_prime) {
  require(s.size() == entropy.size(), "fuse: size mismatch");
  const double total = std::accumulate(entropy.begin(), entropy.end(), 0.0);
  std::vector<double> sp(entropy.size(), 1.0 / static_cast<double>(entropy.size()));
  if (total > 0.0)
    for (std::size_t c = 0; c < sp.size(); ++c) sp[c] = entropy[c] / total;
  std::vector<double> blend(s.size());
  for (std::size_t c = 0; c < s.size(); ++c) blend[c] = alpha * s[c] + (1.0 - alpha) * sp[c];
  if (s_prime) *s_prime = sp;
  return softmax(blend);
}

std::vector<double> fused_sampling(const ClassBalanceState& state, const BalanceConfig& cfg, Scope scope,
                                   std::vector<double>* s_out, std::vector<double>* s_prime_out) {
  const std::vector<double> s = quantity_sampling(state, cfg);
  if (s_out) *s_out = s;
  const bool have_entropy =
      scope == Scope::kAll
          ? state.entropy_initialized()
          : std::any_of(state.e_u_initialized.begin(), state.e_u_initialized.end(), [](bool b) { return b; });
  if (!have_entropy) {
    if (s_prime_out) s_prime_out->assign(s.size(), 1.0 / static_cast<double>(s.size()));
    return s;
  }
  std::vector<double> e(state.num_classes());
  for (int c = 0; c < state.num_classes(); ++c) e[c] = scope == Scope::kAll ? state.e_x[c] + state.e_u[c] : state.e_u[c];
  return fuse(s, e, cfg.alpha, s_prime_out);
}

SamplingProbs sampling_probs(const ClassBalanceState& state, const BalanceConfig& cfg) {
  SamplingProbs out;
  out.s_hat = fused_sampling(state, cfg, Scope::kAll, &out.s, &out.s_prime);
  out.s_hat_u = fused_sampling(state, cfg, Scope::kUnlabeledOnly);
  return out;
}

EntropyMask entropy_masks(double entropy, double tau_e) {
  require(entropy >= 0.0 && tau_e >= 0.0, "entropy_masks: negative entropy or threshold");
  EntropyMask m{entropy > tau_e, entropy < tau_e};
  if (!m.high && !m.low) m.low = true;
  return m;
}

void update_tau_e(ClassBalanceState& state, std::span<const double> batch_entropies, double lambda_tau) {
  require(!batch_entropies.empty(), "update_tau_e: empty batch");
  double mean = 0.0;
  for (double e : batch_entropies) mean += e;
  mean /= static_cast<double>(batch_entropies.size());
  if (!state.tau_e_initialized) {
    state.tau_e = mean;
    state.tau_e_initialized = true;
    return;
  }
  state.tau_e = lambda_tau * state.tau_e + (1.0 - lambda_tau) * mean;
}

std::vector<double> ecb_weights(std::span<const double> s_hat_u, EcbScale scale) {
  std::vector<double> w(s_hat_u.begin(), s_hat_u.end());
  if (scale == EcbScale::kTimesC)
    for (double& v : w) v *= static_cast<double>(w.size());
  return w;
}

}  // namespace bem::balance
