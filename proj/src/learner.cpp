#include "bem/learner.hpp"

#include <algorithm>
#include <cmath>

#include "bem/errors.hpp"

namespace bem::learner {

using balance::EntropyMask;
using balance::Origin;

const char* to_string(Mixer mixer) {
  switch (mixer) {
    case Mixer::kNone:
      return "none";
    case Mixer::kMixUp:
      return "mixup";
    case Mixer::kCutMix:
      return "cutmix";
    case Mixer::kCamMix:
      return "cammix";
  }
  return "?";
}

std::optional<Mixer> parse_mixer(std::string_view text) {
  if (text == "none") return Mixer::kNone;
  if (text == "mixup") return Mixer::kMixUp;
  if (text == "cutmix") return Mixer::kCutMix;
  if (text == "cammix") return Mixer::kCamMix;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2", "batch_size");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must be in (0, 1)", "tau");
  if (total_iterations < 1) throw ConfigError("iterations must be > 0", "iterations");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0", "lr");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)", "momentum");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1", "eval_every");
  if (!(la_tau >= 0.0)) throw ConfigError("la_tau must be >= 0", "la_tau");
  if (bank_capacity < 1) throw ConfigError("bank_capacity must be >= 1", "bank_capacity");
  if (!(tau_c >= 0.0 && tau_c < 1.0)) throw ConfigError("tau_c must be in [0, 1)", "tau_c");
  if (!(tau_a >= 0.0 && tau_a <= 0.5)) throw ConfigError("tau_a must be in [0, 0.5]", "tau_a");
  if (bem_enabled && mixer == Mixer::kMixUp) throw ConfigError("mixer=mixup is an in-batch baseline; use bem=off", "mixer");
  balance.validate();
}

float LossBreakdown::compose(float l_s, float l_u_h, float l_u_l, float l_us_h, float l_us_l, float lambda,
                             float divisor) {
  return (l_s + lambda * (l_u_h + l_u_l) + (1.0f - lambda) * (l_us_h + l_us_l)) / divisor;
}

PseudoLabels pseudo_label(std::span<const float> probs, int num_classes, double tau) {
  const std::size_t rows = probs.size() / num_classes;
  PseudoLabels out;
  out.classes.resize(rows);
  out.confidence.resize(rows);
  out.mask.resize(rows);
  for (std::size_t m = 0; m < rows; ++m) {
    const float* p = probs.data() + m * num_classes;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (p[c] > p[best]) best = c;
    out.classes[m] = best;
    out.confidence[m] = p[best];
    out.mask[m] = static_cast<double>(p[best]) > tau ? 1 : 0;
  }
  return out;
}

std::vector<float> logit_adjust(std::span<const float> logits, std::span<const double> prior, double tau_la) {
  const std::size_t C = prior.size();
  require(C > 0 && logits.size() % C == 0, "logit_adjust: logits/prior size mismatch");
  for (double p : prior) require(p > 0.0, "logit_adjust: prior must be strictly positive");
  std::vector<float> out(logits.begin(), logits.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += static_cast<float>(tau_la * std::log(prior[i % C]));
  return out;
}

LossResult bem_losses(const LossInputs& in) {
  const int C = in.num_classes;
  const std::size_t nl = in.labels.size();
  const std::size_t nu = in.pseudo.size();
  require(in.labeled_logits.size() == nl * C && in.mixed_logits.size() == nu * C, "bem_losses: logit shapes");
  require(in.confident.size() == nu && in.masks.size() == nu && in.sources.size() == nu, "bem_losses: batch shapes");
  require(static_cast<int>(in.class_weights.size()) == C, "bem_losses: class weight length");

  std::vector<float> ones(nl, 1.0f);
  std::vector<float> w_uh(nu, 0.0f), w_ul(nu, 0.0f), w_sh(nu, 0.0f), w_sl(nu, 0.0f);
  std::vector<int> src_targets(nu, 0);
  for (std::size_t m = 0; m < nu; ++m) {
    const EntropyMask& mk = in.masks[m];
    require(!(mk.high && mk.low), "bem_losses: sample in both entropy masks");
    const float wq = static_cast<float>(in.class_weights[in.pseudo[m]]) * static_cast<float>(in.confident[m]);
    if (mk.high) w_uh[m] = wq;
    if (mk.low) w_ul[m] = wq;
    const SourceTarget& src = in.sources[m];
    if (!src.present) continue;
    src_targets[m] = src.class_idx;
    if (mk.high && src.origin == Origin::kLabeled) w_sh[m] = 1.0f;
    if (mk.low && src.origin == Origin::kUnlabeled)
      w_sl[m] = static_cast<float>(in.class_weights[src.class_idx]) * (src.confident ? 1.0f : 0.0f);
  }

  const nn::WeightedCe sup = nn::weighted_softmax_ce(in.labeled_logits, C, in.labels, ones);
  const nn::WeightedCe uh = nn::weighted_softmax_ce(in.mixed_logits, C, in.pseudo, w_uh);
  const nn::WeightedCe ul = nn::weighted_softmax_ce(in.mixed_logits, C, in.pseudo, w_ul);
  const nn::WeightedCe sh = nn::weighted_softmax_ce(in.mixed_logits, C, src_targets, w_sh);
  const nn::WeightedCe sl = nn::weighted_softmax_ce(in.mixed_logits, C, src_targets, w_sl);

  LossResult out;
  LossBreakdown& b = out.breakdown;
  b.l_s = sup.loss;
  b.l_u_h = uh.loss;
  b.l_u_l = ul.loss;
  b.l_us_h = sh.loss;
  b.l_us_l = sl.loss;
  b.lambda = static_cast<float>(in.lambda);
  b.divisor = in.divisor;
  b.total = b.recomposed();

  out.labeled_grads.resize(sup.logit_grads.size());
  for (std::size_t i = 0; i < out.labeled_grads.size(); ++i) out.labeled_grads[i] = sup.logit_grads[i] / in.divisor;
  out.mixed_grads.resize(in.mixed_logits.size());
  const float lam = b.lambda;
  for (std::size_t i = 0; i < out.mixed_grads.size(); ++i)
    out.mixed_grads[i] =
        (lam * (uh.logit_grads[i] + ul.logit_grads[i]) + (1.0f - lam) * (sh.logit_grads[i] + sl.logit_grads[i])) /
        in.divisor;
  return out;
}

FixMatchLoss fixmatch_loss(int num_classes, std::span<const float> labeled_logits, std::span<const int> labels,
                           std::span<const float> strong_logits, std::span<const int> pseudo,
                           std::span<const std::uint8_t> confident, float divisor) {
  const std::vector<float> ones(labels.size(), 1.0f);
  std::vector<float> mask(confident.begin(), confident.end());
  const nn::WeightedCe sup = nn::weighted_softmax_ce(labeled_logits, num_classes, labels, ones);
  const nn::WeightedCe uns = nn::weighted_softmax_ce(strong_logits, num_classes, pseudo, mask);
  FixMatchLoss out;
  out.total = (sup.loss + uns.loss) / divisor;
  out.labeled_grads.resize(sup.logit_grads.size());
  for (std::size_t i = 0; i < sup.logit_grads.size(); ++i) out.labeled_grads[i] = sup.logit_grads[i] / divisor;
  out.strong_grads.resize(uns.logit_grads.size());
  for (std::size_t i = 0; i < uns.logit_grads.size(); ++i) out.strong_grads[i] = uns.logit_grads[i] / divisor;
  return out;
}

namespace {

std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_int(rng, 0, i)]);
  return perm;
}

}  // namespace

InBatchMix mixup_batch(std::span<const Image> batch, Rng& rng, std::optional<double> forced_lambda) {
  require(batch.size() >= 2, "mixup_batch: need at least two samples");
  InBatchMix out;
  out.partner = random_permutation(static_cast<int>(batch.size()), rng);
  out.lambda = forced_lambda ? *forced_lambda : uniform01(rng);
  const float lam = static_cast<float>(out.lambda);
  out.mixed.reserve(batch.size());
  for (std::size_t m = 0; m < batch.size(); ++m) {
    const Image& a = batch[m];
    const Image& b = batch[out.partner[m]];
    Image mixed = a;
    if (lam != 1.0f)
      for (std::size_t i = 0; i < mixed.pixels.size(); ++i) mixed.pixels[i] = lam * a.pixels[i] + (1.0f - lam) * b.pixels[i];
    out.mixed.push_back(std::move(mixed));
  }
  return out;
}

InBatchMix cutmix_batch(std::span<const Image> batch, Rng& rng) {
  require(batch.size() >= 2, "cutmix_batch: need at least two samples");
  InBatchMix out;
  out.partner = random_permutation(static_cast<int>(batch.size()), rng);
  const Image& first = batch.front();
  out.box = cammix::cutmix_box(first.height, first.width, rng);
  out.lambda = 1.0;
  out.mixed.assign(batch.begin(), batch.end());
  if (!out.box) return out;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    cammix::PasteResult r = cammix::paste(batch[m], batch[out.partner[m]], *out.box);
    out.mixed[m] = std::move(r.mixed);
    out.lambda = 1.0 - r.area_ratio;
  }
  return out;
}

BatchSampler::BatchSampler(int pool_size, std::uint64_t seed) : rng_(seed), order_(pool_size) {
  require(pool_size >= 1, "BatchSampler: empty pool");
  for (int i = 0; i < pool_size; ++i) order_[i] = i;
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[uniform_int(rng_, 0, static_cast<int>(i) - 1)]);
  cursor_ = 0;
}

std::vector<int> BatchSampler::next(int batch_size) {
  std::vector<int> out;
  out.reserve(batch_size);
  while (static_cast<int>(out.size()) < batch_size) {
    if (cursor_ == order_.size()) reshuffle();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

Rng augment_rng(std::uint64_t augment_seed, long iteration, int slot, View view) {
  return Rng(derive_seed(augment_seed, {static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(slot),
                                        static_cast<std::uint64_t>(view)}));
}

Seeds Seeds::from_master(std::uint64_t master) {
  return Seeds{derive_seed(master, "init"),    derive_seed(master, "sampler-labeled"),
               derive_seed(master, "sampler-unlabeled"), derive_seed(master, "augment"),
               derive_seed(master, "bank"),    derive_seed(master, "mixer")};
}

namespace {

std::vector<int> labeled_class_counts(const data::Dataset& d, int C) {
  std::vector<int> counts(C, 0);
  for (const auto& s : d.labeled) {
    require(s.label >= 0 && s.label < C, "Trainer: label out of range");
    ++counts[s.label];
  }
  return counts;
}

nn::BackboneConfig backbone_config(const TrainConfig& cfg, const data::Dataset& d) {
  nn::BackboneConfig bc;
  bc.num_classes = cfg.balance.num_classes;
  bc.image_size = d.labeled.front().image.height;
  bc.in_channels = d.labeled.front().image.channels;
  return bc;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, const data::Dataset& dataset, std::uint64_t master_seed)
    : cfg_(std::move(cfg)),
      data_(dataset),
      seeds_(Seeds::from_master(master_seed)),
      bank_(cfg_.balance.num_classes, cfg_.bank_capacity),
      labeled_sampler_(std::max<int>(1, static_cast<int>(dataset.labeled.size())), seeds_.sampler_labeled),
      unlabeled_sampler_(std::max<int>(1, static_cast<int>(dataset.unlabeled.size())), seeds_.sampler_unlabeled),
      bank_rng_(seeds_.bank),
      mixer_rng_(seeds_.mixer) {
  cfg_.validate();
  require(!dataset.labeled.empty() && !dataset.unlabeled.empty(), "Trainer: labeled and unlabeled splits must be non-empty");
  Rng init_rng(seeds_.init);
  params_ = nn::init_backbone(backbone_config(cfg_, dataset), init_rng);
  opt_ = nn::make_optimizer(params_, cfg_.lr, cfg_.momentum, cfg_.total_iterations);
  const int C = cfg_.balance.num_classes;
  std::vector<int> counts = labeled_class_counts(dataset, C);
  labeled_prior_.resize(C);
  for (int c = 0; c < C; ++c) labeled_prior_[c] = std::max(1, counts[c]) / static_cast<double>(dataset.labeled.size());
  balance_ = balance::make_state(std::move(counts), static_cast<long>(dataset.unlabeled.size()));
  const long per_epoch = (static_cast<long>(dataset.unlabeled.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  warmup_iterations_ = cfg_.balance.warmup_epochs * per_epoch;
}

Trainer::MutableState Trainer::mutable_state() {
  return {&params_, &opt_, &balance_, &bank_, &labeled_sampler_, &unlabeled_sampler_, &bank_rng_, &mixer_rng_,
          &iteration_};
}

StepReport Trainer::step() {
  const std::vector<int> li = labeled_sampler_.next(cfg_.batch_size);
  const std::vector<int> ui = unlabeled_sampler_.next(cfg_.batch_size);
  return train_step(li, ui);
}

StepReport Trainer::train_step(std::span<const int> labeled_idx, std::span<const int> unlabeled_idx) {
  require(!labeled_idx.empty() && unlabeled_idx.size() == labeled_idx.size(),
          "train_step: labeled and unlabeled batches must have the same non-zero size");
  const int C = cfg_.balance.num_classes;
  const int nb = static_cast<int>(unlabeled_idx.size());
  const long it = iteration_;

  // Views.
  std::vector<Image> xw, uw, us;
  std::vector<int> labels;
  for (int n = 0; n < static_cast<int>(labeled_idx.size()); ++n) {
    const auto& s = data_.labeled.at(labeled_idx[n]);
    Rng r = augment_rng(seeds_.augment, it, n, View::kLabeledWeak);
    xw.push_back(data::weak_aug(s.image, r));
    labels.push_back(s.label);
  }
  for (int m = 0; m < nb; ++m) {
    const auto& s = data_.unlabeled.at(unlabeled_idx[m]);
    Rng rw = augment_rng(seeds_.augment, it, m, View::kUnlabeledWeak);
    uw.push_back(data::weak_aug(s.image, rw));
    Rng rs = augment_rng(seeds_.augment, it, m, View::kUnlabeledStrong);
    us.push_back(data::strong_aug(s.image, rs));
  }

  // Pseudo labels and sample entropies from the weak views.
  const nn::BackboneOutput weak_out = nn::forward(params_, stack_images(uw), nn::Retain::kNone);
  const PseudoLabels pl = pseudo_label(weak_out.probs, C, cfg_.tau);
  std::vector<double> entropy(nb);
  for (int m = 0; m < nb; ++m) entropy[m] = balance::sample_entropy(weak_out.probs_row(m));
  const nn::BackboneOutput lab_out = nn::forward(params_, stack_images(xw), nn::Retain::kActivations);

  StepReport rep;
  rep.iteration = it;
  rep.warmed_up = it >= warmup_iterations_;
  rep.pseudo_counts.assign(C, 0);
  for (int m = 0; m < nb; ++m) {
    ++rep.pseudo_counts[pl.classes[m]];
    rep.confident += pl.mask[m];
    rep.mean_entropy += entropy[m] / nb;
  }

  // Bank maintenance.
  if (cfg_.bem_enabled) {
    for (std::size_t n = 0; n < xw.size(); ++n) bank_.push(labels[n], xw[n], Origin::kLabeled, 1.0f);
    for (int m = 0; m < nb; ++m)
      if (!cfg_.bank_requires_confidence || pl.mask[m])
        bank_.push(pl.classes[m], uw[m], Origin::kUnlabeled, pl.confidence[m]);
  }

  // Distribution and entropy estimators start after warm-up.
  if (rep.warmed_up) {
    balance::update_unlabeled_dist(balance_, pl.classes, cfg_.balance.lambda_d);
    balance::update_entropy_ema(balance_, balance::batch_class_entropy(lab_out.probs, C, labels), Origin::kLabeled,
                                cfg_.balance.lambda_e);
    balance::update_entropy_ema(balance_, balance::batch_class_entropy(weak_out.probs, C, pl.classes),
                                Origin::kUnlabeled, cfg_.balance.lambda_e);
    balance::update_tau_e(balance_, entropy, cfg_.balance.lambda_tau);
  }
  rep.tau_e = balance_.tau_e;

  // Selection masks.
  std::vector<EntropyMask> masks(nb);
  for (int m = 0; m < nb; ++m) {
    if (!cfg_.bem_enabled || !cfg_.esm_enabled)
      masks[m] = {false, true};
    else if (balance_.tau_e_initialized)
      masks[m] = balance::entropy_masks(entropy[m], balance_.tau_e);
    else
      masks[m] = {true, false};
    rep.high_entropy += masks[m].high;
    rep.low_entropy += masks[m].low;
  }

  // Mixing.
  std::vector<Image> mixed;
  std::vector<SourceTarget> sources(nb);
  double lambda = 1.0;
  std::vector<double> class_weights(C, 1.0);
  if (cfg_.bem_enabled) {
    const balance::SamplingProbs sp = balance::sampling_probs(balance_, cfg_.balance);
    if (cfg_.ecb_enabled) class_weights = balance::ecb_weights(sp.s_hat_u, cfg_.balance.ecb_scale);
    std::vector<std::optional<mixbank::Draw>> lab_draws(nb), unl_draws(nb);
    for (int m = 0; m < nb; ++m) {
      if (masks[m].high)
        lab_draws[m] = bank_.draw(sp.s_hat, Origin::kLabeled, bank_rng_, cfg_.bank_sampling);
      else
        unl_draws[m] = bank_.draw(sp.s_hat, Origin::kUnlabeled, bank_rng_, cfg_.bank_sampling);
    }
    if (cfg_.mixer == Mixer::kCamMix || cfg_.mixer == Mixer::kCutMix) {
      cammix::MixConfig mc{cfg_.tau_c, cfg_.tau_a,
                           cfg_.mixer == Mixer::kCamMix ? cammix::BoxMode::kCam : cammix::BoxMode::kCutMix};
      cammix::MixBatch mb = cammix::cammix_batch(us, masks, lab_draws, unl_draws, params_, mc, mixer_rng_);
      for (int m = 0; m < nb; ++m) {
        const cammix::MixOutcome& oc = mb.outcomes[m];
        if (!oc.mixed) continue;
        ++rep.mixed;
        rep.fallback_boxes += oc.used_fallback;
        sources[m] = {true, oc.source_class, oc.source_origin,
                      static_cast<double>(oc.source_confidence) > cfg_.tau};
        if (dump_) {
          const auto& d = masks[m].high ? lab_draws[m] : unl_draws[m];
          dump_->on_mix(it, m, us[m], d->entry.image, mb.mixed[m], oc);
        }
      }
      mixed = std::move(mb.mixed);
      lambda = mb.lambda;
    } else {
      mixed = us;
    }
  } else if (cfg_.mixer == Mixer::kMixUp || cfg_.mixer == Mixer::kCutMix) {
    InBatchMix ib = cfg_.mixer == Mixer::kMixUp ? mixup_batch(us, mixer_rng_) : cutmix_batch(us, mixer_rng_);
    for (int m = 0; m < nb; ++m) {
      const int p = ib.partner[m];
      sources[m] = {true, pl.classes[p], Origin::kUnlabeled, pl.mask[p] != 0};
    }
    rep.mixed = nb;
    mixed = std::move(ib.mixed);
    lambda = ib.lambda;
  } else {
    mixed = us;
  }

  // Losses and update.
  const nn::BackboneOutput mix_out = nn::forward(params_, stack_images(mixed), nn::Retain::kActivations);
  std::vector<float> lab_logits = cfg_.la_enabled ? logit_adjust(lab_out.logits, labeled_prior_, cfg_.la_tau)
                                                  : lab_out.logits;
  LossInputs li;
  li.num_classes = C;
  li.labeled_logits = lab_logits;
  li.labels = labels;
  li.mixed_logits = mix_out.logits;
  li.pseudo = pl.classes;
  li.confident = pl.mask;
  li.masks = masks;
  li.sources = sources;
  li.class_weights = class_weights;
  li.lambda = lambda;
  li.divisor = static_cast<float>(nb);
  const LossResult lr = bem_losses(li);
  rep.loss = lr.breakdown;

  nn::BackboneParams grads = nn::backward(params_, lab_out, lr.labeled_grads);
  const nn::BackboneParams mix_grads = nn::backward(params_, mix_out, lr.mixed_grads);
  std::vector<std::span<float>> g;
  std::vector<std::span<const float>> h;
  nn::for_each_tensor(grads, [&](const std::string&, std::span<float> t) { g.push_back(t); });
  nn::for_each_tensor(mix_grads, [&](const std::string&, std::span<const float> t) { h.push_back(t); });
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] += h[i][j];
  nn::sgd_step(params_, grads, opt_);
  ++iteration_;
  return rep;
}

}  // namespace bem::learner
