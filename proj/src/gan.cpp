#include "diffaug/gan.hpp"

#include <cmath>

#include <fmt/format.h>

#include "diffaug/ops.hpp"

namespace diffaug {

namespace {

// Temporarily stops a module's leaves from collecting gradients.
class FreezeGuard {
 public:
  explicit FreezeGuard(const Module& m) : params_(m.parameters()) {
    for (auto& p : params_) p.set_requires_grad(false);
  }
  ~FreezeGuard() {
    for (auto& p : params_) p.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> params_;
};

std::string diagnostics(const TrainState& s, const StepLosses& l, const std::string& reason) {
  return fmt::format(
      "reason: {}\nstep: {}\nloss_d_adversarial: {}\nloss_r1: {}\nloss_d: {}\nloss_g: {}\nlatent_rng: {}\naugment_rng: {}\n",
      reason, s.step, l.d_adversarial, l.r1, l.d_total, l.g, s.latent_rng.serialize(), s.augment_rng.serialize());
}

void require_finite(float v, const char* what, const TrainState& s, const StepLosses& l) {
  if (!std::isfinite(v)) {
    const auto reason = fmt::format("non-finite {} at step {}", what, s.step);
    throw TrainingHalted(reason, diagnostics(s, l, reason));
  }
}

}  // namespace

LossKind parse_loss_kind(std::string_view text) {
  if (text == "nonsaturating" || text == "non_saturating") return LossKind::NonSaturating;
  if (text == "hinge") return LossKind::Hinge;
  throw std::invalid_argument(fmt::format("unknown loss '{}' (expected nonsaturating or hinge)", text));
}

Strategy parse_strategy(std::string_view text) {
  if (text == "baseline") return Strategy::Baseline;
  if (text == "augment_reals_only") return Strategy::AugmentRealsOnly;
  if (text == "augment_d_only") return Strategy::AugmentDOnly;
  if (text == "diffaugment") return Strategy::DiffAugment;
  throw std::invalid_argument(fmt::format(
      "unknown strategy '{}' (expected baseline, augment_reals_only, augment_d_only or diffaugment)", text));
}

std::string_view to_string(LossKind kind) { return kind == LossKind::Hinge ? "hinge" : "nonsaturating"; }

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Baseline: return "baseline";
    case Strategy::AugmentRealsOnly: return "augment_reals_only";
    case Strategy::AugmentDOnly: return "augment_d_only";
    case Strategy::DiffAugment: return "diffaugment";
  }
  return "unknown";
}

void validate(const TrainConfig& c) {
  validate(c.net);
  if (c.r1_gamma < 0.0f) throw std::invalid_argument("r1_gamma must be >= 0");
  if (c.d_steps_per_g < 1) throw std::invalid_argument("d_steps_per_g must be >= 1");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (c.total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  if (c.eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (!(c.ema_half_life_images > 0.0)) throw std::invalid_argument("ema_half_life_images must be > 0");
}

Tensor f_d(const Tensor& t, LossKind kind) {
  return kind == LossKind::Hinge ? relu(add(t, 1.0f)) : softplus(t);
}

Tensor f_g(const Tensor& t, LossKind kind) { return kind == LossKind::Hinge ? t : softplus(t); }

bool augments_reals(Strategy s) { return s != Strategy::Baseline; }
bool augments_fakes_for_d(Strategy s) { return s == Strategy::AugmentDOnly || s == Strategy::DiffAugment; }
bool augments_fakes_for_g(Strategy s) { return s == Strategy::DiffAugment; }

DLoss d_loss(const Critic& d, const Tensor& reals, const Tensor& fakes, const TrainConfig& config, Rng& augment_rng) {
  if (reals.shape() != fakes.shape()) throw ShapeError("d_loss", reals.shape(), fakes.shape());
  AugmentResult real_aug{reals, {}};
  if (augments_reals(config.strategy)) real_aug = apply_policy(reals, config.policy, augment_rng);
  Tensor fake_in = fakes;
  if (augments_fakes_for_d(config.strategy)) {
    fake_in = config.shared_draw ? replay(fakes, real_aug.samples) : apply_policy(fakes, config.policy, augment_rng).output;
  }
  // Reals are scored before fakes; keep the calls sequenced.
  const Tensor real_logits = d.forward(real_aug.output);
  const Tensor fake_logits = d.forward(fake_in);
  DLoss out;
  out.adversarial = add(mean(f_d(mul(real_logits, -1.0f), config.loss)), mean(f_d(fake_logits, config.loss)));
  out.r1 = r1_penalty(d, real_aug.output, real_aug.samples, config.r1_on_augmented, config.r1_gamma);
  out.total = config.r1_gamma > 0.0f ? add(out.adversarial, out.r1) : out.adversarial;
  return out;
}

Tensor g_loss(const Critic& d, const Tensor& fakes, const TrainConfig& config, Rng& augment_rng) {
  Tensor in = fakes;
  if (augments_fakes_for_g(config.strategy)) in = apply_policy(fakes, config.policy, augment_rng).output;
  return mean(f_g(mul(d.forward(in), -1.0f), config.loss));
}

Tensor r1_penalty(const Critic& d, const Tensor& points, std::span<const AugmentationSample> samples,
                  bool on_augmented, float gamma) {
  if (gamma < 0.0f) throw std::invalid_argument("r1_penalty: gamma must be >= 0");
  if (gamma == 0.0f) return Tensor::scalar(0.0f);
  Tensor grad = d.input_gradient(points.detach());
  if (!on_augmented) grad = apply_adjoint(grad, samples);
  const float scale = 0.5f * gamma / static_cast<float>(points.dim(0));
  return mul(sum(square(grad)), scale);
}

TrainState init_train_state(const TrainConfig& config) {
  validate(config);
  Rng init = Rng::derive(config.seed, static_cast<std::uint64_t>(RngStream::Init));
  Generator g(config.net, init);
  Discriminator d(config.net, init);
  auto gp = g.parameters();
  auto dp = d.parameters();
  TrainState s{std::move(g),
               std::move(d),
               make_adam_state(gp, config.adam_g),
               make_adam_state(dp, config.adam_d),
               make_ema(gp, config.ema_half_life_images),
               Rng::derive(config.seed, static_cast<std::uint64_t>(RngStream::Latent)),
               Rng::derive(config.seed, static_cast<std::uint64_t>(RngStream::Augment)),
               0};
  return s;
}

Generator ema_generator(const TrainState& state) {
  Generator g = state.generator.clone();
  g.load_values(state.ema.values);
  return g;
}

StepLosses train_step(TrainState& state, const TrainConfig& config, BatchSampler& data) {
  StepLosses losses;
  const Shape latent{config.batch_size, config.net.latent_dim};
  auto dparams = state.discriminator.parameters();
  auto gparams = state.generator.parameters();
  try {
    for (int k = 0; k < config.d_steps_per_g; ++k) {
      Tensor reals = data.next();
      Tensor z = state.latent_rng.normal_tensor(latent);
      Tensor fakes;
      {
        NoGradGuard no_grad;
        fakes = state.generator.forward(z);
      }
      DLoss dl = d_loss(state.discriminator, reals, fakes, config, state.augment_rng);
      losses.d_adversarial = dl.adversarial.item();
      losses.r1 = dl.r1.item();
      losses.d_total = dl.total.item();
      require_finite(losses.d_total, "discriminator loss", state, losses);
      state.discriminator.zero_grad();
      dl.total.backward();
      adam_step(dparams, state.adam_d);
    }

    Tensor z = state.latent_rng.normal_tensor(latent);
    state.generator.zero_grad();
    {
      FreezeGuard freeze(state.discriminator);
      Tensor lg = g_loss(state.discriminator, state.generator.forward(z), config, state.augment_rng);
      losses.g = lg.item();
      require_finite(losses.g, "generator loss", state, losses);
      lg.backward();
    }
    adam_step(gparams, state.adam_g);
  } catch (const NonFiniteError& e) {
    throw TrainingHalted(e.what(), diagnostics(state, losses, e.what()));
  }
  ema_update(state.ema, gparams, config.batch_size);
  state.step += 1;
  return losses;
}

}  // namespace diffaug
