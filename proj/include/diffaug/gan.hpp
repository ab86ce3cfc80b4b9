#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "diffaug/augment.hpp"
#include "diffaug/data.hpp"
#include "diffaug/nn.hpp"
#include "diffaug/optim.hpp"
#include "diffaug/rng.hpp"

namespace diffaug {

enum class LossKind { NonSaturating, Hinge };

/// Where the augmentation T enters the objectives.
///   Baseline          L_D = f_D(-D(x)) + f_D(D(G(z)))        L_G = f_G(-D(G(z)))
///   AugmentRealsOnly  L_D = f_D(-D(T(x))) + f_D(D(G(z)))     L_G = f_G(-D(G(z)))
///   AugmentDOnly      L_D = f_D(-D(T(x))) + f_D(D(T(G(z))))  L_G = f_G(-D(G(z)))
///   DiffAugment       L_D = f_D(-D(T(x))) + f_D(D(T(G(z))))  L_G = f_G(-D(T(G(z))))
enum class Strategy { Baseline, AugmentRealsOnly, AugmentDOnly, DiffAugment };

LossKind parse_loss_kind(std::string_view text);
Strategy parse_strategy(std::string_view text);
std::string_view to_string(LossKind kind);
std::string_view to_string(Strategy strategy);

struct TrainConfig {
  Strategy strategy = Strategy::DiffAugment;
  LossKind loss = LossKind::NonSaturating;
  Policy policy = Policy::parse("color,translation,cutout");
  /// Fakes in a D step reuse the reals' realized augmentation draw.
  bool shared_draw = false;
  int d_steps_per_g = 1;
  int batch_size = 32;
  std::int64_t total_steps = 3000;
  float r1_gamma = 0.1f;
  /// Penalize the gradient w.r.t. T(x) (true) or w.r.t. x through T (false).
  bool r1_on_augmented = true;
  AdamConfig adam_g;
  AdamConfig adam_d;
  double ema_half_life_images = 4000.0;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 250;
  bool flip = true;
  NetConfig net;
};

void validate(const TrainConfig& config);

/// f_D and f_G applied elementwise to the signed argument t.
Tensor f_d(const Tensor& t, LossKind kind);
Tensor f_g(const Tensor& t, LossKind kind);

bool augments_reals(Strategy s);
bool augments_fakes_for_d(Strategy s);
bool augments_fakes_for_g(Strategy s);

struct DLoss {
  Tensor adversarial;
  Tensor r1;
  Tensor total;
};

/// Discriminator objective for one batch. `fakes` must carry no generator
/// graph. Draws T from `augment_rng` (reals first, then fakes).
DLoss d_loss(const Critic& d, const Tensor& reals, const Tensor& fakes, const TrainConfig& config, Rng& augment_rng);

/// Generator objective; gradients flow through T only under DiffAugment.
Tensor g_loss(const Critic& d, const Tensor& fakes, const TrainConfig& config, Rng& augment_rng);

/// (gamma / 2) * mean over the batch of |grad D|^2. `points` are the
/// (possibly augmented) reals fed to D; with `on_augmented` false the
/// gradient is pulled back through the recorded `samples` to the raw reals.
Tensor r1_penalty(const Critic& d, const Tensor& points, std::span<const AugmentationSample> samples,
                  bool on_augmented, float gamma);

/// Independent RNG streams fanned out from the master seed.
enum class RngStream : std::uint64_t { Init = 1, Latent = 2, Augment = 3, Data = 4, Eval = 5 };

struct TrainState {
  Generator generator;
  Discriminator discriminator;
  AdamState adam_g;
  AdamState adam_d;
  EmaShadow ema;
  Rng latent_rng;
  Rng augment_rng;
  std::int64_t step = 0;
};

TrainState init_train_state(const TrainConfig& config);

/// Generator carrying the EMA weights.
Generator ema_generator(const TrainState& state);

struct StepLosses {
  float d_adversarial = 0.0f;
  float r1 = 0.0f;
  float d_total = 0.0f;
  float g = 0.0f;
};

/// Raised when a loss or gradient becomes non-finite. Carries a diagnostic
/// dump (step, last losses, RNG states).
class TrainingHalted : public std::runtime_error {
 public:
  TrainingHalted(const std::string& what, std::string diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

/// d_steps_per_g discriminator updates (fresh reals and fresh z each), one
/// generator update, EMA update, step increment.
StepLosses train_step(TrainState& state, const TrainConfig& config, BatchSampler& data);

}  // namespace diffaug
