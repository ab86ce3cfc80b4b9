#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "diffaug/tensor.hpp"

namespace diffaug {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  float lr = 2e-4f;
  float beta1 = 0.0f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config);

/// One bias-corrected Adam update from the parameters' accumulated grads.
/// Parameters without a grad buffer are treated as having zero gradient.
/// Throws NonFiniteError, leaving parameters and moments untouched, if any
/// gradient is NaN or infinite.
void adam_step(std::span<Tensor> params, AdamState& state);

/// Exponential moving average of generator weights. The decay per update is
/// 0.5^(batch_size / half_life_images).
struct EmaShadow {
  double half_life_images = 1.0;
  std::vector<std::vector<float>> values;
};

EmaShadow make_ema(std::span<const Tensor> params, double half_life_images);
double ema_decay(const EmaShadow& shadow, int batch_size);
void ema_update(EmaShadow& shadow, std::span<const Tensor> params, int batch_size);

}  // namespace diffaug
