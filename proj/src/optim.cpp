#include "diffaug/optim.hpp"

#include <cmath>

#include <fmt/format.h>

namespace diffaug {

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0f);
    s.v.emplace_back(p.numel(), 0.0f);
  }
  return s;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (params.size() != state.m.size()) throw std::invalid_argument("adam_step: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (static_cast<std::size_t>(params[i].numel()) != state.m[i].size()) {
      throw std::invalid_argument(fmt::format("adam_step: moment shape mismatch for parameter {}", i));
    }
    for (float g : params[i].grad()) {
      if (!std::isfinite(g)) throw NonFiniteError(fmt::format("adam_step: non-finite gradient in parameter {}", i));
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(c.beta1), t));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(c.beta2), t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const float gj = g.empty() ? 0.0f : g[j];
      m[j] = c.beta1 * m[j] + (1.0f - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0f - c.beta2) * gj * gj;
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

EmaShadow make_ema(std::span<const Tensor> params, double half_life_images) {
  if (!(half_life_images > 0.0)) throw std::invalid_argument("ema half-life must be positive");
  EmaShadow s;
  s.half_life_images = half_life_images;
  for (const auto& p : params) s.values.emplace_back(p.data().begin(), p.data().end());
  return s;
}

double ema_decay(const EmaShadow& shadow, int batch_size) {
  return std::pow(0.5, static_cast<double>(batch_size) / shadow.half_life_images);
}

void ema_update(EmaShadow& shadow, std::span<const Tensor> params, int batch_size) {
  if (params.size() != shadow.values.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
  const float blend = static_cast<float>(1.0 - ema_decay(shadow, batch_size));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto cur = params[i].data();
    auto& s = shadow.values[i];
    if (cur.size() != s.size()) throw std::invalid_argument("ema_update: shape mismatch");
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += blend * (cur[j] - s[j]);
  }
}

}  // namespace diffaug
