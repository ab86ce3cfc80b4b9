#pragma once

#include <string>
#include <vector>

#include "diffaug/rng.hpp"
#include "diffaug/tensor.hpp"

namespace diffaug {

struct NetConfig {
  int latent_dim = 64;
  int base_channels = 16;
  /// Output / input image side, 16 or 32.
  int resolution = 16;
};

void validate(const NetConfig& cfg);

struct NamedParameter {
  std::string name;
  Tensor value;
};

/// Owner of a flat list of trainable leaves.
class Module {
 public:
  virtual ~Module() = default;

  std::vector<Tensor> parameters() const;
  const std::vector<NamedParameter>& named_parameters() const { return params_; }
  std::int64_t parameter_count() const;
  void zero_grad();
  /// Copies values from `other` (same architecture) into this module's leaves.
  void copy_values_from(const Module& other);
  void load_values(const std::vector<std::vector<float>>& values);

 protected:
  Module() = default;
  Module(const Module&) = default;
  Module& operator=(const Module&) = default;
  Tensor& add_parameter(std::string name, Tensor value);
  /// Replaces every parameter with an independent copy.
  void deep_copy_parameters();
  const Tensor& param(std::size_t index) const { return params_[index].value; }

 private:
  std::vector<NamedParameter> params_;
};

/// Anything the adversarial objectives can score: a logit per sample plus the
/// gradient of the summed logits with respect to the input, built as a graph
/// that stays differentiable in the critic's own parameters.
class Critic {
 public:
  virtual ~Critic() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual Tensor input_gradient(const Tensor& x) const = 0;
};

/// DCGAN-style generator: dense projection to 4x4, then nearest-upsample +
/// 3x3 conv blocks up to the output resolution, tanh output.
class Generator : public Module {
 public:
  Generator(const NetConfig& cfg, Rng& init_rng);

  /// z: (N, latent_dim) -> (N, 3, R, R) in [-1, 1].
  Tensor forward(const Tensor& z) const;
  Generator clone() const;
  const NetConfig& config() const { return cfg_; }

 private:
  NetConfig cfg_;
  int blocks_ = 0;
  std::vector<int> channels_;  // per resolution level, 4x4 first
};

/// Stride-2 3x3 conv blocks with leaky_relu(0.2) down to 4x4, then a dense
/// layer to one logit.
class Discriminator : public Module, public Critic {
 public:
  Discriminator(const NetConfig& cfg, Rng& init_rng);

  /// x: (N, 3, R, R) -> (N, 1).
  Tensor forward(const Tensor& x) const override;
  Tensor input_gradient(const Tensor& x) const override;
  Discriminator clone() const;
  const NetConfig& config() const { return cfg_; }

  static constexpr float kSlope = 0.2f;

 private:
  void check_input(const Tensor& x) const;

  NetConfig cfg_;
  int blocks_ = 0;
  std::vector<int> channels_;
};

}  // namespace diffaug
