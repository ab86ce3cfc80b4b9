#include "diffaug/nn.hpp"

#include <algorithm>
#include <bit>

#include <fmt/format.h>

#include "diffaug/ops.hpp"

namespace diffaug {

namespace {

constexpr float kInitStd = 0.02f;
constexpr Conv2dParams kSame{1, 1};
constexpr Conv2dParams kDown{2, 1};

Tensor init_weight(Rng& rng, const Shape& shape) {
  Tensor t = rng.normal_tensor(shape, kInitStd);
  t.set_requires_grad(true);
  return t;
}

Tensor init_bias(std::int64_t n) { return Tensor::zeros({n}, true); }

int levels_for(int resolution) { return std::countr_zero(static_cast<unsigned>(resolution)) - 2; }

// Channel width at spatial size `side`; wider at coarse levels.
int width_at(const NetConfig& cfg, int side) { return std::max(4, cfg.base_channels * cfg.resolution / (2 * side)); }

}  // namespace

void validate(const NetConfig& cfg) {
  if (cfg.resolution != 16 && cfg.resolution != 32) {
    throw std::invalid_argument(fmt::format("resolution must be 16 or 32, got {}", cfg.resolution));
  }
  if (cfg.latent_dim < 1) throw std::invalid_argument("latent_dim must be positive");
  if (cfg.base_channels < 1) throw std::invalid_argument("base_channels must be positive");
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::int64_t Module::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void Module::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void Module::copy_values_from(const Module& other) {
  if (other.params_.size() != params_.size()) throw std::invalid_argument("copy_values_from: architecture mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = other.params_[i].value.data();
    auto dst = params_[i].value.mutable_data();
    if (src.size() != dst.size()) throw std::invalid_argument("copy_values_from: shape mismatch at " + params_[i].name);
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void Module::load_values(const std::vector<std::vector<float>>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("load_values: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].value.mutable_data();
    if (values[i].size() != dst.size()) throw std::invalid_argument("load_values: shape mismatch at " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

Tensor& Module::add_parameter(std::string name, Tensor value) {
  params_.push_back({std::move(name), std::move(value)});
  return params_.back().value;
}

void Module::deep_copy_parameters() {
  for (auto& p : params_) {
    p.value = p.value.detach();
    p.value.set_requires_grad(true);
  }
}

Generator::Generator(const NetConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  validate(cfg);
  blocks_ = levels_for(cfg.resolution);
  for (int level = 0, side = 4; level <= blocks_; ++level, side *= 2) channels_.push_back(width_at(cfg, side));
  const std::int64_t c0 = channels_[0];
  add_parameter("dense.weight", init_weight(init_rng, {cfg.latent_dim, c0 * 16}));
  add_parameter("dense.bias", init_bias(c0 * 16));
  for (int b = 0; b < blocks_; ++b) {
    add_parameter(fmt::format("block{}.weight", b), init_weight(init_rng, {channels_[b + 1], channels_[b], 3, 3}));
    add_parameter(fmt::format("block{}.bias", b), init_bias(channels_[b + 1]));
  }
  add_parameter("to_rgb.weight", init_weight(init_rng, {3, channels_.back(), 3, 3}));
  add_parameter("to_rgb.bias", init_bias(3));
}

Tensor Generator::forward(const Tensor& z) const {
  if (z.ndim() != 2 || z.dim(1) != cfg_.latent_dim) {
    throw ShapeError("generator_forward", z.shape(), Shape{-1, cfg_.latent_dim});
  }
  const auto n = z.dim(0);
  Tensor h = add(matmul(z, param(0)), param(1));
  h = leaky_relu(reshape(h, {n, channels_[0], 4, 4}), 0.2f);
  for (int b = 0; b < blocks_; ++b) {
    h = upsample_nearest2x(h);
    h = leaky_relu(conv2d(h, param(2 + 2 * b), param(3 + 2 * b), kSame), 0.2f);
  }
  return tanh(conv2d(h, param(2 + 2 * blocks_), param(3 + 2 * blocks_), kSame));
}

Generator Generator::clone() const {
  Generator copy(*this);
  copy.deep_copy_parameters();
  return copy;
}

Discriminator::Discriminator(const NetConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  validate(cfg);
  blocks_ = levels_for(cfg.resolution);
  channels_.push_back(3);
  for (int side = cfg.resolution / 2; side >= 4; side /= 2) channels_.push_back(width_at(cfg, side));
  for (int b = 0; b < blocks_; ++b) {
    add_parameter(fmt::format("block{}.weight", b), init_weight(init_rng, {channels_[b + 1], channels_[b], 3, 3}));
    add_parameter(fmt::format("block{}.bias", b), init_bias(channels_[b + 1]));
  }
  add_parameter("dense.weight", init_weight(init_rng, {std::int64_t{channels_.back()} * 16, 1}));
  add_parameter("dense.bias", init_bias(1));
}

void Discriminator::check_input(const Tensor& x) const {
  const Shape want{x.ndim() == 4 ? x.dim(0) : -1, 3, cfg_.resolution, cfg_.resolution};
  if (x.shape() != want) throw ShapeError("discriminator_forward", x.shape(), want);
}

Tensor Discriminator::forward(const Tensor& x) const {
  check_input(x);
  Tensor h = x;
  for (int b = 0; b < blocks_; ++b) h = leaky_relu(conv2d(h, param(2 * b), param(2 * b + 1), kDown), kSlope);
  h = reshape(h, {x.dim(0), h.numel() / x.dim(0)});
  return add(matmul(h, param(2 * blocks_)), param(2 * blocks_ + 1));
}

Tensor Discriminator::input_gradient(const Tensor& x) const {
  check_input(x);
  const auto n = x.dim(0);
  std::vector<Tensor> slopes;
  std::vector<Shape> inputs;
  {
    NoGradGuard no_grad;
    Tensor h = x.detach();
    for (int b = 0; b < blocks_; ++b) {
      inputs.push_back(h.shape());
      Tensor pre = conv2d(h, param(2 * b), param(2 * b + 1), kDown);
      slopes.push_back(leaky_relu_slope(pre, kSlope));
      h = leaky_relu(pre, kSlope);
    }
  }
  const Tensor& dense = param(2 * blocks_);
  Tensor g = matmul(Tensor::full({n, 1}, 1.0f), reshape(dense, {1, dense.numel()}));
  g = reshape(g, {n, channels_.back(), 4, 4});
  for (int b = blocks_ - 1; b >= 0; --b) {
    g = conv2d_input_grad(mul(g, slopes[b]), param(2 * b), inputs[b], kDown);
  }
  return g;
}

Discriminator Discriminator::clone() const {
  Discriminator copy(*this);
  copy.deep_copy_parameters();
  return copy;
}

}  // namespace diffaug
