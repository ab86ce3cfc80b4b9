#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "diffaug/rng.hpp"
#include "diffaug/tensor.hpp"

namespace diffaug {

class AugmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class AugmentKind { Translation, Cutout, Brightness, Contrast, Saturation };

std::string_view to_string(AugmentKind kind);

/// Realized random parameters for one image. Only the fields relevant to the
/// owning sample's kind are meaningful.
struct AugmentParams {
  int shift_x = 0;  // columns, positive moves content right
  int shift_y = 0;  // rows, positive moves content down
  int mask_top = 0;
  int mask_left = 0;
  float factor = 0.0f;

  bool operator==(const AugmentParams&) const = default;
};

/// One augmentation kind applied to a batch, with per-image parameters.
struct AugmentationSample {
  AugmentKind kind = AugmentKind::Translation;
  std::vector<AugmentParams> per_image;

  bool operator==(const AugmentationSample&) const = default;
};

inline constexpr float kBrightnessRange = 0.5f;
inline constexpr float kContrastMin = 0.5f, kContrastMax = 1.5f;
// The primitive itself accepts a wider contrast range than the sampler draws.
inline constexpr float kContrastOpMax = 2.0f;
inline constexpr float kSaturationMin = 0.0f, kSaturationMax = 2.0f;

inline int max_shift(int resolution) { return resolution / 8; }
inline int cutout_side(int resolution) { return resolution / 2; }

/// Ordered composition of augmentations. "color" expands to brightness,
/// saturation, contrast (in that order).
class Policy {
 public:
  Policy() = default;
  /// Comma-separated tokens from {color, translation, cutout}; "" is empty.
  static Policy parse(std::string_view text);

  const std::vector<AugmentKind>& kinds() const { return kinds_; }
  bool empty() const { return kinds_.empty(); }
  bool contains(AugmentKind kind) const;
  std::string to_string() const;

  bool operator==(const Policy&) const = default;

 private:
  std::vector<std::string> tokens_;
  std::vector<AugmentKind> kinds_;
};

// Differentiable primitives. Each takes one parameter record per image.

/// Integer shift with zero fill. |shift| may not exceed the image extent.
Tensor translate(const Tensor& x, std::span<const AugmentParams> per_image);
/// Zeroes the (clipped) square of side R/2 whose top-left corner is
/// (mask_top, mask_left). Offsets may lie in [-side, R].
Tensor cutout(const Tensor& x, std::span<const AugmentParams> per_image);
/// x + b per image.
Tensor brightness(const Tensor& x, std::span<const AugmentParams> per_image);
/// (x - mean) * c + mean, mean over all channels and pixels of each image.
Tensor contrast(const Tensor& x, std::span<const AugmentParams> per_image);
/// (x - gray) * s + gray, gray the per-pixel channel mean.
Tensor saturation(const Tensor& x, std::span<const AugmentParams> per_image);

/// Draws fresh per-image parameters within the policy ranges.
AugmentationSample draw_sample(AugmentKind kind, std::int64_t batch, int resolution, Rng& rng);
/// Throws AugmentError if any parameter lies outside the policy ranges.
void validate_sample(const AugmentationSample& sample, std::int64_t batch, int resolution);

struct AugmentResult {
  Tensor output;
  std::vector<AugmentationSample> samples;
};

/// Applies the policy in order with independent draws per image.
AugmentResult apply_policy(const Tensor& x, const Policy& policy, Rng& rng);
/// Re-applies recorded samples; bit-identical to the original application.
Tensor replay(const Tensor& x, std::span<const AugmentationSample> samples);
/// Transpose of the recorded transform's Jacobian applied to `v`. Itself a
/// differentiable graph in `v`.
Tensor apply_adjoint(const Tensor& v, std::span<const AugmentationSample> samples);

/// True for op names produced by the augmentation primitives.
bool is_augmentation_op(std::string_view op_name);

}  // namespace diffaug
