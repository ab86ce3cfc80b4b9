#include "diffaug/augment.hpp"

#include <algorithm>
#include <array>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace diffaug {

namespace {

struct ImageLayout {
  std::int64_t n, c, h, w;
  std::int64_t plane() const { return h * w; }
  std::int64_t image() const { return c * h * w; }
};

ImageLayout layout_of(const char* op, const Tensor& x, std::size_t params) {
  if (x.ndim() != 4) throw ShapeError(op, fmt::format("expected (N, C, H, W), got {}", shape_str(x.shape())));
  ImageLayout l{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  if (static_cast<std::int64_t>(params) != l.n) {
    throw ShapeError(op, fmt::format("{} parameter records for batch of {}", params, l.n));
  }
  return l;
}

void check_factor(const char* op, float f, float lo, float hi) {
  if (!(f >= lo && f <= hi)) throw AugmentError(fmt::format("{}: factor {} outside [{}, {}]", op, f, lo, hi));
}

// Shift every plane of `src` by (dx, dy) into `dst` (overwrites, zero fill).
void shift_image(const float* src, float* dst, const ImageLayout& l, int dx, int dy) {
  for (std::int64_t ch = 0; ch < l.c; ++ch) {
    const float* s = src + ch * l.plane();
    float* d = dst + ch * l.plane();
    for (std::int64_t y = 0; y < l.h; ++y) {
      const std::int64_t sy = y - dy;
      for (std::int64_t x = 0; x < l.w; ++x) {
        const std::int64_t sx = x - dx;
        d[y * l.w + x] = (sy >= 0 && sy < l.h && sx >= 0 && sx < l.w) ? s[sy * l.w + sx] : 0.0f;
      }
    }
  }
}

struct Rect {
  std::int64_t y0, y1, x0, x1;
};

Rect cutout_rect(const ImageLayout& l, const AugmentParams& p) {
  const std::int64_t side = cutout_side(static_cast<int>(l.h));
  return {std::clamp<std::int64_t>(p.mask_top, 0, l.h), std::clamp<std::int64_t>(p.mask_top + side, 0, l.h),
          std::clamp<std::int64_t>(p.mask_left, 0, l.w), std::clamp<std::int64_t>(p.mask_left + side, 0, l.w)};
}

void zero_rect(float* img, const ImageLayout& l, const Rect& r) {
  for (std::int64_t ch = 0; ch < l.c; ++ch) {
    for (std::int64_t y = r.y0; y < r.y1; ++y) {
      std::fill(img + ch * l.plane() + y * l.w + r.x0, img + ch * l.plane() + y * l.w + r.x1, 0.0f);
    }
  }
}

Tensor apply_one(const Tensor& x, const AugmentationSample& s) {
  switch (s.kind) {
    case AugmentKind::Translation: return translate(x, s.per_image);
    case AugmentKind::Cutout: return cutout(x, s.per_image);
    case AugmentKind::Brightness: return brightness(x, s.per_image);
    case AugmentKind::Contrast: return contrast(x, s.per_image);
    case AugmentKind::Saturation: return saturation(x, s.per_image);
  }
  throw AugmentError("unknown augmentation kind");
}

}  // namespace

std::string_view to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::Translation: return "translate";
    case AugmentKind::Cutout: return "cutout";
    case AugmentKind::Brightness: return "brightness";
    case AugmentKind::Contrast: return "contrast";
    case AugmentKind::Saturation: return "saturation";
  }
  return "unknown";
}

Policy Policy::parse(std::string_view text) {
  Policy p;
  std::size_t pos = 0;
  while (pos <= text.size() && !text.empty()) {
    const auto comma = text.find(',', pos);
    std::string token(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (token == "color") {
      p.kinds_.insert(p.kinds_.end(), {AugmentKind::Brightness, AugmentKind::Saturation, AugmentKind::Contrast});
    } else if (token == "translation") {
      p.kinds_.push_back(AugmentKind::Translation);
    } else if (token == "cutout") {
      p.kinds_.push_back(AugmentKind::Cutout);
    } else {
      throw AugmentError(fmt::format("unknown policy token '{}' (expected color, translation or cutout)", token));
    }
    p.tokens_.push_back(token);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return p;
}

bool Policy::contains(AugmentKind kind) const {
  return std::find(kinds_.begin(), kinds_.end(), kind) != kinds_.end();
}

std::string Policy::to_string() const { return fmt::format("{}", fmt::join(tokens_, ",")); }

Tensor translate(const Tensor& x, std::span<const AugmentParams> per_image) {
  const auto l = layout_of("translate", x, per_image.size());
  std::vector<std::array<int, 2>> shifts;
  for (const auto& p : per_image) {
    if (std::abs(p.shift_x) > l.w || std::abs(p.shift_y) > l.h) {
      throw AugmentError(fmt::format("translate: shift ({}, {}) exceeds image extent", p.shift_x, p.shift_y));
    }
    shifts.push_back({p.shift_x, p.shift_y});
  }
  std::vector<float> out(x.numel());
  for (std::int64_t i = 0; i < l.n; ++i) {
    shift_image(x.data().data() + i * l.image(), out.data() + i * l.image(), l, shifts[i][0], shifts[i][1]);
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, "translate",
                             [l, shifts](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               std::vector<float> back(l.image());
                               for (std::int64_t i = 0; i < l.n; ++i) {
                                 shift_image(g.data() + i * l.image(), back.data(), l, -shifts[i][0], -shifts[i][1]);
                                 for (std::int64_t j = 0; j < l.image(); ++j) gx[i * l.image() + j] += back[j];
                               }
                             });
}

Tensor cutout(const Tensor& x, std::span<const AugmentParams> per_image) {
  const auto l = layout_of("cutout", x, per_image.size());
  const int side = cutout_side(static_cast<int>(l.h));
  std::vector<Rect> rects;
  for (const auto& p : per_image) {
    if (p.mask_top < -side || p.mask_top > l.h || p.mask_left < -side || p.mask_left > l.w) {
      throw AugmentError(fmt::format("cutout: mask offset ({}, {}) out of range", p.mask_top, p.mask_left));
    }
    rects.push_back(cutout_rect(l, p));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  for (std::int64_t i = 0; i < l.n; ++i) zero_rect(out.data() + i * l.image(), l, rects[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, "cutout",
                             [l, rects](std::span<const float> g, std::span<const Tensor> p) {
                               std::vector<float> masked(g.begin(), g.end());
                               for (std::int64_t i = 0; i < l.n; ++i) zero_rect(masked.data() + i * l.image(), l, rects[i]);
                               p[0].accumulate_grad(masked);
                             });
}

Tensor brightness(const Tensor& x, std::span<const AugmentParams> per_image) {
  const auto l = layout_of("brightness", x, per_image.size());
  std::vector<float> out(x.data().begin(), x.data().end());
  for (std::int64_t i = 0; i < l.n; ++i) {
    const float b = per_image[i].factor;
    check_factor("brightness", b, -kBrightnessRange, kBrightnessRange);
    for (std::int64_t j = 0; j < l.image(); ++j) out[i * l.image() + j] += b;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, "brightness",
                             [](std::span<const float> g, std::span<const Tensor> p) { p[0].accumulate_grad(g); });
}

Tensor contrast(const Tensor& x, std::span<const AugmentParams> per_image) {
  const auto l = layout_of("contrast", x, per_image.size());
  std::vector<float> factors;
  for (const auto& p : per_image) {
    check_factor("contrast", p.factor, 0.0f, kContrastOpMax);
    factors.push_back(p.factor);
  }
  auto xv = x.data();
  std::vector<float> out(x.numel());
  for (std::int64_t i = 0; i < l.n; ++i) {
    const float* src = xv.data() + i * l.image();
    double acc = 0.0;
    for (std::int64_t j = 0; j < l.image(); ++j) acc += src[j];
    const float mu = static_cast<float>(acc / static_cast<double>(l.image()));
    const float c = factors[i];
    // Written as x*c + mu*(1-c) so c == 1 reproduces x exactly.
    const float offset = mu * (1.0f - c);
    for (std::int64_t j = 0; j < l.image(); ++j) out[i * l.image() + j] = src[j] * c + offset;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, "contrast",
                             [l, factors](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               for (std::int64_t i = 0; i < l.n; ++i) {
                                 const float* gi = g.data() + i * l.image();
                                 double acc = 0.0;
                                 for (std::int64_t j = 0; j < l.image(); ++j) acc += gi[j];
                                 const float c = factors[i];
                                 const float shared =
                                     static_cast<float>(acc / static_cast<double>(l.image())) * (1.0f - c);
                                 for (std::int64_t j = 0; j < l.image(); ++j) gx[i * l.image() + j] += gi[j] * c + shared;
                               }
                             });
}

Tensor saturation(const Tensor& x, std::span<const AugmentParams> per_image) {
  const auto l = layout_of("saturation", x, per_image.size());
  std::vector<float> factors;
  for (const auto& p : per_image) {
    check_factor("saturation", p.factor, kSaturationMin, kSaturationMax);
    factors.push_back(p.factor);
  }
  auto xv = x.data();
  std::vector<float> out(x.numel());
  const float inv_c = 1.0f / static_cast<float>(l.c);
  for (std::int64_t i = 0; i < l.n; ++i) {
    const float s = factors[i];
    const float* src = xv.data() + i * l.image();
    float* dst = out.data() + i * l.image();
    for (std::int64_t px = 0; px < l.plane(); ++px) {
      float gray = 0.0f;
      for (std::int64_t ch = 0; ch < l.c; ++ch) gray += src[ch * l.plane() + px];
      const float offset = gray * inv_c * (1.0f - s);
      for (std::int64_t ch = 0; ch < l.c; ++ch) dst[ch * l.plane() + px] = src[ch * l.plane() + px] * s + offset;
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, "saturation",
                             [l, factors, inv_c](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               for (std::int64_t i = 0; i < l.n; ++i) {
                                 const float s = factors[i];
                                 const float* gi = g.data() + i * l.image();
                                 float* dst = gx.data() + i * l.image();
                                 for (std::int64_t px = 0; px < l.plane(); ++px) {
                                   float acc = 0.0f;
                                   for (std::int64_t ch = 0; ch < l.c; ++ch) acc += gi[ch * l.plane() + px];
                                   const float shared = acc * inv_c * (1.0f - s);
                                   for (std::int64_t ch = 0; ch < l.c; ++ch) {
                                     dst[ch * l.plane() + px] += gi[ch * l.plane() + px] * s + shared;
                                   }
                                 }
                               }
                             });
}

AugmentationSample draw_sample(AugmentKind kind, std::int64_t batch, int resolution, Rng& rng) {
  AugmentationSample s;
  s.kind = kind;
  s.per_image.resize(batch);
  const int shift = max_shift(resolution);
  const int side = cutout_side(resolution);
  for (auto& p : s.per_image) {
    switch (kind) {
      case AugmentKind::Translation:
        p.shift_x = static_cast<int>(rng.uniform_int(-shift, shift + 1));
        p.shift_y = static_cast<int>(rng.uniform_int(-shift, shift + 1));
        break;
      case AugmentKind::Cutout:
        p.mask_top = static_cast<int>(rng.uniform_int(-side / 2, resolution - side / 2));
        p.mask_left = static_cast<int>(rng.uniform_int(-side / 2, resolution - side / 2));
        break;
      case AugmentKind::Brightness:
        p.factor = static_cast<float>(rng.uniform(-kBrightnessRange, kBrightnessRange));
        break;
      case AugmentKind::Contrast:
        p.factor = static_cast<float>(rng.uniform(kContrastMin, kContrastMax));
        break;
      case AugmentKind::Saturation:
        p.factor = static_cast<float>(rng.uniform(kSaturationMin, kSaturationMax));
        break;
    }
  }
  return s;
}

void validate_sample(const AugmentationSample& sample, std::int64_t batch, int resolution) {
  if (static_cast<std::int64_t>(sample.per_image.size()) != batch) {
    throw AugmentError(fmt::format("{} sample has {} records for batch of {}", to_string(sample.kind),
                                   sample.per_image.size(), batch));
  }
  const int shift = max_shift(resolution);
  const int side = cutout_side(resolution);
  for (const auto& p : sample.per_image) {
    switch (sample.kind) {
      case AugmentKind::Translation:
        if (std::abs(p.shift_x) > shift || std::abs(p.shift_y) > shift) {
          throw AugmentError(fmt::format("translation shift ({}, {}) outside [-{}, {}]", p.shift_x, p.shift_y, shift, shift));
        }
        break;
      case AugmentKind::Cutout:
        if (p.mask_top < -side / 2 || p.mask_top >= resolution - side / 2 || p.mask_left < -side / 2 ||
            p.mask_left >= resolution - side / 2) {
          throw AugmentError(fmt::format("cutout offset ({}, {}) out of range", p.mask_top, p.mask_left));
        }
        break;
      case AugmentKind::Brightness: check_factor("brightness", p.factor, -kBrightnessRange, kBrightnessRange); break;
      case AugmentKind::Contrast: check_factor("contrast", p.factor, kContrastMin, kContrastMax); break;
      case AugmentKind::Saturation: check_factor("saturation", p.factor, kSaturationMin, kSaturationMax); break;
    }
  }
}

AugmentResult apply_policy(const Tensor& x, const Policy& policy, Rng& rng) {
  AugmentResult r{x, {}};
  if (policy.empty()) return r;
  if (x.ndim() != 4) throw ShapeError("apply_policy", fmt::format("expected (N, C, H, W), got {}", shape_str(x.shape())));
  const auto n = x.dim(0);
  const int resolution = static_cast<int>(x.dim(2));
  for (AugmentKind kind : policy.kinds()) {
    r.samples.push_back(draw_sample(kind, n, resolution, rng));
    r.output = apply_one(r.output, r.samples.back());
  }
  return r;
}

Tensor replay(const Tensor& x, std::span<const AugmentationSample> samples) {
  Tensor out = x;
  for (const auto& s : samples) {
    validate_sample(s, x.dim(0), static_cast<int>(x.dim(2)));
    out = apply_one(out, s);
  }
  return out;
}

Tensor apply_adjoint(const Tensor& v, std::span<const AugmentationSample> samples) {
  Tensor out = v;
  for (auto it = samples.rbegin(); it != samples.rend(); ++it) {
    switch (it->kind) {
      case AugmentKind::Translation: {
        std::vector<AugmentParams> inverse = it->per_image;
        for (auto& p : inverse) {
          p.shift_x = -p.shift_x;
          p.shift_y = -p.shift_y;
        }
        out = translate(out, inverse);
        break;
      }
      // Cutout, contrast and saturation have symmetric Jacobians; brightness
      // has the identity Jacobian.
      case AugmentKind::Cutout:
      case AugmentKind::Contrast:
      case AugmentKind::Saturation: out = apply_one(out, *it); break;
      case AugmentKind::Brightness: break;
    }
  }
  return out;
}

bool is_augmentation_op(std::string_view op_name) {
  return op_name == "translate" || op_name == "cutout" || op_name == "brightness" || op_name == "contrast" ||
         op_name == "saturation";
}

}  // namespace diffaug
