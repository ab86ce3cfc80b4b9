#include <doctest.h>

#include <cmath>

#include "diffaug/augment.hpp"
#include "diffaug/ops.hpp"
#include "gradcheck.hpp"
#include "oracle_cases.hpp"

using namespace diffaug;
using namespace diffaug::testing;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<AugmentParams> repeat(AugmentParams p, std::int64_t n) { return std::vector<AugmentParams>(n, p); }

AugmentParams shift(int x, int y) {
  AugmentParams p;
  p.shift_x = x;
  p.shift_y = y;
  return p;
}

AugmentParams mask(int top, int left) {
  AugmentParams p;
  p.mask_top = top;
  p.mask_left = left;
  return p;
}

AugmentParams factor(float f) {
  AugmentParams p;
  p.factor = f;
  return p;
}

}  // namespace

TEST_CASE("policy parsing") {
  CHECK(Policy::parse("").empty());
  const auto p = Policy::parse("color,translation,cutout");
  CHECK(p.kinds() == std::vector<AugmentKind>{AugmentKind::Brightness, AugmentKind::Saturation, AugmentKind::Contrast,
                                              AugmentKind::Translation, AugmentKind::Cutout});
  CHECK(p.to_string() == "color,translation,cutout");
  CHECK(p.contains(AugmentKind::Cutout));
  CHECK_FALSE(Policy::parse("translation").contains(AugmentKind::Cutout));
  CHECK_THROWS_AS(Policy::parse("color,rotate"), AugmentError);
}

TEST_CASE("translate moves content and zero-fills") {
  const Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  // Single-channel layout is accepted by the primitive; policies use RGB.
  CHECK(values(translate(x, repeat(shift(1, 0), 1))) == std::vector<float>{0, 1, 0, 3});
  CHECK(values(translate(x, repeat(shift(0, 1), 1))) == std::vector<float>{0, 0, 1, 2});
  CHECK(values(translate(x, repeat(shift(-1, 0), 1))) == std::vector<float>{2, 0, 4, 0});
  CHECK_THROWS_AS(translate(x, repeat(shift(3, 0), 1)), AugmentError);
}

TEST_CASE("cutout zeroes the clipped square") {
  std::vector<float> ones(16, 1.0f);
  const Tensor x = Tensor::from_data({1, 1, 4, 4}, ones);
  const auto y = values(cutout(x, repeat(mask(0, 0), 1)));
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(y[r * 4 + c] == ((r < 2 && c < 2) ? 0.0f : 1.0f));
  }
  const auto overhang = values(cutout(x, repeat(mask(-1, 3), 1)));
  CHECK(overhang[3] == 0.0f);
  CHECK(overhang[2] == 1.0f);
  CHECK(overhang[7] == 1.0f);
}

TEST_CASE("identity parameters reproduce the input bit-exactly") {
  Rng rng(1);
  const Tensor x = uniform_tensor({3, 3, 16, 16}, rng, -1, 1, false);
  const auto ref = values(x);
  CHECK(values(translate(x, repeat(shift(0, 0), 3))) == ref);
  CHECK(values(cutout(x, repeat(mask(16, 16), 3))) == ref);
  CHECK(values(cutout(x, repeat(mask(-8, 0), 3))) == ref);
  CHECK(values(brightness(x, repeat(factor(0.0f), 3))) == ref);
  CHECK(values(contrast(x, repeat(factor(1.0f), 3))) == ref);
  CHECK(values(saturation(x, repeat(factor(1.0f), 3))) == ref);
  CHECK(values(apply_policy(x, Policy(), rng).output) == ref);
}

TEST_CASE("color formulas") {
  Rng rng(2);
  const Tensor x = uniform_tensor({2, 3, 4, 4}, rng, -1, 1, false);
  const auto b = values(brightness(x, repeat(factor(0.25f), 2)));
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == doctest::Approx(x.data()[i] + 0.25f));

  const auto gray = values(saturation(x, repeat(factor(0.0f), 2)));
  for (int n = 0; n < 2; ++n) {
    for (int p = 0; p < 16; ++p) {
      const float r = gray[(n * 3 + 0) * 16 + p], g = gray[(n * 3 + 1) * 16 + p], bl = gray[(n * 3 + 2) * 16 + p];
      CHECK(r == doctest::Approx(g));
      CHECK(g == doctest::Approx(bl));
      float mean = 0.0f;
      for (int c = 0; c < 3; ++c) mean += x.data()[(n * 3 + c) * 16 + p] / 3.0f;
      CHECK(r == doctest::Approx(mean).epsilon(1e-5));
    }
  }

  // Zero-mean image: contrast 2 doubles every value.
  std::vector<float> sym{-1, 1, -0.5f, 0.5f, -0.25f, 0.25f, 0.75f, -0.75f, 0.1f, -0.1f, 0.3f, -0.3f};
  const Tensor z = Tensor::from_data({1, 3, 2, 2}, sym);
  const auto doubled = values(contrast(z, repeat(factor(2.0f), 1)));
  for (std::size_t i = 0; i < sym.size(); ++i) CHECK(doubled[i] == doctest::Approx(2.0f * sym[i]));
}

TEST_CASE("out-of-range color factors are rejected") {
  const Tensor x = Tensor::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(brightness(x, repeat(factor(0.6f), 1)), AugmentError);
  CHECK_THROWS_AS(contrast(x, repeat(factor(-0.1f), 1)), AugmentError);
  CHECK_THROWS_AS(contrast(x, repeat(factor(2.1f), 1)), AugmentError);
  CHECK_THROWS_AS(saturation(x, repeat(factor(2.1f), 1)), AugmentError);
}

TEST_CASE("translation and cutout are linear for fixed samples") {
  Rng rng(3);
  for (auto kind : {AugmentKind::Translation, AugmentKind::Cutout}) {
    for (int trial = 0; trial < 10; ++trial) {
      const std::vector<AugmentationSample> s{draw_sample(kind, 2, 16, rng)};
      const Tensor x = uniform_tensor({2, 3, 16, 16}, rng, -1, 1, false);
      const Tensor y = uniform_tensor({2, 3, 16, 16}, rng, -1, 1, false);
      const float a = 0.7f, b = -1.3f;
      const auto lhs = values(replay(add(mul(x, a), mul(y, b)), s));
      const auto rhs = values(add(mul(replay(x, s), a), mul(replay(y, s), b)));
      // Both sides do the same float arithmetic per element; the op only
      // moves or zeroes values.
      CHECK(lhs == rhs);
    }
  }
}

TEST_CASE("adjoint inner-product identity") {
  Rng rng(4);
  for (auto kind : {AugmentKind::Translation, AugmentKind::Cutout, AugmentKind::Brightness, AugmentKind::Contrast,
                    AugmentKind::Saturation}) {
    for (int trial = 0; trial < 10; ++trial) {
      const std::vector<AugmentationSample> s{draw_sample(kind, 2, 16, rng)};
      const Tensor u = uniform_tensor({2, 3, 16, 16}, rng, -1, 1, false);
      const Tensor v = uniform_tensor({2, 3, 16, 16}, rng, -1, 1, false);
      // Jacobian of the (possibly affine) map applied to u.
      const bool affine_offset = kind == AugmentKind::Brightness;
      const double lhs = affine_offset ? dot(u, v) : dot(replay(u, s), v);
      const double rhs = dot(u, apply_adjoint(v, s));
      INFO(to_string(kind));
      CHECK(std::abs(lhs - rhs) <= 1e-4 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST_CASE("replay reproduces apply_policy bit-exactly") {
  Rng rng(5);
  const Tensor x = uniform_tensor({4, 3, 16, 16}, rng, -1, 1, false);
  const auto policy = Policy::parse("color,translation,cutout");
  Rng a(77), b(77);
  const auto first = apply_policy(x, policy, a);
  const auto second = apply_policy(x, policy, b);
  CHECK(values(first.output) == values(second.output));
  CHECK(first.samples == second.samples);
  CHECK(values(replay(x, first.samples)) == values(first.output));
}

TEST_CASE("draws stay within the sampling ranges") {
  Rng rng(6);
  for (int r : {16, 32}) {
    for (int t = 0; t < 50; ++t) {
      const auto tr = draw_sample(AugmentKind::Translation, 8, r, rng);
      const auto co = draw_sample(AugmentKind::Cutout, 8, r, rng);
      for (std::size_t i = 0; i < 8; ++i) {
        CHECK(std::abs(tr.per_image[i].shift_x) <= r / 8);
        CHECK(co.per_image[i].mask_top >= -r / 4);
        CHECK(co.per_image[i].mask_top < r - r / 4);
      }
    }
  }
  AugmentationSample bad{AugmentKind::Translation, repeat(shift(3, 0), 1)};
  CHECK_THROWS_AS(validate_sample(bad, 1, 16), AugmentError);
}

TEST_CASE("independent draws per image") {
  Rng rng(7);
  const auto s = draw_sample(AugmentKind::Brightness, 16, 16, rng);
  int distinct = 0;
  for (std::size_t i = 1; i < 16; ++i) distinct += s.per_image[i].factor != s.per_image[0].factor;
  CHECK(distinct == 15);
}

TEST_CASE("augmentation ops are tagged in the graph") {
  Rng rng(8);
  const Tensor x = uniform_tensor({2, 3, 16, 16}, rng);
  const auto out = apply_policy(x, Policy::parse("color,translation,cutout"), rng).output;
  int tagged = 0;
  for (const auto& name : graph_op_names(sum(out))) tagged += is_augmentation_op(name);
  CHECK(tagged == 5);
}

TEST_CASE("augmentations match central differences") {
  Rng rng(9);
  for (const auto& c : augment_cases()) {
    const auto r = worst_of(c, rng, 4);
    INFO(c.name << ": " << r.worst);
    CHECK(r.max_rel_error < 1e-3);
  }
}
