#include "oracle_cases.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "diffaug/augment.hpp"
#include "diffaug/gan.hpp"
#include "diffaug/ops.hpp"

namespace diffaug::testing {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

OracleCase simple(std::string name, std::function<std::vector<Tensor>(Rng&)> make, Fn f) {
  return {std::move(name), [make = std::move(make), f = std::move(f)](Rng& rng) {
            return check_gradients(f, make(rng), rng);
          }};
}

std::function<std::vector<Tensor>(Rng&)> one(Shape s) {
  return [s](Rng& rng) { return std::vector<Tensor>{uniform_tensor(s, rng)}; };
}

std::function<std::vector<Tensor>(Rng&)> kinked(Shape s) {
  return [s](Rng& rng) { return std::vector<Tensor>{away_from_zero(s, rng)}; };
}

std::function<std::vector<Tensor>(Rng&)> two(Shape a, Shape b) {
  return [a, b](Rng& rng) { return std::vector<Tensor>{uniform_tensor(a, rng), uniform_tensor(b, rng)}; };
}

std::vector<AugmentationSample> fixed_samples(AugmentKind kind, std::int64_t n, int r, Rng& rng) {
  return {draw_sample(kind, n, r, rng)};
}

Critic* as_critic(Discriminator& d) { return &d; }

}  // namespace

void randomize(Module& module, Rng& rng, float stddev) {
  std::vector<std::vector<float>> values;
  for (const auto& p : module.parameters()) {
    const Tensor t = rng.normal_tensor(p.shape(), stddev);
    values.emplace_back(t.data().begin(), t.data().end());
  }
  module.load_values(values);
}

GradCheckReport worst_of(const OracleCase& c, Rng& rng, int instances) {
  GradCheckReport worst;
  for (int i = 0; i < instances; ++i) {
    const auto r = c.run(rng);
    worst.checked += r.checked;
    if (r.max_rel_error >= worst.max_rel_error) {
      worst.max_rel_error = r.max_rel_error;
      worst.worst = r.worst;
    }
  }
  return worst;
}

std::vector<OracleCase> tensor_op_cases() {
  std::vector<OracleCase> cases;
  cases.push_back(simple("add", two({3, 4}, {3, 4}), [](const auto& in) { return add(in[0], in[1]); }));
  cases.push_back(simple("add_batch_broadcast", two({2, 3, 4}, {3, 4}), [](const auto& in) { return add(in[0], in[1]); }));
  cases.push_back(simple("add_scalar_tensor", two({3, 4}, {1}), [](const auto& in) { return add(in[0], in[1]); }));
  cases.push_back(simple("add_float", one({5}), [](const auto& in) { return add(in[0], 0.7f); }));
  cases.push_back(simple("sub", two({2, 5}, {2, 5}), [](const auto& in) { return sub(in[0], in[1]); }));
  cases.push_back(simple("sub_batch_broadcast", two({5}, {3, 5}), [](const auto& in) { return sub(in[0], in[1]); }));
  cases.push_back(simple("mul", two({3, 4}, {3, 4}), [](const auto& in) { return mul(in[0], in[1]); }));
  cases.push_back(simple("mul_batch_broadcast", two({2, 3, 4}, {3, 4}), [](const auto& in) { return mul(in[0], in[1]); }));
  cases.push_back(simple("mul_float", one({6}), [](const auto& in) { return mul(in[0], -1.3f); }));
  cases.push_back(simple("matmul", two({3, 4}, {4, 5}), [](const auto& in) { return matmul(in[0], in[1]); }));
  cases.push_back(simple("conv2d_stride1",
                         [](Rng& rng) {
                           return std::vector<Tensor>{uniform_tensor({2, 3, 5, 5}, rng), uniform_tensor({4, 3, 3, 3}, rng),
                                                      uniform_tensor({4}, rng)};
                         },
                         [](const auto& in) { return conv2d(in[0], in[1], in[2], {1, 1}); }));
  cases.push_back(simple("conv2d_stride2", two({2, 2, 6, 6}, {3, 2, 3, 3}),
                         [](const auto& in) { return conv2d(in[0], in[1], Tensor(), {2, 1}); }));
  cases.push_back(simple("conv2d_input_grad", two({2, 4, 3, 3}, {4, 2, 3, 3}),
                         [](const auto& in) { return conv2d_input_grad(in[0], in[1], {2, 2, 6, 6}, {2, 1}); }));
  cases.push_back(simple("upsample_nearest2x", one({2, 2, 3, 3}), [](const auto& in) { return upsample_nearest2x(in[0]); }));
  cases.push_back(simple("pad_zero", one({1, 2, 3, 4}), [](const auto& in) { return pad_zero(in[0], 2); }));
  cases.push_back(simple("leaky_relu", kinked({4, 5}), [](const auto& in) { return leaky_relu(in[0], 0.2f); }));
  cases.push_back(simple("relu", kinked({4, 5}), [](const auto& in) { return relu(in[0]); }));
  cases.push_back(simple("maximum", kinked({4, 5}), [](const auto& in) { return maximum(in[0], 0.0f); }));
  cases.push_back(simple("tanh", one({4, 5}), [](const auto& in) { return tanh(in[0]); }));
  cases.push_back(simple("sigmoid", one({4, 5}), [](const auto& in) { return sigmoid(in[0]); }));
  cases.push_back(simple("softplus", one({4, 5}), [](const auto& in) { return softplus(mul(in[0], 4.0f)); }));
  cases.push_back(simple("log",
                         [](Rng& rng) { return std::vector<Tensor>{uniform_tensor({4, 5}, rng, 0.5f, 2.0f)}; },
                         [](const auto& in) { return log(in[0]); }));
  cases.push_back(simple("exp", one({4, 5}), [](const auto& in) { return exp(in[0]); }));
  cases.push_back(simple("square", one({4, 5}), [](const auto& in) { return square(in[0]); }));
  cases.push_back(simple("reshape", one({2, 6}), [](const auto& in) { return square(reshape(in[0], {3, 4})); }));
  cases.push_back(simple("sum", one({3, 4}), [](const auto& in) { return sum(square(in[0])); }));
  cases.push_back(simple("mean", one({3, 4}), [](const auto& in) { return mean(square(in[0])); }));
  cases.push_back(simple("sum_axis", one({2, 3, 4}), [](const auto& in) { return sum(in[0], 1); }));
  cases.push_back(simple("mean_axis", one({2, 3, 4}), [](const auto& in) { return mean(in[0], 0); }));
  cases.push_back(simple("mean_last_axis", one({2, 3, 4}), [](const auto& in) { return mean(in[0], 2); }));
  cases.push_back(simple("concat", two({2, 3, 2}, {2, 1, 2}), [](const auto& in) { return concat({in[0], in[1]}, 1); }));
  cases.push_back(simple("slice", one({2, 3, 5}), [](const auto& in) { return slice(in[0], 2, 1, 4); }));
  cases.push_back(simple("mlp_3_layer",
                         [](Rng& rng) {
                           return std::vector<Tensor>{uniform_tensor({4, 6}, rng), uniform_tensor({6, 8}, rng),
                                                      uniform_tensor({8}, rng), uniform_tensor({8, 8}, rng),
                                                      uniform_tensor({8, 3}, rng)};
                         },
                         [](const auto& in) {
                           Tensor h = tanh(add(matmul(in[0], in[1]), in[2]));
                           h = sigmoid(matmul(h, in[3]));
                           return matmul(h, in[4]);
                         }));
  return cases;
}

std::vector<OracleCase> augment_cases() {
  constexpr std::int64_t n = 2;
  constexpr int r = 16;
  std::vector<OracleCase> cases;
  auto single = [&](std::string name, AugmentKind kind) {
    cases.push_back({std::move(name), [kind](Rng& rng) {
                       const auto samples = fixed_samples(kind, n, r, rng);
                       return check_gradients([&](const auto& in) { return replay(in[0], samples); },
                                              {uniform_tensor({n, 3, r, r}, rng)}, rng);
                     }});
  };
  single("translate", AugmentKind::Translation);
  single("cutout", AugmentKind::Cutout);
  single("brightness", AugmentKind::Brightness);
  single("contrast", AugmentKind::Contrast);
  single("saturation", AugmentKind::Saturation);
  cases.push_back({"color_translation_cutout_chain", [](Rng& rng) {
                     const auto policy = Policy::parse("color,translation,cutout");
                     const Tensor x = uniform_tensor({n, 3, r, r}, rng);
                     const auto samples = apply_policy(x.detach(), policy, rng).samples;
                     return check_gradients([&](const auto& in) { return replay(in[0], samples); }, {x}, rng);
                   }});
  cases.push_back({"adjoint_chain_in_v", [](Rng& rng) {
                     const auto policy = Policy::parse("color,translation,cutout");
                     const auto samples = apply_policy(uniform_tensor({n, 3, r, r}, rng, -1, 1, false), policy, rng).samples;
                     return check_gradients([&](const auto& in) { return apply_adjoint(in[0], samples); },
                                            {uniform_tensor({n, 3, r, r}, rng)}, rng);
                   }});
  return cases;
}

namespace {

void append_signs(std::vector<bool>& out, const Tensor& pre) {
  for (float v : pre.data()) out.push_back(v > 0.0f);
}

}  // namespace

// Signs of every leaky_relu pre-activation in D, recomputed from the public
// parameter list (conv blocks with stride 2, then the dense head).
std::vector<bool> discriminator_pattern(const Discriminator& d, const Tensor& x) {
  NoGradGuard no_grad;
  const auto p = d.parameters();
  std::vector<bool> out;
  Tensor h = x;
  for (std::size_t b = 0; b + 2 < p.size(); b += 2) {
    const Tensor pre = conv2d(h, p[b], p[b + 1], Conv2dParams{2, 1});
    append_signs(out, pre);
    h = leaky_relu(pre, 0.2f);
  }
  return out;
}

// Same for G: dense stem, then upsample + conv blocks, then the output conv.
std::vector<bool> generator_pattern(const Generator& g, const Tensor& z, std::int64_t stem_channels) {
  NoGradGuard no_grad;
  const auto p = g.parameters();
  std::vector<bool> out;
  Tensor pre = add(matmul(z, p[0]), p[1]);
  append_signs(out, pre);
  Tensor h = leaky_relu(reshape(pre, {z.dim(0), stem_channels, 4, 4}), 0.2f);
  for (std::size_t b = 2; b + 2 < p.size(); b += 2) {
    pre = conv2d(upsample_nearest2x(h), p[b], p[b + 1], Conv2dParams{1, 1});
    append_signs(out, pre);
    h = leaky_relu(pre, 0.2f);
  }
  return out;
}

std::vector<OracleCase> network_cases() {
  std::vector<OracleCase> cases;
  const NetConfig net{8, 4, 16};

  cases.push_back({"discriminator_input_gradient", [net](Rng& rng) {
                     Discriminator d(net, rng);
                     randomize(d, rng, 0.3f);
                     Tensor x = uniform_tensor({2, 3, 16, 16}, rng, -1, 1, false);
                     const Tensor analytic = d.input_gradient(x);
                     // Numeric side: central differences of sum_n D(x_n).
                     auto total = [&]() {
                       NoGradGuard no_grad;
                       double acc = 0.0;
                       const Tensor logits = d.forward(x);
                       for (float v : logits.data()) acc += v;
                       return acc;
                     };
                     const double eps = 1e-3;
                     const auto base_pattern = discriminator_pattern(d, x);
                     auto perm = rng.permutation(x.numel());
                     GradCheckReport rep;
                     for (int k = 0; k < 48; ++k) {
                       const auto i = perm[k];
                       auto data = x.mutable_data();
                       const float orig = data[i];
                       data[i] = orig + static_cast<float>(eps);
                       const double plus = total();
                       bool kinked = discriminator_pattern(d, x) != base_pattern;
                       data[i] = orig - static_cast<float>(eps);
                       const double minus = total();
                       kinked = kinked || discriminator_pattern(d, x) != base_pattern;
                       data[i] = orig;
                       if (kinked) {
                         ++rep.skipped;
                         continue;
                       }
                       const double a = analytic.data()[i], num = (plus - minus) / (2 * eps);
                       const double err = relative_error(a, num);
                       ++rep.checked;
                       if (err >= rep.max_rel_error) {
                         rep.max_rel_error = err;
                         rep.worst = fmt::format("element {}: analytic {:.6g} vs numeric {:.6g}", i, a, num);
                       }
                     }
                     return rep;
                   }});

  auto r1_case = [net](bool on_augmented) {
    return [net, on_augmented](Rng& rng) {
      Discriminator d(net, rng);
      randomize(d, rng, 0.3f);
      const Tensor x = uniform_tensor({2, 3, 16, 16}, rng, -1, 1, false);
      const auto aug = apply_policy(x, Policy::parse("color,translation,cutout"), rng);
      Critic* critic = as_critic(d);
      const float gamma = TrainConfig{}.r1_gamma;
      GradCheckOptions opts;
      opts.kink_signature = [&] { return discriminator_pattern(d, aug.output); };
      return check_gradients(
          [&](const auto&) { return r1_penalty(*critic, aug.output, aug.samples, on_augmented, gamma); }, d.parameters(),
          rng, opts);
    };
  };
  cases.push_back({"r1_double_backward_on_augmented", r1_case(true)});
  cases.push_back({"r1_double_backward_through_T", r1_case(false)});

  cases.push_back({"generator_loss_diffaugment", [net](Rng& rng) {
                     Generator g(net, rng);
                     Discriminator d(net, rng);
                     randomize(g, rng, 0.3f);
                     randomize(d, rng, 0.3f);
                     TrainConfig cfg;
                     cfg.strategy = Strategy::DiffAugment;
                     cfg.net = net;
                     const Tensor z = rng.normal_tensor({2, net.latent_dim});
                     const Rng aug_seed(rng.next_u64());
                     const std::int64_t stem = g.parameters()[1].numel() / 16;
                     GradCheckOptions opts;
                     opts.kink_signature = [&] {
                       NoGradGuard no_grad;
                       auto pattern = generator_pattern(g, z, stem);
                       Rng aug = aug_seed;
                       const auto fakes = apply_policy(g.forward(z), cfg.policy, aug).output;
                       const auto dp = discriminator_pattern(d, fakes);
                       pattern.insert(pattern.end(), dp.begin(), dp.end());
                       return pattern;
                     };
                     return check_gradients(
                         [&](const auto&) {
                           Rng aug = aug_seed;
                           return g_loss(d, g.forward(z), cfg, aug);
                         },
                         g.parameters(), rng, opts);
                   }});
  return cases;
}

}  // namespace diffaug::testing
