#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "diffaug/ops.hpp"

namespace diffaug::testing {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

GradCheckReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& inputs, Rng& rng, const GradCheckOptions& options) {
  std::vector<Tensor> leaves = inputs;
  Tensor probe;
  {
    NoGradGuard no_grad;
    probe = f(leaves);
  }
  const Tensor w = rng.normal_tensor(probe.shape());
  auto projected = [&]() {
    NoGradGuard no_grad;
    const Tensor out = f(leaves);
    double acc = 0.0;
    auto o = out.data();
    auto wv = w.data();
    for (std::size_t i = 0; i < o.size(); ++i) acc += static_cast<double>(o[i]) * wv[i];
    return acc;
  };

  for (auto& t : leaves) t.zero_grad();
  sum(mul(f(leaves), w)).backward();

  struct Entry {
    std::size_t input;
    std::int64_t index;
    double analytic;
    double numeric;
  };
  std::vector<Entry> entries;
  GradCheckReport report;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& t = leaves[k];
    std::vector<std::int64_t> coords;
    if (t.numel() <= options.max_coords) {
      for (std::int64_t i = 0; i < t.numel(); ++i) coords.push_back(i);
    } else {
      auto perm = rng.permutation(t.numel());
      coords.assign(perm.begin(), perm.begin() + options.max_coords);
    }
    const std::vector<float> grad = t.has_grad() ? std::vector<float>(t.grad().begin(), t.grad().end())
                                                 : std::vector<float>(t.numel(), 0.0f);
    for (auto i : coords) {
      auto data = t.mutable_data();
      const float original = data[i];
      std::vector<bool> pattern;
      if (options.kink_signature) pattern = options.kink_signature();
      data[i] = original + static_cast<float>(options.eps);
      const double plus = projected();
      bool kinked = options.kink_signature && options.kink_signature() != pattern;
      data[i] = original - static_cast<float>(options.eps);
      const double minus = projected();
      kinked = kinked || (options.kink_signature && options.kink_signature() != pattern);
      data[i] = original;
      if (kinked) {
        ++report.skipped;
        continue;
      }
      entries.push_back({k, i, grad[i], (plus - minus) / (2.0 * options.eps)});
    }
  }

  report.checked = static_cast<int>(entries.size());
  for (const auto& e : entries) {
    const double err = relative_error(e.analytic, e.numeric);
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst = fmt::format("input {}, element {}: analytic {:.6g} vs numeric {:.6g}", e.input, e.index,
                                 e.analytic, e.numeric);
    }
  }
  return report;
}

Tensor uniform_tensor(const Shape& shape, Rng& rng, float lo, float hi, bool requires_grad) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from_data(shape, std::move(v), requires_grad);
}

Tensor away_from_zero(const Shape& shape, Rng& rng, float margin, bool requires_grad) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) {
    const float mag = static_cast<float>(rng.uniform(margin, 1.0));
    x = rng.bernoulli(0.5) ? mag : -mag;
  }
  return Tensor::from_data(shape, std::move(v), requires_grad);
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * y[i];
  return acc;
}

}  // namespace diffaug::testing
